use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::datagen::DomainDataset;
use crate::netcore::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Unlabeled,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub domain: String,
    pub split: Split,
    pub labels: bool,
}

/// Read-only view of a dataset that records which splits were read and
/// whether labels came along.
#[derive(Debug)]
pub struct AuditedDomain<'a> {
    data: &'a DomainDataset,
    log: Mutex<Vec<Access>>,
}

impl<'a> AuditedDomain<'a> {
    pub fn new(data: &'a DomainDataset) -> Self {
        Self {
            data,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn name(&self) -> &str {
        &self.data.name
    }

    fn record(&self, split: Split, labels: bool) {
        self.log.lock().expect("audit log poisoned").push(Access {
            domain: self.data.name.clone(),
            split,
            labels,
        });
    }

    /// Labeled training split.
    pub fn labeled_train(&self) -> &'a [Example] {
        self.record(Split::Train, true);
        &self.data.labeled_train
    }

    /// Training text without labels plus the unlabeled pool.
    pub fn unlabeled_text(&self) -> Vec<Example> {
        self.record(Split::Train, false);
        self.record(Split::Unlabeled, false);
        self.data.unlabeled_pool()
    }

    /// Development text with labels stripped.
    pub fn dev_text(&self) -> Vec<Example> {
        self.record(Split::Dev, false);
        self.data.held_out_unlabeled()
    }

    pub fn dev_labeled(&self) -> &'a [Example] {
        self.record(Split::Dev, true);
        &self.data.held_out
    }

    pub fn test_labeled(&self) -> &'a [Example] {
        self.record(Split::Test, true);
        &self.data.test
    }

    pub fn log(&self) -> Vec<Access> {
        self.log.lock().expect("audit log poisoned").clone()
    }

    pub fn label_reads(&self) -> usize {
        self.log
            .lock()
            .expect("audit log poisoned")
            .iter()
            .filter(|a| a.labels)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logs_label_reads_only_when_labels_are_returned() {
        let d = DomainDataset {
            name: "t".into(),
            labeled_train: vec![Example::labeled(vec![1], 0)],
            held_out: vec![Example::labeled(vec![2], 1)],
            ..Default::default()
        };
        let a = AuditedDomain::new(&d);
        let text = a.dev_text();
        assert!(text.iter().all(|x| x.label.is_none()));
        a.unlabeled_text();
        assert_eq!(a.label_reads(), 0);
        a.dev_labeled();
        assert_eq!(a.label_reads(), 1);
        assert_eq!(a.log().last().unwrap().split, Split::Dev);
    }
}
