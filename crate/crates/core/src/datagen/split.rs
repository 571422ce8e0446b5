use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// 64% train, 16% development, 20% test.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.64, 0.16, 0.20];

/// Split sizes by cumulative rounding, so the three parts always sum to `n`.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::input(format!("negative split fraction in {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("split fractions sum to {total}, not 1")));
    }
    let first = ((n as f64) * fractions[0]).round() as usize;
    let second = (((n as f64) * (fractions[0] + fractions[1])).round() as usize).min(n);
    let first = first.min(second);
    Ok([first, second - first, n - second])
}

/// Seeded shuffle followed by contiguous slicing into (train, dev, test).
pub fn split<T: Clone>(items: &[T], fractions: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let [a, b, _] = split_sizes(items.len(), fractions)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..a]), pick(&order[a..a + b]), pick(&order[a + b..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_ratios_on_100() {
        let items: Vec<u32> = (0..100).collect();
        let (tr, dv, te) = split(&items, DEFAULT_FRACTIONS, 3).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (64, 16, 20));
    }

    #[test]
    fn everything_to_train() {
        let items: Vec<u32> = (0..17).collect();
        let (tr, dv, te) = split(&items, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(tr.len(), 17);
        assert!(dv.is_empty() && te.is_empty());
    }

    #[test]
    fn same_seed_same_assignment() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(
            split(&items, DEFAULT_FRACTIONS, 8).unwrap(),
            split(&items, DEFAULT_FRACTIONS, 8).unwrap()
        );
    }

    #[test]
    fn bad_fractions() {
        assert!(split(&[1, 2], [0.5, 0.4, 0.0], 0).is_err());
        assert!(split(&[1, 2], [1.2, -0.2, 0.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 0usize..300, a in 0.0f64..1.0, b in 0.0f64..1.0, seed: u64) {
            let f0 = a;
            let f1 = (1.0 - f0) * b;
            let fr = [f0, f1, 1.0 - f0 - f1];
            let items: Vec<usize> = (0..n).collect();
            let (tr, dv, te) = split(&items, fr, seed).unwrap();
            let mut all: Vec<usize> = tr.into_iter().chain(dv).chain(te).collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
