//! Python bindings: the model type plus the pure functions of the core crate.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use amoc_core::compress::{self, CandidateSpec};
use amoc_core::datagen::{self, ShiftSpec};
use amoc_core::netcore::{self, Dims, Example, LayerStackModel, Optimizer, ProbDist, TrainConfig};
use amoc_core::regress::{self, DesignMatrix};
use amoc_core::{analysis, effects, Error, ErrorKind};

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Data => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn lift<T>(r: amoc_core::Result<T>) -> PyResult<T> {
    r.map_err(py_err)
}

fn dist(p: Vec<f64>) -> PyResult<ProbDist> {
    lift(ProbDist::new(p))
}

fn spec(removed: Vec<usize>) -> PyResult<CandidateSpec> {
    lift(CandidateSpec::new(removed))
}

fn examples(data: Vec<(Vec<u32>, Option<usize>)>) -> Vec<Example> {
    data.into_iter()
        .map(|(tokens, label)| Example {
            tokens,
            label,
            positions: None,
        })
        .collect()
}

/// Residual tanh layer stack over a mean-pooled embedding.
#[pyclass(name = "LayerStackModel", module = "amoc", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: LayerStackModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (vocab, hidden, classes, depth, seed = 0))]
    fn new(vocab: usize, hidden: usize, classes: usize, depth: usize, seed: u64) -> PyResult<Self> {
        let dims = Dims {
            vocab,
            hidden,
            classes,
            depth,
        };
        Ok(Self {
            inner: lift(LayerStackModel::new(dims, seed))?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: lift(netcore::load(&path))?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        lift(netcore::save(&self.inner, &path))
    }

    fn to_bytes(&self) -> Vec<u8> {
        netcore::serialize(&self.inner)
    }

    #[staticmethod]
    fn from_bytes(bytes: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: lift(netcore::deserialize(&bytes))?,
        })
    }

    /// 1-based indices of the surviving encoder layers.
    fn active_layers(&self) -> Vec<usize> {
        self.inner.active_layers()
    }

    fn trainable_parameter_count(&self) -> usize {
        self.inner.trainable_parameter_count()
    }

    fn classify(&self, tokens: Vec<u32>) -> PyResult<Vec<f64>> {
        let p = lift(self.inner.classify(&Example::unlabeled(tokens)))?;
        Ok(p.as_slice().to_vec())
    }

    fn predict(&self, tokens: Vec<u32>) -> PyResult<usize> {
        lift(self.inner.predict_label(&Example::unlabeled(tokens)))
    }

    /// Trains on `(tokens, label)` pairs and returns the new model.
    #[pyo3(signature = (data, epochs = 10, learning_rate = 1e-3, batch_size = 32, seed = 0, weight_decay = 0.01, sgd = false))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        py: Python<'_>,
        data: Vec<(Vec<u32>, usize)>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        weight_decay: f64,
        sgd: bool,
    ) -> PyResult<Self> {
        let data: Vec<Example> = data.into_iter().map(|(t, l)| Example::labeled(t, l)).collect();
        let config = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            weight_decay,
            optimizer: if sgd { Optimizer::Sgd } else { Optimizer::default() },
        };
        let trained = py.detach(|| netcore::train(&self.inner, &data, &config));
        Ok(Self {
            inner: lift(trained)?.model,
        })
    }

    fn macro_f1(&self, data: Vec<(Vec<u32>, usize)>) -> PyResult<f64> {
        let data: Vec<Example> = data.into_iter().map(|(t, l)| Example::labeled(t, l)).collect();
        lift(netcore::evaluate_macro_f1(&self.inner, &data))
    }

    /// The model with the given 1-based layers removed and the freeze mask
    /// set for fine-tuning.
    fn compress(&self, removed: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: lift(compress::compress(&self.inner, &spec(removed)?))?,
        })
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!(
            "LayerStackModel(vocab={}, hidden={}, classes={}, layers={:?})",
            d.vocab,
            d.hidden,
            d.classes,
            self.inner.active_layers()
        )
    }
}

#[pyfunction]
fn tv_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    lift(effects::tv_distance(&dist(p)?, &dist(q)?))
}

#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    lift(effects::kl_divergence(&dist(p)?, &dist(q)?))
}

/// Runs, junctions and unfrozen layers for removing `removed` from a
/// stack of `depth` layers, as a dict.
#[pyfunction]
fn plan_reconnection(py: Python<'_>, removed: Vec<usize>, depth: usize) -> PyResult<Py<PyAny>> {
    let plan = lift(compress::plan_reconnection(&spec(removed)?, depth))?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("runs", plan.runs)?;
    d.set_item("junctions", plan.junctions)?;
    d.set_item("unfrozen_layers", plan.unfrozen_layers.into_iter().collect::<Vec<_>>())?;
    d.set_item("unfreeze_embedding", plan.unfreeze_embedding)?;
    Ok(d.into_any().unbind())
}

#[pyfunction]
fn sample_candidate_specs(depth: usize, sizes: Vec<usize>, count: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    let specs = lift(compress::sample_candidate_specs(depth, &sizes, count, seed))?;
    Ok(specs.iter().map(|s| s.removed().to_vec()).collect())
}

/// Synthetic domains from a JSON shift specification (missing fields take
/// their defaults). Each domain is a dict of `(tokens, label)` lists.
#[pyfunction]
#[pyo3(signature = (spec_json = "{}"))]
fn generate(py: Python<'_>, spec_json: &str) -> PyResult<Vec<Py<PyAny>>> {
    let spec: ShiftSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let domains = py.detach(|| datagen::generate(&spec));
    let pairs =
        |xs: &[Example]| -> Vec<(Vec<u32>, Option<usize>)> { xs.iter().map(|x| (x.tokens.clone(), x.label)).collect() };
    lift(domains)?
        .into_iter()
        .map(|d| {
            let out = pyo3::types::PyDict::new(py);
            out.set_item("name", &d.name)?;
            out.set_item("train", pairs(&d.labeled_train))?;
            out.set_item("dev", pairs(&d.held_out))?;
            out.set_item("test", pairs(&d.test))?;
            out.set_item("unlabeled", pairs(&d.unlabeled))?;
            Ok(out.into_any().unbind())
        })
        .collect()
}

/// Mean effect between two models' output distributions over `texts`.
#[pyfunction]
#[pyo3(signature = (a, b, texts, metric = "total_variation"))]
fn average_effect(a: &PyModel, b: &PyModel, texts: Vec<Vec<u32>>, metric: &str) -> PyResult<f64> {
    let metric: effects::AteMetric = lift(metric.parse())?;
    let xs = examples(texts.into_iter().map(|t| (t, None)).collect());
    Ok(lift(effects::estimate_ate(&a.inner, &b.inner, &xs, metric, ""))?.value)
}

fn design(names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<DesignMatrix> {
    lift(DesignMatrix::new(names, columns, y))
}

/// Ordinary least squares on all columns; returns a dict with
/// `coefficients` (intercept first), `r2` and `adjusted_r2`.
#[pyfunction]
fn ols(py: Python<'_>, names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Py<PyAny>> {
    let d = design(names, columns, y)?;
    let terms: Vec<usize> = (0..d.names.len()).collect();
    let fit = lift(regress::ols_fit(&d, &terms))?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("coefficients", fit.coefficients)?;
    out.set_item("std_errors", fit.std_errors)?;
    out.set_item("p_values", fit.p_values)?;
    out.set_item("r2", fit.r2)?;
    out.set_item("adjusted_r2", fit.adjusted_r2)?;
    Ok(out.into_any().unbind())
}

/// Forward-stepwise selection; returns the fitted model as JSON.
#[pyfunction]
#[pyo3(signature = (names, columns, y, alpha = regress::DEFAULT_ALPHA))]
fn stepwise(names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>, alpha: f64) -> PyResult<String> {
    let d = design(names, columns, y)?;
    let candidates: Vec<usize> = (0..d.names.len()).collect();
    Ok(lift(regress::stepwise_fit(&d, &candidates, alpha))?.to_json())
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    lift(analysis::spearman(&a, &b))
}

/// Per-layer rate at which the given best candidates keep each layer.
#[pyfunction]
fn layer_frequency(best: Vec<Vec<usize>>, depth: usize) -> PyResult<Vec<f64>> {
    let specs = best.into_iter().map(spec).collect::<PyResult<Vec<_>>>()?;
    lift(analysis::layer_frequency(&specs, depth))
}

#[pymodule]
fn amoc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(plan_reconnection, m)?)?;
    m.add_function(wrap_pyfunction!(sample_candidate_specs, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(average_effect, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(stepwise, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(layer_frequency, m)?)?;
    Ok(())
}
