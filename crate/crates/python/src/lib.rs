//! Python bindings: model construction, checkpoints, inference, data
//! synthesis, filtering, metrics and whole experiments.

use std::path::PathBuf;

use esnnet::data::{bandpass as bandpass_tensor, synth_generate, write_dataset, SynthConfig};
use esnnet::eval::{render_tables as render, EvalReport, Protocol};
use esnnet::{Error, ErrorCategory, ModelConfig, Tensor};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(err: Error) -> PyErr {
    let msg = err.to_string();
    match err.category() {
        ErrorCategory::Config | ErrorCategory::Data => PyValueError::new_err(msg),
        ErrorCategory::Numeric => PyRuntimeError::new_err(msg),
        ErrorCategory::Io => PyOSError::new_err(msg),
    }
}

fn json_err(err: serde_json::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn rows_to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let n = rows.len();
    Tensor::from_vec(&[n, width], rows.into_iter().flatten().collect()).map_err(py_err)
}

/// ESNNet classifier.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    inner: esnnet::EsnNet,
}

#[pymethods]
impl PyModel {
    /// Builds a fresh model. `config` is a JSON object with optional
    /// `model`, `esn` and `train` sections.
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg: ModelConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(json_err)?,
            None => ModelConfig::default(),
        };
        Ok(Self {
            inner: esnnet::build(&cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: esnnet::checkpoint::load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        esnnet::checkpoint::save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn config(&self) -> String {
        serde_json::to_string(self.inner.config()).expect("config serializes")
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn trainable_parameter_count(&self) -> usize {
        self.inner.trainable_parameter_count()
    }

    /// Hex SHA-256 of the reservoir matrix, or None for the conv-only variant.
    fn reservoir_digest(&self) -> Option<String> {
        self.inner
            .reservoir_digest()
            .map(|d| d.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Inference-mode logits `[B][3]` for segments given as `[B][C][T]`.
    fn logits(&mut self, batch: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let b = batch.len();
        let c = batch.first().map_or(0, Vec::len);
        let t = batch.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let flat: Vec<f64> = batch.into_iter().flatten().flatten().collect();
        if flat.len() != b * c * t {
            return Err(PyValueError::new_err("segments must all be C x T"));
        }
        let x = Tensor::from_vec(&[b, c, t], flat).map_err(py_err)?;
        let logits = self.inner.forward(&x, esnnet::layers::Mode::Infer).map_err(py_err)?;
        Ok(logits.data().chunks(3).map(<[f64]>::to_vec).collect())
    }

    fn predict(&mut self, batch: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<usize>> {
        let logits = self.logits(batch)?;
        let flat: Vec<f64> = logits.iter().flatten().copied().collect();
        let t = Tensor::from_vec(&[logits.len(), 3], flat).map_err(py_err)?;
        Ok(esnnet::model::predict(&t))
    }

    /// Training-mode loss on a labeled batch as (total, cross entropy). Leaves
    /// the gradients on the parameters.
    fn loss(&mut self, batch: Vec<Vec<Vec<f64>>>, labels: Vec<usize>) -> PyResult<(f64, f64)> {
        let b = batch.len();
        let c = batch.first().map_or(0, Vec::len);
        let t = batch.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let x = Tensor::from_vec(&[b, c, t], batch.into_iter().flatten().flatten().collect()).map_err(py_err)?;
        let out = self.inner.loss_and_backward(&x, &labels).map_err(py_err)?;
        Ok((out.total, out.cross_entropy))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={:?}, seed={}, trainable_parameters={})",
            self.inner.variant(),
            self.inner.seed(),
            self.inner.trainable_parameter_count()
        )
    }
}

/// Writes a synthetic dataset into `directory` and returns the manifest path.
/// `config` is a JSON object with any `[data.synth]` keys.
#[pyfunction]
#[pyo3(signature = (directory, config = None))]
fn synth_dataset(directory: PathBuf, config: Option<&str>) -> PyResult<PathBuf> {
    let cfg: SynthConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => SynthConfig::default(),
    };
    let trials = synth_generate(&cfg).map_err(py_err)?;
    write_dataset(&directory, &trials).map_err(py_err)
}

/// Zero-phase Butterworth band-pass of each row of `signal`.
#[pyfunction]
#[pyo3(signature = (signal, low_hz = 1.0, high_hz = 40.0, sample_rate = 500.0, order = 4))]
fn bandpass(signal: Vec<Vec<f64>>, low_hz: f64, high_hz: f64, sample_rate: f64, order: usize) -> PyResult<Vec<Vec<f64>>> {
    let x = rows_to_tensor(signal)?;
    let width = x.shape()[1];
    let y = bandpass_tensor(&x, low_hz, high_hz, sample_rate, order).map_err(py_err)?;
    Ok(y.data().chunks(width.max(1)).map(<[f64]>::to_vec).collect())
}

/// Largest eigenvalue modulus of a square matrix.
#[pyfunction]
fn spectral_radius(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    let w = rows_to_tensor(matrix)?;
    let est = esnnet::reservoir::spectral_radius(&w, esnnet::reservoir::SCALING_TOL, esnnet::reservoir::SCALING_MAX_ITER)
        .map_err(py_err)?;
    Ok(est.radius)
}

/// Accuracy, per-class F1 and the confusion matrix.
#[pyfunction]
fn confusion_and_f1(predictions: Vec<usize>, labels: Vec<usize>) -> PyResult<(f64, Vec<f64>, Vec<Vec<usize>>)> {
    let m = esnnet::eval::confusion_and_f1(&predictions, &labels).map_err(py_err)?;
    Ok((
        m.accuracy,
        m.per_class.iter().map(|c| c.f1).collect(),
        m.confusion.iter().map(|r| r.to_vec()).collect(),
    ))
}

/// Runs a whole experiment from TOML config text plus dotted-key overrides,
/// writing the usual artifacts, and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config = "", overrides = Vec::new(), protocol = "within-subject"))]
fn run_experiment(py: Python<'_>, config: &str, overrides: Vec<String>, protocol: &str) -> PyResult<String> {
    let protocol = match protocol {
        "within-subject" => Protocol::WithinSubject,
        "loso" => Protocol::Loso,
        other => return Err(PyValueError::new_err(format!("unknown protocol {other:?}"))),
    };
    let cfg = esnnet_cli::parse_config_str(config, &overrides).map_err(py_err)?;
    let report = py
        .detach(|| esnnet_cli::commands::experiment(&cfg, protocol, &esnnet::eval::NoObserver))
        .map_err(py_err)?;
    Ok(report.to_json())
}

/// Text tables for one or more JSON reports.
#[pyfunction]
fn render_tables(reports: Vec<String>) -> PyResult<String> {
    let parsed = reports
        .iter()
        .map(|r| EvalReport::from_json(r).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(render(&parsed))
}

#[pymodule]
fn esnnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(bandpass, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_radius, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_and_f1, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(render_tables, m)?)?;
    Ok(())
}
