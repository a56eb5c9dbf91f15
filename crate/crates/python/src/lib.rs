//! Python bindings for lrsiam-core.
//!
//! Tensors cross the boundary as `(shape, flat_data)` pairs of plain lists.
//! Structured results (metrics, run summaries) come back as dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use lrsiam_core::checks::gradcheck_suite;
use lrsiam_core::config::RunConfig;
use lrsiam_core::data::{read_tensor as core_read, write_toy_dataset, write_tensor as core_write};
use lrsiam_core::flow::video_flow_stacks;
use lrsiam_core::loss::{contrastive_pair_value, multi_siamese_value};
use lrsiam_core::model::Model as CoreModel;
use lrsiam_core::pipeline;
use lrsiam_core::trainer::Mode;
use lrsiam_core::{Error, Tensor};

create_exception!(lrsiam, LrsiamError, PyException);
create_exception!(lrsiam, FormatError, LrsiamError);
create_exception!(lrsiam, DataError, LrsiamError);
create_exception!(lrsiam, NumericError, LrsiamError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Format(_) => FormatError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Numeric(_) => NumericError::new_err(msg),
        Error::Data(_) | Error::MissingArtifact(_) => DataError::new_err(msg),
        Error::InvalidArgument(_) | Error::Config(_) | Error::Shape(_) => PyValueError::new_err(msg),
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Tensor> {
    Tensor::new(shape, data).map_err(to_py)
}

fn unpack(t: Tensor) -> (Vec<usize>, Vec<f32>) {
    (t.shape().to_vec(), t.into_data())
}

/// Parses a JSON string with Python's own `json` module.
fn json_obj<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Run configuration. Build from TOML text or a file; defaults otherwise.
#[pyclass(name = "RunConfig", module = "lrsiam", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml(t).map_err(to_py)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, seeds: Vec<u64>) -> PyResult<()> {
        if seeds.is_empty() {
            return Err(PyValueError::new_err("at least one seed is required"));
        }
        self.inner.seeds = seeds;
        Ok(())
    }

    /// Number of transforms in the configured grid.
    fn num_transforms(&self) -> PyResult<usize> {
        Ok(self.inner.transform_set().map_err(to_py)?.n())
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seeds={:?}, embed_dim={}, mode={})",
            self.inner.seeds, self.inner.model.embed_dim, self.inner.train.mode
        )
    }
}

/// The recognition network with freshly initialised or checkpointed weights.
#[pyclass(name = "Model", module = "lrsiam")]
struct PyModel {
    inner: CoreModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&PyRunConfig>, seed: u64) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.model).unwrap_or_default();
        Ok(Self {
            inner: CoreModel::new(cfg, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_checkpoint(path: PathBuf, config: &PyRunConfig) -> PyResult<Self> {
        let params = pipeline::load_params(&path, &config.inner).map_err(to_py)?;
        Ok(Self {
            inner: CoreModel {
                cfg: config.inner.model,
                params,
            },
        })
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.cfg.embed_dim
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Embedding of one LR video: `rgb` is `[T, 12, 16, 3]`, `flow`
    /// `[T, 12, 16, 20]` (two-stream only).
    #[pyo3(signature = (rgb_shape, rgb, flow_shape = None, flow = None))]
    fn embed(
        &self,
        py: Python<'_>,
        rgb_shape: Vec<usize>,
        rgb: Vec<f32>,
        flow_shape: Option<Vec<usize>>,
        flow: Option<Vec<f32>>,
    ) -> PyResult<Vec<f32>> {
        let rgb = tensor(rgb_shape, rgb)?;
        let flow = match (flow_shape, flow) {
            (Some(s), Some(d)) => Some(tensor(s, d)?),
            (None, None) => None,
            _ => return Err(PyValueError::new_err("flow_shape and flow go together")),
        };
        let e = py.detach(|| self.inner.embed(&rgb, flow.as_ref())).map_err(to_py)?;
        Ok(e.into_data())
    }

    /// Class probabilities for an embedding.
    fn classify(&self, embedding: Vec<f32>) -> PyResult<Vec<f32>> {
        Ok(self.inner.classify(&Tensor::from_vec(embedding)).map_err(to_py)?.into_data())
    }
}

#[pyfunction]
fn read_tensor(path: PathBuf) -> PyResult<(Vec<usize>, Vec<f32>)> {
    Ok(unpack(core_read(path).map_err(to_py)?))
}

#[pyfunction]
fn write_tensor(path: PathBuf, shape: Vec<usize>, data: Vec<f32>) -> PyResult<()> {
    core_write(path, &tensor(shape, data)?).map_err(to_py)
}

/// Multi-Siamese loss of one item: `b1` are embeddings of one source under
/// different transforms, `b2` embeddings of other sources.
#[pyfunction]
#[pyo3(signature = (b1, b2, margin = 1.0))]
fn multi_siamese_loss(b1: Vec<Vec<f32>>, b2: Vec<Vec<f32>>, margin: f64) -> PyResult<f64> {
    let t = |v: Vec<Vec<f32>>| v.into_iter().map(Tensor::from_vec).collect::<Vec<_>>();
    multi_siamese_value(&t(b1), &t(b2), margin).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (xi, xj, positive, margin = 1.0))]
fn contrastive_pair(xi: Vec<f32>, xj: Vec<f32>, positive: bool, margin: f64) -> PyResult<f64> {
    contrastive_pair_value(&Tensor::from_vec(xi), &Tensor::from_vec(xj), positive, margin).map_err(to_py)
}

/// Flow stacks `[T, 12, 16, 20]` of an LR video `[T, 12, 16, 3]`.
#[pyfunction]
#[pyo3(signature = (shape, frames, config = None))]
fn flow_stacks(
    py: Python<'_>,
    shape: Vec<usize>,
    frames: Vec<f32>,
    config: Option<&PyRunConfig>,
) -> PyResult<(Vec<usize>, Vec<f32>)> {
    let cfg = config.map(|c| c.inner.flow).unwrap_or_default();
    let frames = tensor(shape, frames)?;
    let s = py
        .detach(|| video_flow_stacks(&frames, &cfg.provider(), &cfg))
        .map_err(to_py)?;
    Ok(unpack(s))
}

/// Renders the toy HR dataset into `out`; returns the manifest path.
#[pyfunction]
fn gen_toy(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<PathBuf> {
    let toy = config.inner.toy.clone();
    py.detach(|| write_toy_dataset(&toy, &out)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (hr_manifest, out, config, force = false))]
fn prepare_lr(py: Python<'_>, hr_manifest: PathBuf, out: PathBuf, config: &PyRunConfig, force: bool) -> PyResult<PathBuf> {
    let cfg = &config.inner;
    py.detach(|| pipeline::prepare_lr(&hr_manifest, &out, cfg, force)).map_err(to_py)
}

/// Returns `(computed, reused)` stack counts.
#[pyfunction]
#[pyo3(signature = (lr_manifest, config, force = false))]
fn compute_flow(py: Python<'_>, lr_manifest: PathBuf, config: &PyRunConfig, force: bool) -> PyResult<(usize, usize)> {
    let flow = config.inner.flow;
    let s = py
        .detach(|| pipeline::compute_flow(&lr_manifest, None, &flow, force))
        .map_err(to_py)?;
    Ok((s.computed, s.reused))
}

/// Trains the given modes ("baseline", "augment", "multi-siamese") for every
/// configured seed. Returns the run summary as a dict.
#[pyfunction]
#[pyo3(signature = (lr_manifest, out, config, modes = None))]
fn train<'py>(
    py: Python<'py>,
    lr_manifest: PathBuf,
    out: PathBuf,
    config: &PyRunConfig,
    modes: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let modes: Vec<Mode> = match modes {
        Some(m) => m.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(to_py)?,
        None => Mode::ALL.to_vec(),
    };
    let cfg = &config.inner;
    let report = py
        .detach(|| pipeline::train(&lr_manifest, &out, cfg, &modes))
        .map_err(to_py)?;
    json_obj(py, &report)
}

#[pyfunction]
#[pyo3(signature = (lr_manifest, checkpoint, config, split = "half-0"))]
fn evaluate<'py>(
    py: Python<'py>,
    lr_manifest: PathBuf,
    checkpoint: PathBuf,
    config: &PyRunConfig,
    split: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = &config.inner;
    let m = py
        .detach(|| pipeline::evaluate_checkpoint(&lr_manifest, &checkpoint, cfg, split))
        .map_err(to_py)?;
    json_obj(py, &m)
}

/// Writes embeddings of every LR video to `out` and returns the
/// distance-ratio report.
#[pyfunction]
#[pyo3(signature = (lr_manifest, checkpoint, config, out, split = None))]
fn embed<'py>(
    py: Python<'py>,
    lr_manifest: PathBuf,
    checkpoint: PathBuf,
    config: &PyRunConfig,
    out: PathBuf,
    split: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = &config.inner;
    let r = py
        .detach(|| pipeline::export_embeddings(&lr_manifest, &checkpoint, cfg, split.as_deref(), &out))
        .map_err(to_py)?;
    json_obj(py, &r)
}

/// Finite-difference gradient checks; one dict per (check, seed).
#[pyfunction]
#[pyo3(signature = (seeds = 20))]
fn gradcheck(py: Python<'_>, seeds: u64) -> PyResult<Bound<'_, PyAny>> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let results = py.detach(|| gradcheck_suite(&seeds)).map_err(to_py)?;
    json_obj(py, &results)
}

#[pymodule]
fn lrsiam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("LrsiamError", py.get_type::<LrsiamError>())?;
    m.add("FormatError", py.get_type::<FormatError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add("LR_HEIGHT", lrsiam_core::LR_HEIGHT)?;
    m.add("LR_WIDTH", lrsiam_core::LR_WIDTH)?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(multi_siamese_loss, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_pair, m)?)?;
    m.add_function(wrap_pyfunction!(flow_stacks, m)?)?;
    m.add_function(wrap_pyfunction!(gen_toy, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_lr, m)?)?;
    m.add_function(wrap_pyfunction!(compute_flow, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
