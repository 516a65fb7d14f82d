//! Python bindings: datasets, the model, training, evaluation and a few
//! standalone operations. Structured results come back as plain dicts and
//! lists; failures raise `ValueError("<kind>: <message>")`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;
use umt_core::decoding::{compose_moments, extract_centers, CenterMode};
use umt_core::diagnostics::{bench_attention, full_model_gradcheck};
use umt_core::features_io::{load_dataset, synthesize_dataset, write_dataset};
use umt_core::losses::{build_targets, LossWeights};
use umt_core::metrics::{temporal_iou, Tasks};
use umt_core::trainer::{evaluate as core_evaluate, predict as core_predict, Trainer};
use umt_core::{checkpoint, MomentAnnotation, RngState, RunConfig, UmtError, VideoSample};

fn err(e: UmtError) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.kind()))
}

fn config(text: &str) -> PyResult<RunConfig> {
    RunConfig::from_toml_str(text).map_err(err)
}

/// Serializes through JSON into native Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// One video with its features and annotations.
#[pyclass(name = "Sample", module = "umt", skip_from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: VideoSample,
}

#[pymethods]
impl PySample {
    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn n_clips(&self) -> usize {
        self.inner.n_clips()
    }

    #[getter]
    fn saliency(&self) -> Vec<f64> {
        self.inner.saliency.clone()
    }

    #[getter]
    fn positives(&self) -> Vec<bool> {
        self.inner.positives.clone()
    }

    /// `(center, window)` pairs in clips.
    #[getter]
    fn moments(&self) -> Vec<(f64, f64)> {
        self.inner.moments.iter().map(|m| (m.center, m.window)).collect()
    }

    /// Ground-truth spans in seconds.
    fn spans(&self) -> Vec<(f64, f64)> {
        self.inner.gt_spans()
    }

    fn __repr__(&self) -> String {
        format!("Sample(id={:?}, n_clips={}, moments={})", self.inner.id, self.inner.n_clips(), self.inner.moments.len())
    }
}

fn unwrap_samples(samples: &[PyRef<'_, PySample>]) -> Vec<VideoSample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

/// The full model with its parameters.
#[pyclass(name = "Model", module = "umt")]
struct PyModel {
    inner: umt_core::Umt,
}

#[pymethods]
impl PyModel {
    /// Builds a model from the `[model]` section of a TOML string.
    #[new]
    #[pyo3(signature = (config_toml = "", seed = 0))]
    fn new(config_toml: &str, seed: u64) -> PyResult<Self> {
        let cfg = config(config_toml)?;
        Ok(Self {
            inner: umt_core::Umt::new(cfg.model, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params().numel()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.config())
    }

    /// Per-clip head outputs: dict of saliency, heatmap, window, offset.
    fn predict_raw<'py>(&self, py: Python<'py>, sample: PyRef<'_, PySample>) -> PyResult<Bound<'py, PyAny>> {
        let raw = self.inner.predict_raw(&sample.inner).map_err(err)?;
        to_py(py, &raw)
    }
}

#[pyfunction]
#[pyo3(signature = (config_toml = "", seed = 0))]
fn synthesize(config_toml: &str, seed: u64) -> PyResult<Vec<PySample>> {
    let cfg = config(config_toml)?;
    let data = synthesize_dataset(&cfg.synth, &mut RngState::new(seed)).map_err(err)?;
    Ok(data.into_iter().map(|inner| PySample { inner }).collect())
}

#[pyfunction]
fn load(manifest: PathBuf) -> PyResult<Vec<PySample>> {
    let data = load_dataset(&manifest).map_err(err)?;
    Ok(data.into_iter().map(|inner| PySample { inner }).collect())
}

/// Writes features and a manifest into `directory`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (directory, samples, positive_threshold = 0.5))]
fn save(directory: PathBuf, samples: Vec<PyRef<'_, PySample>>, positive_threshold: f64) -> PyResult<PathBuf> {
    std::fs::create_dir_all(&directory).map_err(|e| PyValueError::new_err(e.to_string()))?;
    write_dataset(&directory, &unwrap_samples(&samples), positive_threshold).map_err(err)
}

/// Trains in place with the `[train]` section; returns the loss history.
#[pyfunction]
#[pyo3(signature = (model, samples, config_toml = ""))]
fn train<'py>(
    py: Python<'py>,
    mut model: PyRefMut<'_, PyModel>,
    samples: Vec<PyRef<'_, PySample>>,
    config_toml: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_toml)?;
    let data = unwrap_samples(&samples);
    let mut trainer = Trainer::new(&model.inner, cfg.train).map_err(err)?;
    let history = trainer.train(&mut model.inner, &data, None, None).map_err(err)?;
    to_py(py, &history)
}

#[pyfunction]
#[pyo3(signature = (model, samples, tasks = "both", config_toml = ""))]
fn evaluate<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    samples: Vec<PyRef<'_, PySample>>,
    tasks: &str,
    config_toml: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_toml)?;
    let tasks: Tasks = tasks.parse().map_err(err)?;
    let report = core_evaluate(&model.inner, &unwrap_samples(&samples), tasks, &cfg.decode).map_err(err)?;
    to_py(py, &report)
}

/// Prediction records as dicts (`id`, `pred_relevant_windows`, `pred_saliency_scores`).
#[pyfunction]
#[pyo3(signature = (model, samples, config_toml = ""))]
fn predict<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModel>,
    samples: Vec<PyRef<'_, PySample>>,
    config_toml: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_toml)?;
    let records = core_predict(&model.inner, &unwrap_samples(&samples), &cfg.decode).map_err(err)?;
    to_py(py, &records)
}

#[pyfunction]
fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    temporal_iou(a, b)
}

/// Gaussian center heatmap for `(center, window)` moments in clips.
#[pyfunction]
fn heatmap(moments: Vec<(f64, f64)>, n_clips: usize) -> PyResult<Vec<f64>> {
    let anns: Vec<MomentAnnotation> = moments.into_iter().map(|(center, window)| MomentAnnotation { center, window }).collect();
    let t = build_targets(&anns, &vec![0.0; n_clips], n_clips, &LossWeights::default()).map_err(err)?;
    Ok(t.heatmap)
}

#[pyfunction]
#[pyo3(signature = (heatmap, mode = "local_maxima", top_k = 10))]
fn centers(heatmap: Vec<f64>, mode: &str, top_k: usize) -> PyResult<Vec<usize>> {
    let mode = match mode {
        "local_maxima" => CenterMode::LocalMaxima,
        "all_clips" => CenterMode::AllClips,
        other => return Err(PyValueError::new_err(format!("unknown center mode {other:?}"))),
    };
    extract_centers(&heatmap, mode, top_k).map_err(err)
}

/// `(start, end, confidence)` moments from head outputs, in seconds.
#[pyfunction]
#[pyo3(signature = (centers, heatmap, window, offset, clip_seconds = 1.0))]
fn moments(centers: Vec<usize>, heatmap: Vec<f64>, window: Vec<f64>, offset: Vec<f64>, clip_seconds: f64) -> PyResult<Vec<(f64, f64, f64)>> {
    let m = compose_moments(&centers, &heatmap, &window, &offset, clip_seconds).map_err(err)?;
    Ok(m.into_iter().map(|m| (m.start, m.end, m.confidence)).collect())
}

#[pyfunction]
#[pyo3(signature = (config_toml = "", seed = 0))]
fn gradcheck<'py>(py: Python<'py>, config_toml: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_toml)?;
    let report = full_model_gradcheck(&cfg.gradcheck, seed).map_err(err)?;
    let out = to_py(py, &report)?;
    out.cast::<PyDict>()?.set_item("passed", report.passed())?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (config_toml = "", seed = 0))]
fn bench_attn<'py>(py: Python<'py>, config_toml: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_toml)?;
    to_py(py, &bench_attention(&cfg.bench, seed).map_err(err)?)
}

#[pymodule]
fn umt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyModel>()?;
    for f in [
        wrap_pyfunction!(synthesize, m)?,
        wrap_pyfunction!(load, m)?,
        wrap_pyfunction!(save, m)?,
        wrap_pyfunction!(train, m)?,
        wrap_pyfunction!(evaluate, m)?,
        wrap_pyfunction!(predict, m)?,
        wrap_pyfunction!(iou, m)?,
        wrap_pyfunction!(heatmap, m)?,
        wrap_pyfunction!(centers, m)?,
        wrap_pyfunction!(moments, m)?,
        wrap_pyfunction!(gradcheck, m)?,
        wrap_pyfunction!(bench_attn, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
