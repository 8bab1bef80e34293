//! Python bindings, importable as `t23daqa`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use t23daqa::dataset::{load_manifest, load_mos, load_ratings, load_scores, write_mos};
use t23daqa::losses::RankVariant;
use t23daqa::metrics::{self, Verdict};
use t23daqa::model::encoders::FrameStem;
use t23daqa::model::Checkpoint;
use t23daqa::projection::SampleMode;
use t23daqa::subjective::OutlierParams;
use t23daqa::train::{self, TrainConfig};
use t23daqa::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn base_dir(data_dir: Option<PathBuf>, manifest: &Path) -> PathBuf {
    data_dir.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

#[pyfunction]
fn srcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::srcc(&x, &y).map_err(py_err)
}

#[pyfunction]
fn krcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::krcc(&x, &y).map_err(py_err)
}

#[pyfunction]
fn plcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::plcc(&x, &y).map_err(py_err)
}

/// Returns `(beta, mapped, sse, converged)`.
#[pyfunction]
fn fit_logistic(pred: Vec<f64>, mos: Vec<f64>) -> PyResult<([f64; 5], Vec<f64>, f64, bool)> {
    let fit = metrics::fit_logistic(&pred, &mos).map_err(py_err)?;
    Ok((fit.params.beta, fit.mapped, fit.sse, fit.converged))
}

/// `"superior"`, `"inferior"` or `"indistinguishable"` for residuals `a` against `b`.
#[pyfunction]
#[pyo3(signature = (a, b, confidence = 0.95))]
fn f_test(a: Vec<f64>, b: Vec<f64>, confidence: f64) -> PyResult<&'static str> {
    Ok(match metrics::f_test(&a, &b, confidence).map_err(py_err)? {
        Verdict::Superior => "superior",
        Verdict::Inferior => "inferior",
        Verdict::Indistinguishable => "indistinguishable",
    })
}

#[pyfunction]
fn linearity_loss(pred: Vec<f64>, label: Vec<f64>) -> PyResult<f64> {
    t23daqa::losses::linearity_loss(&pred, &label).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (pred, label, variant = "pairwise_sign_hinge"))]
fn rank_loss(pred: Vec<f64>, label: Vec<f64>, variant: &str) -> PyResult<f64> {
    let v: RankVariant = variant.parse().map_err(py_err)?;
    t23daqa::losses::rank_loss(&pred, &label, v).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (n_frames, mode = "test", n_segments = 12, seed = 0))]
fn sample_indices(
    n_frames: usize,
    mode: &str,
    n_segments: usize,
    seed: u64,
) -> PyResult<Vec<usize>> {
    let mode: SampleMode = mode.parse().map_err(py_err)?;
    t23daqa::projection::sample_indices(n_frames, mode, n_segments, seed).map_err(py_err)
}

#[pyfunction]
fn front_back_indices(n_frames: usize) -> PyResult<(usize, usize)> {
    t23daqa::projection::front_back_indices(n_frames).map_err(py_err)
}

/// Writes a synthetic study into `out` and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, assets = 12, frames = 24, resolution = 64, subjects = 8, seed = 0))]
fn synth(
    out: PathBuf,
    assets: usize,
    frames: usize,
    resolution: u32,
    subjects: usize,
    seed: u64,
) -> PyResult<PathBuf> {
    let ds = t23daqa::synthetic::write_synthetic_dataset(
        &out,
        assets,
        frames,
        (resolution, resolution),
        subjects,
        seed,
    )
    .map_err(py_err)?;
    Ok(ds.manifest_path)
}

/// Outlier screening and MOS. Returns `({asset_id: (q, a, c)}, rejected_subjects)`.
#[pyfunction]
#[pyo3(signature = (ratings, manifest = None, out = None))]
fn process_ratings(
    ratings: PathBuf,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
) -> PyResult<(HashMap<String, [f64; 3]>, Vec<String>)> {
    let r = load_ratings(&ratings).map_err(py_err)?;
    let m = manifest
        .as_deref()
        .map(load_manifest)
        .transpose()
        .map_err(py_err)?;
    let (mos, report) =
        t23daqa::subjective::process_ratings(&r, m.as_deref(), &OutlierParams::default())
            .map_err(py_err)?;
    if let Some(path) = out {
        write_mos(&path, &mos).map_err(py_err)?;
    }
    Ok((
        mos.into_iter().map(|m| (m.asset_id, m.mos)).collect(),
        report.rejected_subjects,
    ))
}

/// `{dimension: (srcc, krcc, plcc)}` of a score file against a MOS file.
#[pyfunction]
fn evaluate(pred: PathBuf, mos: PathBuf) -> PyResult<HashMap<String, (f64, f64, f64)>> {
    let e = metrics::evaluate(
        &load_scores(&pred).map_err(py_err)?,
        &load_mos(&mos).map_err(py_err)?,
    )
    .map_err(py_err)?;
    Ok(e.dims
        .iter()
        .map(|d| (d.dim.name().to_string(), (d.srcc, d.krcc, d.plcc)))
        .collect())
}

/// Trains on every labelled asset, saves a checkpoint and returns the per-epoch mean losses.
#[pyfunction]
#[pyo3(signature = (manifest, mos, out, config = None, data_dir = None))]
fn train_model(
    manifest: PathBuf,
    mos: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    data_dir: Option<PathBuf>,
) -> PyResult<Vec<f64>> {
    let cfg = match config {
        Some(p) => TrainConfig::load(&p).map_err(py_err)?,
        None => TrainConfig::default(),
    };
    let base = base_dir(data_dir, &manifest);
    let m = load_manifest(&manifest).map_err(py_err)?;
    let labels = load_mos(&mos).map_err(py_err)?;
    let ids: Vec<String> = labels.iter().map(|l| l.asset_id.clone()).collect();
    let assets = train::prepare_assets(
        &m,
        &base,
        &cfg.preprocess(),
        FrameStem {
            grid: cfg.stem_grid,
        },
    )
    .map_err(py_err)?;
    let outcome = train::train(&cfg, &assets, &labels, &ids, None).map_err(py_err)?;
    train::save_checkpoint(&outcome.model, &cfg, &out).map_err(py_err)?;
    Ok(outcome.epoch_losses)
}

/// A trained predictor loaded from a checkpoint.
#[pyclass]
struct Model {
    ckpt: Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            ckpt: Checkpoint::load(&path, None).map_err(py_err)?,
        })
    }

    /// Test-mode scores `{asset_id: (q, a, c)}` for every asset in a manifest.
    #[pyo3(signature = (manifest, data_dir = None))]
    fn predict(
        &self,
        manifest: PathBuf,
        data_dir: Option<PathBuf>,
    ) -> PyResult<HashMap<String, [f64; 3]>> {
        let base = base_dir(data_dir, &manifest);
        let m = load_manifest(&manifest).map_err(py_err)?;
        let assets =
            train::prepare_assets(&m, &base, &self.ckpt.preprocess, self.ckpt.model.stem())
                .map_err(py_err)?;
        let scores = train::predict(&self.ckpt.model, &assets, None).map_err(py_err)?;
        Ok(scores
            .into_iter()
            .map(|s| (s.asset_id.clone(), s.values()))
            .collect())
    }

    #[getter]
    fn n_trainable_params(&self) -> usize {
        self.ckpt.model.n_trainable_params()
    }
}

#[pymodule]
#[pyo3(name = "t23daqa")]
fn t23daqa_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(srcc, m)?)?;
    m.add_function(wrap_pyfunction!(krcc, m)?)?;
    m.add_function(wrap_pyfunction!(plcc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(f_test, m)?)?;
    m.add_function(wrap_pyfunction!(linearity_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rank_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sample_indices, m)?)?;
    m.add_function(wrap_pyfunction!(front_back_indices, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(process_ratings, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
