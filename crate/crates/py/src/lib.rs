//! Python bindings: clip labeling, triplet candidates, dataset generation,
//! models, pretraining and downstream evaluation.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use intentlab::config::{write_dataset, RunConfig};
use intentlab::datamodel::{self, VideoRecord};
use intentlab::evaluation::{self, EvalConfig, Regime, Setting};
use intentlab::losses::LossMode;
use intentlab::nn::{Checkpoint, ModelDims, ModelParams};
use intentlab::sampling::{self, NegativeScope};
use intentlab::synthgen::{self, GenConfig, SplitCounts};
use intentlab::train::{self, PretrainConfig};
use intentlab::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::DatasetNotFound(_) | Error::CheckpointNotFound(_) | Error::NoMetricsFound(_) => {
            PyFileNotFoundError::new_err(e.to_string())
        }
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn scope(s: &str) -> PyResult<NegativeScope> {
    NegativeScope::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown scope '{s}'")))
}

fn mode(s: &str) -> PyResult<LossMode> {
    LossMode::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown loss mode '{s}'")))
}

fn rows_to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Label of a clip `[start, start + duration)` for transition time `t_a`:
/// "intentional", "transitional" or "unintentional".
#[pyfunction]
fn label_clip(start: f64, duration: f64, t_a: f64) -> PyResult<&'static str> {
    datamodel::label_clip(start, duration, t_a).map(|l| l.name()).map_err(to_py)
}

/// 1-based indices adjacent to clip `t` in a video of `n` clips.
#[pyfunction]
fn positive_candidates(t: usize, n: usize) -> Vec<usize> {
    sampling::positive_candidates(t, n)
}

/// 1-based negative indices for anchor `t` outside the margin zone.
#[pyfunction]
#[pyo3(signature = (t, n, scope = "global"))]
fn negative_candidates(t: usize, n: usize, scope: &str) -> PyResult<Vec<usize>> {
    Ok(sampling::negative_candidates(t, n, self::scope(scope)?))
}

/// The three dataset splits.
#[pyclass(module = "intentlab_py")]
struct Dataset {
    inner: synthgen::Dataset,
}

#[pymethods]
impl Dataset {
    /// Generates a dataset; writes it with a manifest when `out_dir` is given.
    #[staticmethod]
    #[pyo3(signature = (
        pretrain = 600, labeled_train = 200, labeled_test = 200, seed = 0,
        regime_shift = None, noise_sigma = None, d_in = None, out_dir = None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        py: Python<'_>,
        pretrain: usize,
        labeled_train: usize,
        labeled_test: usize,
        seed: u64,
        regime_shift: Option<f64>,
        noise_sigma: Option<f64>,
        d_in: Option<usize>,
        out_dir: Option<PathBuf>,
    ) -> PyResult<Self> {
        let mut gen = GenConfig { seed, ..GenConfig::default() };
        if let Some(v) = regime_shift {
            gen.regime_shift = v;
        }
        if let Some(v) = noise_sigma {
            gen.noise_sigma = v;
        }
        if let Some(v) = d_in {
            gen.d_in = v;
        }
        let counts = SplitCounts { pretrain, labeled_train, labeled_test };
        let inner = py
            .detach(|| match &out_dir {
                Some(dir) => {
                    let cfg = RunConfig { gen, counts, ..RunConfig::default() };
                    write_dataset(&cfg, dir).map(|(d, _)| d)
                }
                None => synthgen::generate_dataset(&gen, counts),
            })
            .map_err(to_py)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Dataset { inner: synthgen::Dataset::load(&dir).map_err(to_py)? })
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write(&dir).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(pretrain, labeled_train, labeled_test)` sizes.
    fn split_sizes(&self) -> (usize, usize, usize) {
        (self.inner.pretrain_len(), self.inner.labeled_train.len(), self.inner.labeled_test.len())
    }

    /// Per-clip features of labeled video `i` in "labeled_train" or
    /// "labeled_test", with its transition time.
    fn labeled_video(&self, split: &str, i: usize) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let v = self.labeled(split, i)?;
        Ok((array_to_rows(&v.features), v.transition.unwrap_or(f64::NAN)))
    }

    /// Per-clip features of pretraining video `i`; no annotation.
    fn pretrain_video(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .pretrain_view()
            .get(i)
            .map(|v| array_to_rows(&v.features))
            .ok_or_else(|| PyValueError::new_err(format!("no pretraining video {i}")))
    }
}

impl Dataset {
    fn labeled(&self, split: &str, i: usize) -> PyResult<&VideoRecord> {
        let videos = match split {
            "labeled_train" => &self.inner.labeled_train,
            "labeled_test" => &self.inner.labeled_test,
            _ => return Err(PyValueError::new_err(format!("unknown labeled split '{split}'"))),
        };
        videos.get(i).ok_or_else(|| PyValueError::new_err(format!("no video {i} in {split}")))
    }
}

/// Encoder with projection, order and permutation heads.
#[pyclass(module = "intentlab_py", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    params: ModelParams,
    seed: u64,
    digest: String,
}

#[pymethods]
impl Model {
    /// Freshly initialized parameters with the default widths.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, d_in = 32, temperature = 0.1))]
    fn init(seed: u64, d_in: usize, temperature: f64) -> PyResult<Self> {
        let cfg = PretrainConfig {
            dims: ModelDims { d_in, ..ModelDims::default() },
            temperature,
            ..PretrainConfig::default()
        };
        let params = train::init_params(&cfg, seed).map_err(to_py)?;
        Ok(Model { params, seed, digest: String::new() })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = Checkpoint::load(&path).map_err(to_py)?;
        Ok(Model { params: c.params, seed: c.seed, digest: c.digest })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint { seed: self.seed, digest: self.digest.clone(), params: self.params.clone() }
            .save(&path)
            .map_err(to_py)
    }

    /// Encoder features for each input row.
    fn encode(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = rows_to_array(rows)?;
        Ok(array_to_rows(&self.params.encode_rows(&x).map_err(to_py)?))
    }

    #[getter]
    fn d_in(&self) -> usize {
        self.params.d_in()
    }

    #[getter]
    fn d_f(&self) -> usize {
        self.params.d_f()
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.params.temperature
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.seed
    }

    fn __eq__(&self, other: &Model) -> bool {
        self.params == other.params
    }
}

/// Pretrains on the dataset's unlabeled split. Returns the model and the
/// per-step total loss.
#[pyfunction]
#[pyo3(signature = (dataset, steps = 2000, batch_size = 16, lr = 1e-3, scope = "global", mode = "combined", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn pretrain(
    py: Python<'_>,
    dataset: &Dataset,
    steps: usize,
    batch_size: usize,
    lr: f64,
    scope: &str,
    mode: &str,
    seed: u64,
) -> PyResult<(Model, Vec<f64>)> {
    let cfg = PretrainConfig {
        dims: ModelDims {
            d_in: dataset.inner.labeled_train.first().map_or(32, |v| v.features.ncols()),
            ..ModelDims::default()
        },
        steps,
        batch_size,
        lr,
        scope: self::scope(scope)?,
        mode: self::mode(mode)?,
        ..PretrainConfig::default()
    };
    let videos = dataset.inner.pretrain_view();
    let out = py.detach(|| train::pretrain(&videos, &cfg, seed)).map_err(to_py)?;
    let losses = out.log.iter().map(|l| l.report.l_total).collect();
    Ok((Model { params: out.params, seed, digest: String::new() }, losses))
}

/// Classification, localization and anticipation accuracies as a dict.
#[pyfunction]
#[pyo3(signature = (model, dataset, regime = "frozen", labeled_fraction = 1.0, seed = 0, probe_steps = 500))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &Model,
    dataset: &Dataset,
    regime: &str,
    labeled_fraction: f64,
    seed: u64,
    probe_steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let regime = Regime::parse(regime).ok_or_else(|| PyValueError::new_err(format!("unknown regime '{regime}'")))?;
    let cfg = EvalConfig { probe_steps, ..EvalConfig::default() };
    let setting = Setting { representation: "python", regime, labeled_fraction, seed, config_digest: &model.digest };
    let m = py
        .detach(|| {
            evaluation::evaluate(
                &model.params,
                &dataset.inner.labeled_train,
                &dataset.inner.labeled_test,
                &setting,
                &cfg,
            )
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("cls_accuracy", m.cls_accuracy)?;
    d.set_item("ant_accuracy", m.ant_accuracy)?;
    let loc = PyDict::new(py);
    for (k, v) in &m.loc_accuracy_at {
        loc.set_item(k.parse::<f64>().unwrap_or(f64::NAN), v)?;
    }
    d.set_item("loc_accuracy_at", loc)?;
    d.set_item("regime", m.regime.name())?;
    d.set_item("labeled_fraction", m.labeled_fraction)?;
    d.set_item("seed", m.seed)?;
    Ok(d)
}

/// Expected localization accuracy of a uniformly random clip choice on the
/// labeled test split.
#[pyfunction]
#[pyo3(signature = (dataset, threshold = 1.0))]
fn random_localization_baseline(dataset: &Dataset, threshold: f64) -> PyResult<f64> {
    evaluation::random_localization_baseline(&dataset.inner.labeled_test, threshold, &EvalConfig::default())
        .map_err(to_py)
}

#[pymodule]
fn intentlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(label_clip, m)?)?;
    m.add_function(wrap_pyfunction!(positive_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(negative_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(random_localization_baseline, m)?)?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    Ok(())
}
