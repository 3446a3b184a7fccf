use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use fusionbench::classify::{train_gbt, GbtConfig};
use fusionbench::cohort::{self, SignalStrengths, SynthConfig, Value};
use fusionbench::evalharness;
use fusionbench::report::{self as rep, RunConfig};
use fusionbench::Error;

create_exception!(fusionbench_py, LeakageError, PyException);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Missing(m) => PyFileNotFoundError::new_err(m),
        Error::Leakage(m) => LeakageError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for fusionbench::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(frozen, module = "fusionbench_py")]
struct Cohort {
    inner: cohort::Cohort,
}

#[pymethods]
impl Cohort {
    /// Seeded synthetic cohort with planted signal in each modality.
    #[staticmethod]
    #[pyo3(signature = (n_subjects=611, n_positive=59, seed=42, volume_shape=(24, 32, 32), spacing_mm=8.0,
                        signal_tabular_pre=0.5, signal_tabular_post=0.5, signal_imaging=0.8, missing_rate=0.03))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        n_subjects: usize,
        n_positive: usize,
        seed: u64,
        volume_shape: (usize, usize, usize),
        spacing_mm: f64,
        signal_tabular_pre: f64,
        signal_tabular_post: f64,
        signal_imaging: f64,
        missing_rate: f64,
    ) -> PyResult<Self> {
        let cfg = SynthConfig {
            n_subjects,
            n_positive,
            volume_shape: [volume_shape.0, volume_shape.1, volume_shape.2],
            spacing_mm: [spacing_mm; 3],
            signal_strengths: SignalStrengths {
                tabular_pre: signal_tabular_pre,
                tabular_post: signal_tabular_post,
                imaging: signal_imaging,
            },
            seed,
            missing_rate,
        };
        Ok(Self {
            inner: cohort::generate_cohort(&cfg).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: cohort::load_cohort(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        cohort::persist_cohort(&self.inner, &path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }

    #[getter]
    fn labels(&self) -> Vec<bool> {
        self.inner.labels().iter().map(|l| l.is_positive()).collect()
    }

    #[getter]
    fn n_positive(&self) -> usize {
        self.inner.n_positive()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.schema.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// One list per subject: floats, category strings, or None when missing.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Vec<Vec<Bound<'py, PyAny>>>> {
        self.inner
            .subjects
            .iter()
            .map(|s| {
                s.record
                    .iter()
                    .map(|v| {
                        Ok(match v {
                            None => py.None().into_bound(py),
                            Some(Value::Numeric(x)) => x.into_pyobject(py)?.into_any(),
                            Some(Value::Category(c)) => c.into_pyobject(py)?.into_any(),
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Voxel array of subject `i` as `(shape, flat values)`.
    fn volume(&self, i: usize) -> PyResult<((usize, usize, usize), Vec<f32>)> {
        let s = self
            .inner
            .subjects
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("subject index {i} out of range")))?;
        let [d, h, w] = s.volume.shape;
        Ok(((d, h, w), s.volume.voxels.clone()))
    }
}

#[pyclass(frozen, module = "fusionbench_py")]
struct FoldPlan {
    inner: evalharness::FoldPlan,
}

#[pymethods]
impl FoldPlan {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids.clone()
    }

    #[getter]
    fn folds(&self) -> Vec<usize> {
        self.inner.fold.clone()
    }

    fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.inner.train_indices(fold)
    }

    fn val_indices(&self, fold: usize) -> Vec<usize> {
        self.inner.val_indices(fold)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Folds stratified by label and tumor-volume quantile bin.
#[pyfunction]
#[pyo3(signature = (cohort, k=5, volume_bins=3, seed=0))]
fn stratified_kfold(cohort: &Cohort, k: usize, volume_bins: usize, seed: u64) -> PyResult<FoldPlan> {
    Ok(FoldPlan {
        inner: evalharness::stratified_kfold(&cohort.inner, k, volume_bins, seed).py()?,
    })
}

#[pyclass(frozen, module = "fusionbench_py")]
struct GbtModel {
    inner: fusionbench::classify::GbtModel,
}

#[pymethods]
impl GbtModel {
    /// Gradient boosted trees on logistic loss with exact greedy splits.
    #[staticmethod]
    #[pyo3(signature = (x, y, n_rounds=100, max_depth=3, learning_rate=0.1, seed=0))]
    fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, n_rounds: usize, max_depth: usize, learning_rate: f64, seed: u64) -> PyResult<Self> {
        let cfg = GbtConfig {
            n_rounds,
            max_depth,
            learning_rate,
            seed,
            ..GbtConfig::default()
        };
        Ok(Self {
            inner: train_gbt(&x, &y, &cfg).py()?,
        })
    }

    fn predict_proba(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        x.iter().map(|r| self.inner.predict_proba(r).py()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: fusionbench::classify::GbtModel::from_json(s).py()?,
        })
    }
}

#[pyfunction]
fn f1_score(y_true: Vec<bool>, y_pred: Vec<bool>) -> PyResult<f64> {
    evalharness::f1_score(&y_true, &y_pred).py()
}

#[pyfunction]
fn roc_auc(y_true: Vec<bool>, scores: Vec<f64>) -> PyResult<f64> {
    evalharness::roc_auc(&y_true, &scores).py()
}

#[pyfunction]
fn roc_curve(y_true: Vec<bool>, scores: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    evalharness::roc_curve(&y_true, &scores).py()
}

/// Indices kept after undersampling the majority class to `ratio` × minority.
#[pyfunction]
#[pyo3(signature = (labels, ratio=1.0, seed=0))]
fn undersample(labels: Vec<bool>, ratio: f64, seed: u64) -> PyResult<Vec<usize>> {
    evalharness::undersample(&labels, ratio, seed).py()
}

#[pyfunction]
fn child_seed(parent: u64, name: &str) -> u64 {
    fusionbench::seed::child_seed(parent, name)
}

/// Scenario ids of the full comparison matrix, in run order.
#[pyfunction]
fn scenario_ids() -> Vec<String> {
    evalharness::scenario_matrix(0).iter().map(|s| s.id()).collect()
}

fn run_config(config_toml: Option<&str>, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<RunConfig> {
    let mut cfg = match config_toml {
        Some(t) => RunConfig::from_toml(t).py()?,
        None => RunConfig::default(),
    };
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs one pipeline stage (`synth`, `train-extractors`, `extract-latents`,
/// `run`, `report` or `all`) with a TOML configuration string.
#[pyfunction]
#[pyo3(signature = (command, config_toml=None, out=None, seed=None))]
fn run_command(py: Python<'_>, command: &str, config_toml: Option<&str>, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<()> {
    let cfg = run_config(config_toml, out, seed)?;
    let command = command.to_string();
    py.detach(move || match command.as_str() {
        "synth" => rep::synth(&cfg).map(drop),
        "train-extractors" => rep::train_extractors(&cfg),
        "extract-latents" => rep::extract_latents(&cfg),
        "run" => rep::run(&cfg).map(drop),
        "report" => rep::report(&cfg),
        "all" => rep::all(&cfg).map(drop),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    })
    .py()
}

/// Leakage audit of a finished run directory; returns
/// `(subjects, latent producers, scenarios)` checked.
#[pyfunction]
fn audit_run(out: PathBuf) -> PyResult<(usize, usize, usize)> {
    let a = rep::audit_run(&out).py()?;
    Ok((a.subjects, a.producers, a.scenarios))
}

/// `matrix.json` of a run directory as a JSON string.
#[pyfunction]
fn load_matrix(out: PathBuf) -> PyResult<String> {
    let m = rep::Matrix::read(&rep::Layout::new(out).matrix()).py()?;
    serde_json::to_string(&m).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn fusionbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cohort>()?;
    m.add_class::<FoldPlan>()?;
    m.add_class::<GbtModel>()?;
    m.add("LeakageError", m.py().get_type::<LeakageError>())?;
    m.add_function(wrap_pyfunction!(stratified_kfold, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(undersample, m)?)?;
    m.add_function(wrap_pyfunction!(child_seed, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_ids, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add_function(wrap_pyfunction!(audit_run, m)?)?;
    m.add_function(wrap_pyfunction!(load_matrix, m)?)?;
    Ok(())
}
