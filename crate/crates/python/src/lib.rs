//! Python bindings: datasets, factorization models, the transfer pipeline
//! and multi-seed experiments.
//!
//! ```python
//! import pydcdcsr as d
//! src, tgt = d.synthesize(entities=200, seed=1)
//! train, test = tgt.split(0.8)
//! result = d.run_pipeline(src, train, task="CDR", dim=5)
//! print(result.score(test))
//! ```

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use dcdcsr::data::{self, RatingScale};
use dcdcsr::eval::{self, ExperimentConfig, Method};
use dcdcsr::mf::{self, MfKind};
use dcdcsr::pipeline;
use dcdcsr::synth::{self, SynthConfig};
use dcdcsr::{PipelineConfig, RatingPredictor, RatingTriple, Task};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scale_from(scale: (f64, f64)) -> PyResult<RatingScale> {
    RatingScale::new(scale.0, scale.1).map_err(value_err)
}

/// Ratings of one domain, as `(user, item, rating, timestamp)` tuples.
#[pyclass(module = "pydcdcsr", frozen, skip_from_py_object)]
#[derive(Clone)]
struct RatingDataset {
    inner: dcdcsr::RatingDataset,
}

#[pymethods]
impl RatingDataset {
    #[new]
    #[pyo3(signature = (triples, scale = (1.0, 5.0)))]
    fn new(triples: Vec<(String, String, f64, i64)>, scale: (f64, f64)) -> PyResult<Self> {
        let t = triples
            .into_iter()
            .map(|(u, i, r, ts)| RatingTriple::new(u, i, r, ts))
            .collect();
        let inner = dcdcsr::RatingDataset::from_triples(t, scale_from(scale)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Reads a `user,item,rating,timestamp` file.
    #[staticmethod]
    #[pyo3(signature = (path, scale = (1.0, 5.0)))]
    fn load(path: PathBuf, scale: (f64, f64)) -> PyResult<Self> {
        let inner = data::load_ratings(&path, scale_from(scale)?).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_to(&path, ',').map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Earliest `fraction` of ratings as train, the rest as test.
    fn split(&self, fraction: f64) -> PyResult<(Self, Self)> {
        let (a, b) = data::chronological_split(&self.inner, fraction).map_err(value_err)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn triples(&self) -> Vec<(String, String, f64, i64)> {
        self.inner
            .triples()
            .iter()
            .map(|t| (t.user.clone(), t.item.clone(), t.rating, t.timestamp))
            .collect()
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    fn mean_rating(&self) -> Option<f64> {
        self.inner.mean_rating()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "RatingDataset({} ratings, {} users, {} items)",
            self.inner.len(),
            self.inner.n_users(),
            self.inner.n_items()
        )
    }
}

fn factor_dict(m: &dcdcsr::FactorMatrix) -> Vec<(String, Vec<f64>)> {
    m.iter().map(|(id, v)| (id.to_string(), v.to_vec())).collect()
}

/// A fitted factorization model.
#[pyclass(module = "pydcdcsr", frozen, skip_from_py_object)]
#[derive(Clone)]
struct MfModel {
    inner: dcdcsr::MfModel,
}

#[pymethods]
impl MfModel {
    /// Predicted rating; the training mean for unknown users or items.
    fn predict(&self, user: &str, item: &str) -> f64 {
        self.inner.predict(user, item)
    }

    /// `(id, vector)` pairs in index order.
    fn user_factors(&self) -> Vec<(String, Vec<f64>)> {
        factor_dict(self.inner.users())
    }

    fn item_factors(&self) -> Vec<(String, Vec<f64>)> {
        factor_dict(self.inner.items())
    }

    fn objective(&self, data: &RatingDataset) -> PyResult<f64> {
        self.inner.objective(&data.inner).map_err(value_err)
    }

    fn save(&self, directory: PathBuf, prefix: &str) -> PyResult<()> {
        self.inner.save(&directory, prefix).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(directory: PathBuf, prefix: &str) -> PyResult<Self> {
        let inner = dcdcsr::MfModel::load(&directory, prefix).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "MfModel({}, dim={}, {} users, {} items)",
            c.model,
            c.dim,
            self.inner.users().len(),
            self.inner.items().len()
        )
    }
}

/// Output of the full transfer pipeline.
#[pyclass(module = "pydcdcsr", frozen)]
struct PipelineResult {
    inner: dcdcsr::PipelineResult,
}

#[pymethods]
impl PipelineResult {
    fn predict(&self, user: &str, item: &str) -> f64 {
        self.inner.predict(user, item)
    }

    /// `(mae, rmse)` on `test`.
    fn score(&self, test: &RatingDataset) -> PyResult<(f64, f64)> {
        let m = eval::score(&self.inner, &test.inner).map_err(value_err)?;
        Ok((m.mae, m.rmse))
    }

    /// Top `n` items `user` has not rated in `train`.
    #[pyo3(signature = (user, train, n = 10))]
    fn recommend(&self, user: &str, train: &RatingDataset, n: usize) -> Vec<(String, f64)> {
        self.inner.recommend(user, &train.inner, n)
    }

    #[getter]
    fn model(&self) -> MfModel {
        MfModel {
            inner: self.inner.model.clone(),
        }
    }

    #[getter]
    fn target_model(&self) -> MfModel {
        MfModel {
            inner: self.inner.target_model.clone(),
        }
    }

    #[getter]
    fn source_model(&self) -> MfModel {
        MfModel {
            inner: self.inner.source_model.clone(),
        }
    }

    /// Benchmark vectors, one per target entity of the mapped kind.
    fn benchmark(&self) -> Vec<(String, Vec<f64>)> {
        factor_dict(&self.inner.benchmark.matrix)
    }

    /// Mapping-network training loss per epoch, starting with the initial loss.
    #[getter]
    fn mapping_losses(&self) -> Vec<f64> {
        self.inner.mapping.training.losses.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn pipeline_config(
    task: &str,
    model: &str,
    dim: usize,
    epochs: usize,
    learning_rate: f64,
    regularization: f64,
    map_epochs: usize,
    map_learning_rate: f64,
    k_neighbors: usize,
    seed: u64,
) -> PyResult<PipelineConfig> {
    let task: Task = task.parse().map_err(value_err)?;
    let kind: MfKind = model.parse().map_err(value_err)?;
    let mut c = PipelineConfig::new(task, kind);
    c.mf.dim = dim;
    c.mf.epochs = epochs;
    c.mf.learning_rate = learning_rate;
    c.mf.regularization = regularization;
    c.map.max_epochs = map_epochs;
    c.map.learning_rate = map_learning_rate;
    c.k_neighbors = k_neighbors;
    c.seed = seed;
    Ok(c)
}

/// Factorizes `data` with PMF, MMMF or BPR.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (data, model = "PMF", dim = 10, epochs = 100, learning_rate = 0.01, regularization = 0.01, seed = 0))]
fn train_mf(
    py: Python<'_>,
    data: &RatingDataset,
    model: &str,
    dim: usize,
    epochs: usize,
    learning_rate: f64,
    regularization: f64,
    seed: u64,
) -> PyResult<MfModel> {
    let kind: MfKind = model.parse().map_err(value_err)?;
    let cfg = dcdcsr::MfConfig {
        dim,
        epochs,
        learning_rate,
        regularization,
        seed,
        ..dcdcsr::MfConfig::new(kind)
    };
    let inner = py.detach(|| mf::train(&data.inner, &cfg)).map_err(value_err)?;
    Ok(MfModel { inner })
}

/// Runs every stage: factorization, benchmark, mapping and refit.
#[pyfunction]
#[pyo3(signature = (
    source, target_train, task = "CDR", model = "PMF", dim = 10, epochs = 100, learning_rate = 0.01,
    regularization = 0.01, map_epochs = 200, map_learning_rate = 0.005, k_neighbors = 5, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    py: Python<'_>,
    source: &RatingDataset,
    target_train: &RatingDataset,
    task: &str,
    model: &str,
    dim: usize,
    epochs: usize,
    learning_rate: f64,
    regularization: f64,
    map_epochs: usize,
    map_learning_rate: f64,
    k_neighbors: usize,
    seed: u64,
) -> PyResult<PipelineResult> {
    let cfg = pipeline_config(
        task,
        model,
        dim,
        epochs,
        learning_rate,
        regularization,
        map_epochs,
        map_learning_rate,
        k_neighbors,
        seed,
    )?;
    let inner = py
        .detach(|| pipeline::run(&source.inner, &target_train.inner, &cfg))
        .map_err(value_err)?;
    Ok(PipelineResult { inner })
}

/// Scores each method over several seeds. Returns one dict per method with
/// `method`, `mae_mean`, `mae_std`, `rmse_mean`, `rmse_std`, `seeds`,
/// `failures` and the formatted `mae`/`rmse` cells.
#[pyfunction]
#[pyo3(signature = (
    source, train, test, methods = None, seeds = vec![1, 2, 3, 4, 5], task = "CDR", model = "PMF", dim = 10,
    epochs = 100, learning_rate = 0.01, regularization = 0.01, map_epochs = 200, map_learning_rate = 0.005,
    k_neighbors = 5
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    source: &RatingDataset,
    train: &RatingDataset,
    test: &RatingDataset,
    methods: Option<Vec<String>>,
    seeds: Vec<u64>,
    task: &str,
    model: &str,
    dim: usize,
    epochs: usize,
    learning_rate: f64,
    regularization: f64,
    map_epochs: usize,
    map_learning_rate: f64,
    k_neighbors: usize,
) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    use pyo3::types::{PyDict, PyDictMethods};
    let pipeline = pipeline_config(
        task,
        model,
        dim,
        epochs,
        learning_rate,
        regularization,
        map_epochs,
        map_learning_rate,
        k_neighbors,
        0,
    )?;
    let mut cfg = ExperimentConfig::new(pipeline);
    if let Some(m) = methods {
        cfg.methods = m.iter().map(|s| s.parse::<Method>()).collect::<Result<_, _>>().map_err(value_err)?;
    }
    cfg.seeds = seeds;
    let reports = py
        .detach(|| eval::run_experiment(&source.inner, &train.inner, &test.inner, &cfg))
        .map_err(value_err)?;
    reports
        .iter()
        .map(|r| {
            let s = r.summary();
            let d = PyDict::new(py);
            d.set_item("method", &s.method)?;
            d.set_item("mae_mean", s.mae_mean)?;
            d.set_item("mae_std", s.mae_std)?;
            d.set_item("rmse_mean", s.rmse_mean)?;
            d.set_item("rmse_std", s.rmse_std)?;
            d.set_item("seeds", s.seeds)?;
            d.set_item("failures", s.failures)?;
            d.set_item("mae", eval::format_cell(s.mae_mean, s.mae_std))?;
            d.set_item("rmse", eval::format_cell(s.rmse_mean, s.rmse_std))?;
            Ok(d)
        })
        .collect()
}

/// `(mae, rmse)` of `model` on `test`.
#[pyfunction]
fn score(model: &MfModel, test: &RatingDataset) -> PyResult<(f64, f64)> {
    let m = eval::score(&model.inner, &test.inner).map_err(value_err)?;
    Ok((m.mae, m.rmse))
}

/// Source and target datasets sharing planted latent factors.
#[pyfunction]
#[pyo3(signature = (
    entities = 1000, common_fraction = 0.6, source_per_entity = 50, target_per_entity = 5, noise = 0.3,
    task = "CDR", seed = 0
))]
fn synthesize(
    entities: usize,
    common_fraction: f64,
    source_per_entity: usize,
    target_per_entity: usize,
    noise: f64,
    task: &str,
    seed: u64,
) -> PyResult<(RatingDataset, RatingDataset)> {
    let cfg = SynthConfig {
        n_shared_side: entities,
        common_fraction,
        source_per_entity,
        target_per_entity,
        noise_std: noise,
        task: task.parse().map_err(value_err)?,
        seed,
        ..SynthConfig::default()
    };
    let pair = synth::generate(&cfg).map_err(value_err)?;
    Ok((RatingDataset { inner: pair.source }, RatingDataset { inner: pair.target }))
}

#[pymodule]
fn pydcdcsr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RatingDataset>()?;
    m.add_class::<MfModel>()?;
    m.add_class::<PipelineResult>()?;
    m.add_function(wrap_pyfunction!(train_mf, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
