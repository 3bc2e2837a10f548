//! Python bindings for `unkd_core`.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use unkd_core::backbone::init_embeddings;
use unkd_core::causal::{self, PowerLaw, SyntheticCausalModel};
use unkd_core::config::ExperimentConfig;
use unkd_core::dataset::{self, synthetic, InteractionDataset};
use unkd_core::distill::{self, partition_items};
use unkd_core::eval;
use unkd_core::pipeline::{Command, Pipeline};
use unkd_core::{BackboneKind, EmbeddingModel, Error};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::Divergence { .. } | Error::NonFiniteLoss(_) => {
            PyRuntimeError::new_err(err.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Experiment configuration backed by the flat `key = value` format.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::parse_text(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::load(path).map_err(to_py)?,
        })
    }

    /// Sets one key and revalidates; the config is unchanged on error.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(to_py)?;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(method={}, k={}, seed={})",
            self.inner.method, self.inner.k, self.inner.seed
        )
    }
}

/// An immutable train/valid/test split with item popularity.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: InteractionDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a delimited interaction file, filters and splits it.
    #[staticmethod]
    #[pyo3(signature = (path, delimiter = "::", rating_threshold = 0.0, min_interactions = 20, test_fraction = 0.1, valid_fraction = 0.1, seed = 0))]
    fn from_file(
        path: PathBuf,
        delimiter: &str,
        rating_threshold: f64,
        min_interactions: usize,
        test_fraction: f64,
        valid_fraction: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let log = dataset::load_interactions(path, delimiter, rating_threshold).map_err(to_py)?;
        let log = dataset::filter_min_interactions(&log, min_interactions).map_err(to_py)?;
        let inner =
            dataset::split_per_user(&log, test_fraction, valid_fraction, seed).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    /// A long-tailed synthetic dataset.
    #[staticmethod]
    #[pyo3(signature = (users = 600, items = 400, seed = 0))]
    fn synthetic(users: usize, items: usize, seed: u64) -> PyResult<Self> {
        let spec = synthetic::SyntheticSpec {
            users,
            items,
            ..Default::default()
        };
        let log = synthetic::generate(&spec, seed).map_err(to_py)?;
        let inner = dataset::split_per_user(&log, 0.1, 0.1, seed).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: InteractionDataset::load(dir).map_err(to_py)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(dir).map_err(to_py)
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items
    }

    #[getter]
    fn popularity(&self) -> Vec<u32> {
        self.inner.popularity.clone()
    }

    /// Items of `user` in `split` ("train", "valid" or "test").
    fn items(&self, user: usize, split: &str) -> PyResult<Vec<u32>> {
        let which = match split {
            "train" => dataset::Split::Train,
            "valid" => dataset::Split::Valid,
            "test" => dataset::Split::Test,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        self.inner
            .split(which)
            .get(user)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("user {user} out of range")))
    }
}

/// An MF or LightGCN embedding model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: EmbeddingModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (kind, num_users, num_items, dim, layers = 0, seed = 0, init_scale = 0.1))]
    fn init(
        kind: &str,
        num_users: usize,
        num_items: usize,
        dim: usize,
        layers: usize,
        seed: u64,
        init_scale: f64,
    ) -> PyResult<Self> {
        let kind: BackboneKind = kind.parse().map_err(to_py)?;
        Ok(PyModel {
            inner: init_embeddings(kind, num_users, num_items, dim, layers, seed, init_scale)
                .map_err(to_py)?,
        })
    }

    /// Loads a checkpoint; LightGCN models are propagated over `dataset`.
    #[staticmethod]
    #[pyo3(signature = (path, dataset = None))]
    fn load(path: PathBuf, dataset: Option<&PyDataset>) -> PyResult<Self> {
        let mut inner = EmbeddingModel::load(path).map_err(to_py)?;
        if inner.kind() == BackboneKind::LightGcn {
            let ds = dataset
                .ok_or_else(|| PyValueError::new_err("LightGCN checkpoints need the dataset"))?;
            let graph = unkd_core::NormalizedGraph::from_train(
                ds.inner.num_users,
                ds.inner.num_items,
                &ds.inner.train,
            );
            inner.propagate(&graph).map_err(to_py)?;
        }
        Ok(PyModel { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score(&self, user: usize, item: usize) -> PyResult<f32> {
        if user >= self.inner.num_users() || item >= self.inner.num_items() {
            return Err(PyValueError::new_err("index out of range"));
        }
        self.inner.score(user, item).map_err(to_py)
    }

    #[pyo3(signature = (user, n, exclude = Vec::new()))]
    fn top_n(&self, user: usize, n: usize, mut exclude: Vec<u32>) -> PyResult<Vec<u32>> {
        if user >= self.inner.num_users() {
            return Err(PyValueError::new_err("user out of range"));
        }
        exclude.sort_unstable();
        self.inner.top_n(user, n, &exclude).map_err(to_py)
    }

    /// Test-set report as a `{(metric, group): value}` dict.
    #[pyo3(signature = (dataset, n = 10))]
    fn evaluate(&self, dataset: &PyDataset, n: usize) -> PyResult<HashMap<(String, String), f64>> {
        let partition = partition_items(&dataset.inner.popularity, 2).map_err(to_py)?;
        let report =
            eval::evaluate_model(&self.inner, &dataset.inner, &partition, n).map_err(to_py)?;
        Ok(report
            .entries()
            .into_iter()
            .map(|(m, g, v)| ((m.to_string(), g.to_string()), v))
            .collect())
    }
}

/// Additive synthetic model `Y = M + γ·ln(1+Z)`.
#[pyclass(name = "CausalModel", frozen)]
struct PyCausalModel {
    inner: SyntheticCausalModel,
}

impl PyCausalModel {
    fn check(&self, user: usize, item: usize) -> PyResult<()> {
        if user >= self.inner.num_users || item >= self.inner.num_items {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(())
    }
}

#[pymethods]
impl PyCausalModel {
    #[staticmethod]
    #[pyo3(signature = (users, items, gamma, exponent = 1.5, max_popularity = 1000, seed = 0))]
    fn generate(
        users: usize,
        items: usize,
        gamma: f64,
        exponent: f64,
        max_popularity: u32,
        seed: u64,
    ) -> PyResult<Self> {
        let law = PowerLaw {
            exponent,
            max: max_popularity,
        };
        Ok(PyCausalModel {
            inner: SyntheticCausalModel::generate(users, items, gamma, law, seed).map_err(to_py)?,
        })
    }

    /// Builds a model from a row-major affinity list.
    #[staticmethod]
    #[pyo3(signature = (users, items, affinity, popularity, gamma, baseline = None))]
    fn from_parts(
        users: usize,
        items: usize,
        affinity: Vec<f64>,
        popularity: Vec<u32>,
        gamma: f64,
        baseline: Option<usize>,
    ) -> PyResult<Self> {
        Ok(PyCausalModel {
            inner: SyntheticCausalModel::from_parts(
                users, items, affinity, popularity, gamma, baseline,
            )
            .map_err(to_py)?,
        })
    }

    #[getter]
    fn popularity(&self) -> Vec<u32> {
        self.inner.popularity.clone()
    }

    #[getter]
    fn baseline_item(&self) -> usize {
        self.inner.baseline_item
    }

    fn label(&self, user: usize, item: usize) -> PyResult<f64> {
        self.check(user, item)?;
        Ok(self.inner.label(user, item))
    }

    fn total_effect(&self, user: usize, item: usize) -> PyResult<f64> {
        self.check(user, item)?;
        Ok(self.inner.total_effect(user, item))
    }

    fn path_effect_z(&self, user: usize, item: usize) -> PyResult<f64> {
        self.check(user, item)?;
        Ok(self.inner.path_effect_z(user, item))
    }

    fn path_effect_m(&self, user: usize, item: usize) -> PyResult<f64> {
        self.check(user, item)?;
        Ok(self.inner.path_effect_m(user, item))
    }

    fn strata(&self) -> Vec<Vec<usize>> {
        self.inner.equal_popularity_strata()
    }

    /// `(holds, order_by_label, order_by_preference)` for an equal-popularity
    /// item subset.
    fn lemma_check(
        &self,
        user: usize,
        items: Vec<usize>,
    ) -> PyResult<(bool, Vec<usize>, Vec<usize>)> {
        if items.iter().any(|&i| i >= self.inner.num_items) || user >= self.inner.num_users {
            return Err(PyValueError::new_err("index out of range"));
        }
        let out = causal::lemma1_check(&self.inner, user, &items).map_err(to_py)?;
        Ok((out.holds, out.by_label, out.by_preference))
    }
}

/// Item groups, most popular first.
#[pyfunction]
fn partition(popularity: Vec<u32>, k: usize) -> PyResult<Vec<Vec<u32>>> {
    Ok(partition_items(&popularity, k).map_err(to_py)?.groups)
}

#[pyfunction]
fn rank_sampling_weights(length: usize, mu: f64) -> PyResult<Vec<f64>> {
    if length == 0 || !(mu > 0.0) {
        return Err(PyValueError::new_err("length must be positive and mu > 0"));
    }
    Ok(distill::rank_sampling_weights(length, mu))
}

#[pyfunction]
fn recall_at_n(top: Vec<u32>, relevant: Vec<u32>, n: usize) -> Option<f64> {
    eval::recall_at_n(&top, &relevant, n)
}

#[pyfunction]
fn ndcg_at_n(top: Vec<u32>, relevant: Vec<u32>, n: usize) -> Option<f64> {
    eval::ndcg_at_n(&top, &relevant, n)
}

/// Runs a pipeline command into the run directory `out`.
#[pyfunction]
fn run(command: &str, config: &PyConfig, out: PathBuf) -> PyResult<()> {
    let command: Command = command.parse().map_err(to_py)?;
    Pipeline::new(config.inner.clone(), out)
        .run(command)
        .map_err(to_py)
}

#[pymodule]
fn unkd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCausalModel>()?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(rank_sampling_weights, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_n, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_n, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
