//! Python bindings: `Forest`, `MondrianTree`, the synthetic generators and
//! the verification suite.

use mondrian_forest::data::{self, SampleStream};
use mondrian_forest::{
    verify, AxisBox, ForestCheckpoint, RandomSource, ScheduleSpec, Task, VoteRule,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_task(task: &str) -> PyResult<Task> {
    match task {
        "classify" => Ok(Task::Classify),
        "regress" => Ok(Task::Regress),
        other => Err(value_error(format!("unknown task {other:?}"))),
    }
}

/// Online Mondrian forest on the unit cube.
#[pyclass(name = "Forest", module = "mondrian_forest_py")]
struct PyForest {
    inner: mondrian_forest::Forest,
}

#[pymethods]
impl PyForest {
    #[new]
    #[pyo3(signature = (trees, dimension, schedule = "power:1", task = "classify", seed = 0))]
    fn new(
        trees: usize,
        dimension: usize,
        schedule: &str,
        task: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let spec: ScheduleSpec = schedule.parse().map_err(value_error)?;
        let schedule = spec.for_dimension(dimension).map_err(value_error)?;
        let inner =
            mondrian_forest::Forest::new(trees, schedule, dimension, parse_task(task)?, seed)
                .map_err(value_error)?;
        Ok(Self { inner })
    }

    fn partial_fit(&mut self, x: Vec<f64>, y: f64) -> PyResult<()> {
        self.inner.partial_fit(&x, y).map_err(value_error)
    }

    /// Feeds rows in order.
    fn fit(&mut self, py: Python<'_>, xs: Vec<Vec<f64>>, ys: Vec<f64>) -> PyResult<()> {
        if xs.len() != ys.len() {
            return Err(value_error("xs and ys differ in length"));
        }
        let inner = &mut self.inner;
        py.detach(|| {
            xs.iter()
                .zip(&ys)
                .try_for_each(|(x, &y)| inner.partial_fit(x, y))
        })
        .map_err(value_error)
    }

    fn predict_proba(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_proba(&x).map_err(value_error)
    }

    #[pyo3(signature = (x, rule = "majority"))]
    fn predict_class(&self, x: Vec<f64>, rule: &str) -> PyResult<u8> {
        let rule: VoteRule = rule.parse().map_err(value_error)?;
        self.inner.predict_class(&x, rule).map_err(value_error)
    }

    fn predict_regression(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_regression(&x).map_err(value_error)
    }

    #[getter]
    fn n_seen(&self) -> usize {
        self.inner.n_seen()
    }

    #[getter]
    fn lifetime(&self) -> f64 {
        self.inner.lifetime()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn split_counts(&self) -> Vec<usize> {
        self.inner.trees().iter().map(|t| t.split_count()).collect()
    }

    fn tree(&self, index: usize) -> PyResult<PyTree> {
        let tree = self
            .inner
            .trees()
            .get(index)
            .ok_or_else(|| value_error(format!("no tree {index}")))?;
        Ok(PyTree {
            inner: tree.clone(),
            rng: self.inner.sources()[index].clone(),
        })
    }

    fn checkpoint_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.checkpoint()).map_err(value_error)
    }

    /// Restores a prediction-only forest.
    #[staticmethod]
    fn from_checkpoint_json(text: &str) -> PyResult<Self> {
        let ckpt: ForestCheckpoint = serde_json::from_str(text).map_err(value_error)?;
        let inner = mondrian_forest::Forest::from_checkpoint(ckpt, None).map_err(value_error)?;
        Ok(Self { inner })
    }

    fn audit(&self) -> PyResult<()> {
        self.inner.audit().map_err(value_error)
    }
}

/// A single Mondrian tree together with the random stream used to extend it.
#[pyclass(name = "MondrianTree", module = "mondrian_forest_py")]
struct PyTree {
    inner: mondrian_forest::MondrianTree,
    rng: RandomSource,
}

#[pymethods]
impl PyTree {
    /// Samples a tree with the given lifetime on the unit cube.
    #[staticmethod]
    #[pyo3(signature = (lifetime, dimension, seed = 0, stream = 0))]
    fn sample(lifetime: f64, dimension: usize, seed: u64, stream: u64) -> PyResult<Self> {
        let mut rng = RandomSource::new(seed, stream);
        let inner =
            mondrian_forest::MondrianTree::sample(lifetime, AxisBox::unit(dimension), &mut rng)
                .map_err(value_error)?;
        Ok(Self { inner, rng })
    }

    /// Grows the tree to a larger lifetime; returns the number of new splits.
    #[pyo3(signature = (lifetime, naive = false))]
    fn extend(&mut self, lifetime: f64, naive: bool) -> PyResult<usize> {
        let before = self.inner.split_count();
        if naive {
            self.inner.extend(lifetime, &mut self.rng)
        } else {
            self.inner.extend_fast(lifetime, &mut self.rng)
        }
        .map_err(value_error)?;
        Ok(self.inner.split_count() - before)
    }

    #[getter]
    fn lifetime(&self) -> f64 {
        self.inner.lifetime()
    }

    #[getter]
    fn split_count(&self) -> usize {
        self.inner.split_count()
    }

    fn depth_of(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.depth_of(&x).map_err(value_error)
    }

    fn cell_diameter(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.cell_diameter(&x).map_err(value_error)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_error)
    }
}

fn columns(stream: SampleStream) -> (Vec<Vec<f64>>, Vec<f64>) {
    stream.samples.into_iter().map(|s| (s.x, s.y)).unzip()
}

/// `(xs, ys)` with `P(Y = 1 | x) = x_1`.
#[pyfunction]
#[pyo3(signature = (dimension, n, seed = 0))]
fn synth_lipschitz_classify(
    dimension: usize,
    n: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    Ok(columns(
        data::synth_lipschitz_classify(dimension, n, seed).map_err(value_error)?,
    ))
}

/// `(xs, ys)` with `y = sin(2 pi x_1) + N(0, noise_sd^2)`.
#[pyfunction]
#[pyo3(signature = (dimension, n, seed = 0, noise_sd = 0.1))]
fn synth_lipschitz_regress(
    dimension: usize,
    n: usize,
    seed: u64,
    noise_sd: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    Ok(columns(
        data::synth_lipschitz_regress(dimension, n, seed, noise_sd).map_err(value_error)?,
    ))
}

/// One-dimensional band `y = 1{|x - 1/2| <= epsilon}`.
#[pyfunction]
#[pyo3(signature = (epsilon, n, seed = 0))]
fn synth_band(epsilon: f64, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    Ok(columns(
        data::synth_band(epsilon, n, seed).map_err(value_error)?,
    ))
}

#[pyfunction]
fn band_epsilon(lifetime: f64) -> f64 {
    data::band_epsilon(lifetime)
}

/// Runs the canonical verification grid; returns one JSON report per line.
#[pyfunction]
#[pyo3(signature = (seed = 0, trials = 10_000))]
fn verify_suite(py: Python<'_>, seed: u64, trials: usize) -> PyResult<Vec<String>> {
    let reports = py
        .detach(|| verify::canonical_suite(seed, trials))
        .map_err(value_error)?;
    reports
        .iter()
        .map(|r| serde_json::to_string(r).map_err(value_error))
        .collect()
}

#[pymodule]
fn mondrian_forest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyForest>()?;
    m.add_class::<PyTree>()?;
    m.add_function(wrap_pyfunction!(synth_lipschitz_classify, m)?)?;
    m.add_function(wrap_pyfunction!(synth_lipschitz_regress, m)?)?;
    m.add_function(wrap_pyfunction!(synth_band, m)?)?;
    m.add_function(wrap_pyfunction!(band_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    Ok(())
}
