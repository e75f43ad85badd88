use std::fmt::Display;

use acewgs_core::catalog::Catalog;
use acewgs_core::corpus::{self, Chunk, Corpus};
use acewgs_core::index;
use acewgs_core::inverse::{self, report, ParameterSettings};
use acewgs_core::llm;
use acewgs_core::pso::PsoConfig;
use acewgs_core::query;
use acewgs_core::router::{QueryRouter, RuleSet, SessionState};
use acewgs_core::surrogate::{self, CatalystDesign, ModelBundle};
use acewgs_core::thermo::{self, FeedComposition};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pythonize::{depythonize, pythonize};

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Ensemble conversion model bounded by equilibrium.
#[pyclass(name = "Surrogate", module = "acewgs")]
struct PySurrogate {
    inner: surrogate::Surrogate,
}

#[pymethods]
impl PySurrogate {
    /// Loads a bundle file, or builds the reference bundle when `path` is None.
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<&str>) -> PyResult<Self> {
        let bundle = match path {
            Some(p) => ModelBundle::load(p).map_err(value_err)?,
            None => surrogate::reference_bundle(&Catalog::default()),
        };
        Ok(Self { inner: surrogate::Surrogate::new(bundle).map_err(value_err)? })
    }

    #[getter]
    fn feature_schema(&self) -> Vec<String> {
        self.inner.bundle().feature_schema.clone()
    }

    #[getter]
    fn members(&self) -> usize {
        self.inner.bundle().ensemble.len()
    }

    /// `design` is a dict with the CatalystDesign fields. Returns
    /// `{conversion, uncertainty, x_eq}` in percent.
    fn predict<'py>(&self, py: Python<'py>, design: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let design: CatalystDesign = depythonize(design)?;
        let p = self.inner.predict(&design).map_err(value_err)?;
        Ok(pythonize(py, &p)?)
    }
}

/// Exact cosine-similarity index over text chunks.
#[pyclass(name = "VectorIndex", module = "acewgs")]
#[derive(Default)]
struct PyVectorIndex {
    inner: index::VectorIndex,
}

#[pymethods]
impl PyVectorIndex {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: index::VectorIndex::load(path).map_err(value_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(value_err)
    }

    fn add(&mut self, chunk: &Bound<'_, PyAny>, vector: Vec<f32>) -> PyResult<()> {
        let chunk: Chunk = depythonize(chunk)?;
        self.inner.add(chunk, vector).map_err(value_err)
    }

    fn remove_article(&mut self, ref_id: &str) -> usize {
        self.inner.remove_article(ref_id)
    }

    #[pyo3(signature = (vector, k, ref_id=None))]
    fn search<'py>(&self, py: Python<'py>, vector: Vec<f32>, k: usize, ref_id: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let hits = self.inner.search(&vector, k, ref_id).map_err(value_err)?;
        Ok(pythonize(py, &hits)?)
    }

    #[getter]
    fn dimension(&self) -> Option<usize> {
        self.inner.dimension()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Equilibrium CO conversion (fraction) for a feed at `temperature_c`.
/// Nitrogen makes up the balance.
#[pyfunction]
#[pyo3(signature = (temperature_c, y_co, y_h2o, y_co2=0.0, y_h2=0.0))]
fn equilibrium_conversion<'py>(
    py: Python<'py>,
    temperature_c: f64,
    y_co: f64,
    y_h2o: f64,
    y_co2: f64,
    y_h2: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let feed = FeedComposition::with_n2_balance(y_co, y_h2o, y_co2, y_h2);
    let r = thermo::equilibrium_conversion_celsius(&feed, temperature_c).map_err(value_err)?;
    Ok(pythonize(py, &r)?)
}

#[pyfunction]
fn equilibrium_constant(t_k: f64) -> PyResult<f64> {
    thermo::equilibrium_constant(t_k).map_err(value_err)
}

/// Parses a DSL query and returns its canonical form.
#[pyfunction]
fn parse_dsl(text: &str) -> PyResult<String> {
    Ok(query::parse_dsl(text).map_err(value_err)?.render())
}

/// Runs a DSL query over the manifest in `corpus_dir`.
#[pyfunction]
fn run_query<'py>(py: Python<'py>, dsl: &str, corpus_dir: &str) -> PyResult<Bound<'py, PyAny>> {
    let plan = query::parse_dsl(dsl).map_err(value_err)?;
    let corpus = Corpus::open(corpus_dir).map_err(value_err)?;
    Ok(pythonize(py, &query::execute(&plan, corpus.articles()))?)
}

#[pyfunction]
#[pyo3(signature = (ref_id, text, size=corpus::DEFAULT_CHUNK_SIZE, overlap=corpus::DEFAULT_CHUNK_OVERLAP))]
fn chunk_document<'py>(py: Python<'py>, ref_id: &str, text: &str, size: usize, overlap: usize) -> PyResult<Bound<'py, PyAny>> {
    let chunks = corpus::chunk_document(ref_id, text, size, overlap).map_err(value_err)?;
    Ok(pythonize(py, &chunks)?)
}

/// Feature kind the default rules pick for `query`.
#[pyfunction]
#[pyo3(signature = (query, known_refs, active_article=None))]
fn route(query: &str, known_refs: Vec<String>, active_article: Option<String>) -> PyResult<String> {
    let router = QueryRouter::new(RuleSet::default(), known_refs);
    let state = SessionState { active_article, ..Default::default() };
    Ok(router.route(query, &state).map_err(value_err)?.kind.as_str().to_string())
}

/// Bag-of-words embedding used by the mock backend.
#[pyfunction]
#[pyo3(signature = (text, dim=llm::mock::DEFAULT_MOCK_DIM))]
fn mock_embedding(text: &str, dim: usize) -> Vec<f32> {
    llm::mock_embedding(text, dim)
}

/// Runs the inverse search with the reference surrogate and returns the
/// structured report (no narrative).
#[pyfunction]
#[pyo3(signature = (settings, swarm_size=40, max_iters=300, seed=42))]
fn solve_inverse<'py>(
    py: Python<'py>,
    settings: &Bound<'py, PyAny>,
    swarm_size: usize,
    max_iters: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let settings: ParameterSettings = depythonize(settings)?;
    let catalog = Catalog::default();
    let sur = surrogate::Surrogate::new(surrogate::reference_bundle(&catalog)).map_err(value_err)?;
    let cfg = PsoConfig { swarm_size, max_iters, seed, ..Default::default() };
    let solution = py.allow_threads(|| inverse::solve(&settings, &catalog, &sur, &cfg, None)).map_err(value_err)?;
    Ok(pythonize(py, &report::structured_report(&solution, &catalog))?)
}

#[pymodule]
fn acewgs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySurrogate>()?;
    m.add_class::<PyVectorIndex>()?;
    m.add_function(wrap_pyfunction!(equilibrium_conversion, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_constant, m)?)?;
    m.add_function(wrap_pyfunction!(parse_dsl, m)?)?;
    m.add_function(wrap_pyfunction!(run_query, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_document, m)?)?;
    m.add_function(wrap_pyfunction!(route, m)?)?;
    m.add_function(wrap_pyfunction!(mock_embedding, m)?)?;
    m.add_function(wrap_pyfunction!(solve_inverse, m)?)?;
    Ok(())
}
