//! Python module `privgain`: datasets, release mechanisms, privacy games and the
//! experiment runner.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use privgain::data::{self, sample_toy_population, RangePolicy, SchemaMetadata, ToyPopulationConfig};
use privgain::experiment::{self, Level, RunOptions};
use privgain::features::{extract, FeatureSet};
use privgain::games::{outlier_scores, AdvantageEstimate};
use privgain::rng::rng_from_seed;
use privgain::sanitiser::{sanitise as sanitise_dataset, SanitiserConfig};
use privgain::synth::{fit_sample, ExternalOptions, GeneratorSpec};
use privgain::Error;

create_exception!(privgain, PrivgainError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::ConfigError { .. } => PyValueError::new_err(e.to_string()),
        other => PrivgainError::new_err(other.to_string()),
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "Schema", frozen)]
pub struct PySchema(Arc<SchemaMetadata>);

#[pymethods]
impl PySchema {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        SchemaMetadata::from_json_str(text).map(|s| PySchema(Arc::new(s))).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SchemaMetadata::from_json_file(path).map(|s| PySchema(Arc::new(s))).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    fn names(&self) -> Vec<String> {
        self.0.names().map(str::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Dataset", frozen)]
pub struct PyDataset(data::Dataset);

#[pymethods]
impl PyDataset {
    /// Read a CSV with a header row. Out-of-range values are an error unless `clamp`.
    #[staticmethod]
    #[pyo3(signature = (path, schema, clamp = false))]
    fn read_csv(path: PathBuf, schema: &PySchema, clamp: bool) -> PyResult<Self> {
        let policy = if clamp { RangePolicy::Clamp } else { RangePolicy::Reject };
        data::load_csv(path, schema.0.clone(), policy).map(PyDataset).map_err(err)
    }

    #[staticmethod]
    fn from_csv_string(text: &str, schema: &PySchema) -> PyResult<Self> {
        data::read_csv(text.as_bytes(), schema.0.clone(), RangePolicy::Reject).map(PyDataset).map_err(err)
    }

    /// Sample a toy population from a JSON spec.
    #[staticmethod]
    #[pyo3(signature = (spec, size, seed = 0))]
    fn toy(spec: &str, size: usize, seed: u64) -> PyResult<Self> {
        let cfg: ToyPopulationConfig = from_json(spec)?;
        sample_toy_population(&cfg, size, &mut rng_from_seed(seed)).map(PyDataset).map_err(err)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        data::save_csv(&self.0, path).map_err(err)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        data::write_csv(&self.0, &mut buf).map_err(err)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    #[getter]
    fn schema(&self) -> PySchema {
        PySchema(self.0.schema_arc().clone())
    }

    /// Numeric view of a column: category indices for categorical attributes.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let idx = self.0.schema().index_of(name).ok_or_else(|| PyValueError::new_err(format!("unknown attribute `{name}`")))?;
        Ok(self.0.records().iter().map(|r| r.get(idx).to_f64()).collect())
    }

    /// Summary features of the whole dataset: "naive", "hist" or "corr".
    fn features(&self, set: &str) -> PyResult<Vec<f64>> {
        let set: FeatureSet = serde_json::from_value(serde_json::Value::String(set.to_string())).map_err(|e| PyValueError::new_err(e.to_string()))?;
        extract(set, &self.0).map(|f| f.values).map_err(err)
    }

    fn outlier_scores(&self) -> Vec<usize> {
        outlier_scores(&self.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} rows, {} attributes)", self.0.len(), self.0.schema().len())
    }
}

/// Apply a sanitiser (JSON config) to a dataset.
#[pyfunction]
fn sanitise(py: Python<'_>, data: &PyDataset, config: &str) -> PyResult<PyDataset> {
    let cfg: SanitiserConfig = from_json(config)?;
    py.detach(|| sanitise_dataset(&data.0, &cfg)).map(PyDataset).map_err(err)
}

/// Fit a generator (JSON spec) and sample `m` records.
#[pyfunction]
#[pyo3(signature = (data, generator, m, seed = 0, metadata = None))]
fn synthesize(py: Python<'_>, data: &PyDataset, generator: &str, m: usize, seed: u64, metadata: Option<&PySchema>) -> PyResult<PyDataset> {
    let spec: GeneratorSpec = from_json(generator)?;
    spec.validate().map_err(err)?;
    let metadata = metadata.map_or_else(|| data.0.schema_arc().clone(), |s| s.0.clone());
    py.detach(|| fit_sample(&spec, &data.0, &metadata, m, &mut rng_from_seed(seed), &ExternalOptions::default()))
        .map(PyDataset)
        .map_err(err)
}

/// Linkage advantage and standard error from per-iteration success credits.
#[pyfunction]
fn linkage_advantage(s1: Vec<f64>, s0: Vec<f64>) -> PyResult<(f64, f64)> {
    let e = AdvantageEstimate::linkage(&s1, &s0).map_err(err)?;
    Ok((e.advantage, e.std_error))
}

#[pyfunction]
fn selection_probabilities(scores: Vec<f64>, sensitivity: f64, epsilon: f64) -> Vec<f64> {
    privgain::dp::selection_probabilities(&scores, sensitivity, epsilon)
}

#[pyfunction]
#[pyo3(signature = (scale, n, seed = 0))]
fn laplace(scale: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| privgain::dp::laplace_noise(scale, &mut rng).map_err(err)).collect()
}

/// Check an experiment file. Returns (level, path, message) triples.
#[pyfunction]
fn validate(path: PathBuf) -> Vec<(String, String, String)> {
    experiment::validate_config_file(path)
        .into_iter()
        .map(|d| {
            let level = match d.level {
                Level::Error => "error",
                Level::Warning => "warning",
            };
            (level.to_string(), d.path, d.message)
        })
        .collect()
}

/// Run an experiment file and write its outputs. Returns the report as a JSON
/// string, the exit code and the output directory.
#[pyfunction]
#[pyo3(signature = (path, seed = None, jobs = None, out = None))]
fn run_experiment(py: Python<'_>, path: PathBuf, seed: Option<u64>, jobs: Option<usize>, out: Option<PathBuf>) -> PyResult<(String, i32, String)> {
    let opts = RunOptions {
        jobs,
        keep_workdirs: false,
        seed,
        output_dir: out,
    };
    let (output, checks, dir) = py.detach(|| experiment::run_experiment(&path, &opts)).map_err(err)?;
    let mut code = output.exit_code();
    if code == 0 && checks.is_some_and(|c| c.iter().any(|c| !c.passed)) {
        code = 3;
    }
    Ok((output.report.to_json(), code, dir.display().to_string()))
}

#[pymodule]
#[pyo3(name = "privgain")]
fn privgain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PrivgainError", m.py().get_type::<PrivgainError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySchema>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(sanitise, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(linkage_advantage, m)?)?;
    m.add_function(wrap_pyfunction!(selection_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(laplace, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
