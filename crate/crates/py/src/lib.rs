//! Python bindings for the snow-drought index.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use snodri::config::PipelineConfig;
use snodri::encoder::{encode_rows, TrainedEncoder};
use snodri::featsel::{
    forest_importance as rf_importance, train_forest, ForestHyperparams, ImportanceVector,
};
use snodri::index::{compose_index as compose, IndexSeries};
use snodri::io::{basin_to_csv, read_file};
use snodri::mi::{joint_histogram, mutual_information as mi, WeightVector};
use snodri::pipeline::{pipeline_run, read_model};
use snodri::snowpart::{self, SigmoidParams};
use snodri::spi::compute_spi;
use snodri::synth::{generate_synthetic_basin, DroughtWinter, SynthConfig};
use snodri::timeseries::{DesignMatrix, MonthStamp, MonthlySeries, ZScoreParams};
use snodri::{Error, ErrorKind};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    if matches!(e, Error::Io { .. }) {
        return PyOSError::new_err(msg);
    }
    match e.kind() {
        ErrorKind::Numeric => PyArithmeticError::new_err(msg),
        ErrorKind::Config | ErrorKind::Data => PyValueError::new_err(msg),
    }
}

fn month(s: &str) -> PyResult<MonthStamp> {
    s.parse().map_err(py_err)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((rows.len(), d), rows.concat())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Wet-bulb temperature (K) from air temperature (K), specific humidity
/// (kg/kg) and pressure (Pa).
#[pyfunction]
fn wet_bulb_temperature(t_air: f64, q: f64, p: f64) -> PyResult<f64> {
    snowpart::wet_bulb_temperature(t_air, q, p).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (tw, midpoint_tw = 273.65, steepness = 1.2))]
fn snow_fraction(tw: f64, midpoint_tw: f64, steepness: f64) -> PyResult<f64> {
    let params = SigmoidParams::new(midpoint_tw, steepness).map_err(py_err)?;
    Ok(snowpart::snow_fraction(tw, &params))
}

/// SPI-k of a monthly precipitation record starting at `start` (`YYYY-MM`),
/// fitted on the whole record. Undefined months are NaN.
#[pyfunction]
fn spi(precip: Vec<f64>, start: &str, k: usize) -> PyResult<Vec<f64>> {
    let series = MonthlySeries::new("APCP", "mm", month(start)?, precip);
    Ok(compute_spi(&series, k).map_err(py_err)?.values().to_vec())
}

/// Histogram mutual information in nats.
#[pyfunction]
fn mutual_information(x: Vec<f64>, y: Vec<f64>, bins: usize) -> PyResult<f64> {
    Ok(mi(&joint_histogram(&x, &y, bins).map_err(py_err)?))
}

/// Normalized random-forest impurity importances, keyed by feature id.
#[pyfunction]
#[pyo3(signature = (x, y, feature_ids, seed = 0, n_trees = 200))]
fn forest_importance(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    feature_ids: Vec<String>,
    seed: u64,
    n_trees: usize,
) -> PyResult<BTreeMap<String, f64>> {
    let hp = ForestHyperparams {
        n_trees,
        seed,
        ..Default::default()
    };
    let forest = train_forest(&matrix(&x)?, &y, &feature_ids, &hp).map_err(py_err)?;
    let imp = rf_importance(&forest);
    Ok(imp.feature_ids.into_iter().zip(imp.importances).collect())
}

/// Union of the top-k features of two importance vectors over the same ids.
#[pyfunction]
fn select_features(
    feature_ids: Vec<String>,
    swe: Vec<f64>,
    discharge: Vec<f64>,
    k: usize,
) -> PyResult<Vec<String>> {
    let a = ImportanceVector::new(feature_ids.clone(), swe).map_err(py_err)?;
    let b = ImportanceVector::new(feature_ids, discharge).map_err(py_err)?;
    snodri::featsel::select_features(&a, &b, k).map_err(py_err)
}

/// Index values for already standardized rows; standardized over all rows.
#[pyfunction]
fn compose_index(
    rows: Vec<Vec<f64>>,
    column_ids: Vec<String>,
    weights: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let values = matrix(&rows)?;
    let d = values.ncols();
    let z = DesignMatrix {
        start: MonthStamp::new(2000, 1).map_err(py_err)?,
        column_ids: column_ids.clone(),
        values,
        params: vec![ZScoreParams::new(0.0, 1.0).map_err(py_err)?; d],
    };
    let w = WeightVector::new(column_ids, weights).map_err(py_err)?;
    Ok(compose(&z, &w, None).map_err(py_err)?.values)
}

/// Synthetic basin as CSV text, plus the drought mask CSV.
#[pyfunction]
#[pyo3(signature = (seed, years = 30, droughts = Vec::new(), basin_id = "synthetic".to_string(), start_year = 1981))]
fn synthetic_basin(
    seed: u64,
    years: usize,
    droughts: Vec<(i32, f64)>,
    basin_id: String,
    start_year: i32,
) -> PyResult<(String, String)> {
    let cfg = SynthConfig {
        basin_id,
        start_year,
        n_years: years,
        seed,
        drought_winters: droughts
            .into_iter()
            .map(|(year, severity)| DroughtWinter { year, severity })
            .collect(),
        ..Default::default()
    };
    let (table, mask) = generate_synthetic_basin(&cfg).map_err(py_err)?;
    Ok((basin_to_csv(&table, None), mask.to_csv()))
}

/// `(start, values)` of an index CSV.
#[pyfunction]
fn read_index(path: PathBuf) -> PyResult<(String, Vec<f64>)> {
    let idx = IndexSeries::from_csv(&read_file(&path).map_err(py_err)?).map_err(py_err)?;
    Ok((idx.start.to_string(), idx.values))
}

/// A validated pipeline config.
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig {
            inner: PipelineConfig::load(&path, &overrides).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, overrides = Vec::new(), base_dir = None))]
    fn from_toml(text: &str, overrides: Vec<String>, base_dir: Option<PathBuf>) -> PyResult<Self> {
        Ok(PyConfig {
            inner: PipelineConfig::from_toml_str(text, &overrides, base_dir.as_deref())
                .map_err(py_err)?,
        })
    }

    #[getter]
    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    /// Run every stage; returns artifact paths keyed by kind.
    fn run(&self, py: Python<'_>) -> PyResult<BTreeMap<String, Vec<PathBuf>>> {
        let cfg = self.inner.clone();
        let art = py.detach(move || pipeline_run(&cfg)).map_err(py_err)?;
        Ok(BTreeMap::from([
            ("config".to_string(), vec![art.config]),
            ("features".to_string(), vec![art.features]),
            ("model".to_string(), vec![art.model]),
            ("weights".to_string(), vec![art.weights]),
            ("index".to_string(), art.index),
            ("evaluation".to_string(), art.evaluation),
            ("plot".to_string(), art.plots),
        ]))
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(hash={}, seed={})",
            &self.inner.short_hash(),
            self.inner.seed
        )
    }
}

/// A trained autoencoder loaded from a model file.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: TrainedEncoder,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: read_model(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn column_ids(&self) -> Vec<String> {
        self.inner.column_ids.clone()
    }

    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.inner.loss_history.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Bottleneck value of each standardized row.
    fn encode(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        encode_rows(&self.inner.weights, &matrix(&rows)?).map_err(py_err)
    }
}

#[pymodule]
fn snodri_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(wet_bulb_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(snow_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(spi, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(forest_importance, m)?)?;
    m.add_function(wrap_pyfunction!(select_features, m)?)?;
    m.add_function(wrap_pyfunction!(compose_index, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_basin, m)?)?;
    m.add_function(wrap_pyfunction!(read_index, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
