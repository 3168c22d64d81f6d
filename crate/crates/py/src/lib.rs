//! Python bindings for the fault-localisation core.
//!
//! Predictions cross the boundary as plain dicts built from their JSON
//! form.

use faultloc::cluster::{self, KDistanceCurve, Label};
use faultloc::ingest::{assemble_context, format_timestamp, ContextConfig};
use faultloc::optimize::OptimizerConfig;
use faultloc::run::predict_auto;
use faultloc::synth::{self, ScenarioSpec};
use faultloc::DbscanParams;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, text: serde_json::Result<String>) -> PyResult<Py<PyAny>> {
    let text = text.map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "GeoPoint", frozen, eq, from_py_object, module = "faultloc_py")]
#[derive(Clone, Copy, PartialEq)]
pub struct PyGeoPoint(faultloc::GeoPoint);

#[pymethods]
impl PyGeoPoint {
    #[new]
    fn new(lat: f64, lon: f64) -> PyResult<Self> {
        faultloc::GeoPoint::new(lat, lon).map(Self).map_err(value_err)
    }

    #[getter]
    fn lat(&self) -> f64 {
        self.0.lat_deg()
    }

    #[getter]
    fn lon(&self) -> f64 {
        self.0.lon_deg()
    }

    fn distance_to(&self, other: &PyGeoPoint) -> f64 {
        faultloc::haversine_m(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        format!("GeoPoint(lat={}, lon={})", self.0.lat_deg(), self.0.lon_deg())
    }
}

fn unwrap_points(points: Vec<PyGeoPoint>) -> Vec<faultloc::GeoPoint> {
    points.into_iter().map(|p| p.0).collect()
}

/// Great-circle distance in metres.
#[pyfunction]
fn haversine_m(a: &PyGeoPoint, b: &PyGeoPoint) -> f64 {
    faultloc::haversine_m(&a.0, &b.0)
}

#[pyfunction]
fn spherical_centroid(points: Vec<PyGeoPoint>) -> PyResult<PyGeoPoint> {
    faultloc::spherical_centroid(&unwrap_points(points)).map(PyGeoPoint).map_err(value_err)
}

/// Cluster labels per point; noise is -1.
#[pyfunction]
fn dbscan(points: Vec<PyGeoPoint>, eps_m: f64, min_pts: usize) -> PyResult<Vec<i64>> {
    let params = DbscanParams::new(eps_m, min_pts).map_err(value_err)?;
    let assignment = faultloc::dbscan(&unwrap_points(points), params);
    Ok(assignment
        .labels
        .iter()
        .map(|l| match l {
            Label::Noise => -1,
            Label::Cluster(c) => i64::from(*c),
        })
        .collect())
}

/// Ascending k-th-neighbour distances.
#[pyfunction]
fn k_distance_curve(points: Vec<PyGeoPoint>, k: usize) -> PyResult<Vec<f64>> {
    cluster::k_distance_curve(&unwrap_points(points), k)
        .map(|c| c.sorted_dists_m)
        .map_err(value_err)
}

#[pyfunction]
fn detect_elbow(sorted_dists_m: Vec<f64>, k: usize) -> PyResult<f64> {
    cluster::detect_elbow(&KDistanceCurve { k, sorted_dists_m }).map_err(value_err)
}

#[pyfunction]
fn derive_seed(master_seed: u64, index: usize) -> u64 {
    synth::derive_seed(master_seed, index)
}

/// A generated outage with its pings, assets and true fault location.
#[pyclass(name = "Scenario", frozen, module = "faultloc_py")]
pub struct PyScenario(synth::Scenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    #[pyo3(signature = (seed, n_crew = 2, n_noise_vehicles = 5, gps_sigma_m = 10.0))]
    fn generate(seed: u64, n_crew: usize, n_noise_vehicles: usize, gps_sigma_m: f64) -> PyResult<Self> {
        let spec = ScenarioSpec {
            n_crew,
            n_noise_vehicles,
            gps_sigma_m,
            ..ScenarioSpec::default()
        };
        spec.validate().map_err(PyValueError::new_err)?;
        Ok(Self(synth::generate_scenario(&spec, seed)))
    }

    #[getter]
    fn outage_id(&self) -> String {
        self.0.outage.outage_id.clone()
    }

    #[getter]
    fn reported_location(&self) -> PyGeoPoint {
        PyGeoPoint(self.0.outage.reported_location)
    }

    #[getter]
    fn true_location(&self) -> PyGeoPoint {
        PyGeoPoint(self.0.truth.true_location)
    }

    fn __len__(&self) -> usize {
        self.0.pings.len()
    }

    /// `(vehicle_id, time_utc, lat, lon)` tuples.
    fn pings(&self) -> Vec<(String, String, f64, f64)> {
        self.0
            .pings
            .iter()
            .map(|p| {
                (
                    p.vehicle_id.clone(),
                    format_timestamp(&p.time),
                    p.position.lat_deg(),
                    p.position.lon_deg(),
                )
            })
            .collect()
    }

    /// Runs the parameter search on this outage and returns the prediction
    /// as a dict. Raises RuntimeError when no prediction is possible.
    #[pyo3(signature = (seed = 0))]
    fn predict(&self, py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
        let s = &self.0;
        let context = assemble_context(&s.outage, &s.pings, &s.assets, &ContextConfig::default()).map_err(value_err)?;
        let cfg = OptimizerConfig {
            seed,
            ..OptimizerConfig::default()
        };
        let out = py.detach(|| predict_auto(&context, &cfg));
        match out.result {
            Ok(p) => json_to_py(py, serde_json::to_string(&p)),
            Err(e) => Err(PyRuntimeError::new_err(e.reason())),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (n, master_seed = 0))]
fn generate_suite(n: usize, master_seed: u64) -> Vec<PyScenario> {
    synth::generate_suite(n, &ScenarioSpec::default(), master_seed)
        .into_iter()
        .map(PyScenario)
        .collect()
}

#[pymodule]
fn faultloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeoPoint>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_centroid, m)?)?;
    m.add_function(wrap_pyfunction!(dbscan, m)?)?;
    m.add_function(wrap_pyfunction!(k_distance_curve, m)?)?;
    m.add_function(wrap_pyfunction!(detect_elbow, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(generate_suite, m)?)?;
    Ok(())
}
