//! Python bindings. Results cross the boundary as plain Python objects
//! decoded from the same JSON the HTTP API serves.

use asthmon_core::report::{render_cohort, ReportFormat, ReportOptions};
use asthmon_core::simulator::{generate_cohort, CohortSpec};
use asthmon_core::{AnalysisConfig, PatientId, PatientProfile, Platform, PlatformError, Season, Stream, StoreError};
use chrono::NaiveDate;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

create_exception!(asthmon, AsthmonError, PyException);
create_exception!(asthmon, ConfigError, AsthmonError);
create_exception!(asthmon, DataError, AsthmonError);
create_exception!(asthmon, StorageUnavailable, AsthmonError);

fn to_py_err(e: PlatformError) -> PyErr {
    match e {
        PlatformError::Config(m) => ConfigError::new_err(m),
        PlatformError::Store(StoreError::StorageUnavailable(m)) => StorageUnavailable::new_err(m),
        other => DataError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err: std::fmt::Display>>(s: &str) -> PyResult<T> {
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

/// Store plus analytics, either in memory or backed by an NDJSON journal.
#[pyclass(name = "Platform", module = "asthmon", frozen)]
struct PyPlatform {
    inner: Platform,
}

#[pymethods]
impl PyPlatform {
    /// `config` is the TOML body of an analysis config; omitted keys take
    /// their defaults.
    #[new]
    #[pyo3(signature = (path=None, config=None))]
    fn new(path: Option<std::path::PathBuf>, config: Option<&str>) -> PyResult<Self> {
        let cfg: AnalysisConfig = match config {
            Some(text) => toml::from_str(text).map_err(|e| ConfigError::new_err(e.to_string()))?,
            None => AnalysisConfig::default(),
        };
        let inner = match path {
            Some(p) => Platform::open(p, cfg),
            None => Platform::in_memory(cfg),
        }
        .map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Registers patient profiles given as NDJSON. Returns how many.
    fn register_patients(&self, ndjson: &str) -> PyResult<usize> {
        let profiles = ndjson
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<PatientProfile>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DataError::new_err(e.to_string()))?;
        let n = profiles.len();
        self.inner.store().register_patients(profiles).map_err(|e| to_py_err(e.into()))?;
        Ok(n)
    }

    /// Imports canonical observation NDJSON. Returns counts and the indices
    /// of rejected lines.
    fn ingest<'py>(&self, py: Python<'py>, ndjson: &str) -> PyResult<Bound<'py, PyDict>> {
        let (report, rejected) =
            py.detach(|| self.inner.store().import_ndjson(ndjson)).map_err(|e| to_py_err(e.into()))?;
        let out = PyDict::new(py);
        out.set_item("stored", report.stored)?;
        out.set_item("duplicates", report.duplicates)?;
        out.set_item("conflicts", report.conflicts)?;
        let rejected: Vec<(usize, String)> = rejected.into_iter().map(|(i, r)| (i, r.to_string())).collect();
        out.set_item("rejected", rejected)?;
        Ok(out)
    }

    fn __len__(&self) -> usize {
        self.inner.store().read().len()
    }

    fn patients<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.patients())
    }

    fn summary<'py>(&self, py: Python<'py>, patient_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let v = py.detach(|| self.inner.summary(&PatientId::new(patient_id))).map_err(to_py_err)?;
        to_py(py, &v)
    }

    fn episodes<'py>(&self, py: Python<'py>, patient_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let v = py.detach(|| self.inner.episodes(&PatientId::new(patient_id))).map_err(to_py_err)?;
        to_py(py, &v)
    }

    #[pyo3(signature = (patient_id, start=None, end=None))]
    fn timeline<'py>(
        &self,
        py: Python<'py>,
        patient_id: &str,
        start: Option<NaiveDate>,
        end: Option<NaiveDate>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = py.detach(|| self.inner.timeline_view(&PatientId::new(patient_id), start, end)).map_err(to_py_err)?;
        to_py(py, &v)
    }

    /// Learning and prediction reports; the default split when
    /// `learning_end` is omitted.
    #[pyo3(signature = (patient_id, learning_end=None))]
    fn triggers<'py>(
        &self,
        py: Python<'py>,
        patient_id: &str,
        learning_end: Option<NaiveDate>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = py.detach(|| self.inner.triggers(&PatientId::new(patient_id), learning_end)).map_err(to_py_err)?;
        to_py(py, &v)
    }

    #[pyo3(signature = (patient_id, format="markdown", learning_end=None))]
    fn report(&self, py: Python<'_>, patient_id: &str, format: &str, learning_end: Option<NaiveDate>) -> PyResult<String> {
        let format: ReportFormat = parse(format)?;
        let options = ReportOptions { learning_end, ..ReportOptions::default() };
        py.detach(|| self.inner.report(&PatientId::new(patient_id), &options))
            .map(|r| r.render(format))
            .map_err(to_py_err)
    }

    fn cohort<'py>(&self, py: Python<'py>, season: &str) -> PyResult<Bound<'py, PyAny>> {
        let season: Season = parse(season)?;
        let v = py.detach(|| self.inner.cohort(season)).map_err(to_py_err)?;
        to_py(py, &v)
    }

    #[pyo3(signature = (season, format="markdown"))]
    fn cohort_report(&self, py: Python<'_>, season: &str, format: &str) -> PyResult<String> {
        let season: Season = parse(season)?;
        let format: ReportFormat = parse(format)?;
        let summary = py.detach(|| self.inner.cohort(season)).map_err(to_py_err)?;
        Ok(render_cohort(&summary, format))
    }

    /// Evaluates and stores the alerts for `date`.
    fn run_alerts<'py>(&self, py: Python<'py>, date: NaiveDate) -> PyResult<Bound<'py, PyAny>> {
        let v = py.detach(|| self.inner.run_alerts(date)).map_err(to_py_err)?;
        to_py(py, &v)
    }

    #[pyo3(signature = (patient_id=None, start=None, end=None))]
    fn alerts<'py>(
        &self,
        py: Python<'py>,
        patient_id: Option<&str>,
        start: Option<NaiveDate>,
        end: Option<NaiveDate>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let patient = patient_id.map(PatientId::new);
        to_py(py, &self.inner.alerts(patient.as_ref(), start, end))
    }

    /// Canonical NDJSON of all observations, or of one stream.
    #[pyo3(signature = (stream=None))]
    fn export(&self, stream: Option<&str>) -> PyResult<String> {
        let stream: Option<Stream> = stream.map(parse).transpose()?;
        let state = self.inner.store().read();
        Ok(match stream {
            Some(s) => state.export_stream(s),
            None => state.observations_ndjson(),
        })
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.config())
    }
}

/// Generates a synthetic cohort. Returns a dict with `patients` and
/// `observations` as NDJSON and `truth` as the planted parameters.
#[pyfunction]
#[pyo3(signature = (season, patients, seed, days=None))]
fn simulate<'py>(py: Python<'py>, season: &str, patients: usize, seed: u64, days: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let season: Season = parse(season)?;
    if patients == 0 || days == Some(0) {
        return Err(PyValueError::new_err("patients and days must be positive"));
    }
    let mut spec = CohortSpec::new(season, patients, seed);
    if let Some(d) = days {
        spec.deployment_days = d;
    }
    let cfg = AnalysisConfig::default();
    let cohort = py.detach(|| generate_cohort(&spec, &cfg.seasons, &cfg.healthy));
    let out = PyDict::new(py);
    let profiles: String = cohort
        .profiles()
        .iter()
        .map(|p| serde_json::to_string(p).expect("profile serializes") + "\n")
        .collect();
    let observations: String = cohort.observations().iter().map(|o| o.to_json_line() + "\n").collect();
    out.set_item("patients", profiles)?;
    out.set_item("observations", observations)?;
    out.set_item("truth", to_py(py, &cohort.patients)?)?;
    Ok(out)
}

#[pymodule]
fn asthmon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyPlatform>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("AsthmonError", py.get_type::<AsthmonError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("StorageUnavailable", py.get_type::<StorageUnavailable>())?;
    Ok(())
}
