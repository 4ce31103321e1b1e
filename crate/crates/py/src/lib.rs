//! Python bindings for `pfc_core`.
//!
//! Scenarios are built from the standard preset or a config string and edited
//! with dotted paths; `simulate` returns a `Trace` whose columns come back as
//! plain lists.

use std::collections::HashMap;
use std::path::PathBuf;

use pfc_core::metrics::{self, Window};
use pfc_core::plant::PlantParams;
use pfc_core::scenario::{self, Scenario};
use pfc_core::sim_engine::{self, Trace, TRACE_COLUMNS};
use pfc_core::steady_state;
use pfc_core::PfcError;
use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: PfcError) -> PyErr {
    match e {
        PfcError::Io(_) => PyIOError::new_err(e.to_string()),
        PfcError::NumericalAbort { .. } => PyRuntimeError::new_err(e.to_string()),
        PfcError::UnknownPath(_) => PyKeyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "PlantParams", from_py_object)]
#[derive(Clone)]
struct PyPlantParams {
    inner: PlantParams,
}

#[pymethods]
impl PyPlantParams {
    #[new]
    fn new() -> Self {
        Self { inner: PlantParams::nominal() }
    }

    #[staticmethod]
    fn nominal() -> Self {
        Self { inner: PlantParams::nominal() }
    }

    /// Nominal rig with `r = 0` and no current limiter.
    #[staticmethod]
    fn ideal() -> Self {
        Self { inner: PlantParams::ideal() }
    }

    #[getter]
    fn inductance(&self) -> f64 {
        self.inner.inductance
    }
    #[setter]
    fn set_inductance(&mut self, x: f64) {
        self.inner.inductance = x;
    }
    #[getter]
    fn capacitance(&self) -> f64 {
        self.inner.capacitance
    }
    #[setter]
    fn set_capacitance(&mut self, x: f64) {
        self.inner.capacitance = x;
    }
    #[getter]
    fn conductance(&self) -> f64 {
        self.inner.conductance
    }
    #[setter]
    fn set_conductance(&mut self, x: f64) {
        self.inner.conductance = x;
    }
    #[getter]
    fn source_resistance(&self) -> f64 {
        self.inner.source_resistance
    }
    #[setter]
    fn set_source_resistance(&mut self, x: f64) {
        self.inner.source_resistance = x;
    }
    #[getter]
    fn source_amplitude(&self) -> f64 {
        self.inner.source_amplitude
    }
    #[setter]
    fn set_source_amplitude(&mut self, x: f64) {
        self.inner.source_amplitude = x;
    }
    #[getter]
    fn omega(&self) -> f64 {
        self.inner.omega
    }
    #[setter]
    fn set_omega(&mut self, x: f64) {
        self.inner.omega = x;
    }
    #[getter]
    fn source_phase(&self) -> f64 {
        self.inner.source_phase
    }
    #[setter]
    fn set_source_phase(&mut self, x: f64) {
        self.inner.source_phase = x;
    }
    #[getter]
    fn current_limit(&self) -> Option<f64> {
        self.inner.current_limit
    }
    #[setter]
    fn set_current_limit(&mut self, x: Option<f64>) {
        self.inner.current_limit = x;
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn standard() -> Self {
        Self { inner: scenario::standard_scenario() }
    }

    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        Scenario::from_config_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Scenario::from_config_file(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Set a parameter by dotted path, e.g. `plant.E` or `controller.k`.
    /// Accepts numbers, `"none"` and the `name`/`mode` strings.
    fn set(&mut self, path: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let r = if let Ok(x) = value.extract::<f64>() {
            self.inner.set_number(path, x)
        } else {
            self.inner.set(path, &value.extract::<String>()?)
        };
        r.map_err(to_py)
    }

    /// Append a step event; events are kept sorted by time.
    fn add_event(&mut self, time: f64, path: &str, value: f64) -> PyResult<()> {
        self.inner.events.push(sim_engine::Event { time, path: path.to_string(), value });
        self.inner.events.sort_by(|a, b| a.time.total_cmp(&b.time));
        self.inner.validate().map_err(to_py)
    }

    fn clear_events(&mut self) {
        self.inner.events.clear();
    }

    fn events(&self) -> Vec<(f64, String, f64)> {
        self.inner.events.iter().map(|e| (e.time, e.path.clone(), e.value)).collect()
    }

    fn to_config(&self) -> String {
        self.inner.to_config_string()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }
    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.label()
    }
    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }
    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }
    #[getter]
    fn plant(&self) -> PyPlantParams {
        PyPlantParams { inner: self.inner.plant }
    }
    #[setter]
    fn set_plant(&mut self, p: PyPlantParams) {
        self.inner.plant = p.inner;
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, mode={}, duration={}, dt={})",
            self.inner.name,
            self.inner.mode.label(),
            self.inner.duration,
            self.inner.dt
        )
    }
}

#[pyclass(name = "Trace", from_py_object)]
#[derive(Clone)]
struct PyTrace {
    inner: Trace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Trace::read_csv_file(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv_file(&path).map_err(to_py)
    }

    #[staticmethod]
    fn column_names() -> Vec<&'static str> {
        TRACE_COLUMNS[..TRACE_COLUMNS.len() - 1].to_vec()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let idx = TRACE_COLUMNS[..TRACE_COLUMNS.len() - 1]
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| PyKeyError::new_err(format!("no trace column `{name}`")))?;
        Ok(self.inner.column(|r| r.values()[idx]))
    }

    /// All numeric columns keyed by name.
    fn columns(&self) -> HashMap<&'static str, Vec<f64>> {
        let mut out: HashMap<&'static str, Vec<f64>> = HashMap::new();
        for row in &self.inner.rows {
            for (name, x) in TRACE_COLUMNS.iter().zip(row.values()) {
                out.entry(name).or_default().push(x);
            }
        }
        out
    }

    #[getter]
    fn scenario(&self) -> String {
        self.inner.scenario.clone()
    }
    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.label()
    }
    #[getter]
    fn aborted_at(&self) -> Option<f64> {
        self.inner.aborted_at
    }

    fn stats(&self) -> HashMap<&'static str, u64> {
        let s = self.inner.stats;
        HashMap::from([
            ("steps", s.steps),
            ("saturation_steps", s.saturation_steps),
            ("current_limit_steps", s.current_limit_steps),
            ("guard_steps", s.guard_steps),
            ("phase_indeterminate_steps", s.phase_indeterminate_steps),
        ])
    }

    /// Displacement, THD, power factor and DC error over `[start, end]`.
    fn harmonic_report(&self, start: f64, end: f64, v_d: f64) -> PyResult<HashMap<&'static str, f64>> {
        let r = metrics::harmonic_report(&self.inner, Window::new(start, end), v_d).map_err(to_py)?;
        Ok(HashMap::from([
            ("displacement_deg", r.displacement_deg),
            ("thd_pct", r.thd_pct),
            ("power_factor", r.power_factor),
            ("dc_error", r.dc_error),
            ("current_amplitude", r.current_fundamental.amplitude),
            ("current_phase", r.current_fundamental.phase),
            ("voltage_amplitude", r.voltage_fundamental.amplitude),
            ("voltage_phase", r.voltage_fundamental.phase),
        ]))
    }

    /// One metrics row per default window of `scenario`.
    #[pyo3(signature = (scenario, periods = 2))]
    fn summary(&self, scenario: &PyScenario, periods: usize) -> PyResult<Vec<HashMap<&'static str, Py<PyAny>>>> {
        let rows = metrics::summarize(&self.inner, &scenario.inner, periods).map_err(to_py)?;
        Python::attach(|py| {
            rows.into_iter()
                .map(|r| {
                    Ok(HashMap::from([
                        ("scenario", r.scenario.into_pyobject(py)?.into_any().unbind()),
                        ("controller", r.controller.into_pyobject(py)?.into_any().unbind()),
                        ("window_start", r.window_start.into_pyobject(py)?.into_any().unbind()),
                        ("displacement_deg", r.displacement_deg.into_pyobject(py)?.into_any().unbind()),
                        ("thd_pct", r.thd_pct.into_pyobject(py)?.into_any().unbind()),
                        ("power_factor", r.power_factor.into_pyobject(py)?.into_any().unbind()),
                        ("dc_error_V", r.dc_error_v.into_pyobject(py)?.into_any().unbind()),
                    ]))
                })
                .collect()
        })
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }
}

/// Integrate a scenario. A non-finite state raises `RuntimeError`.
#[pyfunction]
fn simulate(py: Python<'_>, scenario: &PyScenario) -> PyResult<PyTrace> {
    let sc = scenario.inner.clone();
    py.detach(move || sim_engine::simulate(&sc)).map(|inner| PyTrace { inner }).map_err(to_py)
}

#[pyfunction]
fn minimum_current(params: &PyPlantParams, v_d: f64) -> f64 {
    steady_state::minimum_current(&params.inner, v_d)
}

#[pyfunction]
fn required_current(delta_rho: f64, params: &PyPlantParams, v_d: f64) -> PyResult<f64> {
    steady_state::required_current(delta_rho, &params.inner, v_d).map_err(to_py)
}

#[pyfunction]
fn harmonic_ratio(delta_rho: f64, params: &PyPlantParams, v_d: f64) -> PyResult<f64> {
    steady_state::harmonic_ratio(delta_rho, &params.inner, v_d).map_err(to_py)
}

#[pyfunction]
fn lagging_benefit(delta_rho: f64, params: &PyPlantParams, i0: f64) -> bool {
    steady_state::lagging_benefit(delta_rho, &params.inner, i0)
}

#[pyfunction]
#[pyo3(signature = (params, v_d, hi = steady_state::SWEEP_DELTA_RHO_BOUNDS.1))]
fn lagging_boundary(params: &PyPlantParams, v_d: f64, hi: f64) -> PyResult<Option<f64>> {
    steady_state::lagging_boundary(&params.inner, v_d, hi).map_err(to_py)
}

/// Steady-state output of a current with amplitude `i_s` lagging by `delta_rho`.
#[pyfunction]
fn phase_shift_analysis(delta_rho: f64, i_s: f64, params: &PyPlantParams) -> PyResult<HashMap<&'static str, f64>> {
    let a = steady_state::PhaseShiftAnalysis::new(delta_rho, i_s, &params.inner).map_err(to_py)?;
    Ok(HashMap::from([
        ("d1", a.d1),
        ("d2", a.d2),
        ("harmonic_amplitude", a.harmonic_amplitude),
        ("harmonic_phase", a.harmonic_phase),
        ("dc_voltage", a.dc_voltage),
    ]))
}

#[pyfunction]
fn static_law_steady_state(k: f64, params: &PyPlantParams, v_d: f64) -> PyResult<HashMap<&'static str, f64>> {
    let s = steady_state::static_law_steady_state(k, &params.inner, v_d).map_err(to_py)?;
    Ok(HashMap::from([
        ("hbar", s.hbar),
        ("current_amplitude", s.current_amplitude),
        ("phase_lag", s.phase_lag),
        ("dc_voltage", s.dc_voltage),
    ]))
}

/// `(delta_rho, E, ratio)` over the grid, row-major in `delta_rho`.
#[pyfunction]
fn ratio_sweep(
    py: Python<'_>,
    delta_rho: Vec<f64>,
    amplitude: Vec<f64>,
    params: &PyPlantParams,
    v_d: f64,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let p = params.inner;
    let cells = py.detach(move || steady_state::ratio_sweep(&delta_rho, &amplitude, &p, v_d)).map_err(to_py)?;
    Ok(cells.into_iter().map(|c| (c.delta_rho, c.source_amplitude, c.ratio)).collect())
}

#[pymodule]
fn sensorless_pfc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPlantParams>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(minimum_current, m)?)?;
    m.add_function(wrap_pyfunction!(required_current, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(lagging_benefit, m)?)?;
    m.add_function(wrap_pyfunction!(lagging_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(phase_shift_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(static_law_steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_sweep, m)?)?;
    Ok(())
}
