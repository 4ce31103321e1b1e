//! Closed-loop time-domain simulation.
//!
//! The joint state is integrated with fixed-step RK4:
//!
//! ```text
//! [ i, v, ζ₁, ζ₂₁, ζ₂₂, μ₁, μ₂, u, x₁, x₂ ]
//! ```
//!
//! Events are applied exactly at step boundaries. After every step the duty
//! is clamped to [-1, 1] and the current limiter (if any) is applied.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::controller::{
    ce_control_derivative, ce_error, desired_current, im_control_derivative, im_error, resonant_filter_step,
    ControllerMode, ControllerState,
};
use crate::error::{PfcError, Result};
use crate::estimator::{estimates, estimation_error, estimator_derivative_unchecked, lyapunov_value, EstimatorState};
use crate::ode::rk4_step;
use crate::plant::{apply_current_limit, input_voltage, plant_derivative_unchecked, PlantState};
use crate::scenario::Scenario;

pub use crate::scenario::{standard_scenario, Event};

const N: usize = 10;
const U: usize = 7;

/// One recorded sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceRow {
    pub t: f64,
    pub i: f64,
    pub v: f64,
    pub u: f64,
    pub u_dot: f64,
    pub i_hat: f64,
    pub theta_hat: [f64; 2],
    /// NaN while the phase estimate is indeterminate.
    pub rho_hat: f64,
    pub e_hat: f64,
    pub v_i: f64,
    pub i_d: f64,
    /// Error signal fed to the resonant filter (`e` for IM, `ê` for CE).
    pub e: f64,
    /// Filter output.
    pub w: f64,
    /// Duty at a bound, or clamped since the previous sample.
    pub saturated: bool,
    /// Current limiter engaged since the previous sample.
    pub current_limited: bool,
    pub zeta1: f64,
    pub zeta2: [f64; 2],
    pub mu: [f64; 2],
    pub x: [f64; 2],
    /// True estimation error `η̄`.
    pub eta_bar: [f64; 3],
    pub lyapunov: f64,
    pub source_amplitude: f64,
    pub source_phase: f64,
    pub v_d: f64,
    pub conductance: f64,
    pub omega: f64,
}

pub const TRACE_COLUMNS: [&str; 33] = [
    "t",
    "i",
    "v",
    "u",
    "u_dot",
    "i_hat",
    "theta_hat1",
    "theta_hat2",
    "rho_hat",
    "E_hat",
    "v_i",
    "i_d",
    "e",
    "w",
    "saturated",
    "current_limited",
    "zeta1",
    "zeta2_1",
    "zeta2_2",
    "mu1",
    "mu2",
    "x1",
    "x2",
    "eta_bar1",
    "eta_bar2",
    "eta_bar3",
    "lyapunov",
    "E",
    "rho",
    "V_d",
    "G",
    "omega",
    "mode",
];

impl TraceRow {
    /// Numeric columns in `TRACE_COLUMNS` order, flags as 0/1, without `mode`.
    pub fn values(&self) -> [f64; 32] {
        [
            self.t,
            self.i,
            self.v,
            self.u,
            self.u_dot,
            self.i_hat,
            self.theta_hat[0],
            self.theta_hat[1],
            self.rho_hat,
            self.e_hat,
            self.v_i,
            self.i_d,
            self.e,
            self.w,
            if self.saturated { 1.0 } else { 0.0 },
            if self.current_limited { 1.0 } else { 0.0 },
            self.zeta1,
            self.zeta2[0],
            self.zeta2[1],
            self.mu[0],
            self.mu[1],
            self.x[0],
            self.x[1],
            self.eta_bar[0],
            self.eta_bar[1],
            self.eta_bar[2],
            self.lyapunov,
            self.source_amplitude,
            self.source_phase,
            self.v_d,
            self.conductance,
            self.omega,
        ]
    }

    fn from_values(x: &[f64]) -> Self {
        Self {
            t: x[0],
            i: x[1],
            v: x[2],
            u: x[3],
            u_dot: x[4],
            i_hat: x[5],
            theta_hat: [x[6], x[7]],
            rho_hat: x[8],
            e_hat: x[9],
            v_i: x[10],
            i_d: x[11],
            e: x[12],
            w: x[13],
            saturated: x[14] != 0.0,
            current_limited: x[15] != 0.0,
            zeta1: x[16],
            zeta2: [x[17], x[18]],
            mu: [x[19], x[20]],
            x: [x[21], x[22]],
            eta_bar: [x[23], x[24], x[25]],
            lyapunov: x[26],
            source_amplitude: x[27],
            source_phase: x[28],
            v_d: x[29],
            conductance: x[30],
            omega: x[31],
        }
    }
}

/// Step counters accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraceStats {
    pub steps: u64,
    /// Steps after which the duty had to be clamped.
    pub saturation_steps: u64,
    /// Steps after which the current limiter engaged.
    pub current_limit_steps: u64,
    /// Steps that started with the low-voltage guard active.
    pub guard_steps: u64,
    /// Steps that started with `Ê ≤ E_FLOOR` in CE mode.
    pub phase_indeterminate_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub scenario: String,
    pub mode: ControllerMode,
    pub rows: Vec<TraceRow>,
    pub stats: TraceStats,
    /// Set when the run stopped on a non-finite state.
    pub aborted_at: Option<f64>,
}

impl Trace {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn column(&self, f: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# scenario={}", self.scenario)?;
        writeln!(w, "# mode={}", self.mode.label())?;
        {
            let mut cw = csv::Writer::from_writer(&mut w);
            cw.write_record(TRACE_COLUMNS)?;
            let mode = self.mode.label();
            for row in &self.rows {
                let mut rec: Vec<String> = row.values().iter().map(|x| x.to_string()).collect();
                rec.push(mode.to_string());
                cw.write_record(&rec)?;
            }
            cw.flush()?;
        }
        if let Some(t) = self.aborted_at {
            writeln!(w, "# aborted at t={t}: non-finite state")?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(r).read_to_string(&mut text)?;
        let mut scenario = String::new();
        let mut mode = ControllerMode::Ce;
        let mut aborted_at = None;
        for line in text.lines().filter(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            if let Some(s) = body.strip_prefix("scenario=") {
                scenario = s.to_string();
            } else if let Some(m) = body.strip_prefix("mode=") {
                mode = m.parse()?;
            } else if let Some(rest) = body.strip_prefix("aborted at t=") {
                aborted_at = rest.split(':').next().and_then(|x| x.parse().ok());
            }
        }
        let mut cr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = cr.headers()?.clone();
        if header.iter().ne(TRACE_COLUMNS.iter().copied()) {
            return Err(PfcError::InvalidParameter("trace csv header does not match".into()));
        }
        let mut rows = Vec::new();
        for rec in cr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .take(TRACE_COLUMNS.len() - 1)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| PfcError::InvalidParameter(format!("bad trace value: {e}")))?;
            rows.push(TraceRow::from_values(&vals));
        }
        Ok(Self { scenario, mode, rows, stats: TraceStats::default(), aborted_at })
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Everything the right-hand side reports besides the derivative.
#[derive(Debug, Clone, Copy, Default)]
struct Aux {
    u_dot: f64,
    i_hat: f64,
    theta_hat: [f64; 2],
    rho_hat: f64,
    e_hat: f64,
    v_i: f64,
    i_d: f64,
    e: f64,
    w: f64,
    guarded: bool,
    phase_indeterminate: bool,
}

fn rhs(sc: &Scenario, t: f64, x: &[f64; N]) -> ([f64; N], Aux) {
    let p = &sc.plant;
    let (i, v, u) = (x[0], x[1], x[U]);
    let est_state = EstimatorState::from_slice(&x[2..7]);
    let ctrl = ControllerState { u, x: Vector2::new(x[8], x[9]) };
    let est = estimates(&est_state, u, v, p, &sc.estimator);
    let mut aux = Aux {
        i_hat: est.i_hat,
        theta_hat: [est.theta_hat.0.x, est.theta_hat.0.y],
        rho_hat: est.rho_hat.unwrap_or(f64::NAN),
        e_hat: est.e_hat,
        v_i: input_voltage(t, p),
        i_d: desired_current(t, p, sc.reference.v_d).0,
        ..Aux::default()
    };

    let (dx, u_dot) = if sc.u_override.is_some() {
        (Vector2::zeros(), 0.0)
    } else {
        let (dx, rate) = match sc.mode {
            ControllerMode::Im => {
                let e = im_error(i, v, u, t, p, &sc.controller, sc.reference.v_d);
                let (dx, w) = resonant_filter_step(&ctrl.x, e, sc.controller.c, &sc.controller, p.omega);
                aux.e = e;
                aux.w = w;
                (dx, im_control_derivative(&ctrl, i, v, w, p))
            }
            ControllerMode::Ce => {
                let ce = ce_error(&est, v, u, t, p, &sc.controller, sc.reference.v_d);
                let (dx, w) = resonant_filter_step(&ctrl.x, ce.value, sc.controller.d, &sc.controller, p.omega);
                aux.e = ce.value;
                aux.w = w;
                aux.phase_indeterminate = ce.phase_indeterminate;
                (dx, ce_control_derivative(&ctrl, &est, v, w, p))
            }
        };
        aux.guarded = rate.guarded;
        let mut u_dot = rate.u_dot;
        if (u >= 1.0 && u_dot > 0.0) || (u <= -1.0 && u_dot < 0.0) {
            u_dot = 0.0;
        }
        (dx, u_dot)
    };
    aux.u_dot = u_dot;

    let dp = plant_derivative_unchecked(PlantState::new(i, v), u, t, p);
    let de = estimator_derivative_unchecked(&est_state, u, u_dot, v, t, p, &sc.estimator);
    let d = [dp.i, dp.v, de.zeta1, de.zeta2.x, de.zeta2.y, de.mu.x, de.mu.y, u_dot, dx.x, dx.y];
    (d, aux)
}

fn make_row(sc: &Scenario, t: f64, x: &[f64; N], aux: &Aux, saturated: bool, current_limited: bool) -> TraceRow {
    let p = &sc.plant;
    let est_state = EstimatorState::from_slice(&x[2..7]);
    let eta: Vector3<f64> = estimation_error(&est_state, PlantState::new(x[0], x[1]), x[U], p, &sc.estimator);
    TraceRow {
        t,
        i: x[0],
        v: x[1],
        u: x[U],
        u_dot: aux.u_dot,
        i_hat: aux.i_hat,
        theta_hat: aux.theta_hat,
        rho_hat: aux.rho_hat,
        e_hat: aux.e_hat,
        v_i: aux.v_i,
        i_d: aux.i_d,
        e: aux.e,
        w: aux.w,
        saturated,
        current_limited,
        zeta1: x[2],
        zeta2: [x[3], x[4]],
        mu: [x[5], x[6]],
        x: [x[8], x[9]],
        eta_bar: [eta.x, eta.y, eta.z],
        lyapunov: lyapunov_value(&eta, &sc.estimator),
        source_amplitude: p.source_amplitude,
        source_phase: p.source_phase,
        v_d: sc.reference.v_d,
        conductance: p.conductance,
        omega: p.omega,
    }
}

/// Run a scenario. A non-finite state stops the run with
/// [`PfcError::NumericalAbort`] carrying everything recorded so far.
pub fn simulate(scenario: &Scenario) -> Result<Trace> {
    simulate_inner(scenario, None)
}

/// [`simulate`], additionally handing the sample at every integration step
/// (recorded or not) to `observer`. Its flags describe the step that led to
/// the sample.
pub fn simulate_observed(scenario: &Scenario, mut observer: impl FnMut(&TraceRow)) -> Result<Trace> {
    simulate_inner(scenario, Some(&mut observer))
}

fn simulate_inner(scenario: &Scenario, mut observer: Option<&mut dyn FnMut(&TraceRow)>) -> Result<Trace> {
    scenario.validate()?;
    let mut sc = scenario.clone();
    let n_steps = sc.total_steps();
    let stride = sc.record_stride as u64;
    let mut event_steps: Vec<(u64, &Event)> =
        scenario.events.iter().map(|ev| (scenario.step_index(ev.time).expect("validated"), ev)).collect();
    event_steps.reverse();

    let mut x = [0.0; N];
    x[0] = sc.initial.i;
    x[1] = sc.initial.v;
    x[U] = sc.u_override.unwrap_or(0.0);

    let mut trace = Trace {
        scenario: sc.name.clone(),
        mode: sc.mode,
        rows: Vec::with_capacity((n_steps / stride + 2) as usize),
        stats: TraceStats::default(),
        aborted_at: None,
    };
    let (mut clamped_since_row, mut limited_since_row) = (false, false);
    let (mut clamped_step, mut limited_step) = (false, false);
    let h = sc.dt;

    for k in 0..=n_steps {
        let t = k as f64 * h;
        while let Some(&(step, ev)) = event_steps.last() {
            if step != k {
                break;
            }
            sc.set_number(&ev.path, ev.value)?;
            event_steps.pop();
        }
        let (_, aux) = rhs(&sc, t, &x);
        let at_bound = x[U].abs() >= 1.0;
        if let Some(obs) = observer.as_mut() {
            obs(&make_row(&sc, t, &x, &aux, clamped_step || at_bound, limited_step));
        }
        if k % stride == 0 || k == n_steps {
            trace.rows.push(make_row(&sc, t, &x, &aux, clamped_since_row || at_bound, limited_since_row));
            clamped_since_row = false;
            limited_since_row = false;
        }
        if k == n_steps {
            break;
        }
        trace.stats.steps += 1;
        trace.stats.guard_steps += aux.guarded as u64;
        trace.stats.phase_indeterminate_steps += aux.phase_indeterminate as u64;

        let mut next = rk4_step(|tt, xx| rhs(&sc, tt, xx).0, t, &x, h);
        clamped_step = next[U].abs() > 1.0;
        if clamped_step {
            next[U] = next[U].clamp(-1.0, 1.0);
            trace.stats.saturation_steps += 1;
        }
        let limited = apply_current_limit(PlantState::new(next[0], next[1]), &sc.plant);
        limited_step = limited.i != next[0];
        if limited_step {
            next[0] = limited.i;
            trace.stats.current_limit_steps += 1;
        }
        clamped_since_row |= clamped_step;
        limited_since_row |= limited_step;
        if next.iter().any(|z| !z.is_finite()) {
            let time = t + h;
            trace.aborted_at = Some(time);
            return Err(PfcError::NumericalAbort { time, partial: Box::new(trace) });
        }
        x = next;
    }
    Ok(trace)
}

/// Run the scenario under both controllers, in parallel.
pub fn run_pair(scenario: &Scenario) -> (Result<Trace>, Result<Trace>) {
    let mut im = scenario.clone();
    im.mode = ControllerMode::Im;
    let mut ce = scenario.clone();
    ce.mode = ControllerMode::Ce;
    rayon::join(|| simulate(&im), || simulate(&ce))
}
