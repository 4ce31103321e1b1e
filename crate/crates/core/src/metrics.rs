//! Steady-state quality metrics computed from recorded traces.
//!
//! All integrals use the trapezoidal rule over windows that span an integer
//! number of line periods. Phasors follow the convention
//! `x(t) ≈ A sin(nωt + φ)`.

use std::io::{Read, Write};

use crate::error::{PfcError, Result};
use crate::scenario::Scenario;
use crate::sim_engine::{Trace, TraceRow};

/// Highest harmonic included in THD.
pub const THD_MAX_HARMONIC: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Current,
    InputVoltage,
    OutputVoltage,
    Duty,
    CurrentEstimate,
}

impl Signal {
    pub fn of(&self, row: &TraceRow) -> f64 {
        match self {
            Signal::Current => row.i,
            Signal::InputVoltage => row.v_i,
            Signal::OutputVoltage => row.v,
            Signal::Duty => row.u,
            Signal::CurrentEstimate => row.i_hat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    /// The `periods` line periods ending at `end`.
    pub fn before(end: f64, periods: usize, omega: f64) -> Self {
        Self { start: end - periods as f64 * std::f64::consts::TAU / omega, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phasor {
    pub amplitude: f64,
    /// In (-π, π].
    pub phase: f64,
}

fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(std::f64::consts::TAU);
    if y > std::f64::consts::PI {
        y - std::f64::consts::TAU
    } else {
        y
    }
}

fn trapezoid(t: &[f64], x: &[f64]) -> f64 {
    t.windows(2).zip(x.windows(2)).map(|(tt, xx)| 0.5 * (tt[1] - tt[0]) * (xx[0] + xx[1])).sum()
}

/// Harmonic `n` of sampled data over its full time span.
pub fn harmonic_phasor_samples(t: &[f64], x: &[f64], omega: f64, n: usize) -> Phasor {
    let span = t[t.len() - 1] - t[0];
    let w = n as f64 * omega;
    let (s, c): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(x)
        .map(|(&tt, &xx)| {
            let (sn, cs) = (w * tt).sin_cos();
            (xx * sn, xx * cs)
        })
        .unzip();
    let a = 2.0 / span * trapezoid(t, &s);
    let b = 2.0 / span * trapezoid(t, &c);
    Phasor { amplitude: a.hypot(b), phase: wrap_angle(b.atan2(a)) }
}

/// Time average of sampled data over its full span.
pub fn mean_samples(t: &[f64], x: &[f64]) -> f64 {
    trapezoid(t, x) / (t[t.len() - 1] - t[0])
}

pub fn rms_samples(t: &[f64], x: &[f64]) -> f64 {
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    mean_samples(t, &sq).sqrt()
}

/// Rows covering `window`, after checking coverage and period alignment.
fn window_rows<'a>(trace: &'a Trace, window: Window, min_periods: usize) -> Result<&'a [TraceRow]> {
    let Window { start, end } = window;
    let rows = &trace.rows;
    if rows.len() < 3 {
        return Err(PfcError::TraceTooShort(format!("{} samples", rows.len())));
    }
    let tol = 1e-9 * end.abs().max(1.0);
    let lo = rows.partition_point(|r| r.t < start - tol);
    let hi = rows.partition_point(|r| r.t <= end + tol);
    if lo >= hi || (rows[lo].t - start).abs() > tol || (rows[hi - 1].t - end).abs() > tol {
        return Err(PfcError::WindowOutOfRange { start, end });
    }
    let omega = rows[lo].omega;
    let periods = (end - start) * omega / std::f64::consts::TAU;
    if (periods - periods.round()).abs() > 1e-6 || periods.round() < min_periods.max(1) as f64 {
        return Err(PfcError::WindowMisaligned { start, end });
    }
    let sel = &rows[lo..hi];
    if sel.len() < 3 {
        return Err(PfcError::TraceTooShort(format!("{} samples in window", sel.len())));
    }
    Ok(sel)
}

fn split(rows: &[TraceRow], signal: Signal) -> (Vec<f64>, Vec<f64>) {
    rows.iter().map(|r| (r.t, signal.of(r))).unzip()
}

pub fn harmonic_phasor(trace: &Trace, signal: Signal, window: Window, n: usize) -> Result<Phasor> {
    let rows = window_rows(trace, window, 1)?;
    let (t, x) = split(rows, signal);
    Ok(harmonic_phasor_samples(&t, &x, rows[0].omega, n))
}

pub fn fundamental_phasor(trace: &Trace, signal: Signal, window: Window) -> Result<Phasor> {
    harmonic_phasor(trace, signal, window, 1)
}

pub fn window_mean(trace: &Trace, signal: Signal, window: Window) -> Result<f64> {
    let rows = window_rows(trace, window, 1)?;
    let (t, x) = split(rows, signal);
    Ok(mean_samples(&t, &x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicReport {
    pub window: Window,
    /// Phase of `v_i` minus phase of `i` at the fundamental, degrees.
    /// Positive when the current lags.
    pub displacement_deg: f64,
    pub thd_pct: f64,
    pub power_factor: f64,
    /// `|V_d - mean(v)|`.
    pub dc_error: f64,
    pub current_fundamental: Phasor,
    pub voltage_fundamental: Phasor,
}

/// Quality metrics over a window of at least two line periods.
pub fn harmonic_report(trace: &Trace, window: Window, v_d: f64) -> Result<HarmonicReport> {
    let rows = window_rows(trace, window, 2)?;
    let omega = rows[0].omega;
    let (t, i) = split(rows, Signal::Current);
    let (_, vi) = split(rows, Signal::InputVoltage);
    let (_, v) = split(rows, Signal::OutputVoltage);

    let i1 = harmonic_phasor_samples(&t, &i, omega, 1);
    let v1 = harmonic_phasor_samples(&t, &vi, omega, 1);
    let i_rms = rms_samples(&t, &i);
    let floor = |rms: f64| 1e-12 * rms.max(f64::MIN_POSITIVE);
    if !(i1.amplitude > floor(i_rms)) || !(v1.amplitude > floor(rms_samples(&t, &vi))) {
        return Err(PfcError::DegenerateFundamental);
    }
    let harmonic_sq: f64 =
        (2..=THD_MAX_HARMONIC).map(|n| harmonic_phasor_samples(&t, &i, omega, n).amplitude.powi(2)).sum();
    let displacement = wrap_angle(v1.phase - i1.phase);
    let distortion = (i1.amplitude / std::f64::consts::SQRT_2 / i_rms).min(1.0);
    Ok(HarmonicReport {
        window,
        displacement_deg: displacement.to_degrees(),
        thd_pct: 100.0 * harmonic_sq.sqrt() / i1.amplitude,
        power_factor: (displacement.cos() * distortion).clamp(0.0, 1.0),
        dc_error: (v_d - mean_samples(&t, &v)).abs(),
        current_fundamental: i1,
        voltage_fundamental: v1,
    })
}

/// Last `periods` line periods before each event and before the end of the run.
pub fn default_windows(scenario: &Scenario, periods: usize) -> Vec<Window> {
    let mut sc = scenario.clone();
    let mut out = Vec::new();
    for ev in &scenario.events {
        out.push(Window::before(ev.time, periods, sc.plant.omega));
        let _ = sc.set_number(&ev.path, ev.value);
    }
    out.push(Window::before(scenario.duration, periods, sc.plant.omega));
    out.retain(|w| w.start >= -1e-12);
    out
}

/// Mean output voltage over consecutive blocks of `periods` line periods,
/// as `(block start, mean)`.
pub fn dc_trend(trace: &Trace, periods: usize) -> Result<Vec<(f64, f64)>> {
    let first = trace.rows.first().ok_or_else(|| PfcError::TraceTooShort("empty trace".into()))?;
    let last = trace.rows[trace.rows.len() - 1].t;
    let span = periods.max(1) as f64 * std::f64::consts::TAU / first.omega;
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let w = Window::new(first.t + k as f64 * span, first.t + (k + 1) as f64 * span);
        if w.end > last + 1e-9 * last.abs().max(1.0) {
            break;
        }
        match window_mean(trace, Signal::OutputVoltage, w) {
            Ok(m) => out.push((w.start, m)),
            // recording grid does not hit this boundary; skip the block
            Err(PfcError::WindowOutOfRange { .. }) => {}
            Err(e) => return Err(e),
        }
        k += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub controller: String,
    pub window_start: f64,
    pub displacement_deg: f64,
    pub thd_pct: f64,
    pub power_factor: f64,
    pub dc_error_v: f64,
}

pub const SUMMARY_COLUMNS: [&str; 7] =
    ["scenario", "controller", "window_start", "displacement_deg", "thd_pct", "power_factor", "dc_error_V"];

impl SummaryRow {
    pub fn from_report(trace: &Trace, report: &HarmonicReport) -> Self {
        Self {
            scenario: trace.scenario.clone(),
            controller: trace.mode.label().to_string(),
            window_start: report.window.start,
            displacement_deg: report.displacement_deg,
            thd_pct: report.thd_pct,
            power_factor: report.power_factor,
            dc_error_v: report.dc_error,
        }
    }
}

/// Reports for every default window of a finished run. The reference
/// voltage is read from the trace at each window's start, since a window
/// can end on the step that changes it.
pub fn summarize(trace: &Trace, scenario: &Scenario, periods: usize) -> Result<Vec<SummaryRow>> {
    default_windows(scenario, periods)
        .into_iter()
        .map(|w| {
            let rows = window_rows(trace, w, periods)?;
            let v_d = rows[0].v_d;
            let rep = harmonic_report(trace, w, v_d)?;
            Ok(SummaryRow::from_report(trace, &rep))
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        cw.write_record([
            r.scenario.clone(),
            r.controller.clone(),
            r.window_start.to_string(),
            r.displacement_deg.to_string(),
            r.thd_pct.to_string(),
            r.power_factor.to_string(),
            r.dc_error_v.to_string(),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut cr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for rec in cr.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .unwrap_or("")
                .parse()
                .map_err(|_| PfcError::InvalidParameter(format!("bad summary field {}", SUMMARY_COLUMNS[k])))
        };
        out.push(SummaryRow {
            scenario: rec.get(0).unwrap_or("").to_string(),
            controller: rec.get(1).unwrap_or("").to_string(),
            window_start: num(2)?,
            displacement_deg: num(3)?,
            thd_pct: num(4)?,
            power_factor: num(5)?,
            dc_error_v: num(6)?,
        });
    }
    Ok(out)
}
