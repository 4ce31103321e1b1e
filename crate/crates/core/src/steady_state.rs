//! Closed-form steady-state analysis for an input current
//! `i_s(t) = I_s sin(ωt + ρ - Δρ)` lagging the source by `Δρ`.
//!
//! In steady state the squared output voltage obeys the linear ODE
//!
//! ```text
//! (C/2) d(v²)/dt + G v² = (E I_s / 2) cos Δρ - d1 cos(2ψ) - d2 sin(2ψ),   ψ = ωt + ρ
//! ```
//!
//! whose periodic solution is `v² = (E I_s / 2G) cos Δρ + A sin(2ψ + ε)`.

use rayon::prelude::*;

use crate::error::{PfcError, Result};
use crate::ode;
use crate::plant::PlantParams;

/// Everything the steady-state analysis derives for one `(Δρ, I_s)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseShiftAnalysis {
    pub delta_rho: f64,
    pub current_amplitude: f64,
    pub d1: f64,
    pub d2: f64,
    /// Second-harmonic amplitude of v², V².
    pub harmonic_amplitude: f64,
    /// Second-harmonic phase ε, rad.
    pub harmonic_phase: f64,
    /// DC component of the output, V.
    pub dc_voltage: f64,
}

impl PhaseShiftAnalysis {
    pub fn new(delta_rho: f64, current_amplitude: f64, params: &PlantParams) -> Result<Self> {
        let (d1, d2) = d_coefficients(delta_rho, current_amplitude, params);
        let (a, eps) = harmonic_descriptor(delta_rho, current_amplitude, params);
        Ok(Self {
            delta_rho,
            current_amplitude,
            d1,
            d2,
            harmonic_amplitude: a,
            harmonic_phase: eps,
            dc_voltage: dc_component(delta_rho, current_amplitude, params)?,
        })
    }
}

pub fn d_coefficients(delta_rho: f64, i_s: f64, params: &PlantParams) -> (f64, f64) {
    let e = params.source_amplitude;
    let lwi = params.inductance * params.omega * i_s;
    let d1 = 0.5 * i_s * (e * delta_rho.cos() - lwi * (2.0 * delta_rho).sin());
    let d2 = 0.5 * i_s * (e * delta_rho.sin() + lwi * (2.0 * delta_rho).cos());
    (d1, d2)
}

/// Cosine and sine coefficients of the `2ψ` harmonic of v².
fn harmonic_coefficients(delta_rho: f64, i_s: f64, params: &PlantParams) -> (f64, f64) {
    let (d1, d2) = d_coefficients(delta_rho, i_s, params);
    let g = params.conductance;
    let cw = params.capacitance * params.omega;
    let den = g * g + cw * cw;
    (-(g * d1 - cw * d2) / den, -(g * d2 + cw * d1) / den)
}

/// Amplitude `A` (V²) and phase `ε` (rad) of the second harmonic of v².
///
/// `ε` comes from the two-argument arctangent of the sine and cosine
/// coefficients, so the compact and Fourier forms agree in every quadrant.
pub fn harmonic_descriptor(delta_rho: f64, i_s: f64, params: &PlantParams) -> (f64, f64) {
    let (d1, d2) = d_coefficients(delta_rho, i_s, params);
    let g = params.conductance;
    let cw = params.capacitance * params.omega;
    let amplitude = ((d1 * d1 + d2 * d2) / (g * g + cw * cw)).sqrt();
    let (cos_coef, sin_coef) = harmonic_coefficients(delta_rho, i_s, params);
    (amplitude, cos_coef.atan2(sin_coef))
}

fn dc_square(delta_rho: f64, i_s: f64, params: &PlantParams) -> f64 {
    params.source_amplitude * i_s * delta_rho.cos() / (2.0 * params.conductance)
}

/// Compact steady-state `v²(t)`.
pub fn vs_squared(t: f64, delta_rho: f64, i_s: f64, params: &PlantParams) -> f64 {
    let (a, eps) = harmonic_descriptor(delta_rho, i_s, params);
    let psi = params.omega * t + params.source_phase;
    dc_square(delta_rho, i_s, params) + a * (2.0 * psi + eps).sin()
}

/// Three-term Fourier form of the same steady-state `v²(t)`.
pub fn vs_squared_fourier(t: f64, delta_rho: f64, i_s: f64, params: &PlantParams) -> f64 {
    let (cos_coef, sin_coef) = harmonic_coefficients(delta_rho, i_s, params);
    let psi = params.omega * t + params.source_phase;
    dc_square(delta_rho, i_s, params) + cos_coef * (2.0 * psi).cos() + sin_coef * (2.0 * psi).sin()
}

fn check_cos(delta_rho: f64) -> Result<f64> {
    let c = delta_rho.cos();
    if c <= 0.0 {
        return Err(PfcError::Domain(format!("cos(Δρ) must be > 0, Δρ = {delta_rho}")));
    }
    Ok(c)
}

/// DC component `V_s = sqrt(E I_s cos Δρ / 2G)` of the output voltage.
pub fn dc_component(delta_rho: f64, i_s: f64, params: &PlantParams) -> Result<f64> {
    check_cos(delta_rho)?;
    Ok(dc_square(delta_rho, i_s, params).sqrt())
}

/// Input current amplitude that yields DC output `v_d` at phase shift `Δρ`.
pub fn required_current(delta_rho: f64, params: &PlantParams, v_d: f64) -> Result<f64> {
    let c = check_cos(delta_rho)?;
    if !(v_d > 0.0) {
        return Err(PfcError::Domain(format!("V_d must be > 0, got {v_d}")));
    }
    Ok(2.0 * params.conductance * v_d * v_d / (params.source_amplitude * c))
}

/// `I₀ = 2 G V_d² / E`, the smallest current amplitude that reaches `v_d`.
pub fn minimum_current(params: &PlantParams, v_d: f64) -> f64 {
    2.0 * params.conductance * v_d * v_d / params.source_amplitude
}

/// Steady state reached under a static gain law whose current lags by `atan(ħ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticLawSteadyState {
    /// `ħ = Lω / (K E)`.
    pub hbar: f64,
    pub current_amplitude: f64,
    pub phase_lag: f64,
    pub dc_voltage: f64,
}

pub fn static_law_steady_state(k: f64, params: &PlantParams, v_d: f64) -> Result<StaticLawSteadyState> {
    if !(k > 0.0) {
        return Err(PfcError::Domain(format!("static gain K must be > 0, got {k}")));
    }
    let hbar = params.inductance * params.omega / (k * params.source_amplitude);
    let scale = (1.0 + hbar * hbar).sqrt();
    Ok(StaticLawSteadyState {
        hbar,
        current_amplitude: minimum_current(params, v_d) / scale,
        phase_lag: hbar.atan(),
        dc_voltage: v_d / scale,
    })
}

/// Closed-form lagging-benefit predicate: true when a lag of `Δρ` lowers the
/// second-harmonic amplitude below its `Δρ = 0` value.
pub fn lagging_benefit(delta_rho: f64, params: &PlantParams, i0: f64) -> bool {
    let e = params.source_amplitude;
    let lw = params.inductance * params.omega;
    let (s, c) = delta_rho.sin_cos();
    let lhs = s * s / (e * lw * i0);
    let rhs = (2.0 * delta_rho).sin() * (2.0 * c - (2.0 * delta_rho).cos())
        / (e * e * c * c + lw * lw * i0 * i0 * (1.0 + c * c));
    lhs < rhs
}

/// `A(Δρ)/A(0)` at source amplitude `params.source_amplitude`, with the current
/// amplitude raised to `I₀/cos Δρ` so every point delivers the same DC output.
pub fn harmonic_ratio(delta_rho: f64, params: &PlantParams, v_d: f64) -> Result<f64> {
    let i0 = minimum_current(params, v_d);
    let i_s = required_current(delta_rho, params, v_d)?;
    let (a, _) = harmonic_descriptor(delta_rho, i_s, params);
    let (a0, _) = harmonic_descriptor(0.0, i0, params);
    Ok(a / a0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub delta_rho: f64,
    pub source_amplitude: f64,
    pub ratio: f64,
}

/// Harmonic ratio over a `Δρ × E` grid (row-major in `Δρ`).
pub fn ratio_sweep(
    delta_rho_grid: &[f64],
    amplitude_grid: &[f64],
    params: &PlantParams,
    v_d: f64,
) -> Result<Vec<SweepCell>> {
    if delta_rho_grid.is_empty() || amplitude_grid.is_empty() {
        return Err(PfcError::InvalidParameter("sweep grids must be non-empty".into()));
    }
    if let Some(&bad) = amplitude_grid.iter().find(|e| !(**e > 0.0)) {
        return Err(PfcError::Domain(format!("source amplitude must be > 0, got {bad}")));
    }
    let cells: Vec<(f64, f64)> =
        delta_rho_grid.iter().flat_map(|&dr| amplitude_grid.iter().map(move |&e| (dr, e))).collect();
    cells
        .into_par_iter()
        .map(|(dr, e)| {
            let p = PlantParams { source_amplitude: e, ..*params };
            Ok(SweepCell { delta_rho: dr, source_amplitude: e, ratio: harmonic_ratio(dr, &p, v_d)? })
        })
        .collect()
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
    }
}

/// Default sweep domain: `-acos(0.99) ≤ Δρ ≤ acos(0.95)`, `58 V ≤ E ≤ 220 V`.
pub const SWEEP_DELTA_RHO_BOUNDS: (f64, f64) = (-0.141_539_473_324_427_1, 0.317_560_429_291_521_5);
pub const SWEEP_AMPLITUDE_BOUNDS: (f64, f64) = (58.0, 220.0);

pub fn write_sweep_csv<W: std::io::Write>(out: W, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta_rho", "E", "ratio"])?;
    for c in cells {
        w.write_record([c.delta_rho.to_string(), c.source_amplitude.to_string(), c.ratio.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepCell>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| PfcError::InvalidParameter(format!("bad sweep row {rec:?}")))
        };
        cells.push(SweepCell { delta_rho: field(0)?, source_amplitude: field(1)?, ratio: field(2)? });
    }
    Ok(cells)
}

/// Upper edge `Δρ*` of the lag band where the harmonic ratio drops below 1,
/// located by a grid scan over `(0, hi]` and refined by bisection.
pub fn lagging_boundary(params: &PlantParams, v_d: f64, hi: f64) -> Result<Option<f64>> {
    let n = 2000;
    let grid = linspace(0.0, hi, n + 1);
    let f = |dr: f64| harmonic_ratio(dr, params, v_d).map(|r| r - 1.0);
    let mut inside = false;
    for w in grid.windows(2).skip(1) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (f(a)?, f(b)?);
        inside |= fa < 0.0;
        if fa < 0.0 && fb >= 0.0 {
            let (mut lo, mut up) = (a, b);
            for _ in 0..80 {
                let mid = 0.5 * (lo + up);
                if f(mid)? < 0.0 {
                    lo = mid;
                } else {
                    up = mid;
                }
            }
            return Ok(Some(0.5 * (lo + up)));
        }
    }
    Ok(if inside { Some(hi) } else { None })
}

/// Steady-state output power balance `C v dv/dt + G v² = u_s v_s i_s` evaluated
/// with the assumed current and the duty product it implies.
fn output_voltage_rate(t: f64, v: f64, delta_rho: f64, i_s: f64, params: &PlantParams) -> f64 {
    let psi = params.omega * t + params.source_phase;
    let current = i_s * (psi - delta_rho).sin();
    let uv = params.source_amplitude * psi.sin() - params.inductance * params.omega * i_s * (psi - delta_rho).cos();
    (uv * current / v - params.conductance * v) / params.capacitance
}

/// Residual between the compact closed form and a direct RK4 integration of
/// the output-voltage dynamics started on the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormCheck {
    /// max |v²_num - v²_closed| / v²_closed over periods after `settle_periods`.
    pub max_relative_error: f64,
    pub periods: usize,
}

pub fn closed_form_check(
    delta_rho: f64,
    i_s: f64,
    params: &PlantParams,
    periods: usize,
    settle_periods: usize,
    steps_per_period: usize,
) -> ClosedFormCheck {
    let h = params.period() / steps_per_period as f64;
    let mut v = vs_squared(0.0, delta_rho, i_s, params).sqrt();
    let mut worst = 0.0f64;
    for n in 0..periods * steps_per_period {
        let t = n as f64 * h;
        v = ode::rk4_step(|t, x: &[f64; 1]| [output_voltage_rate(t, x[0], delta_rho, i_s, params)], t, &[v], h)[0];
        if n + 1 >= settle_periods * steps_per_period {
            let exact = vs_squared(t + h, delta_rho, i_s, params);
            worst = worst.max(((v * v - exact) / exact).abs());
        }
    }
    ClosedFormCheck { max_relative_error: worst, periods }
}

/// Mean output voltage over the last period after driving the output dynamics
/// with the static-law current for `periods` line periods from `v_d`.
pub fn static_law_simulated_dc(k: f64, params: &PlantParams, v_d: f64, periods: usize) -> Result<f64> {
    let law = static_law_steady_state(k, params, v_d)?;
    let steps = 2000;
    let h = params.period() / steps as f64;
    let mut v = v_d;
    let mut acc = 0.0;
    for n in 0..periods * steps {
        let t = n as f64 * h;
        let next = ode::rk4_step(
            |t, x: &[f64; 1]| [output_voltage_rate(t, x[0], law.phase_lag, law.current_amplitude, params)],
            t,
            &[v],
            h,
        )[0];
        if n >= (periods - 1) * steps {
            acc += 0.5 * (v + next);
        }
        v = next;
    }
    Ok(acc / steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, PI};

    // Frozen with a 30-digit mpmath evaluation of the closed forms.
    const I0: f64 = 6.130_268_199_233_716;
    const A0: f64 = 1_330.210_655_597_216;

    fn p() -> PlantParams {
        PlantParams::ideal()
    }

    #[test]
    fn d_coefficient_examples() {
        let (d1, d2) = d_coefficients(0.0, I0, &p());
        assert_relative_eq!(d1, 459.770_114_942_528_7, max_relative = 1e-12);
        assert_relative_eq!(d2, 0.5 * I0 * p().inductance * p().omega * I0, max_relative = 1e-12);
        assert_relative_eq!(d2, 12.573_564_995_738_777, max_relative = 1e-12);
        let (d1, d2) = d_coefficients(FRAC_PI_4, 1.0, &p());
        assert_relative_eq!(d1, 52.698_428_971_383_75, max_relative = 1e-12);
        assert_relative_eq!(d2, 53.033_008_588_991_06, max_relative = 1e-12);
    }

    #[test]
    fn harmonic_amplitude_examples() {
        let (a, _) = harmonic_descriptor(0.0, I0, &p());
        assert_relative_eq!(a, A0, max_relative = 1e-12);
        let (a, _) = harmonic_descriptor(0.3, 0.0, &p());
        assert_eq!(a, 0.0);
    }

    #[test]
    fn vs_squared_period_average() {
        let pp = p();
        let n = 4000;
        let h = pp.period() / n as f64;
        let mean: f64 = (0..n).map(|j| vs_squared(j as f64 * h, 0.0, I0, &pp)).sum::<f64>() / n as f64;
        assert_relative_eq!(mean, 40_000.0, max_relative = 1e-10);
        let mean: f64 = (0..n).map(|j| vs_squared(j as f64 * h, 0.2, 5.0, &pp)).sum::<f64>() / n as f64;
        assert_relative_eq!(mean, 150.0 * 5.0 * 0.2f64.cos() * 87.0 / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn dc_and_required_current_examples() {
        let pp = p();
        assert_relative_eq!(required_current(0.0, &pp, 200.0).unwrap(), I0, max_relative = 1e-14);
        assert_relative_eq!(
            required_current(FRAC_PI_3, &pp, 200.0).unwrap(),
            12.260_536_398_467_433,
            max_relative = 1e-12
        );
        assert_relative_eq!(dc_component(0.0, I0, &pp).unwrap(), 200.0, max_relative = 1e-12);
        assert_relative_eq!(dc_component(FRAC_PI_3, I0, &pp).unwrap(), 141.421_356_237_309_5, max_relative = 1e-12);
        assert_eq!(dc_component(0.0, 0.0, &pp).unwrap(), 0.0);
        assert!(dc_component(PI / 2.0 + 0.01, I0, &pp).is_err());
        assert!(required_current(2.0, &pp, 200.0).is_err());
        assert_eq!(
            required_current(0.0, &pp, 200.0).unwrap(),
            2.0 * pp.conductance * 200.0 * 200.0 / pp.source_amplitude
        );
    }

    #[test]
    fn static_law_examples() {
        let pp = p();
        // ħ = 0.75 → 3-4-5 triangle
        let k = pp.inductance * pp.omega / (0.75 * pp.source_amplitude);
        let s = static_law_steady_state(k, &pp, 200.0).unwrap();
        assert_relative_eq!(s.dc_voltage, 160.0, max_relative = 1e-12);
        assert_relative_eq!(s.current_amplitude, I0 * 0.8, max_relative = 1e-12);
        let s = static_law_steady_state(1.0, &pp, 200.0).unwrap();
        assert_relative_eq!(s.hbar, 0.004_461_061_568_097_506, max_relative = 1e-12);
        assert_relative_eq!(s.dc_voltage, 199.998_009_922_672_02, max_relative = 1e-12);
        let s = static_law_steady_state(1e12, &pp, 200.0).unwrap();
        assert_relative_eq!(s.dc_voltage, 200.0, max_relative = 1e-12);
        assert!(static_law_steady_state(0.0, &pp, 200.0).is_err());
    }

    #[test]
    fn lagging_benefit_examples() {
        let pp = p();
        assert!(!lagging_benefit(0.0, &pp, I0));
        assert!(lagging_benefit(0.02, &pp, I0));
        assert!(harmonic_ratio(0.02, &pp, 200.0).unwrap() < 1.0);
        for dr in [-0.3, -0.1, -0.01, -1e-4] {
            assert!(!lagging_benefit(dr, &pp, I0));
            assert!(harmonic_ratio(dr, &pp, 200.0).unwrap() > 1.0);
        }
        // both predicates switch near 0.0547 rad at E = 150 V
        let b = lagging_boundary(&pp, 200.0, SWEEP_DELTA_RHO_BOUNDS.1).unwrap().unwrap();
        assert_relative_eq!(b, 0.054_722_376_388_775_31, max_relative = 1e-9);
        assert!(lagging_benefit(0.0545, &pp, I0));
        assert!(!lagging_benefit(0.0551, &pp, I0));
    }

    #[test]
    fn sweep_shape() {
        let pp = p();
        let rho = linspace(SWEEP_DELTA_RHO_BOUNDS.0, SWEEP_DELTA_RHO_BOUNDS.1, 5);
        let e = linspace(58.0, 220.0, 4);
        let cells = ratio_sweep(&rho, &e, &pp, 200.0).unwrap();
        assert_eq!(cells.len(), 20);
        let single = ratio_sweep(&[0.0], &[150.0], &pp, 200.0).unwrap();
        assert_eq!(single.len(), 1);
        assert_relative_eq!(single[0].ratio, 1.0, max_relative = 1e-15);
        assert!(ratio_sweep(&[], &e, &pp, 200.0).is_err());

        // argmin over a fine Δρ grid at E = 150 sits at a positive lag
        let fine = linspace(-0.1, 0.1, 2001);
        let argmin = fine
            .iter()
            .copied()
            .min_by(|a, b| harmonic_ratio(*a, &pp, 200.0).unwrap().total_cmp(&harmonic_ratio(*b, &pp, 200.0).unwrap()))
            .unwrap();
        assert!((argmin - 0.027_361_157_463_726_49).abs() < 1e-4, "{argmin}");
    }

    #[test]
    fn sweep_csv_round_trip() {
        let cells = ratio_sweep(&linspace(-0.1, 0.3, 3), &[58.0, 120.0], &p(), 200.0).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &cells).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("delta_rho,E,ratio\n"));
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), cells);
    }

    #[test]
    fn closed_form_solves_output_dynamics() {
        let chk = closed_form_check(0.0, I0, &p(), 10, 5, 4000);
        assert!(chk.max_relative_error < 0.01, "{chk:?}");
        let chk = closed_form_check(-0.12, 7.0, &p(), 10, 5, 4000);
        assert!(chk.max_relative_error < 0.01, "{chk:?}");
    }

    #[test]
    fn static_law_matches_simulation() {
        let pp = p();
        let k = pp.inductance * pp.omega / (0.75 * pp.source_amplitude);
        let dc = static_law_simulated_dc(k, &pp, 200.0, 40).unwrap();
        assert!((dc - 160.0).abs() / 160.0 < 0.01, "{dc}");
    }

    #[test]
    fn mean_output_voltage_bias_small() {
        // per-period mean of sqrt(v²) vs V_s; mpmath quadrature gives 199.98617
        let pp = p();
        let n = 20_000;
        let h = pp.period() / n as f64;
        let mean: f64 = (0..n).map(|j| vs_squared(j as f64 * h, 0.0, I0, &pp).sqrt()).sum::<f64>() / n as f64;
        assert_relative_eq!(mean, 199.986_172_505_848_2, max_relative = 1e-9);
        assert!((mean - 200.0).abs() / 200.0 < 0.002);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn compact_equals_fourier(dr in -1.5..1.5f64, i_s in 0.1..20.0f64) {
            let pp = p();
            let (a, _) = harmonic_descriptor(dr, i_s, &pp);
            for n in 0..64 {
                let t = n as f64 * pp.period() / 64.0;
                let diff = vs_squared(t, dr, i_s, &pp) - vs_squared_fourier(t, dr, i_s, &pp);
                prop_assert!(diff.abs() < 1e-9 * a.max(1e-300));
            }
        }

        #[test]
        fn dc_inverts_required_current(dr in -1.5..1.5f64, v_d in 10.0..500.0f64) {
            let pp = p();
            let i_s = required_current(dr, &pp, v_d).unwrap();
            prop_assert!(i_s >= minimum_current(&pp, v_d) * (1.0 - 1e-15));
            let back = dc_component(dr, i_s, &pp).unwrap();
            prop_assert!(((back - v_d) / v_d).abs() < 1e-12);
        }
    }
}
