//! Internal-model dynamic control law and its certainty-equivalent variant.
//!
//! Both laws drive the duty through
//!
//! ```text
//! u̇ = (1/v) (-(u²/C) i + w)
//! ```
//!
//! which makes `uv` a first-order lag of `w`. The signal `w` is the output of
//! the resonant filter `gain·(s² + a s + b)/(s² + ω²)` fed with the current
//! tracking error. The IM law measures `v_i` and `i`; the CE law replaces them
//! with estimator outputs and works on the error scaled by the source
//! amplitude, so no division by `Ê` is needed.

use nalgebra::Vector2;

use crate::estimator::EstimateBundle;
use crate::plant::{input_voltage, PlantParams};
use crate::steady_state::minimum_current;

/// Below this output voltage the duty rate is frozen.
pub const V_FLOOR: f64 = 1.0;
/// Below this amplitude estimate the phase estimate is treated as indeterminate.
pub const E_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    /// Filter numerator coefficient of `s` (1/s).
    pub a: f64,
    /// Filter numerator constant (1/s²).
    pub b: f64,
    /// IM filter gain.
    pub c: f64,
    /// CE filter gain, nominally `c / E`.
    pub d: f64,
    /// Current-tracking gain.
    pub k: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        let d = 460.0 / 15.0;
        Self { a: 1200.0, b: 2e5, c: d * 150.0, d, k: 15.0 }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, value) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d), ("k", self.k)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(crate::PfcError::InvalidParameter(format!(
                    "controller gain {name} must be > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Duty and resonant-filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub u: f64,
    pub x: Vector2<f64>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self { u: 0.0, x: Vector2::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSpec {
    /// Desired average output voltage (V).
    pub v_d: f64,
}

impl ReferenceSpec {
    pub fn validate(&self, params: &PlantParams) -> crate::Result<()> {
        if !(self.v_d > params.source_amplitude) {
            return Err(crate::PfcError::InvalidParameter(format!(
                "V_d = {} must exceed the source amplitude {} in boost operation",
                self.v_d, params.source_amplitude
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerMode {
    /// Internal-model law with measured input voltage and current.
    Im,
    /// Certainty-equivalent law fed by the estimator.
    Ce,
}

impl ControllerMode {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerMode::Im => "IM",
            ControllerMode::Ce => "CE",
        }
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = crate::PfcError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "im" => Ok(ControllerMode::Im),
            "ce" | "im+estimator" => Ok(ControllerMode::Ce),
            other => Err(crate::PfcError::InvalidParameter(format!("unknown controller mode `{other}`"))),
        }
    }
}

/// Reference current `I₀ sin(ωt + ρ)` and its time derivative.
pub fn desired_current(t: f64, params: &PlantParams, v_d: f64) -> (f64, f64) {
    let i0 = minimum_current(params, v_d);
    let (s, c) = (params.omega * t + params.source_phase).sin_cos();
    (i0 * s, i0 * params.omega * c)
}

/// `e = v_i - L di_d/dt - k (i_d - i) - u v`.
pub fn im_error(i: f64, v: f64, u: f64, t: f64, params: &PlantParams, gains: &ControllerGains, v_d: f64) -> f64 {
    let (i_d, di_d) = desired_current(t, params, v_d);
    input_voltage(t, params) - params.inductance * di_d - gains.k * (i_d - i) - u * v
}

/// Controllable-canonical realization of `gain·(s² + a s + b)/(s² + ω²)`.
/// Returns the state derivative and the filter output.
pub fn resonant_filter_step(
    x: &Vector2<f64>,
    e_in: f64,
    gain: f64,
    gains: &ControllerGains,
    omega: f64,
) -> (Vector2<f64>, f64) {
    let w2 = omega * omega;
    let dx = Vector2::new(x.y, -w2 * x.x + e_in);
    let out = gain * ((gains.b - w2) * x.x + gains.a * x.y + e_in);
    (dx, out)
}

/// Duty rate plus whether the low-voltage guard fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRate {
    pub u_dot: f64,
    pub guarded: bool,
}

fn duty_rate(u: f64, current: f64, v: f64, w: f64, params: &PlantParams) -> ControlRate {
    if v <= V_FLOOR {
        return ControlRate { u_dot: 0.0, guarded: true };
    }
    ControlRate { u_dot: (-(u * u / params.capacitance) * current + w) / v, guarded: false }
}

pub fn im_control_derivative(ctrl: &ControllerState, i: f64, v: f64, w: f64, params: &PlantParams) -> ControlRate {
    duty_rate(ctrl.u, i, v, w, params)
}

/// Amplitude `q̂` and phase `φ̂` of the feed-forward part of the scaled error.
pub fn ce_feedforward(e_hat: f64, params: &PlantParams, gains: &ControllerGains, v_d: f64) -> (f64, f64) {
    let p = 2.0 * params.conductance * v_d * v_d;
    let num = e_hat * e_hat - gains.k * p;
    let den = -p * params.inductance * params.omega;
    (num.hypot(den), num.atan2(den))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeError {
    pub value: f64,
    /// Set when `Ê ≤ E_FLOOR`; the phase estimate is then taken as 0.
    pub phase_indeterminate: bool,
}

/// Estimate of `E·e`: `q̂ cos(ωt + ρ̂ - φ̂) - Ê (u v - k î)`.
pub fn ce_error(
    est: &EstimateBundle,
    v: f64,
    u: f64,
    t: f64,
    params: &PlantParams,
    gains: &ControllerGains,
    v_d: f64,
) -> CeError {
    let (q, phi) = ce_feedforward(est.e_hat, params, gains, v_d);
    let indeterminate = est.e_hat <= E_FLOOR || est.rho_hat.is_none();
    let rho = if indeterminate { 0.0 } else { est.rho_hat.unwrap_or(0.0) };
    CeError {
        value: q * (params.omega * t + rho - phi).cos() - est.e_hat * (u * v - gains.k * est.i_hat),
        phase_indeterminate: indeterminate,
    }
}

pub fn ce_control_derivative(
    ctrl: &ControllerState,
    est: &EstimateBundle,
    v: f64,
    w_hat: f64,
    params: &PlantParams,
) -> ControlRate {
    duty_rate(ctrl.u, est.i_hat, v, w_hat, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::ThetaVector;
    use approx::assert_relative_eq;
    use nalgebra::{Complex, Matrix2};
    use std::f64::consts::{FRAC_PI_2, PI};

    const I0: f64 = 6.130_268_199_233_716;

    fn bundle(i_hat: f64, e: f64, rho: f64) -> EstimateBundle {
        let theta = ThetaVector::from_source(e, rho);
        EstimateBundle { i_hat, theta_hat: theta, rho_hat: theta.phase(), e_hat: theta.amplitude() }
    }

    #[test]
    fn desired_current_examples() {
        let p = PlantParams::ideal();
        let t_peak = (FRAC_PI_2 - p.source_phase) / p.omega;
        assert_relative_eq!(desired_current(t_peak, &p, 200.0).0, I0, max_relative = 1e-12);
        let t0 = (2.0 * PI - p.source_phase) / p.omega;
        let (i_d, di) = desired_current(t0, &p, 200.0);
        assert!(i_d.abs() < 1e-12);
        assert_relative_eq!(di, I0 * p.omega, max_relative = 1e-12);
        assert_relative_eq!(
            desired_current(t_peak, &p, 400.0).0,
            4.0 * desired_current(t_peak, &p, 200.0).0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn im_error_examples() {
        let p = PlantParams::ideal();
        let g = ControllerGains::default();
        // exact tracking: uv from the steady-state current balance at Δρ = 0
        for n in 0..20 {
            let t = n as f64 * 1e-3;
            let (i_d, _) = desired_current(t, &p, 200.0);
            let psi = p.omega * t + p.source_phase;
            let uv = p.source_amplitude * psi.sin() - p.inductance * p.omega * I0 * psi.cos();
            let e = im_error(i_d, 200.0, uv / 200.0, t, &p, &g, 200.0);
            assert!(e.abs() < 1e-9, "{e}");
        }
        let t_peak = (FRAC_PI_2 - p.source_phase) / p.omega;
        let (i_d, di) = desired_current(t_peak, &p, 200.0);
        let e = im_error(i_d, 200.0, 0.0, t_peak, &p, &g, 200.0);
        assert_relative_eq!(e, 150.0 - p.inductance * di, epsilon = 1e-9);
        let g0 = ControllerGains { k: 0.0, ..g };
        assert_eq!(im_error(1.0, 200.0, 0.3, 0.01, &p, &g0, 200.0), im_error(-4.0, 200.0, 0.3, 0.01, &p, &g0, 200.0));
    }

    #[test]
    fn filter_zero_input_zero_output() {
        let g = ControllerGains::default();
        let (dx, w) = resonant_filter_step(&Vector2::zeros(), 0.0, g.c, &g, 100.0 * PI);
        assert_eq!((dx, w), (Vector2::zeros(), 0.0));
    }

    #[test]
    fn filter_dc_gain() {
        // constant unit input from rest: period-average of w = gain·b/ω²
        let g = ControllerGains::default();
        let w = 100.0 * PI;
        let n = 20_000;
        let h = 2.0 * PI / w / n as f64;
        let mut x = [0.0, 0.0];
        let mut acc = 0.0;
        for _ in 0..n {
            let out = |x: &[f64; 2]| resonant_filter_step(&Vector2::new(x[0], x[1]), 1.0, 1.0, &g, w).1;
            let before = out(&x);
            x = crate::ode::rk4_step(
                |_, x: &[f64; 2]| {
                    let (dx, _) = resonant_filter_step(&Vector2::new(x[0], x[1]), 1.0, 1.0, &g, w);
                    [dx.x, dx.y]
                },
                0.0,
                &x,
                h,
            );
            acc += 0.5 * (before + out(&x)) * h;
        }
        let mean = acc * w / (2.0 * PI);
        assert_relative_eq!(mean, g.b / (w * w), max_relative = 1e-8);
        assert_relative_eq!(g.b / (w * w), 2.026_423_672_846_755, max_relative = 1e-12);
    }

    #[test]
    fn filter_transfer_function() {
        // C (sI - A)⁻¹ B + D of the realization vs the rational function
        let g = ControllerGains::default();
        let w = 100.0 * PI;
        let a = Matrix2::new(0.0, 1.0, -w * w, 0.0);
        for f in [1.0, 20.0, 49.0, 51.0, 150.0, 1000.0] {
            let s = Complex::new(0.0, 2.0 * PI * f);
            let m = Matrix2::from_fn(|r, c| {
                Complex::new(if r == c { 1.0 } else { 0.0 }, 0.0) * s - Complex::new(a[(r, c)], 0.0)
            });
            let inv = m.try_inverse().unwrap();
            let bvec = [Complex::new(0.0, 0.0), Complex::new(1.0, 0.0)];
            let cvec = [Complex::new(g.b - w * w, 0.0), Complex::new(g.a, 0.0)];
            let mut h = Complex::new(1.0, 0.0);
            for r in 0..2 {
                for c in 0..2 {
                    h += cvec[r] * inv[(r, c)] * bvec[c];
                }
            }
            let rational = (s * s + s * g.a + g.b) / (s * s + w * w);
            assert!((h - rational).norm() < 1e-9 * rational.norm(), "f = {f}");
        }
    }

    #[test]
    fn filter_resonance_grows_linearly() {
        // input sin ωt: x₁ = (sin ωt - ωt cos ωt)/(2ω²)
        let g = ControllerGains::default();
        let w = 100.0 * PI;
        let h = 1e-6;
        let steps = 100_000;
        let x = crate::ode::integrate(
            |t, x: &[f64; 2]| {
                let (dx, _) = resonant_filter_step(&Vector2::new(x[0], x[1]), (w * t).sin(), 1.0, &g, w);
                [dx.x, dx.y]
            },
            0.0,
            [0.0, 0.0],
            h,
            steps,
        );
        let t = h * steps as f64;
        let exact = ((w * t).sin() - w * t * (w * t).cos()) / (2.0 * w * w);
        assert_relative_eq!(x[0], exact, max_relative = 1e-8);
    }

    #[test]
    fn duty_rate_examples() {
        let p = PlantParams::ideal();
        let ctrl = ControllerState { u: 0.6, x: Vector2::zeros() };
        let i = 4.0;
        let balance = ctrl.u * ctrl.u / p.capacitance * i;
        assert!(im_control_derivative(&ctrl, i, 200.0, balance, &p).u_dot.abs() < 1e-12);
        let r = im_control_derivative(&ControllerState::default(), 0.0, 100.0, 1.0, &p);
        assert_relative_eq!(r.u_dot, 0.01);
        let lo = im_control_derivative(&ctrl, i, 200.0, 10.0, &p).u_dot;
        let hi = im_control_derivative(&ctrl, i, 200.0, 20.0, &p).u_dot;
        assert!(hi > lo);
        let g = im_control_derivative(&ctrl, i, 0.5, 10.0, &p);
        assert!(g.guarded && g.u_dot == 0.0);
    }

    #[test]
    fn ce_rate_examples() {
        let p = PlantParams::ideal();
        let ctrl = ControllerState { u: 0.4, x: Vector2::zeros() };
        let est = bundle(3.0, 150.0, 1.0);
        assert_eq!(
            ce_control_derivative(&ctrl, &est, 190.0, 55.0, &p),
            im_control_derivative(&ctrl, 3.0, 190.0, 55.0, &p)
        );
        let zero = ControllerState::default();
        assert_relative_eq!(ce_control_derivative(&zero, &est, 190.0, 55.0, &p).u_dot, 55.0 / 190.0);
        let cold = bundle(0.0, 0.0, 0.0);
        assert_eq!(ce_control_derivative(&zero, &cold, 100.0, 0.0, &p).u_dot, 0.0);
    }

    #[test]
    fn feedforward_examples() {
        let p = PlantParams::ideal();
        let g = ControllerGains::default();
        let (q, _) = ce_feedforward(150.0, &p, &g, 200.0);
        assert_relative_eq!(q, 8_728.611_850_321_151, max_relative = 1e-12);
        let pw = 2.0 * p.conductance * 200.0 * 200.0;
        let e_deg = (g.k * pw).sqrt();
        let (q, _) = ce_feedforward(e_deg, &p, &g, 200.0);
        assert_relative_eq!(q, pw * p.inductance * p.omega, max_relative = 1e-9);
        assert_relative_eq!(pw * p.inductance * p.omega, 615.318_836_978_966_4, max_relative = 1e-12);
    }

    #[test]
    fn ce_error_matches_scaled_im_error() {
        let p = PlantParams::ideal();
        let g = ControllerGains::default();
        let n = 200;
        for j in 0..n {
            let t = j as f64 * p.period() / n as f64;
            let (i, v, u) = (
                5.0 * (p.omega * t).cos() + 1.0,
                190.0 + 3.0 * (2.0 * p.omega * t).sin(),
                0.7 * (p.omega * t + 0.3).sin(),
            );
            let est = bundle(i, p.source_amplitude, p.source_phase);
            let ce = ce_error(&est, v, u, t, &p, &g, 200.0);
            assert!(!ce.phase_indeterminate);
            let scaled = p.source_amplitude * im_error(i, v, u, t, &p, &g, 200.0);
            assert!((ce.value - scaled).abs() < 1e-9 * (1.0 + scaled.abs()), "t={t}: {} vs {scaled}", ce.value);
        }
    }

    #[test]
    fn ce_error_cold_start_is_pure_feedforward() {
        let p = PlantParams::ideal();
        let g = ControllerGains::default();
        let cold = bundle(0.0, 0.0, 0.0);
        let ce = ce_error(&cold, 100.0, 0.0, 0.0, &p, &g, 200.0);
        assert!(ce.phase_indeterminate);
        let (q, phi) = ce_feedforward(0.0, &p, &g, 200.0);
        assert_relative_eq!(ce.value, q * (-phi).cos(), max_relative = 1e-14);
        assert!(ce.value.abs() > 0.0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("IM".parse::<ControllerMode>().unwrap(), ControllerMode::Im);
        assert_eq!("ce".parse::<ControllerMode>().unwrap(), ControllerMode::Ce);
        assert!("pid".parse::<ControllerMode>().is_err());
    }

    #[test]
    fn reference_boost_condition() {
        let p = PlantParams::nominal();
        assert!(ReferenceSpec { v_d: 200.0 }.validate(&p).is_ok());
        assert!(ReferenceSpec { v_d: 140.0 }.validate(&p).is_err());
    }
}
