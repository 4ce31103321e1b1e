//! Averaged model of the single-phase full-bridge boost converter.
//!
//! ```text
//! L di/dt = -u v + v_i(t) - r i
//! C dv/dt =  u i - G v
//! ```
//!
//! with `v_i(t) = E sin(ωt + ρ)`. Setting `r = 0` gives the ideal plant used
//! by the estimator design.

use crate::error::{PfcError, Result};

/// Electrical constants of the converter and the AC source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Boost inductance L (H).
    pub inductance: f64,
    /// Output capacitance C (F).
    pub capacitance: f64,
    /// Load conductance G (S).
    pub conductance: f64,
    /// AC-source series resistance r (Ω).
    pub source_resistance: f64,
    /// Source amplitude E (V).
    pub source_amplitude: f64,
    /// Line angular frequency ω (rad/s).
    pub omega: f64,
    /// Source phase ρ (rad).
    pub source_phase: f64,
    /// Optional symmetric clamp on the inductor current (A).
    pub current_limit: Option<f64>,
}

impl PlantParams {
    /// Nominal single-phase rig: 150 V / 50 Hz source at 2π/3, L = 2.13 mH,
    /// C = 1100 µF, 87 Ω load, 2 Ω source resistance, 14 A current limiter.
    pub fn nominal() -> Self {
        Self {
            inductance: 2.13e-3,
            capacitance: 1100e-6,
            conductance: 1.0 / 87.0,
            source_resistance: 2.0,
            source_amplitude: 150.0,
            omega: 100.0 * std::f64::consts::PI,
            source_phase: 2.0 * std::f64::consts::FRAC_PI_3,
            current_limit: Some(14.0),
        }
    }

    /// [`PlantParams::nominal`] without source resistance or current limit.
    pub fn ideal() -> Self {
        Self { source_resistance: 0.0, current_limit: None, ..Self::nominal() }
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inductance", self.inductance),
            ("capacitance", self.capacitance),
            ("conductance", self.conductance),
            ("omega", self.omega),
            ("source_amplitude", self.source_amplitude),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PfcError::InvalidParameter(format!("{name} must be finite and > 0, got {value}")));
            }
        }
        if !(self.source_resistance.is_finite() && self.source_resistance >= 0.0) {
            return Err(PfcError::InvalidParameter(format!(
                "source_resistance must be >= 0, got {}",
                self.source_resistance
            )));
        }
        if !self.source_phase.is_finite() {
            return Err(PfcError::InvalidParameter("source_phase must be finite".into()));
        }
        if let Some(lim) = self.current_limit {
            if !(lim.is_finite() && lim > 0.0) {
                return Err(PfcError::InvalidParameter(format!("current_limit must be > 0, got {lim}")));
            }
        }
        Ok(())
    }
}

impl Default for PlantParams {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Inductor current and capacitor voltage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    /// Inductor (input) current, A.
    pub i: f64,
    /// Capacitor (output) voltage, V.
    pub v: f64,
}

impl PlantState {
    pub fn new(i: f64, v: f64) -> Self {
        Self { i, v }
    }

    /// Stored energy ½Li² + ½Cv².
    pub fn energy(&self, params: &PlantParams) -> f64 {
        0.5 * params.inductance * self.i * self.i + 0.5 * params.capacitance * self.v * self.v
    }
}

/// `E sin(ωt + ρ)`.
pub fn input_voltage(t: f64, params: &PlantParams) -> f64 {
    params.source_amplitude * (params.omega * t + params.source_phase).sin()
}

/// Time derivative of the averaged plant under duty `u`.
pub fn plant_derivative(state: PlantState, u: f64, t: f64, params: &PlantParams) -> Result<PlantState> {
    if !(state.i.is_finite() && state.v.is_finite() && u.is_finite() && t.is_finite()) {
        return Err(PfcError::NonFinite("plant_derivative"));
    }
    Ok(plant_derivative_unchecked(state, u, t, params))
}

#[inline]
pub(crate) fn plant_derivative_unchecked(state: PlantState, u: f64, t: f64, params: &PlantParams) -> PlantState {
    let vi = input_voltage(t, params);
    PlantState {
        i: (-u * state.v + vi - params.source_resistance * state.i) / params.inductance,
        v: (u * state.i - params.conductance * state.v) / params.capacitance,
    }
}

/// Clamp the inductor current to `±current_limit`; identity when no limit is set.
pub fn apply_current_limit(state: PlantState, params: &PlantParams) -> PlantState {
    match params.current_limit {
        Some(lim) => PlantState { i: state.i.clamp(-lim, lim), v: state.v },
        None => state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn input_voltage_examples() {
        let mut p = PlantParams::nominal();
        // peak when ωt + ρ = π/2
        let t = (PI / 2.0 - p.source_phase) / p.omega;
        assert_relative_eq!(input_voltage(t, &p), 150.0, epsilon = 1e-12);
        assert_relative_eq!(input_voltage(0.0, &p), 129.903_810_567_665_8, epsilon = 1e-9);
        p.source_phase = 0.0;
        assert_eq!(input_voltage(0.0, &p), 0.0);
    }

    #[test]
    fn derivative_free_decay_example() {
        let p = PlantParams { source_amplitude: 0.0, source_resistance: 0.0, ..PlantParams::nominal() };
        let d = plant_derivative_unchecked(PlantState::new(0.0, 100.0), 0.0, 0.3, &p);
        assert_eq!(d.i, 0.0);
        assert_relative_eq!(d.v, -1_044.932_079_414_838, epsilon = 1e-9);
    }

    #[test]
    fn derivative_zero_drive() {
        let p = PlantParams { source_phase: 0.0, ..PlantParams::nominal() };
        let d = plant_derivative(PlantState::new(0.0, 150.0), 0.0, 0.0, &p).unwrap();
        assert_eq!(d.i, 0.0);
    }

    #[test]
    fn steady_state_current_residual() {
        // i_s = I sin(ψ - Δρ), u_s v_s = E sin ψ - LωI cos(ψ - Δρ) solves L di/dt = -uv + v_i
        let p = PlantParams::ideal();
        let (amp, dr) = (6.2, 0.1);
        for n in 0..50 {
            let t = n as f64 * 3.7e-4;
            let psi = p.omega * t + p.source_phase;
            let di = amp * p.omega * (psi - dr).cos();
            let uv = p.source_amplitude * psi.sin() - p.inductance * p.omega * amp * (psi - dr).cos();
            let residual = p.inductance * di + uv - input_voltage(t, &p);
            assert!(residual.abs() < 1e-11, "{residual}");
        }
    }

    #[test]
    fn non_finite_rejected() {
        let p = PlantParams::nominal();
        assert!(plant_derivative(PlantState::new(f64::NAN, 1.0), 0.0, 0.0, &p).is_err());
        assert!(plant_derivative(PlantState::new(0.0, 1.0), f64::INFINITY, 0.0, &p).is_err());
    }

    #[test]
    fn current_limit_examples() {
        let p = PlantParams::nominal();
        let s = apply_current_limit(PlantState::new(20.0, 3.0), &p);
        assert_eq!((s.i, s.v), (14.0, 3.0));
        assert_eq!(apply_current_limit(PlantState::new(-20.0, 3.0), &p).i, -14.0);
        assert_eq!(apply_current_limit(PlantState::new(5.0, 3.0), &p).i, 5.0);
        assert_eq!(apply_current_limit(PlantState::new(50.0, 3.0), &PlantParams::ideal()).i, 50.0);
    }

    #[test]
    fn validation() {
        assert!(PlantParams::nominal().validate().is_ok());
        let bad = PlantParams { inductance: 0.0, ..PlantParams::nominal() };
        assert!(bad.validate().is_err());
        let bad = PlantParams { source_resistance: -1.0, ..PlantParams::nominal() };
        assert!(bad.validate().is_err());
        let bad = PlantParams { current_limit: Some(0.0), ..PlantParams::nominal() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn free_decay_matches_exponential() {
        let p = PlantParams {
            source_amplitude: 0.0,
            source_resistance: 0.0,
            current_limit: None,
            ..PlantParams::nominal()
        };
        let h = 1e-6;
        let x = crate::ode::integrate(
            |t, x: &[f64; 2]| {
                let d = plant_derivative_unchecked(PlantState::new(x[0], x[1]), 0.0, t, &p);
                [d.i, d.v]
            },
            0.0,
            [0.0, 100.0],
            h,
            100_000,
        );
        let exact = 100.0 * (-p.conductance * 0.1 / p.capacitance).exp();
        assert!(((x[1] - exact) / exact).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn energy_balance(i in -20.0..20.0f64, v in 1.0..400.0f64, u in -1.0..1.0f64,
                          t in 0.0..0.1f64, r in 0.0..5.0f64) {
            let p = PlantParams { source_resistance: r, ..PlantParams::nominal() };
            let s = PlantState::new(i, v);
            let d = plant_derivative_unchecked(s, u, t, &p);
            let power = p.inductance * i * d.i + p.capacitance * v * d.v;
            let expected = input_voltage(t, &p) * i - r * i * i - p.conductance * v * v;
            prop_assert!((power - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        }

        #[test]
        fn affine_in_duty(i in -20.0..20.0f64, v in 1.0..400.0f64, u1 in -1.0..1.0f64,
                          u2 in -1.0..1.0f64, lam in 0.0..1.0f64) {
            let p = PlantParams::nominal();
            let s = PlantState::new(i, v);
            let f = |u| plant_derivative_unchecked(s, u, 0.01, &p);
            let mixed = f(lam * u1 + (1.0 - lam) * u2);
            let (a, b) = (f(u1), f(u2));
            prop_assert!((mixed.i - (lam * a.i + (1.0 - lam) * b.i)).abs() < 1e-6);
            prop_assert!((mixed.v - (lam * a.v + (1.0 - lam) * b.v)).abs() < 1e-6);
        }
    }
}
