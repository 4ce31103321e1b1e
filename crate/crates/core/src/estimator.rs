//! Five-state immersion-and-invariance estimator of the input current and of
//! the source parameter vector `θ = [E sin ρ, E cos ρ]ᵀ`, driven only by the
//! output voltage `v`, the duty `u` and its rate `u̇`.
//!
//! The plant is rewritten in the coordinates `η = (ι, θ)` with
//! `ι = i - μᵀθ`, where `μ` is the filtered regressor
//!
//! ```text
//! μ̇ = -k (u/C)² (I + D) μ + φ(t),     φ(t) = (1/L) [cos ωt, sin ωt]ᵀ
//! ```
//!
//! The estimate is `η̂ = ζ + (u/C) k v β(μ)` with `β = [1; ΓDμ]`, and `ζ` is
//! driven so that the error `η̄ = η - η̂` obeys
//!
//! ```text
//! dη̄/dt = -k (u/C)² M(μ) η̄,     M(μ) = [[1, -μᵀD], [ΓDμ, ΓDμμᵀ]]
//! ```
//!
//! which makes `½(ī² + θ̄ᵀΓ⁻¹θ̄)` a Lyapunov function for the estimation error.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{PfcError, Result};
use crate::plant::{PlantParams, PlantState};

/// `θ = [E sin ρ, E cos ρ]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaVector(pub Vector2<f64>);

impl ThetaVector {
    pub fn from_source(amplitude: f64, phase: f64) -> Self {
        let (s, c) = phase.sin_cos();
        Self(Vector2::new(amplitude * s, amplitude * c))
    }

    pub fn of_plant(params: &PlantParams) -> Self {
        Self::from_source(params.source_amplitude, params.source_phase)
    }

    pub fn amplitude(&self) -> f64 {
        self.0.norm()
    }

    /// Source phase in `(-π, π]`, `None` for the zero vector.
    pub fn phase(&self) -> Option<f64> {
        if self.0.x == 0.0 && self.0.y == 0.0 {
            return None;
        }
        let p = self.0.x.atan2(self.0.y);
        Some(if p == -std::f64::consts::PI { std::f64::consts::PI } else { p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorGains {
    /// Scalar injection gain k.
    pub k: f64,
    /// Adaptation gain Γ (symmetric positive definite).
    pub gamma: Matrix2<f64>,
    /// Regressor-filter gain D (symmetric positive definite).
    pub d: Matrix2<f64>,
}

impl Default for EstimatorGains {
    fn default() -> Self {
        Self { k: 2e-4, gamma: Matrix2::identity() * 10.0, d: Matrix2::identity() * 20.0 }
    }
}

fn is_spd(m: &Matrix2<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
        && (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * (1.0 + m.abs().max())
        && m[(0, 0)] > 0.0
        && m.determinant() > 0.0
}

impl EstimatorGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(PfcError::InvalidParameter(format!("estimator k must be > 0, got {}", self.k)));
        }
        if !is_spd(&self.gamma) {
            return Err(PfcError::InvalidParameter("estimator gamma must be symmetric positive definite".into()));
        }
        if !is_spd(&self.d) {
            return Err(PfcError::InvalidParameter("estimator D must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

/// `(ζ₁, ζ₂, μ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub zeta1: f64,
    pub zeta2: Vector2<f64>,
    pub mu: Vector2<f64>,
}

impl Default for EstimatorState {
    fn default() -> Self {
        Self { zeta1: 0.0, zeta2: Vector2::zeros(), mu: Vector2::zeros() }
    }
}

impl EstimatorState {
    pub fn to_array(&self) -> [f64; 5] {
        [self.zeta1, self.zeta2.x, self.zeta2.y, self.mu.x, self.mu.y]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { zeta1: x[0], zeta2: Vector2::new(x[1], x[2]), mu: Vector2::new(x[3], x[4]) }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateBundle {
    pub i_hat: f64,
    pub theta_hat: ThetaVector,
    /// `None` when `θ̂ = 0` (phase indeterminate).
    pub rho_hat: Option<f64>,
    pub e_hat: f64,
}

/// `φ(t) = (1/L) [cos ωt, sin ωt]ᵀ`, so that `v_i(t) = L φᵀθ`.
pub fn regressor(t: f64, params: &PlantParams) -> Vector2<f64> {
    let (s, c) = (params.omega * t).sin_cos();
    Vector2::new(c, s) / params.inductance
}

/// Shared intermediate quantities of the estimator.
struct Readout {
    /// `(u/C) k v`
    injection: f64,
    /// `ΓDμ`
    gdm: Vector2<f64>,
    /// `η̂ = ζ + injection·[1; ΓDμ]`
    eta_hat: Vector3<f64>,
    i_hat: f64,
}

impl Readout {
    fn new(s: &EstimatorState, u: f64, v: f64, params: &PlantParams, gains: &EstimatorGains) -> Self {
        let injection = u / params.capacitance * gains.k * v;
        let gdm = gains.gamma * gains.d * s.mu;
        let theta_hat = s.zeta2 + injection * gdm;
        let iota_hat = s.zeta1 + injection;
        Self {
            injection,
            gdm,
            eta_hat: Vector3::new(iota_hat, theta_hat.x, theta_hat.y),
            i_hat: iota_hat + s.mu.dot(&theta_hat),
        }
    }

    fn theta_hat(&self) -> Vector2<f64> {
        Vector2::new(self.eta_hat.y, self.eta_hat.z)
    }
}

/// `M(μ) x` with `M = [[1, -μᵀD], [ΓDμ, ΓDμμᵀ]]`.
fn error_matrix_apply(x: &Vector3<f64>, mu: &Vector2<f64>, gains: &EstimatorGains) -> Vector3<f64> {
    let theta = Vector2::new(x.y, x.z);
    let gdm = gains.gamma * gains.d * mu;
    let top = x.x - mu.dot(&(gains.d * theta));
    let bottom = gdm * (x.x + mu.dot(&theta));
    Vector3::new(top, bottom.x, bottom.y)
}

pub fn estimator_derivative(
    s: &EstimatorState,
    u: f64,
    u_dot: f64,
    v: f64,
    t: f64,
    params: &PlantParams,
    gains: &EstimatorGains,
) -> Result<EstimatorState> {
    if !(s.is_finite() && u.is_finite() && u_dot.is_finite() && v.is_finite() && t.is_finite()) {
        return Err(PfcError::NonFinite("estimator_derivative"));
    }
    Ok(estimator_derivative_unchecked(s, u, u_dot, v, t, params, gains))
}

pub(crate) fn estimator_derivative_unchecked(
    s: &EstimatorState,
    u: f64,
    u_dot: f64,
    v: f64,
    t: f64,
    params: &PlantParams,
    gains: &EstimatorGains,
) -> EstimatorState {
    let c = params.capacitance;
    let rate = gains.k * (u / c) * (u / c);
    let mu_dot = -rate * (s.mu + gains.d * s.mu) + regressor(t, params);

    let ro = Readout::new(s, u, v, params, gains);
    let damping = -rate * error_matrix_apply(&ro.eta_hat, &s.mu, gains);
    // (k/C) v (G u / C - u̇) β(μ)
    let drift = gains.k / c * v * (params.conductance / c * u - u_dot);
    let mu_rate_term = ro.injection * (gains.gamma * gains.d * mu_dot);

    EstimatorState {
        zeta1: damping.x - u / params.inductance * v + drift,
        zeta2: Vector2::new(damping.y, damping.z) + drift * ro.gdm - mu_rate_term,
        mu: mu_dot,
    }
}

pub fn estimates(s: &EstimatorState, u: f64, v: f64, params: &PlantParams, gains: &EstimatorGains) -> EstimateBundle {
    let ro = Readout::new(s, u, v, params, gains);
    let theta_hat = ThetaVector(ro.theta_hat());
    EstimateBundle { i_hat: ro.i_hat, rho_hat: theta_hat.phase(), e_hat: theta_hat.amplitude(), theta_hat }
}

/// Estimation error `η̄ = (ι - ι̂, θ - θ̂)` against the true plant.
///
/// `[1 μᵀ] η̄` equals the current estimation error `i - î`.
pub fn estimation_error(
    s: &EstimatorState,
    plant: PlantState,
    u: f64,
    params: &PlantParams,
    gains: &EstimatorGains,
) -> Vector3<f64> {
    let theta = ThetaVector::of_plant(params).0;
    let iota = plant.i - s.mu.dot(&theta);
    let ro = Readout::new(s, u, plant.v, params, gains);
    Vector3::new(iota, theta.x, theta.y) - ro.eta_hat
}

/// Right-hand side of the estimation-error dynamics,
/// `-k (u/C)² M(μ) η̄`.
pub fn error_dynamics_rhs(
    eta_bar: &Vector3<f64>,
    u: f64,
    mu: &Vector2<f64>,
    params: &PlantParams,
    gains: &EstimatorGains,
) -> Vector3<f64> {
    let rate = gains.k * (u / params.capacitance).powi(2);
    -rate * error_matrix_apply(eta_bar, mu, gains)
}

/// `½(ī² + θ̄ᵀΓ⁻¹θ̄)`.
pub fn lyapunov_value(eta_bar: &Vector3<f64>, gains: &EstimatorGains) -> f64 {
    let theta = Vector2::new(eta_bar.y, eta_bar.z);
    let inv = gains.gamma.try_inverse().expect("gamma is positive definite");
    0.5 * (eta_bar.x * eta_bar.x + theta.dot(&(inv * theta)))
}

/// Windowed excitation levels of a sampled control signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeReport {
    pub excited: bool,
    /// min over windows of ∫u² dτ.
    pub min_energy: f64,
    /// min over windows of λ_min(∫u² φφᵀ dτ).
    pub min_eigenvalue: f64,
}

/// Persistent-excitation check over every window of length `window` that
/// starts on a sample. Integrals use the trapezoidal rule.
pub fn pe_check(times: &[f64], u: &[f64], window: f64, params: &PlantParams, floor: f64) -> Result<PeReport> {
    if times.len() != u.len() {
        return Err(PfcError::InvalidParameter("times and u differ in length".into()));
    }
    if !(window > 0.0) {
        return Err(PfcError::InvalidParameter(format!("window must be > 0, got {window}")));
    }
    if times.len() < 2 || times[times.len() - 1] - times[0] < window * (1.0 - 1e-9) {
        return Err(PfcError::TraceTooShort(format!("trace shorter than PE window {window} s")));
    }
    // cumulative integrals of u², u²φ₁², u²φ₁φ₂, u²φ₂²
    let n = times.len();
    let mut cum = vec![[0.0f64; 4]; n];
    let integrand = |j: usize| {
        let phi = regressor(times[j], params);
        let w = u[j] * u[j];
        [w, w * phi.x * phi.x, w * phi.x * phi.y, w * phi.y * phi.y]
    };
    let mut prev = integrand(0);
    for j in 1..n {
        let cur = integrand(j);
        let h = times[j] - times[j - 1];
        for m in 0..4 {
            cum[j][m] = cum[j - 1][m] + 0.5 * h * (prev[m] + cur[m]);
        }
        prev = cur;
    }
    let tol = 1e-9 * window;
    let mut min_energy = f64::INFINITY;
    let mut min_eig = f64::INFINITY;
    let mut end = 0;
    for start in 0..n {
        let target = times[start] + window - tol;
        while end < n && times[end] < target {
            end += 1;
        }
        if end == n {
            break;
        }
        let d: Vec<f64> = (0..4).map(|m| cum[end][m] - cum[start][m]).collect();
        min_energy = min_energy.min(d[0]);
        let (a, b, c) = (d[1], d[2], d[3]);
        let eig = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
        min_eig = min_eig.min(eig);
    }
    Ok(PeReport { excited: min_energy > floor && min_eig > floor, min_energy, min_eigenvalue: min_eig })
}
