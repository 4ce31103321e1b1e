//! Fixed-step classical Runge-Kutta over small fixed-size state arrays.

/// One classical 4th-order step of `x' = f(t, x)`.
pub fn rk4_step<const N: usize, F>(mut f: F, t: f64, x: &[f64; N], h: f64) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &axpy(x, 0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &axpy(x, 0.5 * h, &k2));
    let k4 = f(t + h, &axpy(x, h, &k3));
    let mut out = *x;
    for j in 0..N {
        out[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    out
}

fn axpy<const N: usize>(x: &[f64; N], a: f64, y: &[f64; N]) -> [f64; N] {
    let mut out = *x;
    for j in 0..N {
        out[j] += a * y[j];
    }
    out
}

/// Integrate over `steps` fixed steps from `t0`, returning the final state.
pub fn integrate<const N: usize, F>(mut f: F, t0: f64, x0: [f64; N], h: f64, steps: usize) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let mut x = x0;
    for n in 0..steps {
        x = rk4_step(&mut f, t0 + n as f64 * h, &x, h);
    }
    x
}
