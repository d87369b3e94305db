//! Fixed-step integrators over a flat state vector.

use stvs_core::scenario::Integration;
use stvs_core::Scalar;

use crate::error::SimResult;

/// Classical fourth-order Runge–Kutta step.
pub fn rk4_step<T, F>(t: T, x: &[T], dt: T, f0: Option<Vec<T>>, mut f: F) -> SimResult<Vec<T>>
where
    T: Scalar,
    F: FnMut(T, &[T]) -> SimResult<Vec<T>>,
{
    let half = dt * T::lit(0.5);
    let axpy = |a: T, k: &[T]| -> Vec<T> { x.iter().zip(k).map(|(&xi, &ki)| xi + a * ki).collect() };
    let k1 = match f0 {
        Some(k) => k,
        None => f(t, x)?,
    };
    let k2 = f(t + half, &axpy(half, &k1))?;
    let k3 = f(t + half, &axpy(half, &k2))?;
    let k4 = f(t + dt, &axpy(dt, &k3))?;
    let sixth = dt / T::lit(6.0);
    Ok((0..x.len())
        .map(|i| x[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]))
        .collect())
}

pub const TRAPEZOIDAL_MAX_ITER: usize = 50;

/// Implicit trapezoidal step solved by fixed-point iteration from an
/// explicit Euler predictor.
pub fn trapezoidal_step<T, F>(t: T, x: &[T], dt: T, f0: Option<Vec<T>>, mut f: F) -> SimResult<Vec<T>>
where
    T: Scalar,
    F: FnMut(T, &[T]) -> SimResult<Vec<T>>,
{
    let half = dt * T::lit(0.5);
    let k0 = match f0 {
        Some(k) => k,
        None => f(t, x)?,
    };
    let mut next: Vec<T> = x.iter().zip(&k0).map(|(&xi, &ki)| xi + dt * ki).collect();
    let tol = T::epsilon() * T::lit(16.0);
    for _ in 0..TRAPEZOIDAL_MAX_ITER {
        let k1 = f(t + dt, &next)?;
        let mut change = T::zero();
        for i in 0..x.len() {
            let v = x[i] + half * (k0[i] + k1[i]);
            change = change.max((v - next[i]).abs() / (T::one() + v.abs()));
            next[i] = v;
        }
        if change <= tol {
            break;
        }
    }
    Ok(next)
}

/// One step of the configured scheme. `f0` may carry `f(t, x)` when the
/// caller already has it.
pub fn integrate_step<T, F>(scheme: Integration, t: T, x: &[T], dt: T, f0: Option<Vec<T>>, f: F) -> SimResult<Vec<T>>
where
    T: Scalar,
    F: FnMut(T, &[T]) -> SimResult<Vec<T>>,
{
    match scheme {
        Integration::Rk4 => rk4_step(t, x, dt, f0, f),
        Integration::Trapezoidal => trapezoidal_step(t, x, dt, f0, f),
    }
}
