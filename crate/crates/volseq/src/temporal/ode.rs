//! Fixed-step ODE integration, generic over the state. The model path
//! integrates tape tensors (gradients flow through every step); tests and
//! validation integrate plain f64 vectors through the same stepping code.

use crate::io::OdeMethod;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeSolverConfig {
    pub method: OdeMethod,
    /// Step size in years.
    pub step_size: f64,
}

impl OdeSolverConfig {
    pub fn new(method: OdeMethod, step_size: f64) -> Result<Self> {
        if !(step_size > 0.0) {
            return Err(Error::Precondition(format!(
                "ODE step size must be positive, got {step_size}"
            )));
        }
        Ok(OdeSolverConfig { method, step_size })
    }
}

/// State vector operations the integrator needs.
pub trait OdeState: Sized + Clone {
    /// self + c * other
    fn add_scaled(&self, other: &Self, c: f64) -> Result<Self>;
    fn is_finite(&self) -> bool;
}

impl OdeState for Vec<f64> {
    fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dim("state length mismatch".into()));
        }
        Ok(self.iter().zip(other).map(|(a, b)| a + c * b).collect())
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for crate::autodiff::Tensor {
    fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        self.add(&other.mul_scalar(c as f32)?)
    }

    fn is_finite(&self) -> bool {
        self.all_finite()
    }
}

fn step<S: OdeState>(
    f: &mut dyn FnMut(f64, &S) -> Result<S>,
    t: f64,
    y: &S,
    h: f64,
    method: OdeMethod,
) -> Result<S> {
    match method {
        OdeMethod::Euler => {
            let k = f(t, y)?;
            y.add_scaled(&k, h)
        }
        OdeMethod::Rk4 => {
            let k1 = f(t, y)?;
            let k2 = f(t + h / 2.0, &y.add_scaled(&k1, h / 2.0)?)?;
            let k3 = f(t + h / 2.0, &y.add_scaled(&k2, h / 2.0)?)?;
            let k4 = f(t + h, &y.add_scaled(&k3, h)?)?;
            y.add_scaled(&k1, h / 6.0)?
                .add_scaled(&k2, h / 3.0)?
                .add_scaled(&k3, h / 3.0)?
                .add_scaled(&k4, h / 6.0)
        }
    }
}

/// Integrate from `(t0, h0)` and return the state at each target time.
/// Targets must be ascending and >= t0; the integrator lands on each
/// exactly (the final step into a target may be shorter than step_size).
pub fn integrate<S: OdeState>(
    f: &mut dyn FnMut(f64, &S) -> Result<S>,
    h0: &S,
    t0: f64,
    targets: &[f64],
    cfg: &OdeSolverConfig,
) -> Result<Vec<S>> {
    let mut last = t0;
    for &s in targets {
        if s < t0 || s < last {
            return Err(Error::Precondition(format!(
                "targets must be ascending and at least t0 = {t0}"
            )));
        }
        last = s;
    }
    let mut out = Vec::with_capacity(targets.len());
    let mut t = t0;
    let mut y = h0.clone();
    for &s in targets {
        while t < s {
            let h = cfg.step_size.min(s - t);
            y = step(f, t, &y, h, cfg.method)?;
            if !y.is_finite() {
                return Err(Error::Numeric(format!(
                    "ODE state became non-finite integrating past t = {t}"
                )));
            }
            t = if s - t <= cfg.step_size { s } else { t + h };
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Evolve a state from one time to another in either direction (used by
/// the ODE-ConvGRU encoder variant, which runs backwards in time).
pub fn evolve<S: OdeState>(
    f: &mut dyn FnMut(f64, &S) -> Result<S>,
    y0: &S,
    from: f64,
    to: f64,
    cfg: &OdeSolverConfig,
) -> Result<S> {
    let mut y = y0.clone();
    let mut t = from;
    let dir = if to >= from { 1.0 } else { -1.0 };
    while (to - t) * dir > 0.0 {
        let h = cfg.step_size.min((to - t).abs()) * dir;
        y = step(f, t, &y, h, cfg.method)?;
        if !y.is_finite() {
            return Err(Error::Numeric(format!(
                "ODE state became non-finite integrating past t = {t}"
            )));
        }
        t = if (to - t).abs() <= cfg.step_size { to } else { t + h };
    }
    Ok(y)
}
