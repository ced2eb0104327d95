//! Forward-Euler error against a fine RK4 solution of the continuous network.

use serde::{Deserialize, Serialize};

use crate::control::{ControlKind, ControlParams, TimeGrid};
use crate::dynamics::{propagate, Activation};
use crate::error::{Error, Result};
use crate::linalg::{matvec, Vector};

pub const REFERENCE_STEP: f64 = 1e-4;

/// Step counts `N` giving `h = 1/25, ..., 1/800`.
pub const DEFAULT_STEPS: [usize; 6] = [25, 50, 100, 200, 400, 800];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub steps: Vec<usize>,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log(error)` against `log(h)`; `None` if any error is zero.
    pub slope: Option<f64>,
    pub reference: String,
    pub reference_steps: usize,
}

impl ConvergenceReport {
    /// `error(h_k) / error(h_{k+1})` for consecutive entries.
    pub fn ratios(&self) -> Vec<f64> {
        self.errors.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

/// Right-hand side `lambda * sigma(W(t) x + b(t))` of the continuous network.
fn rhs(params: &ControlParams, act: Activation, t: f64, x: &Vector) -> Result<Vector> {
    let (w, b) = params.materialize(t)?;
    let mut a = matvec(&w, x)?;
    a.axpy(1.0, &b)?;
    Ok(act.apply(&a).scaled(params.lambda.value))
}

/// Classical fourth-order Runge-Kutta on `[0, 1]` with `steps` uniform steps.
pub fn rk4_reference(params: &ControlParams, x0: &Vector, act: Activation, steps: usize) -> Result<Vector> {
    if steps == 0 {
        return Err(Error::InvalidArgument("RK4 needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.clone();
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        // clamp so rounding never pushes the last stage past t = 1
        let t_half = (t + 0.5 * h).min(1.0);
        let t_next = ((i + 1) as f64 / steps as f64).min(1.0);
        let k1 = rhs(params, act, t, &x)?;
        let mut y = x.clone();
        y.axpy(0.5 * h, &k1)?;
        let k2 = rhs(params, act, t_half, &y)?;
        let mut y = x.clone();
        y.axpy(0.5 * h, &k2)?;
        let k3 = rhs(params, act, t_half, &y)?;
        let mut y = x.clone();
        y.axpy(h, &k3)?;
        let k4 = rhs(params, act, t_next, &y)?;
        x.axpy(h / 6.0, &k1)?;
        x.axpy(h / 3.0, &k2)?;
        x.axpy(h / 3.0, &k3)?;
        x.axpy(h / 6.0, &k4)?;
        if !x.is_finite() {
            return Err(Error::NonFinite { step: i });
        }
    }
    Ok(x)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Euler error `||x_N(h) - x_ref||_2` for each `N` in `steps` (strictly increasing).
pub fn convergence_study(
    params: &ControlParams,
    x0: &Vector,
    act: Activation,
    steps: &[usize],
) -> Result<ConvergenceReport> {
    if let ControlKind::PerLayer { .. } = params.kind {
        return Err(Error::InvalidArgument(
            "convergence study needs a spline control; per-layer controls cannot be re-discretized".into(),
        ));
    }
    if steps.is_empty() || steps.windows(2).any(|w| w[0] >= w[1]) || steps[0] == 0 {
        return Err(Error::InvalidArgument(
            "step counts must be positive and strictly increasing".into(),
        ));
    }
    params.validate()?;
    let reference_steps = (1.0 / REFERENCE_STEP).round() as usize;
    let x_ref = rk4_reference(params, x0, act, reference_steps)?;
    let mut h = Vec::with_capacity(steps.len());
    let mut errors = Vec::with_capacity(steps.len());
    for &n in steps {
        let grid = TimeGrid::reference(n)?;
        let traj = propagate(x0.clone(), params, &grid, act)?;
        h.push(grid.h());
        errors.push(traj.output().sub(&x_ref)?.norm());
    }
    let slope = if errors.iter().all(|&e| e > 0.0) {
        let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
        Some(fit_slope(&lx, &ly))
    } else {
        None
    };
    Ok(ConvergenceReport {
        steps: steps.to_vec(),
        h,
        errors,
        slope,
        reference: format!("rk4, step {REFERENCE_STEP:e}"),
        reference_steps,
    })
}
