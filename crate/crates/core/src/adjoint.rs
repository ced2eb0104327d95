//! Discrete adjoint (backpropagation) for the Euler-discretized network.
//!
//! With `u_i = h * lambda * (sigma'(W_i x_i + b_i) ⊙ z_{i+1})` the sweep is
//!
//! ```text
//! z_N = d loss / d x_N
//! z_i = z_{i+1} + W_i^T u_i
//! ```
//!
//! and the coefficient gradients follow from linearity of `W(t_i)` in the
//! coefficients: `d omega_l += B^d_l(t_i) u_i x_i^T`, `d beta_l += B^d_l(t_i) u_i`.
//! When `lambda` is learnable, `d lambda += h <sigma(W_i x_i + b_i), z_{i+1}>`.
//!
//! Two accumulation orders are provided: per-step gradients summed onto the
//! coefficients after the sweep, or added onto the coefficients as the sweep
//! passes each step.

use serde::{Deserialize, Serialize};

use crate::control::{ControlParams, Schedule, TimeGrid};
use crate::dynamics::{propagate_layers, Activation, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{hadamard, Matrix, Vector};
use crate::train::loss::{LossKind, Target};

/// Gradient with the same shapes as [`ControlParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_omega: Vec<Matrix>,
    pub d_beta: Vec<Vector>,
    pub d_lambda: f64,
}

impl Gradients {
    pub fn zeros_like(params: &ControlParams) -> Self {
        Gradients {
            d_omega: params
                .omega
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            d_beta: params.beta.iter().map(|b| Vector::zeros(b.len())).collect(),
            d_lambda: 0.0,
        }
    }

    /// Adds the Tikhonov term gradient `2 gamma theta`.
    pub fn add_regularization(&mut self, params: &ControlParams, gamma: f64) {
        if gamma == 0.0 {
            return;
        }
        for (g, w) in self.d_omega.iter_mut().zip(&params.omega) {
            g.axpy(2.0 * gamma, w).expect("gradient shape");
        }
        for (g, b) in self.d_beta.iter_mut().zip(&params.beta) {
            g.axpy(2.0 * gamma, b).expect("gradient shape");
        }
    }

    /// Flattened in the order of [`ControlParams::to_flat`].
    pub fn to_flat(&self, lambda_learnable: bool) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.d_omega {
            out.extend_from_slice(w.as_slice());
        }
        for b in &self.d_beta {
            out.extend_from_slice(b.as_slice());
        }
        if lambda_learnable {
            out.push(self.d_lambda);
        }
        out
    }
}

/// Order in which per-step contributions reach the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// Collect `d W_i, d b_i` per step, then sum onto coefficients.
    AfterSweep,
    /// Add onto the active coefficients at every step of the sweep.
    DuringSweep,
}

pub fn seed_adjoint(x_n: &Vector, target: &Target, loss: LossKind) -> Result<Vector> {
    loss.gradient(x_n, target)
}

/// `z = z_next + h lambda W^T (sigma'(W x + b) ⊙ z_next)`
pub fn adjoint_step(
    z_next: &Vector,
    x: &Vector,
    w: &Matrix,
    b: &Vector,
    h: f64,
    lambda: f64,
    act: Activation,
) -> Result<Vector> {
    let mut pre = crate::linalg::matvec(w, x)?;
    pre.axpy(1.0, b)?;
    let u = scaled_sensitivity(z_next, &pre, h * lambda, act)?;
    let mut z = z_next.clone();
    z.axpy(1.0, &w.tr_matvec(&u)?)?;
    Ok(z)
}

fn scaled_sensitivity(z_next: &Vector, pre: &Vector, scale: f64, act: Activation) -> Result<Vector> {
    Ok(hadamard(&act.apply_deriv(pre), z_next)?.scaled(scale))
}

/// Per-step sensitivities `d loss / d W_i`, `d loss / d b_i` (before any
/// antisymmetric transform), plus the `lambda` derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub d_w: Vec<Matrix>,
    pub d_b: Vec<Vector>,
    pub d_lambda: f64,
}

impl StepGradients {
    pub fn zeros(steps: usize, width: usize) -> Self {
        StepGradients {
            d_w: vec![Matrix::zeros(width, width); steps],
            d_b: vec![Vector::zeros(width); steps],
            d_lambda: 0.0,
        }
    }
}

/// Everything the sweep needs about the network besides its coefficients.
#[derive(Debug, Clone, Copy)]
pub struct SweepContext<'a> {
    pub params: &'a ControlParams,
    pub schedule: &'a Schedule,
    pub layers: &'a [(Matrix, Vector)],
    pub grid: &'a TimeGrid,
    pub activation: Activation,
}

impl<'a> SweepContext<'a> {
    fn check(&self, traj: &Trajectory) -> Result<()> {
        let n = self.grid.steps();
        if traj.states.len() != n + 1 || self.layers.len() != n || self.schedule.steps() != n {
            return Err(Error::DimensionMismatch {
                op: "adjoint sweep",
                expected: n + 1,
                got: traj.states.len(),
            });
        }
        Ok(())
    }
}

/// Runs the adjoint sweep for one sample, adding its per-step gradients to `acc`.
pub fn backprop_steps(
    ctx: &SweepContext<'_>,
    traj: &Trajectory,
    z_n: Vector,
    acc: &mut StepGradients,
) -> Result<()> {
    ctx.check(traj)?;
    let h = ctx.grid.h();
    let lambda = ctx.params.lambda.value;
    let mut z = z_n;
    for i in (0..ctx.grid.steps()).rev() {
        let pre = &traj.pre_activations[i];
        let x = &traj.states[i];
        if ctx.params.lambda.learnable {
            acc.d_lambda += h * ctx.activation.apply(pre).dot(&z)?;
        }
        let u = scaled_sensitivity(&z, pre, h * lambda, ctx.activation)?;
        add_outer(&mut acc.d_w[i], &u, x);
        acc.d_b[i].axpy(1.0, &u)?;
        let back = ctx.layers[i].0.tr_matvec(&u)?;
        z.axpy(1.0, &back)?;
    }
    Ok(())
}

/// Sums per-step gradients onto the coefficients through the basis weights.
pub fn project_steps(ctx: &SweepContext<'_>, steps: &StepGradients) -> Gradients {
    let mut grads = Gradients::zeros_like(ctx.params);
    for i in (0..steps.d_w.len()).rev() {
        let gw = effective_weight_gradient(ctx.params, &steps.d_w[i]);
        for &(p, coef) in ctx.schedule.row(i) {
            grads.d_omega[p].axpy(coef, &gw).expect("gradient shape");
            grads.d_beta[p].axpy(coef, &steps.d_b[i]).expect("gradient shape");
        }
    }
    grads.d_lambda = steps.d_lambda;
    grads
}

/// Adjoint sweep for one sample accumulating straight into coefficient gradients.
pub fn backprop_coefficients(
    ctx: &SweepContext<'_>,
    traj: &Trajectory,
    z_n: Vector,
    grads: &mut Gradients,
) -> Result<()> {
    ctx.check(traj)?;
    let h = ctx.grid.h();
    let lambda = ctx.params.lambda.value;
    let m = ctx.params.width;
    let mut z = z_n;
    for i in (0..ctx.grid.steps()).rev() {
        let pre = &traj.pre_activations[i];
        let x = &traj.states[i];
        if ctx.params.lambda.learnable {
            grads.d_lambda += h * ctx.activation.apply(pre).dot(&z)?;
        }
        let u = scaled_sensitivity(&z, pre, h * lambda, ctx.activation)?;
        let mut gw = Matrix::zeros(m, m);
        add_outer(&mut gw, &u, x);
        let gw = effective_weight_gradient(ctx.params, &gw);
        for &(p, coef) in ctx.schedule.row(i) {
            grads.d_omega[p].axpy(coef, &gw)?;
            grads.d_beta[p].axpy(coef, &u)?;
        }
        let back = ctx.layers[i].0.tr_matvec(&u)?;
        z.axpy(1.0, &back)?;
    }
    Ok(())
}

// W = A - A^T - gamma I  =>  dL/dA = G - G^T
fn effective_weight_gradient(params: &ControlParams, g: &Matrix) -> Matrix {
    if params.antisymmetric {
        g.sub(&g.transpose()).expect("square gradient")
    } else {
        g.clone()
    }
}

fn add_outer(target: &mut Matrix, a: &Vector, b: &Vector) {
    let cols = target.cols();
    let data = target.as_mut_slice();
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            data[i * cols + j] += ai * bj;
        }
    }
}

/// A labelled sample already lifted to the network width.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x0: Vector,
    pub target: Target,
}

/// Network settings that stay fixed while the coefficients are optimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub grid: TimeGrid,
    pub activation: Activation,
    pub loss: LossKind,
    pub gamma: f64,
}

/// `gamma * (sum ||omega_l||_F^2 + sum ||beta_l||^2)`
pub fn regularizer(params: &ControlParams, gamma: f64) -> f64 {
    gamma * params.coefficient_norm_sq()
}

impl Objective {
    /// Mean data loss over `samples` (no regularization).
    pub fn data_loss(&self, params: &ControlParams, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let layers = params.layers(&params.schedule(&self.grid)?);
        let mut total = 0.0;
        for s in samples {
            let traj = propagate_layers(s.x0.clone(), &layers, &self.grid, params.lambda.value, self.activation)?;
            total += self.loss.value(traj.output(), &s.target)?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Mean data loss plus regularization.
    pub fn value(&self, params: &ControlParams, samples: &[Sample]) -> Result<f64> {
        Ok(self.data_loss(params, samples)? + regularizer(params, self.gamma))
    }

    /// Objective value and gradient over `samples`.
    pub fn value_and_gradient(
        &self,
        params: &ControlParams,
        samples: &[Sample],
        accumulation: Accumulation,
    ) -> Result<(f64, Gradients)> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let schedule = params.schedule(&self.grid)?;
        let layers = params.layers(&schedule);
        let ctx = SweepContext {
            params,
            schedule: &schedule,
            layers: &layers,
            grid: &self.grid,
            activation: self.activation,
        };
        let inv_n = 1.0 / samples.len() as f64;
        let mut total = 0.0;
        let mut steps = StepGradients::zeros(self.grid.steps(), params.width);
        let mut coeff = Gradients::zeros_like(params);
        for s in samples {
            let traj = propagate_layers(s.x0.clone(), &layers, &self.grid, params.lambda.value, self.activation)?;
            total += self.loss.value(traj.output(), &s.target)?;
            let z_n = seed_adjoint(traj.output(), &s.target, self.loss)?.scaled(inv_n);
            match accumulation {
                Accumulation::AfterSweep => backprop_steps(&ctx, &traj, z_n, &mut steps)?,
                Accumulation::DuringSweep => backprop_coefficients(&ctx, &traj, z_n, &mut coeff)?,
            }
        }
        let mut grads = match accumulation {
            Accumulation::AfterSweep => project_steps(&ctx, &steps),
            Accumulation::DuringSweep => coeff,
        };
        grads.add_regularization(params, self.gamma);
        Ok((total * inv_n + regularizer(params, self.gamma), grads))
    }
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub epsilon: f64,
    /// `max |g_analytic - g_fd| / max(1, |g_fd|)`
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub d_lambda: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Central finite differences of the objective over every trainable scalar.
pub fn finite_difference_gradient(
    objective: &Objective,
    params: &ControlParams,
    samples: &[Sample],
    epsilon: f64,
) -> Result<Vec<f64>> {
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut flat = base.clone();
    for k in 0..base.len() {
        flat[k] = base[k] + epsilon;
        probe.set_flat(&flat)?;
        let up = objective.value(&probe, samples)?;
        flat[k] = base[k] - epsilon;
        probe.set_flat(&flat)?;
        let down = objective.value(&probe, samples)?;
        flat[k] = base[k];
        out.push((up - down) / (2.0 * epsilon));
    }
    Ok(out)
}

/// Largest scaled discrepancy and where it occurs.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(k, (a, n))| ((a - n).abs() / n.abs().max(1.0), k))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

pub fn gradient_check(
    objective: &Objective,
    params: &ControlParams,
    samples: &[Sample],
    epsilon: f64,
) -> Result<GradCheckReport> {
    if !(1e-8..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {epsilon} outside [1e-8, 1e-4]"
        )));
    }
    let (_, grads) = objective.value_and_gradient(params, samples, Accumulation::DuringSweep)?;
    let analytic = grads.to_flat(params.lambda.learnable);
    let numeric = finite_difference_gradient(objective, params, samples, epsilon)?;
    let (max_rel_error, worst_index) = compare_gradients(&analytic, &numeric);
    Ok(GradCheckReport {
        n_params: analytic.len(),
        epsilon,
        max_rel_error,
        worst_index,
        d_lambda: grads.d_lambda,
        analytic,
        numeric,
    })
}
