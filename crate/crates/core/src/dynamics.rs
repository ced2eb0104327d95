//! Forward-Euler propagation `x_{i+1} = x_i + h * lambda * sigma(W_i x_i + b_i)`.

use serde::{Deserialize, Serialize};

use crate::control::{ControlParams, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{matvec, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative; ReLU uses 0 at the kink.
    pub fn deriv(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn apply(self, v: &Vector) -> Vector {
        v.map(|x| self.eval(x))
    }

    pub fn apply_deriv(self, v: &Vector) -> Vector {
        v.map(|x| self.deriv(x))
    }
}

/// How raw inputs are lifted to the network width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMap {
    /// Every component gets the (scalar) input.
    Replicate,
    /// Inputs in the leading components, zeros after.
    Pad,
    /// Inputs repeated cyclically: `[x, y, x, y, x]`.
    Tile,
}

impl InputMap {
    pub fn apply(self, raw: &[f64], width: usize) -> Result<Vector> {
        match self {
            InputMap::Replicate => match raw {
                [x] => Ok(input_map_replicate(*x, width)),
                _ => Err(Error::InvalidArgument(format!(
                    "replication needs a scalar input, got {} components",
                    raw.len()
                ))),
            },
            InputMap::Pad => input_map_identity(raw, width),
            InputMap::Tile => {
                if raw.is_empty() {
                    return Err(Error::InvalidArgument("empty input".into()));
                }
                Ok(Vector::from(
                    (0..width).map(|j| raw[j % raw.len()]).collect::<Vec<_>>(),
                ))
            }
        }
    }
}

pub fn input_map_replicate(x: f64, width: usize) -> Vector {
    Vector::filled(width, x)
}

/// Copies `raw` into the leading components and zero-pads to `width`.
pub fn input_map_identity(raw: &[f64], width: usize) -> Result<Vector> {
    if raw.len() > width {
        return Err(Error::DimensionMismatch {
            op: "input_map_identity",
            expected: width,
            got: raw.len(),
        });
    }
    let mut v = Vector::zeros(width);
    v.as_mut_slice()[..raw.len()].copy_from_slice(raw);
    Ok(v)
}

/// Cached forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0, ..., x_N`
    pub states: Vec<Vector>,
    /// `W_i x_i + b_i` for `i < N`
    pub pre_activations: Vec<Vector>,
    pub grid: TimeGrid,
}

impl Trajectory {
    pub fn output(&self) -> &Vector {
        self.states.last().expect("trajectory has x_0")
    }
}

/// One Euler step. Returns the new state and the pre-activation `W x + b`.
pub fn step_with_pre(
    x: &Vector,
    w: &Matrix,
    b: &Vector,
    h: f64,
    lambda: f64,
    act: Activation,
) -> Result<(Vector, Vector)> {
    let mut pre = matvec(w, x)?;
    pre.axpy(1.0, b)?;
    let scale = h * lambda;
    let next = Vector::from(
        x.iter()
            .zip(pre.iter())
            .map(|(xi, ai)| xi + scale * act.eval(*ai))
            .collect::<Vec<_>>(),
    );
    Ok((next, pre))
}

/// `x + h * lambda * sigma(W x + b)`; fails on non-finite output.
pub fn step(x: &Vector, w: &Matrix, b: &Vector, h: f64, lambda: f64, act: Activation) -> Result<Vector> {
    let (next, _) = step_with_pre(x, w, b, h, lambda, act)?;
    if !next.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(next)
}

/// Propagates through already materialized layers.
pub fn propagate_layers(
    x0: Vector,
    layers: &[(Matrix, Vector)],
    grid: &TimeGrid,
    lambda: f64,
    act: Activation,
) -> Result<Trajectory> {
    if layers.len() != grid.steps() {
        return Err(Error::DimensionMismatch {
            op: "propagate",
            expected: grid.steps(),
            got: layers.len(),
        });
    }
    let mut states = Vec::with_capacity(layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(layers.len());
    states.push(x0);
    for (i, (w, b)) in layers.iter().enumerate() {
        let (next, pre) = step_with_pre(&states[i], w, b, grid.h(), lambda, act)?;
        if !next.is_finite() {
            return Err(Error::NonFinite { step: i });
        }
        states.push(next);
        pre_activations.push(pre);
    }
    Ok(Trajectory {
        states,
        pre_activations,
        grid: *grid,
    })
}

pub fn propagate(x0: Vector, params: &ControlParams, grid: &TimeGrid, act: Activation) -> Result<Trajectory> {
    if x0.len() != params.width {
        return Err(Error::DimensionMismatch {
            op: "propagate",
            expected: params.width,
            got: x0.len(),
        });
    }
    let layers = params.layers(&params.schedule(grid)?);
    propagate_layers(x0, &layers, grid, params.lambda.value, act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ControlKind, TimeScale};
    use proptest::prelude::*;

    fn spline_params(seed: u64, width: usize, lambda: f64) -> ControlParams {
        ControlParams::init_random(
            ControlKind::Spline { degree: 2, intervals: 5 },
            width,
            seed,
            1.0,
            TimeScale::frozen(lambda),
        )
        .unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eps = 1e-6;
        for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
            for k in 0..50 {
                let mut v = -3.0 + 6.0 * k as f64 / 49.0 + 0.0123;
                if act == Activation::Relu && v.abs() < 1e-3 {
                    v += 0.01;
                }
                let fd = (act.eval(v + eps) - act.eval(v - eps)) / (2.0 * eps);
                assert!((fd - act.deriv(v)).abs() < 1e-6, "{act:?} at {v}");
            }
        }
        assert_eq!(Activation::Relu.deriv(0.0), 0.0);
    }

    #[test]
    fn step_fixed_points() {
        let x = Vector::from(vec![0.3, -1.0, 2.0]);
        let zero_w = Matrix::zeros(3, 3);
        let zero_b = Vector::zeros(3);
        assert_eq!(step(&x, &zero_w, &zero_b, 0.1, 1.0, Activation::Tanh).unwrap(), x);
        let w = Matrix::identity(3);
        let b = Vector::filled(3, 0.5);
        assert_eq!(step(&x, &w, &b, 0.1, 0.0, Activation::Tanh).unwrap(), x);
        let blown = step(&x, &w.scaled(1e300), &b, 1e300, 1e10, Activation::Identity);
        assert!(matches!(blown, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn input_maps() {
        assert_eq!(input_map_replicate(0.5, 4).as_slice(), &[0.5; 4]);
        assert_eq!(input_map_replicate(0.0, 3), Vector::zeros(3));
        assert_eq!(
            input_map_replicate(-std::f64::consts::PI, 1).as_slice(),
            &[-std::f64::consts::PI]
        );
        assert_eq!(
            input_map_identity(&[1.0, 2.0], 5).unwrap().as_slice(),
            &[1.0, 2.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            input_map_identity(&[1.0, 2.0, 3.0], 3).unwrap().as_slice(),
            &[1.0, 2.0, 3.0]
        );
        assert_eq!(input_map_identity(&[0.0, 0.0], 5).unwrap(), Vector::zeros(5));
        assert!(input_map_identity(&[1.0, 2.0, 3.0], 2).is_err());
        assert_eq!(
            InputMap::Tile.apply(&[1.0, 2.0], 5).unwrap().as_slice(),
            &[1.0, 2.0, 1.0, 2.0, 1.0]
        );
        assert!(InputMap::Replicate.apply(&[1.0, 2.0], 5).is_err());
    }

    #[test]
    fn zero_control_keeps_state() {
        let p = ControlParams::zeros(ControlKind::Spline { degree: 1, intervals: 3 }, 4).unwrap();
        let x0 = Vector::from(vec![1.0, -2.0, 0.5, 0.0]);
        let traj = propagate(x0.clone(), &p, &TimeGrid::reference(17).unwrap(), Activation::Tanh).unwrap();
        assert_eq!(traj.states.len(), 18);
        assert!(traj.states.iter().all(|s| *s == x0));
    }

    #[test]
    fn aligned_degree_one_matches_per_layer() {
        let n = 30;
        let spline = ControlParams::init_random(
            ControlKind::Spline { degree: 1, intervals: n },
            4,
            3,
            1.0,
            TimeScale::default(),
        )
        .unwrap();
        let mut per = ControlParams::zeros(ControlKind::PerLayer { layers: n }, 4).unwrap();
        per.omega = spline.omega[..n].to_vec();
        per.beta = spline.beta[..n].to_vec();
        let grid = TimeGrid::reference(n).unwrap();
        let x0 = Vector::from(vec![0.2, -0.4, 0.9, 0.1]);
        let a = propagate(x0.clone(), &spline, &grid, Activation::Tanh).unwrap();
        let b = propagate(x0, &per, &grid, Activation::Tanh).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn deterministic() {
        let p = spline_params(8, 4, 1.3);
        let grid = TimeGrid::reference(64).unwrap();
        let x0 = input_map_replicate(0.7, 4);
        let a = propagate(x0.clone(), &p, &grid, Activation::Tanh).unwrap();
        let b = propagate(x0, &p, &grid, Activation::Tanh).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn width_mismatch() {
        let p = spline_params(1, 4, 1.0);
        assert!(propagate(Vector::zeros(3), &p, &TimeGrid::reference(4).unwrap(), Activation::Tanh).is_err());
    }

    fn rescaled(p: &ControlParams, c: f64) -> ControlParams {
        let mut q = p.clone();
        for w in &mut q.omega {
            *w = w.scaled(c);
        }
        for b in &mut q.beta {
            *b = b.scaled(c);
        }
        q.lambda = TimeScale::frozen(1.0);
        q
    }

    proptest! {
        #[test]
        fn time_scale_equals_weight_scale_for_homogeneous(seed in 0u64..1000, ci in 0usize..2, x in -2.0f64..2.0) {
            let c = [0.5, 2.0][ci];
            let grid = TimeGrid::reference(40).unwrap();
            let p = spline_params(seed, 4, c);
            let q = rescaled(&p, c);
            for act in [Activation::Relu, Activation::Identity] {
                let a = propagate(input_map_replicate(x, 4), &p, &grid, act).unwrap();
                let b = propagate(input_map_replicate(x, 4), &q, &grid, act).unwrap();
                for (sa, sb) in a.states.iter().zip(&b.states) {
                    for (u, v) in sa.iter().zip(sb.iter()) {
                        prop_assert!((u - v).abs() <= 1e-10 * u.abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn time_scale_differs_from_weight_scale_for_tanh(seed in 0u64..1000, ci in 0usize..2) {
            let c = [0.5, 2.0][ci];
            let grid = TimeGrid::reference(40).unwrap();
            let p = spline_params(seed, 4, c);
            let q = rescaled(&p, c);
            let a = propagate(input_map_replicate(0.8, 4), &p, &grid, Activation::Tanh).unwrap();
            let b = propagate(input_map_replicate(0.8, 4), &q, &grid, Activation::Tanh).unwrap();
            let gap = a.output().sub(b.output()).unwrap().norm();
            prop_assert!(gap > 1e-6, "tanh trajectories coincided: {gap}");
        }

        #[test]
        fn tanh_output_bounded_by_time_scale(seed in 0u64..1000, lambda in 0.1f64..20.0, x in -3.0f64..3.0, n in 1usize..80) {
            let p = ControlParams::init_random(
                ControlKind::Spline { degree: 1, intervals: 4 }, 4, seed, 5.0, TimeScale::frozen(lambda),
            ).unwrap();
            let grid = TimeGrid::reference(n).unwrap();
            let traj = propagate(input_map_replicate(x, 4), &p, &grid, Activation::Tanh).unwrap();
            for (xn, x0) in traj.output().iter().zip(traj.states[0].iter()) {
                prop_assert!((xn - x0).abs() <= lambda + 1e-12);
            }
        }
    }
}
