//! Output losses and their gradients with respect to the final state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `1/2 (mean(x_N) - y)^2`
    AveragedMse,
    /// `-log softmax(x_N)_k`
    SoftmaxCrossEntropy,
}

/// A supervision target: a scalar for regression or a class index (one-hot
/// over the network width) for classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Scalar(f64),
    Class(usize),
}

impl Target {
    pub fn one_hot(&self, width: usize) -> Result<Vector> {
        match *self {
            Target::Class(k) if k < width => {
                let mut v = Vector::zeros(width);
                v[k] = 1.0;
                Ok(v)
            }
            Target::Class(k) => Err(Error::InvalidArgument(format!(
                "class {k} outside width {width}"
            ))),
            Target::Scalar(_) => Err(Error::InvalidArgument(
                "scalar target has no one-hot form".into(),
            )),
        }
    }
}

pub fn loss_averaged_mse(x: &Vector, y: f64) -> f64 {
    let r = x.mean() - y;
    0.5 * r * r
}

pub fn softmax(x: &Vector) -> Vector {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = x.map(|v| (v - max).exp());
    let total: f64 = exp.iter().sum();
    exp.scaled(1.0 / total)
}

/// Cross entropy of `softmax(x)` against a one-hot target, via log-sum-exp.
pub fn loss_softmax_xent(x: &Vector, one_hot: &Vector) -> Result<f64> {
    let k = one_hot_class(one_hot)?;
    if one_hot.len() != x.len() {
        return Err(Error::DimensionMismatch {
            op: "loss_softmax_xent",
            expected: x.len(),
            got: one_hot.len(),
        });
    }
    Ok(log_sum_exp(x) - x[k])
}

fn log_sum_exp(x: &Vector) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn one_hot_class(v: &Vector) -> Result<usize> {
    let ones: Vec<usize> = v
        .iter()
        .enumerate()
        .filter(|(_, &x)| x == 1.0)
        .map(|(i, _)| i)
        .collect();
    let zeros = v.iter().filter(|&&x| x == 0.0).count();
    match ones.as_slice() {
        [k] if zeros + 1 == v.len() => Ok(*k),
        _ => Err(Error::InvalidArgument("target is not one-hot".into())),
    }
}

impl LossKind {
    pub fn value(self, x: &Vector, target: &Target) -> Result<f64> {
        match (self, target) {
            (LossKind::AveragedMse, Target::Scalar(y)) => Ok(loss_averaged_mse(x, *y)),
            (LossKind::SoftmaxCrossEntropy, Target::Class(k)) => {
                if *k >= x.len() {
                    return Err(Error::InvalidArgument(format!("class {k} outside width")));
                }
                Ok(log_sum_exp(x) - x[*k])
            }
            _ => Err(mismatch(self)),
        }
    }

    /// `d loss / d x_N`, the seed of the adjoint sweep.
    pub fn gradient(self, x: &Vector, target: &Target) -> Result<Vector> {
        match (self, target) {
            (LossKind::AveragedMse, Target::Scalar(y)) => {
                let r = x.mean() - y;
                Ok(Vector::filled(x.len(), r / x.len() as f64))
            }
            (LossKind::SoftmaxCrossEntropy, Target::Class(k)) => {
                let mut g = softmax(x);
                if *k >= x.len() {
                    return Err(Error::InvalidArgument(format!("class {k} outside width")));
                }
                g[*k] -= 1.0;
                Ok(g)
            }
            _ => Err(mismatch(self)),
        }
    }
}

fn mismatch(kind: LossKind) -> Error {
    Error::InvalidArgument(format!("target type does not fit loss {kind:?}"))
}
