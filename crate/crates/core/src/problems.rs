//! Desk-scale test problems: `sin(f x)` regression, the Peaks 5-class
//! classification, and the scaled sine used for the time-scale experiment.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::Sample;
use crate::dynamics::{Activation, InputMap};
use crate::error::{Error, Result};
use crate::train::loss::{LossKind, Target};

/// 20/40/60/80% quantiles of the Peaks surface on a 101 x 101 grid over `[-3, 3]^2`.
pub const PEAKS_THRESHOLDS: [f64; 4] = [
    -0.288_759_597_109_082_83,
    0.001_380_531_441_822_519_3,
    0.136_196_561_791_121_16,
    1.269_759_022_432_939_1,
];

pub const PEAKS_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Sin { frequency: f64 },
    Peaks,
    ScaledSine { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub width: usize,
    pub input_map: InputMap,
    pub loss: LossKind,
    pub activation: Activation,
}

impl ProblemSpec {
    pub fn is_classification(&self) -> bool {
        self.loss == LossKind::SoftmaxCrossEntropy
    }
}

/// A problem definition with its training and validation data.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub train: Dataset,
    pub validation: Dataset,
}

impl Problem {
    /// `sin(f x)` on `20 f` grid points; validation uses the midpoints.
    pub fn sin(frequency: f64, n_override: Option<usize>) -> Result<Self> {
        let train = make_sin_dataset(frequency, n_override)?;
        let validation = sin_validation(&train, |x| (frequency * x).sin(), "sin_validation");
        Ok(Problem {
            spec: ProblemSpec {
                kind: ProblemKind::Sin { frequency },
                width: 4,
                input_map: InputMap::Replicate,
                loss: LossKind::AveragedMse,
                activation: Activation::Tanh,
            },
            train,
            validation,
        })
    }

    pub fn peaks(n_train: usize, n_validation: usize, seed: u64, input_map: InputMap) -> Result<Self> {
        if input_map == InputMap::Replicate {
            return Err(Error::InvalidArgument(
                "Peaks inputs are 2-D; use the pad or tile input map".into(),
            ));
        }
        Ok(Problem {
            spec: ProblemSpec {
                kind: ProblemKind::Peaks,
                width: PEAKS_CLASSES,
                input_map,
                loss: LossKind::SoftmaxCrossEntropy,
                activation: Activation::Relu,
            },
            train: make_peaks_dataset(n_train, seed)?,
            validation: make_peaks_dataset(n_validation, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?,
        })
    }

    pub fn scaled_sine(amplitude: f64, frequency: f64, n_override: Option<usize>) -> Result<Self> {
        let train = make_scaled_sine_dataset(amplitude, frequency, n_override)?;
        let validation = sin_validation(&train, |x| amplitude * (frequency * x).sin(), "scaled_sine_validation");
        Ok(Problem {
            spec: ProblemSpec {
                kind: ProblemKind::ScaledSine { amplitude, frequency },
                width: 4,
                input_map: InputMap::Replicate,
                loss: LossKind::AveragedMse,
                activation: Activation::Tanh,
            },
            train,
            validation,
        })
    }

    /// Lifts a dataset to network-width initial states.
    pub fn samples(&self, data: &Dataset) -> Result<Vec<Sample>> {
        data.inputs
            .iter()
            .zip(&data.targets)
            .map(|(x, t)| {
                Ok(Sample {
                    x0: self.spec.input_map.apply(x, self.spec.width)?,
                    target: *t,
                })
            })
            .collect()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `20 f` (or `n_override`) equally spaced points on `[-pi, pi]`, endpoints included.
pub fn make_sin_dataset(frequency: f64, n_override: Option<usize>) -> Result<Dataset> {
    make_sine_grid(1.0, frequency, n_override, "sin")
}

pub fn make_scaled_sine_dataset(amplitude: f64, frequency: f64, n_override: Option<usize>) -> Result<Dataset> {
    if !(amplitude > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "amplitude must be positive, got {amplitude}"
        )));
    }
    make_sine_grid(amplitude, frequency, n_override, "scaled_sine")
}

fn make_sine_grid(amplitude: f64, frequency: f64, n_override: Option<usize>, name: &str) -> Result<Dataset> {
    if !(frequency > 0.0 && frequency.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "frequency must be positive, got {frequency}"
        )));
    }
    let n = n_override.unwrap_or((20.0 * frequency).round() as usize);
    if n < 2 {
        return Err(Error::InvalidArgument("sine dataset needs at least 2 points".into()));
    }
    let xs = linspace(-PI, PI, n);
    Ok(Dataset {
        name: name.to_string(),
        targets: xs
            .iter()
            .map(|&x| Target::Scalar(amplitude * (frequency * x).sin()))
            .collect(),
        inputs: xs.into_iter().map(|x| vec![x]).collect(),
        seed: None,
    })
}

fn sin_validation(train: &Dataset, f: impl Fn(f64) -> f64, name: &str) -> Dataset {
    let xs: Vec<f64> = train
        .inputs
        .windows(2)
        .map(|w| 0.5 * (w[0][0] + w[1][0]))
        .collect();
    Dataset {
        name: name.to_string(),
        targets: xs.iter().map(|&x| Target::Scalar(f(x))).collect(),
        inputs: xs.into_iter().map(|x| vec![x]).collect(),
        seed: None,
    }
}

/// The classical "peaks" surface.
pub fn peaks_function(x: f64, y: f64) -> f64 {
    3.0 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
        - 10.0 * (x / 5.0 - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
        - (1.0 / 3.0) * (-(x + 1.0).powi(2) - y * y).exp()
}

pub fn peaks_class(x: f64, y: f64) -> usize {
    let p = peaks_function(x, y);
    PEAKS_THRESHOLDS.iter().filter(|&&q| p >= q).count()
}

/// `n` uniform random points in `[-3, 3]^2` labelled by their Peaks band.
pub fn make_peaks_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n < PEAKS_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "Peaks dataset needs at least {PEAKS_CLASSES} points, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.gen_range(-3.0..=3.0);
        let y = rng.gen_range(-3.0..=3.0);
        inputs.push(vec![x, y]);
        targets.push(Target::Class(peaks_class(x, y)));
    }
    Ok(Dataset {
        name: "peaks".to_string(),
        inputs,
        targets,
        seed: Some(seed),
    })
}

/// Quantile thresholds recomputed from the reference grid.
pub fn peaks_reference_thresholds() -> [f64; 4] {
    let grid = linspace(-3.0, 3.0, 101);
    let mut values: Vec<f64> = grid
        .iter()
        .flat_map(|&y| grid.iter().map(move |&x| peaks_function(x, y)))
        .collect();
    values.sort_by(f64::total_cmp);
    [0.2, 0.4, 0.6, 0.8].map(|q| crate::analysis::stats::quantile_sorted(&values, q))
}
