//! Mini-batch training of network controls.

pub mod adam;
pub mod loss;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{Accumulation, Objective, Sample};
use crate::control::{ControlKind, ControlParams, TimeGrid, TimeScale};
use crate::dynamics::{propagate_layers, Activation};
use crate::error::{Error, Result};
use crate::problems::{Dataset, Problem, ProblemKind, ProblemSpec};

use adam::{adam_step, AdamConstants, AdamState};
use loss::{LossKind, Target};

/// How the control is parameterized and discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// `L + d` spline coefficients, `h = 1/N`.
    Splinet { degree: usize, intervals: usize },
    /// One coefficient pair per step, `h = 1/N`.
    Odenet,
    /// One coefficient pair per step, `h = 1`.
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub steps: usize,
    pub width: usize,
    pub activation: Activation,
    pub antisymmetric: bool,
    pub gamma_shift: f64,
    pub lambda: TimeScale,
}

impl NetworkSpec {
    /// Default network for a problem: SpliNet with the problem's width and activation.
    pub fn for_problem(spec: &ProblemSpec, degree: usize, intervals: usize, steps: usize) -> Self {
        NetworkSpec {
            architecture: Architecture::Splinet { degree, intervals },
            steps,
            width: spec.width,
            activation: spec.activation,
            antisymmetric: false,
            gamma_shift: 0.0,
            lambda: TimeScale::default(),
        }
    }

    pub fn control_kind(&self) -> ControlKind {
        match self.architecture {
            Architecture::Splinet { degree, intervals } => ControlKind::Spline { degree, intervals },
            Architecture::Odenet | Architecture::Resnet => ControlKind::PerLayer { layers: self.steps },
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        match self.architecture {
            Architecture::Resnet => TimeGrid::unit(self.steps),
            _ => TimeGrid::reference(self.steps),
        }
    }

    pub fn objective(&self, loss: LossKind, gamma: f64) -> Result<Objective> {
        Ok(Objective {
            grid: self.grid()?,
            activation: self.activation,
            loss,
            gamma,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("network.N", "need at least one step"));
        }
        if self.width == 0 {
            return Err(Error::config("network.width", "must be >= 1"));
        }
        if let Architecture::Splinet { intervals, .. } = self.architecture {
            if intervals == 0 {
                return Err(Error::config("network.L", "need at least one interval"));
            }
        }
        if !(self.lambda.value > 0.0 && self.lambda.value.is_finite()) {
            return Err(Error::config("network.lambda.value", "must be positive"));
        }
        if !(self.gamma_shift >= 0.0) {
            return Err(Error::config("network.gamma_shift", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    /// Plain `theta -= eta * grad`.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub adam: AdamConstants,
    pub init_amplitude: f64,
    pub optimizer: Optimizer,
    /// Lower bound enforced on a learnable `lambda` after each update.
    pub lambda_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1e-2,
            gamma: 1e-8,
            epochs: 200,
            batch_size: None,
            seed: 0,
            adam: AdamConstants::default(),
            init_amplitude: 0.1,
            optimizer: Optimizer::Adam,
            lambda_floor: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("training.eta", "must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("training.gamma", "must be >= 0"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("training.batch_size", "must be >= 1"));
        }
        if !(self.init_amplitude > 0.0 && self.init_amplitude.is_finite()) {
            return Err(Error::config("training.init_amplitude", "must be positive"));
        }
        if !(self.lambda_floor > 0.0) {
            return Err(Error::config("training.lambda_floor", "must be positive"));
        }
        self.adam
            .validate()
            .map_err(|e| Error::config("training.adam", e.to_string()))
    }
}

/// Loss and headline metric over a dataset.
///
/// For regression `metric` is the mean loss and `accuracy` is
/// `1 - RMSE / RMS(targets)` clamped to `[0, 1]`; for classification both
/// are the fraction of correct argmax predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: ProblemKind,
    pub network: NetworkSpec,
    pub training: TrainConfig,
    pub param_count: usize,
    pub n_train: usize,
    pub n_validation: usize,
    /// Mean regularized batch objective per epoch.
    pub loss_history: Vec<f64>,
    pub train: Option<Evaluation>,
    pub validation: Option<Evaluation>,
    pub diverged: bool,
    pub diverged_epoch: Option<usize>,
    pub learned_lambda: Option<f64>,
}

impl RunRecord {
    /// Validation metric, with diverged runs scored as the worst outcome:
    /// accuracy 0 for classification, error 1 for regression.
    pub fn scored_metric(&self, classification: bool) -> f64 {
        match (&self.validation, self.diverged) {
            (Some(v), false) if v.metric.is_finite() => v.metric,
            _ if classification => 0.0,
            _ => 1.0,
        }
    }
}

/// A finished run: the record, the trained parameters and the wall time
/// (kept apart from the record so records are reproducible byte for byte).
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub params: ControlParams,
    pub wall_time_s: f64,
}

/// Random initial coefficients for `network`.
pub fn initial_params(network: &NetworkSpec, config: &TrainConfig) -> Result<ControlParams> {
    let mut params = ControlParams::init_random(
        network.control_kind(),
        network.width,
        config.seed,
        config.init_amplitude,
        network.lambda,
    )?;
    if network.antisymmetric {
        params = params.with_antisymmetric(network.gamma_shift);
    }
    Ok(params)
}

fn check_compatible(network: &NetworkSpec, problem: &ProblemSpec) -> Result<()> {
    if network.width != problem.width {
        return Err(Error::config(
            "network.width",
            format!("problem needs width {}, got {}", problem.width, network.width),
        ));
    }
    Ok(())
}

/// Trains from the seeded random initialization.
pub fn train(network: &NetworkSpec, config: &TrainConfig, problem: &Problem) -> Result<TrainOutput> {
    network.validate()?;
    config.validate()?;
    check_compatible(network, &problem.spec)?;
    let params = initial_params(network, config)?;
    train_from(params, network, config, problem)
}

/// Trains starting from `params`.
pub fn train_from(
    mut params: ControlParams,
    network: &NetworkSpec,
    config: &TrainConfig,
    problem: &Problem,
) -> Result<TrainOutput> {
    let started = Instant::now();
    network.validate()?;
    config.validate()?;
    check_compatible(network, &problem.spec)?;
    let objective = network.objective(problem.spec.loss, config.gamma)?;
    params.schedule(&objective.grid)?;
    let train_samples = problem.samples(&problem.train)?;
    if train_samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let batch = config.batch_size.unwrap_or(train_samples.len()).min(train_samples.len());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len(), config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    let mut diverged_epoch = None;
    let mut batch_samples: Vec<Sample> = Vec::with_capacity(batch);

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(batch) {
            batch_samples.clear();
            batch_samples.extend(chunk.iter().map(|&i| train_samples[i].clone()));
            let (value, grads) = match objective.value_and_gradient(&params, &batch_samples, Accumulation::DuringSweep) {
                Ok(r) => r,
                Err(e) if e.is_numerical() => {
                    diverged_epoch = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let g = grads.to_flat(params.lambda.learnable);
            if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
                diverged_epoch = Some(epoch);
                break 'epochs;
            }
            match config.optimizer {
                Optimizer::Adam => adam_step(&mut flat, &g, &mut adam, config.eta)?,
                Optimizer::GradientDescent => {
                    for (p, gi) in flat.iter_mut().zip(&g) {
                        *p -= config.eta * gi;
                    }
                }
            }
            if params.lambda.learnable {
                let last = flat.len() - 1;
                flat[last] = flat[last].max(config.lambda_floor);
            }
            params.set_flat(&flat)?;
            epoch_loss += value;
            n_batches += 1;
        }
        history.push(epoch_loss / n_batches as f64);
    }

    let diverged = diverged_epoch.is_some();
    let (train_eval, val_eval) = if diverged {
        (None, None)
    } else {
        (
            finite(evaluate(&params, network, &problem.spec, &problem.train))?,
            finite(evaluate(&params, network, &problem.spec, &problem.validation))?,
        )
    };
    let diverged = diverged || train_eval.is_none() || val_eval.is_none();
    let record = RunRecord {
        problem: problem.spec.kind,
        network: *network,
        training: *config,
        param_count: params.param_count(),
        n_train: problem.train.len(),
        n_validation: problem.validation.len(),
        loss_history: history,
        train: train_eval,
        validation: val_eval,
        diverged,
        diverged_epoch: if diverged { Some(diverged_epoch.unwrap_or(config.epochs)) } else { None },
        learned_lambda: params.lambda.learnable.then_some(params.lambda.value),
    };
    Ok(TrainOutput {
        record,
        params,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn finite(eval: Result<Evaluation>) -> Result<Option<Evaluation>> {
    match eval {
        Ok(e) if e.loss.is_finite() && e.metric.is_finite() => Ok(Some(e)),
        Ok(_) => Ok(None),
        Err(e) if e.is_numerical() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Network predictions (final states) for every input of `data`.
pub fn predict(params: &ControlParams, network: &NetworkSpec, spec: &ProblemSpec, data: &Dataset) -> Result<Vec<crate::linalg::Vector>> {
    let grid = network.grid()?;
    let layers = params.layers(&params.schedule(&grid)?);
    data.inputs
        .iter()
        .map(|x| {
            let x0 = spec.input_map.apply(x, network.width)?;
            let traj = propagate_layers(x0, &layers, &grid, params.lambda.value, network.activation)?;
            Ok(traj.output().clone())
        })
        .collect()
}

/// Mean loss and metric of `params` over `data`.
pub fn evaluate(params: &ControlParams, network: &NetworkSpec, spec: &ProblemSpec, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outputs = predict(params, network, spec, data)?;
    let n = outputs.len() as f64;
    let mut loss = 0.0;
    for (x, t) in outputs.iter().zip(&data.targets) {
        loss += spec.loss.value(x, t)?;
    }
    loss /= n;
    match spec.loss {
        LossKind::AveragedMse => {
            let mut sq_err = 0.0;
            let mut sq_target = 0.0;
            for (x, t) in outputs.iter().zip(&data.targets) {
                let y = scalar(t)?;
                sq_err += (x.mean() - y).powi(2);
                sq_target += y * y;
            }
            let rms = (sq_target / n).sqrt();
            let accuracy = if rms > 0.0 {
                (1.0 - (sq_err / n).sqrt() / rms).clamp(0.0, 1.0)
            } else {
                f64::from(sq_err == 0.0)
            };
            Ok(Evaluation {
                loss,
                metric: loss,
                accuracy,
            })
        }
        LossKind::SoftmaxCrossEntropy => {
            let mut correct = 0usize;
            for (x, t) in outputs.iter().zip(&data.targets) {
                if argmax(x.as_slice()) == class(t)? {
                    correct += 1;
                }
            }
            let accuracy = correct as f64 / n;
            Ok(Evaluation {
                loss,
                metric: accuracy,
                accuracy,
            })
        }
    }
}

fn scalar(t: &Target) -> Result<f64> {
    match *t {
        Target::Scalar(y) => Ok(y),
        Target::Class(_) => Err(Error::InvalidArgument("regression needs scalar targets".into())),
    }
}

fn class(t: &Target) -> Result<usize> {
    match *t {
        Target::Class(k) => Ok(k),
        Target::Scalar(_) => Err(Error::InvalidArgument("classification needs class targets".into())),
    }
}

/// Index of the first maximal entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::regularizer;
    use crate::dynamics::InputMap;
    use crate::problems::PEAKS_CLASSES;

    fn sin_setup(architecture: Architecture, steps: usize) -> (Problem, NetworkSpec) {
        let problem = Problem::sin(1.0, None).unwrap();
        let mut net = NetworkSpec::for_problem(&problem.spec, 1, 5, steps);
        net.architecture = architecture;
        (problem, net)
    }

    #[test]
    fn gradient_descent_step_decreases_objective() {
        for (seed, arch) in [
            (1u64, Architecture::Splinet { degree: 2, intervals: 4 }),
            (2, Architecture::Odenet),
            (3, Architecture::Splinet { degree: 1, intervals: 3 }),
        ] {
            let (problem, net) = sin_setup(arch, 10);
            let config = TrainConfig {
                eta: 1e-6,
                gamma: 1e-3,
                epochs: 1,
                optimizer: Optimizer::GradientDescent,
                init_amplitude: 0.5,
                seed,
                ..Default::default()
            };
            let objective = net.objective(problem.spec.loss, config.gamma).unwrap();
            let samples = problem.samples(&problem.train).unwrap();
            let p0 = initial_params(&net, &config).unwrap();
            let before = objective.value(&p0, &samples).unwrap();
            let out = train(&net, &config, &problem).unwrap();
            let after = objective.value(&out.params, &samples).unwrap();
            assert!(after < before, "{after} >= {before}");
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (problem, net) = sin_setup(Architecture::Splinet { degree: 2, intervals: 4 }, 20);
        let config = TrainConfig {
            epochs: 15,
            batch_size: Some(7),
            seed: 11,
            ..Default::default()
        };
        let a = train(&net, &config, &problem).unwrap();
        let b = train(&net, &config, &problem).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(
            serde_json::to_string(&a.record).unwrap(),
            serde_json::to_string(&b.record).unwrap()
        );
        assert_eq!(a.params.to_flat(), b.params.to_flat());
        let c = train(&net, &TrainConfig { seed: 12, ..config }, &problem).unwrap();
        assert_ne!(a.record.loss_history, c.record.loss_history);
    }

    #[test]
    fn huge_regularization_shrinks_coefficients() {
        let (problem, net) = sin_setup(Architecture::Splinet { degree: 1, intervals: 5 }, 20);
        let config = TrainConfig {
            gamma: 1e6,
            epochs: 30,
            init_amplitude: 0.5,
            ..Default::default()
        };
        let initial = initial_params(&net, &config).unwrap().coefficient_norm_sq();
        let out = train(&net, &config, &problem).unwrap();
        assert!(!out.record.diverged);
        assert!(out.params.coefficient_norm_sq() < initial);
    }

    #[test]
    fn training_reduces_sin_loss() {
        let (problem, net) = sin_setup(Architecture::Splinet { degree: 2, intervals: 6 }, 50);
        let config = TrainConfig {
            eta: 2e-2,
            epochs: 150,
            seed: 4,
            init_amplitude: 0.3,
            ..Default::default()
        };
        let out = train(&net, &config, &problem).unwrap();
        let h = &out.record.loss_history;
        assert_eq!(h.len(), 150);
        assert!(h[h.len() - 1] < 0.5 * h[0], "{} vs {}", h[h.len() - 1], h[0]);
        assert!(out.record.validation.unwrap().metric.is_finite());
    }

    #[test]
    fn divergence_is_flagged() {
        // h = 1 and 1500 unit steps of an expanding linear map overflow
        let (problem, mut net) = sin_setup(Architecture::Resnet, 1500);
        net.activation = Activation::Identity;
        let config = TrainConfig {
            eta: 0.1,
            init_amplitude: 1.0,
            epochs: 3,
            gamma: 0.0,
            ..Default::default()
        };
        let out = train(&net, &config, &problem).unwrap();
        assert!(out.record.diverged);
        assert!(out.record.validation.is_none());
        assert_eq!(out.record.scored_metric(false), 1.0);
        assert_eq!(out.record.scored_metric(true), 0.0);
    }

    #[test]
    fn config_errors_name_the_field() {
        let (problem, net) = sin_setup(Architecture::Odenet, 5);
        let bad = TrainConfig { eta: 0.0, ..Default::default() };
        match train(&net, &bad, &problem) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "training.eta"),
            other => panic!("{other:?}"),
        }
        let wide = NetworkSpec { width: 5, ..net };
        assert!(matches!(train(&wide, &TrainConfig::default(), &problem), Err(Error::Config { .. })));
        let batch = TrainConfig { batch_size: Some(0), ..Default::default() };
        assert!(train(&net, &batch, &problem).is_err());
    }

    #[test]
    fn learnable_lambda_is_reported_and_bounded() {
        let (problem, mut net) = sin_setup(Architecture::Splinet { degree: 2, intervals: 3 }, 20);
        net.lambda = TimeScale::learnable(1e-3);
        let config = TrainConfig { epochs: 5, ..Default::default() };
        let out = train(&net, &config, &problem).unwrap();
        let lam = out.record.learned_lambda.unwrap();
        assert!(lam >= config.lambda_floor);
        net.lambda = TimeScale::frozen(2.0);
        let out = train(&net, &config, &problem).unwrap();
        assert_eq!(out.record.learned_lambda, None);
        assert_eq!(out.params.lambda.value, 2.0);
    }

    #[test]
    fn gradient_is_data_term_plus_ridge() {
        let (problem, net) = sin_setup(Architecture::Splinet { degree: 2, intervals: 4 }, 20);
        let params = initial_params(&net, &TrainConfig { init_amplitude: 0.7, ..Default::default() }).unwrap();
        let samples = problem.samples(&problem.train).unwrap();
        let gamma = 0.37;
        let with = net.objective(problem.spec.loss, gamma).unwrap();
        let without = net.objective(problem.spec.loss, 0.0).unwrap();
        let (v1, g1) = with.value_and_gradient(&params, &samples, Accumulation::AfterSweep).unwrap();
        let (v0, g0) = without.value_and_gradient(&params, &samples, Accumulation::AfterSweep).unwrap();
        assert!((v1 - v0 - regularizer(&params, gamma)).abs() < 1e-12);
        let theta = params.to_flat();
        for ((a, b), t) in g1.to_flat(false).iter().zip(g0.to_flat(false)).zip(theta) {
            assert!((a - b - 2.0 * gamma * t).abs() < 1e-12);
        }
    }

    fn class_dataset(inputs: Vec<Vec<f64>>, classes: Vec<usize>) -> Dataset {
        Dataset {
            name: "synthetic".into(),
            inputs,
            targets: classes.into_iter().map(Target::Class).collect(),
            seed: None,
        }
    }

    fn classification_spec() -> ProblemSpec {
        ProblemSpec {
            kind: ProblemKind::Peaks,
            width: PEAKS_CLASSES,
            input_map: InputMap::Pad,
            loss: LossKind::SoftmaxCrossEntropy,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn perfect_and_constant_classifiers() {
        let spec = classification_spec();
        let net = NetworkSpec::for_problem(&spec, 1, 3, 4);
        let zero = ControlParams::zeros(net.control_kind(), 5).unwrap();
        let classes: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let perfect = class_dataset(
            classes
                .iter()
                .map(|&k| {
                    let mut v = vec![0.0; 5];
                    v[k] = 3.0;
                    v
                })
                .collect(),
            classes.clone(),
        );
        assert_eq!(evaluate(&zero, &net, &spec, &perfect).unwrap().accuracy, 1.0);
        let constant = class_dataset(vec![vec![0.5; 5]; 100], classes);
        let acc = evaluate(&zero, &net, &spec, &constant).unwrap().accuracy;
        assert!((acc - 0.2).abs() < 1e-12);
        let empty = class_dataset(vec![], vec![]);
        assert!(matches!(evaluate(&zero, &net, &spec, &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn zero_control_regression_metric_matches_direct_computation() {
        let problem = Problem::sin(2.0, None).unwrap();
        let net = NetworkSpec::for_problem(&problem.spec, 2, 4, 30);
        let zero = ControlParams::zeros(net.control_kind(), 4).unwrap();
        let eval = evaluate(&zero, &net, &problem.spec, &problem.train).unwrap();
        // zero control keeps x_N = x_0 = [x, x, x, x]
        let direct: f64 = problem
            .train
            .inputs
            .iter()
            .zip(&problem.train.targets)
            .map(|(x, t)| match t {
                Target::Scalar(y) => 0.5 * (x[0] - y).powi(2),
                _ => unreachable!(),
            })
            .sum::<f64>()
            / problem.train.len() as f64;
        assert!((eval.metric - direct).abs() < 1e-14);
        assert!((0.0..=1.0).contains(&eval.accuracy));
    }

    #[test]
    fn regression_accuracy_definition() {
        let problem = Problem::scaled_sine(10.0, 1.0, None).unwrap();
        let net = NetworkSpec::for_problem(&problem.spec, 1, 2, 2);
        let zero = ControlParams::zeros(net.control_kind(), 4).unwrap();
        let targets_only = Dataset {
            inputs: problem.train.targets.iter().map(|t| vec![scalar(t).unwrap()]).collect(),
            ..problem.train.clone()
        };
        // identity predictions: accuracy 1
        assert_eq!(evaluate(&zero, &net, &problem.spec, &targets_only).unwrap().accuracy, 1.0);
        // all-zero predictions: RMSE equals RMS(targets), accuracy 0
        let zeros = Dataset {
            inputs: vec![vec![0.0]; problem.train.len()],
            ..problem.train.clone()
        };
        assert_eq!(evaluate(&zero, &net, &problem.spec, &zeros).unwrap().accuracy, 0.0);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }
}
