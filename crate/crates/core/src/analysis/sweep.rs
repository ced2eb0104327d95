//! Random hyperparameter sweeps over architectures and their statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{summarize, Summary};
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::train::{train, Architecture, NetworkSpec, RunRecord, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub min: f64,
    pub max: f64,
}

impl LogRange {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min > 0.0 && self.min <= self.max && self.max.is_finite()) {
            return Err(Error::config(
                format!("sweep.{name}"),
                format!("need 0 < min <= max, got [{}, {}]", self.min, self.max),
            ));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            return self.min;
        }
        let v = rng.gen_range(self.min.ln()..=self.max.ln()).exp();
        v.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpace {
    pub eta: LogRange,
    pub gamma: LogRange,
    pub init_amplitude: LogRange,
    /// Inclusive range for `L` (spline intervals, or layers for per-layer nets).
    pub intervals: [usize; 2],
}

impl Default for SweepSpace {
    fn default() -> Self {
        SweepSpace {
            eta: LogRange { min: 1e-3, max: 1e-1 },
            gamma: LogRange { min: 1e-10, max: 1e-4 },
            init_amplitude: LogRange { min: 1e-3, max: 1.0 },
            intervals: [2, 15],
        }
    }
}

impl SweepSpace {
    pub fn validate(&self) -> Result<()> {
        self.eta.validate("eta")?;
        self.gamma.validate("gamma")?;
        self.init_amplitude.validate("init_amplitude")?;
        let [lo, hi] = self.intervals;
        if lo == 0 || lo > hi {
            return Err(Error::config("sweep.intervals", format!("need 1 <= min <= max, got [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// One sampled point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub run: usize,
    pub eta: f64,
    pub gamma: f64,
    pub init_amplitude: f64,
    pub intervals: usize,
    /// Seed for initialization and shuffling.
    pub seed: u64,
}

/// `n_runs` points: `eta`, `gamma` and amplitude log-uniform, `L` uniform.
pub fn sample_hyperparameters(space: &SweepSpace, n_runs: usize, seed: u64) -> Result<Vec<Hyperparameters>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_runs)
        .map(|run| Hyperparameters {
            run,
            eta: space.eta.sample(&mut rng),
            gamma: space.gamma.sample(&mut rng),
            init_amplitude: space.init_amplitude.sample(&mut rng),
            intervals: rng.gen_range(space.intervals[0]..=space.intervals[1]),
            seed: rng.gen(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepArchitecture {
    Splinet { degree: usize },
    Odenet,
    Resnet,
}

impl SweepArchitecture {
    pub fn label(&self) -> String {
        match self {
            SweepArchitecture::Splinet { degree } => format!("splinet_d{degree}"),
            SweepArchitecture::Odenet => "odenet".into(),
            SweepArchitecture::Resnet => "resnet".into(),
        }
    }

    /// Network for a sampled `L`: SpliNets keep the base step count, per-layer
    /// nets use `N = L`.
    pub fn network(&self, base: &NetworkSpec, intervals: usize) -> NetworkSpec {
        let mut net = *base;
        match *self {
            SweepArchitecture::Splinet { degree } => {
                net.architecture = Architecture::Splinet { degree, intervals };
            }
            SweepArchitecture::Odenet => {
                net.architecture = Architecture::Odenet;
                net.steps = intervals;
            }
            SweepArchitecture::Resnet => {
                net.architecture = Architecture::Resnet;
                net.steps = intervals;
            }
        }
        net
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub space: SweepSpace,
    pub n_runs: usize,
    pub seed: u64,
    /// Reuse the same sampled hyperparameters for every architecture.
    pub paired: bool,
    pub architectures: Vec<SweepArchitecture>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            space: SweepSpace::default(),
            n_runs: 100,
            seed: 0,
            paired: true,
            architectures: vec![
                SweepArchitecture::Splinet { degree: 1 },
                SweepArchitecture::Splinet { degree: 2 },
                SweepArchitecture::Splinet { degree: 3 },
                SweepArchitecture::Odenet,
                SweepArchitecture::Resnet,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub architecture: String,
    pub hyperparameters: Hyperparameters,
    pub record: RunRecord,
}

fn architecture_seed(seed: u64, index: usize) -> u64 {
    // distinct, reproducible stream per architecture for unpaired sweeps
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

/// Trains every sampled configuration for every architecture. Results are
/// ordered by architecture, then run index, whatever `jobs` is.
pub fn sweep(
    settings: &SweepSettings,
    base_network: &NetworkSpec,
    base_training: &TrainConfig,
    problem: &Problem,
    jobs: usize,
) -> Result<Vec<SweepEntry>> {
    if settings.n_runs == 0 {
        return Err(Error::config("sweep.n_runs", "must be >= 1"));
    }
    if settings.architectures.is_empty() {
        return Err(Error::config("sweep.architectures", "need at least one architecture"));
    }
    let shared = sample_hyperparameters(&settings.space, settings.n_runs, settings.seed)?;
    let mut tasks = Vec::new();
    for (a, arch) in settings.architectures.iter().enumerate() {
        let hypers = if settings.paired {
            shared.clone()
        } else {
            sample_hyperparameters(&settings.space, settings.n_runs, architecture_seed(settings.seed, a))?
        };
        tasks.extend(hypers.into_iter().map(|h| (*arch, h)));
    }
    let run = |(arch, h): &(SweepArchitecture, Hyperparameters)| -> Result<SweepEntry> {
        let network = arch.network(base_network, h.intervals);
        let config = TrainConfig {
            eta: h.eta,
            gamma: h.gamma,
            init_amplitude: h.init_amplitude,
            seed: h.seed,
            ..*base_training
        };
        let out = train(&network, &config, problem)?;
        Ok(SweepEntry {
            architecture: arch.label(),
            hyperparameters: *h,
            record: out.record,
        })
    };
    if jobs <= 1 {
        tasks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub architecture: String,
    /// `L` for per-`L` groupings.
    pub intervals: Option<usize>,
    pub diverged: usize,
    pub summary: Summary,
}

fn group_stats(
    entries: &[&SweepEntry],
    architecture: &str,
    intervals: Option<usize>,
    classification: bool,
    resamples: usize,
    seed: u64,
) -> Result<GroupStats> {
    let values: Vec<f64> = entries.iter().map(|e| e.record.scored_metric(classification)).collect();
    Ok(GroupStats {
        architecture: architecture.to_string(),
        intervals,
        diverged: entries.iter().filter(|e| e.record.diverged).count(),
        summary: summarize(&values, resamples, seed)?,
    })
}

fn architectures_in_order(entries: &[SweepEntry]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for e in entries {
        if !labels.contains(&e.architecture) {
            labels.push(e.architecture.clone());
        }
    }
    labels
}

/// Validation-metric statistics per architecture. Diverged runs count with
/// the worst metric (see [`RunRecord::scored_metric`]).
pub fn summarize_sweep(
    entries: &[SweepEntry],
    classification: bool,
    resamples: usize,
    seed: u64,
) -> Result<Vec<GroupStats>> {
    architectures_in_order(entries)
        .iter()
        .map(|label| {
            let group: Vec<&SweepEntry> = entries.iter().filter(|e| &e.architecture == label).collect();
            group_stats(&group, label, None, classification, resamples, seed)
        })
        .collect()
}

/// Statistics per architecture and `L`; groups with fewer than two runs are skipped.
pub fn summarize_by_intervals(
    entries: &[SweepEntry],
    classification: bool,
    resamples: usize,
    seed: u64,
) -> Result<Vec<GroupStats>> {
    let mut out = Vec::new();
    for label in architectures_in_order(entries) {
        let mut ls: Vec<usize> = entries
            .iter()
            .filter(|e| e.architecture == label)
            .map(|e| e.hyperparameters.intervals)
            .collect();
        ls.sort_unstable();
        ls.dedup();
        for l in ls {
            let group: Vec<&SweepEntry> = entries
                .iter()
                .filter(|e| e.architecture == label && e.hyperparameters.intervals == l)
                .collect();
            if group.len() >= 2 {
                out.push(group_stats(&group, &label, Some(l), classification, resamples, seed)?);
            }
        }
    }
    Ok(out)
}
