//! JSON experiment configuration.
//!
//! Every section is optional and unknown keys are rejected. Network and
//! training defaults depend on the problem (width, activation, batch size)
//! and are filled in by [`ExperimentConfig::resolve`]. `configs/schema.json`
//! documents every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::convergence::DEFAULT_STEPS;
use crate::analysis::stats::DEFAULT_RESAMPLES;
use crate::analysis::sweep::{SweepArchitecture, SweepSettings, SweepSpace};
use crate::control::TimeScale;
use crate::dynamics::{Activation, InputMap};
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::train::adam::AdamConstants;
use crate::train::{Architecture, NetworkSpec, Optimizer, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Sin,
    Peaks,
    ScaledSine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub kind: ProblemName,
    pub frequency: f64,
    pub amplitude: f64,
    /// Training points; defaults to `20 f` for the sine problems and 1000 for Peaks.
    pub n_points: Option<usize>,
    /// Peaks validation points.
    pub n_validation: usize,
    pub seed: u64,
    pub input_map: Option<InputMap>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            kind: ProblemName::Sin,
            frequency: 1.0,
            amplitude: 10.0,
            n_points: None,
            n_validation: 1000,
            seed: 0,
            input_map: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlName {
    Splinet,
    Odenet,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaSection {
    pub value: f64,
    pub learnable: bool,
}

impl Default for LambdaSection {
    fn default() -> Self {
        LambdaSection {
            value: 1.0,
            learnable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub width: Option<usize>,
    #[serde(rename = "N")]
    pub steps: usize,
    pub activation: Option<Activation>,
    pub control_kind: ControlName,
    pub degree: usize,
    #[serde(rename = "L")]
    pub intervals: usize,
    pub antisymmetric: bool,
    pub gamma_shift: f64,
    pub lambda: LambdaSection,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            width: None,
            steps: 100,
            activation: None,
            control_kind: ControlName::Splinet,
            degree: 1,
            intervals: 10,
            antisymmetric: false,
            gamma_shift: 0.0,
            lambda: LambdaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub eta: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// Defaults to 50 for Peaks and the full batch otherwise.
    pub batch_size: Option<usize>,
    pub full_batch: bool,
    pub seed: u64,
    pub adam: AdamConstants,
    pub init_amplitude: f64,
    pub optimizer: Optimizer,
    pub lambda_floor: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            eta: t.eta,
            gamma: t.gamma,
            epochs: t.epochs,
            batch_size: None,
            full_batch: false,
            seed: t.seed,
            adam: t.adam,
            init_amplitude: t.init_amplitude,
            optimizer: t.optimizer,
            lambda_floor: t.lambda_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub ranges: SweepSpace,
    pub n_runs: usize,
    pub paired: bool,
    pub seed: u64,
    pub architectures: Vec<SweepArchitecture>,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepSettings::default();
        SweepSection {
            ranges: s.space,
            n_runs: s.n_runs,
            paired: s.paired,
            seed: s.seed,
            architectures: s.architectures,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            bootstrap_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Step counts `N` for the convergence study.
    pub convergence_steps: Vec<usize>,
    /// Raw input of the probe sample for the spectrum; defaults to the first training input.
    pub probe: Option<Vec<f64>>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            convergence_steps: DEFAULT_STEPS.to_vec(),
            probe: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            formats: vec![OutputFormat::Json, OutputFormat::Csv],
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub sweep: SweepSection,
    pub analysis: AnalysisSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            problem: ProblemSection::default(),
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            sweep: SweepSection::default(),
            analysis: AnalysisSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// A config with problem-dependent defaults filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: Problem,
    pub network: NetworkSpec,
    pub training: TrainConfig,
    pub sweep: SweepSettings,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        ExperimentConfig::from_json(&text)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let p = &self.problem;
        let problem = match p.kind {
            ProblemName::Sin => Problem::sin(p.frequency, p.n_points),
            ProblemName::ScaledSine => Problem::scaled_sine(p.amplitude, p.frequency, p.n_points),
            ProblemName::Peaks => Problem::peaks(
                p.n_points.unwrap_or(1000),
                p.n_validation,
                p.seed,
                p.input_map.unwrap_or(InputMap::Tile),
            ),
        }
        .map_err(|e| Error::config("problem", e.to_string()))?;
        let mut problem = problem;
        if let Some(map) = p.input_map {
            problem.spec.input_map = map;
            if p.kind != ProblemName::Peaks && map != InputMap::Replicate {
                return Err(Error::config("problem.input_map", "sine problems use the replicate map"));
            }
        }
        Ok(problem)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let problem = self.build_problem()?;
        let n = &self.network;
        let architecture = match n.control_kind {
            ControlName::Splinet => Architecture::Splinet {
                degree: n.degree,
                intervals: n.intervals,
            },
            ControlName::Odenet => Architecture::Odenet,
            ControlName::Resnet => Architecture::Resnet,
        };
        let network = NetworkSpec {
            architecture,
            steps: n.steps,
            width: n.width.unwrap_or(problem.spec.width),
            activation: n.activation.unwrap_or(problem.spec.activation),
            antisymmetric: n.antisymmetric,
            gamma_shift: n.gamma_shift,
            lambda: TimeScale {
                value: n.lambda.value,
                learnable: n.lambda.learnable,
            },
        };
        network.validate()?;
        if network.width != problem.spec.width {
            return Err(Error::config(
                "network.width",
                format!("problem needs width {}, got {}", problem.spec.width, network.width),
            ));
        }
        let t = &self.training;
        if t.full_batch && t.batch_size.is_some() {
            return Err(Error::config("training.batch_size", "conflicts with full_batch = true"));
        }
        let batch_size = match (t.batch_size, t.full_batch, self.problem.kind) {
            (Some(b), _, _) => Some(b),
            (None, false, ProblemName::Peaks) => Some(50),
            _ => None,
        };
        let training = TrainConfig {
            eta: t.eta,
            gamma: t.gamma,
            epochs: t.epochs,
            batch_size,
            seed: t.seed,
            adam: t.adam,
            init_amplitude: t.init_amplitude,
            optimizer: t.optimizer,
            lambda_floor: t.lambda_floor,
        };
        training.validate()?;
        let s = &self.sweep;
        s.ranges.validate().map_err(|e| match e {
            Error::Config { path, msg } => Error::config(path.replacen("sweep.", "sweep.ranges.", 1), msg),
            other => other,
        })?;
        if s.n_runs == 0 {
            return Err(Error::config("sweep.n_runs", "must be >= 1"));
        }
        let sweep = SweepSettings {
            space: s.ranges,
            n_runs: s.n_runs,
            seed: s.seed,
            paired: s.paired,
            architectures: s.architectures.clone(),
        };
        Ok(Resolved {
            problem,
            network,
            training,
            sweep,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemKind;

    #[test]
    fn empty_document_uses_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let r = cfg.resolve().unwrap();
        assert_eq!(r.network.width, 4);
        assert_eq!(r.network.activation, Activation::Tanh);
        assert_eq!(r.training.batch_size, None);
        assert_eq!(r.network.architecture, Architecture::Splinet { degree: 1, intervals: 10 });
        assert_eq!(r.sweep.n_runs, 100);
    }

    #[test]
    fn peaks_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"problem": {"kind": "peaks"}}"#).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.problem.spec.kind, ProblemKind::Peaks);
        assert_eq!(r.network.width, 5);
        assert_eq!(r.network.activation, Activation::Relu);
        assert_eq!(r.training.batch_size, Some(50));
        assert_eq!(r.problem.spec.input_map, InputMap::Tile);
        assert_eq!(r.problem.train.len(), 1000);
        let full = ExperimentConfig::from_json(r#"{"problem": {"kind": "peaks"}, "training": {"full_batch": true}}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(full.training.batch_size, None);
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        match ExperimentConfig::from_json(r#"{"training": {"eta": 0.1, "learning_rate": 2}}"#) {
            Err(Error::Config { path, msg }) => {
                assert_eq!(path, "training.learning_rate");
                assert!(msg.contains("unknown field"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"network": {"activation": "sigmoid"}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "network.activation"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json(r#"{"network": {"lambda": {"value": "x"}}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "network.lambda.value"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_their_field() {
        let cases = [
            (r#"{"training": {"eta": -1}}"#, "training.eta"),
            (r#"{"network": {"width": 5}}"#, "network.width"),
            (r#"{"network": {"N": 0}}"#, "network.N"),
            (r#"{"network": {"lambda": {"value": 0}}}"#, "network.lambda.value"),
            (r#"{"sweep": {"n_runs": 0}}"#, "sweep.n_runs"),
            (r#"{"sweep": {"ranges": {"eta": {"min": 1, "max": 0.5}}}}"#, "sweep.ranges.eta"),
            (r#"{"schema_version": 7}"#, "schema_version"),
            (r#"{"training": {"batch_size": 4, "full_batch": true}}"#, "training.batch_size"),
            (r#"{"problem": {"input_map": "pad"}}"#, "problem.input_map"),
        ];
        for (text, want) in cases {
            let err = ExperimentConfig::from_json(text).and_then(|c| c.resolve().map(|_| ()));
            match err {
                Err(Error::Config { path, .. }) => assert_eq!(path, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn roundtrip_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.network.control_kind = ControlName::Resnet;
        cfg.sweep.architectures = vec![SweepArchitecture::Splinet { degree: 2 }];
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    fn check_schema_node(schema: &serde_json::Value, value: &serde_json::Value, at: &str) {
        let props = schema["properties"].as_object().unwrap_or_else(|| panic!("{at}: no properties"));
        let fields = value.as_object().unwrap_or_else(|| panic!("{at}: not an object"));
        let mut a: Vec<&String> = props.keys().collect();
        let mut b: Vec<&String> = fields.keys().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b, "{at}");
        for (key, node) in props {
            let here = format!("{at}.{key}");
            if let Some(default) = node.get("default") {
                assert_eq!(default, &fields[key], "{here}");
            } else {
                check_schema_node(node, &fields[key], &here);
            }
        }
    }

    #[test]
    fn schema_documents_every_field_and_default() {
        let schema: serde_json::Value = serde_json::from_str(include_str!("../schema/config.schema.json")).unwrap();
        let defaults = serde_json::to_value(ExperimentConfig::default()).unwrap();
        check_schema_node(&schema, &defaults, "config");
        assert_eq!(schema["properties"]["schema_version"]["const"], SCHEMA_VERSION);
    }

    #[test]
    fn shipped_examples_resolve() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                n += 1;
            }
        }
        assert!(n >= 10, "found {n} example configs");
    }
}
