//! Experiment harness: TOML experiment configs, dataset generation and
//! loading, training of the four arms, evaluation reports, reward ablations,
//! learning-curve comparisons and multi-seed summaries.

mod commands;
mod table;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::CheckpointError;
use crate::eval::EvalError;
use crate::grpo::TrainConfig;
use crate::metrics::MetricId;
use crate::policy::{Architecture, PolicyError, SamplingParams};
use crate::sft::SftConfig;
use crate::tasks::TaskError;
use crate::training::TrainError;

pub use commands::{
    ablate, cmd_ablate, cmd_compare, cmd_eval, cmd_gen, cmd_report, cmd_train, compare, evaluate_policy,
    initial_policy, load_data, report, train_arm, AblationRow, ArmRun, CompareOutcome, CurvePoint,
    Dataset, SeedSummary, TrainSummary,
};
pub use table::{format_score, render_ablation_csv, render_ablation_markdown, round2, EvalReport, METRIC_COLUMNS};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "GRPO_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("checkpoint vocabulary {checkpoint} does not match dataset vocabulary {dataset}")]
    VocabMismatch { checkpoint: String, dataset: String },
}

/// Coarse failure classes, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Io,
    Data,
    Divergence,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Data => 4,
            ErrorCategory::Divergence => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Io => "io",
            ErrorCategory::Data => "data",
            ErrorCategory::Divergence => "divergence",
        }
    }
}

impl HarnessError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            HarnessError::Config(_) | HarnessError::Toml(_) => ErrorCategory::Usage,
            HarnessError::Io { .. } | HarnessError::Task(TaskError::Io { .. }) => ErrorCategory::Io,
            HarnessError::Checkpoint(CheckpointError::Io { .. }) => ErrorCategory::Io,
            HarnessError::Train(TrainError::Config(_)) => ErrorCategory::Usage,
            HarnessError::Train(e) if e.is_divergence() => ErrorCategory::Divergence,
            _ => ErrorCategory::Data,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Experimental arm: untrained, supervised, GRPO, or mixed-policy GRPO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "BASE")]
    Base,
    #[serde(rename = "SFT")]
    Sft,
    #[serde(rename = "GRPO")]
    Grpo,
    #[serde(rename = "MPGRPO", alias = "MP-GRPO")]
    MpGrpo,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Base, Arm::Sft, Arm::Grpo, Arm::MpGrpo];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Base => "BASE",
            Arm::Sft => "SFT",
            Arm::Grpo => "GRPO",
            Arm::MpGrpo => "MPGRPO",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "BASE" => Ok(Arm::Base),
            "SFT" => Ok(Arm::Sft),
            "GRPO" => Ok(Arm::Grpo),
            "MPGRPO" => Ok(Arm::MpGrpo),
            _ => Err(HarnessError::Config(format!("unknown arm {s:?}"))),
        }
    }
}

/// Initialization of the policy a comparison or ablation run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// Random parameters.
    Cold,
    /// The best checkpoint of a short supervised run.
    Sft,
}

impl fmt::Display for Start {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Start::Cold => "cold",
            Start::Sft => "sft",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
    /// Sampling seed; derived from the experiment seed when absent.
    pub seed: Option<u64>,
    /// Score only the first `limit` test examples.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperature: 0.9,
            top_p: 0.9,
            max_len: 200,
            seed: None,
            limit: None,
        }
    }
}

impl EvalConfig {
    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature,
            top_p: self.top_p,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub rewards: Vec<MetricId>,
    /// Policy every reward's run starts from.
    pub start: Start,
    /// Supervised epochs used to build the `sft` start.
    pub warm_start_epochs: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            rewards: MetricId::ALL.to_vec(),
            start: Start::Cold,
            warm_start_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub arms: Vec<Arm>,
    pub starts: Vec<Start>,
    /// Supervised epochs used to build the `sft` start.
    pub warm_start_epochs: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            arms: vec![Arm::Grpo, Arm::MpGrpo],
            starts: vec![Start::Cold],
            warm_start_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub arms: Vec<Arm>,
    /// Number of seeds: the experiment seed and its successors.
    pub seeds: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            arms: Arm::ALL.to_vec(),
            seeds: 3,
        }
    }
}

fn default_model() -> Architecture {
    Architecture::Neural { embed: 32, hidden: 64 }
}

fn default_arm() -> Arm {
    Arm::Grpo
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_arm")]
    pub arm: Arm,
    /// Seeds model initialization, training and evaluation sampling. The
    /// dataset has its own seed inside `task`.
    #[serde(default)]
    pub seed: u64,
    pub task: crate::tasks::TaskSpec,
    /// Load the dataset from here instead of generating it in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_model")]
    pub model: Architecture,
    #[serde(default)]
    pub grpo: TrainConfig,
    #[serde(default)]
    pub sft: SftConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl ExperimentConfig {
    /// Default settings for every section around `task`.
    pub fn for_task(name: &str, task: crate::tasks::TaskSpec) -> Self {
        Self {
            name: name.to_string(),
            arm: default_arm(),
            seed: 0,
            task,
            data_dir: None,
            model: default_model(),
            grpo: TrainConfig::default(),
            sft: SftConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            compare: CompareConfig::default(),
            report: ReportConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = &cfg.data_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data_dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.grpo.validate().map_err(|e| HarnessError::Config(format!("[grpo] {e}")))?;
        self.sft.validate().map_err(|e| HarnessError::Config(format!("[sft] {e}")))?;
        self.eval
            .sampling()
            .validate()
            .map_err(|e| HarnessError::Config(format!("[eval] {e}")))?;
        if let Architecture::Tabular { order } = self.model {
            if order > 2 {
                return Err(HarnessError::Config(format!("tabular order {order} not in 0..=2")));
            }
        }
        if self.report.seeds == 0 {
            return Err(HarnessError::Config("[report] seeds must be ≥ 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config. Dataset paths are
    /// excluded so that moving a dataset does not change the digest.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.data_dir = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Copy with the experiment seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval
            .seed
            .unwrap_or_else(|| crate::seeding::derive_seed(self.seed, &[EVAL_STREAM]))
    }

    /// GRPO settings for `arm` under this experiment's seed.
    pub fn grpo_for(&self, arm: Arm) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            mixed_policy: arm == Arm::MpGrpo,
            ..self.grpo.clone()
        }
    }

    pub fn sft_for_seed(&self) -> SftConfig {
        SftConfig {
            seed: self.seed,
            ..self.sft.clone()
        }
    }
}

pub(crate) const INIT_STREAM: u64 = 0x1417;
pub(crate) const EVAL_STREAM: u64 = 0xe7a1;
