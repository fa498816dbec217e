use serde::{Deserialize, Serialize};

use crate::metrics::MetricId;
use crate::optim::AdamWParams;
use crate::policy::SamplingParams;

/// GRPO hyperparameters.
///
/// `group_size = 8`, `beta = 0.02`, training temperature 1, evaluation
/// top-p 0.9 / temperature 0.9, 256 prompt and 200 completion tokens are the
/// defaults; the optimizer and schedule values are sized for small CPU runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub beta: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub train_temperature: f64,
    pub eval_temperature: f64,
    pub eval_top_p: f64,
    pub max_prompt_len: usize,
    pub max_completion_len: usize,
    pub mixed_policy: bool,
    pub reward: MetricId,
    pub seed: u64,
    pub std_floor: f64,
    /// Abort when the mean per-token KL to the reference, averaged over the
    /// last `kl_window` steps, exceeds this.
    pub kl_ceiling: f64,
    pub kl_window: usize,
    /// Validation examples scored after every epoch (`None`: all).
    pub validation_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            beta: 0.02,
            clip_eps: 0.2,
            lr: 2e-3,
            weight_decay: 0.0,
            epochs: 8,
            batch_size: 16,
            warmup_fraction: 0.05,
            train_temperature: 1.0,
            eval_temperature: 0.9,
            eval_top_p: 0.9,
            max_prompt_len: 256,
            max_completion_len: 200,
            mixed_policy: false,
            reward: MetricId::Bleu,
            seed: 0,
            std_floor: 1e-8,
            kl_ceiling: 50.0,
            kl_window: 10,
            validation_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 2 {
            return Err(format!(
                "group_size {} < 2: group-relative advantages need at least two samples",
                self.group_size
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(format!("beta {} must be ≥ 0", self.beta));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(format!("clip_eps {} outside (0, 1)", self.clip_eps));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err("learning rate must be positive and weight decay ≥ 0".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(format!("warmup_fraction {} outside [0, 1]", self.warmup_fraction));
        }
        if self.max_completion_len == 0 || self.max_prompt_len == 0 {
            return Err("length caps must be ≥ 1".into());
        }
        if !(self.kl_ceiling > 0.0) || !(self.std_floor >= 0.0) || self.kl_window == 0 {
            return Err("kl_ceiling and kl_window must be positive and std_floor ≥ 0".into());
        }
        self.train_sampling().validate().map_err(|e| e.to_string())?;
        self.eval_sampling().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn train_sampling(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.train_temperature,
            top_p: 1.0,
            max_len: self.max_completion_len,
        }
    }

    pub fn eval_sampling(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.eval_temperature,
            top_p: self.eval_top_p,
            max_len: self.max_completion_len,
        }
    }

    pub fn optimizer(&self) -> AdamWParams {
        AdamWParams {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWParams::default()
        }
    }
}
