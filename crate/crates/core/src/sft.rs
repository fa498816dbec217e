//! Supervised fine-tuning: token-level cross-entropy on `reference ++ EOS`.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::optim::{AdamW, AdamWParams};
use crate::policy::{PolicyError, SamplingParams, Trainable};
use crate::scalar::Real;
use crate::seeding::rng_for;
use crate::tasks::TokenizedExample;
use crate::training::{
    mean, BestTracker, EpochRecord, LrSchedule, StepRecord, TrainError, TrainOutcome,
    SHUFFLE_STREAM,
};
use crate::vocab::{TokenId, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub eval_temperature: f64,
    pub eval_top_p: f64,
    pub max_completion_len: usize,
    pub seed: u64,
    pub validation_limit: Option<usize>,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            weight_decay: 0.0,
            epochs: 8,
            batch_size: 16,
            warmup_fraction: 0.05,
            eval_temperature: 0.9,
            eval_top_p: 0.9,
            max_completion_len: 200,
            seed: 0,
            validation_limit: None,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(format!("warmup_fraction {} outside [0, 1]", self.warmup_fraction));
        }
        self.eval_sampling().validate().map_err(|e| e.to_string())
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

/// The supervised target: the reference followed by EOS.
pub fn sft_target(reference: &[TokenId]) -> Vec<TokenId> {
    let mut t = reference.to_vec();
    t.push(EOS);
    t
}

/// Sum of token negative log-likelihoods of `reference ++ EOS`; the gradient
/// (of the sum) is added into `grad`. Returns `(nll_sum, tokens)`.
pub fn sft_accumulate<F, P>(
    policy: &P,
    prompt: &[TokenId],
    reference: &[TokenId],
    scale: F,
    grad: &mut [F],
) -> Result<(F, usize), PolicyError>
where
    F: Real,
    P: Trainable<F>,
{
    let target = sft_target(reference);
    let weights = vec![-scale; target.len()];
    let lp = crate::policy::accumulate_weighted_grad(policy, prompt, &target, &weights, grad)?;
    Ok((-lp.iter().copied().sum::<F>(), target.len()))
}

/// Mean token NLL of one example and its gradient.
pub fn sft_loss<F, P>(policy: &P, prompt: &[TokenId], reference: &[TokenId]) -> Result<(F, Vec<F>), PolicyError>
where
    F: Real,
    P: Trainable<F>,
{
    let n = reference.len() + 1;
    let mut grad = vec![F::zero(); policy.params().len()];
    let (nll, _) = sft_accumulate(policy, prompt, reference, F::one() / F::count(n), &mut grad)?;
    Ok((nll / F::count(n), grad))
}

/// Trains on teacher-forced references. Each batch loss is the NLL averaged
/// over all target tokens of the batch.
pub fn sft_train<F, P>(
    initial: P,
    train: &[TokenizedExample],
    validation: &[TokenizedExample],
    config: &SftConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome<P, F>, TrainError>
where
    F: Real,
    P: Trainable<F>,
{
    config.validate().map_err(TrainError::Config)?;
    let mut policy = initial;
    let mut optimizer = AdamW::new(policy.params().len(), config.optimizer());
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let schedule = LrSchedule::new(config.lr, config.warmup_fraction, steps_per_epoch * config.epochs);
    let mut tracker = BestTracker::new(validation, config.validation_limit, config.eval_sampling(), config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng_for(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let first = steps.len();
        for chunk in order.chunks(config.batch_size) {
            let start = Instant::now();
            let tokens: usize = chunk.iter().map(|&i| train[i].reference.len() + 1).sum();
            let scale = F::one() / F::count(tokens);
            let mut grad = vec![F::zero(); policy.params().len()];
            let mut nll = F::zero();
            for &i in chunk {
                let (l, _) = sft_accumulate(&policy, &train[i].prompt, &train[i].reference, scale, &mut grad)?;
                nll += l;
            }
            let loss = (nll * scale).as_f64();
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    what: "loss".into(),
                });
            }
            let lr = schedule.at(step);
            optimizer.step_with_lr(policy.params_mut(), &grad, lr)?;
            let record = StepRecord {
                step,
                epoch,
                lr,
                loss,
                mean_reward: None,
                mean_kl: None,
                clip_fraction: None,
                off_policy_per_group: None,
                truncated_references: None,
                tokens,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_step(&record);
            steps.push(record);
            step += 1;
        }
        let val_bleu = tracker.observe(&policy, epoch)?;
        let this: &[StepRecord] = &steps[first..];
        epochs.push(EpochRecord {
            epoch,
            steps: this.len(),
            mean_loss: mean(this.iter().map(|r| r.loss)),
            mean_reward: None,
            mean_kl: None,
            val_bleu,
        });
        log::info!("sft epoch {epoch}: loss {:.4} val_bleu {:?}", epochs[epochs.len() - 1].mean_loss, val_bleu);
    }
    Ok(tracker.finish(policy, optimizer, steps, epochs))
}
