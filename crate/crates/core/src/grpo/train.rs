use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{build_group, compute_advantages, dapo_loss, TrainConfig};
use crate::metrics::reward;
use crate::optim::AdamW;
use crate::policy::{clone_frozen, Trainable};
use crate::scalar::Real;
use crate::seeding::{derive_seed, rng_for};
use crate::tasks::TokenizedExample;
use crate::training::{
    mean, BestTracker, EpochRecord, LrSchedule, StepRecord, TrainError, TrainOutcome,
    SAMPLE_STREAM, SHUFFLE_STREAM,
};
use crate::vocab::strip_eos;

/// Per-group results of one step.
#[derive(Debug, Clone)]
pub struct GroupStats<F> {
    pub loss: F,
    pub grad: Vec<F>,
    pub tokens: usize,
    pub mean_kl: F,
    pub clip_fraction: F,
    /// Mean reward over on-policy members only.
    pub on_policy_reward: F,
    pub off_policy: usize,
    pub truncated_reference: bool,
}

fn group_stats<F, P>(
    example: &TokenizedExample,
    policy: &P,
    reference: &P,
    config: &TrainConfig,
    seed: u64,
) -> Result<GroupStats<F>, TrainError>
where
    F: Real,
    P: Trainable<F>,
{
    let mut rng = rng_for(seed, &[]);
    let group = build_group::<F, P, _>(&example.prompt, &example.reference, policy, config, &mut rng)?;
    let rewards = group
        .members
        .iter()
        .map(|m| reward::<F>(config.reward, strip_eos(&m.tokens), &example.reference))
        .collect::<Result<Vec<F>, _>>()?;
    let advantages = compute_advantages(&rewards, F::lit(config.std_floor));
    let out = dapo_loss(&group, &advantages, policy, reference, config)?;
    let on_policy: Vec<F> = group
        .members
        .iter()
        .zip(&rewards)
        .filter(|(m, _)| !m.off_policy)
        .map(|(_, &r)| r)
        .collect();
    let on_policy_reward = if on_policy.is_empty() {
        F::zero()
    } else {
        on_policy.iter().copied().sum::<F>() / F::count(on_policy.len())
    };
    Ok(GroupStats {
        loss: out.loss,
        grad: out.grad,
        tokens: out.tokens,
        mean_kl: out.mean_kl,
        clip_fraction: out.clip_fraction,
        on_policy_reward,
        off_policy: group.off_policy_count(),
        truncated_reference: group.reference_truncated,
    })
}

/// One optimizer step over a batch. Groups are sampled from the current
/// parameters (the old policy of this step), processed in parallel and
/// averaged in batch order, so the result does not depend on thread count.
pub fn grpo_step<F, P>(
    policy: &mut P,
    reference: &P,
    optimizer: &mut AdamW<F>,
    batch: &[TokenizedExample],
    config: &TrainConfig,
    step: usize,
    lr: f64,
) -> Result<(StepRecord, Vec<GroupStats<F>>), TrainError>
where
    F: Real,
    P: Trainable<F>,
{
    let start = Instant::now();
    let old = clone_frozen(policy);
    let stats = batch
        .par_iter()
        .enumerate()
        .map(|(j, ex)| {
            let seed = derive_seed(config.seed, &[SAMPLE_STREAM, step as u64, j as u64]);
            group_stats::<F, P>(ex, &old, reference, config, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scale = F::one() / F::count(stats.len());
    let mut grad = vec![F::zero(); policy.params().len()];
    for s in &stats {
        for (g, x) in grad.iter_mut().zip(&s.grad) {
            *g += *x * scale;
        }
    }
    let loss = mean(stats.iter().map(|s| s.loss.as_f64()));
    let mean_kl = mean(stats.iter().map(|s| s.mean_kl.as_f64()));
    if !loss.is_finite() || !mean_kl.is_finite() {
        return Err(TrainError::NonFinite {
            step,
            what: format!("loss {loss} / kl {mean_kl}"),
        });
    }
    optimizer.step_with_lr(policy.params_mut(), &grad, lr)?;

    let record = StepRecord {
        step,
        epoch: 0,
        lr,
        loss,
        mean_reward: Some(mean(stats.iter().map(|s| s.on_policy_reward.as_f64()))),
        mean_kl: Some(mean_kl),
        clip_fraction: Some(mean(stats.iter().map(|s| s.clip_fraction.as_f64()))),
        off_policy_per_group: Some(mean(stats.iter().map(|s| s.off_policy as f64))),
        truncated_references: Some(stats.iter().filter(|s| s.truncated_reference).count()),
        tokens: stats.iter().map(|s| s.tokens).sum(),
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok((record, stats))
}

/// Trains `initial` with GRPO (or mixed-policy GRPO when
/// `config.mixed_policy`). The KL reference is a frozen copy of `initial`.
/// After each epoch the policy is scored on `validation` and the best-BLEU
/// parameters are kept.
pub fn grpo_train<F, P>(
    initial: P,
    train: &[TokenizedExample],
    validation: &[TokenizedExample],
    config: &TrainConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome<P, F>, TrainError>
where
    F: Real,
    P: Trainable<F>,
{
    config.validate().map_err(TrainError::Config)?;
    let reference: Arc<P> = clone_frozen(&initial);
    let mut policy = initial;
    let mut optimizer = AdamW::new(policy.params().len(), config.optimizer());
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let schedule = LrSchedule::new(config.lr, config.warmup_fraction, steps_per_epoch * config.epochs);
    let mut tracker = BestTracker::new(validation, config.validation_limit, config.eval_sampling(), config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    let mut recent_kl: VecDeque<f64> = VecDeque::with_capacity(config.kl_window);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng_for(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let first = steps.len();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TokenizedExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (mut record, _) = grpo_step(&mut policy, &reference, &mut optimizer, &batch, config, step, schedule.at(step))?;
            record.epoch = epoch;
            on_step(&record);
            if recent_kl.len() == config.kl_window {
                recent_kl.pop_front();
            }
            recent_kl.push_back(record.mean_kl.unwrap_or(0.0));
            steps.push(record);
            let windowed = mean(recent_kl.iter().copied());
            if windowed > config.kl_ceiling {
                return Err(TrainError::KlCeiling {
                    step,
                    kl: windowed,
                    ceiling: config.kl_ceiling,
                });
            }
            step += 1;
        }
        let val_bleu = tracker.observe(&policy, epoch)?;
        let this: &[StepRecord] = &steps[first..];
        epochs.push(EpochRecord {
            epoch,
            steps: this.len(),
            mean_loss: mean(this.iter().map(|r| r.loss)),
            mean_reward: Some(mean(this.iter().filter_map(|r| r.mean_reward))),
            mean_kl: Some(mean(this.iter().filter_map(|r| r.mean_kl))),
            val_bleu,
        });
        log::info!(
            "epoch {epoch}: loss {:.4} reward {:.4} kl {:.4} val_bleu {:?}",
            epochs[epochs.len() - 1].mean_loss,
            epochs[epochs.len() - 1].mean_reward.unwrap_or(0.0),
            epochs[epochs.len() - 1].mean_kl.unwrap_or(0.0),
            val_bleu
        );
    }
    Ok(tracker.finish(policy, optimizer, steps, epochs))
}
