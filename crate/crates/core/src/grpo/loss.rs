//! Token-level clipped surrogate with a KL penalty, normalized by the total
//! number of completion tokens in the group:
//!
//! ```text
//! l_it = min(s_it · A_i, clip(s_it, 1 − ε, 1 + ε) · A_i)
//! L    = −(1 / Σ_i |o_i|) · Σ_i Σ_t (l_it − β · KL_it)
//! ```
//!
//! On-policy members use `s = π_θ / π_old`. The off-policy reference uses
//! `ŝ = π_θ / π_φ` with `π_φ = 1` and is never clipped.

use super::{CompletionGroup, GroupMember, TrainConfig};
use crate::policy::{logprob, Policy, PolicyError, Trainable};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("invalid group: {0}")]
    Group(String),
    #[error("{expected} members but {got} advantages")]
    Advantages { expected: usize, got: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("non-finite loss {loss} (group of {members} members, {tokens} tokens, advantages {advantages:?})")]
    NonFinite {
        loss: f64,
        members: usize,
        tokens: usize,
        advantages: Vec<f64>,
    },
}

/// Per-token objective and its derivative with respect to `log π_θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenTerm<F> {
    pub value: F,
    pub dlogp: F,
    pub clipped: bool,
}

/// `min(s·A, clip(s, 1−ε, 1+ε)·A)`, or `s·A` when clipping is disabled.
pub fn token_objective<F: Real>(ratio: F, advantage: F, eps: F, clipping: bool) -> F {
    token_term(ratio, advantage, eps, clipping).value
}

/// As [`token_objective`], with the derivative through `s = exp(log π_θ − c)`.
/// When the clipped branch is selected the objective is constant in θ.
pub fn token_term<F: Real>(ratio: F, advantage: F, eps: F, clipping: bool) -> TokenTerm<F> {
    let unclipped = ratio * advantage;
    if !clipping {
        return TokenTerm {
            value: unclipped,
            dlogp: unclipped,
            clipped: false,
        };
    }
    let clamped = ratio.max(F::one() - eps).min(F::one() + eps) * advantage;
    if unclipped <= clamped {
        TokenTerm {
            value: unclipped,
            dlogp: unclipped,
            clipped: false,
        }
    } else {
        TokenTerm {
            value: clamped,
            dlogp: F::zero(),
            clipped: true,
        }
    }
}

/// Per-token KL estimate `r − ln r − 1` with `r = π_ref / π_θ`.
pub fn kl_token<F: Real>(logp_theta: F, logp_ref: F) -> F {
    kl_term(logp_theta, logp_ref).0
}

/// KL estimate and its derivative with respect to `log π_θ` (`1 − r`).
pub fn kl_term<F: Real>(logp_theta: F, logp_ref: F) -> (F, F) {
    let log_r = logp_ref - logp_theta;
    let r = log_r.exp();
    ((r - log_r - F::one()).max(F::zero()), F::one() - r)
}

/// Importance weights of a member's tokens given current log-probabilities.
/// For the off-policy member the behaviour log-probs are zero, so this is
/// `π_θ(o_t)` itself.
pub fn importance_ratios<F: Real>(logp_theta: &[F], member: &GroupMember<F>) -> Vec<F> {
    logp_theta
        .iter()
        .zip(&member.old_logprobs)
        .map(|(&lp, &old)| (lp - old).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DapoLoss<F> {
    pub loss: F,
    pub grad: Vec<F>,
    pub tokens: usize,
    /// Mean per-token KL estimate over all members.
    pub mean_kl: F,
    /// Clipped fraction over on-policy tokens.
    pub clip_fraction: F,
}

pub fn dapo_loss<F, P, R>(
    group: &CompletionGroup<F>,
    advantages: &[F],
    policy: &P,
    reference: &R,
    config: &TrainConfig,
) -> Result<DapoLoss<F>, LossError>
where
    F: Real,
    P: Trainable<F>,
    R: Policy<F> + ?Sized,
{
    group.validate().map_err(LossError::Group)?;
    if advantages.len() != group.members.len() {
        return Err(LossError::Advantages {
            expected: group.members.len(),
            got: advantages.len(),
        });
    }
    let tokens = group.token_count();
    let norm = F::one() / F::count(tokens);
    let beta = F::lit(config.beta);
    let eps = F::lit(config.clip_eps);

    let mut grad = vec![F::zero(); policy.params().len()];
    let mut total = F::zero();
    let mut kl_sum = F::zero();
    let mut clipped = 0usize;
    let mut on_policy_tokens = 0usize;

    for (member, &adv) in group.members.iter().zip(advantages) {
        let ref_lp: Vec<F> = logprob(reference, &group.prompt, &member.tokens)?;
        let mut weigh = |lp: &[F]| -> Vec<F> {
            let ratios = importance_ratios(lp, member);
            let mut w = Vec::with_capacity(lp.len());
            for (t, &s) in ratios.iter().enumerate() {
                let term = token_term(s, adv, eps, !member.off_policy);
                let (kl, dkl) = kl_term(lp[t], ref_lp[t]);
                total += term.value - beta * kl;
                kl_sum += kl;
                if !member.off_policy {
                    on_policy_tokens += 1;
                    clipped += usize::from(term.clipped);
                }
                w.push(-norm * (term.dlogp - beta * dkl));
            }
            w
        };
        policy.forward_backward(&group.prompt, &member.tokens, &mut weigh, &mut grad);
    }

    let loss = -norm * total;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(LossError::NonFinite {
            loss: loss.as_f64(),
            members: group.members.len(),
            tokens,
            advantages: advantages.iter().map(|a| a.as_f64()).collect(),
        });
    }
    let clip_fraction = if on_policy_tokens > 0 {
        F::count(clipped) / F::count(on_policy_tokens)
    } else {
        F::zero()
    };
    Ok(DapoLoss {
        loss,
        grad,
        tokens,
        mean_kl: kl_sum * norm,
        clip_fraction,
    })
}

#[cfg(test)]
#[path = "loss_tests.rs"]
mod tests;
