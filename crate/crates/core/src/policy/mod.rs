//! Autoregressive policies over a [`Vocabulary`](crate::vocab::Vocabulary).
//!
//! A policy conditions on a prompt, then a BOS separator, then the completion
//! prefix. Completions end with EOS (scored as an ordinary token) or at the
//! length cap.

mod any;
mod neural;
mod rule;
mod tabular;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{log_softmax, Real};
use crate::vocab::{TokenId, EOS};

pub use any::AnyPolicy;
pub use neural::{NeuralPolicy, NeuralShape, NeuralState, PromptMemory};
pub use rule::RulePolicy;
pub use tabular::TabularPolicy;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("token id {id} out of vocabulary (size {size})")]
    OutOfVocab { id: TokenId, size: usize },
    #[error("completion is empty")]
    EmptyCompletion,
    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid sampling parameters: {0}")]
    BadSampling(String),
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
}

/// Serializable description of a trainable policy's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Architecture {
    Tabular { order: usize },
    Neural { embed: usize, hidden: usize },
}

/// Read-only autoregressive distribution.
pub trait Policy<F: Real>: Send + Sync {
    /// Decoding state after consuming some prefix.
    type State: Clone + Send;

    fn vocab_size(&self) -> usize;

    /// State after consuming `prompt` and the BOS separator.
    fn start(&self, prompt: &[TokenId]) -> Self::State;

    /// Unnormalized next-token scores, length `vocab_size()`.
    fn next_logits(&self, state: &Self::State) -> Vec<F>;

    fn advance(&self, state: &mut Self::State, token: TokenId);
}

/// A policy with a flat parameter vector and an analytic log-prob gradient.
pub trait Trainable<F: Real>: Policy<F> + Clone {
    fn params(&self) -> &[F];

    fn params_mut(&mut self) -> &mut [F];

    fn architecture(&self) -> Architecture;

    /// Computes per-token log-probabilities of `completion`, asks `weigh` for
    /// per-token weights, and adds `∇θ Σ_t w_t log π(o_t | ·)` into `grad`.
    /// Returns the log-probabilities. Inputs are assumed validated.
    fn forward_backward(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
        weigh: &mut dyn FnMut(&[F]) -> Vec<F>,
        grad: &mut [F],
    ) -> Vec<F>;
}

impl<F: Real, P: Policy<F>> Policy<F> for Arc<P> {
    type State = P::State;

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn start(&self, prompt: &[TokenId]) -> Self::State {
        (**self).start(prompt)
    }

    fn next_logits(&self, state: &Self::State) -> Vec<F> {
        (**self).next_logits(state)
    }

    fn advance(&self, state: &mut Self::State, token: TokenId) {
        (**self).advance(state, token)
    }
}

/// Immutable snapshot, shareable across threads. Later updates to `policy`
/// do not affect it.
pub fn clone_frozen<P: Clone>(policy: &P) -> Arc<P> {
    Arc::new(policy.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(PolicyError::BadSampling(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(PolicyError::BadSampling(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_len == 0 {
            return Err(PolicyError::BadSampling("max_len must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One sampled completion with the sampling-time policy's log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled<F> {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<F>,
}

fn check_tokens(tokens: &[TokenId], size: usize) -> Result<(), PolicyError> {
    match tokens.iter().find(|&&t| t as usize >= size) {
        Some(&id) => Err(PolicyError::OutOfVocab { id, size }),
        None => Ok(()),
    }
}

/// Draws an index from `probs` after temperature scaling of `logits` and
/// nucleus truncation.
fn draw<F: Real, R: Rng + ?Sized>(logits: &[F], params: &SamplingParams, rng: &mut R) -> usize {
    let inv_t = 1.0 / params.temperature;
    let scaled: Vec<f64> = logits.iter().map(|z| z.as_f64() * inv_t).collect();
    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();

    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    let mut mass = 1.0;
    if params.top_p < 1.0 {
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut cum = 0.0;
        let mut keep = 0;
        for &i in &order {
            cum += probs[i];
            keep += 1;
            if cum >= params.top_p {
                break;
            }
        }
        order.truncate(keep);
        mass = cum;
    }
    let u = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &order {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    *order.last().expect("at least one token has positive probability")
}

/// Samples `count` completions. Each stops after emitting EOS or at
/// `max_len` tokens. The returned log-probabilities are those of the policy
/// itself (temperature 1, no truncation), i.e. the π_old of a training step.
pub fn sample<F, P, R>(
    policy: &P,
    prompt: &[TokenId],
    count: usize,
    params: &SamplingParams,
    rng: &mut R,
) -> Result<Vec<Sampled<F>>, PolicyError>
where
    F: Real,
    P: Policy<F> + ?Sized,
    R: Rng + ?Sized,
{
    params.validate()?;
    check_tokens(prompt, policy.vocab_size())?;
    let init = policy.start(prompt);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut state = init.clone();
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        loop {
            let logits = policy.next_logits(&state);
            let tok = draw(&logits, params, rng);
            logprobs.push(log_softmax(&logits)[tok]);
            tokens.push(tok as TokenId);
            if tok as TokenId == EOS || tokens.len() >= params.max_len {
                break;
            }
            policy.advance(&mut state, tok as TokenId);
        }
        out.push(Sampled { tokens, logprobs });
    }
    Ok(out)
}

/// Most likely token at every step (ties → lowest id).
pub fn greedy<F, P>(policy: &P, prompt: &[TokenId], max_len: usize) -> Result<Vec<TokenId>, PolicyError>
where
    F: Real,
    P: Policy<F> + ?Sized,
{
    check_tokens(prompt, policy.vocab_size())?;
    let mut state = policy.start(prompt);
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let logits = policy.next_logits(&state);
        let mut best = 0;
        for (i, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = i;
            }
        }
        tokens.push(best as TokenId);
        if best as TokenId == EOS {
            break;
        }
        policy.advance(&mut state, best as TokenId);
    }
    Ok(tokens)
}

/// Per-token `log π(o_t | prompt, o_<t)`.
pub fn logprob<F, P>(policy: &P, prompt: &[TokenId], completion: &[TokenId]) -> Result<Vec<F>, PolicyError>
where
    F: Real,
    P: Policy<F> + ?Sized,
{
    if completion.is_empty() {
        return Err(PolicyError::EmptyCompletion);
    }
    check_tokens(prompt, policy.vocab_size())?;
    check_tokens(completion, policy.vocab_size())?;
    let mut state = policy.start(prompt);
    let mut out = Vec::with_capacity(completion.len());
    for (t, &tok) in completion.iter().enumerate() {
        out.push(log_softmax(&policy.next_logits(&state))[tok as usize]);
        if t + 1 < completion.len() {
            policy.advance(&mut state, tok);
        }
    }
    Ok(out)
}

/// Full next-token distribution after `prompt` and `prefix`.
pub fn next_distribution<F, P>(policy: &P, prompt: &[TokenId], prefix: &[TokenId]) -> Vec<F>
where
    F: Real,
    P: Policy<F> + ?Sized,
{
    let mut state = policy.start(prompt);
    for &t in prefix {
        policy.advance(&mut state, t);
    }
    crate::scalar::softmax(&policy.next_logits(&state))
}

/// `∇θ Σ_t w_t log π_θ(o_t | prompt, o_<t)` as a fresh vector.
pub fn grad_weighted_logprob<F, P>(
    policy: &P,
    prompt: &[TokenId],
    completion: &[TokenId],
    weights: &[F],
) -> Result<Vec<F>, PolicyError>
where
    F: Real,
    P: Trainable<F>,
{
    let mut grad = vec![F::zero(); policy.params().len()];
    accumulate_weighted_grad(policy, prompt, completion, weights, &mut grad)?;
    Ok(grad)
}

/// Validating wrapper over [`Trainable::forward_backward`] with fixed weights.
pub fn accumulate_weighted_grad<F, P>(
    policy: &P,
    prompt: &[TokenId],
    completion: &[TokenId],
    weights: &[F],
    grad: &mut [F],
) -> Result<Vec<F>, PolicyError>
where
    F: Real,
    P: Trainable<F>,
{
    if completion.is_empty() {
        return Err(PolicyError::EmptyCompletion);
    }
    if weights.len() != completion.len() {
        return Err(PolicyError::ShapeMismatch {
            expected: completion.len(),
            got: weights.len(),
        });
    }
    if grad.len() != policy.params().len() {
        return Err(PolicyError::ShapeMismatch {
            expected: policy.params().len(),
            got: grad.len(),
        });
    }
    check_tokens(prompt, policy.vocab_size())?;
    check_tokens(completion, policy.vocab_size())?;
    Ok(policy.forward_backward(prompt, completion, &mut |_| weights.to_vec(), grad))
}

#[cfg(test)]
mod tests;
