use std::fmt;
use std::sync::Arc;

use super::Policy;
use crate::scalar::Real;
use crate::vocab::{TokenId, EOS};

type Solver = dyn Fn(&[TokenId]) -> Vec<TokenId> + Send + Sync;

/// Deterministic pseudo-policy that emits `solve(prompt)` followed by EOS.
///
/// Every off-target token has logit `-inf`, so the target has log-probability
/// exactly 0.
#[derive(Clone)]
pub struct RulePolicy {
    vocab: usize,
    solve: Arc<Solver>,
}

impl RulePolicy {
    pub fn new<S>(vocab: usize, solve: S) -> Self
    where
        S: Fn(&[TokenId]) -> Vec<TokenId> + Send + Sync + 'static,
    {
        Self {
            vocab,
            solve: Arc::new(solve),
        }
    }

    /// Ignores the prompt and always emits `target`.
    pub fn constant(vocab: usize, target: Vec<TokenId>) -> Self {
        Self::new(vocab, move |_| target.clone())
    }
}

impl fmt::Debug for RulePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RulePolicy").field("vocab", &self.vocab).finish()
    }
}

#[derive(Debug, Clone)]
pub struct RuleState {
    target: Arc<Vec<TokenId>>,
    pos: usize,
}

impl<F: Real> Policy<F> for RulePolicy {
    type State = RuleState;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn start(&self, prompt: &[TokenId]) -> RuleState {
        RuleState {
            target: Arc::new((self.solve)(prompt)),
            pos: 0,
        }
    }

    fn next_logits(&self, state: &RuleState) -> Vec<F> {
        let next = state.target.get(state.pos).copied().unwrap_or(EOS);
        let mut z = vec![F::neg_infinity(); self.vocab];
        z[next as usize] = F::zero();
        z
    }

    fn advance(&self, state: &mut RuleState, _token: TokenId) {
        state.pos += 1;
    }
}
