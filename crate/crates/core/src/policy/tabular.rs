use rand::Rng;

use super::{Architecture, Policy, PolicyError, Trainable};
use crate::scalar::{log_softmax, Real};
use crate::vocab::{TokenId, BOS, PAD};

/// Fully materialized logit table indexed by the last `order` tokens of
/// `prompt ++ [BOS] ++ prefix` (left-padded with PAD).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy<F> {
    vocab: usize,
    order: usize,
    logits: Vec<F>,
}

impl<F: Real> TabularPolicy<F> {
    pub fn zeros(vocab: usize, order: usize) -> Result<Self, PolicyError> {
        if order > 2 {
            return Err(PolicyError::BadArchitecture(format!(
                "tabular order {order} not in 0..=2"
            )));
        }
        if vocab < 4 {
            return Err(PolicyError::BadArchitecture(format!("vocabulary size {vocab} < 4")));
        }
        let rows = vocab.pow(order as u32);
        Ok(Self {
            vocab,
            order,
            logits: vec![F::zero(); rows * vocab],
        })
    }

    pub fn random<R: Rng + ?Sized>(vocab: usize, order: usize, scale: f64, rng: &mut R) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(vocab, order)?;
        for z in &mut p.logits {
            *z = F::lit(rng.random_range(-scale..=scale));
        }
        Ok(p)
    }

    pub fn from_params(vocab: usize, order: usize, params: Vec<F>) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(vocab, order)?;
        if params.len() != p.logits.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: p.logits.len(),
                got: params.len(),
            });
        }
        p.logits = params;
        Ok(p)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Row index for a context window (oldest token first).
    pub fn row_index(&self, context: &[TokenId]) -> usize {
        context
            .iter()
            .fold(0usize, |acc, &t| acc * self.vocab + t as usize)
    }

    pub fn row(&self, context: &[TokenId]) -> &[F] {
        let r = self.row_index(context);
        &self.logits[r * self.vocab..(r + 1) * self.vocab]
    }

    pub fn row_mut(&mut self, context: &[TokenId]) -> &mut [F] {
        let r = self.row_index(context);
        &mut self.logits[r * self.vocab..(r + 1) * self.vocab]
    }

    fn push(&self, window: &mut Vec<TokenId>, token: TokenId) {
        if self.order > 0 {
            window.remove(0);
            window.push(token);
        }
    }
}

impl<F: Real> Policy<F> for TabularPolicy<F> {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn start(&self, prompt: &[TokenId]) -> Vec<TokenId> {
        let mut window = vec![PAD; self.order];
        for &t in prompt.iter().chain(std::iter::once(&BOS)) {
            self.push(&mut window, t);
        }
        window
    }

    fn next_logits(&self, state: &Vec<TokenId>) -> Vec<F> {
        self.row(state).to_vec()
    }

    fn advance(&self, state: &mut Vec<TokenId>, token: TokenId) {
        self.push(state, token);
    }
}

impl<F: Real> Trainable<F> for TabularPolicy<F> {
    fn params(&self) -> &[F] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [F] {
        &mut self.logits
    }

    fn architecture(&self) -> Architecture {
        Architecture::Tabular { order: self.order }
    }

    fn forward_backward(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
        weigh: &mut dyn FnMut(&[F]) -> Vec<F>,
        grad: &mut [F],
    ) -> Vec<F> {
        let mut state = self.start(prompt);
        let mut rows = Vec::with_capacity(completion.len());
        let mut logps = Vec::with_capacity(completion.len());
        let mut lps = Vec::with_capacity(completion.len());
        for &tok in completion {
            let r = self.row_index(&state);
            let lp = log_softmax(&self.logits[r * self.vocab..(r + 1) * self.vocab]);
            logps.push(lp[tok as usize]);
            lps.push(lp);
            rows.push(r);
            self.push(&mut state, tok);
        }
        let weights = weigh(&logps);
        for (t, &tok) in completion.iter().enumerate() {
            let w = weights[t];
            if w == F::zero() {
                continue;
            }
            let base = rows[t] * self.vocab;
            for (j, &l) in lps[t].iter().enumerate() {
                let onehot = if j == tok as usize { F::one() } else { F::zero() };
                grad[base + j] += w * (onehot - l.exp());
            }
        }
        logps
    }
}
