use super::{Architecture, NeuralPolicy, Policy, Trainable, TabularPolicy};
use crate::scalar::Real;
use crate::vocab::TokenId;

/// Either trainable policy kind, as restored from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy<F> {
    Tabular(TabularPolicy<F>),
    Neural(NeuralPolicy<F>),
}

#[derive(Debug, Clone)]
pub enum AnyState<F> {
    Tabular(Vec<TokenId>),
    Neural(super::NeuralState<F>),
}

impl<F: Real> From<TabularPolicy<F>> for AnyPolicy<F> {
    fn from(p: TabularPolicy<F>) -> Self {
        AnyPolicy::Tabular(p)
    }
}

impl<F: Real> From<NeuralPolicy<F>> for AnyPolicy<F> {
    fn from(p: NeuralPolicy<F>) -> Self {
        AnyPolicy::Neural(p)
    }
}

impl<F: Real> Policy<F> for AnyPolicy<F> {
    type State = AnyState<F>;

    fn vocab_size(&self) -> usize {
        match self {
            AnyPolicy::Tabular(p) => p.vocab_size(),
            AnyPolicy::Neural(p) => p.vocab_size(),
        }
    }

    fn start(&self, prompt: &[TokenId]) -> AnyState<F> {
        match self {
            AnyPolicy::Tabular(p) => AnyState::Tabular(p.start(prompt)),
            AnyPolicy::Neural(p) => AnyState::Neural(p.start(prompt)),
        }
    }

    fn next_logits(&self, state: &AnyState<F>) -> Vec<F> {
        match (self, state) {
            (AnyPolicy::Tabular(p), AnyState::Tabular(s)) => p.next_logits(s),
            (AnyPolicy::Neural(p), AnyState::Neural(s)) => p.next_logits(s),
            _ => unreachable!("state from a different policy kind"),
        }
    }

    fn advance(&self, state: &mut AnyState<F>, token: TokenId) {
        match (self, state) {
            (AnyPolicy::Tabular(p), AnyState::Tabular(s)) => p.advance(s, token),
            (AnyPolicy::Neural(p), AnyState::Neural(s)) => p.advance(s, token),
            _ => unreachable!("state from a different policy kind"),
        }
    }
}

impl<F: Real> Trainable<F> for AnyPolicy<F> {
    fn params(&self) -> &[F] {
        match self {
            AnyPolicy::Tabular(p) => p.params(),
            AnyPolicy::Neural(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [F] {
        match self {
            AnyPolicy::Tabular(p) => p.params_mut(),
            AnyPolicy::Neural(p) => p.params_mut(),
        }
    }

    fn architecture(&self) -> Architecture {
        match self {
            AnyPolicy::Tabular(p) => p.architecture(),
            AnyPolicy::Neural(p) => p.architecture(),
        }
    }

    fn forward_backward(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
        weigh: &mut dyn FnMut(&[F]) -> Vec<F>,
        grad: &mut [F],
    ) -> Vec<F> {
        match self {
            AnyPolicy::Tabular(p) => p.forward_backward(prompt, completion, weigh, grad),
            AnyPolicy::Neural(p) => p.forward_backward(prompt, completion, weigh, grad),
        }
    }
}
