//! Recurrent policy with dot-product attention over the prompt, trained by
//! hand-written backpropagation through time.
//!
//! ```text
//! h_s     = tanh(W_xh · emb[x_s] + W_hh · h_{s-1} + b_h)
//! a_j     = (W_q · h_s) · k_j            k_j = h_j for prompt position j
//! c_s     = Σ_j softmax(a)_j · emb[p_j]
//! logits  = W_hy · h_s + W_cy · c_s + b_y
//! ```
//!
//! The input stream is `prompt ++ [BOS] ++ completion`; the distribution over
//! completion token `t` is read from the hidden state after consuming BOS and
//! the first `t` completion tokens. The recurrent states of the prompt serve
//! as attention keys and the prompt token embeddings as values, which lets
//! the network point at source positions instead of memorizing them.

use std::sync::Arc;

use rand::Rng;

use super::{Architecture, Policy, PolicyError, Trainable};
use crate::scalar::{log_softmax, Real};
use crate::vocab::{TokenId, BOS};

pub const INIT_SCALE: f64 = 0.08;
pub const MAX_PARAMS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuralShape {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl NeuralShape {
    pub fn new(vocab: usize, embed: usize, hidden: usize) -> Self {
        Self { vocab, embed, hidden }
    }

    pub fn param_count(&self) -> usize {
        let Self { vocab: v, embed: e, hidden: h } = *self;
        v * e + h * e + h * h + h + v * h + v + h * h + v * e
    }

    fn layout(&self) -> Layout {
        let Self { vocab: v, embed: e, hidden: h } = *self;
        let emb = 0;
        let w_xh = emb + v * e;
        let w_hh = w_xh + h * e;
        let b_h = w_hh + h * h;
        let w_hy = b_h + h;
        let b_y = w_hy + v * h;
        let w_q = b_y + v;
        let w_cy = w_q + h * h;
        Layout { emb, w_xh, w_hh, b_h, w_hy, b_y, w_q, w_cy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    emb: usize,
    w_xh: usize,
    w_hh: usize,
    b_h: usize,
    w_hy: usize,
    b_y: usize,
    w_q: usize,
    w_cy: usize,
}

/// Attention memory built from the prompt: keys are the prompt's recurrent
/// states, values its token embeddings (both row-major).
#[derive(Debug, PartialEq)]
pub struct PromptMemory<F> {
    keys: Vec<F>,
    values: Vec<F>,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralState<F> {
    hidden: Vec<F>,
    memory: Arc<PromptMemory<F>>,
}

/// Attention read-out at one position, kept for the backward pass.
struct Attention<F> {
    query: Vec<F>,
    weights: Vec<F>,
    context: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPolicy<F> {
    shape: NeuralShape,
    layout: Layout,
    theta: Vec<F>,
}

/// `out[i] += Σ_j m[i*cols + j] * x[j]`
#[inline]
fn matvec_acc<F: Real>(m: &[F], x: &[F], out: &mut [F]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut acc = F::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *o += acc;
    }
}

/// `out[j] += Σ_i m[i*cols + j] * y[i]`
#[inline]
fn matvec_t_acc<F: Real>(m: &[F], y: &[F], out: &mut [F]) {
    let cols = out.len();
    for (row, &yi) in m.chunks_exact(cols).zip(y) {
        if yi == F::zero() {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += *a * yi;
        }
    }
}

/// `g[i*cols + j] += y[i] * x[j]`
#[inline]
fn outer_acc<F: Real>(g: &mut [F], y: &[F], x: &[F]) {
    let cols = x.len();
    for (row, &yi) in g.chunks_exact_mut(cols).zip(y) {
        if yi == F::zero() {
            continue;
        }
        for (gij, &xj) in row.iter_mut().zip(x) {
            *gij += yi * xj;
        }
    }
}

impl<F: Real> NeuralPolicy<F> {
    /// Parameters drawn uniformly from `[-0.08, 0.08]`.
    pub fn new<R: Rng + ?Sized>(shape: NeuralShape, rng: &mut R) -> Result<Self, PolicyError> {
        let mut p = Self::from_params(shape, vec![F::zero(); shape.param_count()])?;
        for x in &mut p.theta {
            *x = F::lit(rng.random_range(-INIT_SCALE..=INIT_SCALE));
        }
        Ok(p)
    }

    pub fn from_params(shape: NeuralShape, theta: Vec<F>) -> Result<Self, PolicyError> {
        if shape.vocab < 4 || shape.embed == 0 || shape.hidden == 0 {
            return Err(PolicyError::BadArchitecture(format!("{shape:?}")));
        }
        if shape.param_count() > MAX_PARAMS {
            return Err(PolicyError::BadArchitecture(format!(
                "{} parameters exceeds the {MAX_PARAMS} budget",
                shape.param_count()
            )));
        }
        if theta.len() != shape.param_count() {
            return Err(PolicyError::ShapeMismatch {
                expected: shape.param_count(),
                got: theta.len(),
            });
        }
        Ok(Self {
            shape,
            layout: shape.layout(),
            theta,
        })
    }

    pub fn shape(&self) -> NeuralShape {
        self.shape
    }

    fn emb(&self, tok: TokenId) -> &[F] {
        let e = self.shape.embed;
        let start = self.layout.emb + tok as usize * e;
        &self.theta[start..start + e]
    }

    fn slice(&self, start: usize, len: usize) -> &[F] {
        &self.theta[start..start + len]
    }

    /// One recurrence step, returning the new hidden state.
    fn step(&self, h_prev: &[F], tok: TokenId) -> Vec<F> {
        let NeuralShape { embed: e, hidden: h, .. } = self.shape;
        let mut a = self.slice(self.layout.b_h, h).to_vec();
        matvec_acc(self.slice(self.layout.w_xh, h * e), self.emb(tok), &mut a);
        matvec_acc(self.slice(self.layout.w_hh, h * h), h_prev, &mut a);
        a.iter_mut().for_each(|x| *x = x.tanh());
        a
    }

    fn attend(&self, hid: &[F], memory: &PromptMemory<F>) -> Attention<F> {
        let NeuralShape { embed: e, hidden: h, .. } = self.shape;
        let mut query = vec![F::zero(); h];
        matvec_acc(self.slice(self.layout.w_q, h * h), hid, &mut query);
        let mut context = vec![F::zero(); e];
        if memory.len == 0 {
            return Attention { query, weights: Vec::new(), context };
        }
        let scores: Vec<F> = memory
            .keys
            .chunks_exact(h)
            .map(|k| k.iter().zip(&query).map(|(a, b)| *a * *b).sum())
            .collect();
        let weights = crate::scalar::softmax(&scores);
        for (w, v) in weights.iter().zip(memory.values.chunks_exact(e)) {
            for (c, x) in context.iter_mut().zip(v) {
                *c += *w * *x;
            }
        }
        Attention { query, weights, context }
    }

    fn output(&self, hid: &[F], att: &Attention<F>) -> Vec<F> {
        let NeuralShape { vocab: v, embed: e, hidden: h } = self.shape;
        let mut z = self.slice(self.layout.b_y, v).to_vec();
        matvec_acc(self.slice(self.layout.w_hy, v * h), hid, &mut z);
        matvec_acc(self.slice(self.layout.w_cy, v * e), &att.context, &mut z);
        z
    }

    /// Recurrent states after each prompt token, and the attention memory.
    fn read_prompt(&self, prompt: &[TokenId]) -> (Vec<F>, PromptMemory<F>) {
        let NeuralShape { embed: e, hidden: h, .. } = self.shape;
        let mut hid = vec![F::zero(); h];
        let mut keys = Vec::with_capacity(prompt.len() * h);
        let mut values = Vec::with_capacity(prompt.len() * e);
        for &t in prompt {
            hid = self.step(&hid, t);
            keys.extend_from_slice(&hid);
            values.extend_from_slice(self.emb(t));
        }
        (hid, PromptMemory { keys, values, len: prompt.len() })
    }
}

impl<F: Real> Policy<F> for NeuralPolicy<F> {
    type State = NeuralState<F>;

    fn vocab_size(&self) -> usize {
        self.shape.vocab
    }

    fn start(&self, prompt: &[TokenId]) -> NeuralState<F> {
        let (hid, memory) = self.read_prompt(prompt);
        NeuralState {
            hidden: self.step(&hid, BOS),
            memory: Arc::new(memory),
        }
    }

    fn next_logits(&self, state: &NeuralState<F>) -> Vec<F> {
        self.output(&state.hidden, &self.attend(&state.hidden, &state.memory))
    }

    fn advance(&self, state: &mut NeuralState<F>, token: TokenId) {
        state.hidden = self.step(&state.hidden, token);
    }
}

impl<F: Real> Trainable<F> for NeuralPolicy<F> {
    fn params(&self) -> &[F] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [F] {
        &mut self.theta
    }

    fn architecture(&self) -> Architecture {
        Architecture::Neural {
            embed: self.shape.embed,
            hidden: self.shape.hidden,
        }
    }

    fn forward_backward(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
        weigh: &mut dyn FnMut(&[F]) -> Vec<F>,
        grad: &mut [F],
    ) -> Vec<F> {
        let NeuralShape { vocab: v, embed: e, hidden: hd } = self.shape;
        let Layout { emb, w_xh, w_hh, b_h, w_hy, b_y, w_q, w_cy } = self.layout;

        let inputs: Vec<TokenId> = prompt
            .iter()
            .copied()
            .chain(std::iter::once(BOS))
            .chain(completion[..completion.len() - 1].iter().copied())
            .collect();
        let first_out = prompt.len();

        // hs[s + 1] is the hidden state after consuming inputs[s].
        let mut hs: Vec<Vec<F>> = Vec::with_capacity(inputs.len() + 1);
        hs.push(vec![F::zero(); hd]);
        for &x in &inputs {
            let next = self.step(hs.last().expect("non-empty"), x);
            hs.push(next);
        }
        let memory = PromptMemory {
            keys: hs[1..=prompt.len()].concat(),
            values: prompt.iter().flat_map(|&t| self.emb(t).to_vec()).collect(),
            len: prompt.len(),
        };

        let mut atts = Vec::with_capacity(completion.len());
        let mut lps = Vec::with_capacity(completion.len());
        let mut logps = Vec::with_capacity(completion.len());
        for (t, &tok) in completion.iter().enumerate() {
            let hid = &hs[first_out + t + 1];
            let att = self.attend(hid, &memory);
            let lp = log_softmax(&self.output(hid, &att));
            logps.push(lp[tok as usize]);
            lps.push(lp);
            atts.push(att);
        }
        let weights = weigh(&logps);
        if weights.iter().all(|w| *w == F::zero()) {
            return logps;
        }

        // dh_out[s] accumulates dL/d hs[s + 1] from outside the recurrence:
        // the output layer, the query, and (for prompt positions) the keys.
        let mut dh_out: Vec<Vec<F>> = vec![vec![F::zero(); hd]; inputs.len()];
        for (t, &tok) in completion.iter().enumerate() {
            let w = weights[t];
            if w == F::zero() {
                continue;
            }
            let s = first_out + t;
            let att = &atts[t];
            let dz: Vec<F> = lps[t]
                .iter()
                .enumerate()
                .map(|(j, l)| {
                    let onehot = if j == tok as usize { F::one() } else { F::zero() };
                    w * (onehot - l.exp())
                })
                .collect();
            outer_acc(&mut grad[w_hy..w_hy + v * hd], &dz, &hs[s + 1]);
            for (g, d) in grad[b_y..b_y + v].iter_mut().zip(&dz) {
                *g += *d;
            }
            matvec_t_acc(&self.theta[w_hy..w_hy + v * hd], &dz, &mut dh_out[s]);

            if memory.len == 0 {
                continue;
            }
            outer_acc(&mut grad[w_cy..w_cy + v * e], &dz, &att.context);
            let mut dc = vec![F::zero(); e];
            matvec_t_acc(&self.theta[w_cy..w_cy + v * e], &dz, &mut dc);
            let dalpha: Vec<F> = memory
                .values
                .chunks_exact(e)
                .map(|val| val.iter().zip(&dc).map(|(a, b)| *a * *b).sum())
                .collect();
            let mean_dalpha: F = att.weights.iter().zip(&dalpha).map(|(a, d)| *a * *d).sum();
            let mut dq = vec![F::zero(); hd];
            for j in 0..memory.len {
                let alpha = att.weights[j];
                let erow = emb + prompt[j] as usize * e;
                for (g, d) in grad[erow..erow + e].iter_mut().zip(&dc) {
                    *g += alpha * *d;
                }
                let da = alpha * (dalpha[j] - mean_dalpha);
                if da == F::zero() {
                    continue;
                }
                for (q, k) in dq.iter_mut().zip(&memory.keys[j * hd..(j + 1) * hd]) {
                    *q += da * *k;
                }
                for (dk, q) in dh_out[j].iter_mut().zip(&att.query) {
                    *dk += da * *q;
                }
            }
            outer_acc(&mut grad[w_q..w_q + hd * hd], &dq, &hs[s + 1]);
            matvec_t_acc(&self.theta[w_q..w_q + hd * hd], &dq, &mut dh_out[s]);
        }

        let mut carry = vec![F::zero(); hd];
        for s in (0..inputs.len()).rev() {
            let h = &hs[s + 1];
            let mut da = carry;
            for (a, d) in da.iter_mut().zip(&dh_out[s]) {
                *a += *d;
            }
            for (a, hv) in da.iter_mut().zip(h) {
                *a *= F::one() - *hv * *hv;
            }
            for (g, d) in grad[b_h..b_h + hd].iter_mut().zip(&da) {
                *g += *d;
            }
            let x = inputs[s] as usize;
            outer_acc(&mut grad[w_xh..w_xh + hd * e], &da, self.emb(inputs[s]));
            let erow = emb + x * e;
            matvec_t_acc(&self.theta[w_xh..w_xh + hd * e], &da, &mut grad[erow..erow + e]);
            outer_acc(&mut grad[w_hh..w_hh + hd * hd], &da, &hs[s]);
            let mut next_carry = vec![F::zero(); hd];
            matvec_t_acc(&self.theta[w_hh..w_hh + hd * hd], &da, &mut next_carry);
            carry = next_carry;
        }
        logps
    }
}
