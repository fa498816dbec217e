//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's metric or loss code.

#![allow(dead_code)]

use grpo_core::grpo::CompletionGroup;
use grpo_core::vocab::{BOS, EOS, PAD};
use grpo_core::TokenId;

/// All contiguous n-grams, listed (not counted).
fn ngrams(tokens: &[TokenId], n: usize) -> Vec<&[TokenId]> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| &tokens[i..i + n]).collect()
}

/// Clipped overlap by repeatedly striking matched n-grams off a list.
fn clipped_overlap(cand: &[TokenId], refr: &[TokenId], n: usize) -> (usize, usize, usize) {
    let c = ngrams(cand, n);
    let mut pool = ngrams(refr, n);
    let mut hits = 0;
    for g in &c {
        if let Some(pos) = pool.iter().position(|r| r == g) {
            pool.remove(pos);
            hits += 1;
        }
    }
    (hits, c.len(), ngrams(refr, n).len())
}

pub fn bleu(cand: &[TokenId], refr: &[TokenId]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut precisions = Vec::new();
    for n in 1..=4 {
        let (hits, total, _) = clipped_overlap(cand, refr, n);
        let p = match (hits, n) {
            (0, 1) => return 0.0,
            (0, _) => 1.0 / (total as f64 + 1.0),
            _ => hits as f64 / total as f64,
        };
        precisions.push(p);
    }
    let geo = precisions.iter().product::<f64>().powf(0.25);
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * geo).min(1.0)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn rouge_n(cand: &[TokenId], refr: &[TokenId], n: usize) -> f64 {
    let (hits, ct, rt) = clipped_overlap(cand, refr, n);
    let p = if ct == 0 { 0.0 } else { hits as f64 / ct as f64 };
    let r = if rt == 0 { 0.0 } else { hits as f64 / rt as f64 };
    f1(p, r)
}

fn is_subsequence(needle: &[TokenId], hay: &[TokenId]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

/// LCS by enumerating every subsequence of the candidate (exponential; keep
/// candidates short).
pub fn lcs_brute(cand: &[TokenId], refr: &[TokenId]) -> usize {
    assert!(cand.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << cand.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<TokenId> = (0..cand.len()).filter(|i| mask >> i & 1 == 1).map(|i| cand[i]).collect();
        if is_subsequence(&sub, refr) {
            best = k;
        }
    }
    best
}

pub fn rouge_l(cand: &[TokenId], refr: &[TokenId]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let l = lcs_brute(cand, refr) as f64;
    f1(l / cand.len() as f64, l / refr.len() as f64)
}

/// Every sequence over `0..vocab` of at most `max_len` tokens that ends at its
/// first EOS or reaches `max_len` without one.
pub fn all_completions(vocab: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<TokenId>> = vec![Vec::new()];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for t in 0..vocab as TokenId {
                let mut s = prefix.clone();
                s.push(t);
                if t == EOS || len == max_len {
                    out.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    out
}

/// Term-by-term evaluation of the clipped, token-normalized group loss and
/// its gradient for an order-k tabular policy, straight from the logit
/// tables.
pub struct TableOracle<'a> {
    pub vocab: usize,
    pub order: usize,
    pub table: &'a [f64],
    pub reference: &'a [f64],
}

impl TableOracle<'_> {
    fn rows(&self, prompt: &[TokenId], tokens: &[TokenId]) -> Vec<usize> {
        let mut stream: Vec<TokenId> = vec![PAD; self.order];
        stream.extend_from_slice(prompt);
        stream.push(BOS);
        stream.extend_from_slice(tokens);
        let start = self.order + prompt.len() + 1;
        (0..tokens.len())
            .map(|t| {
                let end = start + t;
                stream[end - self.order..end]
                    .iter()
                    .fold(0usize, |row, &c| row * self.vocab + c as usize)
            })
            .collect()
    }

    fn softmax(&self, table: &[f64], row: usize) -> Vec<f64> {
        let z = &table[row * self.vocab..(row + 1) * self.vocab];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    pub fn evaluate(&self, group: &CompletionGroup<f64>, adv: &[f64], beta: f64, eps: f64) -> (f64, Vec<f64>) {
        let n: usize = group.members.iter().map(|m| m.tokens.len()).sum();
        let mut sum = 0.0;
        let mut grad = vec![0.0; self.table.len()];
        for (m, &a) in group.members.iter().zip(adv) {
            for (t, (row, &tok)) in self.rows(&group.prompt, &m.tokens).into_iter().zip(&m.tokens).enumerate() {
                let p = self.softmax(self.table, row);
                let q = self.softmax(self.reference, row);
                let pt = p[tok as usize];
                let s = pt / m.old_logprobs[t].exp();
                // objective and its derivative with respect to log pi_theta
                let (obj, dobj) = if m.off_policy {
                    (s * a, s * a)
                } else {
                    let c = s.clamp(1.0 - eps, 1.0 + eps);
                    if s * a <= c * a {
                        (s * a, s * a)
                    } else {
                        (c * a, 0.0)
                    }
                };
                let r = q[tok as usize] / pt;
                sum += obj - beta * (r - r.ln() - 1.0);
                let w = -(dobj - beta * (1.0 - r)) / n as f64;
                for j in 0..self.vocab {
                    let ind = if j == tok as usize { 1.0 } else { 0.0 };
                    grad[row * self.vocab + j] += w * (ind - p[j]);
                }
            }
        }
        (-sum / n as f64, grad)
    }
}
