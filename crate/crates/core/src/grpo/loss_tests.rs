use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{check_gradient, Stencil};
use crate::policy::{grad_weighted_logprob, next_distribution, NeuralPolicy, NeuralShape, TabularPolicy};
use crate::vocab::{TokenId, BOS, EOS, PAD};

const V: usize = 6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn config(beta: f64) -> TrainConfig {
    TrainConfig {
        beta,
        group_size: 3,
        ..TrainConfig::default()
    }
}

fn on_policy<P: Policy<f64>>(policy: &P, prompt: &[TokenId], tokens: Vec<TokenId>) -> GroupMember<f64> {
    let old_logprobs = logprob(policy, prompt, &tokens).unwrap();
    GroupMember {
        tokens,
        old_logprobs,
        off_policy: false,
    }
}

/// Every sequence over the vocabulary with at most `max_len` tokens that
/// either ends at its first EOS or reaches `max_len` without one.
fn all_completions(max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<TokenId>> = vec![Vec::new()];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for t in 0..V as TokenId {
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

/// Independent evaluation of the loss and its gradient for a tabular policy,
/// working directly on the raw logit table.
struct TableOracle<'a> {
    table: &'a [f64],
    reference: &'a [f64],
    order: usize,
}

impl TableOracle<'_> {
    fn context_rows(&self, prompt: &[TokenId], tokens: &[TokenId]) -> Vec<usize> {
        let mut stream: Vec<TokenId> = vec![PAD; self.order];
        stream.extend_from_slice(prompt);
        stream.push(BOS);
        stream.extend_from_slice(tokens);
        let start = self.order + prompt.len() + 1;
        (0..tokens.len())
            .map(|t| {
                let end = start + t;
                let mut row = 0usize;
                for &c in &stream[end - self.order..end] {
                    row = row * V + c as usize;
                }
                row
            })
            .collect()
    }

    fn probs(table: &[f64], row: usize) -> Vec<f64> {
        let z = &table[row * V..(row + 1) * V];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn evaluate(&self, group: &CompletionGroup<f64>, adv: &[f64], beta: f64, eps: f64) -> (f64, Vec<f64>) {
        let n: usize = group.members.iter().map(|m| m.tokens.len()).sum();
        let mut sum = 0.0;
        let mut grad = vec![0.0; self.table.len()];
        for (m, &a) in group.members.iter().zip(adv) {
            let rows = self.context_rows(&group.prompt, &m.tokens);
            for (t, (&row, &tok)) in rows.iter().zip(&m.tokens).enumerate() {
                let p = Self::probs(self.table, row);
                let q = Self::probs(self.reference, row);
                let pt = p[tok as usize];
                let s = pt / m.old_logprobs[t].exp();
                let (obj, dobj) = if m.off_policy {
                    (s * a, s * a)
                } else {
                    let clamped = s.clamp(1.0 - eps, 1.0 + eps);
                    if s * a <= clamped * a {
                        (s * a, s * a)
                    } else {
                        (clamped * a, 0.0)
                    }
                };
                let r = q[tok as usize] / pt;
                sum += obj - beta * (r - r.ln() - 1.0);
                let w = -(dobj - beta * (1.0 - r)) / n as f64;
                for j in 0..V {
                    let ind = if j == tok as usize { 1.0 } else { 0.0 };
                    grad[row * V + j] += w * (ind - p[j]);
                }
            }
        }
        (-sum / n as f64, grad)
    }
}

#[test]
fn worked_clip_examples() {
    assert_eq!(token_objective(1.5, 1.0, 0.2, true), 1.2);
    assert_eq!(token_objective(0.5, -1.0, 0.2, true), -0.8);
    assert_eq!(token_objective(1.5, 1.0, 0.2, false), 1.5);
    assert!(token_term(1.5, 1.0, 0.2, true).clipped);
    assert_eq!(token_term(1.5, 1.0, 0.2, true).dlogp, 0.0);
}

#[test]
fn kl_examples() {
    assert_eq!(kl_token(-1.3, -1.3), 0.0);
    // r = 2
    let k = kl_token(-2.0, -2.0 + 2.0_f64.ln());
    assert!((k - 0.306_852_819_440_054_7).abs() < 1e-12);
    let mut r = rng(5);
    for _ in 0..1000 {
        let (a, b) = (r.random_range(-20.0..0.0), r.random_range(-20.0..0.0));
        assert!(kl_token(a, b) >= 0.0);
    }
}

#[test]
fn zero_advantages_without_kl_give_nothing() {
    let p = TabularPolicy::<f64>::random(V, 1, 1.0, &mut rng(1)).unwrap();
    let prompt = vec![4, 5];
    let group = CompletionGroup {
        prompt: prompt.clone(),
        members: vec![on_policy(&p, &prompt, vec![4, EOS]), on_policy(&p, &prompt, vec![5, 5, 4])],
        reference_truncated: false,
    };
    let out = dapo_loss(&group, &[0.0, 0.0], &p, &p, &config(0.0)).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.grad.iter().all(|g| *g == 0.0));
}

#[test]
fn ratio_one_reduces_to_reinforce() {
    let p = NeuralPolicy::<f64>::new(NeuralShape::new(V, 4, 5), &mut rng(2)).unwrap();
    let prompt = vec![4, 5, 4];
    let tokens = [vec![4, EOS], vec![5, 5, 4, EOS], vec![3]];
    let adv = [0.7, -1.1, 0.4];
    let group = CompletionGroup {
        prompt: prompt.clone(),
        members: tokens.iter().map(|t| on_policy(&p, &prompt, t.clone())).collect(),
        reference_truncated: false,
    };
    let out = dapo_loss(&group, &adv, &p, &p, &config(0.0)).unwrap();
    let n = 7.0;
    let expected_loss = -(0.7 * 2.0 - 1.1 * 4.0 + 0.4 * 1.0) / n;
    assert!((out.loss - expected_loss).abs() < 1e-12);
    let mut expected = vec![0.0; p.params().len()];
    for (t, a) in tokens.iter().zip(adv) {
        let g = grad_weighted_logprob(&p, &prompt, t, &vec![-a / n; t.len()]).unwrap();
        for (e, x) in expected.iter_mut().zip(g) {
            *e += x;
        }
    }
    for (a, b) in out.grad.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-10);
    }
    assert_eq!(out.clip_fraction, 0.0);
}

fn exhaustive_oracle_check(mixed: bool) {
    let completions = all_completions(3);
    let mut r = rng(if mixed { 11 } else { 10 });
    let eps = 0.2;
    for order in 0..=2 {
        let policy = TabularPolicy::<f64>::random(V, order, 1.5, &mut r).unwrap();
        let old = TabularPolicy::<f64>::random(V, order, 1.5, &mut r).unwrap();
        let reference = TabularPolicy::<f64>::random(V, order, 1.5, &mut r).unwrap();
        let oracle = TableOracle {
            table: policy.params(),
            reference: reference.params(),
            order,
        };
        let prompt = vec![4, 5];
        let g = 4;
        for chunk in completions.chunks(g) {
            if chunk.len() < 2 {
                continue;
            }
            let mut members: Vec<GroupMember<f64>> = chunk.iter().map(|c| on_policy(&old, &prompt, c.clone())).collect();
            if mixed {
                let last = members.last_mut().unwrap();
                last.old_logprobs = vec![0.0; last.tokens.len()];
                last.off_policy = true;
            }
            let group = CompletionGroup {
                prompt: prompt.clone(),
                members,
                reference_truncated: false,
            };
            let adv: Vec<f64> = (0..chunk.len()).map(|_| r.random_range(-2.0..2.0)).collect();
            let beta = 0.05;
            let out = dapo_loss(&group, &adv, &policy, &reference, &config(beta)).unwrap();
            let (loss, grad) = oracle.evaluate(&group, &adv, beta, eps);
            assert!((out.loss - loss).abs() < 1e-10, "order {order}: {} vs {loss}", out.loss);
            for (a, b) in out.grad.iter().zip(&grad) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn exhaustive_on_policy_groups_match_oracle() {
    // [EOS], then (V − 1) two-token and (V − 1)² · V three-token sequences.
    assert_eq!(all_completions(3).len(), 1 + (V - 1) + (V - 1) * (V - 1) * V);
    exhaustive_oracle_check(false);
}

#[test]
fn exhaustive_mixed_groups_match_oracle() {
    exhaustive_oracle_check(true);
}

#[test]
fn clipping_is_inactive_inside_the_trust_region() {
    let mut r = rng(3);
    let p = TabularPolicy::<f64>::random(V, 1, 1.0, &mut r).unwrap();
    let prompt = vec![4];
    let members: Vec<GroupMember<f64>> = [vec![4, 5, EOS], vec![5, EOS], vec![3, 3, 3, 4]]
        .into_iter()
        .map(|t| {
            let mut m = on_policy(&p, &prompt, t);
            for lp in &mut m.old_logprobs {
                *lp += r.random_range(-0.15..0.15);
            }
            m
        })
        .collect();
    let adv = [1.0, -0.5, -0.5];
    let group = CompletionGroup {
        prompt,
        members,
        reference_truncated: false,
    };
    let out = dapo_loss(&group, &adv, &p, &p, &config(0.0)).unwrap();
    let mut unclipped = 0.0;
    for (m, a) in group.members.iter().zip(adv) {
        let lp = logprob(&p, &group.prompt, &m.tokens).unwrap();
        for s in importance_ratios(&lp, m) {
            assert!((0.8..=1.2).contains(&s));
            assert_eq!(token_objective(s, a, 0.2, true), token_objective(s, a, 0.2, false));
            unclipped += s * a;
        }
    }
    assert!((out.loss + unclipped / group.token_count() as f64).abs() < 1e-12);
    assert_eq!(out.clip_fraction, 0.0);
}

#[test]
fn off_policy_weight_is_the_policy_probability() {
    let p = NeuralPolicy::<f64>::new(NeuralShape::new(V, 4, 5), &mut rng(4)).unwrap();
    let prompt = vec![4, 5];
    let (member, truncated) = GroupMember::<f64>::reference(&[5, 4, 4], 10);
    assert!(!truncated && member.off_policy);
    assert_eq!(member.tokens, vec![5, 4, 4, EOS]);
    let lp = logprob(&p, &prompt, &member.tokens).unwrap();
    let weights = importance_ratios(&lp, &member);
    for t in 0..member.tokens.len() {
        let dist = next_distribution(&p, &prompt, &member.tokens[..t]);
        assert!((weights[t] - dist[member.tokens[t] as usize]).abs() < 1e-15);
        assert!(weights[t] < 1.0);
    }
    // Far outside the trust region, yet never clipped.
    let term = token_term(3.0, 1.0, 0.2, false);
    assert_eq!((term.value, term.dlogp, term.clipped), (3.0, 3.0, false));
}

#[test]
fn truncated_reference_is_flagged() {
    let (member, truncated) = GroupMember::<f64>::reference(&[4, 4, 4, 4], 3);
    assert!(truncated);
    assert_eq!(member.tokens, vec![4, 4, 4]);
}

#[test]
fn normalization_counts_every_token() {
    let mut r = rng(6);
    let p = NeuralPolicy::<f64>::new(NeuralShape::new(V, 4, 6), &mut r).unwrap();
    let reference = NeuralPolicy::<f64>::new(NeuralShape::new(V, 4, 6), &mut r).unwrap();
    for _ in 0..20 {
        let prompt: Vec<TokenId> = (0..3).map(|_| r.random_range(3..V as TokenId)).collect();
        let g = r.random_range(2..6);
        let members: Vec<GroupMember<f64>> = (0..g)
            .map(|_| {
                let len = r.random_range(1..8);
                let tokens = (0..len).map(|_| r.random_range(0..V as TokenId)).collect();
                let mut m = on_policy(&p, &prompt, tokens);
                for lp in &mut m.old_logprobs {
                    *lp += r.random_range(-0.5..0.5);
                }
                m
            })
            .collect();
        let adv: Vec<f64> = (0..g).map(|_| r.random_range(-2.0..2.0)).collect();
        let group = CompletionGroup {
            prompt,
            members,
            reference_truncated: false,
        };
        let beta = 0.1;
        let out = dapo_loss(&group, &adv, &p, &reference, &config(beta)).unwrap();

        let mut total = 0.0;
        let mut count = 0usize;
        for (m, a) in group.members.iter().zip(&adv) {
            let lp = logprob(&p, &group.prompt, &m.tokens).unwrap();
            let lr = logprob(&reference, &group.prompt, &m.tokens).unwrap();
            for t in 0..m.tokens.len() {
                let s = (lp[t] - m.old_logprobs[t]).exp();
                let l = (s * a).min(s.clamp(0.8, 1.2) * a);
                let ratio = (lr[t] - lp[t]).exp();
                total += l - beta * (ratio - ratio.ln() - 1.0);
                count += 1;
            }
        }
        assert_eq!(out.tokens, count);
        assert!((out.loss + total / count as f64).abs() < 1e-10);

        // Duplicating every member with zero advantage doubles |G| and adds
        // nothing to the sum when β = 0.
        let out0 = dapo_loss(&group, &adv, &p, &reference, &config(0.0)).unwrap();
        let mut padded = group.clone();
        let mut adv_padded = adv.clone();
        for m in &group.members {
            padded.members.push(m.clone());
            adv_padded.push(0.0);
        }
        let out_padded = dapo_loss(&padded, &adv_padded, &p, &reference, &config(0.0)).unwrap();
        assert!((out_padded.loss - out0.loss / 2.0).abs() < 1e-12);
    }
}

fn full_step_fd<P: Trainable<f64>>(policy: &P, reference: &P, h: f64, stencil: Stencil, mixed: bool, seed: u64) -> f64 {
    let mut r = rng(seed);
    let prompt = vec![4, 5, 3];
    let cfg = TrainConfig {
        mixed_policy: mixed,
        max_completion_len: 6,
        group_size: 4,
        beta: 0.05,
        ..TrainConfig::default()
    };
    let group = crate::grpo::build_group::<f64, P, _>(&prompt, &[4, 4, 5], policy, &cfg, &mut r).unwrap();
    // Shift the behaviour log-probs so ratios differ from one without landing
    // on a clip boundary.
    let mut group = group;
    for m in group.members.iter_mut().filter(|m| !m.off_policy) {
        for lp in &mut m.old_logprobs {
            *lp += r.random_range(-0.1..0.1);
        }
    }
    let adv: Vec<f64> = (0..group.members.len()).map(|_| r.random_range(-1.5..1.5)).collect();
    let analytic = dapo_loss(&group, &adv, policy, reference, &cfg).unwrap().grad;
    let n = analytic.len();
    let coords: Vec<usize> = (0..50).map(|_| r.random_range(0..n)).collect();
    let mut theta = policy.params().to_vec();
    let mut probe = policy.clone();
    let report = check_gradient(&mut theta, &analytic, &coords, h, stencil, 1e-4, |th| {
        probe.params_mut().copy_from_slice(th);
        dapo_loss(&group, &adv, &probe, reference, &cfg).unwrap().loss
    });
    report.max_rel_err
}

#[test]
fn full_step_gradient_neural() {
    let mut r = rng(7);
    let shape = NeuralShape::new(V, 5, 7);
    let p = NeuralPolicy::<f64>::new(shape, &mut r).unwrap();
    let reference = NeuralPolicy::<f64>::new(shape, &mut r).unwrap();
    for mixed in [false, true] {
        let err = full_step_fd(&p, &reference, 1e-5, Stencil::Central3, mixed, 70);
        assert!(err < 1e-4, "mixed={mixed}: {err}");
    }
}

#[test]
fn full_step_gradient_tabular() {
    let mut r = rng(8);
    for order in 0..=2 {
        let p = TabularPolicy::<f64>::random(V, order, 1.0, &mut r).unwrap();
        let reference = TabularPolicy::<f64>::random(V, order, 1.0, &mut r).unwrap();
        for mixed in [false, true] {
            let err = full_step_fd(&p, &reference, 1e-3, Stencil::Central5, mixed, 80 + order as u64);
            assert!(err < 1e-8, "order {order} mixed={mixed}: {err}");
        }
    }
}
