use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{check_gradient, Stencil};
use crate::scalar::softmax;
use crate::vocab::{BOS, PAD};

const V: usize = 9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn neural(seed: u64) -> NeuralPolicy<f64> {
    NeuralPolicy::new(NeuralShape::new(V, 6, 8), &mut rng(seed)).unwrap()
}

fn tabular(seed: u64, order: usize) -> TabularPolicy<f64> {
    TabularPolicy::random(V, order, 1.5, &mut rng(seed)).unwrap()
}

fn random_seq(r: &mut ChaCha8Rng, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| r.random_range(0..V as TokenId)).collect()
}

fn train_params() -> SamplingParams {
    SamplingParams {
        temperature: 1.0,
        top_p: 1.0,
        max_len: 12,
    }
}

#[test]
fn distributions_normalize() {
    let mut r = rng(1);
    let n = neural(2);
    let t = tabular(3, 2);
    for _ in 0..100 {
        let (lp, lx) = (r.random_range(0..6), r.random_range(0..6));
        let prompt = random_seq(&mut r, lp);
        let prefix = random_seq(&mut r, lx);
        let a: f64 = next_distribution(&n, &prompt, &prefix).iter().sum();
        let b: f64 = next_distribution(&t, &prompt, &prefix).iter().sum();
        assert!((a - 1.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
    }
}

#[test]
fn deterministic_policy_samples_its_greedy_sequence() {
    let target = vec![5, 6, 4];
    let p = RulePolicy::constant(V, target.clone());
    let out: Vec<Sampled<f64>> = sample(&p, &[4], 5, &train_params(), &mut rng(0)).unwrap();
    assert_eq!(out.len(), 5);
    for s in &out {
        assert_eq!(s.tokens, vec![5, 6, 4, EOS]);
        assert!(s.logprobs.iter().all(|&l| l == 0.0));
    }
    assert_eq!(greedy::<f64, _>(&p, &[4], 10).unwrap(), vec![5, 6, 4, EOS]);
    let lp: Vec<f64> = logprob(&p, &[4], &[5, 6, 4, EOS]).unwrap();
    assert_eq!(lp, vec![0.0; 4]);
}

#[test]
fn uniform_policy_logprob() {
    let p = TabularPolicy::<f64>::zeros(V, 1).unwrap();
    let lp = logprob(&p, &[4, 5], &[6, 7, EOS]).unwrap();
    for l in lp {
        assert!((l + (V as f64).ln()).abs() < 1e-15);
    }
}

#[test]
fn tabular_logprob_matches_table_walk() {
    let p = tabular(11, 2);
    let prompt = [4, 7];
    let completion = [5, 5, 8, EOS];
    let lp = logprob(&p, &prompt, &completion).unwrap();
    let stream = [4, 7, BOS, 5, 5, 8];
    for t in 0..completion.len() {
        let ctx = &stream[t + 1..t + 3];
        let row = p.row(ctx);
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        let expected = (row[completion[t] as usize].exp() / z).ln();
        assert!((lp[t] - expected).abs() < 1e-12);
    }
}

#[test]
fn tabular_short_prompt_pads() {
    let p = tabular(12, 2);
    let lp = logprob(&p, &[], &[6]).unwrap();
    let row = p.row(&[PAD, BOS]);
    let expected = row[6] - crate::scalar::log_sum_exp(row);
    assert!((lp[0] - expected).abs() < 1e-14);
}

#[test]
fn high_temperature_is_uniform() {
    let p = tabular(5, 0);
    let params = SamplingParams {
        temperature: 1e6,
        top_p: 1.0,
        max_len: 1,
    };
    let n = 10_000;
    let draws: Vec<Sampled<f64>> = sample(&p, &[], n, &params, &mut rng(9)).unwrap();
    let mut counts = [0usize; V];
    for d in &draws {
        counts[d.tokens[0] as usize] += 1;
    }
    let q = 1.0 / V as f64;
    let sigma = (n as f64 * q * (1.0 - q)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * q).abs() < 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn top_p_truncates_the_tail() {
    // Probabilities ∝ exp(logits); the top token alone has mass > 0.9.
    let mut p = TabularPolicy::<f64>::zeros(V, 0).unwrap();
    p.row_mut(&[])[5] = 10.0;
    let params = SamplingParams {
        temperature: 1.0,
        top_p: 0.9,
        max_len: 1,
    };
    let draws: Vec<Sampled<f64>> = sample(&p, &[], 500, &params, &mut rng(4)).unwrap();
    assert!(draws.iter().all(|d| d.tokens == vec![5]));
}

#[test]
fn sampling_is_seed_deterministic() {
    let p = neural(21);
    let a: Vec<Sampled<f64>> = sample(&p, &[4, 5], 6, &train_params(), &mut rng(77)).unwrap();
    let b: Vec<Sampled<f64>> = sample(&p, &[4, 5], 6, &train_params(), &mut rng(77)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sampled_logprobs_match_reevaluation() {
    let p = neural(22);
    let t = tabular(23, 1);
    let draws: Vec<Sampled<f64>> = sample(&p, &[6, 7], 20, &train_params(), &mut rng(1)).unwrap();
    for d in draws {
        assert!(d.tokens.last() == Some(&EOS) || d.tokens.len() == 12);
        let re = logprob(&p, &[6, 7], &d.tokens).unwrap();
        for (a, b) in d.logprobs.iter().zip(&re) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    let draws: Vec<Sampled<f64>> = sample(&t, &[6], 20, &train_params(), &mut rng(2)).unwrap();
    for d in draws {
        let re = logprob(&t, &[6], &d.tokens).unwrap();
        assert!(d.logprobs.iter().zip(&re).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn rejects_bad_inputs() {
    let p = neural(1);
    assert_eq!(
        logprob::<f64, _>(&p, &[4], &[]).unwrap_err(),
        PolicyError::EmptyCompletion
    );
    assert_eq!(
        logprob::<f64, _>(&p, &[4], &[V as TokenId]).unwrap_err(),
        PolicyError::OutOfVocab { id: V as TokenId, size: V }
    );
    assert!(matches!(
        grad_weighted_logprob(&p, &[4], &[5, 6], &[1.0]),
        Err(PolicyError::ShapeMismatch { expected: 2, got: 1 })
    ));
    let bad = SamplingParams {
        temperature: 0.0,
        ..train_params()
    };
    assert!(sample::<f64, _, _>(&p, &[4], 1, &bad, &mut rng(0)).is_err());
}

fn weighted_logprob_value<P: Trainable<f64>>(p: &P, prompt: &[TokenId], c: &[TokenId], w: &[f64]) -> f64 {
    logprob(p, prompt, c)
        .unwrap()
        .iter()
        .zip(w)
        .map(|(l, w)| l * w)
        .sum()
}

fn fd_check<P: Trainable<f64>>(policy: &P, stencil: Stencil, h: f64, coords: usize) -> f64 {
    let mut r = rng(1234);
    let prompt = random_seq(&mut r, 5);
    let mut completion = random_seq(&mut r, 6);
    completion.push(EOS);
    let weights: Vec<f64> = (0..completion.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let grad = grad_weighted_logprob(policy, &prompt, &completion, &weights).unwrap();
    let n = policy.params().len();
    let idx: Vec<usize> = (0..coords.min(n)).map(|_| r.random_range(0..n)).collect();
    let mut theta = policy.params().to_vec();
    let mut probe = policy.clone();
    let report = check_gradient(&mut theta, &grad, &idx, h, stencil, 1e-4, |th| {
        probe.params_mut().copy_from_slice(th);
        weighted_logprob_value(&probe, &prompt, &completion, &weights)
    });
    report.max_rel_err
}

#[test]
fn neural_gradient_matches_finite_differences() {
    let err = fd_check(&neural(31), Stencil::Central3, 1e-5, 200);
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn tabular_gradient_matches_finite_differences() {
    for order in 0..=2 {
        let err = fd_check(&tabular(40 + order as u64, order), Stencil::Central5, 1e-3, 200);
        assert!(err < 1e-8, "order {order}: max rel err {err}");
    }
}

#[test]
fn zero_weights_give_zero_gradient() {
    let p = neural(3);
    let g = grad_weighted_logprob(&p, &[4, 5], &[6, EOS], &[0.0, 0.0]).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn gradient_is_linear_in_weights() {
    let p = neural(4);
    let c = [6, 7, 5, EOS];
    let w1 = [0.3, -1.2, 0.5, 2.0];
    let w2 = [-0.7, 0.1, 1.5, -0.4];
    let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
    let g1 = grad_weighted_logprob(&p, &[4], &c, &w1).unwrap();
    let g2 = grad_weighted_logprob(&p, &[4], &c, &w2).unwrap();
    let g12 = grad_weighted_logprob(&p, &[4], &c, &sum).unwrap();
    for i in 0..g1.len() {
        assert!((g1[i] + g2[i] - g12[i]).abs() < 1e-10);
    }
}

#[test]
fn frozen_clone_is_independent() {
    let mut p = neural(5);
    let frozen = clone_frozen(&p);
    let c = [6, 7, EOS];
    let before: Vec<f64> = logprob(&*frozen, &[4], &c).unwrap();
    assert_eq!(before, logprob(&p, &[4], &c).unwrap());
    p.params_mut().iter_mut().for_each(|x| *x += 0.1);
    assert_ne!(logprob(&p, &[4], &c).unwrap(), before);
    assert_eq!(logprob(&frozen, &[4], &c).unwrap(), before);
}

/// All completions of at most `max_len` tokens (EOS-terminated or cut at the
/// cap) with their probabilities.
fn enumerate<P: Policy<f64>>(p: &P, prompt: &[TokenId], max_len: usize) -> Vec<(Vec<TokenId>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<TokenId>::new(), 1.0)];
    while let Some((prefix, prob)) = stack.pop() {
        let dist = next_distribution(p, prompt, &prefix);
        for (tok, q) in dist.iter().enumerate() {
            let mut seq = prefix.clone();
            seq.push(tok as TokenId);
            if tok as TokenId == EOS || seq.len() == max_len {
                out.push((seq, prob * q));
            } else {
                stack.push((seq, prob * q));
            }
        }
    }
    out
}

#[test]
fn tabular_enumeration_is_exact() {
    let p = TabularPolicy::random(6, 0, 1.0, &mut rng(8)).unwrap();
    let all = enumerate(&p, &[4], 4);
    let total: f64 = all.iter().map(|(_, q)| q).sum();
    assert!((total - 1.0).abs() < 1e-12);

    // Length is min(Geometric(p_eos), 4): E[len] = Σ_{l=0}^{3} (1 - p_eos)^l.
    let p_eos = softmax(p.row(&[]))[EOS as usize];
    let analytic: f64 = (0..4).map(|l| (1.0 - p_eos).powi(l)).sum();
    let enumerated: f64 = all.iter().map(|(s, q)| s.len() as f64 * q).sum();
    assert!((analytic - enumerated).abs() < 1e-12);

    let p1 = TabularPolicy::random(6, 1, 1.0, &mut rng(9)).unwrap();
    let total: f64 = enumerate(&p1, &[4, 5], 4).iter().map(|(_, q)| q).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn f32_policy_works() {
    let p = NeuralPolicy::<f32>::new(NeuralShape::new(V, 4, 4), &mut rng(1)).unwrap();
    let lp = logprob(&p, &[4], &[5, EOS]).unwrap();
    assert!(lp.iter().all(|l| *l <= 0.0));
    let g = grad_weighted_logprob(&p, &[4], &[5, EOS], &[1.0, 1.0]).unwrap();
    assert!(g.iter().any(|x| *x != 0.0));
}

#[test]
fn parameter_budget_enforced() {
    assert!(NeuralPolicy::<f64>::from_params(NeuralShape::new(128, 64, 256), vec![]).is_err());
    let shape = NeuralShape::new(128, 32, 64);
    assert!(shape.param_count() < 100_000);
}
