use crate::scalar::{mean_std, Real};

/// Group-relative advantages `(r_i − mean(R)) / std(R)` with the population
/// standard deviation. A group whose reward spread is at most `std_floor`
/// gets all-zero advantages.
///
/// # Panics
/// If fewer than two rewards are given.
pub fn compute_advantages<F: Real>(rewards: &[F], std_floor: F) -> Vec<F> {
    assert!(rewards.len() >= 2, "advantages need a group of at least two");
    let (mean, std) = mean_std(rewards);
    if std <= std_floor {
        return vec![F::zero(); rewards.len()];
    }
    rewards.iter().map(|&r| (r - mean) / std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_rewards_give_zero() {
        assert_eq!(compute_advantages(&[0.3_f64; 5], 1e-8), vec![0.0; 5]);
    }

    #[test]
    fn two_point_group() {
        assert_eq!(compute_advantages(&[0.0_f64, 1.0], 1e-8), vec![-1.0, 1.0]);
    }

    #[test]
    fn three_point_group() {
        let a = compute_advantages(&[1.0_f64, 2.0, 3.0], 1e-8);
        let k = 1.0 / (2.0_f64 / 3.0).sqrt();
        assert!((a[0] + k).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] - k).abs() < 1e-12);
        assert!((k - 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn singleton_group_panics() {
        compute_advantages(&[1.0_f64], 1e-8);
    }

    proptest! {
        #[test]
        fn normalized(rewards in prop::collection::vec(0.0f64..1.0, 2..16)) {
            let a = compute_advantages(&rewards, 1e-8);
            let (_, std) = mean_std(&rewards);
            if std > 1e-8 {
                let (m, s) = mean_std(&a);
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn shift_invariant(rewards in prop::collection::vec(0.0f64..1.0, 2..16), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
            prop_assume!(mean_std(&rewards).1 > 0.05);
            let a = compute_advantages(&rewards, 1e-8);
            let b = compute_advantages(&shifted, 1e-8);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn positive_scaling_preserves_order(rewards in prop::collection::vec(0.0f64..1.0, 2..16), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = rewards.iter().map(|r| r * k).collect();
            let a = compute_advantages(&rewards, 0.0);
            let b = compute_advantages(&scaled, 0.0);
            for i in 0..a.len() {
                for j in 0..a.len() {
                    if rewards[i] < rewards[j] {
                        prop_assert!(a[i] < a[j] && b[i] < b[j]);
                    }
                }
            }
        }
    }
}
