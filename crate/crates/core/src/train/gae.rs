use alloc::vec::Vec;

/// Generalized advantage estimates and value targets for one trajectory.
///
/// `values` has one more entry than `rewards`: the bootstrap value of the state after the
/// last step.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(values.len(), rewards.len() + 1, "values need a bootstrap entry");
    let n = rewards.len();
    let mut adv = alloc::vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shift to zero mean and unit (population) standard deviation.
pub fn normalize(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct double sum over TD residuals.
    pub(crate) fn brute_force(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        (0..n)
            .map(|t| {
                (0..n - t)
                    .map(|k| {
                        let delta = rewards[t + k] + gamma * values[t + k + 1] - values[t + k];
                        libm::pow(gamma * lambda, k as f64) * delta
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn single_step_zero_values() {
        let (a, r) = gae(&[2.5], &[0.0, 0.0], 0.99, 0.95);
        assert_eq!(a, alloc::vec![2.5]);
        assert_eq!(r, alloc::vec![2.5]);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let rewards = [1.0, -0.5, 0.25];
        let values = [0.3, 0.1, -0.2, 0.4];
        let (a, _) = gae(&rewards, &values, 0.99, 0.0);
        for t in 0..3 {
            assert_eq!(a[t], rewards[t] + 0.99 * values[t + 1] - values[t]);
        }
    }

    #[test]
    fn three_step_matches_double_sum() {
        let rewards = [0.7, -1.3, 0.2];
        let values = [0.5, -0.1, 0.9, 0.3];
        let (a, _) = gae(&rewards, &values, 0.99, 0.95);
        for (x, y) in a.iter().zip(brute_force(&rewards, &values, 0.99, 0.95)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_moments() {
        let mut a: Vec<f64> = (0..37).map(|i| libm::sin(i as f64) * 3.0 + 1.0).collect();
        normalize(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = libm::sqrt(a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n);
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn gae_equals_double_sum(
            rewards in proptest::collection::vec(-5.0f64..5.0, 1..=5),
            seed_values in proptest::collection::vec(-5.0f64..5.0, 6),
            gamma in 0.0f64..1.0,
            lambda in 0.0f64..1.0,
        ) {
            let values = &seed_values[..rewards.len() + 1];
            let (a, r) = gae(&rewards, values, gamma, lambda);
            let oracle = brute_force(&rewards, values, gamma, lambda);
            for t in 0..rewards.len() {
                prop_assert!((a[t] - oracle[t]).abs() < 1e-10);
                prop_assert!((r[t] - (oracle[t] + values[t])).abs() < 1e-10);
            }
        }
    }
}
