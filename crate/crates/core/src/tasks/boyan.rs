//! Randomly generated Boyan chains: state i hops to i+1 with probability
//! epsilon and to i+2 otherwise (fresh epsilon per state), the second-to-last
//! state feeds the last deterministically, and the last state fans out to all
//! states with positive probability; ergodic by construction. Features,
//! rewards, the stationary distribution and the true value function are all
//! solved exactly at generation time.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TaskError;
use crate::grad::Matrix;
use crate::replay::Transition;

#[derive(Clone, Debug)]
pub struct BoyanTask {
    pub states: usize,
    pub feature_dim: usize,
    /// Row-stochastic transition matrix.
    pub transition: Matrix<f64>,
    pub rewards: Vec<f64>,
    /// `states x feature_dim`; row s is phi(s).
    pub features: Matrix<f64>,
    pub gamma: f64,
    /// Stationary distribution, also used as the initial distribution.
    pub stationary: Vec<f64>,
    /// True value function from the Bellman solve.
    pub values: Vec<f64>,
}

/// Solve `mu^T P = mu^T`, `sum(mu) = 1` by replacing one equation of the
/// singular system `(P^T - I) mu = 0` with the normalization row.
pub fn solve_stationary(p: &Matrix<f64>) -> Result<Vec<f64>, TaskError> {
    let m = p.rows();
    assert_eq!(p.cols(), m, "transition matrix must be square");
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            // (P^T - I)[i][j] = P[j][i] - delta_ij
            a[(i, j)] = p.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DMatrix::<f64>::zeros(m, 1);
    b[(m - 1, 0)] = 1.0;
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| TaskError::Numerical("singular stationary system".into()))?;
    Ok(mu.column(0).iter().copied().collect())
}

/// Bellman solve `v = (I - gamma P)^{-1} r`.
pub fn solve_values(p: &Matrix<f64>, r: &[f64], gamma: f64) -> Result<Vec<f64>, TaskError> {
    let m = p.rows();
    assert_eq!(p.cols(), m, "transition matrix must be square");
    assert_eq!(r.len(), m, "reward vector length mismatch");
    if !(0.0..1.0).contains(&gamma) {
        return Err(TaskError::Config(format!(
            "discount must satisfy 0 <= gamma < 1, got {gamma}"
        )));
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = (if i == j { 1.0 } else { 0.0 }) - gamma * p.get(i, j);
        }
    }
    let b = DMatrix::<f64>::from_column_slice(m, 1, r);
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| TaskError::Numerical("ill-conditioned Bellman solve".into()))?;
    Ok(v.column(0).iter().copied().collect())
}

/// Generate one chain: features and rewards uniform on (-1, 1), chain-shaped
/// transitions, stationary distribution as the initial distribution.
pub fn boyan_generate(
    rng: &mut impl Rng,
    states: usize,
    feature_dim: usize,
    gamma: f64,
) -> Result<BoyanTask, TaskError> {
    if states < 3 {
        return Err(TaskError::Config(format!(
            "chain needs at least 3 states, got {states}"
        )));
    }
    if feature_dim < 1 {
        return Err(TaskError::Config("feature dimension must be positive".into()));
    }
    let mut features = Matrix::zeros(states, feature_dim);
    for s in 0..states {
        for d in 0..feature_dim {
            features.set(s, d, rng.gen_range(-1.0..1.0));
        }
    }
    let rewards: Vec<f64> = (0..states).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut transition = Matrix::zeros(states, states);
    for i in 0..states - 2 {
        let eps: f64 = rng.gen_range(0.0..1.0);
        transition.set(i, i + 1, eps);
        transition.set(i, i + 2, 1.0 - eps);
    }
    transition.set(states - 2, states - 1, 1.0);
    let mut z: Vec<f64> = (0..states).map(|_| rng.gen_range(0.0..1.0)).collect();
    let zsum: f64 = z.iter().sum();
    for v in &mut z {
        *v /= zsum;
    }
    for (j, &v) in z.iter().enumerate() {
        transition.set(states - 1, j, v);
    }

    let stationary = solve_stationary(&transition)?;
    let values = solve_values(&transition, &rewards, gamma)?;
    Ok(BoyanTask {
        states,
        feature_dim,
        transition,
        rewards,
        features,
        gamma,
        stationary,
        values,
    })
}

impl BoyanTask {
    /// Sample the initial state from the initial distribution (= stationary).
    pub fn sample_start(&self, rng: &mut impl Rng) -> usize {
        sample_categorical(&self.stationary, rng)
    }

    /// One step from `s`: next state per row s, reward a function of the
    /// source state.
    pub fn step(&self, s: usize, rng: &mut impl Rng) -> (usize, f64) {
        assert!(s < self.states);
        let row: Vec<f64> = (0..self.states).map(|j| self.transition.get(s, j)).collect();
        let next = sample_categorical(&row, rng);
        (next, self.rewards[s])
    }

    pub fn feature_f32(&self, s: usize) -> Vec<f32> {
        (0..self.feature_dim)
            .map(|d| self.features.get(s, d) as f32)
            .collect()
    }

    pub fn transition_item(&self, s: usize, s_next: usize) -> Transition<f32> {
        Transition {
            phi: self.feature_f32(s),
            reward: self.rewards[s] as f32,
            phi_next: self.feature_f32(s_next),
        }
    }

    /// mu-weighted mean square value error of an estimate.
    pub fn msve(&self, v_hat: &[f64]) -> f64 {
        assert_eq!(v_hat.len(), self.states);
        self.stationary
            .iter()
            .zip(v_hat.iter().zip(&self.values))
            .map(|(&mu, (&vh, &v))| mu * (vh - v) * (vh - v))
            .sum()
    }

    pub fn export(&self) -> BoyanTaskExport {
        BoyanTaskExport {
            states: self.states,
            feature_dim: self.feature_dim,
            gamma: self.gamma,
            transition: (0..self.states)
                .map(|i| self.transition.row(i).to_vec())
                .collect(),
            rewards: self.rewards.clone(),
            features: (0..self.states)
                .map(|i| self.features.row(i).to_vec())
                .collect(),
            stationary: self.stationary.clone(),
            values: self.values.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.export()).expect("serializable")
    }
}

/// Snapshot of a generated task for external verification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoyanTaskExport {
    pub states: usize,
    pub feature_dim: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
    pub values: Vec<f64>,
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Power-iteration oracle for the stationary distribution.
    fn power_iteration_mu(p: &Matrix<f64>, iters: usize) -> Vec<f64> {
        let m = p.rows();
        let mut mu = vec![1.0 / m as f64; m];
        for _ in 0..iters {
            let mut next = vec![0.0; m];
            for i in 0..m {
                for j in 0..m {
                    next[j] += mu[i] * p.get(i, j);
                }
            }
            mu = next;
        }
        mu
    }

    /// Fixed-point iteration oracle for the value function.
    fn value_iteration(p: &Matrix<f64>, r: &[f64], gamma: f64, iters: usize) -> Vec<f64> {
        let m = p.rows();
        let mut v = vec![0.0; m];
        for _ in 0..iters {
            let mut next = vec![0.0; m];
            for s in 0..m {
                let mut exp = 0.0;
                for j in 0..m {
                    exp += p.get(s, j) * v[j];
                }
                next[s] = r[s] + gamma * exp;
            }
            v = next;
        }
        v
    }

    #[test]
    fn two_state_swap_chain_is_half_half() {
        let p = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let mu = solve_stationary(&p).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-14);
        assert!((mu[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_satisfies_defining_property() {
        let mut r = rng(1);
        for _ in 0..20 {
            let task = boyan_generate(&mut r, 10, 4, 0.9).unwrap();
            let m = task.states;
            let mu = &task.stationary;
            let mut residual = 0.0;
            for j in 0..m {
                let mut mtp = 0.0;
                for i in 0..m {
                    mtp += mu[i] * task.transition.get(i, j);
                }
                residual += (mtp - mu[j]).abs();
            }
            assert!(residual < 1e-10, "|mu^T P - mu^T|_1 = {residual}");
            let total: f64 = mu.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(mu.iter().all(|&v| v > 0.0), "ergodic chain: mu > 0");
        }
    }

    #[test]
    fn stationary_matches_power_iteration() {
        let mut r = rng(2);
        let task = boyan_generate(&mut r, 4, 2, 0.9).unwrap();
        let mu_pi = power_iteration_mu(&task.transition, 10_000);
        for (a, b) in task.stationary.iter().zip(&mu_pi) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn bellman_gamma_zero_gives_rewards() {
        let mut r = rng(3);
        let task = boyan_generate(&mut r, 6, 3, 0.9).unwrap();
        let v = solve_values(&task.transition, &task.rewards, 0.0).unwrap();
        for (a, b) in v.iter().zip(&task.rewards) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn two_state_hand_solved_values() {
        let p = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let v = solve_values(&p, &[1.0, 0.0], 0.5).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-14);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn bellman_residual_and_value_iteration_agree() {
        let mut r = rng(4);
        let task = boyan_generate(&mut r, 10, 4, 0.9).unwrap();
        // residual |v - (r + gamma P v)|_inf
        let m = task.states;
        let mut worst = 0.0f64;
        for s in 0..m {
            let mut exp = 0.0;
            for j in 0..m {
                exp += task.transition.get(s, j) * task.values[j];
            }
            worst = worst.max((task.values[s] - (task.rewards[s] + task.gamma * exp)).abs());
        }
        assert!(worst < 1e-8, "Bellman residual {worst}");

        let vi = value_iteration(&task.transition, &task.rewards, task.gamma, 400);
        for (a, b) in task.values.iter().zip(&vi) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn generated_chain_has_the_right_sparsity() {
        let mut r = rng(5);
        let task = boyan_generate(&mut r, 10, 4, 0.9).unwrap();
        let m = task.states;
        for i in 0..m {
            let row_sum: f64 = (0..m).map(|j| task.transition.get(i, j)).sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
        for i in 0..m - 2 {
            for j in 0..m {
                let v = task.transition.get(i, j);
                if j == i + 1 || j == i + 2 {
                    assert!(v > 0.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert_eq!(task.transition.get(m - 2, m - 1), 1.0);
        for j in 0..m {
            assert!(task.transition.get(m - 1, j) > 0.0, "last row fully positive");
        }
    }

    #[test]
    fn step_semantics() {
        let mut r = rng(6);
        let task = boyan_generate(&mut r, 10, 4, 0.9).unwrap();
        // second-to-last state moves deterministically to the last
        for _ in 0..10 {
            let (next, reward) = task.step(task.states - 2, &mut r);
            assert_eq!(next, task.states - 1);
            assert_eq!(reward, task.rewards[task.states - 2]);
        }
        // reward depends only on the source state
        let (_, reward) = task.step(3, &mut r);
        assert_eq!(reward, task.rewards[3]);
    }

    #[test]
    fn empirical_frequencies_match_transition_row() {
        let mut r = rng(7);
        let task = boyan_generate(&mut r, 10, 4, 0.9).unwrap();
        let eps = task.transition.get(0, 1);
        let n = 100_000usize;
        let mut to_next = 0usize;
        for _ in 0..n {
            let (next, _) = task.step(0, &mut r);
            if next == 1 {
                to_next += 1;
            } else {
                assert_eq!(next, 2);
            }
        }
        let freq = to_next as f64 / n as f64;
        let sigma = (eps * (1.0 - eps) / n as f64).sqrt();
        assert!(
            (freq - eps).abs() < 3.0 * sigma.max(1e-4),
            "freq {freq} vs eps {eps}"
        );
    }

    #[test]
    fn msve_examples() {
        let mut r = rng(8);
        let task = boyan_generate(&mut r, 3, 2, 0.9).unwrap();
        assert_eq!(task.msve(&task.values), 0.0);
        let shifted: Vec<f64> = task.values.iter().map(|v| v + 1.0).collect();
        assert!((task.msve(&shifted) - 1.0).abs() < 1e-12);

        // explicit weighted sum on a random estimate
        let v_hat = vec![0.3, -0.8, 1.1];
        let mut want = 0.0;
        for s in 0..3 {
            let d = v_hat[s] - task.values[s];
            want += task.stationary[s] * d * d;
        }
        assert!((task.msve(&v_hat) - want).abs() < 1e-15);
    }

    #[test]
    fn export_roundtrips_through_json() {
        let mut r = rng(9);
        let task = boyan_generate(&mut r, 5, 3, 0.9).unwrap();
        let json = task.to_json();
        let back: BoyanTaskExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.states, 5);
        assert_eq!(back.transition.len(), 5);
        assert_eq!(back.values, task.values);
        assert_eq!(back.stationary, task.stationary);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = boyan_generate(&mut rng(10), 10, 4, 0.9).unwrap();
        let b = boyan_generate(&mut rng(10), 10, 4, 0.9).unwrap();
        assert_eq!(a.transition, b.transition);
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.features, b.features);
        assert_eq!(a.stationary, b.stationary);
    }
}
