//! Softmax policy class with a uniform exploration floor.
//!
//! `π_θ(a|s) = (1 − ε)·softmax_a(θᵀψ(s,·)) + ε/|A|`. Policy features `ψ` are
//! stored as an `(S·A) × d_θ` matrix in SA order; the tabular class uses the
//! identity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::PolicyProbs;

/// Central-difference step for the policy Hessian probe.
pub const HESSIAN_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    psi: Arc<DMatrix<f64>>,
    n_states: usize,
    n_actions: usize,
    epsilon_floor: f64,
    theta: DVector<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, psi: DMatrix<f64>, epsilon_floor: f64, theta: DVector<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidPolicy("empty state or action space".into()));
        }
        if psi.nrows() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                context: "policy features rows",
                expected: n_states * n_actions,
                actual: psi.nrows(),
            });
        }
        if theta.len() != psi.ncols() {
            return Err(Error::DimensionMismatch { context: "theta", expected: psi.ncols(), actual: theta.len() });
        }
        if !(0.0..1.0).contains(&epsilon_floor) {
            return Err(Error::InvalidPolicy(format!("epsilon_floor = {epsilon_floor} is outside [0, 1)")));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolicy("policy features contain non-finite entries".into()));
        }
        Ok(Self { psi: Arc::new(psi), n_states, n_actions, epsilon_floor, theta })
    }

    /// Tabular softmax at `θ = 0` (uniform policy).
    pub fn tabular(n_states: usize, n_actions: usize, epsilon_floor: f64) -> Result<Self> {
        let n = n_states * n_actions;
        Self::new(n_states, n_actions, DMatrix::identity(n, n), epsilon_floor, DVector::zeros(n))
    }

    /// Same class, new parameter.
    pub fn with_theta(&self, theta: DVector<f64>) -> Self {
        assert_eq!(theta.len(), self.dim(), "theta dimension");
        Self { theta, ..self.clone() }
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// Lower bound `ε/|A|` on every action probability.
    pub fn p_min(&self) -> f64 {
        self.epsilon_floor / self.n_actions as f64
    }

    fn psi_row(&self, s: usize, a: usize) -> DVector<f64> {
        let r = s * self.n_actions + a;
        self.psi.row(r).transpose()
    }

    fn softmax(&self, s: usize, theta: &DVector<f64>) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.n_actions)
            .map(|a| {
                let r = s * self.n_actions + a;
                self.psi.row(r).iter().zip(theta.iter()).map(|(x, y)| x * y).sum()
            })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter_mut().for_each(|v| *v /= z);
        e
    }

    fn blend(&self, sm: &[f64]) -> Vec<f64> {
        let u = self.epsilon_floor / self.n_actions as f64;
        sm.iter().map(|p| (1.0 - self.epsilon_floor) * p + u).collect()
    }

    pub fn action_probs(&self, s: usize) -> Vec<f64> {
        self.blend(&self.softmax(s, &self.theta))
    }

    /// The full `S × A` table.
    pub fn probs(&self) -> PolicyProbs {
        let mut t = DMatrix::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for (a, p) in self.action_probs(s).into_iter().enumerate() {
                t[(s, a)] = p;
            }
        }
        PolicyProbs::from_table_unchecked(t)
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        self.action_probs(s)[a].ln()
    }

    /// `∇_θ π_θ(a|s) = (1 − ε) σ_a (ψ(s,a) − Σ_b σ_b ψ(s,b))`.
    pub fn prob_gradient(&self, s: usize, a: usize) -> DVector<f64> {
        self.prob_gradient_at(&self.theta, s, a)
    }

    fn prob_gradient_at(&self, theta: &DVector<f64>, s: usize, a: usize) -> DVector<f64> {
        let sm = self.softmax(s, theta);
        let mut mean = DVector::zeros(self.dim());
        for (b, w) in sm.iter().enumerate() {
            mean.axpy(*w, &self.psi_row(s, b), 1.0);
        }
        (self.psi_row(s, a) - mean) * ((1.0 - self.epsilon_floor) * sm[a])
    }

    /// Score function `∇_θ log π_θ(a|s)`.
    pub fn score(&self, s: usize, a: usize) -> Result<DVector<f64>> {
        let p = self.action_probs(s)[a];
        if p <= 0.0 {
            return Err(Error::ZeroProbabilityAction { state: s, action: a });
        }
        Ok(self.prob_gradient(s, a) / p)
    }

    /// Scores for every SA pair, as rows of an `(S·A) × d_θ` matrix.
    pub fn score_matrix(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.n_states * self.n_actions, self.dim());
        for s in 0..self.n_states {
            let sm = self.softmax(s, &self.theta);
            let probs = self.blend(&sm);
            let mut mean = DVector::zeros(self.dim());
            for (b, w) in sm.iter().enumerate() {
                mean.axpy(*w, &self.psi_row(s, b), 1.0);
            }
            for a in 0..self.n_actions {
                if probs[a] <= 0.0 {
                    return Err(Error::ZeroProbabilityAction { state: s, action: a });
                }
                let g = (self.psi_row(s, a) - &mean) * ((1.0 - self.epsilon_floor) * sm[a] / probs[a]);
                out.row_mut(s * self.n_actions + a).copy_from(&g.transpose());
            }
        }
        Ok(out)
    }

    /// `max_{s,a} ||ψ(s,a)||`.
    pub fn max_feature_norm(&self) -> f64 {
        self.psi.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// Spectral norm of the central-difference Hessian of `π(a|s)`.
    fn hessian_norm(&self, theta: &DVector<f64>, s: usize, a: usize) -> f64 {
        let d = self.dim();
        let h = HESSIAN_FD_STEP;
        let mut hess = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut plus = theta.clone();
            plus[j] += h;
            let mut minus = theta.clone();
            minus[j] -= h;
            let col = (self.prob_gradient_at(&plus, s, a) - self.prob_gradient_at(&minus, s, a)) / (2.0 * h);
            hess.set_column(j, &col);
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.amax()
    }

    /// Empirical smoothness constants over a set of parameters.
    pub fn smoothness_report(&self, theta_samples: &[DVector<f64>]) -> Result<SmoothnessReport> {
        if theta_samples.is_empty() {
            return Err(Error::InvalidPolicy("smoothness_report needs at least one theta sample".into()));
        }
        let analytic_k = 2.0 * self.max_feature_norm();
        if self.dim() == 0 {
            return Ok(SmoothnessReport { k: 0.0, k_prime: 0.0, k_double_prime: 0.0, analytic_k, within_analytic_bound: true });
        }
        let (mut k, mut k1, mut k2) = (0.0f64, 0.0f64, 0.0f64);
        for theta in theta_samples {
            let pol = self.with_theta(theta.clone());
            for s in 0..self.n_states {
                let probs = pol.action_probs(s);
                for a in 0..self.n_actions {
                    let grad = pol.prob_gradient(s, a);
                    k1 = k1.max(grad.norm());
                    if probs[a] > 0.0 {
                        k = k.max(grad.norm() / probs[a]);
                    }
                    k2 = k2.max(self.hessian_norm(theta, s, a));
                }
            }
        }
        Ok(SmoothnessReport { k, k_prime: k1, k_double_prime: k2, analytic_k, within_analytic_bound: k <= analytic_k + 1e-12 })
    }
}

/// Empirical maxima of `||∇log π||`, `||∇π||` (Euclidean) and `||∇²π||`
/// (spectral) over a parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "K_prime")]
    pub k_prime: f64,
    #[serde(rename = "K_double_prime")]
    pub k_double_prime: f64,
    /// `2·max ||ψ(s,a)||`, an upper bound on `||∇log π||` for every `θ`.
    pub analytic_k: f64,
    pub within_analytic_bound: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
    }

    #[test]
    fn zero_theta_is_uniform() {
        let pol = SoftmaxPolicy::tabular(2, 3, 0.0).unwrap();
        for p in pol.action_probs(1) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_softmax() {
        let psi = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let pol = SoftmaxPolicy::new(1, 2, psi, 0.0, DVector::from_vec(vec![3f64.ln()])).unwrap();
        let p = pol.action_probs(0);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn full_mixing_is_uniform_and_floor_rejects_one() {
        assert!(SoftmaxPolicy::tabular(1, 2, 1.0).is_err());
        let pol = SoftmaxPolicy::tabular(1, 4, 0.999_999).unwrap().with_theta(DVector::from_vec(vec![9.0, -3.0, 0.0, 1.0]));
        for p in pol.action_probs(0) {
            assert!((p - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn tabular_score_at_zero() {
        let pol = SoftmaxPolicy::tabular(2, 2, 0.0).unwrap();
        let g = pol.score(1, 0).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn zero_probability_action_is_an_error() {
        let psi = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let pol = SoftmaxPolicy::new(1, 2, psi, 0.0, DVector::from_vec(vec![1e4])).unwrap();
        assert!(matches!(pol.score(0, 1), Err(Error::ZeroProbabilityAction { state: 0, action: 1 })));
    }

    #[test]
    fn score_identity_and_matrix_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = SoftmaxPolicy::tabular(3, 3, 0.05).unwrap();
        for _ in 0..50 {
            let pol = base.with_theta(random_theta(&mut rng, 9, 3.0));
            let sm = pol.score_matrix().unwrap();
            for s in 0..3 {
                let probs = pol.action_probs(s);
                let mut acc = DVector::zeros(9);
                for a in 0..3 {
                    let g = pol.score(s, a).unwrap();
                    assert!((&g - sm.row(s * 3 + a).transpose()).amax() < 1e-14);
                    acc += g * probs[a];
                }
                assert!(acc.amax() < 1e-10);
            }
        }
    }

    #[test]
    fn score_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let base = SoftmaxPolicy::new(4, 2, psi, 0.05, DVector::zeros(3)).unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let theta = random_theta(&mut rng, 3, 2.0);
            let pol = base.with_theta(theta.clone());
            let (s, a) = (rng.random_range(0..4), rng.random_range(0..2));
            let g = pol.score(s, a).unwrap();
            for i in 0..3 {
                let mut tp = theta.clone();
                tp[i] += h;
                let mut tm = theta.clone();
                tm[i] -= h;
                let fd = (base.with_theta(tp).log_prob(s, a) - base.with_theta(tm).log_prob(s, a)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / g.norm().max(1e-3);
                assert!(rel < 1e-6, "coordinate {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn floor_holds_for_extreme_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = SoftmaxPolicy::tabular(2, 3, 0.05).unwrap();
        for _ in 0..100 {
            let pol = base.with_theta(random_theta(&mut rng, 6, 50.0));
            for s in 0..2 {
                for p in pol.action_probs(s) {
                    assert!(p >= pol.p_min());
                }
            }
        }
    }

    #[test]
    fn smoothness_tabular_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pol = SoftmaxPolicy::tabular(3, 2, 0.0).unwrap();
        let grid: Vec<_> = (0..100).map(|_| random_theta(&mut rng, 6, 3.0)).collect();
        let rep = pol.smoothness_report(&grid).unwrap();
        assert_eq!(rep.analytic_k, 2.0);
        assert!(rep.within_analytic_bound);
        assert!(rep.k > 0.0 && rep.k_prime > 0.0 && rep.k_double_prime > 0.0);
        // ||∇π|| <= ||∇log π|| since π <= 1
        assert!(rep.k_prime <= rep.k);
    }

    #[test]
    fn smoothness_of_constant_class() {
        let pol = SoftmaxPolicy::new(2, 2, DMatrix::zeros(4, 0), 0.1, DVector::zeros(0)).unwrap();
        let rep = pol.smoothness_report(&[DVector::zeros(0)]).unwrap();
        assert_eq!((rep.k, rep.k_prime, rep.k_double_prime), (0.0, 0.0, 0.0));
        assert!(pol.smoothness_report(&[]).is_err());
    }
}
