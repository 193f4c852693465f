//! Finite discounted-cost MDPs and the exact dynamic-programming quantities
//! induced by a fixed stochastic policy.
//!
//! State-action pairs are flattened row-major: pair `(s, a)` has index
//! `s * n_actions + a`. Every SA-indexed vector and matrix in the crate uses
//! this layout.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const ROW_SUM_TOL: f64 = 1e-12;
const SA_DIST_TOL: f64 = 1e-10;
const EIGEN_ONE_TOL: f64 = 1e-8;
const FIXED_POINT_TOL: f64 = 1e-10;

/// Largest supported number of state-action pairs (dense algebra throughout).
pub const MAX_SA_PAIRS: usize = 2000;

/// Accuracy target for the mixing-time search.
pub const MIXING_TV_TARGET: f64 = 0.01;
pub const MIXING_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// Row `(s, a)` holds `P(· | s, a)`; shape `(S·A) × S`.
    transition: DMatrix<f64>,
    /// Same tensor, row-major, for sampling.
    rows: Vec<f64>,
    cost: DVector<f64>,
    c_max: f64,
    gamma: f64,
    eta: DVector<f64>,
}

impl FiniteMdp {
    /// `transition` is the flattened tensor `P(s'|s,a)`, row-major by `(s, a)`
    /// then `s'`; `cost` is `c(s, a)` in SA order.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        cost: Vec<f64>,
        gamma: f64,
        eta: Vec<f64>,
        c_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("n_states and n_actions must be positive".into()));
        }
        let n_sa = n_states * n_actions;
        if n_sa > MAX_SA_PAIRS {
            return Err(Error::InvalidMdp(format!("{n_sa} state-action pairs exceeds the supported maximum {MAX_SA_PAIRS}")));
        }
        check_len("transition", n_sa * n_states, transition.len())?;
        check_len("cost", n_sa, cost.len())?;
        check_len("eta", n_states, eta.len())?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma = {gamma} is outside (0, 1)")));
        }
        if !(c_max > 0.0 && c_max.is_finite()) {
            return Err(Error::InvalidMdp(format!("c_max = {c_max} must be positive and finite")));
        }
        let rows = transition;
        let transition = DMatrix::from_row_slice(n_sa, n_states, &rows);
        for (i, row) in transition.row_iter().enumerate() {
            check_distribution(row.iter().copied(), ROW_SUM_TOL).map_err(|detail| {
                Error::InvalidMdp(format!("transition row (s={}, a={}): {detail}", i / n_actions, i % n_actions))
            })?;
        }
        for (i, &c) in cost.iter().enumerate() {
            if !c.is_finite() || c.abs() > c_max {
                return Err(Error::InvalidMdp(format!(
                    "cost c(s={}, a={}) = {c} violates |c| <= c_max = {c_max}",
                    i / n_actions,
                    i % n_actions
                )));
            }
        }
        check_distribution(eta.iter().copied(), ROW_SUM_TOL)
            .map_err(|detail| Error::InvalidMdp(format!("initial distribution eta: {detail}")))?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            rows,
            cost: DVector::from_vec(cost),
            c_max,
            gamma,
            eta: DVector::from_vec(eta),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_sa(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn cost(&self) -> &DVector<f64> {
        &self.cost
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    #[inline]
    pub fn sa_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// `P(· | s, a)`.
    #[inline]
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = self.sa_index(s, a) * self.n_states;
        &self.rows[start..start + self.n_states]
    }

    /// Same instance with every cost replaced.
    pub fn with_costs(&self, cost: Vec<f64>) -> Result<Self> {
        FiniteMdp::new(
            self.n_states,
            self.n_actions,
            self.rows.clone(),
            cost,
            self.gamma,
            self.eta.iter().copied().collect(),
            self.c_max,
        )
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            c_max: self.c_max,
            eta: self.eta.iter().copied().collect(),
            cost: self.cost.iter().copied().collect(),
            transition: self.rows.clone(),
        }
    }
}

/// On-disk schema for an MDP instance.
///
/// `transition` is the flattened tensor with entry `P(s'|s,a)` at offset
/// `((s * n_actions) + a) * n_states + s'`; `cost` has entry `c(s,a)` at
/// `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub c_max: f64,
    pub eta: Vec<f64>,
    pub cost: Vec<f64>,
    pub transition: Vec<f64>,
}

impl TryFrom<MdpFile> for FiniteMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        FiniteMdp::new(f.n_states, f.n_actions, f.transition, f.cost, f.gamma, f.eta, f.c_max)
    }
}

/// Random MDP family: Dirichlet-sampled transition rows, costs uniform in
/// `[-1, 1]`, uniform initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Symmetric Dirichlet concentration for each transition row.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
}

fn default_concentration() -> f64 {
    1.0
}

impl RandomMdpSpec {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Self {
        Self { n_states, n_actions, gamma, seed, concentration: default_concentration() }
    }

    pub fn generate(&self) -> Result<FiniteMdp> {
        if !(self.concentration > 0.0) {
            return Err(Error::InvalidMdp("Dirichlet concentration must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_sa = self.n_states * self.n_actions;
        let gamma_dist = Gamma::new(self.concentration, 1.0).map_err(|e| Error::InvalidMdp(format!("Dirichlet sampler: {e}")))?;
        let mut transition = Vec::with_capacity(n_sa * self.n_states);
        for _ in 0..n_sa {
            let mut row: Vec<f64> = (0..self.n_states).map(|_| gamma_dist.sample(&mut rng).max(1e-300)).collect();
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
            transition.extend(row);
        }
        let cost: Vec<f64> = (0..n_sa).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let eta = vec![1.0 / self.n_states as f64; self.n_states];
        FiniteMdp::new(self.n_states, self.n_actions, transition, cost, self.gamma, eta, 1.0)
    }
}

/// Per-state action distributions `π(a|s)`, shape `S × A`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProbs(DMatrix<f64>);

impl PolicyProbs {
    pub fn new(table: DMatrix<f64>) -> Result<Self> {
        for (s, row) in table.row_iter().enumerate() {
            check_distribution(row.iter().copied(), ROW_SUM_TOL)
                .map_err(|detail| Error::InvalidDistribution { what: "policy row", detail: format!("state {s}: {detail}") })?;
        }
        Ok(Self(table))
    }

    /// Caller guarantees each row is a distribution.
    pub(crate) fn from_table_unchecked(table: DMatrix<f64>) -> Self {
        Self(table)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self(DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64))
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.0
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.ncols()
    }

    fn check_against(&self, mdp: &FiniteMdp) -> Result<()> {
        check_len("policy states", mdp.n_states, self.0.nrows())?;
        check_len("policy actions", mdp.n_actions, self.0.ncols())
    }
}

/// Probability vector over state-action pairs (or, generally, chain states).
#[derive(Debug, Clone, PartialEq)]
pub struct SaDistribution {
    probs: DVector<f64>,
}

impl SaDistribution {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        check_distribution(probs.iter().copied(), SA_DIST_TOL)
            .map_err(|detail| Error::InvalidDistribution { what: "state-action distribution", detail })?;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * linalg::l1_distance(self.probs.as_slice(), other)
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context: what, expected, actual })
    }
}

fn check_distribution(values: impl Iterator<Item = f64>, tol: f64) -> std::result::Result<(), String> {
    let mut sum = 0.0;
    for v in values {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(format!("entry {v} is negative or not finite"));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > tol {
        return Err(format!("entries sum to {sum}, not 1"));
    }
    Ok(())
}

/// `P_θ[(s,a),(s',a')] = P(s'|s,a) π(a'|s')`.
pub fn sa_transition_matrix(mdp: &FiniteMdp, policy: &PolicyProbs) -> Result<DMatrix<f64>> {
    policy.check_against(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut p = DMatrix::zeros(ns * na, ns * na);
    for i in 0..ns * na {
        for s2 in 0..ns {
            let pt = mdp.transition[(i, s2)];
            if pt == 0.0 {
                continue;
            }
            for a2 in 0..na {
                p[(i, s2 * na + a2)] = pt * policy.prob(s2, a2);
            }
        }
    }
    Ok(p)
}

/// State-to-state kernel `Σ_a π(a|s) P(s'|s,a)`.
pub fn state_transition_matrix(mdp: &FiniteMdp, policy: &PolicyProbs) -> Result<DMatrix<f64>> {
    policy.check_against(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for s2 in 0..ns {
                p[(s, s2)] += w * mdp.transition[(s * na + a, s2)];
            }
        }
    }
    Ok(p)
}

/// Exact `Q*_θ` from `(I − γ P_θ) Q = c`.
pub fn q_values(mdp: &FiniteMdp, policy: &PolicyProbs) -> Result<DVector<f64>> {
    let p = sa_transition_matrix(mdp, policy)?;
    q_values_from_sa_matrix(mdp, &p)
}

pub(crate) fn q_values_from_sa_matrix(mdp: &FiniteMdp, p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = mdp.n_sa();
    let m = DMatrix::identity(n, n) - p * mdp.gamma;
    linalg::solve(m, &mdp.cost, "Bellman system (I - gamma P) Q = c")
}

/// `J*(s) = Σ_a π(a|s) Q*(s,a)`.
pub fn state_values(mdp: &FiniteMdp, policy: &PolicyProbs) -> Result<DVector<f64>> {
    let q = q_values(mdp, policy)?;
    Ok(state_values_from_q(mdp, policy, &q))
}

pub(crate) fn state_values_from_q(mdp: &FiniteMdp, policy: &PolicyProbs, q: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mdp.n_states, |s, _| (0..mdp.n_actions).map(|a| policy.prob(s, a) * q[mdp.sa_index(s, a)]).sum())
}

/// The objective `V = ηᵀ J*`.
pub fn value_objective(mdp: &FiniteMdp, policy: &PolicyProbs) -> Result<f64> {
    Ok(mdp.eta.dot(&state_values(mdp, policy)?))
}

/// Unique stationary distribution of a row-stochastic matrix.
///
/// Fails with [`Error::NonUniqueStationary`] when eigenvalue 1 has numerical
/// multiplicity above one.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<SaDistribution> {
    let n = p.nrows();
    if p.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch { context: "stationary_distribution (square)", expected: n, actual: p.ncols() });
    }
    let multiplicity =
        linalg::eigenvalues(p)?.into_iter().filter(|z| (*z - nalgebra::Complex::new(1.0, 0.0)).norm() <= EIGEN_ONE_TOL).count();
    if multiplicity > 1 {
        return Err(Error::NonUniqueStationary { multiplicity });
    }
    if let Some(rho) = stationary_by_solve(p) {
        if fixed_point_residual(p, &rho) <= FIXED_POINT_TOL {
            return SaDistribution::new(rho);
        }
    }
    let rho = stationary_by_power_iteration(p, 1e-15, 1_000_000);
    SaDistribution::new(rho)
}

/// Stationary distribution without the multiplicity check; the caller
/// guarantees (e.g. through strictly positive transition rows) uniqueness.
pub(crate) fn stationary_by_solve(p: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    let mut m = p.transpose() - DMatrix::identity(n, n);
    m.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mut rho = m.lu().solve(&rhs)?;
    if rho.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return None;
    }
    rho.iter_mut().for_each(|v| *v = v.max(0.0));
    let z = rho.sum();
    rho /= z;
    Some(rho)
}

/// Power iteration on the lazy chain `(P + I)/2`, which shares the stationary
/// distribution of `P` and is aperiodic.
pub fn stationary_by_power_iteration(p: &DMatrix<f64>, tol: f64, max_iter: usize) -> DVector<f64> {
    let n = p.nrows();
    let pt = p.transpose();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let next = (&pt * &x + &x) * 0.5;
        let change = linalg::l1_distance(next.as_slice(), x.as_slice());
        x = next;
        if change <= tol {
            break;
        }
    }
    let z = x.sum();
    x / z
}

pub(crate) fn fixed_point_residual(p: &DMatrix<f64>, rho: &DVector<f64>) -> f64 {
    let moved = p.transpose() * rho;
    linalg::l1_distance(moved.as_slice(), rho.as_slice())
}

/// Exact discounted visitation `ν_θ(s,a) = d(s) π(a|s)` with
/// `d = (1−γ)(I − γ P_stateᵀ)⁻¹ η`.
pub fn discounted_visitation(mdp: &FiniteMdp, policy: &PolicyProbs) -> Result<SaDistribution> {
    let d = discounted_state_visitation(mdp, policy)?;
    let nu = DVector::from_fn(mdp.n_sa(), |i, _| {
        let (s, a) = (i / mdp.n_actions, i % mdp.n_actions);
        d[s] * policy.prob(s, a)
    });
    SaDistribution::new(nu)
}

pub fn discounted_state_visitation(mdp: &FiniteMdp, policy: &PolicyProbs) -> Result<DVector<f64>> {
    let ps = state_transition_matrix(mdp, policy)?;
    let n = mdp.n_states;
    let m = DMatrix::identity(n, n) - ps.transpose() * mdp.gamma;
    let mut d = linalg::solve(m, &mdp.eta, "discounted visitation")? * (1.0 - mdp.gamma);
    d.iter_mut().for_each(|v| *v = v.max(0.0));
    let z = d.sum();
    Ok(d / z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingDiagnostics {
    /// Second-largest eigenvalue modulus.
    pub slem: f64,
    /// Smallest `t` with `max_i ||e_iᵀ P^t − ρ||₁ <= 0.01`.
    pub t_mix: usize,
}

/// Second-largest eigenvalue modulus of a stochastic matrix.
pub fn second_eigenvalue_modulus(p: &DMatrix<f64>) -> Result<f64> {
    let mut ev = linalg::eigenvalues(p)?;
    if ev.len() < 2 {
        return Ok(0.0);
    }
    // Drop the Perron eigenvalue (the one closest to 1).
    let (idx, _) = ev
        .iter()
        .enumerate()
        .map(|(i, z)| (i, (z - nalgebra::Complex::new(1.0, 0.0)).norm()))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    ev.swap_remove(idx);
    Ok(ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn mixing_diagnostics(p: &DMatrix<f64>) -> Result<MixingDiagnostics> {
    let rho = stationary_distribution(p)?;
    let slem = second_eigenvalue_modulus(p)?;
    if slem >= 1.0 - 1e-10 {
        return Err(Error::MixingCapExceeded { cap: MIXING_CAP, slem });
    }
    let n = p.nrows();
    let rho = rho.probs();
    let mut power = p.clone();
    for t in 1..=MIXING_CAP {
        let worst =
            (0..n).map(|i| power.row(i).iter().zip(rho.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()).fold(0.0, f64::max);
        if worst <= MIXING_TV_TARGET {
            return Ok(MixingDiagnostics { slem, t_mix: t });
        }
        power = &power * p;
    }
    Err(Error::MixingCapExceeded { cap: MIXING_CAP, slem })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(cost: f64, gamma: f64) -> FiniteMdp {
        FiniteMdp::new(1, 1, vec![1.0], vec![cost], gamma, vec![1.0], 1.0).unwrap()
    }

    fn swap_chain(gamma: f64) -> FiniteMdp {
        FiniteMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], gamma, vec![0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_instances() {
        assert!(FiniteMdp::new(1, 1, vec![0.9], vec![0.0], 0.5, vec![1.0], 1.0).is_err());
        assert!(FiniteMdp::new(1, 1, vec![1.0], vec![2.0], 0.5, vec![1.0], 1.0).is_err());
        assert!(FiniteMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0], 1.0).is_err());
        assert!(FiniteMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.5, vec![0.7, 0.7], 1.0).is_err());
        assert!(matches!(
            FiniteMdp::new(2, 1, vec![1.0], vec![0.0, 0.0], 0.5, vec![0.5, 0.5], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sa_matrix_trivial_cases() {
        let p = sa_transition_matrix(&single_state(1.0, 0.5), &PolicyProbs::uniform(1, 1)).unwrap();
        assert_eq!(p, DMatrix::from_element(1, 1, 1.0));
        let p = sa_transition_matrix(&swap_chain(0.5), &PolicyProbs::uniform(2, 1)).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn sa_matrix_matches_hand_expansion() {
        let mdp = RandomMdpSpec::new(2, 2, 0.9, 3).generate().unwrap();
        let p = sa_transition_matrix(&mdp, &PolicyProbs::uniform(2, 2)).unwrap();
        let t = mdp.transition();
        for s in 0..2 {
            for a in 0..2 {
                for s2 in 0..2 {
                    for a2 in 0..2 {
                        let expect = t[(s * 2 + a, s2)] * 0.5;
                        assert_eq!(p[(s * 2 + a, s2 * 2 + a2)], expect);
                    }
                }
            }
        }
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_dimension_mismatch() {
        let mdp = swap_chain(0.5);
        assert!(matches!(sa_transition_matrix(&mdp, &PolicyProbs::uniform(3, 1)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn q_values_examples() {
        let q = q_values(&single_state(1.0, 0.5), &PolicyProbs::uniform(1, 1)).unwrap();
        assert!((q[0] - 2.0).abs() < 1e-12);

        let q = q_values(&swap_chain(0.5), &PolicyProbs::uniform(2, 1)).unwrap();
        assert!((q[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((q[1] - 2.0 / 3.0).abs() < 1e-12);

        let zero = RandomMdpSpec::new(3, 2, 0.9, 1).generate().unwrap().with_costs(vec![0.0; 6]).unwrap();
        let q = q_values(&zero, &PolicyProbs::uniform(3, 2)).unwrap();
        assert!(q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bellman_residual_small() {
        for seed in 0..10 {
            let mdp = RandomMdpSpec::new(4, 3, 0.95, seed).generate().unwrap();
            let pol = PolicyProbs::uniform(4, 3);
            let p = sa_transition_matrix(&mdp, &pol).unwrap();
            let q = q_values(&mdp, &pol).unwrap();
            let resid = &q - mdp.cost() - (&p * &q) * mdp.gamma();
            assert!(resid.amax() <= 1e-9);
        }
    }

    #[test]
    fn value_examples() {
        assert!((value_objective(&single_state(1.0, 0.5), &PolicyProbs::uniform(1, 1)).unwrap() - 2.0).abs() < 1e-12);
        // eta uniform over the swap chain: (4/3 + 2/3) / 2 = 1
        let v = value_objective(&swap_chain(0.5), &PolicyProbs::uniform(2, 1)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let j = state_values(&swap_chain(0.5), &PolicyProbs::uniform(2, 1)).unwrap();
        assert!((j[0] - 4.0 / 3.0).abs() < 1e-12);
        let zero = single_state(0.0, 0.5);
        assert_eq!(value_objective(&zero, &PolicyProbs::uniform(1, 1)).unwrap(), 0.0);
    }

    #[test]
    fn value_stays_in_cost_range() {
        for seed in 0..20 {
            let mdp = RandomMdpSpec::new(3, 2, 0.8, seed).generate().unwrap();
            let v = value_objective(&mdp, &PolicyProbs::uniform(3, 2)).unwrap();
            assert!(v.abs() <= mdp.c_max() / (1.0 - mdp.gamma()) + 1e-12);
        }
    }

    #[test]
    fn stationary_doubly_stochastic_and_swap() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.5, 0.2, 0.3, 0.3, 0.5, 0.2]);
        let rho = stationary_distribution(&p).unwrap();
        assert!(rho.probs().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let rho = stationary_distribution(&swap).unwrap();
        assert!(rho.probs().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn stationary_detects_reducible_chain() {
        let p = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(stationary_distribution(&p), Err(Error::NonUniqueStationary { multiplicity: 3 })));
    }

    #[test]
    fn stationary_matches_power_iteration_oracle() {
        let mdp = RandomMdpSpec::new(4, 1, 0.5, 17).generate().unwrap();
        let p = sa_transition_matrix(&mdp, &PolicyProbs::uniform(4, 1)).unwrap();
        let rho = stationary_distribution(&p).unwrap();
        // independent oracle: plain (non-lazy) power iteration on Pᵀ
        let mut x = DVector::from_element(4, 0.25);
        for _ in 0..100_000 {
            let next = p.transpose() * &x;
            let done = linalg::l1_distance(next.as_slice(), x.as_slice()) < 1e-15;
            x = next;
            if done {
                break;
            }
        }
        assert!(linalg::l1_distance(rho.probs().as_slice(), x.as_slice()) < 1e-12);
        assert!(fixed_point_residual(&p, rho.probs()) <= 1e-10);
    }

    #[test]
    fn discounted_visitation_examples() {
        let mdp = FiniteMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], 0.9, vec![1.0], 1.0).unwrap();
        let pol = PolicyProbs::new(DMatrix::from_row_slice(1, 2, &[0.3, 0.7])).unwrap();
        let nu = discounted_visitation(&mdp, &pol).unwrap();
        assert!((nu.probs()[0] - 0.3).abs() < 1e-12 && (nu.probs()[1] - 0.7).abs() < 1e-12);

        // 1 -> 2, 2 absorbing, eta = e1, gamma = 0.5
        let chain = FiniteMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0], 0.5, vec![1.0, 0.0], 1.0).unwrap();
        let nu = discounted_visitation(&chain, &PolicyProbs::uniform(2, 1)).unwrap();
        assert!((nu.probs()[0] - 0.5).abs() < 1e-12 && (nu.probs()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn discounted_visitation_matches_truncated_series() {
        let mdp = RandomMdpSpec::new(3, 2, 0.8, 5).generate().unwrap();
        let pol = PolicyProbs::new(DMatrix::from_row_slice(3, 2, &[0.2, 0.8, 0.5, 0.5, 0.9, 0.1])).unwrap();
        let nu = discounted_visitation(&mdp, &pol).unwrap();
        let ps = state_transition_matrix(&mdp, &pol).unwrap();
        let mut p_t = mdp.eta().clone();
        let mut series = DVector::zeros(6);
        let mut w = 1.0 - mdp.gamma();
        for _ in 0..=200 {
            for s in 0..3 {
                for a in 0..2 {
                    series[s * 2 + a] += w * p_t[s] * pol.prob(s, a);
                }
            }
            p_t = ps.transpose() * p_t;
            w *= mdp.gamma();
        }
        let l1 = linalg::l1_distance(nu.probs().as_slice(), series.as_slice());
        assert!(l1 < 1e-8, "l1 = {l1}");
        assert!(l1 <= mdp.gamma().powi(201) / (1.0 - mdp.gamma()) + 1e-12);
    }

    #[test]
    fn mixing_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
        let m = mixing_diagnostics(&p).unwrap();
        assert!(m.slem < 1e-12);
        assert_eq!(m.t_mix, 1);

        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let m = mixing_diagnostics(&p).unwrap();
        assert!((m.slem - 0.8).abs() < 1e-12);
        // ||e_1ᵀP^t - ρ||₁ = 0.8^t; first t with 0.8^t <= 0.01 is 21
        assert_eq!(m.t_mix, 21);

        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(mixing_diagnostics(&swap), Err(Error::MixingCapExceeded { .. })));
        let ident = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(mixing_diagnostics(&ident), Err(Error::NonUniqueStationary { .. })));
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let a = RandomMdpSpec::new(3, 2, 0.9, 42).generate().unwrap();
        let b = RandomMdpSpec::new(3, 2, 0.9, 42).generate().unwrap();
        let c = RandomMdpSpec::new(3, 2, 0.9, 43).generate().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.cost().iter().all(|c| c.abs() <= 1.0));
    }

    #[test]
    fn file_schema_round_trip() {
        let a = RandomMdpSpec::new(3, 2, 0.9, 42).generate().unwrap();
        let b = FiniteMdp::try_from(a.to_file()).unwrap();
        assert_eq!(a, b);
    }
}
