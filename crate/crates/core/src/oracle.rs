//! Exact evaluation of every oracle quantity at a policy parameter, and
//! sweeps of those quantities over a parameter grid.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{self, FeatureMatrix, TdPair};
use crate::error::Result;
use crate::mdp::{self, FiniteMdp, MixingDiagnostics, PolicyProbs, SaDistribution};
use crate::policy::{SmoothnessReport, SoftmaxPolicy};

/// `ĝ(θ, Q) = 1/(1−γ) Σ ν_θ(s,a) Q(s,a) ∇log π_θ(a|s)`.
pub fn gradient_from_parts(nu: &SaDistribution, scores: &DMatrix<f64>, q: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let weights = nu.probs().component_mul(q) / (1.0 - gamma);
    scores.transpose() * weights
}

/// All exact quantities at one parameter value.
#[derive(Debug, Clone)]
pub struct ThetaEvaluation {
    pub probs: PolicyProbs,
    pub sa_matrix: DMatrix<f64>,
    pub rho: SaDistribution,
    pub nu: SaDistribution,
    pub q: DVector<f64>,
    pub value: f64,
    pub scores: DMatrix<f64>,
    /// `∇V(θ)`.
    pub gradient: DVector<f64>,
    pub td: TdPair,
    pub omega_theta: DVector<f64>,
    pub margin: f64,
    pub delta: f64,
}

impl ThetaEvaluation {
    /// `g(θ, ω) = ĝ(θ, Φω)`.
    pub fn critic_gradient(&self, features: &FeatureMatrix, omega: &DVector<f64>, gamma: f64) -> DVector<f64> {
        gradient_from_parts(&self.nu, &self.scores, &(features.matrix() * omega), gamma)
    }
}

pub fn evaluate(mdp: &FiniteMdp, policy: &SoftmaxPolicy, features: &FeatureMatrix) -> Result<ThetaEvaluation> {
    let probs = policy.probs();
    let sa_matrix = mdp::sa_transition_matrix(mdp, &probs)?;
    let rho = mdp::stationary_distribution(&sa_matrix)?;
    let nu = mdp::discounted_visitation(mdp, &probs)?;
    let q = mdp::q_values_from_sa_matrix(mdp, &sa_matrix)?;
    let value = mdp.eta().dot(&mdp::state_values_from_q(mdp, &probs, &q));
    let scores = policy.score_matrix()?;
    let gradient = gradient_from_parts(&nu, &scores, &q, mdp.gamma());
    let td = critic::td_pair_from_parts(mdp, &sa_matrix, &rho, features);
    let omega_theta = critic::td_fixed_point(&td)?;
    let margin = critic::exploration_margin(&td);
    let delta = critic::weighted_abs_error(&nu, &q, &(features.matrix() * &omega_theta));
    Ok(ThetaEvaluation { probs, sa_matrix, rho, nu, q, value, scores, gradient, td, omega_theta, margin, delta })
}

/// Parameter grid: the origin plus `count − 1` points uniform in `[−radius, radius]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaGridSpec {
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for ThetaGridSpec {
    fn default() -> Self {
        Self { count: 32, radius: 2.0, seed: 0 }
    }
}

impl ThetaGridSpec {
    pub fn points(&self, dim: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = vec![DVector::zeros(dim)];
        for _ in 1..self.count.max(1) {
            out.push(DVector::from_fn(dim, |_, _| rng.random_range(-self.radius..=self.radius)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub theta: DVector<f64>,
    pub margin: f64,
    pub delta: f64,
    pub omega_theta: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub slem: f64,
    /// `None` when the chain does not mix within the cap.
    pub t_mix: Option<usize>,
}

/// Evaluates every grid point in parallel; errors carry the grid index.
pub fn oracle_grid(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    features: &FeatureMatrix,
    thetas: &[DVector<f64>],
) -> Result<Vec<GridPoint>> {
    thetas
        .par_iter()
        .enumerate()
        .map(|(index, theta)| {
            let pol = policy.with_theta(theta.clone());
            let ev = evaluate(mdp, &pol, features).map_err(|e| e.at_grid_point(index))?;
            let slem = mdp::second_eigenvalue_modulus(&ev.sa_matrix).map_err(|e| e.at_grid_point(index))?;
            let t_mix = mdp::mixing_diagnostics(&ev.sa_matrix).ok().map(|m| m.t_mix);
            Ok(GridPoint {
                index,
                theta: theta.clone(),
                margin: ev.margin,
                delta: ev.delta,
                omega_theta: ev.omega_theta,
                value: ev.value,
                gradient: ev.gradient,
                slem,
                t_mix,
            })
        })
        .collect()
}

/// `μ = 2·min m_θ` over the grid.
pub fn mu_estimate(points: &[GridPoint]) -> f64 {
    2.0 * points.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min)
}

/// `δ = max δ_θ` over the grid.
pub fn delta_estimate(points: &[GridPoint]) -> f64 {
    points.iter().map(|p| p.delta).fold(0.0, f64::max)
}

pub fn max_omega_norm(points: &[GridPoint]) -> f64 {
    points.iter().map(|p| p.omega_theta.norm()).fold(0.0, f64::max)
}

/// Ball radius check for the critic projection set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCheck {
    pub radius: f64,
    pub max_omega_norm: f64,
    pub margin: f64,
    pub contains_all: bool,
    /// `(2/μ)·C_max`.
    pub analytic_radius: f64,
}

impl ProjectionCheck {
    pub fn from_grid(points: &[GridPoint], c_max: f64, radius: f64) -> Self {
        let max_norm = max_omega_norm(points);
        let mu = mu_estimate(points);
        Self {
            radius,
            max_omega_norm: max_norm,
            margin: radius - max_norm,
            contains_all: max_norm < radius,
            analytic_radius: if mu > 0.0 { 2.0 / mu * c_max } else { f64::INFINITY },
        }
    }
}

/// Worst mixing behavior over the grid; `t_mix` is `None` if any point fails to mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMixing {
    pub slem: f64,
    pub t_mix: Option<usize>,
}

impl GridMixing {
    pub fn from_grid(points: &[GridPoint]) -> Self {
        let slem = points.iter().map(|p| p.slem).fold(0.0, f64::max);
        let t_mix = points.iter().try_fold(0usize, |acc, p| p.t_mix.map(|t| acc.max(t)));
        Self { slem, t_mix }
    }

    pub fn as_diagnostics(&self) -> Option<MixingDiagnostics> {
        self.t_mix.map(|t_mix| MixingDiagnostics { slem: self.slem, t_mix })
    }
}

/// Machine-readable summary of the standing assumptions on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub c_max_ok: bool,
    pub mixing: GridMixing,
    pub smoothness: SmoothnessReport,
    pub features_ok: bool,
    pub delta_estimate: f64,
    pub mu_estimate: f64,
    pub margin_positive: bool,
    pub projection_ok: bool,
    pub projection: ProjectionCheck,
    pub phi_norm: f64,
    pub grid_size: usize,
}

impl AssumptionReport {
    pub fn build(
        mdp: &FiniteMdp,
        features: &FeatureMatrix,
        smoothness: SmoothnessReport,
        points: &[GridPoint],
        radius: f64,
    ) -> Self {
        let mu = mu_estimate(points);
        let projection = ProjectionCheck::from_grid(points, mdp.c_max(), radius);
        Self {
            c_max_ok: mdp.cost().iter().all(|c| c.abs() <= mdp.c_max()),
            mixing: GridMixing::from_grid(points),
            smoothness,
            // FeatureMatrix construction enforces both feature conditions.
            features_ok: features.n_rows() == mdp.n_sa(),
            delta_estimate: delta_estimate(points),
            mu_estimate: mu,
            margin_positive: mu > 0.0,
            projection_ok: projection.contains_all,
            projection,
            phi_norm: features.spectral_norm(),
            grid_size: points.len(),
        }
    }

    /// Name of the first failing assumption, if any.
    pub fn first_failure(&self) -> Option<&'static str> {
        if !self.c_max_ok {
            Some("c_max_ok")
        } else if !self.features_ok {
            Some("features_ok")
        } else if self.mixing.t_mix.is_none() {
            Some("mixing")
        } else if !self.smoothness.within_analytic_bound {
            Some("smoothness")
        } else if !self.margin_positive {
            Some("mu_estimate")
        } else if !self.projection_ok {
            Some("projection_ok")
        } else {
            None
        }
    }
}
