//! The single-sample actor-critic recursion with oracle diagnostics.
//!
//! Each iteration consumes one actor tuple and one critic tuple:
//!
//! ```text
//! θ ← θ − β_t κ (φ(s,a)ᵀω) ∇log π_θ(a|s)
//! ω ← P_Ω[ω + α_t (c′ + γ φ(s″,a″)ᵀω − φ(s′,a′)ᵀω) φ(s′,a′)]
//! ```
//!
//! where `κ = 1/(1−γ)` unless actor scaling is disabled.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::critic::FeatureMatrix;
use crate::error::{Error, Result};
use crate::mdp::{self, FiniteMdp, SaDistribution};
use crate::oracle::{self, ProjectionCheck};
use crate::policy::SoftmaxPolicy;
use crate::sampler::{self, SampleCounts, Sampler, SamplerConfig};

/// Step-size shape evaluated at `t ≥ 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `1/√t`
    #[default]
    InvSqrt,
    /// `t^(−exponent)`
    Power {
        exponent: f64,
    },
    Constant {
        value: f64,
    },
    Zero,
}


impl Schedule {
    pub fn at(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        match *self {
            Schedule::InvSqrt => 1.0 / t.sqrt(),
            Schedule::Power { exponent } => t.powf(-exponent),
            Schedule::Constant { value } => value,
            Schedule::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcConfig {
    pub total_steps: usize,
    /// `c′`: the actor step is `β_t = c′·beta_schedule(t)`.
    pub actor_scale: f64,
    /// Radius of the critic ball `Ω`.
    pub omega_radius: f64,
    pub alpha_schedule: Schedule,
    pub beta_schedule: Schedule,
    pub diag_stride: usize,
    pub sampler: SamplerConfig,
    pub theta_init: Option<Vec<f64>>,
    pub omega_init: Option<Vec<f64>>,
}

impl AcConfig {
    pub fn new(total_steps: usize, actor_scale: f64, omega_radius: f64) -> Self {
        Self {
            total_steps,
            actor_scale,
            omega_radius,
            alpha_schedule: Schedule::InvSqrt,
            beta_schedule: Schedule::InvSqrt,
            diag_stride: 100,
            sampler: SamplerConfig::default(),
            theta_init: None,
            omega_init: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 2 {
            return Err(Error::InvalidConfig("total_steps must be >= 2".into()));
        }
        if !(self.actor_scale > 0.0 && self.actor_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("actor_scale = {} must be positive", self.actor_scale)));
        }
        if !(self.omega_radius > 0.0 && self.omega_radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("omega_radius = {} must be positive", self.omega_radius)));
        }
        if self.diag_stride == 0 {
            return Err(Error::InvalidConfig("diag_stride must be >= 1".into()));
        }
        self.sampler.validate()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_schedule.at(t)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.actor_scale * self.beta_schedule.at(t)
    }

    fn initial_vector(v: &Option<Vec<f64>>, dim: usize, what: &'static str) -> Result<DVector<f64>> {
        match v {
            None => Ok(DVector::zeros(dim)),
            Some(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::DimensionMismatch { context: what, expected: dim, actual: v.len() }),
        }
    }
}

/// Euclidean projection onto the ball of radius `radius`.
pub fn project_ball(omega: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = omega.norm();
    if n <= radius {
        omega.clone()
    } else {
        omega * (radius / n)
    }
}

/// Whether the ball of radius `radius` holds every `ω_θ` on the grid.
pub fn validate_projection_radius(
    mdp: &FiniteMdp,
    features: &FeatureMatrix,
    policy: &SoftmaxPolicy,
    theta_grid: &[DVector<f64>],
    radius: f64,
) -> Result<ProjectionCheck> {
    let points = oracle::oracle_grid(mdp, policy, features, theta_grid)?;
    Ok(ProjectionCheck::from_grid(&points, mdp.c_max(), radius))
}

/// Default radius: twice the analytic sufficient radius `(2/μ)·C_max`.
pub fn default_omega_radius(mu: f64, c_max: f64) -> f64 {
    2.0 * (2.0 / mu) * c_max
}

pub enum GradientTarget<'a> {
    /// `∇V(θ) = ĝ(θ, Q*_θ)`.
    TrueQ,
    /// `g(θ, ω) = ĝ(θ, Φω)`.
    Critic { features: &'a FeatureMatrix, omega: &'a DVector<f64> },
}

/// `ĝ(θ, Q) = 1/(1−γ) Σ ν_θ(s,a) Q(s,a) ∇log π_θ(a|s)`.
pub fn exact_gradient(mdp: &FiniteMdp, policy: &SoftmaxPolicy, target: GradientTarget<'_>) -> Result<DVector<f64>> {
    let probs = policy.probs();
    let nu = mdp::discounted_visitation(mdp, &probs)?;
    let scores = policy.score_matrix()?;
    let q = match target {
        GradientTarget::TrueQ => mdp::q_values(mdp, &probs)?,
        GradientTarget::Critic { features, omega } => features.matrix() * omega,
    };
    Ok(oracle::gradient_from_parts(&nu, &scores, &q, mdp.gamma()))
}

/// Iterate at the start of step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcState {
    pub t: usize,
    pub theta: DVector<f64>,
    pub omega: DVector<f64>,
}

/// Stationary SA distribution for the sampling loop: the bordered solve when
/// it succeeds, the checked oracle otherwise.
fn sampling_stationary(p: &nalgebra::DMatrix<f64>) -> Result<SaDistribution> {
    if let Some(rho) = mdp::stationary_by_solve(p) {
        if mdp::fixed_point_residual(p, &rho) <= 1e-10 {
            if let Ok(d) = SaDistribution::new(rho) {
                return Ok(d);
            }
        }
    }
    mdp::stationary_distribution(p)
}

/// Increments of one iteration, before they are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepIncrements {
    /// `−β_t κ (φᵀω) score`.
    pub actor: DVector<f64>,
    /// `α_t (c′ + γφ″ᵀω − φ′ᵀω) φ′`, before projection.
    pub critic: DVector<f64>,
}

/// Draws one actor and one critic sample at `state` and returns the updates.
pub fn step_increments(
    state: &AcState,
    mdp: &FiniteMdp,
    policy_class: &SoftmaxPolicy,
    features: &FeatureMatrix,
    config: &AcConfig,
    sampler: &mut Sampler,
) -> Result<StepIncrements> {
    let policy = policy_class.with_theta(state.theta.clone());
    let probs = policy.probs();
    let rho = match sampler.config().critic_mode {
        sampler::CriticMode::Exact => Some(sampling_stationary(&mdp::sa_transition_matrix(mdp, &probs)?)?),
        sampler::CriticMode::Rollout => None,
    };
    let (s, a) = sampler.actor(mdp, &probs);
    let tuple = sampler.critic(mdp, &probs, rho.as_ref())?;
    let kappa = config.sampler.actor_scale(mdp.gamma());
    let actor = sampler::actor_direction(&policy, features, &state.omega, s, a, kappa)? * (-config.beta(state.t));
    let critic = sampler::td_increment(mdp, features, &state.omega, &tuple) * config.alpha(state.t);
    Ok(StepIncrements { actor, critic })
}

/// One iteration: `state` at step `t` becomes the state at step `t + 1`.
pub fn step(
    state: &mut AcState,
    mdp: &FiniteMdp,
    policy_class: &SoftmaxPolicy,
    features: &FeatureMatrix,
    config: &AcConfig,
    sampler: &mut Sampler,
) -> Result<()> {
    let inc = step_increments(state, mdp, policy_class, features, config, sampler)?;
    state.theta += inc.actor;
    state.omega = project_ball(&(&state.omega + inc.critic), config.omega_radius);
    state.t += 1;
    Ok(())
}

/// One diagnostic row, describing the iterate at the start of step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRow {
    pub t: usize,
    /// `||∇V(θ_t)||²`.
    pub grad_sq: f64,
    /// `||ω_t − ω_{θ_t}||²`.
    pub delta_sq: f64,
    pub value: f64,
    pub omega_norm: f64,
    pub theta_norm: f64,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    pub total_steps: usize,
    pub diag_stride: usize,
    pub actor_scale: f64,
    pub omega_radius: f64,
    /// Actor plus critic oracle samples.
    pub oracle_samples: u64,
    pub mdp_transitions: u64,
    /// Max of `||ω_{θ_j} − ω_{θ_i}|| / ||θ_j − θ_i||` over consecutive logged iterates.
    pub empirical_l_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateLog {
    pub meta: RunMeta,
    pub rows: Vec<IterateRow>,
}

impl IterateLog {
    /// `(t, value)` pairs of the chosen series.
    pub fn series(&self, which: Series) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .map(|r| {
                let v = match which {
                    Series::GradSq => r.grad_sq,
                    Series::DeltaSq => r.delta_sq,
                    Series::Value => r.value,
                };
                (r.t, v)
            })
            .collect()
    }

    pub fn row_at(&self, t: usize) -> Option<&IterateRow> {
        self.rows.binary_search_by_key(&t, |r| r.t).ok().map(|i| &self.rows[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    GradSq,
    DeltaSq,
    Value,
}

/// Logged iteration indices: `1` and every multiple of `stride` up to `total`.
pub fn logged_steps(total: usize, stride: usize) -> impl Iterator<Item = usize> {
    (1..=total).filter(move |t| *t == 1 || t % stride == 0)
}

/// Runs steps `1..=T`, logging oracle diagnostics at [`logged_steps`].
pub fn run(
    mdp: &FiniteMdp,
    policy_class: &SoftmaxPolicy,
    features: &FeatureMatrix,
    config: &AcConfig,
    config_hash: &str,
) -> Result<IterateLog> {
    config.validate()?;
    if features.n_rows() != mdp.n_sa() {
        return Err(Error::DimensionMismatch {
            context: "feature rows vs SA pairs",
            expected: mdp.n_sa(),
            actual: features.n_rows(),
        });
    }
    let mut state = AcState {
        t: 1,
        theta: AcConfig::initial_vector(&config.theta_init, policy_class.dim(), "theta_init")?,
        omega: AcConfig::initial_vector(&config.omega_init, features.dim(), "omega_init")?,
    };
    state.omega = project_ball(&state.omega, config.omega_radius);
    let mut sampler = Sampler::new(&config.sampler, mdp.gamma())?;
    let mut rows = Vec::new();
    let mut l_omega: f64 = 0.0;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    for t in 1..=config.total_steps {
        debug_assert_eq!(state.t, t);
        if t == 1 || t % config.diag_stride == 0 {
            let pol = policy_class.with_theta(state.theta.clone());
            let ev = oracle::evaluate(mdp, &pol, features).map_err(|e| e.at_iteration(t))?;
            if let Some((theta_p, omega_p)) = &prev {
                let dt = (&state.theta - theta_p).norm();
                if dt > 0.0 {
                    l_omega = l_omega.max((&ev.omega_theta - omega_p).norm() / dt);
                }
            }
            rows.push(IterateRow {
                t,
                grad_sq: ev.gradient.norm_squared(),
                delta_sq: (&state.omega - &ev.omega_theta).norm_squared(),
                value: ev.value,
                omega_norm: state.omega.norm(),
                theta_norm: state.theta.norm(),
                omega: state.omega.as_slice().to_vec(),
                theta: state.theta.as_slice().to_vec(),
            });
            prev = Some((state.theta.clone(), ev.omega_theta));
        }
        step(&mut state, mdp, policy_class, features, config, &mut sampler).map_err(|e| e.at_iteration(t))?;
    }

    let SampleCounts { actor_samples, critic_samples, mdp_transitions } = sampler.counts();
    Ok(IterateLog {
        meta: RunMeta {
            seed: config.sampler.seed,
            config_hash: config_hash.to_string(),
            total_steps: config.total_steps,
            diag_stride: config.diag_stride,
            actor_scale: config.actor_scale,
            omega_radius: config.omega_radius,
            oracle_samples: actor_samples + critic_samples,
            mdp_transitions,
            empirical_l_omega: l_omega,
        },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RandomMdpSpec;

    #[test]
    fn projection_examples() {
        let w = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(project_ball(&w, 10.0), w);
        let p = project_ball(&w, 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project_ball(&DVector::zeros(2), 1.0), DVector::zeros(2));
    }

    #[test]
    fn schedules() {
        assert_eq!(Schedule::InvSqrt.at(4), 0.5);
        assert_eq!(Schedule::Power { exponent: 1.0 }.at(4), 0.25);
        assert_eq!(Schedule::Zero.at(9), 0.0);
        let cfg = AcConfig::new(10, 0.1, 1.0);
        assert!((cfg.beta(4) - 0.05).abs() < 1e-15);
        assert_eq!(cfg.alpha(0), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(AcConfig::new(1, 0.1, 1.0).validate().is_err());
        assert!(AcConfig::new(10, 0.0, 1.0).validate().is_err());
        assert!(AcConfig::new(10, 0.1, -1.0).validate().is_err());
        let mut c = AcConfig::new(10, 0.1, 1.0);
        c.diag_stride = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_cost_zero_critic_is_stationary() {
        let mdp = RandomMdpSpec::new(3, 2, 0.9, 0).generate().unwrap().with_costs(vec![0.0; 6]).unwrap();
        let pol = SoftmaxPolicy::tabular(3, 2, 0.05).unwrap();
        let feats = FeatureMatrix::tabular(6);
        let cfg = AcConfig::new(10, 0.5, 5.0);
        let mut sampler = Sampler::new(&cfg.sampler, mdp.gamma()).unwrap();
        let mut st = AcState { t: 1, theta: DVector::zeros(6), omega: DVector::zeros(6) };
        for _ in 0..20 {
            step(&mut st, &mdp, &pol, &feats, &cfg, &mut sampler).unwrap();
        }
        assert_eq!(st.theta, DVector::zeros(6));
        assert_eq!(st.omega, DVector::zeros(6));
        assert_eq!(st.t, 21);
    }

    #[test]
    fn smoke_run_and_determinism() {
        let mdp = RandomMdpSpec::new(3, 2, 0.9, 1).generate().unwrap();
        let pol = SoftmaxPolicy::tabular(3, 2, 0.05).unwrap();
        let feats = FeatureMatrix::tabular(6);
        let mut cfg = AcConfig::new(2, 0.1, 50.0);
        cfg.diag_stride = 1;
        let log = run(&mdp, &pol, &feats, &cfg, "h").unwrap();
        assert_eq!(log.rows.len(), 2);
        assert!(log.rows.iter().all(|r| r.grad_sq.is_finite() && r.delta_sq.is_finite()));
        cfg.total_steps = 500;
        cfg.diag_stride = 50;
        let a = run(&mdp, &pol, &feats, &cfg, "h").unwrap();
        let b = run(&mdp, &pol, &feats, &cfg, "h").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 11);
        assert_eq!(a.meta.oracle_samples, 1000);
        assert!(a.meta.mdp_transitions >= 1000);
        assert!(a.rows.iter().all(|r| r.omega_norm <= 50.0 + 1e-12));
    }

    #[test]
    fn frozen_actor_keeps_theta() {
        let mdp = RandomMdpSpec::new(3, 2, 0.9, 1).generate().unwrap();
        let pol = SoftmaxPolicy::tabular(3, 2, 0.05).unwrap();
        let mut cfg = AcConfig::new(300, 0.1, 50.0);
        cfg.beta_schedule = Schedule::Zero;
        let log = run(&mdp, &pol, &FeatureMatrix::tabular(6), &cfg, "h").unwrap();
        assert!(log.rows.iter().all(|r| r.theta_norm == 0.0));
        assert_eq!(log.meta.empirical_l_omega, 0.0);
    }

    #[test]
    fn initial_vector_dimension_checked() {
        let mdp = RandomMdpSpec::new(2, 2, 0.9, 1).generate().unwrap();
        let pol = SoftmaxPolicy::tabular(2, 2, 0.05).unwrap();
        let mut cfg = AcConfig::new(5, 0.1, 5.0);
        cfg.theta_init = Some(vec![0.0; 3]);
        assert!(matches!(run(&mdp, &pol, &FeatureMatrix::tabular(4), &cfg, "h"), Err(Error::DimensionMismatch { .. })));
    }
}
