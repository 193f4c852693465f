//! Sample generation for the actor tuple `(s, a) ~ ν_θ` and the critic
//! four-tuple `(s′, a′, s″, a″) ~ μ_θ`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::FeatureMatrix;
use crate::error::{Error, Result};
use crate::mdp::{self, FiniteMdp, PolicyProbs, SaDistribution};
use crate::oracle;
use crate::policy::SoftmaxPolicy;

/// Tail mass left beyond the geometric horizon cap.
pub const HORIZON_TAIL: f64 = 1e-9;
const ACTOR_STREAM: u64 = 1;
const CRITIC_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticMode {
    /// `(s′, a′)` drawn from the exact stationary distribution.
    Exact,
    /// `(s′, a′)` is the last pair of a `burn_in`-step path from `η`.
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub seed: u64,
    pub critic_mode: CriticMode,
    pub burn_in: usize,
    /// Defaults to `⌈ln(1e−9)/ln γ⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_cap: Option<usize>,
    /// Multiply the sampled actor direction by `1/(1−γ)`.
    pub scale_actor: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { seed: 0, critic_mode: CriticMode::Exact, burn_in: 100, horizon_cap: None, scale_actor: true }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in == 0 {
            return Err(Error::InvalidConfig("sampler.burn_in must be >= 1".into()));
        }
        if self.horizon_cap == Some(0) {
            return Err(Error::InvalidConfig("sampler.horizon_cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn horizon_cap(&self, gamma: f64) -> usize {
        self.horizon_cap.unwrap_or_else(|| default_horizon_cap(gamma))
    }

    /// Factor applied to the raw actor direction.
    pub fn actor_scale(&self, gamma: f64) -> f64 {
        if self.scale_actor {
            1.0 / (1.0 - gamma)
        } else {
            1.0
        }
    }
}

pub fn default_horizon_cap(gamma: f64) -> usize {
    ((HORIZON_TAIL.ln() / gamma.ln()).ceil() as usize).max(1)
}

/// Inverse-CDF draw from a probability vector.
pub fn draw_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// `T` with `P(T = t) = (1−γ)γ^t`, truncated at `cap`.
pub fn draw_horizon<R: Rng + ?Sized>(rng: &mut R, gamma: f64, cap: usize) -> usize {
    // 1 − u lies in (0, 1]
    let u: f64 = 1.0 - rng.random::<f64>();
    let t = (u.ln() / gamma.ln()).floor();
    if t >= cap as f64 {
        cap
    } else {
        t as usize
    }
}

fn step_pair<R: Rng + ?Sized>(rng: &mut R, mdp: &FiniteMdp, policy: &PolicyProbs, s: usize, a: usize) -> (usize, usize) {
    let s2 = draw_categorical(rng, mdp.next_state_probs(s, a));
    let a2 = draw_categorical(rng, policy.table().row(s2).transpose().as_slice());
    (s2, a2)
}

fn initial_pair<R: Rng + ?Sized>(rng: &mut R, mdp: &FiniteMdp, policy: &PolicyProbs) -> (usize, usize) {
    let s = draw_categorical(rng, mdp.eta().as_slice());
    let a = draw_categorical(rng, policy.table().row(s).transpose().as_slice());
    (s, a)
}

/// Actor tuple plus the number of MDP transitions consumed.
pub fn sample_actor_tuple<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    policy: &PolicyProbs,
    rng: &mut R,
    horizon_cap: usize,
) -> ((usize, usize), usize) {
    let horizon = draw_horizon(rng, mdp.gamma(), horizon_cap);
    let (mut s, mut a) = initial_pair(rng, mdp, policy);
    for _ in 0..horizon {
        (s, a) = step_pair(rng, mdp, policy, s, a);
    }
    ((s, a), horizon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticTuple {
    pub s1: usize,
    pub a1: usize,
    pub s2: usize,
    pub a2: usize,
    pub cost: f64,
}

/// Critic four-tuple plus the number of MDP transitions consumed. In exact
/// mode `rho` is the stationary SA distribution; it is computed when absent.
pub fn sample_critic_tuple<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    policy: &PolicyProbs,
    rng: &mut R,
    config: &SamplerConfig,
    rho: Option<&SaDistribution>,
) -> Result<(CriticTuple, usize)> {
    let ((s1, a1), burn) = match config.critic_mode {
        CriticMode::Exact => {
            let owned;
            let rho = match rho {
                Some(r) => r,
                None => {
                    owned = mdp::stationary_distribution(&mdp::sa_transition_matrix(mdp, policy)?)?;
                    &owned
                }
            };
            let i = draw_categorical(rng, rho.probs().as_slice());
            ((i / mdp.n_actions(), i % mdp.n_actions()), 0)
        }
        CriticMode::Rollout => {
            let (mut s, mut a) = initial_pair(rng, mdp, policy);
            for _ in 0..config.burn_in {
                (s, a) = step_pair(rng, mdp, policy, s, a);
            }
            ((s, a), config.burn_in)
        }
    };
    let (s2, a2) = step_pair(rng, mdp, policy, s1, a1);
    let cost = mdp.cost()[mdp.sa_index(s1, a1)];
    Ok((CriticTuple { s1, a1, s2, a2, cost }, burn + 1))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub actor_samples: u64,
    pub critic_samples: u64,
    pub mdp_transitions: u64,
}

/// Owns the actor and critic RNG streams for one run.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: SamplerConfig,
    actor_rng: ChaCha8Rng,
    critic_rng: ChaCha8Rng,
    horizon_cap: usize,
    counts: SampleCounts,
}

impl Sampler {
    pub fn new(config: &SamplerConfig, gamma: f64) -> Result<Self> {
        config.validate()?;
        let mut actor_rng = ChaCha8Rng::seed_from_u64(config.seed);
        actor_rng.set_stream(ACTOR_STREAM);
        let mut critic_rng = ChaCha8Rng::seed_from_u64(config.seed);
        critic_rng.set_stream(CRITIC_STREAM);
        Ok(Self {
            config: config.clone(),
            actor_rng,
            critic_rng,
            horizon_cap: config.horizon_cap(gamma),
            counts: SampleCounts::default(),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn counts(&self) -> SampleCounts {
        self.counts
    }

    pub fn actor(&mut self, mdp: &FiniteMdp, policy: &PolicyProbs) -> (usize, usize) {
        let (pair, used) = sample_actor_tuple(mdp, policy, &mut self.actor_rng, self.horizon_cap);
        self.counts.actor_samples += 1;
        // the initial draw from η counts as one transition
        self.counts.mdp_transitions += used as u64 + 1;
        pair
    }

    pub fn critic(&mut self, mdp: &FiniteMdp, policy: &PolicyProbs, rho: Option<&SaDistribution>) -> Result<CriticTuple> {
        let (tuple, used) = sample_critic_tuple(mdp, policy, &mut self.critic_rng, &self.config, rho)?;
        self.counts.critic_samples += 1;
        self.counts.mdp_transitions += used as u64;
        Ok(tuple)
    }
}

/// Sampled actor direction `κ (φ(s,a)ᵀω) ∇log π(a|s)` where `κ` is the
/// configured scale.
pub fn actor_direction(
    policy: &SoftmaxPolicy,
    features: &FeatureMatrix,
    omega: &DVector<f64>,
    s: usize,
    a: usize,
    scale: f64,
) -> Result<DVector<f64>> {
    let i = s * policy.n_actions() + a;
    Ok(policy.score(s, a)? * (scale * features.dot(i, omega)))
}

/// Sampled TD increment `(c′ + γφ″ᵀω − φ′ᵀω) φ′`; its mean is `Aω − b`.
pub fn td_increment(mdp: &FiniteMdp, features: &FeatureMatrix, omega: &DVector<f64>, t: &CriticTuple) -> DVector<f64> {
    let i1 = mdp.sa_index(t.s1, t.a1);
    let i2 = mdp.sa_index(t.s2, t.a2);
    let err = t.cost + mdp.gamma() * features.dot(i2, omega) - features.dot(i1, omega);
    features.matrix().row(i1).transpose() * err
}

/// Moments of the actor and critic noise at a fixed `(θ, ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStatistics {
    pub n_draws: usize,
    /// `E||w_a||²`.
    pub sigma_a2: f64,
    /// `E||w_c||²`.
    pub sigma_c2: f64,
    /// `sqrt(E||w_a||⁴)`.
    pub sigma_a4: f64,
    pub mean_a: Vec<f64>,
    pub mean_c: Vec<f64>,
    pub se_a: Vec<f64>,
    pub se_c: Vec<f64>,
    /// Largest `|corr(w_a_i, w_c_j)|·sqrt(n)` over component pairs.
    pub max_cross_corr_z: f64,
}

impl NoiseStatistics {
    /// Every mean component within `k` standard errors of zero.
    pub fn means_within(&self, k: f64) -> bool {
        let ok = |m: &[f64], se: &[f64]| m.iter().zip(se).all(|(m, s)| m.abs() <= k * s + 1e-12);
        ok(&self.mean_a, &self.se_a) && ok(&self.mean_c, &self.se_c)
    }
}

struct Moments {
    sum: DVector<f64>,
    sum_sq: DVector<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { sum: DVector::zeros(d), sum_sq: DVector::zeros(d) }
    }

    fn push(&mut self, w: &DVector<f64>) {
        self.sum += w;
        self.sum_sq += w.component_mul(w);
    }

    fn mean_and_se(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let nf = n as f64;
        let mean = &self.sum / nf;
        let se = DVector::from_fn(mean.len(), |i, _| {
            let var = (self.sum_sq[i] / nf - mean[i] * mean[i]).max(0.0) * nf / (nf - 1.0);
            (var / nf).sqrt()
        });
        (mean.as_slice().to_vec(), se.as_slice().to_vec())
    }
}

pub const MIN_NOISE_DRAWS: usize = 1000;

/// Draws `n_draws` actor and critic samples at fixed `(θ, ω)` and forms
/// `w_a = sampled actor direction − its mean` and
/// `w_c = (−A_tω + b_t) − (−A_θω + b_θ)`.
pub fn noise_statistics(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    features: &FeatureMatrix,
    omega: &DVector<f64>,
    n_draws: usize,
    config: &SamplerConfig,
) -> Result<NoiseStatistics> {
    if n_draws < MIN_NOISE_DRAWS {
        return Err(Error::InvalidConfig(format!("noise_statistics needs at least {MIN_NOISE_DRAWS} draws")));
    }
    let ev = oracle::evaluate(mdp, policy, features)?;
    let gamma = mdp.gamma();
    let scale = config.actor_scale(gamma);
    // E[κ (φᵀω) score] = κ(1−γ) g(θ, ω)
    let actor_mean = ev.critic_gradient(features, omega, gamma) * (scale * (1.0 - gamma));
    let td_mean = &ev.td.a_matrix * omega - &ev.td.b_vector;

    let mut sampler = Sampler::new(config, gamma)?;
    let (da, dc) = (policy.dim(), features.dim());
    let (mut ma, mut mc) = (Moments::new(da), Moments::new(dc));
    let (mut sq_a, mut quad_a, mut sq_c) = (0.0, 0.0, 0.0);
    let mut cross = nalgebra::DMatrix::<f64>::zeros(da, dc);
    for _ in 0..n_draws {
        let (s, a) = sampler.actor(mdp, &ev.probs);
        let wa = actor_direction(policy, features, omega, s, a, scale)? - &actor_mean;
        let tuple = sampler.critic(mdp, &ev.probs, Some(&ev.rho))?;
        let wc = -(td_increment(mdp, features, omega, &tuple) - &td_mean);
        let na = wa.norm_squared();
        sq_a += na;
        quad_a += na * na;
        sq_c += wc.norm_squared();
        cross += &wa * wc.transpose();
        ma.push(&wa);
        mc.push(&wc);
    }
    let nf = n_draws as f64;
    let (mean_a, se_a) = ma.mean_and_se(n_draws);
    let (mean_c, se_c) = mc.mean_and_se(n_draws);
    let mut max_z: f64 = 0.0;
    for i in 0..da {
        for j in 0..dc {
            let sa = se_a[i] * nf.sqrt();
            let sc = se_c[j] * nf.sqrt();
            if sa > 0.0 && sc > 0.0 {
                let cov = cross[(i, j)] / nf - mean_a[i] * mean_c[j];
                max_z = max_z.max((cov / (sa * sc)).abs() * nf.sqrt());
            }
        }
    }
    Ok(NoiseStatistics {
        n_draws,
        sigma_a2: sq_a / nf,
        sigma_c2: sq_c / nf,
        sigma_a4: (quad_a / nf).sqrt(),
        mean_a,
        mean_c,
        se_a,
        se_c,
        max_cross_corr_z: max_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RandomMdpSpec;

    #[test]
    fn horizon_cap_tail() {
        let cap = default_horizon_cap(0.9);
        assert!(0.9f64.powi(cap as i32) <= HORIZON_TAIL);
        assert!(0.9f64.powi(cap as i32 - 1) > HORIZON_TAIL);
        assert_eq!(default_horizon_cap(0.5), 30);
    }

    #[test]
    fn categorical_skips_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(draw_categorical(&mut rng, &[0.0, 1.0, 0.0]), 1);
        }
    }

    #[test]
    fn geometric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_horizon(&mut rng, 0.5, 30) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() <= 3.0 * (var / n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn single_state_tuples_are_deterministic() {
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![0.3], 0.5, vec![1.0], 1.0).unwrap();
        let pol = PolicyProbs::uniform(1, 1);
        let cfg = SamplerConfig::default();
        let mut s = Sampler::new(&cfg, 0.5).unwrap();
        for _ in 0..100 {
            assert_eq!(s.actor(&mdp, &pol), (0, 0));
            let t = s.critic(&mdp, &pol, None).unwrap();
            assert_eq!((t.s1, t.a1, t.s2, t.a2, t.cost), (0, 0, 0, 0, 0.3));
        }
        assert_eq!(s.counts().critic_samples, 100);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mdp = RandomMdpSpec::new(4, 2, 0.9, 1).generate().unwrap();
        let pol = PolicyProbs::uniform(4, 2);
        let cfg = SamplerConfig { seed: 42, ..Default::default() };
        let run = || {
            let mut s = Sampler::new(&cfg, 0.9).unwrap();
            (0..200).map(|_| (s.actor(&mdp, &pol), s.critic(&mdp, &pol, None).unwrap().s1)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        let mut a = ChaCha8Rng::seed_from_u64(42);
        a.set_stream(ACTOR_STREAM);
        let mut c = ChaCha8Rng::seed_from_u64(42);
        c.set_stream(CRITIC_STREAM);
        assert_ne!(a.random::<u64>(), c.random::<u64>());
    }

    #[test]
    fn degenerate_critic_noise() {
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 0.5, vec![1.0], 1.0).unwrap();
        let pol = SoftmaxPolicy::tabular(1, 1, 0.0).unwrap();
        let stats = noise_statistics(
            &mdp,
            &pol,
            &FeatureMatrix::tabular(1),
            &DVector::from_vec(vec![0.7]),
            1000,
            &SamplerConfig::default(),
        )
        .unwrap();
        // single possible tuple; only rounding remains
        assert!(stats.sigma_c2 < 1e-28);
        assert_eq!(stats.sigma_a2, 0.0);
        assert!(stats.means_within(4.0));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SamplerConfig { burn_in: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { horizon_cap: Some(0), ..Default::default() }.validate().is_err());
    }
}
