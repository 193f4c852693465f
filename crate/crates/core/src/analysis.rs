//! Constant estimation, step-size conditions, the gain coefficients of the
//! convergence proof, the nonlinear small-gain bound, tail averages and
//! rate fits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{AcConfig, IterateLog, Series};
use crate::critic::{self, FeatureMatrix, L_NABLA};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{self, FiniteMdp};
use crate::oracle::{self, GridPoint};
use crate::policy::SoftmaxPolicy;
use crate::sampler::{self, SamplerConfig};

/// `c_α = c_β = √2` for `1/√t` schedules, since `α_{t/2} = √2 α_t`.
pub const C_SQRT_SCHEDULE: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantSet {
    pub gamma: f64,
    pub c_max: f64,
    pub mu: f64,
    pub delta: f64,
    /// `Kδ/(1−γ)`.
    pub delta_bar: f64,
    pub l_nabla: f64,
    pub l_g: f64,
    pub l_omega: f64,
    pub l_v: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub phi_norm: f64,
    pub sigma_a2: f64,
    pub sigma_c2: f64,
    /// `σ_a′²`, a bound on `sqrt(E||w_a||⁴)`.
    pub sigma_a4: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
    /// Finite-difference estimate of `λ = sqrt(Σ_i λ_i²)`.
    pub lambda_hess: f64,
    pub grid_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Draws per noise-statistics call.
    pub noise_draws: usize,
    /// Number of grid points (from the front) used for the noise moments.
    pub noise_points: usize,
    /// Step for first-derivative probes.
    pub fd_step: f64,
    /// Step for second-derivative probes.
    pub hess_step: f64,
    pub sampler: SamplerConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { noise_draws: 4000, noise_points: 4, fd_step: 1e-5, hess_step: 1e-3, sampler: SamplerConfig::default() }
    }
}

fn omega_at(mdp: &FiniteMdp, class: &SoftmaxPolicy, features: &FeatureMatrix, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let td = critic::expected_td_pair(mdp, &class.with_theta(theta.clone()).probs(), features)?;
    critic::td_fixed_point(&td)
}

fn gradient_at(mdp: &FiniteMdp, class: &SoftmaxPolicy, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let pol = class.with_theta(theta.clone());
    let probs = pol.probs();
    let nu = mdp::discounted_visitation(mdp, &probs)?;
    let q = mdp::q_values(mdp, &probs)?;
    Ok(oracle::gradient_from_parts(&nu, &pol.score_matrix()?, &q, mdp.gamma()))
}

/// Central-difference Jacobian of `f` at `x`.
fn fd_jacobian<F>(f: &F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        cols.push((f(&xp)? - f(&xm)?) / (2.0 * h));
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// `sqrt(Σ_i ||∇²ω_θ(i)||²)` by second differences.
fn omega_hessian_aggregate(
    mdp: &FiniteMdp,
    class: &SoftmaxPolicy,
    features: &FeatureMatrix,
    theta: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    let d = theta.len();
    let k = features.dim();
    let at = |dj: Option<(usize, f64)>, dl: Option<(usize, f64)>| -> Result<DVector<f64>> {
        let mut x = theta.clone();
        if let Some((j, s)) = dj {
            x[j] += s;
        }
        if let Some((l, s)) = dl {
            x[l] += s;
        }
        omega_at(mdp, class, features, &x)
    };
    let mut hess = vec![DMatrix::<f64>::zeros(d, d); k];
    for j in 0..d {
        for l in j..d {
            let v = (at(Some((j, h)), Some((l, h)))? - at(Some((j, h)), Some((l, -h)))? - at(Some((j, -h)), Some((l, h)))?
                + at(Some((j, -h)), Some((l, -h)))?)
                / (4.0 * h * h);
            for (i, m) in hess.iter_mut().enumerate() {
                m[(j, l)] = v[i];
                m[(l, j)] = v[i];
            }
        }
    }
    Ok(hess.into_iter().map(|m| if d == 0 { 0.0 } else { SymmetricEigen::new(m).eigenvalues.amax().powi(2) }).sum::<f64>().sqrt())
}

/// Largest ratio `||f_i − f_j|| / ||θ_i − θ_j||` over all grid pairs.
fn pairwise_lipschitz(thetas: &[DVector<f64>], values: &[DVector<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            let dt = (&thetas[i] - &thetas[j]).norm();
            if dt > 0.0 {
                best = best.max((&values[i] - &values[j]).norm() / dt);
            }
        }
    }
    best
}

struct PointProbe {
    jac_omega: f64,
    hess_value: f64,
    lambda: f64,
}

/// Estimates every constant on the grid `thetas`.
pub fn estimate_constants(
    mdp: &FiniteMdp,
    class: &SoftmaxPolicy,
    features: &FeatureMatrix,
    thetas: &[DVector<f64>],
    config: &EstimateConfig,
) -> Result<(ConstantSet, Vec<GridPoint>)> {
    if thetas.is_empty() {
        return Err(Error::InvalidConfig("theta grid is empty".into()));
    }
    let points = oracle::oracle_grid(mdp, class, features, thetas)?;
    let gamma = mdp.gamma();
    let mu = oracle::mu_estimate(&points);
    let delta = oracle::delta_estimate(&points);
    let smooth = class.smoothness_report(thetas)?;
    let phi_norm = features.spectral_norm();
    let k = smooth.k;
    let l_g = k * phi_norm / (1.0 - gamma);

    let probes: Vec<PointProbe> = thetas
        .par_iter()
        .enumerate()
        .map(|(idx, theta)| {
            let run = || -> Result<PointProbe> {
                let jw = fd_jacobian(&|x: &DVector<f64>| omega_at(mdp, class, features, x), theta, config.fd_step)?;
                let hv = fd_jacobian(&|x: &DVector<f64>| gradient_at(mdp, class, x), theta, config.fd_step)?;
                Ok(PointProbe {
                    jac_omega: linalg::spectral_norm(&jw),
                    hess_value: linalg::spectral_norm(&hv),
                    lambda: omega_hessian_aggregate(mdp, class, features, theta, config.hess_step)?,
                })
            };
            run().map_err(|e| e.at_grid_point(idx))
        })
        .collect::<Result<_>>()?;

    let omegas: Vec<_> = points.iter().map(|p| p.omega_theta.clone()).collect();
    let grads: Vec<_> = points.iter().map(|p| p.gradient.clone()).collect();
    let l_omega = probes.iter().map(|p| p.jac_omega).fold(pairwise_lipschitz(thetas, &omegas), f64::max);
    let l_v = probes.iter().map(|p| p.hess_value).fold(pairwise_lipschitz(thetas, &grads), f64::max);
    let lambda_hess = probes.iter().map(|p| p.lambda).fold(0.0, f64::max);

    let n_noise = config.noise_points.clamp(1, points.len());
    let noise: Vec<sampler::NoiseStatistics> = points[..n_noise]
        .par_iter()
        .flat_map(|p| {
            let pol = class.with_theta(p.theta.clone());
            [DVector::zeros(features.dim()), p.omega_theta.clone()].into_par_iter().map(move |w| (pol.clone(), w, p.index))
        })
        .map(|(pol, w, idx)| {
            let mut cfg = config.sampler.clone();
            cfg.seed = cfg.seed.wrapping_add(idx as u64);
            sampler::noise_statistics(mdp, &pol, features, &w, config.noise_draws, &cfg).map_err(|e| e.at_grid_point(idx))
        })
        .collect::<Result<_>>()?;
    let max_of = |f: fn(&sampler::NoiseStatistics) -> f64| noise.iter().map(f).fold(0.0, f64::max);

    let set = ConstantSet {
        gamma,
        c_max: mdp.c_max(),
        mu,
        delta,
        delta_bar: k * delta / (1.0 - gamma),
        l_nabla: L_NABLA,
        l_g,
        l_omega,
        l_v,
        k,
        phi_norm,
        sigma_a2: max_of(|n| n.sigma_a2),
        sigma_c2: max_of(|n| n.sigma_c2),
        sigma_a4: max_of(|n| n.sigma_a4),
        c_alpha: C_SQRT_SCHEDULE,
        c_beta: C_SQRT_SCHEDULE,
        lambda_hess,
        grid_size: thetas.len(),
    };
    Ok((set, points))
}

/// Default `c′`: the smallest of `μ/(16 c_β L_ω)`, `μ/(32 c_β L_ω L_g)` and
/// `μ/(8 L_ω) · 1/(4 c_β² L_g²)`, clipped to `[1e−4, 1]`.
pub fn default_actor_scale(c: &ConstantSet) -> f64 {
    let a = c.mu / (16.0 * c.c_beta * c.l_omega);
    let b = c.mu / (32.0 * c.c_beta * c.l_omega * c.l_g);
    let cp = cprime_bound(c);
    let v = a.min(b).min(cp);
    if v.is_nan() {
        1.0
    } else {
        v.clamp(1e-4, 1.0)
    }
}

/// `μ/(8 L_ω) · 1/(4 c_β² L_g²)`.
pub fn cprime_bound(c: &ConstantSet) -> f64 {
    c.mu / (8.0 * c.l_omega) / (4.0 * c.c_beta * c.c_beta * c.l_g * c.l_g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl GainCoefficients {
    pub fn two_ce(&self) -> f64 {
        2.0 * self.c * self.e
    }

    pub fn gain_too_large(&self) -> bool {
        self.two_ce() >= 1.0
    }
}

/// `(2a + b² + 2cd)/(1 − 2ce)`.
pub fn small_gain_bound(g: &GainCoefficients) -> Result<f64> {
    let two_ce = g.two_ce();
    if !(two_ce < 1.0) {
        return Err(Error::GainTooLarge { two_ce });
    }
    Ok((2.0 * g.a + g.b * g.b + 2.0 * g.c * g.d) / (1.0 - two_ce))
}

/// Quantities at the window boundaries `T/2` and `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowBoundary {
    /// `||ω_{T/2} − ω_{θ_{T/2}}||²`.
    pub delta_sq_half: f64,
    /// `V(θ_{T/2}) − V(θ_T)`.
    pub value_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCoefficients {
    /// `δ̄` substituted wherever the coefficient list uses `δ`.
    pub primary: GainCoefficients,
    /// The coefficient list exactly as displayed, raw `δ` in `a` and `b`.
    pub alternative: GainCoefficients,
    pub bound_primary: Option<f64>,
    pub bound_alternative: Option<f64>,
    pub two_ce: f64,
}

fn coefficients(c: &ConstantSet, t: usize, alpha: f64, beta: f64, w: &WindowBoundary, delta_x: f64) -> GainCoefficients {
    let tf = t as f64;
    let ratio = c.c_beta * c.c_beta * beta * beta / alpha;
    let a = (1.0 / alpha) * (8.0 / (c.mu * tf)) * w.delta_sq_half
        + c.c_alpha * c.c_alpha * alpha * (8.0 / c.mu) * c.sigma_c2
        + 2.0 * c.l_omega.powi(2) * ratio * (8.0 / c.mu) * c.sigma_a2
        + 6.0 * c.l_omega.powi(2) * ratio * (8.0 / c.mu) * delta_x * delta_x;
    let b = (c.c_beta * c.c_beta * beta * beta * c.sigma_a4 * (c.lambda_hess / 2.0) + c.c_beta * beta * c.l_omega * delta_x)
        / (alpha * c.mu);
    let cc = (c.c_beta * beta / alpha) * (8.0 * c.l_omega / c.mu);
    let d = 8.0
        * (w.value_drop.max(0.0) / (beta * tf)
            + c.c_beta * c.delta_bar * c.delta_bar
            + c.c_beta * c.c_beta * beta * 0.75 * c.l_v * c.sigma_a2);
    let e = c.c_beta * c.l_g * c.l_g;
    GainCoefficients { a, b, c: cc, d, e }
}

/// Evaluates the coefficient list at horizon `T` and the resulting bound on
/// the tail average of `E||Δ_t||²`.
pub fn theorem_coefficients(
    consts: &ConstantSet,
    t: usize,
    alpha_t: f64,
    beta_t: f64,
    boundary: &WindowBoundary,
) -> Result<TheoremCoefficients> {
    if t < 4 || !t.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("horizon T = {t} must be even and >= 4")));
    }
    let primary = coefficients(consts, t, alpha_t, beta_t, boundary, consts.delta_bar);
    let alternative = coefficients(consts, t, alpha_t, beta_t, boundary, consts.delta);
    Ok(TheoremCoefficients {
        primary,
        alternative,
        bound_primary: small_gain_bound(&primary).ok(),
        bound_alternative: small_gain_bound(&alternative).ok(),
        two_ce: primary.two_ce(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConstraintReport {
    /// Left-hand side of the combined step-size condition (must be `≤ 1/2`).
    pub lhs: f64,
    pub step_constraint_ok: bool,
    /// `24 c_β β L_ω ≤ 1`.
    pub beta_l_omega_ok: bool,
    /// `α ≤ μ/(2 L_∇²)`.
    pub alpha_ok: bool,
    /// `β ≤ 1/(6 L_V)`.
    pub beta_l_v_ok: bool,
    /// `β/α ≤ μ/(8 L_ω) · 1/(4 c_β² L_g²)`.
    pub cprime_ok: bool,
    /// `6·16 c_β ≤ 2/(α μ)`.
    pub alpha_mu_ok: bool,
    pub all_ok: bool,
}

pub fn step_constraint_check(c: &ConstantSet, alpha: f64, beta: f64) -> StepConstraintReport {
    let r = c.c_beta * beta / alpha;
    let lhs = 6.0 * c.l_omega.powi(2) * (c.c_beta * c.c_beta * beta * beta / alpha) * (8.0 / c.mu) * c.l_g.powi(2)
        + r * (2.0 * c.l_omega / c.mu)
        + r * (4.0 / c.mu) * c.l_omega * c.l_g;
    let step_constraint_ok = c.mu > 0.0 && lhs <= 0.5;
    let beta_l_omega_ok = 24.0 * c.c_beta * beta * c.l_omega <= 1.0;
    let alpha_ok = alpha <= c.mu / (2.0 * c.l_nabla * c.l_nabla);
    let beta_l_v_ok = 6.0 * beta * c.l_v <= 1.0;
    let cprime_ok = beta / alpha <= cprime_bound(c);
    let alpha_mu_ok = 6.0 * 16.0 * c.c_beta * alpha * c.mu <= 2.0;
    StepConstraintReport {
        lhs,
        step_constraint_ok,
        beta_l_omega_ok,
        alpha_ok,
        beta_l_v_ok,
        cprime_ok,
        alpha_mu_ok,
        all_ok: step_constraint_ok && beta_l_omega_ok && alpha_ok && beta_l_v_ok && cprime_ok && alpha_mu_ok,
    }
}

/// Checks every condition for all `t ∈ [T/2, T]`. Each condition is
/// monotone in `t` for nonincreasing schedules with a constant ratio, so the
/// side conditions are evaluated at `T/2` and the combined condition at both ends.
pub fn step_constraint_window(c: &ConstantSet, config: &AcConfig, t: usize) -> StepConstraintReport {
    let half = (t / 2).max(1);
    let early = step_constraint_check(c, config.alpha(half), config.beta(half));
    let late = step_constraint_check(c, config.alpha(t), config.beta(t));
    StepConstraintReport {
        lhs: early.lhs.max(late.lhs),
        step_constraint_ok: early.step_constraint_ok && late.step_constraint_ok,
        beta_l_omega_ok: early.beta_l_omega_ok && late.beta_l_omega_ok,
        alpha_ok: early.alpha_ok && late.alpha_ok,
        beta_l_v_ok: early.beta_l_v_ok && late.beta_l_v_ok,
        cprime_ok: early.cprime_ok && late.cprime_ok,
        alpha_mu_ok: early.alpha_mu_ok && late.alpha_mu_ok,
        all_ok: early.all_ok && late.all_ok,
    }
}

/// Mean of the logged entries with index in `[t/2, t−1]`.
pub fn tail_average(series: &[(usize, f64)], t: usize) -> Result<f64> {
    let lo = t / 2;
    let (sum, n) = series.iter().filter(|(k, _)| *k >= lo && *k < t).fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    if n < 2 {
        return Err(Error::WindowIncomplete { t, points: n });
    }
    Ok(sum / n as f64)
}

/// Powers of two from `t_min` up to `t_max`, plus `t_max` itself when even.
pub fn checkpoints(t_min: usize, t_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = t_min.max(2).next_power_of_two();
    while t <= t_max {
        out.push(t);
        t *= 2;
    }
    if t_max.is_multiple_of(2) && out.last() != Some(&t_max) && t_max >= t_min {
        out.push(t_max);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub amplitude: f64,
    /// Half-width of the 95% interval on the exponent.
    pub exponent_ci95: f64,
    /// Subtracted asymptote (0 without floor adjustment).
    pub floor: f64,
    pub n_points: usize,
}

fn log_log_fit(points: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    let se = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    (slope, icpt, se, sse)
}

/// Least-squares fit of `log(y − f)` against `log t`. With `floor_adjust`
/// the asymptote `f` is chosen in `[0, min y)` to minimize the residual.
pub fn rate_fit_points(points: &[(usize, f64)], floor_adjust: bool) -> Result<RateFit> {
    if points.len() < 10 {
        return Err(Error::InsufficientData(format!("{} checkpoints, need at least 10", points.len())));
    }
    if points.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Error::InsufficientData("non-positive or non-finite tail average".into()));
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|&(t, y)| (t as f64, y)).collect();
    let shifted = |f: f64| -> Vec<(f64, f64)> { pts.iter().map(|&(t, y)| (t, y - f)).collect() };
    let mut floor = 0.0;
    if floor_adjust {
        let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = ymin * (1.0 - 1e-6);
        let sse = |f: f64| log_log_fit(&shifted(f)).3;
        let grid = 400;
        let (mut best_f, mut best) = (0.0, sse(0.0));
        for i in 1..grid {
            let f = hi * i as f64 / grid as f64;
            let v = sse(f);
            if v < best {
                best = v;
                best_f = f;
            }
        }
        // golden-section refinement around the best grid cell
        let step = hi / grid as f64;
        let (mut lo, mut up) = ((best_f - step).max(0.0), (best_f + step).min(hi));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let x1 = up - g * (up - lo);
            let x2 = lo + g * (up - lo);
            if sse(x1) < sse(x2) {
                up = x2;
            } else {
                lo = x1;
            }
        }
        floor = 0.5 * (lo + up);
        if sse(floor) > best {
            floor = best_f;
        }
    }
    let (slope, icpt, se, _) = log_log_fit(&shifted(floor));
    Ok(RateFit { exponent: slope, amplitude: icpt.exp(), exponent_ci95: 1.96 * se, floor, n_points: points.len() })
}

/// Tail averages at [`checkpoints`] for one log.
pub fn tail_curve(log: &IterateLog, which: Series, t_min: usize) -> Result<Vec<(usize, f64)>> {
    let series = log.series(which);
    checkpoints(t_min, log.meta.total_steps).into_iter().map(|t| tail_average(&series, t).map(|v| (t, v))).collect()
}

/// Componentwise median of several tail curves sharing checkpoints.
pub fn median_curve(curves: &[Vec<(usize, f64)>]) -> Result<Vec<(usize, f64)>> {
    let first = curves.first().ok_or_else(|| Error::InsufficientData("no curves".into()))?;
    first
        .iter()
        .enumerate()
        .map(|(i, &(t, _))| {
            let mut vals: Vec<f64> = Vec::with_capacity(curves.len());
            for c in curves {
                match c.get(i) {
                    Some(&(tc, v)) if tc == t => vals.push(v),
                    _ => return Err(Error::InsufficientData("curves have different checkpoints".into())),
                }
            }
            Ok((t, median(&mut vals)))
        })
        .collect()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits the tail-average curve of `which` over checkpoints `≥ t_min`.
pub fn rate_fit(log: &IterateLog, which: Series, t_min: usize, floor_adjust: bool) -> Result<RateFit> {
    rate_fit_points(&tail_curve(log, which, t_min)?, floor_adjust)
}

/// Row at the largest logged index `≤ t`.
fn row_at_or_before(log: &IterateLog, t: usize) -> Option<&crate::actor_critic::IterateRow> {
    log.rows.iter().take_while(|r| r.t <= t).last()
}

/// Boundary terms of the window `[T/2, T]` read from the log (nearest
/// logged index at or before each end).
pub fn window_boundary(log: &IterateLog, t: usize) -> Result<WindowBoundary> {
    let half = row_at_or_before(log, t / 2).ok_or(Error::WindowIncomplete { t, points: 0 })?;
    let end = row_at_or_before(log, t).ok_or(Error::WindowIncomplete { t, points: 0 })?;
    Ok(WindowBoundary { delta_sq_half: half.delta_sq, value_drop: half.value - end.value })
}

/// Small-gain bound on the tail-averaged `E||Δ||²` at horizon `t`.
pub fn predicted_bound(consts: &ConstantSet, config: &AcConfig, log: &IterateLog, t: usize) -> Result<TheoremCoefficients> {
    let w = window_boundary(log, t)?;
    theorem_coefficients(consts, t, config.alpha(t), config.beta(t), &w)
}

/// Log whose series follow `floor + amplitude·t^exponent` exactly.
pub fn synthetic_log(
    amplitude: f64,
    exponent: f64,
    floor: f64,
    total_steps: usize,
    stride: usize,
    config_hash: &str,
) -> IterateLog {
    use crate::actor_critic::{logged_steps, IterateRow, RunMeta};
    let rows = logged_steps(total_steps, stride)
        .map(|t| {
            let v = floor + amplitude * (t as f64).powf(exponent);
            IterateRow {
                t,
                grad_sq: v,
                delta_sq: v,
                value: 0.0,
                omega_norm: 0.0,
                theta_norm: 0.0,
                omega: vec![0.0],
                theta: vec![0.0],
            }
        })
        .collect();
    IterateLog {
        meta: RunMeta {
            seed: 0,
            config_hash: config_hash.to_string(),
            total_steps,
            diag_stride: stride,
            actor_scale: 1.0,
            omega_radius: 1.0,
            oracle_samples: 0,
            mdp_transitions: 0,
            empirical_l_omega: 0.0,
        },
        rows,
    }
}

/// Checkpoints at which monotone decrease of the tail averages is reported.
pub const REPORT_CHECKPOINTS: [usize; 4] = [1 << 10, 1 << 12, 1 << 14, 1 << 17];

/// First checkpoint of a rate fit: `2⁷`, raised so the first tail window
/// holds at least four logged points.
pub fn fit_start(diag_stride: usize) -> usize {
    (4 * diag_stride).max(128).next_power_of_two()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesAnalysis {
    /// Median over logs of the tail average at each checkpoint.
    pub curve: Vec<(usize, f64)>,
    pub fit: Option<RateFit>,
    pub fit_floor: Option<RateFit>,
    /// Why the fit is missing, if it is.
    pub fit_error: Option<String>,
    /// Median tail averages at the report checkpoints that are `≤ T`.
    pub checkpoint_tails: Vec<(usize, f64)>,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBound {
    pub seed: u64,
    pub coefficients: TheoremCoefficients,
    /// Tail average of `||Δ||²` at `T`.
    pub empirical_delta_sq_tail: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config_hash: String,
    pub n_logs: usize,
    pub total_steps: usize,
    pub fit_start: usize,
    pub constants: ConstantSet,
    pub grad_sq: SeriesAnalysis,
    pub delta_sq: SeriesAnalysis,
    pub step_constraints: StepConstraintReport,
    pub bounds: Vec<SeedBound>,
    /// Every seed's empirical tail is below its finite bound.
    pub bound_holds: bool,
    /// Median over seeds of the bound at each checkpoint.
    pub bound_curve: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visited: Option<VisitedCheck>,
}

/// Margin and approximation error re-evaluated at the θ values the runs
/// actually visited, to compare with the grid estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitedCheck {
    pub n_thetas: usize,
    /// `2·min m_θ` over the visited θ.
    pub mu: f64,
    pub delta: f64,
    pub max_theta_abs: f64,
}

/// Evaluates the oracle at each log's θ at the checkpoints from `t_min`
/// and at the last logged step.
pub fn visited_check(
    mdp: &FiniteMdp,
    class: &SoftmaxPolicy,
    features: &FeatureMatrix,
    logs: &[IterateLog],
    t_min: usize,
) -> Result<VisitedCheck> {
    let mut thetas = Vec::new();
    for l in logs {
        let last = l.rows.last().map(|r| r.t).unwrap_or(0);
        let mut ts = checkpoints(t_min, l.meta.total_steps);
        ts.push(last);
        ts.dedup();
        thetas.extend(ts.into_iter().filter_map(|t| l.row_at(t)).map(|r| DVector::from_vec(r.theta.clone())));
    }
    if thetas.is_empty() {
        return Err(Error::InsufficientData("no logged θ to evaluate".into()));
    }
    let pts = oracle::oracle_grid(mdp, class, features, &thetas)?;
    Ok(VisitedCheck {
        n_thetas: thetas.len(),
        mu: oracle::mu_estimate(&pts),
        delta: oracle::delta_estimate(&pts),
        max_theta_abs: thetas.iter().map(|t| t.amax()).fold(0.0, f64::max),
    })
}

fn series_analysis(logs: &[IterateLog], which: Series, t_min: usize) -> SeriesAnalysis {
    let t_max = logs[0].meta.total_steps;
    let curve = logs
        .iter()
        .map(|l| {
            let series = l.series(which);
            checkpoints(t_min, t_max)
                .into_iter()
                .filter_map(|t| tail_average(&series, t).ok().map(|v| (t, v)))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    let curve = median_curve(&curve).unwrap_or_default();
    let (fit, fit_error) = match rate_fit_points(&curve, false) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let fit_floor = rate_fit_points(&curve, true).ok();
    let checkpoint_tails: Vec<(usize, f64)> = REPORT_CHECKPOINTS
        .iter()
        .filter_map(|&t| {
            let mut vals: Vec<f64> = logs.iter().filter_map(|l| tail_average(&l.series(which), t).ok()).collect();
            (vals.len() == logs.len() && t <= t_max).then(|| (t, median(&mut vals)))
        })
        .collect();
    let monotone = checkpoint_tails.len() >= 2 && checkpoint_tails.windows(2).all(|w| w[1].1 < w[0].1);
    SeriesAnalysis { curve, fit, fit_floor, fit_error, checkpoint_tails, monotone }
}

/// Rate fits, step-size conditions and small-gain bounds for a set of logs
/// produced by one configuration.
pub fn analyze_logs(consts: &ConstantSet, config: &AcConfig, logs: &[IterateLog]) -> Result<AnalysisReport> {
    let first = logs.first().ok_or_else(|| Error::InsufficientData("no logs".into()))?;
    let hash = &first.meta.config_hash;
    let t = first.meta.total_steps;
    if let Some(l) = logs.iter().find(|l| l.meta.total_steps != t || l.meta.diag_stride != first.meta.diag_stride) {
        return Err(Error::InvalidConfig(format!("log for seed {} has a different horizon or stride", l.meta.seed)));
    }
    let t_min = fit_start(first.meta.diag_stride);
    let bounds: Vec<SeedBound> = logs
        .iter()
        .filter_map(|l| {
            let coefficients = predicted_bound(consts, config, l, t).ok()?;
            let emp = tail_average(&l.series(Series::DeltaSq), t).ok()?;
            let holds = coefficients.bound_primary.is_some_and(|b| emp <= b);
            Some(SeedBound { seed: l.meta.seed, coefficients, empirical_delta_sq_tail: emp, holds })
        })
        .collect();
    let bound_curve = checkpoints(t_min, t)
        .into_iter()
        .filter_map(|tc| {
            let mut vals: Vec<f64> =
                logs.iter().filter_map(|l| predicted_bound(consts, config, l, tc).ok().and_then(|c| c.bound_primary)).collect();
            (vals.len() == logs.len()).then(|| (tc, median(&mut vals)))
        })
        .collect();
    Ok(AnalysisReport {
        config_hash: hash.clone(),
        n_logs: logs.len(),
        total_steps: t,
        fit_start: t_min,
        constants: consts.clone(),
        grad_sq: series_analysis(logs, Series::GradSq, t_min),
        delta_sq: series_analysis(logs, Series::DeltaSq, t_min),
        step_constraints: step_constraint_window(consts, config, t),
        bound_holds: !bounds.is_empty() && bounds.len() == logs.len() && bounds.iter().all(|b| b.holds),
        bounds,
        bound_curve,
        visited: None,
    })
}
