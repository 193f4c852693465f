//! Critic-side oracle: linear features, the expected TD pair `(A_θ, b_θ)`,
//! its fixed point, the exploration margin and the gradient-splitting
//! identity.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{self, FiniteMdp, PolicyProbs, SaDistribution};

pub const ROW_NORM_TOL: f64 = 1e-12;
pub const MIN_SINGULAR_VALUE: f64 = 1e-8;
pub const MAX_CONDITION: f64 = 1e12;
/// `L_∇`: Lipschitz constant of the expected TD direction in `ω`.
pub const L_NABLA: f64 = 2.0;

/// `Φ`: one row `φ(s,a)` per SA pair, `d_ω` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    phi: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::InvalidFeatures("feature matrix is empty".into()));
        }
        if phi.ncols() > phi.nrows() {
            return Err(Error::InvalidFeatures(format!(
                "{} columns exceed {} rows, columns cannot be independent",
                phi.ncols(),
                phi.nrows()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatures("non-finite entry".into()));
        }
        for (i, row) in phi.row_iter().enumerate() {
            let n = row.norm();
            if n > 1.0 + ROW_NORM_TOL {
                return Err(Error::InvalidFeatures(format!("row {i} has norm {n} > 1")));
            }
        }
        let (_, smin) = linalg::singular_value_range(&phi);
        if smin <= MIN_SINGULAR_VALUE {
            return Err(Error::InvalidFeatures(format!("columns are linearly dependent (smallest singular value {smin:e})")));
        }
        Ok(Self { phi })
    }

    /// Identity features over `n_sa` pairs.
    pub fn tabular(n_sa: usize) -> Self {
        Self { phi: DMatrix::identity(n_sa, n_sa) }
    }

    /// The first `k` columns of the tabular features.
    pub fn tabular_prefix(n_sa: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n_sa {
            return Err(Error::InvalidFeatures(format!("prefix width {k} not in 1..={n_sa}")));
        }
        Self::new(DMatrix::identity(n_sa, n_sa).columns(0, k).into_owned())
    }

    /// Gaussian features of rank `k`, rescaled so the largest row norm is 1.
    pub fn random(n_sa: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi = DMatrix::from_fn(n_sa, k, |_, _| StandardNormal.sample(&mut rng));
        let max_norm = phi.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        if max_norm > 0.0 {
            phi /= max_norm;
        }
        Self::new(phi)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// `φ(s,a)ᵀω` for SA index `i`.
    pub fn dot(&self, i: usize, omega: &DVector<f64>) -> f64 {
        self.phi.row(i).iter().zip(omega.iter()).map(|(x, y)| x * y).sum()
    }

    /// `||Φ||` (spectral).
    pub fn spectral_norm(&self) -> f64 {
        linalg::spectral_norm(&self.phi)
    }

    /// Append a column, keeping the row-norm constraint by rescaling.
    pub fn with_column(&self, col: &DVector<f64>) -> Result<Self> {
        let mut phi = self.phi.clone().insert_column(self.dim(), 0.0);
        phi.set_column(self.dim(), col);
        let max_norm = phi.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        if max_norm > 1.0 {
            phi /= max_norm;
        }
        Self::new(phi)
    }

    fn check_against(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.n_rows() != mdp.n_sa() {
            return Err(Error::DimensionMismatch {
                context: "feature rows vs SA pairs",
                expected: mdp.n_sa(),
                actual: self.n_rows(),
            });
        }
        Ok(())
    }

    pub fn to_file(&self) -> FeatureFile {
        FeatureFile { d: self.dim(), entries: self.phi.transpose().as_slice().to_vec() }
    }
}

/// On-disk features: `d` columns, row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub d: usize,
    pub entries: Vec<f64>,
}

impl TryFrom<FeatureFile> for FeatureMatrix {
    type Error = Error;

    fn try_from(f: FeatureFile) -> Result<Self> {
        if f.d == 0 || !f.entries.len().is_multiple_of(f.d) {
            return Err(Error::InvalidFeatures(format!("{} entries do not split into rows of width {}", f.entries.len(), f.d)));
        }
        let rows = f.entries.len() / f.d;
        FeatureMatrix::new(DMatrix::from_row_slice(rows, f.d, &f.entries))
    }
}

/// Expected TD pair: the mean critic direction is `-Aω + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdPair {
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
}

impl TdPair {
    /// `-Aω + b`.
    pub fn direction(&self, omega: &DVector<f64>) -> DVector<f64> {
        &self.b_vector - &self.a_matrix * omega
    }
}

/// `A_θ = Φᵀ D (γP − I) Φ`, `b_θ = −Φᵀ D c` with `D = diag(ρ_θ)`.
pub fn expected_td_pair(mdp: &FiniteMdp, policy: &PolicyProbs, features: &FeatureMatrix) -> Result<TdPair> {
    features.check_against(mdp)?;
    let p = mdp::sa_transition_matrix(mdp, policy)?;
    let rho = mdp::stationary_distribution(&p)?;
    Ok(td_pair_from_parts(mdp, &p, &rho, features))
}

pub(crate) fn td_pair_from_parts(mdp: &FiniteMdp, p: &DMatrix<f64>, rho: &SaDistribution, features: &FeatureMatrix) -> TdPair {
    let phi = features.matrix();
    let mut d_phi = phi.clone();
    for (i, mut row) in d_phi.row_iter_mut().enumerate() {
        row *= rho.probs()[i];
    }
    // Φᵀ D (γ P Φ − Φ)
    let next = p * phi * mdp.gamma() - phi;
    let a_matrix = d_phi.transpose() * next;
    let b_vector = -(d_phi.transpose() * mdp.cost());
    TdPair { a_matrix, b_vector }
}

/// `ω_θ = A_θ⁻¹ b_θ`.
pub fn td_fixed_point(td: &TdPair) -> Result<DVector<f64>> {
    let (smax, smin) = linalg::singular_value_range(&td.a_matrix);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularA { condition });
    }
    linalg::solve(td.a_matrix.clone(), &td.b_vector, "TD fixed point")
}

/// `m_θ = −λ_max((A_θ + A_θᵀ)/2)`. The margin `μ` is twice its grid minimum.
pub fn exploration_margin(td: &TdPair) -> f64 {
    -linalg::sym_lambda_max(&td.a_matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseNormCheck {
    pub inverse_norm: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Compares `||A_θ⁻¹||` with `1/m_θ`.
pub fn inverse_norm_check(td: &TdPair) -> Result<InverseNormCheck> {
    let margin = exploration_margin(td);
    if margin <= 0.0 {
        return Err(Error::NonPositiveMargin { margin });
    }
    let (smax, smin) = linalg::singular_value_range(&td.a_matrix);
    if smin <= 0.0 || smax / smin > MAX_CONDITION {
        return Err(Error::SingularA { condition: smax / smin });
    }
    let inverse_norm = 1.0 / smin;
    let bound = 1.0 / margin;
    Ok(InverseNormCheck { inverse_norm, bound, holds: inverse_norm <= bound * (1.0 + 1e-12) })
}

/// `δ_θ = Σ ν_θ(s,a) |Q*_θ(s,a) − φ(s,a)ᵀω_θ|`.
pub fn approximation_error(mdp: &FiniteMdp, policy: &PolicyProbs, features: &FeatureMatrix) -> Result<f64> {
    let td = expected_td_pair(mdp, policy, features)?;
    let omega = td_fixed_point(&td)?;
    let q = mdp::q_values(mdp, policy)?;
    let nu = mdp::discounted_visitation(mdp, policy)?;
    Ok(weighted_abs_error(&nu, &q, &(features.matrix() * omega)))
}

pub(crate) fn weighted_abs_error(nu: &SaDistribution, q: &DVector<f64>, approx: &DVector<f64>) -> f64 {
    nu.probs().iter().zip(q.iter().zip(approx.iter())).map(|(w, (x, y))| w * (x - y).abs()).sum()
}

/// Both sides of the gradient-splitting identity at `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplittingCheck {
    /// `(ω − ω_θ)ᵀ A_θ (ω − ω_θ)`.
    pub lhs: f64,
    /// `−(1−γ)||Φx||²_D − γ||Φx||²_Dir`.
    pub rhs: f64,
    pub d_norm_sq: f64,
    pub dirichlet_sq: f64,
    pub gap: f64,
}

pub fn splitting_check(
    mdp: &FiniteMdp,
    policy: &PolicyProbs,
    features: &FeatureMatrix,
    omega: &DVector<f64>,
) -> Result<SplittingCheck> {
    features.check_against(mdp)?;
    let p = mdp::sa_transition_matrix(mdp, policy)?;
    let rho = mdp::stationary_distribution(&p)?;
    let td = td_pair_from_parts(mdp, &p, &rho, features);
    let omega_theta = td_fixed_point(&td)?;
    let x = omega - omega_theta;
    let lhs = x.dot(&(&td.a_matrix * &x));

    let f = features.matrix() * &x;
    let r = rho.probs();
    let d_norm_sq: f64 = r.iter().zip(f.iter()).map(|(w, v)| w * v * v).sum();
    // ½ Σ ρ(i) P(i,j) (f(j) − f(i))²
    let mut dirichlet_sq = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let diff = f[j] - f[i];
            dirichlet_sq += r[i] * p[(i, j)] * diff * diff;
        }
    }
    dirichlet_sq *= 0.5;
    let g = mdp.gamma();
    let rhs = -(1.0 - g) * d_norm_sq - g * dirichlet_sq;
    Ok(SplittingCheck { lhs, rhs, d_norm_sq, dirichlet_sq, gap: (lhs - rhs).abs() })
}

/// Checks `||Δ − α(−Aω + b)|| ≤ (1 − αμ/4)||Δ||` with `Δ = ω − ω_θ` and
/// `μ = 2 m_θ`, for `α ≤ μ/(2 L_∇²)`.
pub fn contraction_check(td: &TdPair, omega: &DVector<f64>, omega_theta: &DVector<f64>, alpha: f64) -> Result<bool> {
    let mu = 2.0 * exploration_margin(td);
    let limit = mu / (2.0 * L_NABLA * L_NABLA);
    if !(alpha > 0.0 && alpha <= limit) {
        return Err(Error::StepTooLarge { alpha, limit });
    }
    let delta = omega - omega_theta;
    let stepped = &delta - td.direction(omega) * alpha;
    let lhs = stepped.norm();
    let rhs = (1.0 - alpha * mu / 4.0) * delta.norm();
    Ok(lhs <= rhs * (1.0 + 1e-12))
}
