//! Joint Gaussian numerics over the interleaved `[x1, y1, ..., xN, yN]`
//! position vector of one time step.
//!
//! Log-determinants and quadratic forms always go through a Cholesky factor
//! and triangular solves; no covariance matrix is ever inverted explicitly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Absolute asymmetry tolerated (after scaling by the largest entry) before
/// a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A Cholesky pivot at or below this fraction of the largest diagonal entry
/// is treated as zero. Exactly rank-deficient matrices can otherwise slip
/// through with rounding-noise pivots around 1e-16.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Mean and covariance of all agents' positions at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl JointGaussian {
    /// Builds a joint Gaussian. The covariance is symmetrized as
    /// `(Σ + Σᵀ) / 2`; asymmetry beyond [`SYMMETRY_TOL`] is an error.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Shape(format!("mean has length {dim}, expected 2N")));
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::Shape(format!(
                "covariance is {}x{}, expected {dim}x{dim}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint Gaussian parameters".into()));
        }
        let cov = symmetrize(&cov)?;
        Ok(JointGaussian { mean, cov })
    }

    pub(crate) fn from_parts_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        JointGaussian { mean, cov }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_agents(&self) -> usize {
        self.mean.len() / 2
    }

    /// Returns a copy with `delta` added to the covariance diagonal.
    pub fn regularized(&self, delta: f64) -> Result<Self> {
        Ok(JointGaussian {
            mean: self.mean.clone(),
            cov: tikhonov_regularize(&self.cov, delta)?,
        })
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.cov)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Invalid(format!(
                    "covariance not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
            let avg = 0.5 * (a + b);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    Ok(out)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Returns `cov + delta·I`. Off-diagonal entries are untouched.
pub fn tikhonov_regularize(cov: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::Shape(format!(
            "cannot regularize a {}x{} matrix",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Invalid(format!("regularization {delta} must be finite and >= 0")));
    }
    let mut out = cov.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += delta;
    }
    Ok(out)
}

/// Lower-triangular `L` with `Σ = L·Lᵀ`, and `ln|Σ|`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    log_det: f64,
}

impl CholeskyFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L·x = b` by forward substitution.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solves `Lᵀ·x = b` by back substitution.
    pub fn solve_upper(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solves `Σ·x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `rᵀ Σ⁻¹ r`, computed as `‖L⁻¹ r‖²`.
    pub fn mahalanobis_sq(&self, r: &DVector<f64>) -> f64 {
        self.solve_lower(r).norm_squared()
    }

    /// `Σ⁻¹`, column by column through the factor. Only the gradient code
    /// needs the full inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }
}

/// Cholesky factorization of a symmetric matrix (only the lower triangle is
/// read). Fails with the index of the first pivot that is not safely
/// positive, see [`PIVOT_RTOL`].
pub fn cholesky_factor(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return Err(Error::Shape(format!("cannot factor a {}x{} matrix", n, cov.ncols())));
    }
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(cov[(i, i)].abs()));
    let floor = PIVOT_RTOL * max_diag;
    let mut l = DMatrix::zeros(n, n);
    let mut log_det = 0.0;
    for j in 0..n {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in (j + 1)..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(CholeskyFactor { l, log_det })
}

/// Negative log-likelihood of one observation under a factored Gaussian:
/// `0.5·(ln|Σ| + rᵀΣ⁻¹r + d·ln 2π)` with `r = observation − mean`.
pub fn nll_factored(factor: &CholeskyFactor, mean: &DVector<f64>, observation: &DVector<f64>) -> f64 {
    let r = observation - mean;
    0.5 * (factor.log_det() + factor.mahalanobis_sq(&r) + mean.len() as f64 * (2.0 * PI).ln())
}

/// Scene-level negative log-likelihood of the joint positions at one step.
/// The covariance must already be positive definite; regularize first.
pub fn scene_nll(dist: &JointGaussian, observation: &DVector<f64>) -> Result<f64> {
    if observation.len() != dist.dim() {
        return Err(Error::Shape(format!(
            "observation has length {}, distribution has dimension {}",
            observation.len(),
            dist.dim()
        )));
    }
    let factor = cholesky_factor(dist.cov())?;
    Ok(nll_factored(&factor, dist.mean(), observation))
}

/// Sum of [`scene_nll`] over the steps of a trajectory, in step order.
pub fn trajectory_nll(dists: &[JointGaussian], observations: &[DVector<f64>]) -> Result<f64> {
    if dists.len() != observations.len() {
        return Err(Error::Shape(format!(
            "{} distributions for {} observed steps",
            dists.len(),
            observations.len()
        )));
    }
    dists
        .iter()
        .zip(observations)
        .map(|(d, o)| scene_nll(d, o))
        .sum()
}

/// Draws `count` samples `mean + L·z`, `z ~ N(0, I)`, one per row.
///
/// The stream is ChaCha8 seeded with `seed` through `seed_from_u64`, and the
/// normal variates come from `rand_distr::StandardNormal`, so identical seeds
/// give identical samples.
pub fn sample_joint(dist: &JointGaussian, seed: u64, count: usize) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::Invalid("sample count must be positive".into()));
    }
    let factor = cholesky_factor(dist.cov())?;
    let dim = dist.dim();
    let l = factor.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, dim);
    let mut z = vec![0.0; dim];
    for row in 0..count {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..dim {
            let mut s = dist.mean()[i];
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                s += l[(i, k)] * zk;
            }
            out[(row, i)] = s;
        }
    }
    Ok(out)
}

/// Sample mean and (unbiased) sample covariance of the rows of `samples`.
pub fn sample_moments(samples: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (k, d) = samples.shape();
    let mean = DVector::from_fn(d, |j, _| samples.column(j).sum() / k as f64);
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..k {
        for a in 0..d {
            let da = samples[(r, a)] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (samples[(r, b)] - mean[b]);
            }
        }
    }
    let denom = (k.max(2) - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

/// Mean and 2×2 covariance of one agent's position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentGaussian {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Extracts agent `agent`'s marginal: its slice of the mean and its 2×2
/// diagonal block of the covariance.
pub fn marginalize_agent(dist: &JointGaussian, agent: usize) -> Result<AgentGaussian> {
    let n = dist.n_agents();
    if agent >= n {
        return Err(Error::AgentIndex { index: agent, count: n });
    }
    let o = 2 * agent;
    let c = dist.cov();
    Ok(AgentGaussian {
        mean: Vector2::new(dist.mean()[o], dist.mean()[o + 1]),
        cov: Matrix2::new(c[(o, o)], c[(o, o + 1)], c[(o + 1, o)], c[(o + 1, o + 1)]),
    })
}
