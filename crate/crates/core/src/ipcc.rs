//! Incremental Pearson correlation (IPCC) modeling.
//!
//! Each agent's motion from its current position to step `t` is treated as a
//! one-dimensional increment along its heading. The increments of all agents
//! are jointly Gaussian with correlation matrix `P_Δ`; a single correlation
//! per agent pair replaces the four position correlations `ρxx, ρxy, ρyx,
//! ρyy` of a full joint over x-y positions.
//!
//! Two routes lead from increments to a joint over positions:
//!
//! * [`project_increments`] rotates the replicated increment distribution
//!   into the plane with `C = diag(cos θ1, sin θ1, ..., cos θN, sin θN)`,
//!   giving `M* = C·M_Δr + M0` and `Σ* = Cᵀ·Σ_Δr·C`;
//! * [`assemble_joint`] starts from per-agent marginals and fills each
//!   off-diagonal block from [`reconstruct_cross_correlations`].
//!
//! When the marginals are themselves projections of the increments and the
//! headings agree, the two routes give the same distribution
//! ([`equivalence_check`]).
//!
//! All 2N-vectors are interleaved `[x1, y1, x2, y2, ...]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::gaussian::{min_eigenvalue, JointGaussian};
use crate::scene::Point;

/// Entries of `cos θ` / `sin θ` below this magnitude are snapped to zero, so
/// axis-aligned headings such as `π/2` give exactly zero components.
const TRIG_SNAP: f64 = 1e-15;

/// `(cos θ, sin θ)` with rounding residue at the axes removed.
pub fn heading_components(theta: f64) -> (f64, f64) {
    let snap = |v: f64| if v.abs() < TRIG_SNAP { 0.0 } else { v };
    (snap(theta.cos()), snap(theta.sin()))
}

/// Sign function with `sgn(0) = 0`.
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Number of cross-agent scalars stored by the IPCC parameterization.
pub fn ipcc_parameter_count(n_agents: usize) -> usize {
    n_agents * n_agents.saturating_sub(1) / 2
}

/// Number of cross-agent scalars in the position-correlation
/// parameterization (four per pair).
pub fn position_pcc_parameter_count(n_agents: usize) -> usize {
    4 * ipcc_parameter_count(n_agents)
}

/// Symmetric `N×N` correlation matrix of the agents' 1-D increments.
#[derive(Debug, Clone, PartialEq)]
pub struct IpccMatrix(DMatrix<f64>);

impl IpccMatrix {
    /// Validates and stores a correlation matrix: square, symmetric within
    /// 1e-12, unit diagonal within 1e-12, entries in `[-1, 1]`. The stored
    /// matrix has an exact unit diagonal and exactly mirrored entries.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::InvalidIpcc(format!("shape {}x{}", n, m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IPCC matrix".into()));
        }
        let mut out = m.clone();
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidIpcc(format!("diagonal entry {i} is {}", m[(i, i)])));
            }
            out[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > 1e-12 {
                    return Err(Error::InvalidIpcc(format!("not symmetric at ({i}, {j})")));
                }
                let v = 0.5 * (a + b);
                if v.abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidIpcc(format!("entry ({i}, {j}) = {v} outside [-1, 1]")));
                }
                let v = v.clamp(-1.0, 1.0);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(IpccMatrix(out))
    }

    pub fn identity(n: usize) -> Self {
        IpccMatrix(DMatrix::identity(n, n))
    }

    /// Identity with the given `(i, j, ρ)` pairs set symmetrically.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut m = DMatrix::identity(n, n);
        for &(i, j, rho) in pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidIpcc(format!("bad pair ({i}, {j}) for {n} agents")));
            }
            m[(i, j)] = rho;
            m[(j, i)] = rho;
        }
        Self::new(m)
    }

    /// Rebuilds a matrix from its strict upper triangle in row-major order.
    pub fn from_upper_triangle(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != ipcc_parameter_count(n) {
            return Err(Error::Shape(format!(
                "{} values for the upper triangle of a {n}x{n} matrix",
                values.len()
            )));
        }
        let mut m = DMatrix::identity(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                m[(i, j)] = values[k];
                m[(j, i)] = values[k];
                k += 1;
            }
        }
        Self::new(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidIpcc("rows are not square".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    /// Strict upper triangle, row-major. These `N(N-1)/2` values are the
    /// whole cross-agent parameterization.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(ipcc_parameter_count(n));
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    /// Positive semidefinite within `tol` on the smallest eigenvalue.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }
}

/// Mean and standard deviation of every agent's 1-D increment at one step.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IncrementParams {
    pub mu_delta: Vec<f64>,
    pub sigma_delta: Vec<f64>,
}

impl IncrementParams {
    pub fn new(mu_delta: Vec<f64>, sigma_delta: Vec<f64>) -> Result<Self> {
        let p = IncrementParams {
            mu_delta,
            sigma_delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu_delta.len() != self.sigma_delta.len() || self.mu_delta.is_empty() {
            return Err(Error::Shape(format!(
                "{} increment means, {} standard deviations",
                self.mu_delta.len(),
                self.sigma_delta.len()
            )));
        }
        for (i, (&mu, &sd)) in self.mu_delta.iter().zip(&self.sigma_delta).enumerate() {
            if !mu.is_finite() || !sd.is_finite() {
                return Err(Error::NonFinite(format!("increment parameters of agent {i}")));
            }
            if mu < 0.0 {
                return Err(Error::Invalid(format!("increment mean of agent {i} is negative")));
            }
            if sd <= 0.0 {
                return Err(Error::Invalid(format!("increment sigma of agent {i} must be positive")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.mu_delta.len()
    }
}

/// Approximate headings, one per agent, in `(-π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct YawVector(Vec<f64>);

impl YawVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        for (i, &t) in theta.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("yaw of agent {i}")));
            }
            if !(t > -PI && t <= PI) {
                return Err(Error::Invalid(format!("yaw of agent {i} is {t}, outside (-pi, pi]")));
            }
        }
        Ok(YawVector(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }
}

/// One agent's marginal position Gaussian at one step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MarginalBlock {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho_xy: f64,
}

impl MarginalBlock {
    /// `[[σx², ρσxσy], [ρσxσy, σy²]]`.
    pub fn cov(&self) -> [[f64; 2]; 2] {
        let c = self.rho_xy * self.sigma_x * self.sigma_y;
        [[self.sigma_x * self.sigma_x, c], [c, self.sigma_y * self.sigma_y]]
    }

    pub fn cov_matrix(&self) -> Matrix2<f64> {
        let c = self.cov();
        Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1])
    }

    fn sigma(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.sigma_x
        } else {
            self.sigma_y
        }
    }
}

/// Per-agent marginals at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalParams {
    blocks: Vec<MarginalBlock>,
}

impl MarginalParams {
    /// Strict constructor: every block must be positive definite
    /// (`σx, σy > 0`, `|ρxy| < 1`).
    pub fn new(blocks: Vec<MarginalBlock>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Shape("no marginal blocks".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if ![b.mu_x, b.mu_y, b.sigma_x, b.sigma_y, b.rho_xy]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::NonFinite(format!("marginal of agent {i}")));
            }
            if !(b.sigma_x > 0.0 && b.sigma_y > 0.0 && b.rho_xy.abs() < 1.0) {
                return Err(Error::Invalid(format!(
                    "marginal block of agent {i} is not positive definite"
                )));
            }
        }
        Ok(MarginalParams { blocks })
    }

    /// Marginals implied by projecting increments onto headings `theta`:
    /// `μ = x0 + (cos θ, sin θ)·μδ`, `σx = |cos θ|·σδ`, `σy = |sin θ|·σδ`,
    /// `ρxy = sgn(cos θ · sin θ)`.
    ///
    /// These blocks have rank one, so they bypass the strict check of
    /// [`MarginalParams::new`].
    pub fn projected(inc: &IncrementParams, theta: &YawVector, current: &[Point]) -> Result<Self> {
        inc.validate()?;
        let n = inc.n();
        if theta.n() != n || current.len() != n {
            return Err(Error::Shape(format!(
                "{n} increments, {} yaws, {} current positions",
                theta.n(),
                current.len()
            )));
        }
        let blocks = (0..n)
            .map(|i| {
                let (c, s) = heading_components(theta.0[i]);
                let sd = inc.sigma_delta[i];
                MarginalBlock {
                    mu_x: current[i][0] + c * inc.mu_delta[i],
                    mu_y: current[i][1] + s * inc.mu_delta[i],
                    sigma_x: c.abs() * sd,
                    sigma_y: s.abs() * sd,
                    rho_xy: sgn(c * s),
                }
            })
            .collect();
        Ok(MarginalParams { blocks })
    }

    pub fn blocks(&self) -> &[MarginalBlock] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    /// Displacement of every marginal mean from the given current positions.
    pub fn mean_displacements(&self, current: &[Point]) -> Vec<Point> {
        self.blocks
            .iter()
            .zip(current)
            .map(|(b, p)| [b.mu_x - p[0], b.mu_y - p[1]])
            .collect()
    }
}

/// Heading of the displacement `(dx, dy)`: `atan2(dy, dx)` mapped to
/// `(-π, π]`. A zero displacement has no heading.
pub fn estimate_yaw(dx: f64, dy: f64) -> Result<f64> {
    if !dx.is_finite() || !dy.is_finite() {
        return Err(Error::NonFinite("displacement".into()));
    }
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateHeading);
    }
    let a = dy.atan2(dx);
    Ok(if a <= -PI { PI } else { a })
}

/// Approximate headings with the stationary agents that needed a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct YawEstimate {
    pub theta: YawVector,
    pub fallback_agents: Vec<usize>,
}

/// Estimates every agent's heading from its mean displacement.
///
/// Stationary agents get `fallback[i]` (typically a recorded true heading)
/// or `0` when no fallback is given, and are listed in `fallback_agents`.
pub fn estimate_yaw_vector(displacements: &[Point], fallback: Option<&[f64]>) -> Result<YawEstimate> {
    if let Some(f) = fallback {
        if f.len() != displacements.len() {
            return Err(Error::Shape(format!(
                "{} fallback headings for {} agents",
                f.len(),
                displacements.len()
            )));
        }
    }
    let mut theta = Vec::with_capacity(displacements.len());
    let mut fallback_agents = Vec::new();
    for (i, d) in displacements.iter().enumerate() {
        match estimate_yaw(d[0], d[1]) {
            Ok(a) => theta.push(a),
            Err(Error::DegenerateHeading) => {
                theta.push(fallback.map_or(0.0, |f| f[i]));
                fallback_agents.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(YawEstimate {
        theta: YawVector::new(theta)?,
        fallback_agents,
    })
}

fn check_agent_counts(n: usize, p: &IpccMatrix, theta: &YawVector) -> Result<()> {
    if p.n() != n || theta.n() != n {
        return Err(Error::Shape(format!(
            "{n} agents, IPCC matrix for {}, {} yaws",
            p.n(),
            theta.n()
        )));
    }
    Ok(())
}

/// Projects the joint increment distribution onto the x-y plane along the
/// headings `theta`.
///
/// Block `(i, j)` of `Σ*` is `ρij·σi·σj·uᵢuⱼᵀ` with `u = (cos θ, sin θ)`.
/// `Σ*` has rank at most `N`; regularize it before factoring.
pub fn project_increments(
    inc: &IncrementParams,
    p: &IpccMatrix,
    theta: &YawVector,
    current: &[Point],
) -> Result<JointGaussian> {
    inc.validate()?;
    let n = inc.n();
    check_agent_counts(n, p, theta)?;
    if current.len() != n {
        return Err(Error::Shape(format!("{} current positions for {n} agents", current.len())));
    }
    let dirs: Vec<[f64; 2]> = theta
        .0
        .iter()
        .map(|&t| {
            let (c, s) = heading_components(t);
            [c, s]
        })
        .collect();
    let mut mean = DVector::zeros(2 * n);
    for i in 0..n {
        mean[2 * i] = current[i][0] + dirs[i][0] * inc.mu_delta[i];
        mean[2 * i + 1] = current[i][1] + dirs[i][1] * inc.mu_delta[i];
    }
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in i..n {
            let scale = p.get(i, j) * inc.sigma_delta[i] * inc.sigma_delta[j];
            for a in 0..2 {
                for b in 0..2 {
                    let v = scale * dirs[i][a] * dirs[j][b];
                    cov[(2 * i + a, 2 * j + b)] = v;
                    cov[(2 * j + b, 2 * i + a)] = v;
                }
            }
        }
    }
    Ok(JointGaussian::from_parts_unchecked(mean, cov))
}

/// Position correlations `[[ρxx, ρxy], [ρyx, ρyy]]` of an agent pair from
/// their increment correlation: `ρΔ · sgn(uᵢuⱼᵀ)`, `u = (cos θ, sin θ)`.
pub fn reconstruct_cross_correlations(rho_delta: f64, theta_i: f64, theta_j: f64) -> Result<Matrix2<f64>> {
    if !(-1.0..=1.0).contains(&rho_delta) {
        return Err(Error::Invalid(format!("increment correlation {rho_delta} outside [-1, 1]")));
    }
    let s = sign_pattern(theta_i, theta_j);
    Ok(Matrix2::new(
        rho_delta * s[0][0],
        rho_delta * s[0][1],
        rho_delta * s[1][0],
        rho_delta * s[1][1],
    ))
}

/// `sgn` of the outer product of the two heading vectors.
pub(crate) fn sign_pattern(theta_i: f64, theta_j: f64) -> [[f64; 2]; 2] {
    let (ci, si) = heading_components(theta_i);
    let (cj, sj) = heading_components(theta_j);
    [[sgn(ci * cj), sgn(ci * sj)], [sgn(si * cj), sgn(si * sj)]]
}

/// Extends per-agent marginals to a joint Gaussian.
///
/// The mean comes from the marginal means, the diagonal blocks are the
/// marginal covariances verbatim, and off-diagonal block `(i, j)` holds
/// `ρ^{ab}_ij · σ_i^a · σ_j^b` with the correlations from
/// [`reconstruct_cross_correlations`]. The result is not regularized.
pub fn assemble_joint(marginals: &MarginalParams, p: &IpccMatrix, theta: &YawVector) -> Result<JointGaussian> {
    let n = marginals.n();
    check_agent_counts(n, p, theta)?;
    let blocks = marginals.blocks();
    let mut mean = DVector::zeros(2 * n);
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for (i, b) in blocks.iter().enumerate() {
        mean[2 * i] = b.mu_x;
        mean[2 * i + 1] = b.mu_y;
        let c = b.cov();
        for a in 0..2 {
            for bb in 0..2 {
                cov[(2 * i + a, 2 * i + bb)] = c[a][bb];
            }
        }
    }
    let yaw = theta.as_slice();
    for i in 0..n {
        for j in (i + 1)..n {
            let rho = p.get(i, j);
            let s = sign_pattern(yaw[i], yaw[j]);
            for a in 0..2 {
                for b in 0..2 {
                    let v = rho * s[a][b] * blocks[i].sigma(a) * blocks[j].sigma(b);
                    cov[(2 * i + a, 2 * j + b)] = v;
                    cov[(2 * j + b, 2 * i + a)] = v;
                }
            }
        }
    }
    Ok(JointGaussian::from_parts_unchecked(mean, cov))
}

/// Largest absolute elementwise difference (means and covariances) between
/// the projection route with headings `projection_theta` and the assembly
/// route from marginals projected with `marginal_theta`.
pub fn equivalence_deviation(
    inc: &IncrementParams,
    p: &IpccMatrix,
    projection_theta: &YawVector,
    marginal_theta: &YawVector,
    current: &[Point],
) -> Result<f64> {
    let projected = project_increments(inc, p, projection_theta, current)?;
    let marginals = MarginalParams::projected(inc, marginal_theta, current)?;
    let assembled = assemble_joint(&marginals, p, marginal_theta)?;
    let mean_dev = (projected.mean() - assembled.mean()).amax();
    let cov_dev = (projected.cov() - assembled.cov()).amax();
    Ok(mean_dev.max(cov_dev))
}

/// Deviation between the two routes when both use the same headings. Up to
/// rounding this is zero.
pub fn equivalence_check(
    inc: &IncrementParams,
    p: &IpccMatrix,
    theta: &YawVector,
    current: &[Point],
) -> Result<f64> {
    equivalence_deviation(inc, p, theta, theta, current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn yaw_quadrants() {
        assert_eq!(estimate_yaw(1.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(estimate_yaw(1.0, 1.0).unwrap(), FRAC_PI_4);
        assert_eq!(estimate_yaw(-1.0, 0.0).unwrap(), PI);
        assert_eq!(estimate_yaw(-1.0, -0.0).unwrap(), PI);
        assert!(matches!(estimate_yaw(0.0, 0.0), Err(Error::DegenerateHeading)));
        assert!(matches!(estimate_yaw(f64::NAN, 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn stationary_agents_fall_back() {
        let est = estimate_yaw_vector(&[[1.0, 0.0], [0.0, 0.0]], Some(&[0.3, 0.7])).unwrap();
        assert_eq!(est.theta.as_slice(), &[0.0, 0.7]);
        assert_eq!(est.fallback_agents, vec![1]);
        let est = estimate_yaw_vector(&[[0.0, 0.0]], None).unwrap();
        assert_eq!(est.theta.as_slice(), &[0.0]);
        assert_eq!(est.fallback_agents, vec![0]);
    }

    #[test]
    fn axis_aligned_projection() {
        let inc = IncrementParams::new(vec![2.0], vec![0.5]).unwrap();
        let theta = YawVector::new(vec![PI / 2.0]).unwrap();
        let g = project_increments(&inc, &IpccMatrix::identity(1), &theta, &[[5.0, 5.0]]).unwrap();
        assert_eq!(g.mean().as_slice(), &[5.0, 7.0]);
        assert_eq!(g.cov().as_slice(), &[0.0, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn independent_agents_stay_block_diagonal() {
        let inc = IncrementParams::new(vec![1.0, 2.0], vec![0.5, 2.0]).unwrap();
        let theta = YawVector::new(vec![0.0, 0.0]).unwrap();
        let g = project_increments(&inc, &IpccMatrix::identity(2), &theta, &[[0.0, 0.0]; 2]).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.0, 4.0, 0.0]));
        assert_eq!(g.cov(), &expected);
    }

    #[test]
    fn reconstruct_examples() {
        let r = reconstruct_cross_correlations(0.8, 0.0, 0.0).unwrap();
        assert_eq!(r, Matrix2::new(0.8, 0.0, 0.0, 0.0));
        let r = reconstruct_cross_correlations(0.8, FRAC_PI_4, FRAC_PI_4).unwrap();
        assert_eq!(r, Matrix2::new(0.8, 0.8, 0.8, 0.8));
        let r = reconstruct_cross_correlations(-0.5, FRAC_PI_4, 3.0 * FRAC_PI_4).unwrap();
        assert_eq!(r, Matrix2::new(0.5, -0.5, 0.5, -0.5));
        assert!(reconstruct_cross_correlations(1.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn single_agent_assembly_is_the_marginal() {
        let b = MarginalBlock {
            mu_x: 1.0,
            mu_y: 2.0,
            sigma_x: 0.7,
            sigma_y: 1.3,
            rho_xy: -0.2,
        };
        let m = MarginalParams::new(vec![b]).unwrap();
        for yaw in [0.0, 1.0, -2.5, PI] {
            let g = assemble_joint(&m, &IpccMatrix::identity(1), &YawVector::new(vec![yaw]).unwrap()).unwrap();
            assert_eq!(g.cov(), &DMatrix::from_row_slice(2, 2, &b.cov().concat()));
        }
    }

    #[test]
    fn marginal_validation() {
        let ok = MarginalBlock {
            mu_x: 0.0,
            mu_y: 0.0,
            sigma_x: 1.0,
            sigma_y: 1.0,
            rho_xy: 0.0,
        };
        assert!(MarginalParams::new(vec![ok]).is_ok());
        assert!(MarginalParams::new(vec![MarginalBlock { rho_xy: 1.0, ..ok }]).is_err());
        assert!(MarginalParams::new(vec![MarginalBlock { sigma_y: 0.0, ..ok }]).is_err());
    }

    #[test]
    fn ipcc_matrix_validation() {
        assert!(IpccMatrix::from_pairs(2, &[(0, 1, 0.5)]).is_ok());
        assert!(IpccMatrix::from_pairs(2, &[(0, 1, 1.5)]).is_err());
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = 0.3;
        assert!(IpccMatrix::new(m.clone()).is_err());
        m[(1, 0)] = 0.3;
        m[(0, 0)] = 0.9;
        assert!(IpccMatrix::new(m).is_err());
    }

    #[test]
    fn upper_triangle_round_trip() {
        let p = IpccMatrix::from_pairs(3, &[(0, 1, 0.1), (0, 2, -0.2), (1, 2, 0.3)]).unwrap();
        assert_eq!(p.upper_triangle(), vec![0.1, -0.2, 0.3]);
        assert_eq!(IpccMatrix::from_upper_triangle(3, &p.upper_triangle()).unwrap(), p);
    }

    #[test]
    fn parameter_count_is_four_times_smaller() {
        for n in 1..20 {
            assert_eq!(ipcc_parameter_count(n), n * (n - 1) / 2);
            assert_eq!(position_pcc_parameter_count(n), 4 * ipcc_parameter_count(n));
            assert_eq!(
                IpccMatrix::identity(n).upper_triangle().len(),
                ipcc_parameter_count(n)
            );
        }
    }

    #[test]
    fn single_agent_routes_agree() {
        let inc = IncrementParams::new(vec![3.0], vec![0.4]).unwrap();
        for yaw in [0.0, 0.3, 2.0, -1.0, PI] {
            let theta = YawVector::new(vec![yaw]).unwrap();
            let dev = equivalence_check(&inc, &IpccMatrix::identity(1), &theta, &[[1.0, -2.0]]).unwrap();
            assert!(dev < 1e-15, "yaw {yaw}: {dev}");
        }
    }
}
