//! Synthetic interacting-agent scenes with known interaction structure, plus
//! the brute-force estimators used to check the model against them.
//!
//! Every agent moves along a circular arc (a straight line when the
//! curvature is zero). Its arc length grows by one correlated increment per
//! step, `d_k ~ N(base_speed, speed_sigma²)`, with the increments of
//! different agents correlated by the scene's ground-truth `P_Δ`. So at step
//! `t` the cumulative increment of agent `i` has mean `t·base_speed` and
//! standard deviation `√t·speed_sigma`, and any two agents' cumulative
//! increments have correlation `P_Δ[i][j]`.
//!
//! One step is 0.5 s (2 Hz); the default speed of 2.5 m per step is 5 m/s.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipcc::{estimate_yaw, IncrementParams, IpccMatrix};
use crate::scene::{wrap_angle, Point, SceneSpec, Trajectory};

/// Interaction layout of a generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Agents share one heading, pairs `(2k, 2k+1)` correlated by `+rho`.
    Follow,
    /// Pairs `(2k, 2k+1)` on perpendicular, crossing paths, correlated by
    /// `-rho`.
    Yield,
    /// Spread-out headings, no correlation.
    Independent,
    /// Pairs alternate between follow and yield.
    Mixed,
}

fn default_rho() -> f64 {
    0.9
}
fn default_speed() -> f64 {
    2.5
}
fn default_speed_sigma() -> f64 {
    0.5
}
fn default_noise() -> f64 {
    0.01
}
fn default_count() -> usize {
    1
}

/// Configuration of [`generate_scene`] and [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub pattern: Pattern,
    pub n_agents: usize,
    pub t_obs: usize,
    pub t_fut: usize,
    /// Pair correlation magnitude used by the pattern.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Explicit `N×N` ground-truth correlation, overriding the pattern's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rho: Option<Vec<Vec<f64>>>,
    /// Mean increment per step, meters.
    #[serde(default = "default_speed")]
    pub base_speed: f64,
    /// Increment standard deviation per step, meters.
    #[serde(default = "default_speed_sigma")]
    pub speed_sigma: f64,
    /// Isotropic position noise added to future positions, meters.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Base heading in radians; drawn uniformly per scene when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    /// Standard deviation of a per-agent perturbation of the initial
    /// heading, radians.
    #[serde(default)]
    pub heading_jitter: f64,
    /// Path curvature in 1/m, shared by all agents.
    #[serde(default)]
    pub curvature: f64,
    /// Number of scenes written by [`generate_dataset`].
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(pattern: Pattern, n_agents: usize, t_obs: usize, t_fut: usize, seed: u64) -> Self {
        ScenarioConfig {
            pattern,
            n_agents,
            t_obs,
            t_fut,
            rho: default_rho(),
            target_rho: None,
            base_speed: default_speed(),
            speed_sigma: default_speed_sigma(),
            noise_sigma: default_noise(),
            heading: None,
            heading_jitter: 0.0,
            curvature: 0.0,
            count: default_count(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.t_obs == 0 || self.t_fut == 0 {
            return Err(Error::Invalid("n_agents, t_obs and t_fut must be positive".into()));
        }
        if self.count == 0 {
            return Err(Error::Invalid("count must be positive".into()));
        }
        let finite = [
            self.rho,
            self.base_speed,
            self.speed_sigma,
            self.noise_sigma,
            self.heading_jitter,
            self.curvature,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.heading.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::NonFinite("scenario config".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Invalid(format!("rho {} outside [-1, 1]", self.rho)));
        }
        if self.base_speed < 0.0 {
            return Err(Error::Invalid("base_speed must be >= 0".into()));
        }
        if self.speed_sigma <= 0.0 {
            return Err(Error::Invalid("speed_sigma must be positive".into()));
        }
        if self.noise_sigma < 0.0 || self.heading_jitter < 0.0 {
            return Err(Error::Invalid("noise_sigma and heading_jitter must be >= 0".into()));
        }
        self.ground_truth_rho().map(|_| ())
    }

    /// Ground-truth `P_Δ`: `target_rho` when given, otherwise the pattern's.
    /// Either way it must be a valid, positive semidefinite correlation
    /// matrix; nothing is repaired.
    pub fn ground_truth_rho(&self) -> Result<IpccMatrix> {
        let n = self.n_agents;
        let p = match &self.target_rho {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Shape(format!("target_rho must be {n}x{n}")));
                }
                IpccMatrix::from_rows(rows)?
            }
            None => {
                let pairs: Vec<(usize, usize, f64)> = (0..n / 2)
                    .map(|k| (2 * k, 2 * k + 1, self.pair_sign(k) * self.rho))
                    .collect();
                IpccMatrix::from_pairs(n, &pairs)?
            }
        };
        let min_eig = p.min_eigenvalue();
        if min_eig < -1e-12 {
            return Err(Error::NotPsd(min_eig));
        }
        Ok(p)
    }

    fn pair_sign(&self, pair: usize) -> f64 {
        match self.pattern {
            Pattern::Follow => 1.0,
            Pattern::Yield => -1.0,
            Pattern::Independent => 0.0,
            Pattern::Mixed => {
                if pair % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// A generated scene with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: SceneSpec,
    pub rho: IpccMatrix,
    /// Increment distribution per future step.
    pub increments: Vec<IncrementParams>,
    /// Heading of every agent at its current (last observed) position.
    pub initial_heading: Vec<f64>,
}

/// Ground-truth sidecar written next to every generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub rho: Vec<Vec<f64>>,
    pub increments: Vec<IncrementParams>,
    pub initial_heading: Vec<f64>,
}

impl GeneratedScene {
    pub fn truth(&self) -> SceneTruth {
        SceneTruth {
            rho: self.rho.to_rows(),
            increments: self.increments.clone(),
            initial_heading: self.initial_heading.clone(),
        }
    }
}

impl SceneTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn from_json(text: &str, origin: &std::path::Path) -> Result<Self> {
        let t: SceneTruth = crate::scene::parse_json(text, origin)?;
        IpccMatrix::from_rows(&t.rho)?;
        for inc in &t.increments {
            inc.validate()?;
        }
        Ok(t)
    }
}

/// Square root of a PSD matrix through its eigendecomposition, so that
/// singular correlation matrices (`ρ = ±1`) can still be sampled.
fn psd_sqrt(p: &IpccMatrix) -> DMatrix<f64> {
    let eig = p.matrix().clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

struct AgentLayout {
    start: Point,
    heading: f64,
}

fn layout(config: &ScenarioConfig, base_heading: f64) -> Vec<AgentLayout> {
    let n = config.n_agents;
    let horizon = config.base_speed * config.t_fut as f64;
    let along = |h: f64, dist: f64| [dist * h.cos(), dist * h.sin()];
    let lane_gap = 10.0;
    let pair_spacing = 2.0 * horizon + 30.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let pair = i / 2;
        let paired = i / 2 < n / 2;
        let follow_like = match config.pattern {
            Pattern::Follow => true,
            Pattern::Yield => false,
            Pattern::Independent => {
                let h = base_heading + 2.0 * PI * i as f64 / n as f64;
                let offset = along(h + FRAC_PI_2, 20.0 * i as f64);
                out.push(AgentLayout {
                    start: offset,
                    heading: h,
                });
                continue;
            }
            Pattern::Mixed => pair % 2 == 0,
        };
        let lateral = along(base_heading + FRAC_PI_2, pair_spacing * pair as f64);
        if !paired || follow_like {
            let behind = along(base_heading, -lane_gap * (i % 2) as f64);
            out.push(AgentLayout {
                start: [lateral[0] + behind[0], lateral[1] + behind[1]],
                heading: base_heading,
            });
        } else {
            // both agents reach the shared conflict point after half the horizon
            let h = if i % 2 == 0 {
                base_heading
            } else {
                base_heading + FRAC_PI_2
            };
            let back = along(h, -0.5 * horizon);
            out.push(AgentLayout {
                start: [lateral[0] + back[0], lateral[1] + back[1]],
                heading: h,
            });
        }
    }
    out
}

/// Position after travelling arc length `s` from `start` with initial
/// heading `h` on a path of curvature `k`.
fn arc_position(start: Point, h: f64, k: f64, s: f64) -> Point {
    if k == 0.0 {
        [start[0] + s * h.cos(), start[1] + s * h.sin()]
    } else {
        [
            start[0] + ((h + k * s).sin() - h.sin()) / k,
            start[1] - ((h + k * s).cos() - h.cos()) / k,
        ]
    }
}

fn generate_with_rng(config: &ScenarioConfig, p: &IpccMatrix, rng: &mut ChaCha8Rng) -> Result<GeneratedScene> {
    let n = config.n_agents;
    let base_heading = match config.heading {
        Some(h) => h,
        None => rng.random_range(-PI..PI),
    };
    let mut agents = layout(config, base_heading);
    for a in agents.iter_mut() {
        if config.heading_jitter > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            a.heading += config.heading_jitter * z;
        }
    }
    let root = psd_sqrt(p);
    let k = config.curvature;

    let past: Vec<Trajectory> = agents
        .iter()
        .map(|a| {
            let pts = (0..config.t_obs)
                .map(|step| {
                    let s = -((config.t_obs - 1 - step) as f64) * config.base_speed;
                    arc_position(a.start, a.heading, k, s)
                })
                .collect();
            Trajectory::new(pts)
        })
        .collect();

    let mut arc = vec![0.0; n];
    let mut future = vec![Vec::with_capacity(config.t_fut); n];
    let mut yaw = vec![Vec::with_capacity(config.t_fut); n];
    let mut z = vec![0.0; n];
    for _ in 0..config.t_fut {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for i in 0..n {
            let correlated: f64 = (0..n).map(|c| root[(i, c)] * z[c]).sum();
            arc[i] += config.base_speed + config.speed_sigma * correlated;
        }
        for (i, a) in agents.iter().enumerate() {
            let exact = arc_position(a.start, a.heading, k, arc[i]);
            let (nx, ny): (f64, f64) = if config.noise_sigma > 0.0 {
                (StandardNormal.sample(rng), StandardNormal.sample(rng))
            } else {
                (0.0, 0.0)
            };
            future[i].push([exact[0] + config.noise_sigma * nx, exact[1] + config.noise_sigma * ny]);
            yaw[i].push(wrap_angle(a.heading + k * arc[i]));
        }
    }

    let increments = (1..=config.t_fut)
        .map(|t| {
            IncrementParams::new(
                vec![t as f64 * config.base_speed; n],
                vec![(t as f64).sqrt() * config.speed_sigma; n],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let scene = SceneSpec::new(past, future.into_iter().map(Trajectory::new).collect(), yaw)?;
    Ok(GeneratedScene {
        scene,
        rho: p.clone(),
        increments,
        initial_heading: agents.iter().map(|a| wrap_angle(a.heading)).collect(),
    })
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates one scene from `config.seed`. Identical to the first scene of
/// [`generate_dataset`].
pub fn generate_scene(config: &ScenarioConfig) -> Result<GeneratedScene> {
    config.validate()?;
    let p = config.ground_truth_rho()?;
    generate_with_rng(config, &p, &mut scene_rng(config.seed, 0))
}

/// Generates `config.count` scenes. Scene `k` draws from ChaCha8 stream `k`
/// of `config.seed`, so scenes are independent of each other and of the
/// order they are produced in.
pub fn generate_dataset(config: &ScenarioConfig) -> Result<Vec<GeneratedScene>> {
    config.validate()?;
    let p = config.ground_truth_rho()?;
    use rayon::prelude::*;
    (0..config.count)
        .into_par_iter()
        .map(|k| generate_with_rng(config, &p, &mut scene_rng(config.seed, k as u64)))
        .collect()
}

/// Sample Pearson correlation between the columns of a `K×N` matrix.
pub fn empirical_increment_pcc(samples: &DMatrix<f64>) -> Result<IpccMatrix> {
    let (k, n) = samples.shape();
    if k < 2 {
        return Err(Error::Invalid(format!("need at least 2 samples, got {k}")));
    }
    if n == 0 {
        return Err(Error::Shape("no columns".into()));
    }
    let means: Vec<f64> = (0..n).map(|j| samples.column(j).sum() / k as f64).collect();
    let mut centered = samples.clone();
    for j in 0..n {
        centered.column_mut(j).add_scalar_mut(-means[j]);
    }
    let ss: Vec<f64> = (0..n).map(|j| centered.column(j).norm_squared()).collect();
    if let Some(j) = ss.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::ZeroVariance(j));
    }
    let mut p = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = (centered.column(i).dot(&centered.column(j)) / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0);
            p[(i, j)] = r;
            p[(j, i)] = r;
        }
    }
    IpccMatrix::new(p)
}

/// Projects 2-D position samples (rows `[x1, y1, ..., xN, yN]`) onto each
/// agent's heading relative to its current position, giving 1-D increments.
pub fn increments_along_headings(samples: &DMatrix<f64>, current: &[Point], theta: &[f64]) -> Result<DMatrix<f64>> {
    let n = current.len();
    if theta.len() != n || samples.ncols() != 2 * n {
        return Err(Error::Shape(format!(
            "{} sample columns, {n} agents, {} headings",
            samples.ncols(),
            theta.len()
        )));
    }
    Ok(DMatrix::from_fn(samples.nrows(), n, |r, i| {
        let (c, s) = (theta[i].cos(), theta[i].sin());
        (samples[(r, 2 * i)] - current[i][0]) * c + (samples[(r, 2 * i + 1)] - current[i][1]) * s
    }))
}

/// Realized increments of the scenes at one future step, one row per scene.
pub fn scene_increments(scenes: &[GeneratedScene], step: usize) -> Result<DMatrix<f64>> {
    let Some(first) = scenes.first() else {
        return Err(Error::EmptyDataset);
    };
    let n = first.scene.n_agents();
    let mut out = DMatrix::zeros(scenes.len(), n);
    for (r, g) in scenes.iter().enumerate() {
        let cur = g.scene.current_positions();
        for i in 0..n {
            let p = g.scene.future()[i].points()[step];
            let h = g.scene.yaw()[i][step];
            out[(r, i)] = (p[0] - cur[i][0]) * h.cos() + (p[1] - cur[i][1]) * h.sin();
        }
    }
    Ok(out)
}

/// Heading error `wrap(φ − θ)` of one agent at one step, in degrees, where
/// `θ` is estimated from the displacement since the current position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawError {
    pub agent: usize,
    pub step: usize,
    pub degrees: f64,
}

/// Yaw errors of every moving agent-step of a scene, and the number of
/// stationary agent-steps skipped.
pub fn yaw_errors(scene: &SceneSpec) -> Result<(Vec<YawError>, usize)> {
    let current = scene.current_positions();
    let mut out = Vec::new();
    let mut skipped = 0;
    for i in 0..scene.n_agents() {
        for (t, p) in scene.future()[i].points().iter().enumerate() {
            match estimate_yaw(p[0] - current[i][0], p[1] - current[i][1]) {
                Ok(theta) => out.push(YawError {
                    agent: i,
                    step: t,
                    degrees: wrap_angle(scene.yaw()[i][t] - theta).to_degrees(),
                }),
                Err(Error::DegenerateHeading) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok((out, skipped))
}

/// Histogram range and bin width of [`yaw_error_distribution`], degrees.
pub const YAW_HIST_LIMIT: f64 = 90.0;
pub const YAW_HIST_BIN: f64 = 5.0;

/// Summary of yaw-approximation errors over many scenes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YawErrorStats {
    pub mean_deg: f64,
    pub std_deg: f64,
    /// Counts over `[-90, 90)` in 5° bins; errors outside land in
    /// `underflow`/`overflow`.
    pub histogram: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
    pub count: usize,
    pub skipped: usize,
}

/// Mean, population standard deviation and histogram of the yaw errors of
/// all agent-steps of all scenes.
pub fn yaw_error_distribution<'a, I>(scenes: I) -> Result<YawErrorStats>
where
    I: IntoIterator<Item = &'a SceneSpec>,
{
    let bins = (2.0 * YAW_HIST_LIMIT / YAW_HIST_BIN) as usize;
    let mut histogram = vec![0; bins];
    let (mut underflow, mut overflow, mut skipped) = (0, 0, 0);
    let mut values = Vec::new();
    for scene in scenes {
        let (errs, s) = yaw_errors(scene)?;
        skipped += s;
        values.extend(errs.iter().map(|e| e.degrees));
    }
    for &v in &values {
        if v < -YAW_HIST_LIMIT {
            underflow += 1;
        } else if v >= YAW_HIST_LIMIT {
            overflow += 1;
        } else {
            let b = ((v + YAW_HIST_LIMIT) / YAW_HIST_BIN).floor() as usize;
            histogram[b.min(bins - 1)] += 1;
        }
    }
    let count = values.len();
    let (mean_deg, std_deg) = if count == 0 {
        (0.0, 0.0)
    } else {
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        (mean, var.sqrt())
    };
    Ok(YawErrorStats {
        mean_deg,
        std_deg,
        histogram,
        underflow,
        overflow,
        count,
        skipped,
    })
}
