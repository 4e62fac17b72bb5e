//! Maximum-likelihood fitting of the cross-agent correlation structure.
//!
//! Marginals and headings are fixed to the ground truth of each scene: the
//! marginals are the projections of the true increment distributions onto
//! the true headings. Only `P_Δ` is learned, either directly (one `tanh`
//! parameter per agent pair and step) or through the relevance head.
//!
//! The objective is the scene-level NLL summed over steps and averaged over
//! scenes, with `Σ_t + Δ_reg·I` as covariance. Its gradient with respect to
//! the covariance is `½(Σ⁻¹ − Σ⁻¹rrᵀΣ⁻¹)`; every covariance entry of block
//! `(i, j)` is linear in `ρij`, which carries the gradient to the
//! correlations and from there through `tanh` or the head.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{cholesky_factor, nll_factored, sample_joint, tikhonov_regularize, CholeskyFactor};
use crate::ipcc::{assemble_joint, ipcc_parameter_count, sign_pattern, IncrementParams, IpccMatrix, MarginalParams, YawVector};
use crate::relevance::{backward, cosine_backward, cosine_relevance, forward_cached, scene_latents, LatentFeatures, RelevanceHeadParams};
use crate::scene::{SceneSpec, Trajectory};
use crate::scenes::GeneratedScene;

/// Times an update that leaves `Σ_t + Δ_reg·I` unfactorizable is halved
/// back towards the previous iterate before `Δ_reg` is escalated.
pub const MAX_STEP_HALVINGS: usize = 30;

/// Adam moment decay rates and denominator offset.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Seed of the agent-slot embeddings in the synthetic latent features.
/// Part of the data, not of the fit.
pub const LATENT_EMBEDDING_SEED: u64 = 0x1cc_5eed;

/// Relative gradient errors are measured against `max(|a|, |n|, FLOOR)`.
pub const RELATIVE_ERROR_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    DirectRho,
    RelevanceHead,
}

fn default_lr() -> f64 {
    0.05
}
fn default_iters() -> usize {
    500
}
fn default_delta() -> f64 {
    1e-4
}
fn default_param() -> Parameterization {
    Parameterization::DirectRho
}
fn default_tol() -> f64 {
    1e-9
}
fn default_latent_dim() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_delta")]
    pub delta_reg: f64,
    #[serde(default = "default_param")]
    pub parameterization: Parameterization,
    #[serde(default)]
    pub seed: u64,
    /// Stop once the objective changes by less than this between iterations.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    /// Width of the latent features fed to the relevance head.
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: default_lr(),
            max_iters: default_iters(),
            delta_reg: default_delta(),
            parameterization: default_param(),
            seed: 0,
            convergence_tol: default_tol(),
            latent_dim: default_latent_dim(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Invalid("learning_rate must be positive".into()));
        }
        if !(self.delta_reg >= 0.0) || !self.delta_reg.is_finite() {
            return Err(Error::Invalid("delta_reg must be >= 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("max_iters must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Invalid("convergence_tol must be >= 0".into()));
        }
        if self.parameterization == Parameterization::RelevanceHead && self.latent_dim == 0 {
            return Err(Error::Invalid("latent_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self, dataset: &Dataset) -> Model {
        match self.parameterization {
            Parameterization::DirectRho => Model::DirectRho {
                n_agents: dataset.n_agents(),
                steps: dataset.steps(),
            },
            Parameterization::RelevanceHead => Model::RelevanceHead { d: self.latent_dim },
        }
    }
}

/// What the free parameters describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// `ρij = tanh(w)` for every pair and step; step-major, pairs row-major.
    DirectRho { n_agents: usize, steps: usize },
    /// Flat [`RelevanceHeadParams`] of width `d`, shared by all steps.
    RelevanceHead { d: usize },
}

impl Model {
    pub fn param_count(&self) -> usize {
        match *self {
            Model::DirectRho { n_agents, steps } => steps * ipcc_parameter_count(n_agents),
            Model::RelevanceHead { d } => RelevanceHeadParams::param_count(d),
        }
    }

    /// Starting point: all correlations zero, or a seeded head.
    pub fn initial_params(&self, seed: u64) -> Result<Vec<f64>> {
        match *self {
            Model::DirectRho { .. } => Ok(vec![0.0; self.param_count()]),
            Model::RelevanceHead { d } => Ok(RelevanceHeadParams::init(d, seed)?.to_flat()),
        }
    }

    fn check(&self, params: &[f64], data: &Dataset) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters, model expects {}",
                params.len(),
                self.param_count()
            )));
        }
        match *self {
            Model::DirectRho { n_agents, steps } => {
                if n_agents != data.n_agents() || steps != data.steps() {
                    return Err(Error::Shape(format!(
                        "model for {n_agents} agents x {steps} steps, dataset has {} x {}",
                        data.n_agents(),
                        data.steps()
                    )));
                }
            }
            Model::RelevanceHead { d } => {
                if data.latent_dim() != Some(d) {
                    return Err(Error::Invalid(format!(
                        "dataset has no latent features of width {d}; prepare them with Dataset::with_latents"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `P_Δ` of every step under direct parameters.
pub fn direct_rho(params: &[f64], n_agents: usize, steps: usize) -> Result<Vec<IpccMatrix>> {
    let m = ipcc_parameter_count(n_agents);
    if params.len() != m * steps {
        return Err(Error::Shape(format!("{} direct parameters for {steps} steps", params.len())));
    }
    (0..steps)
        .map(|t| {
            let rho: Vec<f64> = params[t * m..(t + 1) * m].iter().map(|w| w.tanh()).collect();
            IpccMatrix::from_upper_triangle(n_agents, &rho)
        })
        .collect()
}

/// Inverse of the `tanh` mapping for a target correlation matrix.
pub fn direct_params_for(rhos: &[IpccMatrix]) -> Vec<f64> {
    rhos.iter()
        .flat_map(|p| p.upper_triangle())
        .map(|r| r.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh())
        .collect()
}

struct PreparedStep {
    marginals: MarginalParams,
    theta: YawVector,
    observation: DVector<f64>,
}

/// Scenes prepared for fitting: per step, the fixed marginals and headings
/// and the observed joint position vector.
pub struct Dataset {
    scenes: Vec<Vec<PreparedStep>>,
    sources: Vec<SceneSpec>,
    n_agents: usize,
    steps: usize,
    latents: Option<(usize, Vec<Vec<LatentFeatures>>)>,
}

impl Dataset {
    /// Each scene comes with its true increment distribution per future
    /// step. All scenes must share the agent count and horizon.
    pub fn new(scenes: Vec<(SceneSpec, Vec<IncrementParams>)>) -> Result<Self> {
        let Some((first, _)) = scenes.first() else {
            return Err(Error::EmptyDataset);
        };
        let (n, steps) = (first.n_agents(), first.t_fut());
        let mut prepared = Vec::with_capacity(scenes.len());
        let mut sources = Vec::with_capacity(scenes.len());
        for (k, (scene, incs)) in scenes.into_iter().enumerate() {
            if scene.n_agents() != n || scene.t_fut() != steps {
                return Err(Error::Shape(format!(
                    "scene {k} has {} agents x {} steps, expected {n} x {steps}",
                    scene.n_agents(),
                    scene.t_fut()
                )));
            }
            if incs.len() != steps {
                return Err(Error::Shape(format!(
                    "scene {k} has increments for {} steps, expected {steps}",
                    incs.len()
                )));
            }
            let current = scene.current_positions();
            let mut per_step = Vec::with_capacity(steps);
            for (t, inc) in incs.iter().enumerate() {
                if inc.n() != n {
                    return Err(Error::Shape(format!("scene {k}, step {t}: increments for {} agents", inc.n())));
                }
                let theta = YawVector::new(scene.yaw().iter().map(|y| y[t]).collect())?;
                let marginals = MarginalParams::projected(inc, &theta, &current)?;
                per_step.push(PreparedStep {
                    marginals,
                    theta,
                    observation: DVector::from_vec(scene.future_vector(t)),
                });
            }
            prepared.push(per_step);
            sources.push(scene);
        }
        Ok(Dataset {
            scenes: prepared,
            sources,
            n_agents: n,
            steps,
            latents: None,
        })
    }

    pub fn from_generated(scenes: &[GeneratedScene]) -> Result<Self> {
        Self::new(
            scenes
                .iter()
                .map(|g| (g.scene.clone(), g.increments.clone()))
                .collect(),
        )
    }

    /// Attaches synthetic latent features of width `d`
    /// (see [`scene_latents`]) for the relevance head.
    pub fn with_latents(mut self, d: usize) -> Result<Self> {
        let latents = self
            .sources
            .par_iter()
            .map(|s| {
                (0..self.steps)
                    .map(|t| scene_latents(s, t, d, LATENT_EMBEDDING_SEED))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        self.latents = Some((d, latents));
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.latents.as_ref().map(|(d, _)| *d)
    }

    pub fn scenes(&self) -> &[SceneSpec] {
        &self.sources
    }

    fn latent(&self, scene: usize, step: usize) -> &LatentFeatures {
        &self.latents.as_ref().expect("checked by Model::check").1[scene][step]
    }

    /// Fixed marginals of one scene and step.
    pub fn marginals(&self, scene: usize, step: usize) -> &MarginalParams {
        &self.scenes[scene][step].marginals
    }

    pub fn headings(&self, scene: usize, step: usize) -> &YawVector {
        &self.scenes[scene][step].theta
    }
}

fn factor_step(step: &PreparedStep, p: &IpccMatrix, delta: f64, scene: usize, t: usize) -> Result<(CholeskyFactor, DVector<f64>)> {
    let joint = assemble_joint(&step.marginals, p, &step.theta)?;
    let cov = tikhonov_regularize(joint.cov(), delta)?;
    let factor = cholesky_factor(&cov).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, value } => Error::Factorization {
            scene,
            step: t,
            pivot,
            value,
        },
        other => other,
    })?;
    Ok((factor, joint.mean().clone()))
}

/// Gradient of one step's NLL with respect to the strict upper triangle of
/// `P_Δ`.
fn rho_gradient(step: &PreparedStep, factor: &CholeskyFactor, mean: &DVector<f64>) -> Vec<f64> {
    let inv = factor.inverse();
    let alpha = factor.solve(&(&step.observation - mean));
    let n = step.marginals.n();
    let blocks = step.marginals.blocks();
    let yaw = step.theta.as_slice();
    let mut out = Vec::with_capacity(ipcc_parameter_count(n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s = sign_pattern(yaw[i], yaw[j]);
            let sig_i = [blocks[i].sigma_x, blocks[i].sigma_y];
            let sig_j = [blocks[j].sigma_x, blocks[j].sigma_y];
            let mut g = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    let (r, c) = (2 * i + a, 2 * j + b);
                    let d_sigma = 0.5 * (inv[(r, c)] - alpha[r] * alpha[c]);
                    // both (r, c) and its mirror (c, r) depend on ρij
                    g += 2.0 * d_sigma * s[a][b] * sig_i[a] * sig_j[b];
                }
            }
            out.push(g);
        }
    }
    out
}

enum StepRho {
    Direct(Vec<IpccMatrix>),
    Head(RelevanceHeadParams),
}

impl StepRho {
    fn new(model: &Model, params: &[f64]) -> Result<Self> {
        Ok(match *model {
            Model::DirectRho { n_agents, steps } => StepRho::Direct(direct_rho(params, n_agents, steps)?),
            Model::RelevanceHead { d } => StepRho::Head(RelevanceHeadParams::from_flat(d, params)?),
        })
    }
}

fn scene_value(data: &Dataset, rho: &StepRho, s: usize, delta: f64) -> Result<f64> {
    let mut total = 0.0;
    for (t, step) in data.scenes[s].iter().enumerate() {
        let p = match rho {
            StepRho::Direct(ps) => ps[t].clone(),
            StepRho::Head(head) => cosine_relevance(&crate::relevance::attention_forward(data.latent(s, t), head)?)?,
        };
        let (factor, mean) = factor_step(step, &p, delta, s, t)?;
        total += nll_factored(&factor, &mean, &step.observation);
    }
    Ok(total)
}

fn scene_value_and_grad(data: &Dataset, model: &Model, rho: &StepRho, s: usize, delta: f64) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for (t, step) in data.scenes[s].iter().enumerate() {
        match rho {
            StepRho::Direct(ps) => {
                let (factor, mean) = factor_step(step, &ps[t], delta, s, t)?;
                total += nll_factored(&factor, &mean, &step.observation);
                let g = rho_gradient(step, &factor, &mean);
                let m = g.len();
                for (k, (gk, rk)) in g.iter().zip(ps[t].upper_triangle()).enumerate() {
                    grad[t * m + k] += gk * (1.0 - rk * rk);
                }
            }
            StepRho::Head(head) => {
                let cache = forward_cached(data.latent(s, t), head)?;
                let p = cosine_relevance(&LatentFeatures::new(cache.out.clone())?)?;
                let (factor, mean) = factor_step(step, &p, delta, s, t)?;
                total += nll_factored(&factor, &mean, &step.observation);
                let g = rho_gradient(step, &factor, &mean);
                let d_out = cosine_backward(&cache.out, &g)?;
                for (acc, v) in grad.iter_mut().zip(backward(&cache, head, &d_out)) {
                    *acc += v;
                }
            }
        }
    }
    Ok((total, grad))
}

/// Scene-level NLL summed over steps, averaged over scenes.
///
/// Scenes are evaluated in parallel and summed in scene order, so the value
/// does not depend on the thread count.
pub fn nll_objective(model: &Model, params: &[f64], data: &Dataset, delta_reg: f64) -> Result<f64> {
    model.check(params, data)?;
    let rho = StepRho::new(model, params)?;
    let values = (0..data.len())
        .into_par_iter()
        .map(|s| scene_value(data, &rho, s, delta_reg))
        .collect::<Result<Vec<_>>>()?;
    Ok(values.iter().sum::<f64>() / data.len() as f64)
}

/// Objective and its analytic gradient.
pub fn nll_value_and_grad(model: &Model, params: &[f64], data: &Dataset, delta_reg: f64) -> Result<(f64, Vec<f64>)> {
    model.check(params, data)?;
    let rho = StepRho::new(model, params)?;
    let parts = (0..data.len())
        .into_par_iter()
        .map(|s| scene_value_and_grad(data, model, &rho, s, delta_reg))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / data.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for (v, g) in &parts {
        value += v;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((value * scale, grad))
}

pub fn grad_nll(model: &Model, params: &[f64], data: &Dataset, delta_reg: f64) -> Result<Vec<f64>> {
    nll_value_and_grad(model, params, data, delta_reg).map(|(_, g)| g)
}

/// `P_Δ` per step implied by `params`. For the relevance head, which gives
/// one matrix per scene, entries are averaged over scenes.
pub fn recovered_rho(model: &Model, params: &[f64], data: &Dataset) -> Result<Vec<IpccMatrix>> {
    model.check(params, data)?;
    match StepRho::new(model, params)? {
        StepRho::Direct(ps) => Ok(ps),
        StepRho::Head(head) => (0..data.steps())
            .map(|t| {
                let n = data.n_agents();
                let mut acc = DMatrix::zeros(n, n);
                for s in 0..data.len() {
                    let p = cosine_relevance(&crate::relevance::attention_forward(data.latent(s, t), &head)?)?;
                    acc += p.matrix();
                }
                acc /= data.len() as f64;
                for i in 0..n {
                    acc[(i, i)] = 1.0;
                }
                IpccMatrix::new(acc)
            })
            .collect(),
    }
}

/// Outcome of [`fit_parameters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub parameterization: Parameterization,
    pub final_nll: Option<f64>,
    pub validation_nll: Option<f64>,
    pub nll_trace: Vec<f64>,
    /// `P_Δ` per step, as rows.
    pub recovered_rho: Vec<Vec<Vec<f64>>>,
    pub iterations_run: usize,
    pub converged: bool,
    pub delta_reg_used: f64,
    pub delta_escalated: bool,
    pub failure: Option<String>,
    pub params: Vec<f64>,
}

impl FitReport {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `iteration,nll` rows with a header, LF line endings.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,nll\n");
        for (i, v) in self.nll_trace.iter().enumerate() {
            writeln!(out, "{i},{v}").expect("write to string");
        }
        out
    }
}

/// Minimizes [`nll_objective`] with Adam.
pub fn fit_parameters(config: &FitConfig, data: &Dataset) -> Result<FitReport> {
    fit_with_validation(config, data, None)
}

/// Like [`fit_parameters`], additionally reporting the objective on a
/// held-out dataset at the final parameters and regularization.
///
/// An update that makes some step unfactorizable is halved back towards the
/// previous iterate. A factorization failure that halving cannot resolve,
/// including one at the starting point, multiplies `Δ_reg` by ten once and
/// retries; a further failure ends the fit with `failure` set.
pub fn fit_with_validation(config: &FitConfig, data: &Dataset, validation: Option<&Dataset>) -> Result<FitReport> {
    config.validate()?;
    let model = config.model(data);
    let mut params = model.initial_params(config.seed)?;
    model.check(&params, data)?;

    let mut delta = config.delta_reg;
    let mut escalated = false;
    let mut trace = Vec::new();
    let mut failure = None;
    let mut converged = false;
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut last_good: Option<Vec<f64>> = None;
    let mut halvings = 0;
    let mut iter = 0;
    while iter < config.max_iters {
        let (value, grad) = match nll_value_and_grad(&model, &params, data, delta) {
            Ok(r) => r,
            Err(Error::Factorization { .. }) if last_good.is_some() && halvings < MAX_STEP_HALVINGS => {
                let good = last_good.as_ref().expect("checked");
                for (p, g) in params.iter_mut().zip(good) {
                    *p = g + 0.5 * (*p - g);
                }
                halvings += 1;
                continue;
            }
            Err(e @ Error::Factorization { .. }) => {
                if escalated {
                    failure = Some(format!("iteration {iter}: {e} (delta_reg {delta:e})"));
                    break;
                }
                escalated = true;
                delta *= 10.0;
                continue;
            }
            Err(e) => {
                failure = Some(format!("iteration {iter}: {e}"));
                break;
            }
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            failure = Some(format!("iteration {iter}: non-finite objective or gradient"));
            break;
        }
        last_good = Some(params.clone());
        halvings = 0;
        let previous = trace.last().copied();
        trace.push(value);
        iter += 1;
        if previous.is_some_and(|p: f64| (p - value).abs() < config.convergence_tol) {
            converged = true;
            break;
        }
        let step = iter as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(step);
        let bias2 = 1.0 - ADAM_BETA2.powi(step);
        for k in 0..params.len() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
            params[k] -= config.learning_rate * (m[k] / bias1) / ((v[k] / bias2).sqrt() + ADAM_EPSILON);
        }
    }

    let (final_nll, validation_nll, recovered) = if failure.is_none() {
        let final_nll = nll_objective(&model, &params, data, delta);
        match final_nll {
            Ok(f) => {
                let val = match validation {
                    Some(vd) => Some(nll_objective(&model, &params, vd, delta)?),
                    None => None,
                };
                let rec = recovered_rho(&model, &params, data)?;
                (Some(f), val, rec.iter().map(IpccMatrix::to_rows).collect())
            }
            Err(e) => {
                failure = Some(format!("final evaluation: {e}"));
                (None, None, Vec::new())
            }
        }
    } else {
        (None, None, Vec::new())
    };

    Ok(FitReport {
        parameterization: config.parameterization,
        final_nll,
        validation_nll,
        nll_trace: trace,
        recovered_rho: recovered,
        iterations_run: iter,
        converged,
        delta_reg_used: delta,
        delta_escalated: escalated,
        failure,
        params,
    })
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = f(&probe)?;
        probe[k] = x[k] - h;
        let minus = f(&probe)?;
        probe[k] = x[k];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Largest `|a − n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)` over components,
/// with its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares [`grad_nll`] against central differences with step `step`.
pub fn gradient_check(model: &Model, params: &[f64], data: &Dataset, delta_reg: f64, step: f64) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let analytic = grad_nll(model, params, data, delta_reg)?;
    let numeric = central_difference(|x| nll_objective(model, x, data, delta_reg), params, step)?;
    let (max_rel_error, worst_index) = max_relative_error(&analytic, &numeric);
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

/// A small random fitting problem: a mixed-interaction dataset and a random
/// parameter point. Direct correlations are kept below `0.9/(N−1)` in
/// magnitude so that every `P_Δ` is diagonally dominant, hence positive
/// definite.
///
/// For the relevance head the point is a seeded initialization and the
/// observed futures are redrawn from the joint the head itself defines, with
/// `Δ_reg = 1e-4`. A freshly initialized head gives nearly singular `P_Δ`, and
/// against data from a different correlation the objective would then be
/// large and badly conditioned.
pub fn synthetic_problem(
    parameterization: Parameterization,
    n_agents: usize,
    steps: usize,
    scenes: usize,
    seed: u64,
) -> Result<(Model, Vec<f64>, Dataset)> {
    use crate::scenes::{generate_dataset, Pattern, ScenarioConfig};
    let mut cfg = ScenarioConfig::new(Pattern::Mixed, n_agents, 3, steps, seed);
    cfg.count = scenes;
    cfg.rho = 0.6;
    cfg.heading_jitter = 0.2;
    let generated = generate_dataset(&cfg)?;
    let data = Dataset::from_generated(&generated)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    match parameterization {
        Parameterization::DirectRho => {
            let model = Model::DirectRho { n_agents, steps };
            let bound = if n_agents > 1 {
                (0.9 / (n_agents - 1) as f64).min(0.9).atanh().min(0.5)
            } else {
                0.5
            };
            let params = (0..model.param_count())
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Ok((model, params, data))
        }
        Parameterization::RelevanceHead => {
            let d = default_latent_dim();
            let model = Model::RelevanceHead { d };
            let head = RelevanceHeadParams::init(d, rng.random())?;
            let data = data.with_latents(d)?;
            let redrawn = (0..data.len())
                .map(|s| {
                    let scene = &data.sources[s];
                    let mut future = vec![Vec::with_capacity(steps); n_agents];
                    for t in 0..steps {
                        let p = cosine_relevance(&crate::relevance::attention_forward(data.latent(s, t), &head)?)?;
                        let joint = assemble_joint(data.marginals(s, t), &p, data.headings(s, t))?.regularized(1e-4)?;
                        let draw = sample_joint(&joint, rng.random(), 1)?;
                        for (i, f) in future.iter_mut().enumerate() {
                            f.push([draw[(0, 2 * i)], draw[(0, 2 * i + 1)]]);
                        }
                    }
                    let scene = SceneSpec::new(
                        scene.past().to_vec(),
                        future.into_iter().map(Trajectory::new).collect(),
                        scene.yaw().to_vec(),
                    )?;
                    Ok((scene, generated[s].increments.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((model, head.to_flat(), Dataset::new(redrawn)?.with_latents(d)?))
        }
    }
}
