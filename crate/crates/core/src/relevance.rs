//! Relevance head: per-agent latent features to an [`IpccMatrix`].
//!
//! The head is a single-head scaled dot-product self-attention layer over
//! the agents followed by two affine layers with a ReLU between them:
//!
//! ```text
//! Q = L·Wq   K = L·Wk   V = L·Wv
//! A = softmax_rows(Q·Kᵀ / √d)
//! H = A·V
//! R = relu(H·W1 + b1)·W2 + b2
//! ```
//!
//! The rows of `R` are the relevance-aware features; their pairwise cosine
//! similarities form `P_Δ`. Rows are agents, so weights multiply from the
//! right.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipcc::IpccMatrix;
use crate::scene::SceneSpec;

/// `N × d` latent features, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeatures(DMatrix<f64>);

impl LatentFeatures {
    pub fn new(features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Shape("latent features must be non-empty".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent features".into()));
        }
        Ok(LatentFeatures(features))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n_agents(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }
}

/// Weights of the relevance head for feature width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceHeadParams {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    d: usize,
    w_q: Vec<Vec<f64>>,
    w_k: Vec<Vec<f64>>,
    w_v: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape(format!("{name} must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl RelevanceHeadParams {
    /// Uniform initialization in `[-1/√d, 1/√d]` from a ChaCha8 stream.
    pub fn init(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Invalid("feature width must be positive".into()));
        }
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..Self::param_count(d))
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self::from_flat(d, &flat)
    }

    pub fn d(&self) -> usize {
        self.w_q.nrows()
    }

    /// Number of scalar parameters: five `d×d` matrices and two biases.
    pub fn param_count(d: usize) -> usize {
        5 * d * d + 2 * d
    }

    /// Flattens as `Wq, Wk, Wv, W1, b1, W2, b2`, matrices row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::param_count(self.d()));
        let push_mat = |out: &mut Vec<f64>, m: &DMatrix<f64>| {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
        };
        push_mat(&mut out, &self.w_q);
        push_mat(&mut out, &self.w_k);
        push_mat(&mut out, &self.w_v);
        push_mat(&mut out, &self.w1);
        out.extend(self.b1.iter());
        push_mat(&mut out, &self.w2);
        out.extend(self.b2.iter());
        out
    }

    pub fn from_flat(d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::param_count(d) {
            return Err(Error::Shape(format!(
                "{} parameters for a head of width {d}, expected {}",
                flat.len(),
                Self::param_count(d)
            )));
        }
        let mut it = flat.iter().copied();
        let mut mat = || DMatrix::from_row_iterator(d, d, it.by_ref().take(d * d));
        let w_q = mat();
        let w_k = mat();
        let w_v = mat();
        let w1 = mat();
        let rest = &flat[4 * d * d..];
        let b1 = DVector::from_column_slice(&rest[..d]);
        let w2 = DMatrix::from_row_slice(d, d, &rest[d..d + d * d]);
        let b2 = DVector::from_column_slice(&rest[d + d * d..]);
        Ok(RelevanceHeadParams {
            w_q,
            w_k,
            w_v,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn to_json(&self) -> String {
        let file = HeadFile {
            d: self.d(),
            w_q: rows_of(&self.w_q),
            w_k: rows_of(&self.w_k),
            w_v: rows_of(&self.w_v),
            w1: rows_of(&self.w1),
            b1: self.b1.iter().copied().collect(),
            w2: rows_of(&self.w2),
            b2: self.b2.iter().copied().collect(),
        };
        serde_json::to_string_pretty(&file).expect("head parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: HeadFile = crate::scene::parse_json(text, Path::new("relevance head"))?;
        let d = f.d;
        if f.b1.len() != d || f.b2.len() != d {
            return Err(Error::Shape(format!("biases must have length {d}")));
        }
        let params = RelevanceHeadParams {
            w_q: matrix_from_rows(&f.w_q, d, "w_q")?,
            w_k: matrix_from_rows(&f.w_k, d, "w_k")?,
            w_v: matrix_from_rows(&f.w_v, d, "w_v")?,
            w1: matrix_from_rows(&f.w1, d, "w1")?,
            b1: DVector::from_vec(f.b1),
            w2: matrix_from_rows(&f.w2, d, "w2")?,
            b2: DVector::from_vec(f.b2),
        };
        if params.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("relevance head parameters".into()));
        }
        Ok(params)
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    l: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    attn: DMatrix<f64>,
    h: DMatrix<f64>,
    z1: DMatrix<f64>,
    u: DMatrix<f64>,
    pub(crate) out: DMatrix<f64>,
}

fn add_row_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        for (x, bj) in row.iter_mut().zip(b.iter()) {
            *x += bj;
        }
    }
}

fn softmax_rows(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = s.clone();
    for mut row in a.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    a
}

pub(crate) fn forward_cached(latents: &LatentFeatures, params: &RelevanceHeadParams) -> Result<ForwardCache> {
    let d = params.d();
    if latents.width() != d {
        return Err(Error::Shape(format!(
            "features have width {}, head expects {d}",
            latents.width()
        )));
    }
    let l = latents.0.clone();
    let q = &l * &params.w_q;
    let k = &l * &params.w_k;
    let v = &l * &params.w_v;
    let scores = (&q * k.transpose()) / (d as f64).sqrt();
    let attn = softmax_rows(&scores);
    let h = &attn * &v;
    let mut z1 = &h * &params.w1;
    add_row_bias(&mut z1, &params.b1);
    let u = z1.map(|x| x.max(0.0));
    let mut out = &u * &params.w2;
    add_row_bias(&mut out, &params.b2);
    Ok(ForwardCache {
        l,
        q,
        k,
        v,
        attn,
        h,
        z1,
        u,
        out,
    })
}

/// Maps latent features to relevance-aware features.
pub fn attention_forward(latents: &LatentFeatures, params: &RelevanceHeadParams) -> Result<LatentFeatures> {
    let cache = forward_cached(latents, params)?;
    LatentFeatures::new(cache.out)
}

/// Gradient of a scalar loss with respect to the flat head parameters, given
/// the loss gradient `d_out` with respect to the head output.
pub(crate) fn backward(cache: &ForwardCache, params: &RelevanceHeadParams, d_out: &DMatrix<f64>) -> Vec<f64> {
    let d = params.d();
    let n = cache.l.nrows();
    let d_w2 = cache.u.transpose() * d_out;
    let d_b2 = DVector::from_fn(d, |j, _| d_out.column(j).sum());
    let d_u = d_out * params.w2.transpose();
    let d_z1 = d_u.zip_map(&cache.z1, |g, z| if z > 0.0 { g } else { 0.0 });
    let d_w1 = cache.h.transpose() * &d_z1;
    let d_b1 = DVector::from_fn(d, |j, _| d_z1.column(j).sum());
    let d_h = &d_z1 * params.w1.transpose();
    let d_attn = &d_h * cache.v.transpose();
    let d_v = cache.attn.transpose() * &d_h;
    let mut d_scores = DMatrix::zeros(n, n);
    for i in 0..n {
        let dot: f64 = (0..n).map(|k| cache.attn[(i, k)] * d_attn[(i, k)]).sum();
        for j in 0..n {
            d_scores[(i, j)] = cache.attn[(i, j)] * (d_attn[(i, j)] - dot);
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let d_q = (&d_scores * &cache.k) * scale;
    let d_k = (d_scores.transpose() * &cache.q) * scale;
    let lt = cache.l.transpose();
    let grads = RelevanceHeadParams {
        w_q: &lt * d_q,
        w_k: &lt * d_k,
        w_v: &lt * d_v,
        w1: d_w1,
        b1: d_b1,
        w2: d_w2,
        b2: d_b2,
    };
    grads.to_flat()
}

/// `P_Δ[i][j] = ⟨rᵢ, rⱼ⟩ / (‖rᵢ‖·‖rⱼ‖)` with an exact unit diagonal.
pub fn cosine_relevance(features: &LatentFeatures) -> Result<IpccMatrix> {
    let r = features.matrix();
    let n = r.nrows();
    let norms = row_norms(r)?;
    let mut p = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = (r.row(i).dot(&r.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            p[(i, j)] = c;
            p[(j, i)] = c;
        }
    }
    IpccMatrix::new(p)
}

fn row_norms(r: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..r.nrows())
        .map(|i| {
            let norm = r.row(i).norm();
            if norm > 0.0 {
                Ok(norm)
            } else {
                Err(Error::DegenerateFeature(i))
            }
        })
        .collect()
}

/// Gradient with respect to the rows of `r` of `Σ_{i<j} g_ij · cos(rᵢ, rⱼ)`,
/// with `g` given as the strict upper triangle, row-major.
pub(crate) fn cosine_backward(r: &DMatrix<f64>, upper_grad: &[f64]) -> Result<DMatrix<f64>> {
    let n = r.nrows();
    let norms = row_norms(r)?;
    let mut out = DMatrix::zeros(n, r.ncols());
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let g = upper_grad[k];
            k += 1;
            if g == 0.0 {
                continue;
            }
            let (ri, rj) = (r.row(i), r.row(j));
            let nn = norms[i] * norms[j];
            let c = ri.dot(&rj) / nn;
            let gi = (rj / nn - ri * (c / (norms[i] * norms[i]))) * g;
            let gj = (ri / nn - rj * (c / (norms[j] * norms[j]))) * g;
            let mut row_i = out.row_mut(i);
            row_i += gi;
            let mut row_j = out.row_mut(j);
            row_j += gj;
        }
    }
    Ok(out)
}

/// Attention head followed by cosine similarity.
pub fn head_relevance(latents: &LatentFeatures, params: &RelevanceHeadParams) -> Result<IpccMatrix> {
    cosine_relevance(&attention_forward(latents, params)?)
}

/// Number of leading latent columns that carry kinematic features; the rest
/// hold the agent-slot embedding.
pub const KINEMATIC_FEATURES: usize = 4;

/// Stand-in for a trajectory encoder: builds step-`step` latent features
/// from the scene.
///
/// Row `i` is `[cos φ, sin φ, v/v_ref, (t+1)/T, e_i...]` where `φ` is the
/// agent's heading at the step, `v` its mean observed speed (`v_ref` = 10 m
/// per step), and `e_i` a fixed embedding of agent slot `i` drawn uniformly
/// from `[-1, 1]` out of ChaCha8 stream `i` of `embedding_seed`.
pub fn scene_latents(scene: &SceneSpec, step: usize, d: usize, embedding_seed: u64) -> Result<LatentFeatures> {
    if d < KINEMATIC_FEATURES {
        return Err(Error::Invalid(format!(
            "feature width {d} is below the {KINEMATIC_FEATURES} kinematic features"
        )));
    }
    if step >= scene.t_fut() {
        return Err(Error::Shape(format!("step {step} beyond horizon {}", scene.t_fut())));
    }
    let n = scene.n_agents();
    let t_fut = scene.t_fut() as f64;
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        let phi = scene.yaw()[i][step];
        let past = scene.past()[i].points();
        let speed = if past.len() > 1 {
            let total: f64 = past
                .windows(2)
                .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
                .sum();
            total / (past.len() - 1) as f64
        } else {
            0.0
        };
        m[(i, 0)] = phi.cos();
        m[(i, 1)] = phi.sin();
        m[(i, 2)] = speed / 10.0;
        m[(i, 3)] = (step + 1) as f64 / t_fut;
        let mut rng = ChaCha8Rng::seed_from_u64(embedding_seed);
        rng.set_stream(i as u64);
        for c in KINEMATIC_FEATURES..d {
            m[(i, c)] = rng.random_range(-1.0..=1.0);
        }
    }
    LatentFeatures::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: &[&[f64]]) -> LatentFeatures {
        let d = rows[0].len();
        LatentFeatures::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn cosine_special_cases() {
        let p = cosine_relevance(&features(&[&[1.0, 2.0], &[2.0, 4.0], &[-1.0, -2.0], &[2.0, -1.0]])).unwrap();
        assert!((p.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((p.get(0, 2) + 1.0).abs() < 1e-15);
        assert_eq!(p.get(0, 3), 0.0);
        assert_eq!(p.get(3, 3), 1.0);
    }

    #[test]
    fn zero_row_is_rejected() {
        let err = cosine_relevance(&features(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature(1)));
    }

    #[test]
    fn single_agent_attention_is_transform_of_values() {
        let params = RelevanceHeadParams::init(3, 11).unwrap();
        let l = features(&[&[0.3, -0.7, 1.1]]);
        let out = attention_forward(&l, &params).unwrap();
        let v = l.matrix() * &params.w_v;
        let mut z = &v * &params.w1;
        add_row_bias(&mut z, &params.b1);
        let mut expected = z.map(|x| x.max(0.0)) * &params.w2;
        add_row_bias(&mut expected, &params.b2);
        assert!((out.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let params = RelevanceHeadParams::init(4, 5).unwrap();
        let l = features(&[&[0.1, 0.2, 0.3, 0.4], &[0.1, 0.2, 0.3, 0.4], &[0.1, 0.2, 0.3, 0.4]]);
        let out = attention_forward(&l, &params).unwrap();
        for i in 1..3 {
            assert_eq!(out.matrix().row(0), out.matrix().row(i));
        }
    }

    #[test]
    fn flat_round_trip_and_json() {
        let params = RelevanceHeadParams::init(5, 2).unwrap();
        let flat = params.to_flat();
        assert_eq!(flat.len(), RelevanceHeadParams::param_count(5));
        assert_eq!(RelevanceHeadParams::from_flat(5, &flat).unwrap(), params);
        assert_eq!(RelevanceHeadParams::from_json(&params.to_json()).unwrap(), params);
        let bound = 1.0 / 5f64.sqrt();
        assert!(flat.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let params = RelevanceHeadParams::init(3, 0).unwrap();
        let l = features(&[&[1.0, 2.0]]);
        assert!(matches!(attention_forward(&l, &params), Err(Error::Shape(_))));
    }
}
