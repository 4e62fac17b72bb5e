//! Scene-level joint Gaussian modeling of multi-agent futures.
//!
//! Per-agent marginal position Gaussians are extended to one joint Gaussian
//! over all agents per time step. The cross-agent structure is carried by a
//! single correlation per agent pair between the agents' one-dimensional
//! motion increments ([`ipcc::IpccMatrix`]), projected back to x-y
//! correlations through approximate headings.
//!
//! Modules, bottom up:
//!
//! * [`scene`]: trajectories, scenes, predicted modes and their JSON files;
//! * [`gaussian`]: regularization, Cholesky, NLL, sampling, marginals;
//! * [`ipcc`]: headings, projection and joint assembly;
//! * [`relevance`]: attention head and cosine similarity producing `P_Δ`;
//! * [`scenes`]: synthetic interacting-agent scenes and oracle estimators;
//! * [`fit`]: maximum-likelihood fitting of `P_Δ`;
//! * [`metrics`]: minJointADE / minJointFDE;
//! * [`cli`]: the `ipcc` command line.

pub mod cli;
pub mod error;
pub mod fit;
pub mod gaussian;
pub mod ipcc;
pub mod metrics;
pub mod relevance;
pub mod scene;
pub mod scenes;

pub use error::{Error, Result};
