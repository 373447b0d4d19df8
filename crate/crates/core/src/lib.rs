//! Community-aware Bayesian truth discovery.
//!
//! Agents report categorical labels on events. Each agent mixes over latent
//! communities, each community carries a confusion matrix, and a social graph
//! links agents through a stochastic block model. [`visit`] fits the
//! variational posterior in batch; [`svisit`] does the same with stochastic
//! minibatches over agents and pairs.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod generator;
pub mod io;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod special;
pub mod svisit;
pub mod visit;

pub use error::{Error, Result};
pub use generator::{generate, GenConfig};
pub use model::{GroundTruth, Hyperparameters, ObservationSet, Report, SocialGraph, VariationalState};
pub use rng::RngStream;
pub use svisit::{run_svisit, SvisitOptions};
pub use visit::{run_visit, VisitOptions};
