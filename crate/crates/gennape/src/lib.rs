//! Generalizable neural architecture performance estimation.
//!
//! The pipeline: represent architectures as computation graphs, embed them
//! with a contrastively trained graph encoder weighted by spectral
//! distance, soft-cluster the embeddings with Fuzzy C-Means, predict
//! transformed accuracy with an MLP ensemble gated by cluster memberships,
//! combine six constituent predictors, evaluate with ranking metrics, and
//! search over graphs by mutation.

pub mod container;
pub mod encoder;
pub mod families;
pub mod fcm;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod persist;
pub mod predictor;
pub mod search;
pub mod spectral;
pub mod tape;
