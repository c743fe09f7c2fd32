//! Deterministic federated-learning simulator for personalized training on
//! non-i.i.d., long-tailed data.
//!
//! The pipeline has three client/interface/server stages layered on a small
//! hand-differentiated network:
//!
//! * [`bavd`]: clients keep a loss-weighted activation map and drop
//!   activations whose normalised significance falls below the map mean.
//! * [`acmu`]: the interface clusters clients by a mix of weight-delta and
//!   activation-map cosine similarity, picks the cluster count by silhouette,
//!   and averages deltas within each cluster before global aggregation.
//! * [`pkcf`]: the server matches class-averaged classifier gradients with
//!   synthetic features, which clients then use to pre-train their
//!   classifiers.
//!
//! [`fl`] drives rounds end to end, alongside a FedAvg baseline.

pub mod acmu;
pub mod bavd;
pub mod blob;
pub mod data;
pub mod error;
pub mod fl;
pub mod nn;
pub mod pkcf;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
