//! Multi-granularity cellular-complex contrastive learning for graphs.
//!
//! Graphs are lifted into nested ring-based cellular complexes (one per
//! maximum ring size), encoded by a sum-aggregation GIN and a shared
//! cellular message-passing network, and trained with a common-space
//! contrastive loss plus uncertainty-weighted per-granularity decoupled
//! losses. Learned embeddings are scored with a linear probe.
//!
//! The numeric core is generic over [`Scalar`]; the `*64` aliases below are
//! what the pipeline and CLI use.

pub mod autodiff;
mod binio;
pub mod cli;
pub mod config;

pub mod complex;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod graph_io;
pub mod objectives;
pub mod report;
pub mod scalar;
pub mod training;


pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type ModelParams64 = encoders::ModelParams<f64>;
pub type ModelParams32 = encoders::ModelParams<f32>;
pub type ProjectedViews64 = objectives::ProjectedViews<f64>;
