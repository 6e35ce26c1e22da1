//! Open-set domain adaptation with entropy-weighted adversarial alignment
//! and extreme-value rejection of unknown classes.
//!
//! A feature extractor, a label classifier and a domain classifier are
//! trained jointly. Confident target samples are weighted up in the domain
//! loss, source samples of deliberately held-out classes are pushed towards
//! maximum entropy, and a generalized extreme value distribution fitted to
//! the tail of source entropies decides at test time which target samples
//! belong to no known class.

// `!(x > 0.0)` is used on purpose so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evt;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use evt::{fit_gev_mle, gev_cdf, gev_pdf, gev_sample, gev_t, reject_unknown, GevParams};
pub use model::{ModelParams, ModelSpecs};
pub use pipeline::{evaluate, infer, train, EvalReport, Prediction, TrainConfig};
pub use tensor::Tensor;
