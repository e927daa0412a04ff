//! Job recommendation engine.
//!
//! Four recommenders over weekly user-item interaction logs, scored with the
//! challenge metric:
//!
//! * [`history`]: ranks items the user already met, with a time-reweighted
//!   linear model learned from triplet constraints,
//! * [`factorization`]: hybrid matrix factorization trained with WARP loss,
//!   optionally re-weighted per week,
//! * [`seqrec`]: an LSTM encoder-decoder over the user's item sequence,
//! * [`ensemble`]: a random forest over the components' scores.
//!
//! The trainable models are generic over [`Scalar`] (`f32`/`f64`); the
//! aliases below name the usual instantiations.

mod binfmt;
pub mod cli;
pub mod datagen;
pub mod dataset;
pub mod ensemble;
mod error;
pub mod factorization;
pub mod history;
pub mod metrics;
pub mod pipeline;
mod scalar;
pub mod seqrec;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TemporalWeightsF32 = history::TemporalWeights<f32>;
pub type TemporalWeightsF64 = history::TemporalWeights<f64>;
pub type MfModelF32 = factorization::EmbeddingModel<f32>;
pub type MfModelF64 = factorization::EmbeddingModel<f64>;
pub type SeqModelF32 = seqrec::SeqModel<f32>;
pub type SeqModelF64 = seqrec::SeqModel<f64>;
