//! Sequence recognition with intra/inter gloss attention over chunked
//! frame sequences, trained with CTC.
//!
//! The numeric core is generic over [`Scalar`](numcore::Scalar) (`f32` or
//! `f64`); training runs in `f64`.

pub mod attention;
pub mod bench;
pub mod ctc;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};

pub type Matrix64 = numcore::Matrix<f64>;
pub type Matrix32 = numcore::Matrix<f32>;
pub type ParamSet64 = numcore::ParamSet<f64>;
pub type ParamSet32 = numcore::ParamSet<f32>;
pub type Tape64 = numcore::Tape<f64>;
pub type Tape32 = numcore::Tape<f32>;
pub type LogProbs64 = ctc::LogProbMatrix<f64>;
pub type LogProbs32 = ctc::LogProbMatrix<f32>;
