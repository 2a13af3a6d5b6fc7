//! Dense numeric primitives: matrices, parameters, seeded randomness,
//! forward/backward ops, a reverse-mode tape and a finite-difference
//! gradient verifier.

pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tape;

pub use gradcheck::{grad_check, FnObjective, GradCheckReport, Objective};
pub use matrix::{Mask, Matrix};
pub use param::{ParamId, ParamSet, Parameter};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use tape::{Placement, RowMap, Tape, Var};
