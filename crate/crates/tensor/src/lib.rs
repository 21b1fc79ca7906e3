//! Small reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Just enough to train a desk-scale transformer encoder with a classification
//! head: affine maps, attention primitives, layer norm, and the two losses the
//! pipeline needs. Everything is single-threaded and deterministic.

pub mod optim;
pub mod params;
pub mod tape;

pub use optim::Adam;
pub use params::{Grads, Matrix, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Var};
