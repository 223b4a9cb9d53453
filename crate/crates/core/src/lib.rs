//! Parameter-matched audio sequence classifiers built on a small
//! reverse-mode autodiff core.

pub mod autodiff;
pub mod backbone;
pub mod bench;
pub mod data;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod kv;
pub mod memory;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Padding, Pointwise, Tape, Var};
pub use error::{Error, Result};
pub use memory::MemoryTracker;
pub use params::{Bindings, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
