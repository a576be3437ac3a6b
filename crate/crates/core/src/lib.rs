//! Kernels as quantized combinations of a shared orthonormal basis held in
//! RRAM crossbars.
//!
//! The crate covers the whole pipeline: basis construction and decomposition
//! ([`linalg`]), a value-exact bit-serial crossbar model ([`crossbar`]),
//! contest-aware packing of TG configurations ([`scheduler`]), analytic
//! cycle and energy-delay accounting against reprogramming baselines
//! ([`cost`]), the alternating basis/coefficient trainer ([`trainer`]), the
//! on-disk formats ([`format`]) and checkpoint evaluation ([`inference`]).

pub mod cost;
pub mod crossbar;
pub mod error;
pub mod format;
pub mod inference;
pub mod linalg;
pub mod mask;
pub mod network;
pub mod scheduler;
pub mod trainer;

pub use error::{Error, Result};
