//! Exactly solvable large-learning-rate models of gradient descent, finite
//! width MLPs with hand-written reverse and forward mode derivatives, the
//! empirical neural tangent kernel, and the experiment procedures that map
//! out the lazy, catapult and divergent learning-rate phases.
//!
//! The crate is `no_std` + `alloc`. The `std` feature only switches on
//! runtime CPU feature detection inside the matrix-multiply kernel.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod experiments;
pub mod numerics;

pub use error::{Error, Result};
pub mod linear;
pub mod linearize;
pub mod mlp;
pub mod phase;
pub mod trace;
pub mod warmup;

pub use phase::{PhaseCriteria, PhaseLabel, PhaseReport};
pub use trace::{trace_reduce, TrainTrace};
