//! Simulation and optimal control of an LC oscillator coupled to a
//! mechanical resonator through `g a†a (b + b†)`, with modulated coupling.

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod hilbert;
pub mod dynamics;
pub mod modulation;
pub mod control;
pub mod circuit;
pub mod cli;

pub use error::{Error, Result};
