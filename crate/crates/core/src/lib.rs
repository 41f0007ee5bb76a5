//! Large deviations of heat and entropy production for finite Markov chains
//! driven by time-periodic rates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod counterexample;
pub mod error;
pub mod ldp;
pub mod linalg;
pub mod propagator;
pub mod protocol;
pub mod simulate;

pub use error::{Error, ErrorClass, Result};
pub use propagator::{Direction, Functional, LawView, Tilt};
pub use protocol::{RateModel, RateProtocol, Reversed, ValidatedProtocol};
