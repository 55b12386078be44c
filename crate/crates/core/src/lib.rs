#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod array;
pub mod attention;
pub mod autodiff;
pub mod ctc;
pub mod data;
pub mod decoder;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod train;

pub use array::Array;
pub use autodiff::{Gradients, Tape, Var};
pub use ctc::{BoundarySequence, BoundarySource};
pub use error::{Error, Result};
