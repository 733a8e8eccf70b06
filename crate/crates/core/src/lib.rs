#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod arrowhead;
pub mod data;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod krr;
pub mod linalg;
mod math;
pub mod msk;
pub mod net;
pub mod precond;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{eigh, frobenius_distance, solve_spd, Matrix, SpectralDecomposition, SymMatrix};
