//! Numerical core for a five-diagonal unitary Floquet model built from 2×2
//! scattering blocks: operator assembly, banded evolution, transfer-matrix
//! cocycles, spectral measures with their Clark transforms, and the staged
//! construction of a resonant frequency.
#![no_std]
// `!(x > y)` comparisons reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod betasearch;
pub mod cocycle;
pub mod error;
pub mod evolution;
pub mod model;
pub mod operator;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{make_params, BetaValue, Dyadic, ModelParams, PhaseSequence};
