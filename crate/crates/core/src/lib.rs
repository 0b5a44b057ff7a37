//! Long-range divisible sandpiles on the discrete torus.
//!
//! The crate builds the periodized heavy-tailed random-walk kernel, its
//! spectrum, the stabilization dynamics of Gaussian divisible sandpiles, the
//! exact spectral odometer, and the scaling-limit field statistics of the
//! odometer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fft;
pub mod fields;
pub mod kernel;
pub mod montecarlo;
pub mod numerics;
pub mod sandpile;
pub mod solver;
pub mod spectrum;
pub mod torus;

pub use error::{Error, Result};
pub use kernel::{apply_generator, build_kernel, lattice_constant, tail_bound, LongRangeKernel};
pub use montecarlo::seed_stream;
pub use sandpile::{init_deterministic, init_gaussian, stabilize, topple_step, SandpileState};
pub use solver::{green_function, spectral_odometer, OdometerField};
pub use spectrum::{eigenvalues, Spectrum};
pub use torus::{LatticeSpec, TorusPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
