//! Dense linear algebra, seeded randomness, the Adam optimizer and feature
//! standardization shared by the learning modules.

mod adam;
mod matrix;
mod rng;
mod standardize;

pub use adam::{AdamConfig, AdamState};
pub(crate) use matrix::gemm;
pub use matrix::Matrix;
pub use rng::SeededRng;
pub use standardize::{Standardizer, STD_FLOOR};
