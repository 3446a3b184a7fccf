pub mod classify;
pub mod cohort;
pub mod error;
pub mod evalharness;
pub mod imaging;
pub mod latents;
pub mod nn;
pub mod report;
pub mod rvf;
pub mod seed;

pub use error::{Error, Result};
