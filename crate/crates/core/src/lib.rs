pub mod appearance;
pub mod deformation;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod recon;
pub mod semantic;
pub mod skeleton;

pub use error::{Error, Result};
