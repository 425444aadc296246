pub mod conditioning;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod io;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
