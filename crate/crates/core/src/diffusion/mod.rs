//! Noise schedules, forward corruption, analytic posteriors and loss terms
//! for the Gaussian (numerical) and multinomial (categorical) kernels.

pub mod gaussian;
pub mod multinomial;
mod schedule;

pub use gaussian::GaussianPosterior;
pub use multinomial::CategoricalPosterior;
pub use schedule::{NoiseSchedule, ScheduleKind};

/// `L_T = L_G + mean(categorical losses)`; an empty categorical set adds
/// nothing.
pub fn total_loss(gaussian: f64, categorical: &[f64]) -> f64 {
    if categorical.is_empty() {
        gaussian
    } else {
        gaussian + categorical.iter().sum::<f64>() / categorical.len() as f64
    }
}
