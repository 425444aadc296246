use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;
pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

/// Precomputed noise levels for timesteps `1..=T`.
///
/// Vectors are stored 0-based: entry `t - 1` belongs to timestep `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: Option<ScheduleKind>,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_variances: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, timesteps: usize) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::Invalid("schedule needs at least one timestep".into()));
        }
        let betas = match kind {
            ScheduleKind::Linear => linear_betas(timesteps),
            ScheduleKind::Cosine => cosine_betas(timesteps),
        };
        let mut s = Self::from_betas(betas)?;
        s.kind = Some(kind);
        Ok(s)
    }

    /// Builds a schedule from explicit `β_1..β_T`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Invalid("schedule needs at least one timestep".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Invalid(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let posterior_variances = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]
            })
            .collect();
        Ok(NoiseSchedule {
            kind: None,
            betas,
            alphas,
            alpha_bars,
            posterior_variances,
        })
    }

    pub fn kind(&self) -> Option<ScheduleKind> {
        self.kind
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            Err(Error::Timestep {
                t,
                max: self.timesteps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `β̃_t = (1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t`; zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variances[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

fn linear_betas(t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![LINEAR_BETA_START];
    }
    let step = (LINEAR_BETA_END - LINEAR_BETA_START) / (t - 1) as f64;
    (0..t).map(|i| LINEAR_BETA_START + step * i as f64).collect()
}

fn cosine_betas(t: usize) -> Vec<f64> {
    let f = |s: f64| {
        let x = (s / t as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    (0..t)
        .map(|i| (1.0 - f((i + 1) as f64) / f(i as f64)).clamp(1e-12, MAX_BETA))
        .collect()
}
