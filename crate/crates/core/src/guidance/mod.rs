//! Classifier-free guidance with gated, momentum-smoothed sensitive terms.
//!
//! Every estimate here is a full output row of the denoiser: predicted
//! noise for the numeric block followed by `x̂0` logits for each
//! categorical block. The same elementwise rules apply to both parts.

mod sampler;

pub use sampler::{label_guided_sample, reverse_sample, reverse_sample_streams, SAMPLE_CHUNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Overall guidance weight.
    pub w_g: f64,
    /// Sensitive guidance weight inside the gate.
    pub w_s: f64,
    /// Gate threshold.
    pub lambda: f64,
    /// Warm-up: sensitive guidance is off for `t < delta`.
    pub delta: usize,
    /// Momentum weight.
    pub w_m: f64,
    /// Momentum correction factor.
    pub beta_m: f64,
    /// What the gate compares on categorical blocks.
    pub gate_space: GateSpace,
}

/// Quantity the security gate compares on categorical blocks. Numeric
/// elements always compare noise estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateSpace {
    /// Raw network logits.
    Logit,
    /// Softmax probabilities of the predicted clean category.
    Probability,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            w_g: 1.0,
            w_s: 1.0,
            lambda: 1.0,
            delta: 0,
            w_m: 0.5,
            beta_m: 0.5,
            gate_space: GateSpace::Probability,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta_m) {
            return Err(Error::Config(format!("guidance.beta_m {} outside [0, 1]", self.beta_m)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("guidance.lambda {} must be positive", self.lambda)));
        }
        for (name, v) in [("w_g", self.w_g), ("w_s", self.w_s), ("w_m", self.w_m)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("guidance.{name} must be finite")));
            }
        }
        Ok(())
    }
}

fn same_width(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::WidthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `γ(z_t, c) = est_label − est_uncond`.
pub fn label_guidance(est_uncond: &[f64], est_label: &[f64]) -> Result<Vec<f64>> {
    same_width(est_uncond, est_label)?;
    Ok(est_label.iter().zip(est_uncond).map(|(l, u)| l - u).collect())
}

/// Elementwise gate: `max(1, w_s·|d|)` where `|d| < λ`, else 0, with
/// `d = est_label − est_sensitive`.
pub fn security_gate(est_label: &[f64], est_sensitive: &[f64], w_s: f64, lambda: f64) -> Vec<f64> {
    est_label
        .iter()
        .zip(est_sensitive)
        .map(|(l, s)| {
            let d = (l - s).abs();
            if d < lambda {
                (w_s * d).max(1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Running momentum `ν` of one sensitive attribute; starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub nu: Vec<f64>,
}

impl MomentumState {
    pub fn new(width: usize) -> Self {
        MomentumState { nu: vec![0.0; width] }
    }
}

/// One sensitive term `γ_t = μ⊙(est_sensitive − est_uncond) + w_m·ν`,
/// followed by `ν ← β_m·ν + (1−β_m)·γ_t`. Zero, with `ν` untouched, while
/// `t < δ`.
pub fn sensitive_guidance_step(
    est_uncond: &[f64],
    est_label: &[f64],
    est_sensitive: &[f64],
    cfg: &GuidanceConfig,
    state: &mut MomentumState,
    t: usize,
) -> Result<Vec<f64>> {
    sensitive_guidance_step_gated(est_uncond, est_sensitive, est_label, est_sensitive, cfg, state, t)
}

/// As `sensitive_guidance_step`, with the gate computed from `gate_label`
/// and `gate_sensitive` instead of the estimates themselves.
pub fn sensitive_guidance_step_gated(
    est_uncond: &[f64],
    est_sensitive: &[f64],
    gate_label: &[f64],
    gate_sensitive: &[f64],
    cfg: &GuidanceConfig,
    state: &mut MomentumState,
    t: usize,
) -> Result<Vec<f64>> {
    same_width(est_uncond, est_sensitive)?;
    same_width(est_uncond, gate_label)?;
    same_width(est_uncond, gate_sensitive)?;
    same_width(est_uncond, &state.nu)?;
    if t < cfg.delta {
        return Ok(vec![0.0; est_uncond.len()]);
    }
    let gate = security_gate(gate_label, gate_sensitive, cfg.w_s, cfg.lambda);
    let gamma: Vec<f64> = (0..est_uncond.len())
        .map(|e| gate[e] * (est_sensitive[e] - est_uncond[e]) + cfg.w_m * state.nu[e])
        .collect();
    for (nu, g) in state.nu.iter_mut().zip(&gamma) {
        *nu = cfg.beta_m * *nu + (1.0 - cfg.beta_m) * g;
    }
    Ok(gamma)
}

pub fn multi_attribute_guidance(
    est_uncond: &[f64],
    est_label: &[f64],
    est_sensitive: &[&[f64]],
    cfg: &GuidanceConfig,
    states: &mut [MomentumState],
    t: usize,
) -> Result<Vec<f64>> {
    multi_attribute_guidance_gated(est_uncond, est_sensitive, est_label, est_sensitive, cfg, states, t)
}

/// Sum of the per-attribute terms, with gates computed from separate
/// comparison vectors.
pub fn multi_attribute_guidance_gated(
    est_uncond: &[f64],
    est_sensitive: &[&[f64]],
    gate_label: &[f64],
    gate_sensitive: &[&[f64]],
    cfg: &GuidanceConfig,
    states: &mut [MomentumState],
    t: usize,
) -> Result<Vec<f64>> {
    if est_sensitive.len() != states.len() || gate_sensitive.len() != states.len() {
        return Err(Error::Invalid(format!(
            "{} sensitive estimates for {} momentum states",
            est_sensitive.len(),
            states.len()
        )));
    }
    let mut total = vec![0.0; est_uncond.len()];
    for ((s, gs), state) in est_sensitive.iter().zip(gate_sensitive).zip(states.iter_mut()) {
        let g = sensitive_guidance_step_gated(est_uncond, s, gate_label, gs, cfg, state, t)?;
        for (acc, v) in total.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok(total)
}

pub fn guided_estimate(est_uncond: &[f64], gamma_c: &[f64], gamma_s: Option<&[f64]>, w_g: f64) -> Result<Vec<f64>> {
    same_width(est_uncond, gamma_c)?;
    match gamma_s {
        None => Ok(est_uncond.iter().zip(gamma_c).map(|(u, c)| u + w_g * c).collect()),
        Some(s) => {
            same_width(est_uncond, s)?;
            Ok((0..est_uncond.len())
                .map(|e| est_uncond[e] + w_g * (gamma_c[e] + s[e]))
                .collect())
        }
    }
}
