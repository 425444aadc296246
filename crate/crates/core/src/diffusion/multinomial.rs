//! Multinomial kernel for categorical blocks.
//!
//! Each step mixes the current distribution with the uniform one:
//! `q(x_t | x_{t−1}) = Cat((1−β_t)·x_{t−1} + β_t/K)`.

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

pub const INPUT_SIMPLEX_TOL: f64 = 1e-6;

/// Normalized categorical distribution over `x_{t−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPosterior {
    pub probs: Vec<f64>,
}

fn check_simplex(x: &[f64]) -> Result<()> {
    let sum: f64 = x.iter().sum();
    if x.is_empty() || (sum - 1.0).abs() > INPUT_SIMPLEX_TOL || x.iter().any(|&p| p < -INPUT_SIMPLEX_TOL) {
        return Err(Error::NotSimplex(sum));
    }
    Ok(())
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

pub fn forward_step(x_prev: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    check_simplex(x_prev)?;
    let b = sched.beta(t);
    let k = x_prev.len() as f64;
    Ok(x_prev.iter().map(|p| (1.0 - b) * p + b / k).collect())
}

/// Closed-form marginal `q(x_t | x0) = Cat(ᾱ_t·x0 + (1−ᾱ_t)/K)`.
pub fn marginal(x0: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > sched.timesteps() {
        return Err(Error::Timestep {
            t,
            max: sched.timesteps(),
        });
    }
    check_simplex(x0)?;
    let ab = sched.alpha_bar(t);
    let k = x0.len() as f64;
    Ok(x0.iter().map(|p| ab * p + (1.0 - ab) / k).collect())
}

/// Unnormalized `θ̃ = [α_t·x_t + (1−α_t)/K] ⊙ [ᾱ_{t−1}·x0 + (1−ᾱ_{t−1})/K]`.
fn theta(x_t: &[f64], x0: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let k = x_t.len() as f64;
    let a = sched.alpha(t);
    let ab = sched.alpha_bar(t - 1);
    x_t.iter()
        .zip(x0)
        .map(|(xt, x0)| (a * xt + (1.0 - a) / k) * (ab * x0 + (1.0 - ab) / k))
        .collect()
}

/// `q(x_{t−1} | x_t, x0) = Cat(θ̃ / Σθ̃)`.
pub fn posterior(x_t: &[f64], x0: &[f64], t: usize, sched: &NoiseSchedule) -> Result<CategoricalPosterior> {
    sched.check(t)?;
    same_width(x_t, x0)?;
    check_simplex(x0)?;
    let th = theta(x_t, x0, t, sched);
    let sum: f64 = th.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::NotSimplex(sum));
    }
    Ok(CategoricalPosterior {
        probs: th.into_iter().map(|v| v / sum).collect(),
    })
}

/// KL divergence `Σ p·ln(p/q)`, with `0·ln 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p.ln() - q.ln()))
        .sum()
}

/// Per-timestep categorical loss.
///
/// For `t ≥ 2`: `KL(q(x_{t−1}|x_t,x0) ‖ q(x_{t−1}|x_t,x̂0))`.
/// For `t = 1`: `−Σ x0·ln q(x0|x_1, x̂0)`, the negative log-likelihood of
/// the true category.
pub fn step_loss(x_t: &[f64], x0: &[f64], x0_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<f64> {
    check_simplex(x0_hat)?;
    let pred = posterior(x_t, x0_hat, t, sched)?;
    if t == 1 {
        same_width(x0, x0_hat)?;
        return Ok(-x0
            .iter()
            .zip(&pred.probs)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, p)| x * p.ln())
            .sum::<f64>());
    }
    let truth = posterior(x_t, x0, t, sched)?;
    Ok(kl(&truth.probs, &pred.probs))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `step_loss` with `x̂0 = softmax(logits)`, plus its gradient with respect
/// to the logits. Used by training.
pub(crate) fn step_loss_logit_grad(
    x_t: &[f64],
    x0: &[f64],
    logits: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    grad: &mut [f64],
) -> f64 {
    let k = x_t.len() as f64;
    let x0_hat = softmax(logits);
    let a = sched.alpha(t);
    let ab = sched.alpha_bar(t - 1);
    let left: Vec<f64> = x_t.iter().map(|xt| a * xt + (1.0 - a) / k).collect();
    let th: Vec<f64> = left.iter().zip(&x0_hat).map(|(l, p)| l * (ab * p + (1.0 - ab) / k)).collect();
    let sum: f64 = th.iter().sum();

    // target distribution: the true posterior, or x0 itself at t = 1
    let target: Vec<f64> = if t == 1 {
        x0.to_vec()
    } else {
        let tt = theta(x_t, x0, t, sched);
        let s: f64 = tt.iter().sum();
        tt.into_iter().map(|v| v / s).collect()
    };
    let target_mass: f64 = target.iter().sum();

    let mut loss = 0.0;
    for (q, th) in target.iter().zip(&th) {
        if *q > 0.0 {
            let ln_p = th.ln() - sum.ln();
            loss -= q * ln_p;
            if t > 1 {
                loss += q * q.ln();
            }
        }
    }
    // d/dθ̃_j = −q_j/θ̃_j + Σq/Σθ̃ ; dθ̃_j/dx̂0_j = left_j·ᾱ_{t−1}
    let g_x: Vec<f64> = (0..th.len())
        .map(|j| (-target[j] / th[j] + target_mass / sum) * left[j] * ab)
        .collect();
    let dot: f64 = g_x.iter().zip(&x0_hat).map(|(g, p)| g * p).sum();
    for j in 0..th.len() {
        grad[j] = x0_hat[j] * (g_x[j] - dot);
    }
    loss
}

/// `D(q(x_T | x0) ‖ Uniform(K))`.
pub fn prior_kl(x0: &[f64], sched: &NoiseSchedule) -> Result<f64> {
    let m = marginal(x0, sched.timesteps(), sched)?;
    let u = vec![1.0 / x0.len() as f64; x0.len()];
    Ok(kl(&m, &u))
}
