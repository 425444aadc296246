//! Gaussian kernel for the numerical block.

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Isotropic Gaussian over `x_{t-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub variance: f64,
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

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_sample(x0: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    same_width(x0, noise)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// One forward step `x_t = √(1−β_t)·x_{t−1} + √β_t·ε`.
pub fn forward_step(x_prev: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    same_width(x_prev, noise)?;
    let b = sched.beta(t);
    let (a, s) = ((1.0 - b).sqrt(), b.sqrt());
    Ok(x_prev.iter().zip(noise).map(|(x, e)| a * x + s * e).collect())
}

/// `μ = (x_t − β_t/√(1−ᾱ_t)·ε) / √α_t`, variance `β̃_t`.
///
/// With the true noise this is the forward posterior; with a predicted
/// noise it is the reverse-process mean. Both callers share this body.
fn eps_mean(x_t: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule) -> Result<GaussianPosterior> {
    sched.check(t)?;
    same_width(x_t, eps)?;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    Ok(GaussianPosterior {
        mean: x_t.iter().zip(eps).map(|(x, e)| inv * (x - coef * e)).collect(),
        variance: sched.posterior_variance(t),
    })
}

/// Forward posterior `q(x_{t−1} | x_t, x0)` written in terms of the noise
/// that produced `x_t`.
pub fn posterior_mean(x_t: &[f64], noise: &[f64], t: usize, sched: &NoiseSchedule) -> Result<GaussianPosterior> {
    eps_mean(x_t, noise, t, sched)
}

/// Reverse-process mean from a predicted noise.
pub fn estimated_mean(x_t: &[f64], eps_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<GaussianPosterior> {
    eps_mean(x_t, eps_hat, t, sched)
}

/// Mean squared error over elements; zero for empty vectors.
pub fn gaussian_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    same_width(eps, eps_hat)?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    Ok(eps.iter().zip(eps_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / eps.len() as f64)
}

/// `D(q(x_T | x0) ‖ N(0, I))` averaged over dimensions.
pub fn prior_kl(x0: &[f64], sched: &NoiseSchedule) -> f64 {
    if x0.is_empty() {
        return 0.0;
    }
    let ab = sched.alpha_bar(sched.timesteps());
    let var = 1.0 - ab;
    x0.iter()
        .map(|x| 0.5 * (ab * x * x + var - 1.0 - var.ln()))
        .sum::<f64>()
        / x0.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::ScheduleKind;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleKind::Linear, 50).unwrap()
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = sched();
        let x = forward_sample(&[2.0, -1.0], 10, &[0.0, 0.0], &s).unwrap();
        let a = s.alpha_bar(10).sqrt();
        assert_eq!(x, vec![2.0 * a, -a]);
    }

    #[test]
    fn zero_signal_keeps_scaled_noise() {
        let s = sched();
        let x = forward_sample(&[0.0, 0.0], 7, &[1.0, 0.0], &s).unwrap();
        assert_eq!(x, vec![(1.0 - s.alpha_bar(7)).sqrt(), 0.0]);
    }

    #[test]
    fn out_of_range_timestep() {
        assert!(forward_sample(&[0.0], 0, &[0.0], &sched()).is_err());
        assert!(forward_sample(&[0.0], 51, &[0.0], &sched()).is_err());
    }

    #[test]
    fn chained_steps_match_closed_form_in_distribution() {
        let s = sched();
        let (t, x0, n) = (20, 1.5, 100_000);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = vec![x0];
            for k in 1..=t {
                let e: f64 = rng.sample(StandardNormal);
                x = forward_step(&x, k, &[e], &s).unwrap();
            }
            xs.push(x[0]);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (m, v) = (s.alpha_bar(t).sqrt() * x0, 1.0 - s.alpha_bar(t));
        let se_mean = (v / n as f64).sqrt();
        let se_var = v * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - m).abs() < 3.0 * se_mean, "mean {mean} vs {m}");
        assert!((var - v).abs() < 3.0 * se_var, "var {var} vs {v}");
    }

    #[test]
    fn first_step_is_deterministic_and_recovers_x0() {
        let s = sched();
        let x0 = [0.3, -1.2];
        let e = [0.5, 2.0];
        let xt = forward_sample(&x0, 1, &e, &s).unwrap();
        let p = posterior_mean(&xt, &e, 1, &s).unwrap();
        assert_eq!(p.variance, 0.0);
        for (m, x) in p.mean.iter().zip(x0) {
            assert!((m - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_predicted_noise_rescales() {
        let s = sched();
        let p = estimated_mean(&[1.0, 2.0], &[0.0, 0.0], 5, &s).unwrap();
        let a = s.alpha(5).sqrt();
        assert_eq!(p.mean, vec![1.0 / a, 2.0 / a]);
    }

    #[test]
    fn estimated_mean_matches_scalar_oracle() {
        let s = sched();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let t = rng.gen_range(1..=50);
            let xt: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let eh: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let p = estimated_mean(&xt, &eh, t, &s).unwrap();
            for i in 0..4 {
                let b = s.betas()[t - 1];
                let ab: f64 = s.betas()[..t].iter().map(|b| 1.0 - b).product();
                let want = (xt[i] - b / (1.0 - ab).sqrt() * eh[i]) / (1.0 - b).sqrt();
                assert!((p.mean[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_reverse_step_with_true_noise_moves_toward_data() {
        let s = sched();
        let t = s.timesteps();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (mut before, mut after) = (0.0, 0.0);
        for _ in 0..5000 {
            let x0: f64 = 2.0 + rng.sample::<f64, _>(StandardNormal) * 0.1;
            let e: f64 = rng.sample(StandardNormal);
            let xt = forward_sample(&[x0], t, &[e], &s).unwrap();
            let p = estimated_mean(&xt, &[e], t, &s).unwrap();
            let z: f64 = rng.sample(StandardNormal);
            let prev = p.mean[0] + p.variance.sqrt() * z;
            before += (xt[0] - x0).powi(2);
            after += (prev - x0).powi(2);
        }
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn loss_values() {
        assert_eq!(gaussian_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(gaussian_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(gaussian_loss(&[], &[]).unwrap(), 0.0);
        assert!(gaussian_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn prior_term_is_negligible_for_linear_thousand() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        // ±5.2 is the extreme output of a quantile transform clipped at 1e-7.
        let kl = prior_kl(&[5.2, -5.2, 0.0, 1.0], &s);
        assert!(kl <= 1e-3, "{kl}");
        assert!(prior_kl(&[5.2], &s) <= 1e-3);
    }
}
