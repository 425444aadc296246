use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ConditionSpec;
use super::network::Denoiser;
use crate::data::EncodedBatch;
use crate::diffusion::{multinomial, total_loss, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng;

/// Corrupted rows together with everything the loss needs.
#[derive(Debug, Clone)]
pub struct NoisyBatch {
    /// Clean rows, row-major over the diffusion layout.
    pub x0: Vec<f64>,
    /// Corrupted rows fed to the network.
    pub x_t: Vec<f64>,
    /// Gaussian noise of the numeric block, rows × numeric.
    pub noise: Vec<f64>,
    pub ts: Vec<usize>,
    pub conds: Vec<ConditionSpec>,
}

/// Draws a categorical index from `probs`.
pub(crate) fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples `t`, numeric noise and categorical corruption for each row.
pub fn corrupt<R: Rng>(
    model: &Denoiser,
    x0: &[f64],
    conds: Vec<ConditionSpec>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> NoisyBatch {
    let layout = model.layout();
    let (w, nn) = (layout.width(), layout.numeric);
    let rows = conds.len();
    let mut x_t = vec![0.0; rows * w];
    let mut noise = vec![0.0; rows * nn];
    let mut ts = Vec::with_capacity(rows);
    for r in 0..rows {
        let t = rng.gen_range(1..=sched.timesteps());
        ts.push(t);
        let ab = sched.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let row = &x0[r * w..(r + 1) * w];
        let out = &mut x_t[r * w..(r + 1) * w];
        for j in 0..nn {
            let e: f64 = rng.sample(StandardNormal);
            noise[r * nn + j] = e;
            out[j] = a * row[j] + b * e;
        }
        for (off, k) in layout.blocks() {
            let probs = multinomial::marginal(&row[off..off + k], t, sched).expect("encoded blocks are simplices");
            out[off + sample_index(&probs, rng)] = 1.0;
        }
    }
    NoisyBatch {
        x0: x0.to_vec(),
        x_t,
        noise,
        ts,
        conds,
    }
}

/// Per-row objective averaged over the batch:
/// `L_T = mse(ε, ε̂) + mean_i L_i` with `L_i` the categorical step losses.
/// When `grad` is given, `∂L/∂params` is accumulated into it.
fn objective(model: &Denoiser, batch: &NoisyBatch, sched: &NoiseSchedule, grad: Option<&mut [f64]>) -> f64 {
    let layout = model.layout();
    let (w, nn) = (layout.width(), layout.numeric);
    let rows = batch.ts.len();
    if rows == 0 {
        return 0.0;
    }
    let (out, cache) = model.forward_cached(&batch.x_t, &batch.ts, &batch.conds);
    let mut d_out = vec![0.0; out.len()];
    let n_blocks = layout.cardinalities.len();
    let inv_rows = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut cat = vec![0.0; n_blocks];
    for r in 0..rows {
        let o = &out[r * w..(r + 1) * w];
        let g = &mut d_out[r * w..(r + 1) * w];
        let mut lg = 0.0;
        for j in 0..nn {
            let diff = o[j] - batch.noise[r * nn + j];
            lg += diff * diff;
            g[j] = 2.0 * diff / nn as f64 * inv_rows;
        }
        if nn > 0 {
            lg /= nn as f64;
        }
        let t = batch.ts[r];
        let xt = &batch.x_t[r * w..(r + 1) * w];
        let x0 = &batch.x0[r * w..(r + 1) * w];
        for (b, (off, k)) in layout.blocks().enumerate() {
            let range = off..off + k;
            cat[b] =
                multinomial::step_loss_logit_grad(&xt[range.clone()], &x0[range.clone()], &o[range.clone()], t, sched, &mut g[range.clone()]);
            for v in &mut g[range] {
                *v *= inv_rows / n_blocks as f64;
            }
        }
        total += total_loss(lg, &cat);
    }
    if let Some(grad) = grad {
        model.backward(&cache, &d_out, grad);
    }
    total * inv_rows
}

impl Denoiser {
    pub fn loss(&self, batch: &NoisyBatch, sched: &NoiseSchedule) -> f64 {
        objective(self, batch, sched, None)
    }

    /// Loss and its gradient with respect to the flat parameter vector.
    pub fn loss_and_gradient(&self, batch: &NoisyBatch, sched: &NoiseSchedule) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let l = objective(self, batch, sched, Some(&mut grad));
        (l, grad)
    }
}

/// Adaptive-moment update rule.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Training rows in the diffusion layout with their conditions.
pub struct TrainingData<'a> {
    pub x0: &'a EncodedBatch,
    pub conditions: &'a [ConditionSpec],
}

/// Drops the label and each sensitive condition independently.
fn drop_conditions<R: Rng>(cond: &ConditionSpec, p: f64, rng: &mut R) -> ConditionSpec {
    let mut keep = |v: Option<u32>| if rng.gen::<f64>() < p { None } else { v };
    ConditionSpec {
        label: keep(cond.label),
        sensitive: cond.sensitive.iter().map(|&s| keep(s)).collect(),
    }
}

/// Minimizes the objective with Adam over `config.epochs` passes.
/// Returns the mean loss of every epoch; `on_epoch` sees each as it ends.
pub fn train(
    model: &mut Denoiser,
    data: &TrainingData<'_>,
    sched: &NoiseSchedule,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let cfg = model.config().clone();
    if data.x0.layout() != model.layout() {
        return Err(Error::WidthMismatch {
            expected: model.layout().width(),
            got: data.x0.width(),
        });
    }
    let n = data.x0.rows();
    if n != data.conditions.len() {
        return Err(Error::Invalid(format!("{n} rows but {} conditions", data.conditions.len())));
    }
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if n == 0 {
        return Err(Error::Empty("training data"));
    }
    for c in data.conditions {
        model.cards().check(c)?;
    }

    let mut rng = rng::stream(rng::derive(cfg.seed, "train"), 0);
    let mut adam = Adam::new(model.param_count(), cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let w = model.layout().width();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; model.param_count()];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut x0 = Vec::with_capacity(chunk.len() * w);
            let mut conds = Vec::with_capacity(chunk.len());
            for &r in chunk {
                x0.extend_from_slice(data.x0.row(r));
                conds.push(drop_conditions(&data.conditions[r], cfg.p_uncond, &mut rng));
            }
            let batch = corrupt(model, &x0, conds, sched, &mut rng);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = objective(model, &batch, sched, Some(&mut grad));
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.update(model.params_mut(), &grad);
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    model.add_trained_epochs(cfg.epochs);
    Ok(curve)
}
