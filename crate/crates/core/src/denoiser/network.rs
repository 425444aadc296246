//! Residual feed-forward posterior estimator.
//!
//! ```text
//! h = z·W_in + b_in + temb(t)·W_time + (E_label[c] + Σ_i E_i[s_i])·W_cond
//! repeat depth: h = h + silu(silu(h)·W1 + b1)·W2 + b2
//! out = silu(h)·W_out + b_out
//! ```
//!
//! `out` has the width of the diffusion row: the leading numeric entries are
//! the predicted noise, each categorical block holds logits of `x̂0`.
//! Every embedding table has one extra trailing row, the learned null
//! embedding used for ABSENT conditions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ConditionCards, ConditionSpec, DenoiserConfig};
use crate::data::BlockLayout;
use crate::error::{Error, Result};
use crate::rng;

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub slots: Vec<Slot>,
}

impl ParamLayout {
    fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let offset = self.total();
        self.slots.push(Slot {
            name: name.into(),
            offset,
            rows,
            cols,
        });
        self.slots.len() - 1
    }

    pub fn total(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len())
    }
}

/// Indices into `ParamLayout::slots`.
#[derive(Debug, Clone)]
struct Wiring {
    w_in: usize,
    b_in: usize,
    w_time: usize,
    w_cond: usize,
    emb_label: usize,
    emb_sensitive: Vec<usize>,
    blocks: Vec<[usize; 4]>,
    w_out: usize,
    b_out: usize,
}

fn build_layout(config: &DenoiserConfig, width: usize, cards: &ConditionCards) -> (ParamLayout, Wiring) {
    let (h, c) = (config.hidden, config.cond_dim);
    let mut l = ParamLayout { slots: Vec::new() };
    let w_in = l.push("in.w", width, h);
    let b_in = l.push("in.b", 1, h);
    let w_time = l.push("time.w", config.time_dim, h);
    let w_cond = l.push("cond.w", c, h);
    let emb_label = l.push("emb.label", cards.label + 1, c);
    let emb_sensitive = cards
        .sensitive
        .iter()
        .enumerate()
        .map(|(i, &k)| l.push(format!("emb.sensitive{i}"), k + 1, c))
        .collect();
    let blocks = (0..config.depth)
        .map(|k| {
            [
                l.push(format!("block{k}.w1"), h, h),
                l.push(format!("block{k}.b1"), 1, h),
                l.push(format!("block{k}.w2"), h, h),
                l.push(format!("block{k}.b2"), 1, h),
            ]
        })
        .collect();
    let w_out = l.push("out.w", h, width);
    let b_out = l.push("out.b", 1, width);
    (
        l,
        Wiring {
            w_in,
            b_in,
            w_time,
            w_cond,
            emb_label,
            emb_sensitive,
            blocks,
            w_out,
            b_out,
        },
    )
}

/// Parameter count implied by the configuration alone.
pub fn expected_param_count(config: &DenoiserConfig, width: usize, cards: &ConditionCards) -> usize {
    let (h, c) = (config.hidden, config.cond_dim);
    let tables: usize = (cards.label + 1) + cards.sensitive.iter().map(|k| k + 1).sum::<usize>();
    width * h + h + config.time_dim * h + c * h + tables * c + config.depth * 2 * (h * h + h) + h * width + width
}

/// Split network output for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub eps: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    layout: BlockLayout,
    cards: ConditionCards,
    params: Vec<f64>,
    slots: ParamLayout,
    wiring: Wiring,
    trained_epochs: usize,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `c[m×n] += a[m×k] · b[k×n]`, row-major. Each output row depends only on
/// its own input row, in a fixed summation order.
fn gemm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (cij, bpj) in ci.iter_mut().zip(bp) {
                *cij += aip * bpj;
            }
        }
    }
}

/// `c[k×n] += aᵀ · g` with `a[m×k]`, `g[m×n]`.
fn gemm_tn(a: &[f64], m: usize, k: usize, g: &[f64], n: usize, c: &mut [f64]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for (cpj, gij) in cp.iter_mut().zip(gi) {
                *cpj += aip * gij;
            }
        }
    }
}

/// `c[m×k] += g · bᵀ` with `g[m×n]`, `b[k×n]`.
fn gemm_nt(g: &[f64], m: usize, n: usize, b: &[f64], k: usize, c: &mut [f64]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            c[i * k + p] += gi.iter().zip(bp).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn sum_rows(g: &[f64], n: usize, out: &mut [f64]) {
    for row in g.chunks(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Symmetric uniform bound `1/√fan_in`. Embedding tables see a one-hot
/// input, so their fan-in is 1.
fn init_bound(slot: &Slot, hidden: usize, width: usize) -> f64 {
    let fan_in = if slot.name.starts_with("emb.") {
        1
    } else if slot.name == "in.b" {
        width
    } else if slot.name.ends_with(".b") || slot.name.ends_with(".b1") || slot.name.ends_with(".b2") {
        hidden
    } else {
        slot.rows
    };
    1.0 / (fan_in as f64).sqrt()
}

/// Sinusoidal embedding of the integer timestep.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        e[k] = arg.sin();
        e[half + k] = arg.cos();
    }
    e
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    rows: usize,
    z: Vec<f64>,
    temb: Vec<f64>,
    emb: Vec<f64>,
    cond_idx: Vec<(usize, Vec<usize>)>,
    /// Residual stream before each block, plus the final one.
    hs: Vec<Vec<f64>>,
    /// Per block: pre-activation of the inner layer.
    us: Vec<Vec<f64>>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, layout: BlockLayout, cards: ConditionCards) -> Result<Self> {
        config.validate()?;
        if layout.width() == 0 {
            return Err(Error::Invalid("denoiser needs a non-empty row layout".into()));
        }
        let (slots, wiring) = build_layout(&config, layout.width(), &cards);
        let mut params = vec![0.0; slots.total()];
        let mut rng = rng::stream(rng::derive(config.seed, "init"), 0);
        for slot in &slots.slots {
            let bound = init_bound(slot, config.hidden, layout.width());
            for p in &mut params[slot.range()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(Denoiser {
            config,
            layout,
            cards,
            params,
            slots,
            wiring,
            trained_epochs: 0,
        })
    }

    /// Rebuilds a model from stored parameters; the stored layout must match
    /// the one derived from the configuration.
    pub fn from_parts(
        config: DenoiserConfig,
        layout: BlockLayout,
        cards: ConditionCards,
        slots: ParamLayout,
        params: Vec<f64>,
        trained_epochs: usize,
    ) -> Result<Self> {
        let mut model = Denoiser::new(config, layout, cards)?;
        if slots != model.slots {
            return Err(Error::Mismatch("parameter layout differs from configuration".into()));
        }
        if params.len() != model.params.len() {
            return Err(Error::WidthMismatch {
                expected: model.params.len(),
                got: params.len(),
            });
        }
        model.params = params;
        model.trained_epochs = trained_epochs;
        Ok(model)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn cards(&self) -> &ConditionCards {
        &self.cards
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_layout(&self) -> &ParamLayout {
        &self.slots
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub(crate) fn add_trained_epochs(&mut self, n: usize) {
        self.trained_epochs += n;
    }

    fn slot(&self, i: usize) -> &[f64] {
        &self.params[self.slots.slots[i].range()]
    }

    /// Maps a condition to embedding-row indices. A model trained with
    /// `p_uncond = 1` never saw a present condition, so everything routes
    /// through the null rows.
    fn condition_rows(&self, cond: &ConditionSpec) -> (usize, Vec<usize>) {
        let unconditional = self.config.p_uncond >= 1.0;
        let label = match cond.label {
            Some(l) if !unconditional => l as usize,
            _ => self.cards.label,
        };
        let sens = cond
            .sensitive
            .iter()
            .zip(&self.cards.sensitive)
            .map(|(s, &k)| match s {
                Some(s) if !unconditional => *s as usize,
                _ => k,
            })
            .collect();
        (label, sens)
    }

    fn check_inputs(&self, z: &[f64], ts: &[usize], conds: &[ConditionSpec]) -> Result<()> {
        let w = self.layout.width();
        if z.len() != ts.len() * w {
            return Err(Error::WidthMismatch {
                expected: ts.len() * w,
                got: z.len(),
            });
        }
        if conds.len() != ts.len() {
            return Err(Error::Invalid(format!("{} conditions for {} rows", conds.len(), ts.len())));
        }
        for c in conds {
            self.cards.check(c)?;
        }
        Ok(())
    }

    /// Batched forward pass; returns the raw output matrix (rows × width).
    pub fn forward_batch(&self, z: &[f64], ts: &[usize], conds: &[ConditionSpec]) -> Result<Vec<f64>> {
        self.check_inputs(z, ts, conds)?;
        Ok(self.forward_cached(z, ts, conds).0)
    }

    /// Single-row forward pass split into predicted noise and logits.
    pub fn forward(&self, z: &[f64], t: usize, cond: &ConditionSpec) -> Result<DenoiserOutput> {
        let out = self.forward_batch(z, &[t], std::slice::from_ref(cond))?;
        Ok(self.split_output(&out))
    }

    pub fn split_output(&self, row: &[f64]) -> DenoiserOutput {
        DenoiserOutput {
            eps: row[..self.layout.numeric].to_vec(),
            logits: self.layout.blocks().map(|(o, k)| row[o..o + k].to_vec()).collect(),
        }
    }

    pub(crate) fn forward_cached(&self, z: &[f64], ts: &[usize], conds: &[ConditionSpec]) -> (Vec<f64>, Cache) {
        let w = &self.wiring;
        let (m, d, h, c) = (ts.len(), self.layout.width(), self.config.hidden, self.config.cond_dim);
        let td = self.config.time_dim;

        let mut temb = Vec::with_capacity(m * td);
        for &t in ts {
            temb.extend(timestep_embedding(t, td));
        }
        let mut emb = vec![0.0; m * c];
        let mut cond_idx = Vec::with_capacity(m);
        for (r, cond) in conds.iter().enumerate() {
            let (l, s) = self.condition_rows(cond);
            let e = &mut emb[r * c..(r + 1) * c];
            for (v, x) in e.iter_mut().zip(&self.slot(w.emb_label)[l * c..(l + 1) * c]) {
                *v += x;
            }
            for (&table, &row) in w.emb_sensitive.iter().zip(&s) {
                for (v, x) in e.iter_mut().zip(&self.slot(table)[row * c..(row + 1) * c]) {
                    *v += x;
                }
            }
            cond_idx.push((l, s));
        }

        let mut hcur = vec![0.0; m * h];
        gemm(z, m, d, self.slot(w.w_in), h, &mut hcur);
        gemm(&temb, m, td, self.slot(w.w_time), h, &mut hcur);
        gemm(&emb, m, c, self.slot(w.w_cond), h, &mut hcur);
        add_bias(&mut hcur, self.slot(w.b_in));

        let mut hs = Vec::with_capacity(w.blocks.len() + 1);
        let mut us = Vec::with_capacity(w.blocks.len());
        for blk in &w.blocks {
            let a: Vec<f64> = hcur.iter().map(|&x| silu(x)).collect();
            let mut u = vec![0.0; m * h];
            gemm(&a, m, h, self.slot(blk[0]), h, &mut u);
            add_bias(&mut u, self.slot(blk[1]));
            let v: Vec<f64> = u.iter().map(|&x| silu(x)).collect();
            let mut next = hcur.clone();
            gemm(&v, m, h, self.slot(blk[2]), h, &mut next);
            add_bias(&mut next, self.slot(blk[3]));
            hs.push(hcur);
            us.push(u);
            hcur = next;
        }
        let a: Vec<f64> = hcur.iter().map(|&x| silu(x)).collect();
        let mut out = vec![0.0; m * d];
        gemm(&a, m, h, self.slot(w.w_out), d, &mut out);
        add_bias(&mut out, self.slot(w.b_out));
        hs.push(hcur);
        (
            out,
            Cache {
                rows: m,
                z: z.to_vec(),
                temb,
                emb,
                cond_idx,
                hs,
                us,
            },
        )
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂out`.
    pub(crate) fn backward(&self, cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        let w = &self.wiring;
        let (m, d, h, c) = (cache.rows, self.layout.width(), self.config.hidden, self.config.cond_dim);
        let td = self.config.time_dim;
        let range = |i: usize| self.slots.slots[i].range();

        let h_last = cache.hs.last().unwrap();
        let a: Vec<f64> = h_last.iter().map(|&x| silu(x)).collect();
        gemm_tn(&a, m, h, d_out, d, &mut grad[range(w.w_out)]);
        sum_rows(d_out, d, &mut grad[range(w.b_out)]);
        let mut da = vec![0.0; m * h];
        gemm_nt(d_out, m, d, self.slot(w.w_out), h, &mut da);
        let mut dh: Vec<f64> = da.iter().zip(h_last).map(|(g, &x)| g * silu_grad(x)).collect();

        for (k, blk) in w.blocks.iter().enumerate().rev() {
            let h_in = &cache.hs[k];
            let u = &cache.us[k];
            let v: Vec<f64> = u.iter().map(|&x| silu(x)).collect();
            gemm_tn(&v, m, h, &dh, h, &mut grad[range(blk[2])]);
            sum_rows(&dh, h, &mut grad[range(blk[3])]);
            let mut dv = vec![0.0; m * h];
            gemm_nt(&dh, m, h, self.slot(blk[2]), h, &mut dv);
            let du: Vec<f64> = dv.iter().zip(u).map(|(g, &x)| g * silu_grad(x)).collect();
            let a_in: Vec<f64> = h_in.iter().map(|&x| silu(x)).collect();
            gemm_tn(&a_in, m, h, &du, h, &mut grad[range(blk[0])]);
            sum_rows(&du, h, &mut grad[range(blk[1])]);
            let mut da_in = vec![0.0; m * h];
            gemm_nt(&du, m, h, self.slot(blk[0]), h, &mut da_in);
            for ((g, dai), &x) in dh.iter_mut().zip(&da_in).zip(h_in) {
                *g += dai * silu_grad(x);
            }
        }

        gemm_tn(&cache.z, m, d, &dh, h, &mut grad[range(w.w_in)]);
        sum_rows(&dh, h, &mut grad[range(w.b_in)]);
        gemm_tn(&cache.temb, m, td, &dh, h, &mut grad[range(w.w_time)]);
        gemm_tn(&cache.emb, m, c, &dh, h, &mut grad[range(w.w_cond)]);
        let mut de = vec![0.0; m * c];
        gemm_nt(&dh, m, h, self.slot(w.w_cond), c, &mut de);
        for (r, (l, s)) in cache.cond_idx.iter().enumerate() {
            let g = &de[r * c..(r + 1) * c];
            let off = self.slots.slots[w.emb_label].offset + l * c;
            for (p, v) in grad[off..off + c].iter_mut().zip(g) {
                *p += v;
            }
            for (&table, &row) in w.emb_sensitive.iter().zip(s) {
                let off = self.slots.slots[table].offset + row * c;
                for (p, v) in grad[off..off + c].iter_mut().zip(g) {
                    *p += v;
                }
            }
        }
    }
}
