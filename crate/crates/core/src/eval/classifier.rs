//! Built-in binary classifiers for train-on-synthetic, test-on-real scoring.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TabularEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logistic,
    BoostedStumps,
}

/// Gradient boosting settings for the stump ensemble.
pub const BOOST_ROUNDS: usize = 200;
pub const BOOST_LR: f64 = 0.1;
const BOOST_BINS: usize = 32;
const LEAF_L2: f64 = 1.0;
const LOGISTIC_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinClassifier {
    Logistic { weights: Vec<f64>, bias: f64 },
    BoostedStumps { base: f64, stumps: Vec<Stump> },
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major feature matrix with its row count.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }
}

/// Encodes every column except the target with a fitted encoder.
pub fn features(encoder: &TabularEncoder, ds: &Dataset) -> Result<Features> {
    let batch = encoder.encode(ds)?;
    let layout = batch.layout().clone();
    let skip = encoder.block_of(ds.schema().target_index()).expect("target is categorical");
    let blocks: Vec<(usize, usize)> = layout.blocks().collect();
    let width = layout.width() - blocks[skip].1;
    let mut data = Vec::with_capacity(batch.rows() * width);
    for r in 0..batch.rows() {
        let row = batch.row(r);
        data.extend_from_slice(&row[..layout.numeric]);
        for (b, &(off, k)) in blocks.iter().enumerate() {
            if b != skip {
                data.extend_from_slice(&row[off..off + k]);
            }
        }
    }
    Ok(Features {
        rows: batch.rows(),
        width,
        data,
    })
}

/// Binary targets: 1 is the positive class.
pub fn binary_labels(ds: &Dataset) -> Result<Vec<bool>> {
    if ds.schema().target_cardinality() != 2 {
        return Err(Error::Invalid(format!(
            "classifier metrics need a binary target, found {} classes",
            ds.schema().target_cardinality()
        )));
    }
    Ok(ds.target().iter().map(|&y| y == 1).collect())
}

impl BuiltinClassifier {
    pub fn fit(x: &Features, y: &[bool], kind: ClassifierKind) -> Result<Self> {
        if x.rows != y.len() {
            return Err(Error::Invalid(format!("{} feature rows for {} labels", x.rows, y.len())));
        }
        let pos = y.iter().filter(|v| **v).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::SingleClass);
        }
        Ok(match kind {
            ClassifierKind::Logistic => fit_logistic(x, y),
            ClassifierKind::BoostedStumps => fit_stumps(x, y),
        })
    }

    /// Positive-class probabilities.
    pub fn predict_proba(&self, x: &Features) -> Vec<f64> {
        (0..x.rows).map(|r| sigmoid(self.margin(x.row(r)))).collect()
    }

    fn margin(&self, row: &[f64]) -> f64 {
        match self {
            BuiltinClassifier::Logistic { weights, bias } => bias + weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>(),
            BuiltinClassifier::BoostedStumps { base, stumps } => {
                base + stumps
                    .iter()
                    .map(|s| if row[s.feature] <= s.threshold { s.left } else { s.right })
                    .sum::<f64>()
            }
        }
    }
}

/// Ridge-stabilized Newton iterations on the mean log-loss.
fn fit_logistic(x: &Features, y: &[bool]) -> BuiltinClassifier {
    let (n, d) = (x.rows, x.width + 1);
    let mut beta = DVector::<f64>::zeros(d);
    for _ in 0..50 {
        let mut grad = DVector::<f64>::zeros(d);
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for r in 0..n {
            let row = x.row(r);
            let z = beta[d - 1] + (0..d - 1).map(|j| beta[j] * row[j]).sum::<f64>();
            let p = sigmoid(z);
            let g = p - if y[r] { 1.0 } else { 0.0 };
            let h = (p * (1.0 - p)).max(1e-10);
            let feat = |j: usize| if j == d - 1 { 1.0 } else { row[j] };
            for a in 0..d {
                let fa = feat(a);
                if fa == 0.0 {
                    continue;
                }
                grad[a] += g * fa;
                for b in a..d {
                    hess[(a, b)] += h * fa * feat(b);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        grad /= n as f64;
        hess /= n as f64;
        for a in 0..d - 1 {
            grad[a] += LOGISTIC_L2 * beta[a];
            hess[(a, a)] += LOGISTIC_L2;
        }
        hess[(d - 1, d - 1)] += 1e-12;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => break,
        };
        beta -= &step;
        if step.amax() < 1e-8 {
            break;
        }
    }
    BuiltinClassifier::Logistic {
        weights: beta.rows(0, d - 1).iter().copied().collect(),
        bias: beta[d - 1],
    }
}

/// Candidate split points: midpoints between distinct values, thinned to
/// at most `BOOST_BINS − 1` by quantile.
fn thresholds(values: &mut Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    let cuts: Vec<f64> = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if cuts.len() < BOOST_BINS {
        return cuts;
    }
    let mut out: Vec<f64> = (1..BOOST_BINS)
        .map(|b| cuts[b * cuts.len() / BOOST_BINS])
        .collect();
    out.dedup();
    out
}

/// Second-order gradient boosting of depth-1 trees on the log-loss.
fn fit_stumps(x: &Features, y: &[bool]) -> BuiltinClassifier {
    let (n, d) = (x.rows, x.width);
    let yf: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let rate = yf.iter().sum::<f64>() / n as f64;
    let base = (rate / (1.0 - rate)).ln();

    // bin[j][r] = number of thresholds of feature j strictly below x[r][j]
    let cuts: Vec<Vec<f64>> = (0..d)
        .map(|j| thresholds(&mut (0..n).map(|r| x.row(r)[j]).collect()))
        .collect();
    let bins: Vec<Vec<u8>> = (0..d)
        .map(|j| {
            (0..n)
                .map(|r| cuts[j].partition_point(|&c| c < x.row(r)[j]) as u8)
                .collect()
        })
        .collect();

    let mut f = vec![base; n];
    let mut stumps = Vec::with_capacity(BOOST_ROUNDS);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for _ in 0..BOOST_ROUNDS {
        for r in 0..n {
            let p = sigmoid(f[r]);
            g[r] = p - yf[r];
            h[r] = (p * (1.0 - p)).max(1e-12);
        }
        let (gt, ht): (f64, f64) = (g.iter().sum(), h.iter().sum());
        let parent = gt * gt / (ht + LEAF_L2);
        let mut best: Option<(f64, Stump)> = None;
        for j in 0..d {
            let nb = cuts[j].len() + 1;
            if nb < 2 {
                continue;
            }
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            for r in 0..n {
                let b = bins[j][r] as usize;
                hg[b] += g[r];
                hh[b] += h[r];
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                let (gr, hr) = (gt - gl, ht - hl);
                let gain = gl * gl / (hl + LEAF_L2) + gr * gr / (hr + LEAF_L2) - parent;
                if best.as_ref().map_or(true, |(bg, _)| gain > *bg) {
                    best = Some((
                        gain,
                        Stump {
                            feature: j,
                            threshold: cuts[j][b],
                            left: -BOOST_LR * gl / (hl + LEAF_L2),
                            right: -BOOST_LR * gr / (hr + LEAF_L2),
                        },
                    ));
                }
            }
        }
        let Some((_, stump)) = best else { break };
        for r in 0..n {
            f[r] += if x.row(r)[stump.feature] <= stump.threshold {
                stump.left
            } else {
                stump.right
            };
        }
        stumps.push(stump);
    }
    BuiltinClassifier::BoostedStumps { base, stumps }
}

/// Area under the ROC curve by the rank statistic; tied scores get half
/// credit.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = labels.iter().filter(|v| **v).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}
