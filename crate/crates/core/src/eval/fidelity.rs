//! Data-based fidelity: per-column density error, pairwise association
//! error, and distance to the closest record.

use log::warn;
use rayon::prelude::*;

use crate::data::{ColumnData, Dataset, EncodedBatch};
use crate::error::{Error, Result};

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Category frequencies over `0..k`.
pub fn frequencies(values: &[u32], k: usize) -> Vec<f64> {
    let mut f = vec![0.0; k];
    for &v in values {
        f[v as usize] += 1.0;
    }
    let n = values.len().max(1) as f64;
    f.iter_mut().for_each(|x| *x /= n);
    f
}

/// `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn same_columns(real: &Dataset, synth: &Dataset) -> Result<()> {
    let a: Vec<_> = real.schema().columns.iter().map(|c| (&c.name, c.kind(), c.cardinality())).collect();
    let b: Vec<_> = synth.schema().columns.iter().map(|c| (&c.name, c.kind(), c.cardinality())).collect();
    if a != b {
        return Err(Error::Mismatch("real and synthetic column sets differ".into()));
    }
    Ok(())
}

/// Per-column error of each column: KS for numerical, TV for categorical.
pub fn column_density_errors(real: &Dataset, synth: &Dataset) -> Result<Vec<f64>> {
    same_columns(real, synth)?;
    Ok(real
        .columns()
        .iter()
        .zip(synth.columns())
        .zip(&real.schema().columns)
        .map(|((a, b), col)| match (a, b) {
            (ColumnData::Numerical(a), ColumnData::Numerical(b)) => ks_statistic(a, b),
            (ColumnData::Categorical(a), ColumnData::Categorical(b)) => {
                let k = col.cardinality().unwrap();
                total_variation(&frequencies(a, k), &frequencies(b, k))
            }
            _ => unreachable!("column kinds checked above"),
        })
        .collect())
}

/// Mean over columns of the per-column density error.
pub fn column_density_error(real: &Dataset, synth: &Dataset) -> Result<f64> {
    let errs = column_density_errors(real, synth)?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Cramér's V without bias correction; categories absent from the sample
/// are ignored.
pub fn cramers_v(a: &[u32], ka: usize, b: &[u32], kb: usize) -> Option<f64> {
    let n = a.len() as f64;
    let mut table = vec![0.0; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize * kb + y as usize] += 1.0;
    }
    let rows: Vec<f64> = (0..ka).map(|i| table[i * kb..(i + 1) * kb].iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| (0..ka).map(|i| table[i * kb + j]).sum()).collect();
    let r = rows.iter().filter(|v| **v > 0.0).count();
    let c = cols.iter().filter(|v| **v > 0.0).count();
    if r.min(c) < 2 {
        return None;
    }
    let mut chi2 = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                chi2 += (table[i * kb + j] - e).powi(2) / e;
            }
        }
    }
    Some((chi2 / (n * (r.min(c) - 1) as f64)).sqrt().min(1.0))
}

/// Correlation ratio `η = √(SS_between / SS_total)` of a numeric column
/// grouped by a categorical one.
pub fn correlation_ratio(groups: &[u32], k: usize, x: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0.0; k];
    for (&g, &v) in groups.iter().zip(x) {
        sums[g as usize] += v;
        counts[g as usize] += 1.0;
    }
    let total: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if total <= 0.0 {
        return None;
    }
    let between: f64 = sums
        .iter()
        .zip(&counts)
        .filter(|(_, c)| **c > 0.0)
        .map(|(s, c)| c * (s / c - mean).powi(2))
        .sum();
    Some((between / total).sqrt().min(1.0))
}

fn association(ds: &Dataset, i: usize, j: usize) -> Option<f64> {
    let cols = ds.columns();
    let card = |c: usize| ds.schema().columns[c].cardinality().unwrap();
    match (&cols[i], &cols[j]) {
        (ColumnData::Numerical(a), ColumnData::Numerical(b)) => pearson(a, b),
        (ColumnData::Categorical(a), ColumnData::Categorical(b)) => cramers_v(a, card(i), b, card(j)),
        (ColumnData::Categorical(g), ColumnData::Numerical(x)) => correlation_ratio(g, card(i), x),
        (ColumnData::Numerical(x), ColumnData::Categorical(g)) => correlation_ratio(g, card(j), x),
    }
}

/// Mean absolute difference of pairwise associations (Pearson, Cramér's V,
/// correlation ratio). Pairs undefined on either side are skipped.
pub fn pairwise_correlation_error(real: &Dataset, synth: &Dataset) -> Result<f64> {
    same_columns(real, synth)?;
    let m = real.schema().len();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..m {
        for j in i + 1..m {
            match (association(real, i, j), association(synth, i, j)) {
                (Some(a), Some(b)) => {
                    sum += (a - b).abs();
                    count += 1;
                }
                _ => warn!(
                    "association of ({}, {}) undefined (constant column); pair skipped",
                    real.schema().columns[i].name,
                    real.schema().columns[j].name
                ),
            }
        }
    }
    if count == 0 {
        warn!("no column pairs to compare; correlation error reported as 0");
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

fn nearest(row: &[f64], set: &EncodedBatch) -> f64 {
    let mut best = f64::INFINITY;
    for r in 0..set.rows() {
        let mut d = 0.0;
        for (a, b) in row.iter().zip(set.row(r)) {
            d += (a - b) * (a - b);
            if d >= best {
                break;
            }
        }
        best = best.min(d);
    }
    best.sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcrScores {
    /// Median synthetic-to-train distance over median holdout-to-train.
    pub distance: f64,
    /// Fraction of synthetic rows strictly closer to train than to holdout.
    pub closeness: f64,
}

/// Distance-to-closest-record scores in the encoded space.
pub fn dcr(train: &EncodedBatch, holdout: &EncodedBatch, synth: &EncodedBatch) -> Result<DcrScores> {
    if train.rows() == 0 || holdout.rows() == 0 || synth.rows() == 0 {
        return Err(Error::Empty("dcr input"));
    }
    if train.layout() != holdout.layout() || train.layout() != synth.layout() {
        return Err(Error::Mismatch("dcr inputs have different layouts".into()));
    }
    let pairs: Vec<(f64, f64)> = (0..synth.rows())
        .into_par_iter()
        .map(|r| (nearest(synth.row(r), train), nearest(synth.row(r), holdout)))
        .collect();
    let ref_d: Vec<f64> = (0..holdout.rows()).into_par_iter().map(|r| nearest(holdout.row(r), train)).collect();
    let num = median(pairs.iter().map(|p| p.0).collect());
    let den = median(ref_d);
    let distance = if den > 0.0 {
        num / den
    } else if num == 0.0 {
        1.0
    } else {
        warn!("holdout rows coincide with train rows; dcr distance left unnormalized");
        num
    };
    let closer = pairs.iter().filter(|(t, h)| t < h).count();
    Ok(DcrScores {
        distance,
        closeness: closer as f64 / pairs.len() as f64,
    })
}
