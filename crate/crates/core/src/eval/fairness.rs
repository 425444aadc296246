//! Group fairness ratios and the weighted trade-off score.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `min / max` of a set of rates; all-zero rates count as perfectly even.
fn min_max_ratio(rates: &[f64]) -> f64 {
    let max = rates.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 1.0;
    }
    rates.iter().copied().fold(f64::INFINITY, f64::min) / max
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!("{a} predictions for {b} group labels")));
    }
    Ok(())
}

/// Demographic parity ratio: lowest over highest positive-prediction rate
/// across the groups present in `groups`.
pub fn dpr(predictions: &[bool], groups: &[u32]) -> Result<f64> {
    check_len(predictions.len(), groups.len())?;
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (&p, &g) in predictions.iter().zip(groups) {
        let e = tally.entry(g).or_default();
        e.0 += p as usize;
        e.1 += 1;
    }
    let rates: Vec<f64> = tally.values().map(|(k, n)| *k as f64 / *n as f64).collect();
    Ok(min_max_ratio(&rates))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EorResult {
    pub value: f64,
    /// Set when fewer than two groups had a defined TPR or FPR.
    pub degenerate: bool,
}

/// Equalized odds ratio with degenerate-group bookkeeping. A group with
/// no positives has no TPR and one with no negatives has no FPR; such
/// groups drop out of that ratio, and a ratio left with fewer than two
/// groups is taken as 1.
pub fn eor_detailed(predictions: &[bool], labels: &[bool], groups: &[u32]) -> Result<EorResult> {
    check_len(predictions.len(), groups.len())?;
    check_len(labels.len(), groups.len())?;
    // (tp, positives, fp, negatives)
    let mut tally: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(groups) {
        let e = tally.entry(g).or_default();
        if y {
            e[0] += p as usize;
            e[1] += 1;
        } else {
            e[2] += p as usize;
            e[3] += 1;
        }
    }
    let tpr: Vec<f64> = tally.values().filter(|e| e[1] > 0).map(|e| e[0] as f64 / e[1] as f64).collect();
    let fpr: Vec<f64> = tally.values().filter(|e| e[3] > 0).map(|e| e[2] as f64 / e[3] as f64).collect();
    let mut degenerate = false;
    let mut ratio = |rates: &[f64], name: &str| {
        if rates.len() < tally.len() {
            warn!("{} group(s) without a defined {name} excluded", tally.len() - rates.len());
        }
        if rates.len() < 2 {
            degenerate = true;
            1.0
        } else {
            min_max_ratio(rates)
        }
    };
    let value = ratio(&tpr, "TPR").min(ratio(&fpr, "FPR"));
    Ok(EorResult { value, degenerate })
}

pub fn eor(predictions: &[bool], labels: &[bool], groups: &[u32]) -> Result<f64> {
    Ok(eor_detailed(predictions, labels, groups)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricWeights {
    pub auc: f64,
    pub dpr: f64,
    pub eor: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights {
            auc: 0.5,
            dpr: 0.25,
            eor: 0.25,
        }
    }
}

/// Weighted trade-off score `w_a·auc + w_d·dpr + w_e·eor`.
pub fn composite(auc: f64, dpr: f64, eor: f64, w: &MetricWeights) -> f64 {
    w.auc * auc + w.dpr * dpr + w.eor * eor
}
