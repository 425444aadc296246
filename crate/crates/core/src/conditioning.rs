//! Joint distribution of the label and sensitive-attribute combinations,
//! the balancing-level transform, and stratified condition draws.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::denoiser::ConditionSpec;
use crate::error::{Error, Result};
use crate::rng;

const ROW_TOL: f64 = 1e-9;

/// Integer level in `0..=10`; 0 keeps the empirical joint, 10 is uniform
/// over sensitive combinations within each label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BalancingLevel(u8);

impl BalancingLevel {
    pub const MAX: u8 = 10;

    pub fn new(i: u8) -> Result<Self> {
        if i > Self::MAX {
            return Err(Error::Config(format!("balancing level {i} outside 0..=10")));
        }
        Ok(BalancingLevel(i))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = BalancingLevel> {
        (0..=Self::MAX).map(BalancingLevel)
    }
}

impl TryFrom<u8> for BalancingLevel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        BalancingLevel::new(v)
    }
}

impl From<BalancingLevel> for u8 {
    fn from(l: BalancingLevel) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    /// `P(label)`.
    pub label_marginal: Vec<f64>,
    /// `rows[label][combo] = P(combo | label)`.
    pub rows: Vec<Vec<f64>>,
    /// Cardinality of each sensitive attribute; combos are mixed-radix with
    /// the first attribute most significant.
    pub sensitive_cards: Vec<usize>,
}

impl ConditionTable {
    pub fn new(label_marginal: Vec<f64>, rows: Vec<Vec<f64>>, sensitive_cards: Vec<usize>) -> Result<Self> {
        let t = ConditionTable {
            label_marginal,
            rows,
            sensitive_cards,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.combos();
        if self.rows.len() != self.label_marginal.len() || self.label_marginal.is_empty() {
            return Err(Error::Invalid("condition table needs one row per label".into()));
        }
        let check = |v: &[f64], what: &str| -> Result<()> {
            let s: f64 = v.iter().sum();
            if v.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > ROW_TOL {
                return Err(Error::Invalid(format!("{what} is not a distribution (sum {s})")));
            }
            Ok(())
        };
        check(&self.label_marginal, "label marginal")?;
        for (y, row) in self.rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::WidthMismatch { expected: k, got: row.len() });
            }
            check(row, &format!("row for label {y}"))?;
        }
        Ok(())
    }

    /// Number of sensitive combinations `K = ∏ C_i` (1 with no attributes).
    pub fn combos(&self) -> usize {
        self.sensitive_cards.iter().product()
    }

    pub fn labels(&self) -> usize {
        self.label_marginal.len()
    }

    pub fn combo_index(&self, values: &[u32]) -> usize {
        values
            .iter()
            .zip(&self.sensitive_cards)
            .fold(0, |acc, (&v, &c)| acc * c + v as usize)
    }

    pub fn combo_values(&self, mut index: usize) -> Vec<u32> {
        let mut out = vec![0; self.sensitive_cards.len()];
        for (slot, &c) in out.iter_mut().zip(&self.sensitive_cards).rev() {
            *slot = (index % c) as u32;
            index /= c;
        }
        out
    }

    /// `P(label, combo)`.
    pub fn joint(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .zip(&self.label_marginal)
            .map(|(row, p)| row.iter().map(|q| p * q).collect())
            .collect()
    }

    /// Cells that had no training rows but receive mass in `self`.
    pub fn unobserved_cells(&self, empirical: &ConditionTable) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (y, (row, emp)) in self.rows.iter().zip(&empirical.rows).enumerate() {
            if empirical.label_marginal[y] == 0.0 {
                continue;
            }
            for (k, (p, e)) in row.iter().zip(emp).enumerate() {
                if *e == 0.0 && *p > 0.0 {
                    out.push((y, k));
                }
            }
        }
        out
    }
}

/// Label and sensitive values of every row of `ds` as full conditions.
pub fn dataset_conditions(ds: &Dataset) -> Vec<ConditionSpec> {
    let schema = ds.schema();
    let target = ds.target();
    let sens: Vec<&[u32]> = schema.sensitive_indices().into_iter().map(|c| ds.categorical(c)).collect();
    (0..ds.n_rows())
        .map(|r| ConditionSpec {
            label: Some(target[r]),
            sensitive: sens.iter().map(|col| Some(col[r])).collect(),
        })
        .collect()
}

/// Counts labels and, per label, sensitive combinations. A label that never
/// occurs gets a uniform row (it carries zero marginal mass).
pub fn empirical_joint(ds: &Dataset) -> Result<ConditionTable> {
    if ds.n_rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    let schema = ds.schema();
    let cards = schema.sensitive_cardinalities();
    let n_labels = schema.target_cardinality();
    let k: usize = cards.iter().product();
    let mut counts = vec![vec![0usize; k]; n_labels];
    let shell = ConditionTable {
        label_marginal: Vec::new(),
        rows: Vec::new(),
        sensitive_cards: cards,
    };
    for c in dataset_conditions(ds) {
        let values: Vec<u32> = c.sensitive.iter().map(|v| v.unwrap()).collect();
        counts[c.label.unwrap() as usize][shell.combo_index(&values)] += 1;
    }
    let n = ds.n_rows() as f64;
    let label_marginal = counts.iter().map(|r| r.iter().sum::<usize>() as f64 / n).collect();
    let rows = counts
        .iter()
        .map(|r| {
            let total: usize = r.iter().sum();
            if total == 0 {
                vec![1.0 / k as f64; k]
            } else {
                r.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    ConditionTable::new(label_marginal, rows, shell.sensitive_cards)
}

/// `y_k + (ȳ − y_k)·i/10` on every label row, with `ȳ = 1/K`; the label
/// marginal is left as is.
pub fn balance(table: &ConditionTable, level: BalancingLevel) -> ConditionTable {
    let frac = f64::from(level.get()) / 10.0;
    let rows = table
        .rows
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter().map(|y| y + (mean - y) * frac).collect()
        })
        .collect();
    ConditionTable {
        label_marginal: table.label_marginal.clone(),
        rows,
        sensitive_cards: table.sensitive_cards.clone(),
    }
}

/// Integer counts summing to `n` that are closest to `n·p` by the
/// largest-remainder rule. Equal remainders are ordered by `priority`.
pub fn largest_remainder(n: usize, probs: &[f64], priority: &[usize]) -> Vec<usize> {
    let expected: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = expected.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (expected[a] - expected[a].floor(), expected[b] - expected[b].floor());
        rb.total_cmp(&ra).then(priority[a].cmp(&priority[b]))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified draw of `n` conditions from the joint of `table`. Counts per
/// (label, combo) cell follow the largest-remainder rule; ties and the
/// final row order come from the seeded stream.
pub fn draw_conditions(n: usize, table: &ConditionTable, seed: u64) -> Vec<ConditionSpec> {
    let mut rng = rng::stream(rng::derive(seed, "conditions"), 0);
    let joint: Vec<f64> = table.joint().into_iter().flatten().collect();
    let mut priority: Vec<usize> = (0..joint.len()).collect();
    priority.shuffle(&mut rng);
    let counts = largest_remainder(n, &joint, &priority);
    let k = table.combos();
    let mut out = Vec::with_capacity(n);
    for (cell, &c) in counts.iter().enumerate() {
        let (label, combo) = (cell / k, cell % k);
        let values = table.combo_values(combo);
        for _ in 0..c {
            out.push(ConditionSpec::full(label as u32, &values));
        }
    }
    out.shuffle(&mut rng);
    out
}
