use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the posterior estimator and its training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub depth: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    /// Probability of dropping each condition to ABSENT during training.
    pub p_uncond: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Learning-rate search range of the reference hyperparameter table.
pub const LR_RANGE: (f64, f64) = (1e-5, 3e-3);

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 64,
            depth: 2,
            time_dim: 16,
            cond_dim: 16,
            p_uncond: 0.1,
            lr: 1e-3,
            batch_size: 256,
            epochs: 100,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("time_dim", self.time_dim),
            ("cond_dim", self.cond_dim),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("denoiser.{name} must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::Config(format!("denoiser.p_uncond {} outside [0, 1]", self.p_uncond)));
        }
        if !(self.lr >= LR_RANGE.0 && self.lr <= LR_RANGE.1) {
            return Err(Error::Config(format!(
                "denoiser.lr {} outside [{}, {}]",
                self.lr, LR_RANGE.0, LR_RANGE.1
            )));
        }
        Ok(())
    }
}

/// Label and sensitive-attribute conditions for one row. `None` is ABSENT.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub label: Option<u32>,
    pub sensitive: Vec<Option<u32>>,
}

impl ConditionSpec {
    pub fn absent(n_sensitive: usize) -> Self {
        ConditionSpec {
            label: None,
            sensitive: vec![None; n_sensitive],
        }
    }

    pub fn full(label: u32, sensitive: &[u32]) -> Self {
        ConditionSpec {
            label: Some(label),
            sensitive: sensitive.iter().copied().map(Some).collect(),
        }
    }

    pub fn label_only(&self) -> Self {
        ConditionSpec {
            label: self.label,
            sensitive: vec![None; self.sensitive.len()],
        }
    }

    /// Only sensitive attribute `i` present.
    pub fn sensitive_only(&self, i: usize) -> Self {
        let mut s = vec![None; self.sensitive.len()];
        s[i] = self.sensitive[i];
        ConditionSpec { label: None, sensitive: s }
    }
}

/// Cardinalities of the label and of each sensitive attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionCards {
    pub label: usize,
    pub sensitive: Vec<usize>,
}

impl ConditionCards {
    pub fn check(&self, cond: &ConditionSpec) -> Result<()> {
        if cond.sensitive.len() != self.sensitive.len() {
            return Err(Error::Condition(format!(
                "{} sensitive conditions given, model has {}",
                cond.sensitive.len(),
                self.sensitive.len()
            )));
        }
        if let Some(l) = cond.label {
            if l as usize >= self.label {
                return Err(Error::Condition(format!("label {l} >= {}", self.label)));
            }
        }
        for (i, (s, &k)) in cond.sensitive.iter().zip(&self.sensitive).enumerate() {
            if let Some(s) = s {
                if *s as usize >= k {
                    return Err(Error::Condition(format!("sensitive[{i}] = {s} >= {k}")));
                }
            }
        }
        Ok(())
    }
}
