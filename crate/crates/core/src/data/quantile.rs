use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_CLIP: f64 = 1e-7;

/// Monotone map from a numerical column to standard-normal scores.
///
/// Reference points are the distinct training values, each mapped to
/// `Φ⁻¹(clip(r))` where `r` is its midpoint rank `(i - 0.5) / n` averaged
/// over tied positions. Values between references are interpolated
/// linearly; values outside the training range clamp to the end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    references: Vec<f64>,
    quantiles: Vec<f64>,
    clip: f64,
}

pub(crate) fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl QuantileTransform {
    pub fn fit(values: &[f64]) -> Result<Self> {
        Self::fit_with_clip(values, DEFAULT_CLIP)
    }

    pub fn fit_with_clip(values: &[f64], clip: f64) -> Result<Self> {
        if !(clip > 0.0 && clip < 0.5) {
            return Err(Error::Invalid(format!("clip epsilon {clip} outside (0, 0.5)")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite value in quantile fit".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let normal = standard_normal();

        let mut references = Vec::new();
        let mut quantiles = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // 1-based positions i+1..=j+1, midpoint rank (p - 0.5)/n, averaged.
            let mean_pos = (i + j) as f64 / 2.0 + 1.0;
            let r = ((mean_pos - 0.5) / n).clamp(clip, 1.0 - clip);
            references.push(sorted[i]);
            quantiles.push(normal.inverse_cdf(r));
            i = j + 1;
        }
        if references.len() < 2 {
            return Err(Error::ConstantColumn(String::new()));
        }
        if quantiles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(
                "quantile references collapsed after clipping; increase precision or reduce clip".into(),
            ));
        }
        Ok(QuantileTransform {
            references,
            quantiles,
            clip,
        })
    }

    pub fn references(&self) -> &[f64] {
        &self.references
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn transform(&self, x: f64) -> f64 {
        interpolate(&self.references, &self.quantiles, x)
    }

    pub fn inverse(&self, q: f64) -> f64 {
        interpolate(&self.quantiles, &self.references, q)
    }
}

/// Piecewise-linear interpolation through `(xs[i], ys[i])`, clamped to the
/// end points. Exact at the knots.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    match xs.binary_search_by(|p| p.total_cmp(&x)) {
        Ok(i) => ys[i],
        Err(i) => {
            let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
            let w = (x - x0) / (x1 - x0);
            y0 + w * (y1 - y0)
        }
    }
}
