//! Optional latent space between the encoded rows and the diffusion.
//!
//! `Identity` diffuses the encoded rows directly (numeric block with the
//! Gaussian kernel, one-hot blocks with the multinomial kernel).
//! `Linear` is a whitened linear autoencoder fitted in closed form (the
//! principal subspace minimizes squared reconstruction error); the latent
//! vector is diffused entirely with the Gaussian kernel.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{argmax, BlockLayout, EncodedBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LatentCodec {
    Identity,
    Linear {
        data_layout: BlockLayout,
        mean: Vec<f64>,
        /// `width × latent`, row-major; columns are unit principal axes.
        components: Vec<f64>,
        /// Per-latent standard deviation used for whitening.
        scales: Vec<f64>,
        reconstruction_mse: f64,
    },
}

impl LatentCodec {
    /// Fits the linear autoencoder and enforces the reconstruction bound.
    pub fn fit_linear(data: &EncodedBatch, latent_dim: usize, max_mse: f64) -> Result<Self> {
        let (n, d) = (data.rows(), data.width());
        if n == 0 {
            return Err(Error::Empty("codec training data"));
        }
        if latent_dim == 0 || latent_dim > d {
            return Err(Error::Config(format!("latent_dim {latent_dim} outside 1..={d}")));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(data.row(r)) {
                *m += x / n as f64;
            }
        }
        let centered = DMatrix::from_fn(n, d, |r, c| data.row(r)[c] - mean[c]);
        let cov = centered.transpose() * &centered / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = vec![0.0; d * latent_dim];
        let mut scales = Vec::with_capacity(latent_dim);
        for (j, &k) in order.iter().take(latent_dim).enumerate() {
            let col = eig.eigenvectors.column(k);
            // fix the sign so the largest-magnitude entry is positive
            let pivot = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d {
                components[i * latent_dim + j] = sign * col[i];
            }
            let sd = eig.eigenvalues[k].max(0.0).sqrt();
            scales.push(if sd > 1e-8 { sd } else { 1.0 });
        }
        let mut codec = LatentCodec::Linear {
            data_layout: data.layout().clone(),
            mean,
            components,
            scales,
            reconstruction_mse: 0.0,
        };
        let back = codec.decode_raw(&codec.encode(data)?)?;
        let mse = back.iter().zip(data.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (n * d) as f64;
        if mse > max_mse {
            return Err(Error::Invalid(format!(
                "linear codec reconstruction mse {mse:.3e} exceeds bound {max_mse:.3e}; raise latent_dim"
            )));
        }
        if let LatentCodec::Linear {
            reconstruction_mse, ..
        } = &mut codec
        {
            *reconstruction_mse = mse;
        }
        Ok(codec)
    }

    /// Layout of the vectors the diffusion runs on.
    pub fn latent_layout(&self, data_layout: &BlockLayout) -> BlockLayout {
        match self {
            LatentCodec::Identity => data_layout.clone(),
            LatentCodec::Linear { scales, .. } => BlockLayout::new(scales.len(), Vec::new()),
        }
    }

    pub fn encode(&self, batch: &EncodedBatch) -> Result<EncodedBatch> {
        match self {
            LatentCodec::Identity => Ok(batch.clone()),
            LatentCodec::Linear {
                data_layout,
                mean,
                components,
                scales,
                ..
            } => {
                if batch.layout() != data_layout {
                    return Err(Error::WidthMismatch {
                        expected: data_layout.width(),
                        got: batch.width(),
                    });
                }
                let (d, l) = (mean.len(), scales.len());
                let mut out = Vec::with_capacity(batch.rows() * l);
                for r in 0..batch.rows() {
                    let row = batch.row(r);
                    for j in 0..l {
                        let z: f64 = (0..d).map(|i| (row[i] - mean[i]) * components[i * l + j]).sum();
                        out.push(z / scales[j]);
                    }
                }
                EncodedBatch::new(BlockLayout::new(l, Vec::new()), out)
            }
        }
    }

    fn decode_raw(&self, latent: &EncodedBatch) -> Result<Vec<f64>> {
        match self {
            LatentCodec::Identity => Ok(latent.as_slice().to_vec()),
            LatentCodec::Linear {
                mean,
                components,
                scales,
                ..
            } => {
                let (d, l) = (mean.len(), scales.len());
                if latent.width() != l || !latent.layout().cardinalities.is_empty() {
                    return Err(Error::WidthMismatch {
                        expected: l,
                        got: latent.width(),
                    });
                }
                let mut out = Vec::with_capacity(latent.rows() * d);
                for r in 0..latent.rows() {
                    let z = latent.row(r);
                    for i in 0..d {
                        out.push(mean[i] + (0..l).map(|j| components[i * l + j] * z[j] * scales[j]).sum::<f64>());
                    }
                }
                Ok(out)
            }
        }
    }

    /// Maps diffusion-space rows back to encoded rows. Categorical blocks
    /// of a linear reconstruction are projected back onto the simplex.
    pub fn decode(&self, latent: &EncodedBatch) -> Result<EncodedBatch> {
        match self {
            LatentCodec::Identity => Ok(latent.clone()),
            LatentCodec::Linear { data_layout, .. } => {
                let mut raw = self.decode_raw(latent)?;
                let d = data_layout.width();
                for row in raw.chunks_mut(d) {
                    for (off, k) in data_layout.blocks() {
                        project_to_simplex(&mut row[off..off + k]);
                    }
                }
                EncodedBatch::new(data_layout.clone(), raw)
            }
        }
    }
}

fn project_to_simplex(block: &mut [f64]) {
    let best = argmax(block);
    for v in block.iter_mut() {
        *v = v.max(0.0);
    }
    let s: f64 = block.iter().sum();
    if s > 0.0 {
        block.iter_mut().for_each(|v| *v /= s);
    } else {
        block.iter_mut().for_each(|v| *v = 0.0);
        block[best] = 1.0;
    }
}
