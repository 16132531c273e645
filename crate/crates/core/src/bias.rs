//! Power-law recency bias: every key `k >= 1` tokens behind the query gets
//! `alpha * k^(-exp(beta))` added to its attention score.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionBias, BiasMatrix};

/// Bias value at distance `k >= 1`.
#[inline]
pub fn bias_value(alpha: f64, beta: f64, k: usize) -> f64 {
    alpha * (k as f64).powf(-beta.exp())
}

/// `T x T` matrix with `alpha * k^(-exp(beta))` on the k-th sub-diagonal.
/// The main diagonal (k = 0) and everything above it are 0.
pub fn materialize_bias(alpha: f64, beta: f64, size: usize) -> BiasMatrix {
    let diagonal: Vec<f64> = (0..size)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                bias_value(alpha, beta, k)
            }
        })
        .collect();
    let mut m = BiasMatrix::zeros(size);
    for i in 0..size {
        for j in 0..i {
            m.set(i, j, diagonal[i - j]);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Fitted-params file: `{"layer": l, "heads": [{"alpha": a, "beta": b}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasParams {
    /// 1-based layer the bias is applied to.
    pub layer: usize,
    pub heads: Vec<HeadParams>,
}

impl BiasParams {
    pub fn zeros(layer: usize, n_heads: usize) -> Self {
        Self {
            layer,
            heads: vec![
                HeadParams {
                    alpha: 0.0,
                    beta: 0.0
                };
                n_heads
            ],
        }
    }

    /// Flat vector `[alpha_1, beta_1, alpha_2, beta_2, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.heads.iter().flat_map(|h| [h.alpha, h.beta]).collect()
    }

    pub fn from_slice(layer: usize, theta: &[f64]) -> Result<Self> {
        if !theta.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "parameter vector of odd length {}",
                theta.len()
            )));
        }
        Ok(Self {
            layer,
            heads: theta
                .chunks_exact(2)
                .map(|c| HeadParams {
                    alpha: c[0],
                    beta: c[1],
                })
                .collect(),
        })
    }

    pub fn validate(&self, n_layers: usize, n_heads: usize) -> Result<()> {
        if self.layer == 0 || self.layer > n_layers {
            return Err(Error::BiasLayerOutOfRange {
                layer: self.layer,
                n_layers,
            });
        }
        if self.heads.len() != n_heads {
            return Err(Error::InvalidParameter(format!(
                "{} head parameter pairs for {n_heads} heads",
                self.heads.len()
            )));
        }
        if self
            .heads
            .iter()
            .any(|h| !(h.alpha.is_finite() && h.beta.is_finite()))
        {
            return Err(Error::NonFinite("bias parameters".into()));
        }
        Ok(())
    }

    /// Materialize every head's bias at sequence length `size`.
    pub fn to_attention_bias(&self, size: usize) -> AttentionBias {
        AttentionBias {
            layer: self.layer,
            heads: self
                .heads
                .iter()
                .map(|h| materialize_bias(h.alpha, h.beta, size))
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        Ok(())
    }
}
