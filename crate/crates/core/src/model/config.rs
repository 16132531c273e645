use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a GPT-2 style decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub layernorm_epsilon: f32,
}

impl ModelConfig {
    /// GPT-2 Small: 12 layers of 12 heads, width 768, 1024-token context.
    pub fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_head: 64,
            d_mlp: 3072,
            vocab_size: 50257,
            max_context: 1024,
            layernorm_epsilon: 1e-5,
        }
    }

    /// A small config with `d_mlp = 4 * d_model` and `d_head = d_model / n_heads`.
    pub fn tiny(
        n_layers: usize,
        n_heads: usize,
        d_model: usize,
        vocab_size: usize,
        max_context: usize,
    ) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_head: d_model / n_heads.max(1),
            d_mlp: 4 * d_model,
            vocab_size,
            max_context,
            layernorm_epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "n_heads ({}) * d_head ({}) != d_model ({})",
                self.n_heads, self.d_head, self.d_model
            )));
        }
        if !(self.layernorm_epsilon.is_finite() && self.layernorm_epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "layernorm_epsilon must be a positive finite number".into(),
            ));
        }
        Ok(())
    }
}
