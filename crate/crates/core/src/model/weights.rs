use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Parameters of one transformer block. Projection matrices are stored
/// row-major as `[in, out]`, so `y = x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Vec<f32>,
    pub ln1_b: Vec<f32>,
    pub wq: Vec<f32>,
    pub bq: Vec<f32>,
    pub wk: Vec<f32>,
    pub bk: Vec<f32>,
    pub wv: Vec<f32>,
    pub bv: Vec<f32>,
    pub wo: Vec<f32>,
    pub bo: Vec<f32>,
    pub ln2_g: Vec<f32>,
    pub ln2_b: Vec<f32>,
    pub w_in: Vec<f32>,
    pub b_in: Vec<f32>,
    pub w_out: Vec<f32>,
    pub b_out: Vec<f32>,
}

/// All parameters of the model. The unembedding is tied to `token_embedding`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub token_embedding: Vec<f32>,
    pub position_embedding: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_ln_g: Vec<f32>,
    pub final_ln_b: Vec<f32>,
}

const LAYER_TENSORS: [&str; 16] = [
    "ln1.g",
    "ln1.b",
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln2.g",
    "ln2.b",
    "mlp.w_in",
    "mlp.b_in",
    "mlp.w_out",
    "mlp.b_out",
];

fn layer_tensor_shape(config: &ModelConfig, suffix: &str) -> Vec<usize> {
    let d = config.d_model;
    match suffix {
        "attn.wq" | "attn.wk" | "attn.wv" | "attn.wo" => vec![d, d],
        "mlp.w_in" => vec![d, config.d_mlp],
        "mlp.b_in" => vec![config.d_mlp],
        "mlp.w_out" => vec![config.d_mlp, d],
        _ => vec![d],
    }
}

/// Canonical tensor names and shapes, in manifest order. Layers are 1-based.
pub fn tensor_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![
        (
            "embed.tok".to_string(),
            vec![config.vocab_size, config.d_model],
        ),
        (
            "embed.pos".to_string(),
            vec![config.max_context, config.d_model],
        ),
    ];
    for l in 1..=config.n_layers {
        for suffix in LAYER_TENSORS {
            out.push((
                format!("layer{l}.{suffix}"),
                layer_tensor_shape(config, suffix),
            ));
        }
    }
    out.push(("final_ln.g".to_string(), vec![config.d_model]));
    out.push(("final_ln.b".to_string(), vec![config.d_model]));
    out
}

impl LayerWeights {
    fn tensor(&self, suffix: &str) -> &[f32] {
        match suffix {
            "ln1.g" => &self.ln1_g,
            "ln1.b" => &self.ln1_b,
            "attn.wq" => &self.wq,
            "attn.bq" => &self.bq,
            "attn.wk" => &self.wk,
            "attn.bk" => &self.bk,
            "attn.wv" => &self.wv,
            "attn.bv" => &self.bv,
            "attn.wo" => &self.wo,
            "attn.bo" => &self.bo,
            "ln2.g" => &self.ln2_g,
            "ln2.b" => &self.ln2_b,
            "mlp.w_in" => &self.w_in,
            "mlp.b_in" => &self.b_in,
            "mlp.w_out" => &self.w_out,
            "mlp.b_out" => &self.b_out,
            _ => unreachable!("unknown layer tensor {suffix}"),
        }
    }
}

impl WeightSet {
    /// Gaussian initialisation with standard deviation `std` for matrices and
    /// embeddings, `std / 4` for offsets, unit layer-norm scales.
    pub fn random(config: &ModelConfig, seed: u64, std: f32) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, std)
            .map_err(|e| Error::InvalidParameter(format!("init std: {e}")))?;
        let offset = Normal::new(0.0f32, std / 4.0)
            .map_err(|e| Error::InvalidParameter(format!("init std: {e}")))?;
        let mut draw = |n: usize, dist: &Normal<f32>| -> Vec<f32> {
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let d = config.d_model;
        let token_embedding = draw(config.vocab_size * d, &normal);
        let position_embedding = draw(config.max_context * d, &normal);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: draw(d * d, &normal),
                bq: draw(d, &offset),
                wk: draw(d * d, &normal),
                bk: draw(d, &offset),
                wv: draw(d * d, &normal),
                bv: draw(d, &offset),
                wo: draw(d * d, &normal),
                bo: draw(d, &offset),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w_in: draw(d * config.d_mlp, &normal),
                b_in: draw(config.d_mlp, &offset),
                w_out: draw(config.d_mlp * d, &normal),
                b_out: draw(d, &offset),
            });
        }
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            final_ln_g: vec![1.0; d],
            final_ln_b: vec![0.0; d],
        })
    }

    /// Named views of every tensor, in canonical manifest order.
    pub fn named_tensors<'a>(&'a self, config: &ModelConfig) -> Vec<(String, &'a [f32])> {
        let mut out: Vec<(String, &[f32])> = vec![
            ("embed.tok".into(), &self.token_embedding),
            ("embed.pos".into(), &self.position_embedding),
        ];
        for (idx, layer) in self.layers.iter().enumerate().take(config.n_layers) {
            for suffix in LAYER_TENSORS {
                out.push((format!("layer{}.{suffix}", idx + 1), layer.tensor(suffix)));
            }
        }
        out.push(("final_ln.g".into(), &self.final_ln_g));
        out.push(("final_ln.b".into(), &self.final_ln_b));
        out
    }

    /// Assemble a weight set from named tensors, checking every shape against `config`.
    pub fn from_named(
        config: &ModelConfig,
        mut tensors: BTreeMap<String, Vec<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        for (name, shape) in tensor_layout(config) {
            let numel: usize = shape.iter().product();
            match tensors.get(&name) {
                None => return Err(Error::Manifest(format!("missing tensor {name}"))),
                Some(data) if data.len() != numel => {
                    return Err(Error::Manifest(format!(
                        "tensor {name} has {} values, expected {numel} for shape {shape:?}",
                        data.len()
                    )))
                }
                Some(data) => {
                    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                        return Err(Error::Manifest(format!(
                            "tensor {name} has a non-finite entry at {pos}"
                        )));
                    }
                }
            }
        }
        let mut take = |name: &str| tensors.remove(name).expect("presence checked above");
        let token_embedding = take("embed.tok");
        let position_embedding = take("embed.pos");
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 1..=config.n_layers {
            let mut t = |suffix: &str| take(&format!("layer{l}.{suffix}"));
            layers.push(LayerWeights {
                ln1_g: t("ln1.g"),
                ln1_b: t("ln1.b"),
                wq: t("attn.wq"),
                bq: t("attn.bq"),
                wk: t("attn.wk"),
                bk: t("attn.bk"),
                wv: t("attn.wv"),
                bv: t("attn.bv"),
                wo: t("attn.wo"),
                bo: t("attn.bo"),
                ln2_g: t("ln2.g"),
                ln2_b: t("ln2.b"),
                w_in: t("mlp.w_in"),
                b_in: t("mlp.b_in"),
                w_out: t("mlp.w_out"),
                b_out: t("mlp.b_out"),
            });
        }
        let final_ln_g = take("final_ln.g");
        let final_ln_b = take("final_ln.b");
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Manifest(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            final_ln_g,
            final_ln_b,
        })
    }

    /// Check every tensor shape against `config` and that all entries are finite.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        if self.layers.len() != config.n_layers {
            return Err(Error::Manifest(format!(
                "{} layers present, config declares {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        let layout = tensor_layout(config);
        for ((name, data), (_, shape)) in self.named_tensors(config).into_iter().zip(layout) {
            let numel: usize = shape.iter().product();
            if data.len() != numel {
                return Err(Error::Manifest(format!(
                    "tensor {name} has {} values, expected {numel}",
                    data.len()
                )));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Manifest(format!("tensor {name} is not finite")));
            }
        }
        Ok(())
    }
}
