//! Desk-scale transformer memory laboratory: a GPT-2 style forward pass with
//! injectable attention biases, attention taxonomy, power-law recency fitting
//! against behavioral targets, and the evaluations built on them.

pub mod bias;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod optim;
pub mod seed;
pub mod stimuli;
pub mod taxonomy;
pub mod tokenizer;

pub use bias::{materialize_bias, BiasParams, HeadParams};
pub use error::{Error, Result};
pub use model::manifest::{load_model, save_model};
pub use model::{AttentionBias, AttentionTrace, ForwardResult, Model, ModelConfig, WeightSet};
pub use optim::{GradientMethod, OptimConfig};
pub use stimuli::{BehavioralRecord, EncodedRecord, Prompt, Stimulus};
pub use taxonomy::{Category, TaxonomySummary};
pub use tokenizer::Vocab;
