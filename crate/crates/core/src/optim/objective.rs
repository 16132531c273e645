use crate::bias::BiasParams;
use crate::error::{Error, Result};
use crate::model::{LayerInput, Model};
use crate::stimuli::{EncodedRecord, Prompt};

/// A scalar loss over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> Result<f64>;

    /// Training loss plus, when the objective holds out prompts, the held-out loss.
    fn value_and_validation(&self, theta: &[f64]) -> Result<(f64, Option<f64>)> {
        Ok((self.value(theta)?, None))
    }
}

/// Adapts a closure into an [`Objective`]; used to inject analytic test functions.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok((self.f)(theta))
    }
}

/// Subject-weighted squared error, `(1/W) * sum_i N_i (human_i - model_i)^2`,
/// over prompts that at least one subject answered.
pub fn weighted_squared_error(
    prompts: &[Prompt],
    model_prob: impl Fn(usize) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut answered = 0usize;
    for p in prompts {
        let Some(human) = p.p_human else { continue };
        if p.n_subjects == 0 {
            continue;
        }
        let m = model_prob(p.position)?;
        total += p.n_subjects as f64 * (human - m).powi(2);
        answered += 1;
    }
    if answered == 0 {
        return Err(Error::Empty("answered prompt set"));
    }
    Ok(total / answered as f64)
}

pub(crate) fn check_prompt_positions(prompts: &[Prompt], len: usize) -> Result<()> {
    for p in prompts {
        if p.position == 0 {
            return Err(Error::InvalidRecord(
                "prompt at position 0 has no context to predict from".into(),
            ));
        }
        if p.position >= len {
            return Err(Error::InvalidRecord(format!(
                "prompt position {} beyond stimulus of {len} tokens",
                p.position
            )));
        }
    }
    Ok(())
}

/// Weighted squared error between human accuracy and the biased model's
/// probability of the true word, from one forward pass.
pub fn objective(model: &Model, params: &BiasParams, record: &EncodedRecord) -> Result<f64> {
    params.validate(model.config().n_layers, model.config().n_heads)?;
    let tokens = record.stimulus.tokens();
    check_prompt_positions(&record.prompts, tokens.len())?;
    let bias = params.to_attention_bias(tokens.len());
    let result = model.forward(tokens, Some(&bias), false)?;
    weighted_squared_error(&record.prompts, |pos| {
        result
            .probability_at(pos)
            .ok_or(Error::InvalidRecord(format!(
                "no prediction at position {pos}"
            )))
    })
}

/// The behavioral objective over the `2H` recency parameters of one layer, with a
/// fixed train/validation split of the prompts. Layers before the biased one
/// are computed once and cached.
pub struct BehavioralObjective<'a> {
    model: &'a Model,
    input: LayerInput,
    layer: usize,
    train: Vec<Prompt>,
    validation: Vec<Prompt>,
}

impl<'a> BehavioralObjective<'a> {
    pub fn new(
        model: &'a Model,
        record: &EncodedRecord,
        layer: usize,
        train: Vec<Prompt>,
        validation: Vec<Prompt>,
    ) -> Result<Self> {
        let input = model.prefix(record.stimulus.tokens(), layer)?;
        Self::with_input(model, input, train, validation)
    }

    /// Reuse an already computed prefix (it fixes both the tokens and the layer).
    pub fn with_input(
        model: &'a Model,
        input: LayerInput,
        train: Vec<Prompt>,
        validation: Vec<Prompt>,
    ) -> Result<Self> {
        let len = input.tokens().len();
        check_prompt_positions(&train, len)?;
        check_prompt_positions(&validation, len)?;
        if !train
            .iter()
            .any(|p| p.n_subjects > 0 && p.p_human.is_some())
        {
            return Err(Error::Empty("training prompt set"));
        }
        Ok(Self {
            model,
            layer: input.layer(),
            input,
            train,
            validation,
        })
    }

    fn losses(&self, theta: &[f64]) -> Result<(f64, Option<f64>)> {
        let params = BiasParams::from_slice(self.layer, theta)?;
        let bias = params.to_attention_bias(self.input.tokens().len());
        let result = self.model.forward_from(&self.input, Some(&bias))?;
        let prob = |pos: usize| {
            result
                .probability_at(pos)
                .ok_or(Error::InvalidRecord(format!(
                    "no prediction at position {pos}"
                )))
        };
        let train = weighted_squared_error(&self.train, prob)?;
        let validation = if self.validation.is_empty() {
            None
        } else {
            Some(weighted_squared_error(&self.validation, prob)?)
        };
        Ok((train, validation))
    }
}

impl Objective for BehavioralObjective<'_> {
    fn dim(&self) -> usize {
        2 * self.model.config().n_heads
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.losses(theta)?.0)
    }

    fn value_and_validation(&self, theta: &[f64]) -> Result<(f64, Option<f64>)> {
        self.losses(theta)
    }
}
