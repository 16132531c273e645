use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::gradient::{estimate_gradient, GradientMethod};
use super::objective::{objective, BehavioralObjective, Objective};
use crate::bias::BiasParams;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed::derive_seed;
use crate::stimuli::{EncodedRecord, Prompt, Stimulus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub n_seeds: usize,
    pub validation_fraction: f64,
    pub gradient_method: GradientMethod,
    pub fd_step: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub master_seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            epochs: 2000,
            n_seeds: 5,
            validation_fraction: 0.30,
            gradient_method: GradientMethod::CentralFd,
            fd_step: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            master_seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidParameter("need at least one seed".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidParameter(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fd step {} must be positive",
                self.fd_step
            )));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "{name} {b} outside [0, 1)"
                )));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidParameter(
                "adam_epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss after every epoch, with the initial loss first (`epochs + 1` entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub train: Vec<f64>,
    pub validation: Option<Vec<f64>>,
}

/// Minimise `objective` from `init` with Adam on numerically estimated gradients.
/// `label` tags divergence diagnostics.
pub fn minimize(
    objective: &dyn Objective,
    init: Vec<f64>,
    config: &OptimConfig,
    gradient_seed: u64,
    label: usize,
) -> Result<(Vec<f64>, LossCurves)> {
    config.validate()?;
    let mut theta = init;
    let mut adam = Adam::new(
        theta.len(),
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let diverged = |epoch: usize, detail: String| Error::Divergence {
        seed: label,
        epoch,
        detail,
    };
    let record = |epoch: usize,
                  theta: &[f64],
                  train: &mut Vec<f64>,
                  val: &mut Option<Vec<f64>>|
     -> Result<()> {
        let (t, v) = objective
            .value_and_validation(theta)
            .map_err(|e| diverged(epoch, e.to_string()))?;
        if !t.is_finite() || v.is_some_and(|v| !v.is_finite()) {
            return Err(diverged(epoch, format!("loss is {t}")));
        }
        train.push(t);
        if let Some(v) = v {
            val.get_or_insert_with(Vec::new).push(v);
        }
        Ok(())
    };

    let mut train = Vec::with_capacity(config.epochs + 1);
    let mut validation = None;
    record(0, &theta, &mut train, &mut validation)?;
    for epoch in 1..=config.epochs {
        let grad = estimate_gradient(
            objective,
            &theta,
            config.gradient_method,
            config.fd_step,
            derive_seed(gradient_seed, &[epoch as u64]),
        )
        .map_err(|e| match e {
            Error::NonFinite(d) => diverged(epoch, d),
            other => other,
        })?;
        adam.update(&mut theta, &grad);
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(diverged(epoch, "parameters became non-finite".into()));
        }
        record(epoch, &theta, &mut train, &mut validation)?;
    }
    Ok((theta, LossCurves { train, validation }))
}

/// Hold out `round(fraction * n_r)` prompts of each presentation `r`, keeping
/// both sides non-empty when there are at least two answered prompts.
pub fn stratified_split(
    prompts: &[Prompt],
    stimulus: &Stimulus,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Prompt>, Vec<Prompt>) {
    let answered: Vec<&Prompt> = prompts
        .iter()
        .filter(|p| p.n_subjects > 0 && p.p_human.is_some())
        .collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for r in 1..=stimulus.repeats() {
        let mut group: Vec<Prompt> = answered
            .iter()
            .filter(|p| stimulus.presentation_of(p.position) == r)
            .map(|&p| p.clone())
            .collect();
        group.shuffle(rng);
        let k = (fraction * group.len() as f64).round() as usize;
        let rest = group.split_off(k.min(group.len()));
        val.extend(group);
        train.extend(rest);
    }
    if fraction > 0.0 && val.is_empty() && train.len() >= 2 {
        let idx = rng_index(rng, train.len());
        val.push(train.swap_remove(idx));
    }
    if train.is_empty() && val.len() >= 2 {
        let idx = rng_index(rng, val.len());
        train.push(val.swap_remove(idx));
    }
    train.sort_by_key(|p| p.position);
    val.sort_by_key(|p| p.position);
    (train, val)
}

fn rng_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}

/// Outcome of one initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedFit {
    pub seed: usize,
    pub initial: BiasParams,
    pub params: BiasParams,
    pub curves: LossCurves,
    pub train_positions: Vec<usize>,
    pub validation_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    pub seed: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub layer: usize,
    pub runs: Vec<SeedFit>,
    pub failures: Vec<SeedFailure>,
}

impl FitReport {
    /// Run with the lowest final training loss.
    pub fn best(&self) -> Option<&SeedFit> {
        self.runs.iter().min_by(|a, b| {
            let fa = a.curves.train.last().copied().unwrap_or(f64::INFINITY);
            let fb = b.curves.train.last().copied().unwrap_or(f64::INFINITY);
            fa.total_cmp(&fb)
        })
    }

    /// Mean over runs of `final / initial` training loss.
    pub fn mean_train_ratio(&self) -> Option<f64> {
        mean(
            self.runs
                .iter()
                .map(|r| r.curves.train[r.curves.train.len() - 1] / r.curves.train[0]),
        )
    }

    /// Loss-curve CSV: `epoch,seed,train_loss,val_loss`.
    pub fn write_curves_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,seed,train_loss,val_loss")?;
        for run in &self.runs {
            for (epoch, t) in run.curves.train.iter().enumerate() {
                let v = run
                    .curves
                    .validation
                    .as_ref()
                    .map(|v| v[epoch].to_string())
                    .unwrap_or_default();
                writeln!(out, "{epoch},{},{t},{v}", run.seed)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Fit per-head recency parameters of `layer` to the record's human targets,
/// once per seed. Seeds run in parallel; a diverging seed is reported in
/// `failures` and the others continue.
pub fn optimize(
    model: &Model,
    record: &EncodedRecord,
    layer: usize,
    config: &OptimConfig,
) -> Result<FitReport> {
    config.validate()?;
    let answered = record.answered().count();
    if answered < 4 {
        return Err(Error::InvalidRecord(format!(
            "need at least 4 answered prompts to fit, found {answered}"
        )));
    }
    let n_heads = model.config().n_heads;
    let input = model.prefix(record.stimulus.tokens(), layer)?;

    let outcomes: Vec<Result<SeedFit>> = (0..config.n_seeds)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.master_seed,
                &[layer as u64, seed as u64],
            ));
            let init: Vec<f64> = (0..2 * n_heads)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let (train, val) = stratified_split(
                &record.prompts,
                &record.stimulus,
                config.validation_fraction,
                &mut rng,
            );
            let train_positions = train.iter().map(|p| p.position).collect();
            let validation_positions = val.iter().map(|p| p.position).collect();
            let objective = BehavioralObjective::with_input(model, input.clone(), train, val)?;
            let grad_seed = derive_seed(config.master_seed, &[layer as u64, seed as u64, 1]);
            let (theta, curves) = minimize(&objective, init.clone(), config, grad_seed, seed)?;
            Ok(SeedFit {
                seed,
                initial: BiasParams::from_slice(layer, &init)?,
                params: BiasParams::from_slice(layer, &theta)?,
                curves,
                train_positions,
                validation_positions,
            })
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(fit) => runs.push(fit),
            Err(e @ Error::Divergence { .. }) => failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(FitReport {
        layer,
        runs,
        failures,
    })
}

/// Objective of `fitted` on each held-out stimulus, with the bias rebuilt at
/// that stimulus's own length.
pub fn cross_stimulus_eval(
    model: &Model,
    fitted: &BiasParams,
    held_out: &[EncodedRecord],
) -> Result<Vec<f64>> {
    fitted.validate(model.config().n_layers, model.config().n_heads)?;
    held_out
        .par_iter()
        .map(|rec| {
            if rec.stimulus.len() > model.config().max_context {
                return Err(Error::ContextOverflow {
                    len: rec.stimulus.len(),
                    max: model.config().max_context,
                });
            }
            objective(model, fitted, rec)
        })
        .collect()
}
