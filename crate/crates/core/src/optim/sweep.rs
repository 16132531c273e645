use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use super::fit::{optimize, OptimConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy_and_correlation, perplexity_ratio, predict_prompts, CorrelationSet,
};
use crate::model::Model;
use crate::stimuli::EncodedRecord;

/// Per-layer outcome of fitting the bias on one stimulus and evaluating it on
/// the others. Correlation deltas are `biased - baseline`; `None` when either
/// side is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSweepRow {
    pub layer: usize,
    pub n_runs: usize,
    pub n_failed: usize,
    /// Mean over seeds of final / initial training loss.
    pub train_ratio: Option<f64>,
    pub delta_r_first_pooled: Option<f64>,
    pub delta_r_later_pooled: Option<f64>,
    pub delta_r_first_mean: Option<f64>,
    pub delta_r_later_mean: Option<f64>,
    pub perplexity_ratio: Option<f64>,
}

fn delta(
    base: &CorrelationSet,
    biased: &CorrelationSet,
    scope: &str,
    presentation: &str,
) -> Option<f64> {
    Some(biased.get(scope, presentation)? - base.get(scope, presentation)?)
}

/// Repeat the fit independently at every layer. The bias is fitted on `train`
/// and scored on `held_out` (on `train` itself when nothing is held out), with
/// the perplexity cost measured on `corpus` when it is non-empty.
pub fn layer_sweep(
    model: &Model,
    train: &EncodedRecord,
    held_out: &[EncodedRecord],
    corpus: &[Vec<u32>],
    config: &OptimConfig,
) -> Result<Vec<LayerSweepRow>> {
    config.validate()?;
    let eval_set: &[EncodedRecord] = if held_out.is_empty() {
        std::slice::from_ref(train)
    } else {
        held_out
    };
    let baseline: Vec<_> = eval_set
        .iter()
        .map(|r| predict_prompts(model, r, None))
        .collect::<Result<_>>()?;
    let (_, base_corr) = accuracy_and_correlation(eval_set, &baseline, "baseline");

    (1..=model.config().n_layers)
        .into_par_iter()
        .map(|layer| {
            let report = optimize(model, train, layer, config)?;
            let Some(best) = report.best() else {
                return Ok(LayerSweepRow {
                    layer,
                    n_runs: 0,
                    n_failed: report.failures.len(),
                    train_ratio: None,
                    delta_r_first_pooled: None,
                    delta_r_later_pooled: None,
                    delta_r_first_mean: None,
                    delta_r_later_mean: None,
                    perplexity_ratio: None,
                });
            };
            let biased: Vec<_> = eval_set
                .iter()
                .map(|r| predict_prompts(model, r, Some(&best.params)))
                .collect::<Result<_>>()?;
            let (_, corr) = accuracy_and_correlation(eval_set, &biased, "biased");
            let ppl = if corpus.is_empty() {
                None
            } else {
                Some(perplexity_ratio(model, corpus, &best.params)?.ratio)
            };
            Ok(LayerSweepRow {
                layer,
                n_runs: report.runs.len(),
                n_failed: report.failures.len(),
                train_ratio: report.mean_train_ratio(),
                delta_r_first_pooled: delta(&base_corr, &corr, "pooled", "1"),
                delta_r_later_pooled: delta(&base_corr, &corr, "pooled", "later"),
                delta_r_first_mean: delta(&base_corr, &corr, "mean", "1"),
                delta_r_later_mean: delta(&base_corr, &corr, "mean", "later"),
                perplexity_ratio: ppl,
            })
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|rows| {
            if rows.is_empty() {
                Err(Error::Empty("layer list"))
            } else {
                Ok(rows)
            }
        })
}

pub fn write_layer_sweep_csv<W: Write>(rows: &[LayerSweepRow], mut out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(
        out,
        "layer,n_runs,n_failed,train_ratio,delta_r_first_pooled,delta_r_later_pooled,delta_r_first_mean,delta_r_later_mean,perplexity_ratio"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.layer,
            r.n_runs,
            r.n_failed,
            opt(r.train_ratio),
            opt(r.delta_r_first_pooled),
            opt(r.delta_r_later_pooled),
            opt(r.delta_r_first_mean),
            opt(r.delta_r_later_mean),
            opt(r.perplexity_ratio)
        )?;
    }
    Ok(())
}
