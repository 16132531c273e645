//! Per-presentation aggregation, human/model correlation, perplexity cost of a
//! bias, taxonomy deltas, and the repeated-span perplexity sweep.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bias::BiasParams;
use crate::error::{Error, Result};
use crate::model::{sequence_nll, top1_flags, Model};
use crate::seed::derive_seed;
use crate::stimuli::EncodedRecord;
use crate::taxonomy::{layer_summary, Category, CategoryMass, TaxonomySummary};

/// Masses are floored here before taking log-ratios.
pub const MASS_FLOOR: f64 = 1e-12;

/// 1-based presentation of `position` given the presentation start offsets.
pub fn presentation_index(position: usize, boundaries: &[usize]) -> usize {
    1 + boundaries.iter().filter(|&&b| b <= position).count()
}

/// Mean of `values` within each presentation. Presentations without values
/// come back as `None`.
pub fn per_presentation_mean(
    positions: &[usize],
    values: &[f64],
    boundaries: &[usize],
) -> Vec<Option<f64>> {
    let mut sums = vec![(0.0, 0usize); boundaries.len() + 1];
    for (&p, &v) in positions.iter().zip(values) {
        let slot = &mut sums[presentation_index(p, boundaries) - 1];
        slot.0 += v;
        slot.1 += 1;
    }
    sums.into_iter()
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect()
}

/// Why a correlation could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    TooFewPairs,
    ZeroVariance,
    LengthMismatch,
}

impl fmt::Display for Undefined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TooFewPairs => "too_few_pairs",
            Self::ZeroVariance => "zero_variance",
            Self::LengthMismatch => "length_mismatch",
        })
    }
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> std::result::Result<f64, Undefined> {
    if x.len() != y.len() {
        return Err(Undefined::LengthMismatch);
    }
    let n = x.len();
    if n < 2 {
        return Err(Undefined::TooFewPairs);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Constant series leave rounding residue of order eps * |value| per term.
    let flat = |ss: f64, v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        ss <= n as f64 * (4.0 * f64::EPSILON * scale).powi(2)
    };
    if flat(sxx, x) || flat(syy, y) {
        return Err(Undefined::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_by_presentation(
    positions: &[usize],
    human: &[f64],
    model: &[f64],
    boundaries: &[usize],
) -> Vec<std::result::Result<f64, Undefined>> {
    let mut groups = vec![(Vec::new(), Vec::new()); boundaries.len() + 1];
    for ((&p, &h), &m) in positions.iter().zip(human).zip(model) {
        let g = &mut groups[presentation_index(p, boundaries) - 1];
        g.0.push(h);
        g.1.push(m);
    }
    groups.iter().map(|(h, m)| pearson(h, m)).collect()
}

/// Model predictions at the answered prompts of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPredictions {
    pub positions: Vec<usize>,
    pub human: Vec<f64>,
    pub n_subjects: Vec<u32>,
    /// Probability of the true token.
    pub model_prob: Vec<f64>,
    /// 1.0 when the true token is the argmax.
    pub model_top1: Vec<f64>,
}

pub fn predict_prompts(
    model: &Model,
    record: &EncodedRecord,
    bias: Option<&BiasParams>,
) -> Result<PromptPredictions> {
    let tokens = record.stimulus.tokens();
    let attention_bias = match bias {
        Some(p) => {
            p.validate(model.config().n_layers, model.config().n_heads)?;
            Some(p.to_attention_bias(tokens.len()))
        }
        None => None,
    };
    let result = model.forward(tokens, attention_bias.as_ref(), false)?;
    let flags = top1_flags(&result, tokens)?;
    let mut out = PromptPredictions {
        positions: Vec::new(),
        human: Vec::new(),
        n_subjects: Vec::new(),
        model_prob: Vec::new(),
        model_top1: Vec::new(),
    };
    for p in record.answered() {
        let prob = result.probability_at(p.position).ok_or_else(|| {
            Error::InvalidRecord(format!("prompt position {} has no prediction", p.position))
        })?;
        out.positions.push(p.position);
        out.human.push(p.p_human.unwrap_or_default());
        out.n_subjects.push(p.n_subjects);
        out.model_prob.push(prob);
        out.model_top1
            .push(if flags[p.position - 1] { 1.0 } else { 0.0 });
    }
    Ok(out)
}

/// One row of `accuracy.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub stimulus_id: String,
    pub condition: String,
    pub presentation: usize,
    pub n_prompts: usize,
    pub human: Option<f64>,
    pub model_prob: Option<f64>,
    pub model_top1: Option<f64>,
}

/// One row of `correlation.csv`. `scope` is a stimulus id, `pooled` (pairs
/// pooled across stimuli) or `mean` (mean of per-stimulus r); `presentation`
/// is a 1-based index or `later` for every presentation after the first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub scope: String,
    pub condition: String,
    pub presentation: String,
    pub n_pairs: usize,
    pub r: Option<f64>,
    pub note: Option<String>,
}

/// Correlations for one condition over a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet {
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationSet {
    pub fn get(&self, scope: &str, presentation: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scope == scope && r.presentation == presentation)
            .and_then(|r| r.r)
    }
}

fn correlation_row(
    scope: &str,
    condition: &str,
    presentation: String,
    h: &[f64],
    m: &[f64],
) -> CorrelationRow {
    let r = pearson(h, m);
    CorrelationRow {
        scope: scope.to_string(),
        condition: condition.to_string(),
        presentation,
        n_pairs: h.len(),
        r: r.ok(),
        note: r.err().map(|e| e.to_string()),
    }
}

fn mean_row(condition: &str, presentation: String, rows: &[&CorrelationRow]) -> CorrelationRow {
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.r).collect();
    let n_pairs = rows.iter().map(|r| r.n_pairs).sum();
    let r = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    CorrelationRow {
        scope: "mean".into(),
        condition: condition.to_string(),
        presentation,
        n_pairs,
        r,
        note: r.is_none().then(|| "no_defined_stimulus".to_string()),
    }
}

/// Accuracy and correlation rows for one condition. Correlations use the
/// probability of the true token.
pub fn accuracy_and_correlation(
    records: &[EncodedRecord],
    predictions: &[PromptPredictions],
    condition: &str,
) -> (Vec<AccuracyRow>, CorrelationSet) {
    let mut accuracy = Vec::new();
    let mut per_stimulus = Vec::new();
    let max_r = records
        .iter()
        .map(|r| r.stimulus.repeats())
        .max()
        .unwrap_or(0);
    // pooled[r - 1] holds (human, model) pairs for presentation r; index max_r is "later".
    let mut pooled = vec![(Vec::new(), Vec::new()); max_r + 1];

    for (rec, pred) in records.iter().zip(predictions) {
        let id = &rec.stimulus.id;
        let bounds = rec.stimulus.boundaries();
        let human = per_presentation_mean(&pred.positions, &pred.human, &bounds);
        let prob = per_presentation_mean(&pred.positions, &pred.model_prob, &bounds);
        let top1 = per_presentation_mean(&pred.positions, &pred.model_top1, &bounds);
        let mut groups = vec![(Vec::new(), Vec::new()); bounds.len() + 1];
        let mut later = (Vec::new(), Vec::new());
        for ((&p, &h), &m) in pred.positions.iter().zip(&pred.human).zip(&pred.model_prob) {
            let r = presentation_index(p, &bounds);
            groups[r - 1].0.push(h);
            groups[r - 1].1.push(m);
            pooled[r - 1].0.push(h);
            pooled[r - 1].1.push(m);
            if r > 1 {
                later.0.push(h);
                later.1.push(m);
                pooled[max_r].0.push(h);
                pooled[max_r].1.push(m);
            }
        }
        for (r, (h, m)) in groups.iter().enumerate() {
            accuracy.push(AccuracyRow {
                stimulus_id: id.clone(),
                condition: condition.to_string(),
                presentation: r + 1,
                n_prompts: h.len(),
                human: human[r],
                model_prob: prob[r],
                model_top1: top1[r],
            });
            per_stimulus.push(correlation_row(id, condition, (r + 1).to_string(), h, m));
        }
        if !bounds.is_empty() {
            per_stimulus.push(correlation_row(
                id,
                condition,
                "later".into(),
                &later.0,
                &later.1,
            ));
        }
    }

    let mut rows = per_stimulus.clone();
    let labels: Vec<String> = (1..=max_r)
        .map(|r| r.to_string())
        .chain(["later".to_string()])
        .collect();
    for (idx, label) in labels.iter().enumerate() {
        if label == "later" && max_r < 2 {
            continue;
        }
        let (h, m) = &pooled[idx];
        rows.push(correlation_row("pooled", condition, label.clone(), h, m));
        let matching: Vec<&CorrelationRow> = per_stimulus
            .iter()
            .filter(|r| &r.presentation == label)
            .collect();
        rows.push(mean_row(condition, label.clone(), &matching));
    }
    (accuracy, CorrelationSet { rows })
}

/// Split `tokens` into context-sized windows and return the NLL of every
/// predicted token. Windows are scored independently; a trailing window of one
/// token has nothing to predict and is dropped.
pub fn text_nlls(model: &Model, tokens: &[u32], bias: Option<&BiasParams>) -> Result<Vec<f64>> {
    let ctx = model.config().max_context;
    let mut out = Vec::with_capacity(tokens.len());
    for window in tokens.chunks(ctx) {
        if window.len() < 2 {
            continue;
        }
        let attention_bias = bias.map(|p| p.to_attention_bias(window.len()));
        let result = model.forward(window, attention_bias.as_ref(), false)?;
        out.extend(sequence_nll(&result, window)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerplexityReport {
    pub n_texts: usize,
    pub n_tokens: usize,
    /// Arithmetic mean over texts of per-text perplexity.
    pub baseline: f64,
    pub biased: f64,
    /// `biased / baseline`.
    pub ratio: f64,
    /// Perplexity over all scored tokens pooled together.
    pub pooled_baseline: f64,
    pub pooled_biased: f64,
    pub pooled_ratio: f64,
}

/// Perplexity with `bias` relative to the unbiased model, over held-out texts.
pub fn perplexity_ratio(
    model: &Model,
    texts: &[Vec<u32>],
    bias: &BiasParams,
) -> Result<PerplexityReport> {
    bias.validate(model.config().n_layers, model.config().n_heads)?;
    let usable: Vec<&Vec<u32>> = texts.iter().filter(|t| t.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Empty("corpus (no text has two or more tokens)"));
    }
    let per_text: Vec<(Vec<f64>, Vec<f64>)> = usable
        .par_iter()
        .map(|t| Ok((text_nlls(model, t, None)?, text_nlls(model, t, Some(bias))?)))
        .collect::<Result<_>>()?;

    let mut base_ppl = Vec::with_capacity(per_text.len());
    let mut bias_ppl = Vec::with_capacity(per_text.len());
    let mut all_base = Vec::new();
    let mut all_bias = Vec::new();
    for (b, p) in &per_text {
        base_ppl.push(crate::model::perplexity(b)?);
        bias_ppl.push(crate::model::perplexity(p)?);
        all_base.extend_from_slice(b);
        all_bias.extend_from_slice(p);
    }
    let baseline = base_ppl.iter().sum::<f64>() / base_ppl.len() as f64;
    let biased = bias_ppl.iter().sum::<f64>() / bias_ppl.len() as f64;
    let pooled_baseline = crate::model::perplexity(&all_base)?;
    let pooled_biased = crate::model::perplexity(&all_bias)?;
    Ok(PerplexityReport {
        n_texts: per_text.len(),
        n_tokens: all_base.len(),
        baseline,
        biased,
        ratio: biased / baseline,
        pooled_baseline,
        pooled_biased,
        pooled_ratio: pooled_biased / pooled_baseline,
    })
}

/// `ln(post / pre)` per layer and category, both floored at [`MASS_FLOOR`].
pub fn taxonomy_delta(pre: &TaxonomySummary, post: &TaxonomySummary) -> Result<Vec<CategoryMass>> {
    if pre.n_layers() != post.n_layers() {
        return Err(Error::LengthMismatch {
            expected: pre.n_layers(),
            got: post.n_layers(),
        });
    }
    Ok(pre
        .per_layer
        .iter()
        .zip(&post.per_layer)
        .map(|(a, b)| {
            let mut out = [0.0; 6];
            for c in 0..6 {
                out[c] = (b[c].max(MASS_FLOOR) / a[c].max(MASS_FLOOR)).ln();
            }
            out
        })
        .collect())
}

/// Taxonomy summaries over `records` without and with `bias`.
pub fn taxonomy_pre_post(
    model: &Model,
    records: &[EncodedRecord],
    bias: &BiasParams,
) -> Result<(TaxonomySummary, TaxonomySummary)> {
    bias.validate(model.config().n_layers, model.config().n_heads)?;
    let pairs: Vec<(TaxonomySummary, TaxonomySummary)> = records
        .par_iter()
        .map(|rec| {
            let tokens = rec.stimulus.tokens();
            let summarize = |b: Option<&BiasParams>| -> Result<TaxonomySummary> {
                let ab = b.map(|p| p.to_attention_bias(tokens.len()));
                let result = model.forward(tokens, ab.as_ref(), true)?;
                let trace = result
                    .trace
                    .as_ref()
                    .ok_or(Error::Empty("attention trace"))?;
                layer_summary(trace, tokens)
            };
            Ok((summarize(None)?, summarize(Some(bias))?))
        })
        .collect::<Result<_>>()?;
    let (pre, post): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((
        TaxonomySummary::combine(&pre)?,
        TaxonomySummary::combine(&post)?,
    ))
}

/// One row of `taxonomy_delta.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxonomyDeltaRow {
    pub layer: usize,
    pub category: String,
    pub pre: f64,
    pub post: f64,
    pub log_ratio: f64,
}

pub fn taxonomy_delta_rows(
    pre: &TaxonomySummary,
    post: &TaxonomySummary,
) -> Result<Vec<TaxonomyDeltaRow>> {
    let delta = taxonomy_delta(pre, post)?;
    let mut rows = Vec::new();
    for (l, d) in delta.iter().enumerate() {
        for c in Category::ALL {
            rows.push(TaxonomyDeltaRow {
                layer: l + 1,
                category: c.name().to_string(),
                pre: pre.per_layer[l][c.index()],
                post: post.per_layer[l][c.index()],
                log_ratio: d[c.index()],
            });
        }
    }
    Ok(rows)
}

/// Parameters of the repeated-span perplexity sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanSweepConfig {
    pub lengths: Vec<usize>,
    pub n_spans: usize,
    pub max_repeats: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SpanSweepConfig {
    fn default() -> Self {
        Self {
            lengths: (10..=570).step_by(40).collect(),
            n_spans: 100,
            max_repeats: 15,
            max_tokens: 1024,
            seed: 0,
        }
    }
}

/// Presentation layout for a span of `length` under the repeat and token caps:
/// number of full presentations and the length of a trailing partial one.
pub fn sweep_layout(length: usize, max_repeats: usize, max_tokens: usize) -> (usize, usize) {
    let full = (max_tokens / length).min(max_repeats);
    let partial = if full < max_repeats {
        (max_tokens - full * length).min(length)
    } else {
        0
    };
    (full, partial)
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub length: usize,
    pub presentation: usize,
    /// False for a presentation truncated by the token cap.
    pub complete: bool,
    /// Scored token positions in this presentation (position 0 is never scored).
    pub n_tokens: usize,
    pub mean_perplexity: f64,
}

/// For each span length, repeat `n_spans` randomly placed corpus spans up to
/// the caps, average per-token perplexity across spans at each position, then
/// average within each presentation.
pub fn span_sweep(
    model: &Model,
    corpus: &[u32],
    config: &SpanSweepConfig,
) -> Result<Vec<SweepRow>> {
    if config.lengths.is_empty() {
        return Err(Error::Empty("span length list"));
    }
    if config.n_spans == 0 || config.max_repeats == 0 {
        return Err(Error::InvalidParameter(
            "spans and repeats must be at least 1".into(),
        ));
    }
    if config.max_tokens > model.config().max_context {
        return Err(Error::ContextOverflow {
            len: config.max_tokens,
            max: model.config().max_context,
        });
    }
    for &length in &config.lengths {
        if length == 0 {
            return Err(Error::InvalidParameter(
                "span length must be at least 1".into(),
            ));
        }
        if length > corpus.len() {
            return Err(Error::InsufficientPositions {
                needed: length,
                available: corpus.len(),
            });
        }
        if length > config.max_tokens {
            return Err(Error::ContextOverflow {
                len: length,
                max: config.max_tokens,
            });
        }
    }

    let units: Vec<(usize, usize)> = config
        .lengths
        .iter()
        .enumerate()
        .flat_map(|(li, _)| (0..config.n_spans).map(move |s| (li, s)))
        .collect();
    let per_unit: Vec<Vec<f64>> = units
        .par_iter()
        .map(|&(li, s)| {
            let length = config.lengths[li];
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[length as u64, s as u64]));
            let start = rng.random_range(0..=corpus.len() - length);
            let span = &corpus[start..start + length];
            let (full, partial) = sweep_layout(length, config.max_repeats, config.max_tokens);
            let total = full * length + partial;
            let tokens: Vec<u32> = span.iter().copied().cycle().take(total).collect();
            let result = model.forward(&tokens, None, false)?;
            Ok(sequence_nll(&result, &tokens)?
                .into_iter()
                .map(f64::exp)
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (li, &length) in config.lengths.iter().enumerate() {
        let spans = &per_unit[li * config.n_spans..(li + 1) * config.n_spans];
        let n_pos = spans[0].len();
        let mean_at: Vec<f64> = (0..n_pos)
            .map(|k| spans.iter().map(|v| v[k]).sum::<f64>() / spans.len() as f64)
            .collect();
        let (full, partial) = sweep_layout(length, config.max_repeats, config.max_tokens);
        let n_presentations = full + usize::from(partial > 0);
        for r in 0..n_presentations {
            // Global positions [r * length, end); mean_at index k is position k + 1.
            let lo = (r * length).max(1);
            let hi = (r * length + length).min(full * length + partial);
            if hi <= lo {
                continue;
            }
            let vals = &mean_at[lo - 1..hi - 1];
            rows.push(SweepRow {
                length,
                presentation: r + 1,
                complete: r < full,
                n_tokens: vals.len(),
                mean_perplexity: vals.iter().sum::<f64>() / vals.len() as f64,
            });
        }
    }
    Ok(rows)
}

/// Weighted squared error on one stimulus without and with the fitted bias.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveRow {
    pub stimulus_id: String,
    pub baseline: f64,
    pub biased: f64,
}

/// Full evaluation output; serialized as `report.json` and flattened into CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct EvalReport {
    pub objectives: Vec<ObjectiveRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub correlation: Vec<CorrelationRow>,
    pub perplexity: Option<PerplexityReport>,
    pub taxonomy_delta: Vec<TaxonomyDeltaRow>,
    pub sweep: Vec<SweepRow>,
}

/// Baseline (and, given `bias`, biased) accuracy and correlation over
/// `records`, plus the held-out objective, taxonomy shift, and perplexity cost
/// of the bias. Perplexity is skipped when `corpus` is empty.
pub fn evaluate(
    model: &Model,
    records: &[EncodedRecord],
    bias: Option<&BiasParams>,
    corpus: &[Vec<u32>],
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Empty("behavioral record list"));
    }
    let baseline: Vec<PromptPredictions> = records
        .par_iter()
        .map(|r| predict_prompts(model, r, None))
        .collect::<Result<_>>()?;
    let (mut accuracy, base_corr) = accuracy_and_correlation(records, &baseline, "baseline");
    let mut correlation = base_corr.rows;
    let mut report = EvalReport::default();
    if let Some(params) = bias {
        let biased: Vec<PromptPredictions> = records
            .par_iter()
            .map(|r| predict_prompts(model, r, Some(params)))
            .collect::<Result<_>>()?;
        let (acc, corr) = accuracy_and_correlation(records, &biased, "biased");
        accuracy.extend(acc);
        correlation.extend(corr.rows);
        let zeros = BiasParams::zeros(params.layer, params.heads.len());
        report.objectives = records
            .par_iter()
            .map(|r| {
                Ok(ObjectiveRow {
                    stimulus_id: r.stimulus.id.clone(),
                    baseline: crate::optim::objective(model, &zeros, r)?,
                    biased: crate::optim::objective(model, params, r)?,
                })
            })
            .collect::<Result<_>>()?;
        let (pre, post) = taxonomy_pre_post(model, records, params)?;
        report.taxonomy_delta = taxonomy_delta_rows(&pre, &post)?;
        if !corpus.is_empty() {
            report.perplexity = Some(perplexity_ratio(model, corpus, params)?);
        }
    }
    report.accuracy = accuracy;
    report.correlation = correlation;
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_accuracy_csv<W: Write>(rows: &[AccuracyRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "stimulus_id,condition,presentation,n_prompts,human,model_prob,model_top1"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.stimulus_id,
            r.condition,
            r.presentation,
            r.n_prompts,
            opt(r.human),
            opt(r.model_prob),
            opt(r.model_top1)
        )?;
    }
    Ok(())
}

pub fn write_correlation_csv<W: Write>(rows: &[CorrelationRow], mut out: W) -> Result<()> {
    writeln!(out, "scope,condition,presentation,n_pairs,r,note")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scope,
            r.condition,
            r.presentation,
            r.n_pairs,
            opt(r.r),
            r.note.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

pub fn write_taxonomy_delta_csv<W: Write>(rows: &[TaxonomyDeltaRow], mut out: W) -> Result<()> {
    writeln!(out, "layer,category,pre,post,log_ratio")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.layer, r.category, r.pre, r.post, r.log_ratio
        )?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "length,presentation,complete,n_tokens,mean_perplexity")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.length, r.presentation, r.complete, r.n_tokens, r.mean_perplexity
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, WeightSet};
    use crate::stimuli::{Prompt, Stimulus};

    fn tiny_model() -> Model {
        let config = ModelConfig::tiny(2, 2, 16, 12, 64);
        let weights = WeightSet::random(&config, 5, 0.3).unwrap();
        Model::new(config, weights).unwrap()
    }

    #[test]
    fn presentation_means() {
        let m = per_presentation_mean(&[1, 2, 3, 4], &[0.2, 0.4, 0.6, 0.8], &[3]);
        assert!((m[0].unwrap() - 0.3).abs() < 1e-12 && (m[1].unwrap() - 0.7).abs() < 1e-12);
        let single = per_presentation_mean(&[1, 2], &[1.0, 2.0], &[]);
        assert_eq!(single, vec![Some(1.5)]);
        let gap = per_presentation_mean(&[1], &[1.0], &[57, 114, 171]);
        assert_eq!(gap, vec![Some(1.0), None, None, None]);
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            pearson(&[0.0, 1.0, 2.0], &[3.0, 3.0, 3.0]),
            Err(Undefined::ZeroVariance)
        );
        assert_eq!(pearson(&[1.0], &[1.0]), Err(Undefined::TooFewPairs));
        // mean of ten 0.3s is not exactly 0.3
        assert_eq!(
            pearson(
                &[0.3; 10],
                &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
            ),
            Err(Undefined::ZeroVariance)
        );
        assert!(pearson(&[0.0, 1e-9, 0.0], &[1.0, 2.0, 3.0]).is_ok());
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        let by = pearson_by_presentation(
            &[1, 2, 3, 5, 6],
            &[0.0, 1.0, 2.0, 1.0, 1.0],
            &[0.0, 1.0, 2.0, 0.5, 0.7],
            &[4],
        );
        assert!((by[0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(by[1], Err(Undefined::ZeroVariance));
    }

    #[test]
    fn delta_cases() {
        let s = |v: [f64; 6]| TaxonomySummary {
            n_tokens: 1,
            per_layer: vec![v],
            per_head: vec![vec![v]],
        };
        let a = s([0.5, 0.25, 0.25, 0.0, 0.0, 0.0]);
        let b = s([0.25, 0.5, 0.25, 0.0, 0.0, 0.0]);
        assert!(taxonomy_delta(&a, &a).unwrap()[0].iter().all(|&v| v == 0.0));
        let d = taxonomy_delta(&a, &b).unwrap();
        assert!((d[0][1] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((d[0][0] + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_bias_perplexity_ratio_is_one() {
        let model = tiny_model();
        let texts = vec![
            (0..100).map(|i| (i * 7 % 12) as u32).collect(),
            vec![3, 4, 5],
        ];
        let rep = perplexity_ratio(&model, &texts, &BiasParams::zeros(1, 2)).unwrap();
        assert_eq!(rep.ratio, 1.0);
        assert_eq!(rep.pooled_ratio, 1.0);
        assert_eq!(rep.n_texts, 2);
        // 100 tokens in windows of 64 and 36: 63 + 35 predictions, plus 2.
        assert_eq!(rep.n_tokens, 100);
        assert!(perplexity_ratio(&model, &[vec![1]], &BiasParams::zeros(1, 2)).is_err());
    }

    #[test]
    fn layout_under_caps() {
        assert_eq!(sweep_layout(570, 15, 1024), (1, 454));
        assert_eq!(sweep_layout(10, 15, 1024), (15, 0));
        assert_eq!(sweep_layout(64, 15, 1024), (15, 0));
        assert_eq!(sweep_layout(90, 15, 1024), (11, 34));
        assert_eq!(sweep_layout(512, 15, 1024), (2, 0));
    }

    #[test]
    fn default_sweep_lengths() {
        let c = SpanSweepConfig::default();
        assert_eq!(c.lengths.len(), 15);
        assert_eq!(c.lengths[0], 10);
        assert_eq!(*c.lengths.last().unwrap(), 570);
    }

    #[test]
    fn span_sweep_rows_and_determinism() {
        let model = tiny_model();
        let corpus: Vec<u32> = (0..200).map(|i| ((i * 5 + i / 7) % 12) as u32).collect();
        let config = SpanSweepConfig {
            lengths: vec![5, 24],
            n_spans: 3,
            max_repeats: 4,
            max_tokens: 64,
            seed: 9,
        };
        let rows = span_sweep(&model, &corpus, &config).unwrap();
        let shape: Vec<(usize, usize, bool, usize)> = rows
            .iter()
            .map(|r| (r.length, r.presentation, r.complete, r.n_tokens))
            .collect();
        assert_eq!(
            shape,
            vec![
                (5, 1, true, 4),
                (5, 2, true, 5),
                (5, 3, true, 5),
                (5, 4, true, 5),
                (24, 1, true, 23),
                (24, 2, true, 24),
                (24, 3, false, 16),
            ]
        );
        assert_eq!(rows, span_sweep(&model, &corpus, &config).unwrap());
        let too_long = SpanSweepConfig {
            lengths: vec![300],
            ..config
        };
        assert!(span_sweep(&model, &corpus, &too_long).is_err());
    }

    #[test]
    fn correlation_rows_cover_scopes() {
        let model = tiny_model();
        let stimulus = Stimulus::build("s", vec![1, 2, 3, 4, 5, 6], 3, 64).unwrap();
        let prompts: Vec<Prompt> = [1, 2, 4, 7, 8, 10, 13, 15, 16]
            .iter()
            .enumerate()
            .map(|(k, &position)| Prompt {
                position,
                p_human: Some(0.1 * k as f64),
                n_subjects: 2,
            })
            .collect();
        let rec = EncodedRecord { stimulus, prompts };
        let pred = predict_prompts(&model, &rec, None).unwrap();
        assert_eq!(pred.positions.len(), 9);
        let (acc, corr) = accuracy_and_correlation(std::slice::from_ref(&rec), &[pred], "baseline");
        assert_eq!(acc.len(), 3);
        assert_eq!(
            acc.iter().map(|a| a.n_prompts).collect::<Vec<_>>(),
            vec![3, 3, 3]
        );
        let scopes: Vec<(&str, &str)> = corr
            .rows
            .iter()
            .map(|r| (r.scope.as_str(), r.presentation.as_str()))
            .collect();
        assert!(scopes.contains(&("s", "later")));
        assert!(scopes.contains(&("pooled", "1")));
        assert!(scopes.contains(&("mean", "later")));
        assert_eq!(corr.get("s", "1"), corr.get("pooled", "1"));
        assert_eq!(corr.get("s", "later"), corr.get("mean", "later"));
    }
}
