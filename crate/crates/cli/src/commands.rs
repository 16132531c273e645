use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use memlab_core::bias::BiasParams;
use memlab_core::evaluation::{
    evaluate, span_sweep, write_accuracy_csv, write_correlation_csv, write_sweep_csv,
    write_taxonomy_delta_csv, SpanSweepConfig,
};
use memlab_core::model::{sequence_nll, top1_flags, AttentionBias};
use memlab_core::optim::{layer_sweep, optimize, write_layer_sweep_csv, OptimConfig};
use memlab_core::stimuli::{
    prompt_weights, sample_prompts, synthetic_targets, BehavioralRecord, EncodedRecord,
};
use memlab_core::taxonomy::{induction_score, layer_summary, TaxonomySummary};
use memlab_core::{load_model, save_model, Model, ModelConfig, Stimulus, Vocab, WeightSet};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::manifest::RunManifest;
use crate::Usage;

/// A stimulus without prompts; behavioral files deserialize into it too.
#[derive(Debug, Deserialize)]
struct StimulusFile {
    stimulus_id: String,
    span: Vec<String>,
    repeats: usize,
}

fn read_stimulus(path: &Path, vocab: &Vocab, max_context: usize) -> Result<Stimulus> {
    let file: StimulusFile = serde_json::from_slice(
        &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
    )
    .map_err(memlab_core::Error::from)
    .with_context(|| format!("parsing {}", path.display()))?;
    let span = vocab.encode_words(&file.span);
    Ok(Stimulus::build(
        file.stimulus_id,
        span,
        file.repeats,
        max_context,
    )?)
}

fn read_record(path: &Path, vocab: &Vocab, max_context: usize) -> Result<EncodedRecord> {
    let record =
        BehavioralRecord::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(record.encode(vocab, max_context)?)
}

/// Texts of the given corpus files. Within a file, blank lines separate texts.
fn read_texts(paths: &[impl AsRef<Path>]) -> Result<Vec<String>> {
    let mut texts = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let mut current = String::new();
        for line in raw.lines() {
            if line.trim().is_empty() {
                if !current.trim().is_empty() {
                    texts.push(std::mem::take(&mut current));
                }
                current.clear();
            } else {
                current.push_str(line);
                current.push('\n');
            }
        }
        if !current.trim().is_empty() {
            texts.push(current);
        }
    }
    Ok(texts)
}

fn load_inputs(m: &ModelInputs, manifest: &mut RunManifest) -> Result<(Model, Vocab)> {
    manifest.add_weights(&m.weights)?;
    manifest.add_input(&m.vocab)?;
    let model =
        load_model(&m.weights).with_context(|| format!("loading {}", m.weights.display()))?;
    let vocab = Vocab::load(&m.vocab).with_context(|| format!("loading {}", m.vocab.display()))?;
    if vocab.len() > model.config().vocab_size {
        return Err(Usage(format!(
            "vocabulary has {} entries but the model only {}",
            vocab.len(),
            model.config().vocab_size
        ))
        .into());
    }
    Ok((model, vocab))
}

fn out_dir(out: &OutDir) -> Result<&Path> {
    fs::create_dir_all(&out.out).with_context(|| format!("creating {}", out.out.display()))?;
    Ok(&out.out)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_with(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> memlab_core::Result<()>,
) -> Result<()> {
    let mut w = create(dir, name)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_f32(dir: &Path, name: &str, values: &[f32]) -> Result<()> {
    let mut w = create(dir, name)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let mut manifest = RunManifest::new("build-vocab", args, None)?;
    let mut docs = Vec::new();
    for p in &args.corpus {
        manifest.add_input(p)?;
        docs.push(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let vocab = Vocab::build(&docs)?;
    let dir = out_dir(&args.out)?;
    vocab.save(dir.join("vocab.json"))?;
    manifest.write(dir)?;
    eprintln!("vocabulary of {} entries", vocab.len());
    Ok(())
}

pub fn random_weights(args: &RandomWeightsArgs) -> Result<()> {
    let mut manifest = RunManifest::new("random-weights", args, Some(args.seed))?;
    let vocab_size = match (args.vocab_size, &args.vocab) {
        (Some(n), None) => n,
        (None, Some(p)) => {
            manifest.add_input(p)?;
            Vocab::load(p)?.len()
        }
        _ => return Err(Usage("give exactly one of --vocab-size and --vocab".into()).into()),
    };
    let config = ModelConfig::tiny(
        args.layers,
        args.heads,
        args.d_model,
        vocab_size,
        args.max_context,
    );
    config.validate()?;
    if !(args.std > 0.0 && args.std.is_finite()) {
        return Err(Usage(format!("--std {} must be positive", args.std)).into());
    }
    let weights = WeightSet::random(&config, args.seed, args.std)?;
    let model = Model::new(config, weights)?;
    let dir = out_dir(&args.out)?;
    save_model(&model, dir, "model")?;
    manifest.write(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    stimulus_id: &'a str,
    seq_len: usize,
    vocab_size: usize,
    n_layers: usize,
    n_heads: usize,
    perplexity: Option<f64>,
    /// Row-major `seq_len x vocab_size` little-endian f32.
    logits_file: &'static str,
    /// Row-major `n_layers x n_heads x seq_len x seq_len` little-endian f32.
    attention_file: Option<&'static str>,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut manifest = RunManifest::new("run", args, None)?;
    let (model, vocab) = load_inputs(&args.model, &mut manifest)?;
    manifest.add_input(&args.stimulus)?;
    let stimulus = read_stimulus(&args.stimulus, &vocab, model.config().max_context)?;
    let n = stimulus.len();
    let bias = match args.bias.as_deref() {
        None => None,
        Some("zero") => Some(AttentionBias::zeros(args.layer, model.config().n_heads, n)),
        Some(path) => {
            manifest.add_input(Path::new(path))?;
            let params = BiasParams::load(path).with_context(|| format!("loading {path}"))?;
            params.validate(model.config().n_layers, model.config().n_heads)?;
            Some(params.to_attention_bias(n))
        }
    };
    let tokens = stimulus.tokens();
    let result = model.forward(tokens, bias.as_ref(), args.trace)?;
    let nll = sequence_nll(&result, tokens)?;
    let top1 = top1_flags(&result, tokens)?;

    let dir = out_dir(&args.out)?;
    write_f32(dir, "logits.bin", &result.logits)?;
    let mut w = create(dir, "predictions.csv")?;
    writeln!(w, "position,token,log_prob,top1")?;
    for (k, (lp, hit)) in result.target_log_probs.iter().zip(&top1).enumerate() {
        writeln!(w, "{},{},{},{}", k + 1, tokens[k + 1], lp, u8::from(*hit))?;
    }
    w.flush()?;
    if let Some(trace) = &result.trace {
        write_f32(dir, "attention.bin", trace.as_slice())?;
    }
    let summary = RunSummary {
        stimulus_id: &stimulus.id,
        seq_len: n,
        vocab_size: model.config().vocab_size,
        n_layers: model.config().n_layers,
        n_heads: model.config().n_heads,
        perplexity: memlab_core::model::perplexity(&nll).ok(),
        logits_file: "logits.bin",
        attention_file: result.trace.as_ref().map(|_| "attention.bin"),
    };
    write_json(dir, "summary.json", &summary)?;
    manifest.write(dir)?;
    Ok(())
}

pub fn taxonomy(args: &TaxonomyArgs) -> Result<()> {
    let mut manifest = RunManifest::new("taxonomy", args, None)?;
    let (model, vocab) = load_inputs(&args.model, &mut manifest)?;
    let params = match &args.params {
        Some(p) => {
            manifest.add_input(p)?;
            let params = BiasParams::load(p).with_context(|| format!("loading {}", p.display()))?;
            params.validate(model.config().n_layers, model.config().n_heads)?;
            Some(params)
        }
        None => None,
    };
    let mut summaries = Vec::new();
    let mut induction = Vec::new();
    for path in &args.stimulus {
        manifest.add_input(path)?;
        let stimulus = read_stimulus(path, &vocab, model.config().max_context)?;
        let bias = params.as_ref().map(|p| p.to_attention_bias(stimulus.len()));
        let result = model.forward(stimulus.tokens(), bias.as_ref(), true)?;
        let trace = result.trace.context("forward pass returned no trace")?;
        summaries.push(layer_summary(&trace, stimulus.tokens())?);
        if stimulus.repeats() >= 2 {
            for l in 0..trace.n_layers() {
                for h in 0..trace.n_heads() {
                    let score = induction_score(trace.head(l, h), stimulus.span_len())?;
                    induction.push((stimulus.id.clone(), l + 1, h + 1, score));
                }
            }
        }
    }
    let summary = TaxonomySummary::combine(&summaries)?;
    let dir = out_dir(&args.out)?;
    write_with(dir, "taxonomy.csv", |w| summary.write_csv(w, true))?;
    let mut w = create(dir, "induction.csv")?;
    writeln!(w, "stimulus_id,layer,head,score")?;
    for (id, l, h, s) in &induction {
        writeln!(w, "{id},{l},{h},{s}")?;
    }
    w.flush()?;
    manifest.write(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct SeedSummary<'a> {
    seed: usize,
    initial: &'a BiasParams,
    params: &'a BiasParams,
    train_initial: f64,
    train_final: f64,
    validation_initial: Option<f64>,
    validation_final: Option<f64>,
    train_positions: &'a [usize],
    validation_positions: &'a [usize],
}

#[derive(Serialize)]
struct FitSummary<'a> {
    layer: usize,
    best_seed: Option<usize>,
    mean_train_ratio: Option<f64>,
    runs: Vec<SeedSummary<'a>>,
    failures: Vec<(usize, &'a str)>,
}

fn optim_config(
    lr: f64,
    epochs: usize,
    seeds: usize,
    val_frac: f64,
    grad: memlab_core::GradientMethod,
    fd_step: f64,
    seed: u64,
) -> Result<OptimConfig> {
    let config = OptimConfig {
        learning_rate: lr,
        epochs,
        n_seeds: seeds,
        validation_fraction: val_frac,
        gradient_method: grad,
        fd_step,
        master_seed: seed,
        ..OptimConfig::default()
    };
    config.validate()?;
    Ok(config)
}

pub fn optimize_cmd(args: &OptimizeArgs) -> Result<()> {
    let o = &args.optim;
    let config = optim_config(
        o.lr, o.epochs, o.seeds, o.val_frac, o.grad, o.fd_step, o.seed,
    )?;
    let mut manifest = RunManifest::new("optimize", args, Some(o.seed))?;
    let (model, vocab) = load_inputs(&args.model, &mut manifest)?;
    manifest.add_input(&args.behavioral)?;
    let record = read_record(&args.behavioral, &vocab, model.config().max_context)?;
    let report = optimize(&model, &record, o.layer, &config)?;

    let dir = out_dir(&args.out)?;
    write_with(dir, "loss_curves.csv", |w| report.write_curves_csv(w))?;
    let best = report.best();
    if let Some(best) = best {
        best.params.save(dir.join("params.json"))?;
    }
    let summary = FitSummary {
        layer: report.layer,
        best_seed: best.map(|b| b.seed),
        mean_train_ratio: report.mean_train_ratio(),
        runs: report
            .runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                initial: &r.initial,
                params: &r.params,
                train_initial: r.curves.train[0],
                train_final: r.curves.train[r.curves.train.len() - 1],
                validation_initial: r.curves.validation.as_ref().map(|v| v[0]),
                validation_final: r.curves.validation.as_ref().map(|v| v[v.len() - 1]),
                train_positions: &r.train_positions,
                validation_positions: &r.validation_positions,
            })
            .collect(),
        failures: report
            .failures
            .iter()
            .map(|f| (f.seed, f.message.as_str()))
            .collect(),
    };
    write_json(dir, "fits.json", &summary)?;
    manifest.write(dir)?;
    for f in &report.failures {
        eprintln!("seed {}: {}", f.seed, f.message);
    }
    if best.is_none() {
        bail!("every seed diverged");
    }
    Ok(())
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let mut manifest = RunManifest::new("evaluate", args, None)?;
    let (model, vocab) = load_inputs(&args.model, &mut manifest)?;
    let mut records = Vec::new();
    for p in &args.behavioral {
        manifest.add_input(p)?;
        records.push(read_record(p, &vocab, model.config().max_context)?);
    }
    let params = match &args.params {
        Some(p) => {
            manifest.add_input(p)?;
            Some(BiasParams::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        None => None,
    };
    for p in &args.corpus {
        manifest.add_input(p)?;
    }
    let texts: Vec<Vec<u32>> = read_texts(&args.corpus)?
        .iter()
        .map(|t| vocab.encode(t))
        .collect();
    let report = evaluate(&model, &records, params.as_ref(), &texts)?;

    let dir = out_dir(&args.out)?;
    write_json(dir, "report.json", &report)?;
    write_with(dir, "accuracy.csv", |w| {
        write_accuracy_csv(&report.accuracy, w)
    })?;
    write_with(dir, "correlation.csv", |w| {
        write_correlation_csv(&report.correlation, w)
    })?;
    if params.is_some() {
        write_with(dir, "taxonomy_delta.csv", |w| {
            write_taxonomy_delta_csv(&report.taxonomy_delta, w)
        })?;
    }
    manifest.write(dir)?;
    Ok(())
}

/// Parse `A:B:STEP` into the inclusive range `A, A+STEP, ..., <= B`.
pub fn parse_lengths(spec: &str) -> Result<Vec<usize>, Usage> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Usage(format!("--lengths {spec:?} must look like A:B:STEP"));
    let [a, b, step] = parts.as_slice() else {
        return Err(bad());
    };
    let (a, b, step): (usize, usize, usize) = (
        a.parse().map_err(|_| bad())?,
        b.parse().map_err(|_| bad())?,
        step.parse().map_err(|_| bad())?,
    );
    if a == 0 || step == 0 || b < a {
        return Err(Usage(format!(
            "--lengths {spec:?} needs 1 <= A <= B and STEP >= 1"
        )));
    }
    Ok((a..=b).step_by(step).collect())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let lengths = parse_lengths(&args.lengths)?;
    let mut manifest = RunManifest::new("sweep", args, Some(args.seed))?;
    let (model, vocab) = load_inputs(&args.model, &mut manifest)?;
    for p in &args.corpus {
        manifest.add_input(p)?;
    }
    let corpus: Vec<u32> = read_texts(&args.corpus)?
        .iter()
        .flat_map(|t| vocab.encode(t))
        .collect();
    let config = SpanSweepConfig {
        lengths,
        n_spans: args.spans,
        max_repeats: args.repeats,
        max_tokens: args.max_tokens,
        seed: args.seed,
    };
    let rows = span_sweep(&model, &corpus, &config)?;
    let dir = out_dir(&args.out)?;
    write_with(dir, "sweep.csv", |w| write_sweep_csv(&rows, w))?;
    manifest.write(dir)?;
    Ok(())
}

pub fn layer_sweep_cmd(args: &LayerSweepArgs) -> Result<()> {
    let config = optim_config(
        args.lr,
        args.epochs,
        args.seeds,
        args.val_frac,
        args.grad,
        args.fd_step,
        args.seed,
    )?;
    let mut manifest = RunManifest::new("layer-sweep", args, Some(args.seed))?;
    let (model, vocab) = load_inputs(&args.model, &mut manifest)?;
    let mut records = Vec::new();
    for p in &args.behavioral {
        manifest.add_input(p)?;
        records.push(read_record(p, &vocab, model.config().max_context)?);
    }
    for p in &args.corpus {
        manifest.add_input(p)?;
    }
    let texts: Vec<Vec<u32>> = read_texts(&args.corpus)?
        .iter()
        .map(|t| vocab.encode(t))
        .collect();
    let (train, held_out) = records.split_first().context("no behavioral files")?;
    let rows = layer_sweep(&model, train, held_out, &texts, &config)?;
    let dir = out_dir(&args.out)?;
    write_with(dir, "layer_sweep.csv", |w| write_layer_sweep_csv(&rows, w))?;
    manifest.write(dir)?;
    Ok(())
}

pub fn synth_targets(args: &SynthTargetsArgs) -> Result<()> {
    let mut manifest = RunManifest::new("synth-targets", args, Some(args.seed))?;
    manifest.add_input(&args.vocab)?;
    manifest.add_input(&args.stimulus)?;
    let vocab =
        Vocab::load(&args.vocab).with_context(|| format!("loading {}", args.vocab.display()))?;
    let stimulus = read_stimulus(&args.stimulus, &vocab, usize::MAX)?;
    let weights = prompt_weights(stimulus.span(), &vocab)?;
    let positions = sample_prompts(
        &stimulus,
        &weights,
        args.per_presentation,
        args.shared_frac,
        args.seed,
    )?;
    let record = synthetic_targets(
        &stimulus,
        &vocab,
        &positions,
        args.base,
        args.exponent,
        args.subjects,
    )?;
    let dir = out_dir(&args.out)?;
    record.save(dir.join("behavioral.json"))?;
    manifest.write(dir)?;
    Ok(())
}
