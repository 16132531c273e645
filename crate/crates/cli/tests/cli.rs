use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memlab_core::tokenizer::VocabEntry;
use memlab_core::{save_model, Model, ModelConfig, Vocab, WeightSet};
use serde_json::Value;
use tempfile::TempDir;

fn memlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memlab"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

struct Fixture {
    dir: TempDir,
    weights: String,
    vocab: String,
    stimulus: String,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let words = ["red", "green", "blue", "fox", "runs", "fast", "slow"];
        let vocab = Vocab::from_entries(
            words
                .iter()
                .map(|w| VocabEntry {
                    token: w.to_string(),
                    count: 2,
                })
                .collect(),
        )
        .unwrap();
        vocab.save(dir.path().join("vocab.json")).unwrap();
        let config = ModelConfig::tiny(2, 2, 8, 8, 128);
        let model =
            Model::new(config.clone(), WeightSet::random(&config, 1, 0.3).unwrap()).unwrap();
        let weights = save_model(&model, dir.path(), "model").unwrap();
        fs::write(
            dir.path().join("stimulus.json"),
            r#"{"stimulus_id": "s", "span": ["red", "fox", "runs", "fast", "blue", "fox", "runs", "slow"], "repeats": 3}"#,
        )
        .unwrap();
        let path = |p: PathBuf| p.to_string_lossy().into_owned();
        Self {
            weights: path(weights),
            vocab: path(dir.path().join("vocab.json")),
            stimulus: path(dir.path().join("stimulus.json")),
            dir,
        }
    }

    fn out(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn behavioral(&self) -> String {
        let out = self.out("targets");
        let res = memlab(&[
            "synth-targets",
            "--vocab",
            &self.vocab,
            "--stimulus",
            &self.stimulus,
            "--per-presentation",
            "2",
            "--out",
            &out,
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        format!("{out}/behavioral.json")
    }
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn zero_bias_run_matches_plain_run() {
    let fx = Fixture::new();
    let (a, b) = (fx.out("plain"), fx.out("zero"));
    let base = [
        "run",
        "--weights",
        &fx.weights,
        "--vocab",
        &fx.vocab,
        "--stimulus",
        &fx.stimulus,
    ];
    assert_eq!(code(&memlab(&[&base[..], &["--out", &a]].concat())), 0);
    assert_eq!(
        code(&memlab(
            &[&base[..], &["--bias", "zero", "--layer", "2", "--out", &b]].concat()
        )),
        0
    );
    assert_eq!(
        fs::read(format!("{a}/logits.bin")).unwrap(),
        fs::read(format!("{b}/logits.bin")).unwrap()
    );
    assert_eq!(
        fs::read(format!("{a}/predictions.csv")).unwrap(),
        fs::read(format!("{b}/predictions.csv")).unwrap()
    );
    // 24 positions, 8 logits each
    assert_eq!(
        fs::metadata(format!("{a}/logits.bin")).unwrap().len(),
        24 * 8 * 4
    );
    assert!(!Path::new(&format!("{a}/attention.bin")).exists());
}

#[test]
fn trace_has_one_matrix_per_head() {
    let fx = Fixture::new();
    let out = fx.out("traced");
    let res = memlab(&[
        "run",
        "--weights",
        &fx.weights,
        "--vocab",
        &fx.vocab,
        "--stimulus",
        &fx.stimulus,
        "--trace",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0);
    assert_eq!(
        fs::metadata(format!("{out}/attention.bin")).unwrap().len(),
        2 * 2 * 24 * 24 * 4
    );
}

#[test]
fn optimize_writes_curves_params_and_manifest() {
    let fx = Fixture::new();
    let behavioral = fx.behavioral();
    let out = fx.out("fit");
    let res = memlab(&[
        "optimize",
        "--weights",
        &fx.weights,
        "--vocab",
        &fx.vocab,
        "--behavioral",
        &behavioral,
        "--layer",
        "2",
        "--epochs",
        "7",
        "--seeds",
        "2",
        "--seed",
        "9",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let curves = fs::read_to_string(format!("{out}/loss_curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("epoch,seed,train_loss,val_loss"));
    assert_eq!(lines.count(), 2 * 8);

    let params = read_json(format!("{out}/params.json"));
    assert_eq!(params["layer"], 2);
    assert_eq!(params["heads"].as_array().unwrap().len(), 2);

    let manifest = read_json(format!("{out}/manifest.json"));
    assert_eq!(manifest["subcommand"], "optimize");
    assert_eq!(manifest["master_seed"], 9);
    assert_eq!(manifest["parameters"]["epochs"], 7);
    assert!(manifest["parameters"].get("out").is_none());
    let inputs = manifest["inputs"].as_array().unwrap();
    // weight header, weight blob, vocab, behavioral
    assert_eq!(inputs.len(), 4);
    assert!(inputs
        .iter()
        .all(|i| i["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn evaluate_without_params_reports_baseline_only() {
    let fx = Fixture::new();
    let behavioral = fx.behavioral();
    let out = fx.out("eval");
    let res = memlab(&[
        "evaluate",
        "--weights",
        &fx.weights,
        "--vocab",
        &fx.vocab,
        "--behavioral",
        &behavioral,
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(Path::new(&format!("{out}/accuracy.csv")).exists());
    assert!(Path::new(&format!("{out}/correlation.csv")).exists());
    assert!(!Path::new(&format!("{out}/taxonomy_delta.csv")).exists());
}

#[test]
fn sweep_rows_follow_requested_lengths() {
    let fx = Fixture::new();
    let corpus = fx.dir.path().join("corpus.txt");
    fs::write(
        &corpus,
        "red fox runs fast blue fox runs slow green fox ".repeat(20),
    )
    .unwrap();
    let out = fx.out("sweep");
    let res = memlab(&[
        "sweep",
        "--weights",
        &fx.weights,
        "--vocab",
        &fx.vocab,
        "--corpus",
        corpus.to_str().unwrap(),
        "--lengths",
        "5:25:10",
        "--spans",
        "3",
        "--repeats",
        "3",
        "--max-tokens",
        "40",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(format!("{out}/sweep.csv")).unwrap();
    let lengths: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    // 5 -> 3 full presentations; 15 -> 2 full + 10; 25 -> 1 full + 15
    assert_eq!(lengths, ["5", "5", "5", "15", "15", "15", "25", "25"]);
    assert!(csv.contains("15,3,false,10,"));
}

#[test]
fn validation_errors_exit_one() {
    let fx = Fixture::new();
    let behavioral = fx.behavioral();
    let out = fx.out("bad");
    let fit = |extra: &[&str]| {
        let mut args = vec![
            "optimize",
            "--weights",
            &fx.weights,
            "--vocab",
            &fx.vocab,
            "--behavioral",
            &behavioral,
            "--out",
            &out,
        ];
        args.extend_from_slice(extra);
        code(&memlab(&args))
    };
    assert_eq!(fit(&["--layer", "1", "--epochs", "0"]), 1);
    assert_eq!(fit(&["--layer", "3", "--epochs", "2"]), 1);
    assert_eq!(fit(&["--layer", "1", "--lr", "-1"]), 1);
    assert_eq!(fit(&["--layer", "1", "--val-frac", "1.5"]), 1);
    assert_eq!(fit(&["--layer", "1", "--grad", "newton"]), 1);
    assert_eq!(fit(&["--epochs", "2"]), 1);

    let missing = fx.out("nope.json");
    assert_eq!(
        code(&memlab(&[
            "run",
            "--weights",
            &fx.weights,
            "--vocab",
            &fx.vocab,
            "--stimulus",
            &missing,
            "--out",
            &out
        ])),
        1
    );
    assert_eq!(code(&memlab(&["run", "--bogus"])), 1);
    assert_eq!(
        code(&memlab(&[
            "sweep",
            "--weights",
            &fx.weights,
            "--vocab",
            &fx.vocab,
            "--corpus",
            &fx.stimulus,
            "--lengths",
            "9:3:1",
            "--out",
            &out
        ])),
        1
    );

    let garbled = fx.out("garbled.json");
    fs::write(&garbled, "{not json").unwrap();
    assert_eq!(
        code(&memlab(&[
            "run",
            "--weights",
            &fx.weights,
            "--vocab",
            &fx.vocab,
            "--stimulus",
            &garbled,
            "--out",
            &out
        ])),
        1
    );
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&memlab(&["--help"])), 0);
    assert_eq!(code(&memlab(&["--version"])), 0);
    assert_eq!(code(&memlab(&["optimize", "--help"])), 0);
}
