mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// Invalid flag values or combinations detected after parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Bad input (flags, missing or malformed files, schema violations) exits 1;
/// anything that goes wrong while computing exits 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<memlab_core::Error>() {
            return if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            };
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_RUNTIME
}

fn dispatch(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::BuildVocab(a) => commands::build_vocab(a),
        Command::Run(a) => commands::run(a),
        Command::Taxonomy(a) => commands::taxonomy(a),
        Command::Optimize(a) => commands::optimize_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::LayerSweep(a) => commands::layer_sweep_cmd(a),
        Command::SynthTargets(a) => commands::synth_targets(a),
        Command::RandomWeights(a) => commands::random_weights(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
