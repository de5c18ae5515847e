//! `ivy`: generate data, fit summary instruments, estimate effects and run
//! the evaluation harnesses.

mod commands;
mod config;
mod docs;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ivy_core::evalharness::PairSet;

use crate::config::RunConfig;
use crate::docs::{ErrorDoc, FORMAT_VERSION};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "ivy", version, about = "Summary instrumental variables from weak, partially invalid candidates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Sample a preset to a dataset CSV plus a ground-truth sidecar.
    Generate,
    /// Learn structure and parameters; write a model file.
    Fit,
    /// Estimate effects with the requested methods; write a report file.
    Estimate,
    /// Generate (or load), fit and estimate in one run.
    Pipeline,
    /// Run an evaluation harness: auc, calibration, scaling or robustness.
    Evaluate,
    /// Power of the Wald test.
    Power,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Fit => "fit",
            Command::Estimate => "estimate",
            Command::Pipeline => "pipeline",
            Command::Evaluate => "evaluate",
            Command::Power => "power",
        }
    }
}

#[derive(Args, Default)]
struct Flags {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    #[arg(long, global = true)]
    prior_z: Option<f64>,
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Comma-separated subset of ivy,uas,was,association.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    xi: Option<usize>,
    /// Read and write 0/1 instead of -1/+1.
    #[arg(long, global = true)]
    zero_one_encoding: bool,
    /// Take the structure from the model file instead of learning it.
    #[arg(long, global = true)]
    reuse_structure: bool,
    /// Divide second moments by n - 1.
    #[arg(long, global = true)]
    unbiased_moment: bool,
    /// Re-learn the structure on every replicate's training half.
    #[arg(long, global = true)]
    relearn_structure: bool,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Sample size for generated data.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    /// Harness for `evaluate`.
    #[arg(long, global = true)]
    harness: Option<String>,
    #[arg(long, global = true)]
    datasets: Option<usize>,
    /// Number of seeds for multi-seed harnesses.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    accuracies: Option<Vec<f64>>,
    /// Pair set for the scaling harness: true or conditionally_independent.
    #[arg(long, global = true)]
    pair_set: Option<String>,
    #[arg(long, global = true)]
    p1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    level: Option<f64>,
}

impl Flags {
    fn into_config(self) -> Result<(Option<PathBuf>, RunConfig), CliError> {
        let pair_set = match self.pair_set.as_deref() {
            None => None,
            Some("true") => Some(PairSet::True),
            Some("conditionally_independent" | "ci") => Some(PairSet::ConditionallyIndependent),
            Some(other) => return Err(CliError::Validation(format!("unknown pair set `{other}`"))),
        };
        let cfg = RunConfig {
            seed: self.seed,
            replicates: self.replicates,
            prior_z: self.prior_z,
            lambda_grid: self.lambda_grid.unwrap_or_default(),
            gamma_grid: self.gamma_grid.unwrap_or_default(),
            hyper: None,
            xi: self.xi,
            input: self.input,
            out: self.out,
            model: self.model,
            methods: self.methods,
            preset: self.preset,
            n: self.n,
            zero_one_encoding: self.zero_one_encoding,
            reuse_structure: self.reuse_structure,
            unbiased_moment: self.unbiased_moment,
            relearn_structure: self.relearn_structure,
            harness: self.harness,
            datasets: self.datasets,
            seeds: self.seeds,
            n_list: self.n_list,
            accuracies: self.accuracies,
            pair_set,
            p1: self.p1,
            alpha: self.alpha,
            beta: self.beta,
            level: self.level,
        };
        Ok((self.config, cfg))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command;
    let mut out_path = cli.flags.out.clone();
    let result = cli.flags.into_config().and_then(|(path, flags)| {
        let cfg = match path {
            Some(p) => RunConfig::load(&p)?.overlay(flags),
            None => flags,
        };
        out_path = cfg.out.clone();
        commands::run(command, &cfg)
    });
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            // generated data is the only output that is not a JSON document
            if let (Some(out), false) = (out_path, command == Command::Generate) {
                let doc = ErrorDoc {
                    version: FORMAT_VERSION,
                    kind: "error".into(),
                    command: command.name().into(),
                    exit_code: code,
                    diagnostics: vec![e.to_string()],
                };
                if let Err(w) = files::write_json(&out, &doc) {
                    eprintln!("error: {w}");
                }
            }
            ExitCode::from(code as u8)
        }
    }
}
