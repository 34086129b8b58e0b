//! `dynrag` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or contract error, 2 numerical failure
//! (non-finite loss, failed gradient check).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynrag::corpus::SyntheticSpec;
use dynrag::harness::{self, CommandOutput, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "dynrag",
    version,
    about = "Dynamic retrieval-augmented generation experiments"
)]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = "DYNRAG_OUT", default_value = "runs")]
    out: PathBuf,

    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic QA corpus as JSONL.
    Synth(SynthArgs),
    /// Train one model and score it on the test split.
    Train(RunArgs),
    /// Train all four retrieval-vector variants under one budget.
    Ablate(RunArgs),
    /// Score one model per ambiguity bucket.
    Robustness(RunArgs),
    /// Score a checkpoint (config key `checkpoint`) on the test split.
    Eval(RunArgs),
    /// Finite-difference check of the full model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    docs: usize,
    #[arg(long)]
    examples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long, default_value_t = 10)]
    doc_len: usize,
    /// Near-duplicates per document at low,mid,high ambiguity.
    #[arg(long, default_value = "0,2,4")]
    distractors: String,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Candidate pool size, or `all`.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Also write per-step retrieval traces as JSONL.
    #[arg(long)]
    trace: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Scale the tanh backward pass (negative control).
    #[arg(long, hide = true)]
    corrupt_backward: Option<f64>,
}

fn resolve(args: &RunArgs) -> dynrag::Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(k) = &args.k {
        cfg.set("k", k)?;
    }
    if let Some(l) = args.lambda {
        cfg.train.lambda = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth_spec(a: &SynthArgs) -> dynrag::Result<SyntheticSpec> {
    let mut cfg = RunConfig::default();
    cfg.set("synth_distractors", &a.distractors)?;
    Ok(SyntheticSpec {
        n_docs: a.docs,
        n_examples: a.examples,
        vocab_size: a.vocab,
        doc_len: a.doc_len,
        distractors_per_query: cfg.synth.distractors_per_query,
        seed: a.seed,
    })
}

fn run(cli: &Cli) -> dynrag::Result<CommandOutput> {
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Synth(a) => harness::cmd_synth(&synth_spec(a)?, out),
        Command::Train(a) => harness::cmd_train(&resolve(a)?, out, a.trace),
        Command::Ablate(a) => harness::cmd_ablate(&resolve(a)?, out, a.trace),
        Command::Robustness(a) => harness::cmd_robustness(&resolve(a)?, out, a.trace),
        Command::Eval(a) => harness::cmd_eval(&resolve(a)?, out, a.trace),
        Command::Gradcheck(a) => harness::cmd_gradcheck(a.seed, a.lambda, a.corrupt_backward).map(|(_, o)| o),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(o) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let mut out = std::io::stdout().lock();
            let _ = write!(out, "{}", o.summary);
            if let Some(dir) = o.run_dir {
                let _ = writeln!(out, "run directory: {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
