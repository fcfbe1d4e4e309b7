//! Command-line surface: every library operation as a subcommand over tensor
//! files, with JSON on stdout for structured results and a one-line JSON
//! diagnostic on stderr for failures.
//!
//! Exit codes: 0 success, 2 invalid input or infeasible instance, 3 file
//! format error, 4 combinatorial-limit refusal.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::alignment::{length_regulate, path_to_durations, viterbi, DurationSequence};
use crate::emission::{emission_matrix, EmissionMatrix, GaussianSequence, MelSequence};
use crate::error::{MalnError, Result};
use crate::lattice::{brute_force_loss_limited, forward, loss_and_grad, DEFAULT_COMB_LIMIT};
use crate::tensor::Tensor;
use crate::train::{
    extract_and_train_duration_regressor, extract_durations, generate_task, train_phase1,
    RegressorConfig, TrainConfig,
};

/// Environment variable overriding the brute-force enumeration limit.
pub const COMB_LIMIT_ENV: &str = "MALN_COMB_LIMIT";

/// Result of one CLI invocation: the process exit code plus the diagnostic to
/// emit on stderr when the code is non-zero.
#[derive(Debug)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub diagnostic: Option<Diagnostic>,
}

/// Machine-readable failure description.
#[derive(Debug)]
pub struct Diagnostic {
    pub error: &'static str,
    pub message: String,
}

impl CommandOutcome {
    fn success() -> Self {
        CommandOutcome { exit_code: 0, diagnostic: None }
    }

    fn failure(exit_code: i32, error: &'static str, message: String) -> Self {
        CommandOutcome { exit_code, diagnostic: Some(Diagnostic { error, message }) }
    }
}

fn outcome_of(err: &MalnError) -> (i32, &'static str) {
    match err {
        MalnError::Format { .. } => (3, "format_error"),
        MalnError::CombinatorialLimit { .. } => (4, "comb_limit"),
        MalnError::Infeasible { .. } => (2, "infeasible_alignment"),
        MalnError::Shape(_) => (2, "shape_mismatch"),
        MalnError::EmptyReduction => (2, "empty_reduction"),
        MalnError::ZeroProbability => (2, "zero_probability"),
        MalnError::EmptyExpansion => (2, "empty_expansion"),
        MalnError::InvalidDuration(_) => (2, "invalid_duration"),
        MalnError::NonFiniteLoss { .. } => (2, "non_finite_loss"),
        MalnError::Config(_) => (2, "invalid_config"),
        MalnError::InvalidInput(_) => (2, "invalid_input"),
        MalnError::Io(_) => (2, "io_error"),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "maln",
    about = "Monotonic alignment loss toolkit",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the (n, m) emission matrix from mel frames and packed Gaussians.
    Emission(EmissionArgs),
    /// Forward alignment loss of an emission matrix; optionally write the gradient.
    Loss(LossArgs),
    /// Viterbi durations and score of an emission matrix, as JSON.
    Align(AlignArgs),
    /// Brute-force alignment loss by enumerating every monotonic alignment.
    Oracle(AlignArgs),
    /// Expand token features to frame rate according to a duration sequence.
    Regulate(RegulateArgs),
    /// Train the synthetic alignment-recovery demo and report the results.
    TrainDemo(TrainDemoArgs),
}

#[derive(Args, Debug)]
struct EmissionArgs {
    /// Mel tensor file, dims (n, d)
    #[arg(long)]
    mel: PathBuf,
    /// Packed Gaussian tensor file, dims (2, m, d): means then log-variances
    #[arg(long)]
    gaussians: PathBuf,
    /// Output emission tensor file, dims (n, m)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// Emission matrix tensor file, dims (n, m)
    #[arg(long)]
    logp: PathBuf,
    /// Optional output path for the (n, m) gradient tensor
    #[arg(long)]
    grad: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// Emission matrix tensor file, dims (n, m)
    #[arg(long)]
    logp: PathBuf,
}

#[derive(Args, Debug)]
struct RegulateArgs {
    /// Token feature tensor file, dims (m, h)
    #[arg(long)]
    hidden: PathBuf,
    /// JSON file with {"durations": [...]}; extra fields are ignored
    #[arg(long)]
    durations: PathBuf,
    /// Output tensor file, dims (sum of durations, h)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainDemoArgs {
    /// Token count of the synthetic task
    #[arg(long, default_value_t = 5)]
    tokens: usize,
    /// Channel count of the synthetic task
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Frame noise standard deviation
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Largest per-token duration
    #[arg(long, default_value_t = 8)]
    max_duration: usize,
    /// Alignment-loss training steps
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Learning rate for both training phases
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Seed for task generation and parameter init
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Duration-regressor training steps
    #[arg(long, default_value_t = 2000)]
    reg_steps: usize,
    /// Where to write the full JSON report
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Deserialize)]
struct DurationsFile {
    durations: Vec<usize>,
}

/// Parse `argv` and execute one subcommand. Output goes to stdout / the named
/// files; the returned outcome carries the exit code and any diagnostic for
/// the caller to print on stderr.
pub fn run<I, T>(argv: I) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful output, not diagnostics
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return CommandOutcome::success();
            }
            return CommandOutcome::failure(2, "usage", e.to_string());
        }
    };

    let result = match cli.command {
        Command::Emission(args) => cmd_emission(args),
        Command::Loss(args) => cmd_loss(args),
        Command::Align(args) => cmd_align(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Regulate(args) => cmd_regulate(args),
        Command::TrainDemo(args) => cmd_train_demo(args),
    };
    match result {
        Ok(()) => CommandOutcome::success(),
        Err(e) => {
            let (code, name) = outcome_of(&e);
            CommandOutcome::failure(code, name, e.to_string())
        }
    }
}

fn load_emission(path: &PathBuf) -> Result<EmissionMatrix> {
    EmissionMatrix::new(Tensor::load(path)?)
}

fn cmd_emission(args: EmissionArgs) -> Result<()> {
    let mel = MelSequence::new(Tensor::load(&args.mel)?)?;
    let gaussians = GaussianSequence::from_packed(&Tensor::load(&args.gaussians)?)?;
    let logp = emission_matrix(&mel, &gaussians)?;
    logp.tensor().save(&args.out)?;
    println!(
        "{}",
        json!({
            "frames": logp.frame_count(),
            "tokens": logp.token_count(),
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_loss(args: LossArgs) -> Result<()> {
    let logp = load_emission(&args.logp)?;
    if let Some(grad_path) = args.grad {
        let (loss, grad) = loss_and_grad(&logp)?;
        grad.save(&grad_path)?;
        println!("{loss:.9}");
    } else {
        let (_, loss) = forward(&logp)?;
        println!("{loss:.9}");
    }
    Ok(())
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let logp = load_emission(&args.logp)?;
    let (path, score) = viterbi(&logp)?;
    let durations = path_to_durations(&path, logp.token_count())?;
    println!("{}", json!({ "durations": durations.as_slice(), "score": score }));
    Ok(())
}

fn comb_limit_from_env() -> Result<u64> {
    match std::env::var(COMB_LIMIT_ENV) {
        Ok(v) => v.parse::<u64>().map_err(|_| {
            MalnError::Config(format!("{COMB_LIMIT_ENV}={v} is not an unsigned integer"))
        }),
        Err(_) => Ok(DEFAULT_COMB_LIMIT),
    }
}

fn cmd_oracle(args: AlignArgs) -> Result<()> {
    let logp = load_emission(&args.logp)?;
    let limit = comb_limit_from_env()?;
    let loss = brute_force_loss_limited(&logp, limit)?;
    println!("{loss:.9}");
    Ok(())
}

fn cmd_regulate(args: RegulateArgs) -> Result<()> {
    let hidden = Tensor::load(&args.hidden)?;
    let text = std::fs::read_to_string(&args.durations)?;
    let parsed: DurationsFile = serde_json::from_str(&text)
        .map_err(|e| MalnError::InvalidInput(format!("durations JSON: {e}")))?;
    let durations = DurationSequence::new(parsed.durations);
    let expanded = length_regulate(&hidden, &durations)?;
    expanded.save(&args.out)?;
    println!(
        "{}",
        json!({
            "frames": expanded.dim(0),
            "features": expanded.dim(1),
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_train_demo(args: TrainDemoArgs) -> Result<()> {
    let started = Instant::now();
    let task = generate_task(args.tokens, args.dim, args.max_duration, args.noise, args.seed)?;
    let config = TrainConfig { steps: args.steps, lr: args.lr, seed: args.seed, ..Default::default() };
    let (params, curve) = train_phase1(&task, &config)?;
    let recovered = extract_durations(&params, &task)?;
    let matches_truth = recovered == task.true_durations;

    let reg_config = RegressorConfig { steps: args.reg_steps, lr: args.lr, seed: args.seed, ..Default::default() };
    let (regressor, reg_mse) = if args.tokens >= 2 {
        let (r, mse) = extract_and_train_duration_regressor(&params, &task, &reg_config)?;
        (Some(r), Some(mse))
    } else {
        (None, None)
    };
    let wall_clock = started.elapsed().as_secs_f64();

    let final_loss = *curve.last().expect("at least one step");
    // decimate the curve to at most 100 points, always keeping the last
    let stride = curve.len().div_ceil(100).max(1);
    let mut decimated: Vec<f64> = curve.iter().step_by(stride).copied().collect();
    if *decimated.last().unwrap() != final_loss {
        decimated.push(final_loss);
    }

    // stdout stays byte-identical across reruns, so no wall clock here
    let summary = json!({
        "final_loss": final_loss,
        "recovered_matches_truth": matches_truth,
        "regressor_mse": reg_mse,
    });
    println!("{summary}");

    if let Some(report_path) = args.report {
        let report = json!({
            "final_loss": final_loss,
            "loss_curve": decimated,
            "curve_stride": stride,
            "true_durations": task.true_durations.as_slice(),
            "recovered_durations": recovered.as_slice(),
            "recovered_matches_truth": matches_truth,
            "regressor_mse": reg_mse,
            "predicted_durations": regressor.as_ref().map(|r| r.predict_durations().into_vec()),
            "wall_clock_seconds": wall_clock,
        });
        let pretty = serde_json::to_string_pretty(&report)
            .map_err(|e| MalnError::InvalidInput(format!("report serialization: {e}")))?;
        std::fs::write(report_path, pretty)?;
    }
    Ok(())
}
