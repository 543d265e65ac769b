//! `reldp` command-line driver.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error,
//! 3 numeric failure, 4 sampler capacity, 5 calibration failure.

mod bounds;
mod config;
mod pipeline;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reldp::accountant::BoundKind;
use reldp::clip::ClipMode;
use reldp::Error;

#[derive(Parser)]
#[command(name = "reldp", version, about = "Node-level private relational learning")]
struct Cli {
    /// Flat `key = value` file; keys are flag names, flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-iteration RDP curves, and composed (ε, δ) when `--iters` is set.
    Bounds(bounds::BoundsArgs),
    /// Smallest noise multiplier meeting a target (ε, δ).
    Calibrate(bounds::CalibrateArgs),
    /// Caps every node degree and writes the kept edges.
    CapDegree(pipeline::CapArgs),
    /// Draws mini-batches and prints them.
    Sample(pipeline::SampleArgs),
    /// Private training on an edge list or a synthetic SBM.
    Train(Box<pipeline::TrainArgs>),
    /// Runs the oracle suites.
    Verify(verify::VerifyArgs),
}

/// Accountant inputs shared by `bounds` and `calibrate`.
#[derive(Args, Clone, Debug)]
pub struct AccountantArgs {
    /// Number of nodes.
    #[arg(long, default_value = "1000000", value_parser = parse_count)]
    pub n: u64,
    /// Number of edges after degree capping.
    #[arg(long, default_value = "5000000", value_parser = parse_count)]
    pub m: u64,
    /// Degree cap.
    #[arg(long = "K", default_value_t = 5)]
    pub k: u64,
    /// Poisson sampling rate of positive edges.
    #[arg(long, default_value_t = 1e-5)]
    pub gamma: f64,
    /// Negatives per positive.
    #[arg(long, default_value_t = 4)]
    pub kneg: u64,
    /// `default`, a comma list or `lo:hi[:step]`.
    #[arg(long, default_value = "default")]
    pub alphas: String,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Adaptive,
    Standard,
    Naive,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipArg {
    Adaptive,
    Standard,
}

impl ClipArg {
    pub fn mode(self) -> ClipMode {
        match self {
            ClipArg::Adaptive => ClipMode::Adaptive,
            ClipArg::Standard => ClipMode::Standard,
        }
    }
}

pub fn bound_kind(mode: ModeArg, naive_loose: bool) -> Vec<BoundKind> {
    match mode {
        ModeArg::Adaptive => vec![BoundKind::Adaptive],
        ModeArg::Standard => vec![BoundKind::Standard],
        ModeArg::Naive => vec![BoundKind::Naive { loose: naive_loose }],
        ModeArg::All => vec![
            BoundKind::Adaptive,
            BoundKind::Standard,
            BoundKind::Naive { loose: naive_loose },
        ],
    }
}

/// Integer count, also accepting integral scientific notation such as `5e6`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = s.parse().map_err(|_| format!("not a count: {s:?}"))?;
    if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 9.007_199_254_740_992e15 {
        Ok(x as u64)
    } else {
        Err(format!("not a non-negative integer: {s:?}"))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root_cause() {
        Error::Argument(_) | Error::Parse { .. } | Error::Io(_) => 2,
        Error::Capacity { .. } => 4,
        Error::Calibration { .. } => 5,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::merged_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Bounds(a) => bounds::run_bounds(&a),
        Command::Calibrate(a) => bounds::run_calibrate(&a),
        Command::CapDegree(a) => pipeline::run_cap(&a),
        Command::Sample(a) => pipeline::run_sample(&a),
        Command::Train(a) => pipeline::run_train(&a),
        Command::Verify(a) => verify::run(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("5e6"), Ok(5_000_000));
        assert_eq!(parse_count("12"), Ok(12));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn exit_codes_follow_the_cause() {
        let cap = Error::Capacity {
            needed: 3,
            available: 2,
        };
        assert_eq!(exit_code(&cap), 4);
        let wrapped = Error::Training {
            iteration: 4,
            source: Box::new(Error::Numeric("x".into())),
        };
        assert_eq!(exit_code(&wrapped), 3);
        assert_eq!(exit_code(&Error::Argument("x".into())), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
