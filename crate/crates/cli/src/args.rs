//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mclq_core::env::EnvKind;
use mclq_core::Method;

#[derive(Debug, Parser)]
#[command(name = "mclq", version, about = "MCLQ safety filter: benchmarks and live sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-loop benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Serve interactive sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Run paired random trials of one method.
    Run(RunArgs),
    /// Sweep the safety margin and the number of humans.
    Sweep(SweepArgs),
    /// Per-group statistics and Welch tests of a results file.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment file (JSON or TOML); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write zero instead of measured times, for reproducible files.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Comma-separated margins; `inf` removes the margin.
    #[arg(long, default_value = "0,0.5,1,2,4,inf", value_parser = parse_lambdas)]
    pub lambdas: LambdaList,
    /// Human counts, either `a..b` (inclusive) or comma-separated.
    #[arg(long, default_value = "1,3,5,10", value_parser = parse_counts)]
    pub humans: CountList,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    pub results: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8787)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value = "point_mass", value_parser = parse_env)]
    pub env: EnvKind,
    #[arg(long, default_value_t = mclq_core::session::DEFAULT_TICK_MS)]
    pub tick_ms: u64,
    /// Session file (JSON) overriding the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaList(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct CountList(pub Vec<usize>);

fn parse_env(s: &str) -> Result<EnvKind, String> {
    s.parse().map_err(|e: mclq_core::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: mclq_core::Error| e.to_string())
}

pub fn parse_lambda(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "∞" => f64::INFINITY,
        _ => s.parse::<f64>().map_err(|e| format!("bad lambda {s:?}: {e}"))?,
    };
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("lambda must be non-negative, got {s}"))
    }
}

pub fn parse_lambdas(s: &str) -> Result<LambdaList, String> {
    s.split(',').map(parse_lambda).collect::<Result<_, _>>().map(LambdaList)
}

pub fn parse_counts(s: &str) -> Result<CountList, String> {
    let bad = |e: std::num::ParseIntError| format!("bad human count in {s:?}: {e}");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (a.trim().parse::<usize>().map_err(bad)?, b.trim().parse::<usize>().map_err(bad)?);
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        return Ok(CountList((a..=b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(bad))
        .collect::<Result<_, _>>()
        .map(CountList)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn grammar_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn lambda_lists() {
        assert_eq!(parse_lambdas("0,0.5,inf").unwrap(), LambdaList(vec![0.0, 0.5, f64::INFINITY]));
        assert!(parse_lambdas("1,-2").is_err());
        assert!(parse_lambdas("x").is_err());
    }

    #[test]
    fn count_lists() {
        assert_eq!(parse_counts("1..4").unwrap(), CountList(vec![1, 2, 3, 4]));
        assert_eq!(parse_counts("1,3,5,10").unwrap(), CountList(vec![1, 3, 5, 10]));
        assert!(parse_counts("5..2").is_err());
    }

    #[test]
    fn bench_run_flags() {
        let cli = Cli::try_parse_from(["mclq", "bench", "run", "--method", "lq", "--trials", "5", "--out", "r.csv"]).unwrap();
        let Command::Bench(BenchCommand::Run(run)) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(run.method, Some(Method::Lq));
        assert_eq!(run.common.trials, Some(5));
    }

    #[test]
    fn serve_defaults() {
        let cli = Cli::try_parse_from(["mclq", "serve"]).unwrap();
        let Command::Serve(s) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!((s.port, s.tick_ms, s.env), (8787, 100, EnvKind::PointMass));
    }
}
