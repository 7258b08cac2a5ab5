use std::io::Write;
use std::net::SocketAddr;
use std::process::ExitCode;

use clap::Parser;
use mclq_cli::args::{BenchCommand, Cli, Command, CommonArgs, ServeArgs};
use mclq_core::experiment::{lambda_sweep, read_records, run_experiment, summarize, ExperimentConfig};
use mclq_core::session::SessionConfig;
use tracing_subscriber::EnvFilter;

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Writes to stdout; a reader that hangs up early is not an error.
fn emit(text: &str) -> AnyResult<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn experiment(common: &CommonArgs) -> AnyResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(env) = common.env {
        cfg.env.env = env;
    }
    if let Some(n) = common.trials {
        cfg.n_trials = n;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.out.is_some() {
        cfg.output = common.out.clone();
    }
    if common.no_timing {
        cfg.timing = false;
    }
    Ok(cfg)
}

fn bench(cmd: BenchCommand) -> AnyResult<()> {
    match cmd {
        BenchCommand::Run(args) => {
            let mut cfg = experiment(&args.common)?;
            if let Some(m) = args.method {
                cfg.method = m;
            }
            if let Some(l) = args.lambda {
                cfg.filter.sampler.lambda = l;
            }
            let records = run_experiment(&cfg)?;
            emit(&summarize(&records).to_string())?;
        }
        BenchCommand::Sweep(args) => {
            let mut cfg = experiment(&args.common)?;
            if args.common.env.is_none() && args.common.config.is_none() {
                cfg.env.env = mclq_core::env::EnvKind::MultiHuman;
            }
            if let Some(m) = args.method {
                cfg.method = m;
            }
            let cells = lambda_sweep(&cfg, &args.lambdas.0, &args.humans.0)?;
            let records: Vec<_> = cells.into_iter().flat_map(|c| c.records).collect();
            emit(&summarize(&records).to_string())?;
        }
        BenchCommand::Summarize(args) => {
            let summary = summarize(&read_records(&args.results)?);
            if args.json {
                emit(&format!("{}\n", serde_json::to_string_pretty(&summary)?))?;
            } else {
                emit(&summary.to_string())?;
            }
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> AnyResult<()> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<SessionConfig>(&std::fs::read_to_string(path)?)?,
        None => SessionConfig::default(),
    };
    cfg.env = args.env;
    cfg.tick_ms = args.tick_ms;
    cfg.validate()?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(mclq_cli::server::serve(addr, cfg))?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(cmd) => bench(cmd),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
