use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use tdscope::harness::{emit_outputs, run_study, ExperimentConfig, Status};

#[derive(Parser)]
#[command(name = "tdscope", version, about = "Topological-derivative imaging studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a configuration file.
    Run {
        config: PathBuf,
        /// Output directory (overrides the configured one).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; falls back to TDSCOPE_THREADS.
        #[arg(long)]
        threads: Option<usize>,
        /// RNG seed (overrides the configured one).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a configuration file without running it.
    Validate { config: PathBuf },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("TDSCOPE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("TDSCOPE_THREADS must be a positive integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

fn configure_threads(n: Option<usize>) -> Result<(), String> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err("thread count must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    faer::set_global_parallelism(if n == 1 {
        faer::Parallelism::None
    } else {
        faer::Parallelism::Rayon(n)
    });
    Ok(())
}

fn run(config: PathBuf, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> Result<Status, String> {
    configure_threads(thread_count(threads)?)?;
    let mut cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let start = Instant::now();
    let outcome = run_study(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    emit_outputs(&outcome, &dir, Some(elapsed)).map_err(|e| e.to_string())?;
    let report = &outcome.report;
    for c in &report.checks {
        println!("{:<12} {:<24} {:e}", format!("{:?}", c.status).to_uppercase(), c.name, c.value);
    }
    println!("{} study: {} ({elapsed:.1} s) -> {}", report.study, format!("{:?}", report.status).to_uppercase(), dir.display());
    Ok(report.status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => run(config, out, threads, seed),
        Command::Validate { config } => ExperimentConfig::load(&config)
            .map(|c| {
                println!("{}: valid {} configuration", config.display(), c.study.name());
                Status::Pass
            })
            .map_err(|e| e.to_string()),
    };
    match result {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
