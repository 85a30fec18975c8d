use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use hybrid_uplink::bench::{emit_results, load_config, run_monte_carlo};
use hybrid_uplink::link_model::SicOrder;
use hybrid_uplink::optimizer::{initialize_state, SchemeMode};
use hybrid_uplink::scenario::{Scenario, SystemConfig};
use hybrid_uplink::subproblem::prepare_subproblem;

#[derive(Parser)]
#[command(name = "hybrid-uplink", version, about = "Completion-time optimization for multi-UAV sensing uplinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and write raw.csv and aggregate.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trials per sweep value.
        #[arg(long)]
        seeds: Option<usize>,
        /// Scheme to run; repeat to select several.
        #[arg(long = "scheme")]
        schemes: Vec<SchemeMode>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Relative convergence tolerance of the alternating loop.
        #[arg(long)]
        tol: Option<f64>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write the first surrogate program of a sampled scenario in CBF format.
    DumpProgram {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "HYBRID")]
        scheme: SchemeMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    seeds: Option<usize>,
    schemes: Vec<SchemeMode>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    jobs: Option<usize>,
) -> hybrid_uplink::Result<bool> {
    let mut spec = load_config(&config)?;
    if let Some(n) = seeds {
        spec.trials = n;
    }
    if !schemes.is_empty() {
        spec.schemes = schemes;
    }
    if let Some(n) = max_iters {
        spec.system.max_iters = n;
    }
    if let Some(t) = tol {
        spec.system.eps_rel = t;
    }
    if let Some(j) = jobs {
        spec.jobs = j;
    }
    spec.validate()?;
    let out = out
        .or_else(|| spec.output.clone())
        .ok_or_else(|| hybrid_uplink::Error::InvalidConfig("no output directory: pass --out or set `output`".into()))?;

    eprintln!(
        "sweep {} over {:?}: {} trial(s) x {} scheme(s)",
        spec.sweep,
        spec.values,
        spec.trials,
        spec.schemes.len()
    );
    let start = Instant::now();
    let rows = run_monte_carlo(&spec)?;
    let files = emit_results(&rows, &out)?;
    let failed = rows.iter().filter(|r| !r.succeeded()).count();
    eprintln!(
        "{} rows ({failed} failed) in {:.1} s -> {}, {}",
        rows.len(),
        start.elapsed().as_secs_f64(),
        files.raw.display(),
        files.aggregate.display()
    );
    Ok(failed == 0)
}

fn dump_program(config: PathBuf, scheme: SchemeMode, seed: u64, out: PathBuf) -> hybrid_uplink::Result<()> {
    let spec = load_config(&config)?;
    let cfg: SystemConfig = spec.sweep.apply(&spec.system, spec.values[0])?;
    let scenario = Scenario::sample(&cfg, seed)?;
    let pi = SicOrder::strongest_first(&scenario.channels);
    let state = initialize_state(&scenario.channels, &cfg, scheme, &pi)?;
    let model = prepare_subproblem(&state, &scenario.channels, &cfg, &pi, &scheme.pattern(cfg.num_uavs))?;
    std::fs::write(&out, model.program.write_cbf())?;
    eprintln!("wrote {} variables to {}", model.program.num_vars(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            schemes,
            max_iters,
            tol,
            jobs,
        } => run(config, out, seeds, schemes, max_iters, tol, jobs),
        Command::DumpProgram { config, scheme, seed, out } => dump_program(config, scheme, seed, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
