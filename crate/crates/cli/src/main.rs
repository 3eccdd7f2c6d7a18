use std::path::PathBuf;

use ces_cli::commands::{cmd_bench, cmd_plot, cmd_run, cmd_scenario, BenchOptions, EXIT_INPUT};
use ces_cli::overrides;
use clap::{Parser, Subcommand};

/// Trajectory smoothing and speed planning for car-like vehicles.
///
/// `run` and `bench` also take dotted overrides of scenario keys, for
/// example `--ces.r-l 0.5` or `--vehicle.mu 0.9`. `CES_OUT_DIR` sets the
/// default output directory of both.
#[derive(Parser)]
#[command(name = "ces", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth one scenario file and write its artifacts.
    Run {
        scenario: PathBuf,
        #[arg(long, env = "CES_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Zero the wall-clock fields of the report.
        #[arg(long)]
        no_timings: bool,
    },
    /// Run a batch of seeded mazes.
    Bench {
        #[arg(long, default_value_t = 24)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long, env = "CES_OUT_DIR", default_value = "bench-out")]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write per-maze artifacts.
        #[arg(long)]
        artifacts: bool,
        #[arg(long)]
        no_timings: bool,
    },
    /// Redraw plot.svg from an output directory.
    Plot { dir: PathBuf },
    /// Print a built-in scenario file (maze, lane-change, moose).
    Scenario {
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let (args, ovs) = match overrides::extract(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(EXIT_INPUT);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match cli.command {
        Command::Run { scenario, out, no_timings } => cmd_run(&scenario, &out, &ovs, no_timings),
        Command::Bench { count, seed_base, out, jobs, artifacts, no_timings } => {
            let opts = BenchOptions { count, seed_base, out_dir: out, jobs, artifacts, no_timings };
            cmd_bench(&opts, &ovs)
        }
        Command::Plot { dir } => {
            if !ovs.is_empty() {
                eprintln!("error: plot takes no overrides");
                std::process::exit(EXIT_INPUT);
            }
            cmd_plot(&dir)
        }
        Command::Scenario { kind, seed } => cmd_scenario(&kind, seed),
    };
    std::process::exit(code);
}
