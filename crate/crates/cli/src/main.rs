use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sbfl_leo::exec::Execution;
use sbfl_leo::ledger::verify_dump;
use sbfl_leo::sim::{compare, compare_csv, run_to_dir, sweep, sweep_csv, Method, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "sbfl-leo",
    version,
    about = "Federated learning over a LEO constellation with a sharded ledger"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to runs/<name>-<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured method.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        sequential: bool,
    },
    /// Per-round energy of SBFL_LEO and FEDAVG across constellation sizes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "40,80,120,160,200")]
        satellites: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-validate a chain dump written by `run`.
    VerifyChain {
        #[arg(long)]
        dump: PathBuf,
    },
    /// Run several scenarios and summarize them.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let cfg = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            method,
            rounds,
            sequential,
        } => {
            let mut cfg = load(&config, seed)?;
            if let Some(m) = method {
                cfg = cfg.with_method(m);
            }
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if sequential {
                cfg.execution = Execution::Sequential;
            }
            let dir = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", cfg.name, cfg.seed)));
            let (output, wall) = run_to_dir(&cfg, &dir)?;
            for r in &output.rounds {
                println!(
                    "round {:>3}  acc {:.4}  loss {:.4}  energy {:.3} J  suspects {:>3}{}",
                    r.round,
                    r.accuracy,
                    r.test_loss,
                    r.energy.total,
                    r.suspects.len(),
                    if r.failed { "  failed" } else { "" }
                );
            }
            println!(
                "{} {} seed {}: final accuracy {:.4}, total energy {:.3} J, {:.2}s wall, wrote {}",
                cfg.name,
                cfg.method,
                cfg.seed,
                output.final_accuracy(),
                output.total_energy(),
                wall,
                dir.display()
            );
        }
        Command::Sweep {
            config,
            satellites,
            out,
        } => {
            let cfg = load(&config, None)?;
            let rows = sweep(&cfg, &satellites)?;
            println!(
                "{:>10} {:>12} {:>12} {:>7}",
                "satellites", "SBFL_LEO J", "FEDAVG J", "ratio"
            );
            for r in &rows {
                println!(
                    "{:>10} {:>12.3} {:>12.3} {:>7.4}",
                    r.satellites, r.sbfl.total, r.fedavg.total, r.ratio
                );
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
                fs::write(dir.join("sweep.json"), serde_json::to_vec_pretty(&rows)?)?;
            }
        }
        Command::VerifyChain { dump } => match verify_dump(&dump) {
            Ok(report) => println!(
                "ok: {} chains, {} blocks, {} transactions",
                report.chains, report.blocks, report.transactions
            ),
            Err(e) => {
                eprintln!("verification failed: {e}");
                return Ok(ExitCode::FAILURE);
            }
        },
        Command::Compare { configs, seed, out } => {
            if configs.is_empty() {
                bail!("no configs given");
            }
            let cfgs = configs.iter().map(|p| load(p, seed)).collect::<Result<Vec<_>>>()?;
            let results = compare(&cfgs)?;
            println!(
                "{:<16} {:<16} {:>6} {:>8} {:>8} {:>12}",
                "name", "method", "rounds", "final", "min", "energy J"
            );
            for (row, _) in &results {
                println!(
                    "{:<16} {:<16} {:>6} {:>8.4} {:>8.4} {:>12.3}",
                    row.name,
                    row.method.name(),
                    row.rounds_run,
                    row.final_accuracy,
                    row.min_accuracy,
                    row.total_energy
                );
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                let rows: Vec<_> = results.iter().map(|(r, _)| r.clone()).collect();
                fs::write(dir.join("compare.csv"), compare_csv(&rows)?)?;
                let runs: Vec<_> = results.iter().map(|(_, o)| o).collect();
                fs::write(dir.join("compare.json"), serde_json::to_vec_pretty(&runs)?)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
