use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geoflow::chain::chain_notation;
use geoflow::commands::{self, EXIT_NOT_CONVERGED};
use geoflow::config::RunConfig;
use geoflow::harness::SummaryTable;
use geoflow::Error;

#[derive(Parser)]
#[command(name = "geoflow", version, about = "Gradual transfer learning across structure families")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config leaf, e.g. `--set features.noise_frac=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "GEOFLOW_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise one dataset file per structure and channel.
    Generate(Common),
    /// Alignment curves and path length of the generated chain.
    Diagnose(Common),
    /// Monte-Carlo transfer along the configured chains.
    Transfer(Common),
    /// Search for the best chain at each number of intermediates.
    Search(Common),
}

fn load(c: &Common) -> Result<RunConfig, Error> {
    let mut overrides = c.set.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = RunConfig::load(&c.config, &overrides)?;
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(jobs) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load(&c)?;
            let m = commands::cmd_generate(&cfg)?;
            println!("wrote {} dataset files to {}", m.files.len(), cfg.out_dir.display());
            Ok(0)
        }
        Command::Diagnose(c) => {
            let cfg = load(&c)?;
            for d in commands::cmd_diagnose(&cfg)? {
                println!(
                    "{}: d = {}, path length {:.6e}, direct {:.6e}, triangle inequality {}",
                    d.channel,
                    d.subspace_dim,
                    d.path_length.total,
                    d.path_length.direct,
                    if d.triangle_holds { "holds" } else { "VIOLATED" }
                );
            }
            Ok(0)
        }
        Command::Transfer(c) => {
            let cfg = load(&c)?;
            let out = commands::cmd_transfer(&cfg)?;
            print!("{}", SummaryTable::from_experiment(&out.rows).to_text());
            for r in out.rows.iter().filter(|r| !r.converged) {
                eprintln!(
                    "not converged: {} {} after {} realisations",
                    r.spec.method.name(),
                    chain_notation(&r.spec.structure_indices),
                    r.results.len()
                );
            }
            Ok(if out.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Search(c) => {
            let cfg = load(&c)?;
            let out = commands::cmd_search(&cfg)?;
            println!("{}\n", geoflow::harness::SEARCH_CAVEAT);
            for (_, row) in &out.best {
                println!("{}", commands::describe(row));
            }
            println!();
            print!("{}", SummaryTable::from_experiment(&out.evaluated).to_text());
            Ok(if out.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
