//! Command-line driver for the multiscale solver experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lod2d::experiment::{cmd_diagnose, cmd_dump_basis, cmd_solve, cmd_table, ExperimentConfig};
use lod2d::Result;

#[derive(Parser)]
#[command(
    name = "lod2d",
    about = "Spectral multiscale solver for high-contrast diffusion on the unit square"
)]
struct Cli {
    /// Flat key=value configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread budget for the whole process.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fine grid divisions per side, overrides the config.
    #[arg(long, global = true)]
    fine: Option<usize>,
    /// Base random seed: dual node selection uses it directly, the
    /// condition estimate uses seed + 1.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (H, beta) grid and write certificates, CSV tables and logs.
    Solve,
    /// Run the grid and fit log-log convergence orders per contrast.
    Table,
    /// Report mode counts, spectral floors, operator structure and
    /// conditioning of the first grid cell.
    Diagnose,
    /// Run only the offline stage and write reusable basis files.
    DumpBasis,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(fine) = cli.fine {
        cfg.fine_divisions = fine;
    }
    if let Some(seed) = cli.seed {
        cfg.dual_seed = seed;
        cfg.cond_seed = seed + 1;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Solve => {
            let sweep = cmd_solve(&cfg)?;
            for c in &sweep.cells {
                println!(
                    "H=1/{} beta={:e} L={} k={} e_energy={:.3e} est={:.3e} pass={}",
                    c.coarse_divisions,
                    c.beta,
                    c.cert.l,
                    c.cert.k,
                    c.report.e_energy_abs,
                    c.cert.energy_estimate,
                    c.pass
                );
            }
            for (nh, beta, msg) in &sweep.failures {
                eprintln!("cell H=1/{nh} beta={beta:e} failed: {msg}");
            }
            Ok(sweep.all_pass())
        }
        Command::Table => {
            let (sweep, slopes) = cmd_table(&cfg)?;
            for s in &slopes {
                println!(
                    "beta={:e} energy_slope={:.3} l2_slope={:.3}",
                    s.beta, s.energy_slope, s.l2_slope
                );
            }
            Ok(sweep.all_pass())
        }
        Command::Diagnose => {
            let rep = cmd_diagnose(&cfg)?;
            println!(
                "H=1/{} beta={:e} L={} cond={:.3e} q={:.4}",
                rep.coarse_divisions, rep.beta, rep.l_total, rep.cond, rep.q
            );
            for (l, count) in &rep.histogram {
                println!("L_i={l}: {count} elements");
            }
            if let Some(st) = &rep.structure {
                println!(
                    "structure: max_diag_dev={:.2e} max_disjoint={:.2e} max_projected={:.2e}",
                    st.max_diag_dev, st.max_disjoint, st.max_projected
                );
            }
            Ok(true)
        }
        Command::DumpBasis => {
            for path in cmd_dump_basis(&cfg)? {
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
