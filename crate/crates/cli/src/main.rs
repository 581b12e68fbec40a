use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpoc_cli::{cmd_baseline, cmd_compile, cmd_diagnose, cmd_verify, Mode, RunManifest};
use mpoc_core::Error;

/// MPO-based compression of time-evolution propagators into fixed-depth
/// two-qubit circuits.
#[derive(Parser)]
#[command(name = "mpoc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonArgs {
    /// Model configuration file (key/value text).
    #[arg(long)]
    config: PathBuf,
    /// Circuit depths to compile, in layers.
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 5, 9, 17])]
    depths: Vec<usize>,
    /// Training bond dimension.
    #[arg(long, default_value_t = 128)]
    chi: usize,
    /// Fine-Trotterization step count for the target build.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Pre-compression error budget for the target MPO.
    #[arg(long, default_value_t = 1e-7)]
    budget: f64,
    /// Seed for the optional random perturbation of the initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale of the random initialization perturbation (off by default).
    #[arg(long)]
    perturb: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "mpoc-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the target propagator and optimize circuits at each depth.
    Compile(CommonArgs),
    /// Compare compiled circuits against merged Trotterizations.
    Baseline(CommonArgs),
    /// Operator-Schmidt decay spectra of the compiled circuits.
    Diagnose(CommonArgs),
    /// Dense-oracle verification of all artifacts (small systems only).
    Verify(CommonArgs),
}

fn manifest(args: &CommonArgs, mode: Mode) -> RunManifest {
    RunManifest {
        config_path: args.config.clone(),
        depths: args.depths.clone(),
        chi: args.chi,
        k: args.k,
        budget: args.budget,
        seed: args.seed,
        perturb: args.perturb,
        out_dir: args.out.clone(),
        mode,
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Usage(_) | Error::Validation(_) | Error::Format(_) => 2,
        Error::Capacity { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compile(args) => {
            cmd_compile(&manifest(args, Mode::Compile)).map(|outputs| {
                println!("target chi: {}", outputs.target_chi);
                for r in &outputs.results {
                    println!(
                        "L={:3}  init {:.6e}  final {:.6e}  ({} sweeps, {} escalations)",
                        r.depth, r.init_cost, r.final_cost, r.sweeps, r.escalations
                    );
                }
            })
        }
        Command::Baseline(args) => {
            cmd_baseline(&manifest(args, Mode::Baseline)).map(|table| {
                println!(
                    "{:>5} {:>14} {:>14} {:>7} {:>12} {:>12}",
                    "depth", "compiled", "best-trotter", "order/k", "reduction", "compression"
                );
                for r in &table.rows {
                    println!(
                        "{:>5} {:>14.6e} {:>14.6e} {:>4}/{:<2} {:>12.3} {:>12.3}",
                        r.depth,
                        r.compiled_cost,
                        r.best_trotter_cost,
                        r.best_trotter_order,
                        r.best_trotter_k,
                        r.error_reduction,
                        r.depth_compression
                    );
                }
            })
        }
        Command::Diagnose(args) => cmd_diagnose(&manifest(args, Mode::Diagnose)).map(|path| {
            println!("spectra written to {}", path.display());
        }),
        Command::Verify(args) => match cmd_verify(&manifest(args, Mode::Verify)) {
            Ok(report) => {
                for (what, ok, _) in &report.checks {
                    println!("[{}] {}", if *ok { "PASS" } else { "FAIL" }, what);
                }
                if report.all_passed() {
                    Ok(())
                } else {
                    eprintln!("verification failed");
                    return ExitCode::from(4);
                }
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
