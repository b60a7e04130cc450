use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use execmm_cli::{apply_overrides, load_scenario, resolve_out_dir, run_scenario, Command, Overrides, EXIT_USAGE, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "execmm", version, about = "Solve and certify execution / market-making equilibria")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed (TOML integers stop at 2^63 - 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Overrides the number of grid steps.
    #[arg(long)]
    grid_steps: Option<usize>,
    /// Output directory [default: $EXECMM_OUT_DIR, else ./execmm-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the equilibrium and write the trajectory table.
    Solve(Common),
    /// Solve, then run the Nash certificate.
    Verify(Common),
    /// Check the model-class hypotheses without solving.
    ValidateClasses(Common),
    /// Solve the Riccati equation of an execution game.
    Riccati(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let (cmd, args) = match cli.command {
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Verify(a) => (Command::Verify, a),
        Sub::ValidateClasses(a) => (Command::ValidateClasses, a),
        Sub::Riccati(a) => (Command::Riccati, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        grid_steps: args.grid_steps,
        out: args.out,
    };
    let cfg = match load_scenario(&args.config).and_then(|c| apply_overrides(c, &overrides)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out_dir = resolve_out_dir(&cfg, overrides.out.as_deref(), env.as_deref());
    match run_scenario(&cfg, cmd, &out_dir) {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            println!("wrote {} (exit {})", o.out_dir.display(), o.exit_code);
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
