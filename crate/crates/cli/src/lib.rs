//! Scenario-file front-end for the execmm solvers.

pub mod output;
pub mod run;
pub mod scenario;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use run::{execute, Command, Report, UsageError, EXIT_CERTIFICATE, EXIT_OK, EXIT_SOLVER, EXIT_USAGE};
pub use scenario::{load_scenario, parse_scenario, ScenarioConfig, ScenarioError};

use output::{sha256_hex, write_files, write_manifest, Manifest};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "EXECMM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "execmm-out";

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid_steps: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Flag, then config file, then environment, then the built-in default.
pub fn resolve_out_dir(cfg: &ScenarioConfig, flag: Option<&Path>, env: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub summary: Vec<String>,
}

#[derive(Debug)]
pub enum CliError {
    Scenario(ScenarioError),
    Usage(UsageError),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Scenario(e) => write!(f, "{e}"),
            Self::Usage(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Applies command-line overrides, re-checking the result like a loaded file.
pub fn apply_overrides(cfg: ScenarioConfig, o: &Overrides) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = cfg;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(n) = o.grid_steps {
        cfg.grid.steps = n;
    }
    parse_scenario(&cfg.to_toml())
}

/// Runs `cmd` and writes the tables, the resolved scenario and the manifest.
pub fn run_scenario(cfg: &ScenarioConfig, cmd: Command, out_dir: &Path) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let report = execute(cfg, cmd).map_err(CliError::Usage)?;
    let scenario = cfg.to_toml();
    let mut files = vec![("scenario.toml".to_string(), scenario.clone())];
    files.extend(report.tables.iter().map(|(name, t)| (name.to_string(), t.to_csv())));
    let mut diag = output::Table::new(&["key", "value"]);
    for (k, v) in &report.diagnostics {
        diag.push(vec![k.clone(), v.clone()]);
    }
    files.push(("diagnostics.csv".into(), diag.to_csv()));
    let outputs = write_files(out_dir, &files).map_err(CliError::Io)?;
    let manifest = Manifest {
        command: cmd.name().into(),
        model: cfg.model.section().into(),
        config_sha256: sha256_hex(scenario.as_bytes()),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        exit_code: report.exit_code,
        partial: report.partial,
        outputs,
    };
    write_manifest(out_dir, &manifest).map_err(CliError::Io)?;
    Ok(Outcome {
        exit_code: report.exit_code,
        out_dir: out_dir.to_path_buf(),
        manifest,
        summary: report.summary,
    })
}
