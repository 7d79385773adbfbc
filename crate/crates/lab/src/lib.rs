//! Experiment driver for `floquet-core`: configuration, subcommands,
//! artifact writing and the run cache.
// `!(x > y)` comparisons reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod beta_io;
pub mod cache;
pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

pub use artifact::{Artifact, Outcome, Status};
pub use config::RunConfig;

pub const TOOL: &str = "floquet-lab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "FLOQUET_CACHE";

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] floquet_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed artifact {file}: {reason}")]
    Artifact { file: String, reason: String },
}

impl LabError {
    /// 2 for invalid input, 3 for budget exhaustion, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        use floquet_core::Error as E;
        match self {
            LabError::Config(_) | LabError::Artifact { .. } => 2,
            LabError::Io(_) => 2,
            LabError::Core(e) => match e {
                E::Validation { .. } | E::Geometry(_) | E::DimensionTooSmall { .. } | E::SingularModel(_) => 2,
                E::Budget(_) | E::Resource(_) => 3,
                _ => 4,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    OperatorCheck,
    OperatorExport,
    Evolve,
    Lyapunov,
    Spectrum,
    Clark,
    Average,
    BetaSearch,
    Verify,
    Report,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::OperatorCheck,
        Command::OperatorExport,
        Command::Evolve,
        Command::Lyapunov,
        Command::Spectrum,
        Command::Clark,
        Command::Average,
        Command::BetaSearch,
        Command::Verify,
        Command::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::OperatorCheck => "operator check",
            Command::OperatorExport => "operator export",
            Command::Evolve => "evolve",
            Command::Lyapunov => "lyapunov",
            Command::Spectrum => "spectrum",
            Command::Clark => "clark",
            Command::Average => "average",
            Command::BetaSearch => "beta search",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }

    /// Commands whose output depends on the output directory are never cached.
    fn cacheable(&self) -> bool {
        !matches!(self, Command::BetaSearch | Command::Report)
    }
}

/// Where a run writes and whether it may use the cache.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub cache_root: Option<PathBuf>,
}

impl RunOptions {
    /// Output directory `out`, cache root from the environment or `out/.cache`.
    pub fn new(out: impl Into<PathBuf>) -> Self {
        let out = out.into();
        let cache_root = Some(
            std::env::var_os(CACHE_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| out.join(".cache")),
        );
        Self { out, cache_root }
    }

    pub fn without_cache(mut self) -> Self {
        self.cache_root = None;
        self
    }
}

/// Runs one subcommand and writes its artifacts into `opts.out`.
pub fn run(cmd: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome, LabError> {
    std::fs::create_dir_all(&opts.out)?;
    let cache = match (&opts.cache_root, cfg.run.cache && cmd.cacheable()) {
        (Some(root), true) => Some(cache::Cache::new(root, cmd, cfg)),
        _ => None,
    };
    if let Some(hit) = cache.as_ref().and_then(|c| c.load()) {
        write_artifacts(&opts.out, &hit.artifacts)?;
        return Ok(hit);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build()
        .map_err(|e| LabError::Config(format!("run.threads: {e}")))?;
    let outcome = pool.install(|| commands::execute(cmd, cfg, &opts.out))?;
    write_artifacts(&opts.out, &outcome.artifacts)?;
    if let Some(c) = &cache {
        c.store(&outcome)?;
    }
    Ok(outcome)
}

fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<(), LabError> {
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
    }
    Ok(())
}
