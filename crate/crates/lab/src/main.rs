use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use floquet_lab::{run, Command, RunConfig, RunOptions};

/// Numerical lab for banded unitary Floquet operators.
#[derive(Parser, Debug)]
#[command(name = "floquet", version)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `section.key=value` override, applied after the file.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for every random draw (overrides `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides `run.threads`).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Neither read nor write the run cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Unitarity, factorization and θ-covariance checks, or a matrix export.
    Operator {
        #[command(subcommand)]
        action: OperatorCmd,
    },
    /// Moment series of the evolved basis vector.
    Evolve,
    /// Lyapunov exponents on an energy grid or at random (θ, E).
    Lyapunov,
    /// Eigenpairs with decay rates and boundary flags.
    Spectrum,
    /// Rank-one transform identity errors on a circle.
    Clark,
    /// Spectral averaging over the rank-one coupling.
    Average,
    /// Staged construction of the dyadic frequency sequence.
    Beta {
        #[command(subcommand)]
        action: BetaCmd,
    },
    /// Randomized inequality suites and structural checks.
    Verify,
    /// Summary table of the artifacts already in the output directory.
    Report,
}

#[derive(Subcommand, Debug)]
enum OperatorCmd {
    /// Random-draw unitarity, factorization and covariance checks.
    Check,
    /// Nonzero entries of one truncated operator as CSV.
    Export,
}

#[derive(Subcommand, Debug)]
enum BetaCmd {
    /// Build (or resume) the stages, then audit them.
    Search,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::Operator { action: OperatorCmd::Check } => Command::OperatorCheck,
        Cmd::Operator { action: OperatorCmd::Export } => Command::OperatorExport,
        Cmd::Evolve => Command::Evolve,
        Cmd::Lyapunov => Command::Lyapunov,
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Clark => Command::Clark,
        Cmd::Average => Command::Average,
        Cmd::Beta { action: BetaCmd::Search } => Command::BetaSearch,
        Cmd::Verify => Command::Verify,
        Cmd::Report => Command::Report,
    };
    let mut overrides = cli.set;
    if let Some(s) = cli.seed {
        overrides.push(format!("run.seed={s}"));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("run.threads={t}"));
    }
    let result = RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| {
        let mut opts = RunOptions::new(&cli.out);
        if cli.no_cache {
            opts = opts.without_cache();
        }
        run(cmd, &cfg, &opts)
    });
    match result {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                eprintln!("wrote {}", cli.out.join(&a.name).display());
            }
            if let Some(m) = outcome.status.message() {
                eprintln!("{}: {m}", outcome.status.label());
            }
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
