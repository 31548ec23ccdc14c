use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vprom_core::config::RunConfig;
use vprom_core::pipeline::{self, EvalOptions, RunOptions, Split, Workspace};
use vprom_core::reduction::Strategy;
use vprom_core::Error;

/// Parametric reduced-order models of hysteretic frames.
///
/// Artifacts live under $VPROM_ARTIFACTS (default ./artifacts).
#[derive(Parser)]
#[command(name = "vprom", version)]
struct Cli {
    /// Run configuration (TOML). Overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Master seed; re-derives every seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Local,
    Global,
    #[value(alias = "macprom")]
    Mac,
    Cprom,
    Vprom,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the training and validation designs.
    Doe,
    /// Run the full-order model on one split.
    Simulate {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Build the artifacts of one strategy.
    Build {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
    },
    /// Run reduced models against stored full-order solutions.
    Evaluate {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value = "valid")]
        split: SplitArg,
        /// Use ECSW hyper-reduction.
        #[arg(long)]
        hyper: bool,
        /// ECSW tolerance (default from configuration).
        #[arg(long, requires = "hyper")]
        tau: Option<f64>,
        /// Latent-sampling envelope with this many draws (vprom only).
        #[arg(long, num_args = 0..=1, default_missing_value = "0")]
        uq: Option<usize>,
    },
    /// Aggregate all evaluations into tables.
    Report,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
        }
    }
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Local => Strategy::Local,
            StrategyArg::Global => Strategy::Global,
            StrategyArg::Mac => Strategy::Macprom,
            StrategyArg::Cprom => Strategy::Cprom,
            StrategyArg::Vprom => Strategy::Vprom,
        }
    }
}

fn requested_config(cli: &Cli) -> vprom_core::Result<Option<RunConfig>> {
    let base = match (&cli.config, cli.preset) {
        (Some(path), _) => Some(RunConfig::load(path)?),
        (None, Some(Preset::Paper)) => Some(RunConfig::paper()),
        (None, Some(Preset::Desk)) => Some(RunConfig::desk()),
        (None, Some(Preset::Tiny)) => Some(RunConfig::tiny()),
        (None, None) => None,
    };
    Ok(match (base, cli.seed) {
        (Some(c), Some(s)) => Some(c.with_seed(s)),
        (None, Some(s)) => Some(RunConfig::desk().with_seed(s)),
        (c, None) => c,
    })
}

fn run(cli: Cli) -> vprom_core::Result<()> {
    let root = pipeline::artifact_root();
    let mut ws = Workspace::open(&root, requested_config(&cli)?)?;
    let opts = RunOptions { workers: cli.workers };
    match cli.command {
        Command::Doe => {
            let r = pipeline::doe(&mut ws)?;
            let note = if r.reused { " (unchanged)" } else { "" };
            println!("doe: {} train, {} valid{note}", r.n_train, r.n_valid);
        }
        Command::Simulate { split } => {
            let r = pipeline::simulate(&mut ws, split.into(), opts)?;
            println!("simulate {}: {} run, {} already done, {} failed", r.split.name(), r.completed, r.skipped, r.failed.len());
            for (i, e) in &r.failed {
                eprintln!("  sample {i}: {e}");
            }
        }
        Command::Build { strategy } => {
            let r = pipeline::build(&mut ws, strategy.into(), opts)?;
            println!("build {}: {}", r.strategy.name(), r.detail);
        }
        Command::Evaluate { strategy, split, hyper, tau, uq } => {
            let hyper = hyper.then(|| tau.unwrap_or(ws.config().ecsw.tau));
            let uq = uq.map(|n| if n == 0 { ws.config().uq.n_draws } else { n });
            let r = pipeline::evaluate(&mut ws, EvalOptions { strategy: strategy.into(), split: split.into(), hyper, uq }, opts)?;
            let errs: Vec<f64> = r.records.iter().map(|x| x.err_u).collect();
            let median = vprom_core::metrics::statistics(&errs).map_or(f64::NAN, |s| s.median);
            println!("evaluate {} on {}: {} samples, median err_u {median:.3}%, {} failed", r.label, r.split.name(), r.records.len(), r.failures.len());
            for e in &r.envelopes {
                println!("  envelope sample {}: containment {:.3}, {} draws ({} failed)", e.sample_index, e.containment, e.n_draws, e.failed_draws);
            }
        }
        Command::Report => {
            let r = pipeline::report(&mut ws)?;
            print!("{}", vprom_core::metrics::summary_table(&r.summaries));
            for f in r.files {
                println!("wrote {}", root.join(f).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("VPROM_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Untrained(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
