mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use privshare_core::econ::{ParticipationModel, ServerCostModel};
use privshare_core::optimize::SweepParameter;

use commands::Run;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "privshare", version, about = "Privacy-aware vehicular data sharing: calibration, pricing and simulation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode_participation: Option<Participation>,
    #[arg(long, global = true, value_enum)]
    mode_cost: Option<Cost>,
    /// Use seeded synthetic trajectories instead of a trace file.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Trace CSV (vehicle_id, timestamp, lat, lon).
    #[arg(long, global = true)]
    traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Participation {
    Cdf,
    Pdf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cost {
    AsWritten,
    TimesS,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic traces.
    Gen {
        #[arg(long)]
        vehicles: Option<usize>,
        /// Minutes per vehicle.
        #[arg(long)]
        duration: Option<usize>,
    },
    /// Bin traces into a spatio-temporal count map.
    Ingest,
    /// Fit the per-server privacy loss coefficient.
    CalibrateLoss,
    /// Build the utility surface and fit its saturating model.
    CalibrateUtility,
    /// Find the profit-maximizing (c1, f_d, s).
    Optimize {
        /// Also solve every participation/cost mode combination.
        #[arg(long)]
        all_modes: bool,
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Re-optimize over a list of values of one parameter.
    Sweep {
        /// One of c2, c3, beta, V, sigma.
        #[arg(long, value_parser = parse_sweep_param)]
        param: Option<SweepParameter>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Route samples to servers, aggregate them securely, and measure what
    /// colluding servers can reconstruct.
    Simulate {
        /// Keep share matrices in the transcript regardless of size.
        #[arg(long)]
        keep_shares: bool,
    },
    /// Summarize the outputs in the output directory.
    Report,
}

fn parse_sweep_param(s: &str) -> Result<SweepParameter, String> {
    match s.to_ascii_lowercase().as_str() {
        "c2" => Ok(SweepParameter::C2),
        "c3" => Ok(SweepParameter::C3),
        "beta" => Ok(SweepParameter::Beta),
        "v" | "vehicles" => Ok(SweepParameter::Vehicles),
        "sigma" => Ok(SweepParameter::Sigma),
        _ => Err(format!("unknown parameter `{s}` (expected c2, c3, beta, V or sigma)")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Ingest => "ingest",
            Command::CalibrateLoss => "calibrate-loss",
            Command::CalibrateUtility => "calibrate-utility",
            Command::Optimize { .. } => "optimize",
            Command::Sweep { .. } => "sweep",
            Command::Simulate { .. } => "simulate",
            Command::Report => "report",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    if let Some(path) = &g.traces {
        cfg.traces = Some(path.clone());
    }
    if let Some(p) = g.mode_participation {
        cfg.econ.participation = match p {
            Participation::Cdf => ParticipationModel::Cdf,
            Participation::Pdf => ParticipationModel::PdfAsWritten,
        };
    }
    if let Some(c) = g.mode_cost {
        cfg.econ.server_cost = match c {
            Cost::AsWritten => ServerCostModel::PerServerAsWritten,
            Cost::TimesS => ServerCostModel::TotalTimesS,
        };
    }
    match &cli.command {
        Command::Gen { vehicles, duration } => {
            if let Some(v) = vehicles {
                cfg.synthetic.vehicles = *v;
            }
            if let Some(d) = duration {
                cfg.synthetic.duration = *d;
            }
        }
        Command::Optimize { starts: Some(n), .. } => cfg.optimizer.n_starts = *n,
        Command::Sweep { param, values } => {
            if let Some(p) = param {
                cfg.sweep.parameter = *p;
            }
            if let Some(v) = values {
                cfg.sweep.values = v.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: RunConfig) -> Result<()> {
    let mut run = Run::new(cfg, cli.global.synthetic);
    match &cli.command {
        Command::Gen { .. } => commands::gen(&mut run)?,
        Command::Ingest => commands::ingest(&mut run)?,
        Command::CalibrateLoss => commands::calibrate_loss(&mut run)?,
        Command::CalibrateUtility => commands::calibrate_utility(&mut run)?,
        Command::Optimize { all_modes, .. } => commands::optimize(&mut run, *all_modes)?,
        Command::Sweep { .. } => commands::run_sweep(&mut run)?,
        Command::Simulate { keep_shares } => commands::simulate(&mut run, *keep_shares)?,
        Command::Report => commands::report(&mut run)?,
    }
    run.finish(cli.command.name())
}

fn is_numeric(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|e| e.downcast_ref::<privshare_core::Error>().is_some_and(privshare_core::Error::is_numeric))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match execute(&cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_numeric(&e) { 2 } else { 1 })
        }
    }
}
