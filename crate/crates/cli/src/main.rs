use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use synccool_cli::commands::{self, ErrorReport, RunOptions, SpectrumRequest};
use synccool_cli::config::{Engine, InvalidConfig, RunConfig};
use synccool_cli::presets;
use synccool_core::observables::SpectrumOptions;

/// Synchronization-assisted cavity cooling: simulations and analytics.
///
/// All quantities are in recoil units (ħ = k = ω_R = 1).
#[derive(Parser)]
#[command(name = "synccool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every engine listed in the configuration.
    Run(RunArgs),
    /// Semiclassical stochastic ensemble.
    SimulateSc(RunArgs),
    /// Deterministic mean-field dynamics.
    SimulateMf(RunArgs),
    /// Stationary order parameter, profiles, friction and diffusion.
    SteadyState(RunArgs),
    /// Fluctuation-dissipation momentum width over pump rate and detuning.
    Sweep(RunArgs),
    /// Laplace spectrum and peak table of channels of a time-series CSV.
    Spectrum(SpectrumArgs),
    /// List presets, or print one as TOML.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Bundled configuration (see `synccool presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; never changes results.
    #[arg(long, env = "SYNCCOOL_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Time-series CSV (first column is time).
    #[arg(long)]
    input: PathBuf,
    /// Channel to transform; repeatable.
    #[arg(long = "channel", required = true)]
    channels: Vec<String>,
    /// Fraction of the final samples averaged for the stationary value.
    #[arg(long, default_value_t = 0.2)]
    window: f64,
    /// Ignore samples before this time.
    #[arg(long, default_value_t = 0.0)]
    t_start: f64,
    #[arg(long, default_value_t = 20.0)]
    omega_max: f64,
    #[arg(long, default_value_t = 2048)]
    n_omega: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => RunConfig::load(path)?,
            (None, Some(name)) => presets::preset(name)?,
            _ => bail!("give exactly one of --config and --preset"),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
            cfg.validate()?;
        }
        if self.threads == Some(0) {
            return Err(anyhow::anyhow!("--threads must be at least 1").context(InvalidConfig));
        }
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            threads: self.threads,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let cfg = a.load()?;
            for meta in commands::run_all(&cfg, &a.options())? {
                log::info!("{} finished in {:.2}s", meta.engine.unwrap_or("?"), meta.wall_time_s);
            }
        }
        Command::SimulateSc(a) => single(&a, Engine::Semiclassical, "simulate-sc")?,
        Command::SimulateMf(a) => single(&a, Engine::Meanfield, "simulate-mf")?,
        Command::SteadyState(a) => single(&a, Engine::SteadyState, "steady-state")?,
        Command::Sweep(a) => single(&a, Engine::Sweep, "sweep")?,
        Command::Spectrum(a) => {
            let req = SpectrumRequest {
                input: a.input,
                channels: a.channels,
                t_start: a.t_start,
                options: SpectrumOptions {
                    window_fraction: a.window,
                    omega_min: -a.omega_max,
                    omega_max: a.omega_max,
                    n_omega: a.n_omega,
                },
            };
            commands::spectrum_command(&req, &a.out)?;
        }
        Command::Presets { name: None } => {
            for name in presets::names() {
                let cfg = presets::preset(name)?;
                println!("{name:8} {}", cfg.description);
            }
        }
        Command::Presets { name: Some(name) } => print!("{}", presets::source(&name)?),
    }
    Ok(())
}

fn single(a: &RunArgs, engine: Engine, command: &str) -> Result<()> {
    let cfg = a.load()?;
    let meta = commands::execute(&cfg, engine, &a.options(), command).context(command.to_owned())?;
    for w in &meta.warnings {
        log::warn!("{w}");
    }
    log::info!("{command} wrote {} files to {} in {:.2}s", meta.files.len(), a.out.display(), meta.wall_time_s);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport::from_error(&e);
            eprintln!("error: {e:#}");
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            ExitCode::from(report.exit_code() as u8)
        }
    }
}
