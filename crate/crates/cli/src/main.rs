use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mvstdm::ingest::{LatLonGrid, RegridMode};
use mvstdm::parallel::Exec;
use mvstdm::Result;
use mvstdm_cli::{cmd_fit, cmd_grid, cmd_ingest, cmd_predict, cmd_project, cmd_score, cmd_simulate, sim_spec, IngestOptions, Preset, RunConfig, SimOverrides};

#[derive(Parser)]
#[command(name = "mvstdm", version, about = "Multivariate space-time dynamic model: simulate, fit, predict, score")]
struct Cli {
    /// Run the data-parallel inner loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Study,
    Reduced,
}

#[derive(Subcommand)]
enum Command {
    /// Export an icosahedral basis grid as JSON.
    Grid {
        #[arg(long)]
        level: u32,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Generate a synthetic dataset with a truth sidecar.
    Simulate {
        #[arg(long, value_enum, default_value = "study")]
        preset: PresetArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        n_times: Option<usize>,
        #[arg(long)]
        burn_in_steps: Option<usize>,
        #[arg(long)]
        tau2: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Run the Gibbs sampler described by a run configuration.
    Fit {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        label: Option<String>,
        /// Keep state draws (needed by predict and score).
        #[arg(long)]
        store_states: Option<bool>,
    },
    /// Posterior predictive summaries of the held-out entries.
    Predict {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// CRPS and RMSPE tables for one or more fitted runs.
    Score {
        #[arg(long, required = true, num_args = 1..)]
        draws: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Map the transition blocks onto the observation locations.
    Project {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Regrid a dataset and convert it to standardized monthly anomalies.
    Ingest {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 24)]
        n_lat: usize,
        #[arg(long, default_value_t = 48)]
        n_lon: usize,
        /// Average in degree units instead of by spherical area.
        #[arg(long)]
        unweighted: bool,
        #[arg(long)]
        clim_start: i32,
        #[arg(long)]
        clim_end: i32,
    },
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Grid { level, output } => cmd_grid(level, &output),
        Command::Simulate { preset, seed, output, n_times, burn_in_steps, tau2, sigma2, kappa } => {
            let preset = match preset {
                PresetArg::Study => Preset::Study,
                PresetArg::Reduced => Preset::Reduced,
            };
            let spec = sim_spec(preset, seed, &SimOverrides { n_times, burn_in_steps, tau2, sigma2, kappa })?;
            cmd_simulate(&spec, &output)
        }
        Command::Fit { config, data, output, n_iter, burn_in, thin, chains, seed, label, store_states } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(d) = data {
                cfg.data = d;
            }
            if let Some(o) = output {
                cfg.output = o;
            }
            if let Some(n) = n_iter {
                cfg.sampler.n_iter = n;
            }
            if burn_in.is_some() {
                cfg.sampler.burn_in = burn_in;
            }
            if let Some(t) = thin {
                cfg.sampler.thin = t;
            }
            if let Some(c) = chains {
                cfg.sampler.n_chains = c;
            }
            if let Some(s) = seed {
                cfg.sampler.seed = s;
            }
            if label.is_some() {
                cfg.label = label;
            }
            if let Some(s) = store_states {
                cfg.sampler.store_states = s;
            }
            cmd_fit(&cfg, exec).map(|_| ())
        }
        Command::Predict { draws, output, seed } => cmd_predict(&draws, &output, seed, exec),
        Command::Score { draws, output, seed } => cmd_score(&draws, &output, seed, exec).map(|_| ()),
        Command::Project { draws, output } => cmd_project(&draws, &output, exec),
        Command::Ingest { input, output, n_lat, n_lon, unweighted, clim_start, clim_end } => {
            let opts = IngestOptions {
                target: LatLonGrid::new(n_lat, n_lon)?,
                mode: if unweighted { RegridMode::Unweighted } else { RegridMode::AreaWeighted },
                clim_years: clim_start..=clim_end,
            };
            cmd_ingest(&input, &output, &opts, exec)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
