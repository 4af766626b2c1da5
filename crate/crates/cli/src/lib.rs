//! Subcommand implementations behind the `mvstdm` binary.
//!
//! Each command is a plain function returning `mvstdm::Result`, so the binary
//! only has to parse flags and map errors to exit codes.

pub mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mvstdm::basis::{build_basis_matrix_with, build_sar_matrix, BasisSpec};
use mvstdm::evaluate::scoring::write_predictions_csv;
use mvstdm::evaluate::{build_holdout_mask, posterior_summary, predictive_draws, score_holdout, summarize, HoldoutMask, PredictiveDraws, ScoreTable};
use mvstdm::evaluate::summary::write_summary_csv;
use mvstdm::grid::build_icosahedral_grid;
use mvstdm::ingest::{compute_climatology, read_dataset, regrid_average, standardize_anomalies, to_observation_tensor, write_dataset, write_json, LatLonGrid, RegridMode};
use mvstdm::model::{project_transition_block, ObservationTensor};
use mvstdm::parallel::Exec;
use mvstdm::sampler::io::{read_draws, write_draws, DrawsManifest};
use mvstdm::sampler::{run_chains, DynamicModel, PosteriorDraws};
use mvstdm::simulate::{study_spec, reduced_spec, simulate_dataset, write_simulation, SigmaSpec, SimSpec};
use mvstdm::sparse::SparseRealMatrix;
use mvstdm::{Error, Result};

pub use config::{Mode, RunConfig};

pub const SCORES_MONTHLY: &str = "scores_monthly.csv";
pub const SCORES_AVERAGE: &str = "scores_average.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Write the icosahedral grid of `level` as JSON.
pub fn cmd_grid(level: u32, output: &Path) -> Result<()> {
    let grid = build_icosahedral_grid(level)?;
    write_json(output, &grid.to_export())?;
    log::info!("wrote {} nodes to {}", grid.len(), output.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Study,
    Reduced,
}

/// Optional replacements for preset values.
#[derive(Debug, Clone, Default)]
pub struct SimOverrides {
    pub n_times: Option<usize>,
    pub burn_in_steps: Option<usize>,
    pub tau2: Option<f64>,
    pub sigma2: Option<f64>,
    pub kappa: Option<f64>,
}

pub fn sim_spec(preset: Preset, seed: u64, o: &SimOverrides) -> Result<SimSpec> {
    let mut spec = match preset {
        Preset::Study => study_spec(seed)?,
        Preset::Reduced => reduced_spec(seed)?,
    };
    if let Some(t) = o.n_times {
        spec.n_times = t;
    }
    if let Some(b) = o.burn_in_steps {
        spec.burn_in_steps = b;
    }
    if let Some(t) = o.tau2 {
        spec.tau2 = vec![t; spec.n_vars()];
    }
    if let Some(s) = o.sigma2 {
        spec.sigma2 = SigmaSpec::Constant(s);
    }
    if let Some(k) = o.kappa {
        spec.kappa = k;
    }
    spec.validate(spec.transition.basis_size())?;
    Ok(spec)
}

pub fn cmd_simulate(spec: &SimSpec, output: &Path) -> Result<()> {
    let out = simulate_dataset(spec)?;
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    write_simulation(output, spec, &out)?;
    log::info!(
        "simulated {} variables x {} times x {} locations into {}",
        out.obs.n_vars(),
        out.obs.n_times(),
        out.obs.n_locs(),
        output.display()
    );
    Ok(())
}

/// Data, basis and hold-out mask reconstructed from a run configuration.
pub struct Prepared {
    /// Full tensor, hold-out entries included.
    pub full: ObservationTensor,
    /// Tensor the sampler sees: selected variables, hold-out entries hidden.
    pub fitted: ObservationTensor,
    pub mask: Option<HoldoutMask>,
    pub phi: SparseRealMatrix,
    pub sar_gram: SparseRealMatrix,
}

pub fn prepare(cfg: &RunConfig, exec: Exec) -> Result<Prepared> {
    let full = to_observation_tensor(&read_dataset(&cfg.data)?)?;
    let mask = cfg.holdout.as_ref().map(|h| build_holdout_mask(h, &full)).transpose()?;
    let hidden = match &mask {
        Some(m) => full.with_hidden(&m.hide)?,
        None => full.clone(),
    };
    let fitted = hidden.select_vars(&cfg.variable_indices(&full)?)?;
    let grid = build_icosahedral_grid(cfg.model.grid_level)?;
    let mut spec = BasisSpec::new(&grid, &full.locations);
    spec.range_factor = cfg.model.range_factor;
    let phi = build_basis_matrix_with(&spec, exec)?;
    let sar_gram = build_sar_matrix(&grid, cfg.model.kappa)?.gram();
    Ok(Prepared { full, fitted, mask, phi, sar_gram })
}

/// Run the sampler and write the draw directory. Returns the output path.
pub fn cmd_fit(cfg: &RunConfig, exec: Exec) -> Result<PathBuf> {
    cfg.validate()?;
    let mut recorded = cfg.clone();
    recorded.data = fs::canonicalize(&cfg.data).map_err(|e| Error::io(&cfg.data, e))?;
    let prep = prepare(cfg, exec)?;
    let model = DynamicModel::new(prep.phi, prep.sar_gram, prep.fitted.n_vars(), cfg.model.mode.transition())?;
    let priors = cfg.priors(model.state_dim())?;
    let sampler = cfg.sampler_config(exec);
    log::info!(
        "fitting {} ({} variables, K = {}, T = {}, {} chains x {} iterations)",
        cfg.label(),
        prep.fitted.n_vars(),
        model.basis_size(),
        prep.fitted.n_times(),
        sampler.n_chains,
        sampler.n_iter
    );
    let (draws, timings) = run_chains(&model, &prep.fitted, &priors, &sampler)?;
    let run = serde_json::to_value(&recorded).expect("run configuration serializes");
    write_draws(&cfg.output, &draws, &sampler, &timings, run)?;
    write_summary_csv(&cfg.output.join(SUMMARY_FILE), &posterior_summary(&draws)?)?;
    for (c, secs) in timings.iter().enumerate() {
        log::info!("chain {c}: {secs:.1} s");
    }
    Ok(cfg.output.clone())
}

/// A fitted draw directory with the configuration that produced it.
pub struct FittedRun {
    pub draws: PosteriorDraws,
    pub manifest: DrawsManifest,
    pub config: RunConfig,
}

pub fn load_run(dir: &Path) -> Result<FittedRun> {
    let (draws, manifest) = read_draws(dir)?;
    let config: RunConfig = serde_json::from_value(manifest.run.clone())
        .map_err(|e| Error::parse(dir.join(mvstdm::sampler::io::MANIFEST_FILE), format!("run configuration: {e}")))?;
    Ok(FittedRun { draws, manifest, config })
}

/// Predictive draws for the hold-out entries of a fitted run.
pub fn run_predictions(run: &FittedRun, seed: u64, exec: Exec) -> Result<(PredictiveDraws, Prepared)> {
    if run.config.holdout.is_none() {
        return Err(Error::Config("the run has no holdout block; nothing to predict".into()));
    }
    let prep = prepare(&run.config, exec)?;
    let mask = prep.mask.as_ref().expect("holdout present");
    let pred = predictive_draws(&run.draws, &prep.phi, &prep.full, mask, seed, exec)?;
    Ok((pred, prep))
}

/// Seed for the measurement-noise draws of the predictive distribution.
pub fn default_predict_seed(run: &FittedRun) -> u64 {
    run.manifest.sampler.seed.wrapping_add(1)
}

pub fn cmd_predict(draws_dir: &Path, output: &Path, seed: Option<u64>, exec: Exec) -> Result<()> {
    let run = load_run(draws_dir)?;
    let seed = seed.unwrap_or_else(|| default_predict_seed(&run));
    let (pred, prep) = run_predictions(&run, seed, exec)?;
    write_predictions_csv(output, &pred, &prep.full)?;
    log::info!("wrote {} predictions to {}", pred.entries.len(), output.display());
    Ok(())
}

/// Score every draw directory and write the monthly and averaged tables into `output`.
pub fn cmd_score(draw_dirs: &[PathBuf], output: &Path, seed: Option<u64>, exec: Exec) -> Result<ScoreTable> {
    if draw_dirs.is_empty() {
        return Err(Error::Argument("score needs at least one draw directory".into()));
    }
    let mut table = ScoreTable::default();
    let mut labels = Vec::new();
    for dir in draw_dirs {
        let run = load_run(dir)?;
        let label = run.config.label();
        if labels.contains(&label) {
            return Err(Error::Config(format!("model label {label:?} appears twice; set distinct labels")));
        }
        let seed = seed.unwrap_or_else(|| default_predict_seed(&run));
        let (pred, prep) = run_predictions(&run, seed, exec)?;
        table.extend(score_holdout(&label, &pred, &prep.full, exec)?);
        labels.push(label);
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    table.write_monthly_csv(&output.join(SCORES_MONTHLY))?;
    table.write_average_csv(&output.join(SCORES_AVERAGE))?;
    for row in &table.average {
        log::info!("{} / {}: CRPS {:.4}, RMSPE {:.4}", row.model, row.variable, row.crps, row.rmspe);
    }
    Ok(table)
}

/// Posterior mean and 95% interval of the rescaled projection of every
/// transition block at every observation location.
///
/// Columns: `lat_deg,lon_deg,i,j,post_mean,q025,q975`; `N * M^2` rows.
pub fn cmd_project(draws_dir: &Path, output: &Path, exec: Exec) -> Result<()> {
    let run = load_run(draws_dir)?;
    let draws = &run.draws;
    if !draws.has_transition() {
        return Err(Error::Config(
            "draws carry no transition coefficients (fixed A = I); nothing to project".into(),
        ));
    }
    let prep = prepare(&run.config, exec)?;
    let (m, k) = (draws.n_vars, draws.basis_size);
    let n = prep.phi.n_rows();
    let block_draws: Vec<&[f64]> = draws
        .chains
        .iter()
        .flat_map(|c| c.transition.as_ref().unwrap().iter().map(Vec::as_slice))
        .collect();

    let f = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let err = |e: csv::Error| Error::parse(output, e.to_string());
    w.write_record(["lat_deg", "lon_deg", "i", "j", "post_mean", "q025", "q975"]).map_err(err)?;
    for i in 0..m {
        for j in 0..m {
            let off = (i * m + j) * k;
            let projected = mvstdm::parallel::map_slice(exec, &block_draws, |d| project_transition_block(&prep.phi, &d[off..off + k]));
            let projected = projected.into_iter().collect::<Result<Vec<Vec<f64>>>>()?;
            for s in 0..n {
                let at_s: Vec<f64> = projected.iter().map(|p| p[s]).collect();
                let sm = summarize(&at_s)?;
                let loc = prep.full.locations[s];
                w.write_record([
                    loc.lat_deg().to_string(),
                    loc.lon_deg().to_string(),
                    draws.var_names[i].clone(),
                    draws.var_names[j].clone(),
                    sm.mean.to_string(),
                    sm.q025.to_string(),
                    sm.q975.to_string(),
                ])
                .map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(output, e))?;
    Ok(())
}

pub struct IngestOptions {
    pub target: LatLonGrid,
    pub mode: RegridMode,
    pub clim_years: std::ops::RangeInclusive<i32>,
}

/// Regrid every variable of a dataset, remove the monthly climatology and
/// write the standardized anomalies plus one climatology CSV per variable.
pub fn cmd_ingest(input: &Path, output: &Path, opts: &IngestOptions, exec: Exec) -> Result<()> {
    let series = read_dataset(input)?;
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut anomalies = Vec::with_capacity(series.len());
    for s in &series {
        let regridded = if s.grid == opts.target { s.clone() } else { regrid_average(s, opts.target, opts.mode, exec)? };
        let clim = compute_climatology(&regridded, opts.clim_years.clone())?;
        clim.write_csv(&output.join(format!("climatology_{}.csv", s.name)))?;
        anomalies.push(standardize_anomalies(&regridded, &clim)?);
        log::info!("{}: regridded to {}x{}", s.name, opts.target.n_lat, opts.target.n_lon);
    }
    write_dataset(output, &anomalies)
}
