//! Synthetic datasets drawn from the dynamic model itself.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis_matrix_with, build_sar_matrix, BasisSpec, DEFAULT_RANGE_FACTOR};
use crate::error::{Error, Result};
use crate::grid::{build_icosahedral_grid, BasisGrid};
use crate::ingest::{read_json, series_from_tensor, write_dataset, write_json, LatLonGrid};
use crate::model::{ObservationTensor, StateSequence, TransitionBlocks, TransitionBlocksJson, YearMonth};
use crate::parallel::Exec;
use crate::rng::{fill_std_normal, stream_rng};
use crate::sparse::{SparseCholesky, SparseRealMatrix};

pub const TRUTH_FILE: &str = "truth.json";

/// Measurement variances: one value everywhere, or one per `(t, i)` as `[t * M + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Constant(f64),
    PerTime(Vec<f64>),
}

impl SigmaSpec {
    pub fn expand(&self, n_times: usize, n_vars: usize) -> Result<Vec<f64>> {
        let v = match self {
            SigmaSpec::Constant(s) => vec![*s; n_times * n_vars],
            SigmaSpec::PerTime(v) => {
                if v.len() != n_times * n_vars {
                    return Err(Error::Config(format!(
                        "sigma2 needs {} entries, got {}",
                        n_times * n_vars,
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if v.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub grid_level: u32,
    /// Observation locations are the cell centres of this grid.
    pub obs_grid: LatLonGrid,
    pub n_times: usize,
    pub var_names: Vec<String>,
    pub tau2: Vec<f64>,
    pub sigma2: SigmaSpec,
    pub kappa: f64,
    pub range_factor: f64,
    pub transition: TransitionBlocks,
    pub burn_in_steps: usize,
    pub seed: u64,
    pub start: YearMonth,
}

impl SimSpec {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let m = self.n_vars();
        if m == 0 {
            return Err(Error::Config("simulation needs at least one variable".into()));
        }
        if self.n_times == 0 {
            return Err(Error::Config("simulation needs at least one time point".into()));
        }
        if self.tau2.len() != m || self.tau2.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config(format!("tau2 must hold {m} positive values")));
        }
        self.sigma2.expand(self.n_times, m)?;
        if self.transition.n_vars() != m || self.transition.basis_size() != k {
            return Err(Error::Config(format!(
                "transition is {}x{} blocks of size {}, need {m}x{m} of size {k}",
                self.transition.n_vars(),
                self.transition.n_vars(),
                self.transition.basis_size()
            )));
        }
        if !(self.kappa > 0.0) || !(self.range_factor > 0.0) {
            return Err(Error::Config("kappa and range_factor must be positive".into()));
        }
        Ok(())
    }
}

/// The three-variable design of the simulation study, evaluated on `grid`.
pub fn build_study_transition(grid: &BasisGrid) -> TransitionBlocks {
    let lats: Vec<f64> = grid.centers().iter().map(|c| c.lat_deg()).collect();
    TransitionBlocks::from_fn(3, grid.len(), |i, j, k| {
        let lat = lats[k];
        match (i, j) {
            (0, 0) => 0.8,
            (1, 1) | (2, 2) => 0.6,
            (0, 1) | (0, 2) => 0.0,
            (1, 0) | (2, 1) => -0.2,
            (2, 0) => 0.4 * (1.0 - (lat / 90.0).abs().sqrt()),
            (1, 2) => 0.3 * (lat / 90.0),
            _ => unreachable!(),
        }
    })
    .expect("three variables and a non-empty grid")
}

fn preset(level: u32, obs_grid: LatLonGrid, n_times: usize, seed: u64) -> Result<SimSpec> {
    let grid = build_icosahedral_grid(level)?;
    Ok(SimSpec {
        grid_level: level,
        obs_grid,
        n_times,
        var_names: vec!["Y1".into(), "Y2".into(), "Y3".into()],
        tau2: vec![5.0; 3],
        sigma2: SigmaSpec::Constant(2.0),
        kappa: 2.0,
        range_factor: DEFAULT_RANGE_FACTOR,
        transition: build_study_transition(&grid),
        burn_in_steps: 100,
        seed,
        start: YearMonth::new(1984, 1)?,
    })
}

/// Full-size study: K = 42, a 24 x 48 observation grid, T = 144.
pub fn study_spec(seed: u64) -> Result<SimSpec> {
    preset(1, LatLonGrid::new(24, 48)?, 144, seed)
}

/// Desk-scale version: K = 12, a 12 x 24 grid, T = 60.
pub fn reduced_spec(seed: u64) -> Result<SimSpec> {
    preset(0, LatLonGrid::new(12, 24)?, 60, seed)
}

/// `eta ~ N(0, tau2 (B'B)^{-1})` by solving `L' x = z` with `L L' = B'B`.
pub fn draw_innovation<R: Rng + ?Sized>(chol: &SparseCholesky, tau2: f64, rng: &mut R) -> Vec<f64> {
    let mut z = vec![0.0; chol.dim()];
    fill_std_normal(rng, &mut z);
    chol.solve_upper_in_place(&mut z);
    let s = tau2.sqrt();
    z.iter_mut().for_each(|v| *v *= s);
    z
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub obs: ObservationTensor,
    /// `alpha_0 .. alpha_T` after burn-in.
    pub states: StateSequence,
    pub grid: BasisGrid,
    pub phi: SparseRealMatrix,
    pub sigma2: Vec<f64>,
}

pub fn simulate_dataset(spec: &SimSpec) -> Result<SimOutput> {
    simulate_with_rng(spec, &mut stream_rng(spec.seed, 0))
}

pub fn simulate_with_rng<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SimOutput> {
    let grid = build_icosahedral_grid(spec.grid_level)?;
    let k = grid.len();
    spec.validate(k)?;
    let (m, t_n) = (spec.n_vars(), spec.n_times);
    let sigma2 = spec.sigma2.expand(t_n, m)?;
    if spec.transition.max_abs() >= 1.0 {
        log::warn!(
            "transition has an entry of magnitude {} >= 1; the process may be explosive",
            spec.transition.max_abs()
        );
    }
    let locations = spec.obs_grid.locations();
    let mut bspec = BasisSpec::new(&grid, &locations);
    bspec.range_factor = spec.range_factor;
    let phi = build_basis_matrix_with(&bspec, Exec::default())?;
    let gram = build_sar_matrix(&grid, spec.kappa)?.gram();
    let chol = SparseCholesky::factor(&gram)?;

    let total = spec.burn_in_steps + t_n + 1;
    let mut alpha = vec![0.0; m * k];
    fill_std_normal(rng, &mut alpha);
    let mut kept = Vec::with_capacity(t_n + 1);
    for step in 0..total {
        if step > 0 {
            let mut next = spec.transition.apply(&alpha);
            for i in 0..m {
                let eta = draw_innovation(&chol, spec.tau2[i], rng);
                for (a, e) in next[i * k..(i + 1) * k].iter_mut().zip(&eta) {
                    *a += e;
                }
            }
            alpha = next;
        }
        if step >= spec.burn_in_steps {
            kept.push(DVector::from_column_slice(&alpha));
        }
    }
    let states = StateSequence::new(kept)?;

    let n = locations.len();
    let mut values = Vec::with_capacity(t_n * m * n);
    let mut noise = vec![0.0; n];
    for t in 0..t_n {
        for i in 0..m {
            let mean = phi.mul_vec(states.var_slice(t + 1, i, k));
            fill_std_normal(rng, &mut noise);
            let sd = sigma2[t * m + i].sqrt();
            values.extend(mean.iter().zip(&noise).map(|(mu, z)| mu + sd * z));
        }
    }
    let obs = ObservationTensor::new(
        m,
        values,
        vec![true; t_n * m * n],
        locations,
        spec.start.series(t_n),
        spec.var_names.clone(),
    )?;
    Ok(SimOutput { obs, states, grid, phi, sigma2 })
}

/// True parameters written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub grid_level: u32,
    pub obs_grid: LatLonGrid,
    pub kappa: f64,
    pub range_factor: f64,
    pub burn_in_steps: usize,
    pub seed: u64,
    pub var_names: Vec<String>,
    pub tau2: Vec<f64>,
    /// `[t * M + i]`
    pub sigma2: Vec<f64>,
    pub transition: TransitionBlocksJson,
    /// `alpha_0 .. alpha_T`
    pub states: Vec<Vec<f64>>,
}

impl SimTruth {
    pub fn new(spec: &SimSpec, out: &SimOutput) -> Self {
        Self {
            grid_level: spec.grid_level,
            obs_grid: spec.obs_grid,
            kappa: spec.kappa,
            range_factor: spec.range_factor,
            burn_in_steps: spec.burn_in_steps,
            seed: spec.seed,
            var_names: spec.var_names.clone(),
            tau2: spec.tau2.clone(),
            sigma2: out.sigma2.clone(),
            transition: spec.transition.to_json(),
            states: out.states.alphas.iter().map(|a| a.as_slice().to_vec()).collect(),
        }
    }
}

/// Dataset CSVs plus `truth.json`.
pub fn write_simulation(dir: &Path, spec: &SimSpec, out: &SimOutput) -> Result<()> {
    write_dataset(dir, &series_from_tensor(&out.obs, spec.obs_grid)?)?;
    write_json(&dir.join(TRUTH_FILE), &SimTruth::new(spec, out))
}

pub fn read_truth(dir: &Path) -> Result<SimTruth> {
    read_json(&dir.join(TRUTH_FILE))
}
