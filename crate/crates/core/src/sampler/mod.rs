//! Gibbs sampler for the multivariate spatio-temporal dynamic model.
//!
//! One iteration updates, in order: the innovation scales `tau2`, the
//! measurement variances `sigma2`, the transition coefficients, and the
//! basis coefficients (by FFBS). Chains start from `sigma2 = tau2 = 1`,
//! `A = I` and standard-normal states.

pub mod conjugate;
pub mod ffbs;
pub mod io;
pub mod transition;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_likelihood, ObservationTensor, Priors, StateSequence, TransitionBlocks, YearMonth};
use crate::parallel::{map_range, Exec};
use crate::rng::{fill_std_normal, stream_rng};
use crate::sparse::SparseRealMatrix;

pub use conjugate::{sample_sigma2, sample_tau2, sigma2_posterior, tau2_posterior, InvGammaParams};
pub use ffbs::{ffbs, forward_filter, FilterOutput};
pub use transition::{sample_transition, transition_posterior, RowPosterior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub store_states: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl SamplerConfig {
    /// `burn_in = n_iter / 3`, `thin = 1`, one chain.
    pub fn new(n_iter: usize, seed: u64) -> Self {
        Self {
            n_iter,
            burn_in: n_iter / 3,
            thin: 1,
            seed,
            n_chains: 1,
            store_states: false,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be positive".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be positive".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be positive".into()));
        }
        Ok(())
    }

    /// Number of draws each chain keeps.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMode {
    /// Sample the transition blocks.
    Estimate,
    /// Keep `A = I` (random-walk evolution).
    FixedIdentity,
}

/// Structural pieces of the model that stay fixed during sampling.
#[derive(Debug, Clone)]
pub struct DynamicModel {
    /// `N x K` basis matrix.
    pub phi: SparseRealMatrix,
    /// `B'B` for the SAR matrix `B`.
    pub sar_gram: SparseRealMatrix,
    pub sar_gram_dense: DMatrix<f64>,
    /// `Phi' Phi`, used whenever a variable is fully observed at a time.
    pub phi_gram: DMatrix<f64>,
    pub n_vars: usize,
    pub mode: TransitionMode,
}

impl DynamicModel {
    pub fn new(phi: SparseRealMatrix, sar_gram: SparseRealMatrix, n_vars: usize, mode: TransitionMode) -> Result<Self> {
        let k = phi.n_cols();
        if sar_gram.n_rows() != k || sar_gram.n_cols() != k {
            return Err(Error::Alignment(format!(
                "SAR matrix is {}x{}, basis has {k} columns",
                sar_gram.n_rows(),
                sar_gram.n_cols()
            )));
        }
        if n_vars == 0 {
            return Err(Error::Argument("model needs at least one variable".into()));
        }
        Ok(Self {
            sar_gram_dense: sar_gram.to_dense(),
            phi_gram: phi.gram().to_dense(),
            phi,
            sar_gram,
            n_vars,
            mode,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.phi.n_cols()
    }

    pub fn state_dim(&self) -> usize {
        self.n_vars * self.basis_size()
    }
}

/// Retained draws of one chain. Each inner vector is one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    /// 1-based iteration numbers of the retained draws.
    pub iterations: Vec<usize>,
    /// `[i]`
    pub tau2: Vec<Vec<f64>>,
    /// `[t * M + i]`
    pub sigma2: Vec<Vec<f64>>,
    /// `TransitionBlocks` layout `[(i * M + j) * K + k]`; absent with a fixed transition.
    pub transition: Option<Vec<Vec<f64>>>,
    /// `alpha_0 .. alpha_T` concatenated; present when states are stored.
    pub states: Option<Vec<Vec<f64>>>,
    pub loglik: Vec<f64>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

/// Draws of all chains plus the dimensions needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub n_vars: usize,
    pub n_times: usize,
    pub basis_size: usize,
    pub var_names: Vec<String>,
    pub time_labels: Vec<YearMonth>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    pub fn has_transition(&self) -> bool {
        self.chains.iter().all(|c| c.transition.is_some())
    }

    pub fn has_states(&self) -> bool {
        self.chains.iter().all(|c| c.states.is_some())
    }

    /// Draws of `tau2_i`, one vector per chain.
    pub fn tau2_by_chain(&self, i: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.tau2.iter().map(|d| d[i]).collect()).collect()
    }

    pub fn tau2(&self, i: usize) -> Vec<f64> {
        self.tau2_by_chain(i).concat()
    }

    pub fn sigma2(&self, t: usize, i: usize) -> Vec<f64> {
        let idx = t * self.n_vars + i;
        self.chains.iter().flat_map(|c| c.sigma2.iter().map(move |d| d[idx])).collect()
    }

    /// Draws of `A~_ij[k]`; empty without sampled transitions.
    pub fn transition(&self, i: usize, j: usize, k: usize) -> Vec<f64> {
        let idx = (i * self.n_vars + j) * self.basis_size + k;
        self.chains
            .iter()
            .filter_map(|c| c.transition.as_ref())
            .flat_map(|tr| tr.iter().map(move |d| d[idx]))
            .collect()
    }

    /// Posterior mean of the transition blocks.
    pub fn transition_mean(&self) -> Result<TransitionBlocks> {
        if !self.has_transition() || self.n_draws() == 0 {
            return Err(Error::Config("draws do not contain transition coefficients".into()));
        }
        let len = self.n_vars * self.n_vars * self.basis_size;
        let mut mean = vec![0.0; len];
        for d in self.chains.iter().flat_map(|c| c.transition.as_ref().unwrap()) {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        let n = self.n_draws() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        TransitionBlocks::from_vec(self.n_vars, self.basis_size, mean)
    }

    /// Stored state vectors of one draw as `alpha_0 .. alpha_T`.
    pub fn state_sequence(&self, chain: usize, draw: usize) -> Result<StateSequence> {
        let states = self.chains[chain]
            .states
            .as_ref()
            .ok_or_else(|| Error::Config("states were not stored; rerun with store_states".into()))?;
        let dim = self.n_vars * self.basis_size;
        StateSequence::new(states[draw].chunks(dim).map(DVector::from_column_slice).collect())
    }
}

fn with_context(err: Error, ctx: &str) -> Error {
    match err {
        Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
        Error::Argument(m) => Error::Argument(format!("{ctx}: {m}")),
        Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
        Error::Alignment(m) => Error::Alignment(format!("{ctx}: {m}")),
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Run one chain on RNG stream `chain` of `config.seed`.
pub fn run_chain(
    model: &DynamicModel,
    obs: &ObservationTensor,
    priors: &Priors,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainDraws> {
    config.validate()?;
    let (t_n, m, k) = (obs.n_times(), obs.n_vars(), model.basis_size());
    if m != model.n_vars {
        return Err(Error::Alignment(format!("model has {} variables, data has {m}", model.n_vars)));
    }
    if model.phi.n_rows() != obs.n_locs() {
        return Err(Error::Alignment("basis rows do not match the observation locations".into()));
    }
    priors.validate(m * k)?;
    let exec = config.exec;
    let mut rng = stream_rng(config.seed, chain as u64);

    let mut tau2 = vec![1.0; m];
    let mut sigma2 = vec![1.0; t_n * m];
    let mut blocks = TransitionBlocks::identity(m, k)?;
    let mut states = StateSequence::new(
        (0..=t_n)
            .map(|_| {
                let mut v = vec![0.0; m * k];
                fill_std_normal(&mut rng, &mut v);
                DVector::from_vec(v)
            })
            .collect(),
    )?;
    let estimate = model.mode == TransitionMode::Estimate;
    if estimate && t_n < 2 {
        log::warn!("chain {chain}: fewer than 2 observation times, transition held at the identity");
    }

    let keep = config.retained();
    let mut out = ChainDraws {
        chain,
        iterations: Vec::with_capacity(keep),
        tau2: Vec::with_capacity(keep),
        sigma2: Vec::with_capacity(keep),
        transition: estimate.then(|| Vec::with_capacity(keep)),
        states: config.store_states.then(|| Vec::with_capacity(keep)),
        loglik: Vec::with_capacity(keep),
    };

    for iter in 1..=config.n_iter {
        let step = || -> Result<()> {
            tau2 = sample_tau2(&states, &blocks, &model.sar_gram, priors, exec, &mut rng)?;
            sigma2 = sample_sigma2(obs, &states, &model.phi, priors, exec, &mut rng)?;
            if estimate && t_n >= 2 {
                blocks = sample_transition(&states, &model.sar_gram, &tau2, priors, exec, &mut rng)?;
            }
            states = ffbs(model, obs, &blocks, &tau2, &sigma2, priors, exec, &mut rng)?;
            Ok(())
        };
        let mut step = step;
        step().map_err(|e| with_context(e, &format!("chain {chain}, iteration {iter}")))?;

        if iter > config.burn_in && (iter - config.burn_in - 1).is_multiple_of(config.thin) {
            out.iterations.push(iter);
            out.tau2.push(tau2.clone());
            out.sigma2.push(sigma2.clone());
            if let Some(tr) = out.transition.as_mut() {
                tr.push(blocks.as_slice().to_vec());
            }
            if let Some(st) = out.states.as_mut() {
                st.push(states.alphas.iter().flat_map(|a| a.iter().copied()).collect());
            }
            out.loglik.push(log_likelihood(obs, &states, &model.phi, &sigma2)?);
        }
        if iter % 10 == 0 {
            log::info!("chain {chain}: iteration {iter}/{}", config.n_iter);
        }
    }
    Ok(out)
}

/// Wall-clock seconds spent in each chain.
pub type ChainTimings = Vec<f64>;

/// Run `config.n_chains` chains, concurrently when the policy allows.
pub fn run_chains(
    model: &DynamicModel,
    obs: &ObservationTensor,
    priors: &Priors,
    config: &SamplerConfig,
) -> Result<(PosteriorDraws, ChainTimings)> {
    config.validate()?;
    let results = map_range(config.exec, config.n_chains, |c| {
        let start = Instant::now();
        let r = run_chain(model, obs, priors, config, c);
        (r, start.elapsed().as_secs_f64())
    });
    let mut chains = Vec::with_capacity(config.n_chains);
    let mut timings = Vec::with_capacity(config.n_chains);
    let mut failures = Vec::new();
    for (c, (r, secs)) in results.into_iter().enumerate() {
        match r {
            Ok(d) => chains.push(d),
            Err(e) => failures.push((c, e)),
        }
        timings.push(secs);
    }
    if let Some((_, first)) = failures.first() {
        let detail: Vec<String> = failures.iter().map(|(c, e)| format!("chain {c}: {e}")).collect();
        let msg = detail.join("; ");
        return Err(match first {
            Error::Numerical(_) => Error::Numerical(msg),
            Error::Config(_) => Error::Config(msg),
            Error::Alignment(_) => Error::Alignment(msg),
            _ => Error::Argument(msg),
        });
    }
    Ok((
        PosteriorDraws {
            n_vars: obs.n_vars(),
            n_times: obs.n_times(),
            basis_size: model.basis_size(),
            var_names: obs.var_names.clone(),
            time_labels: obs.time_labels.clone(),
            chains,
        },
        timings,
    ))
}
