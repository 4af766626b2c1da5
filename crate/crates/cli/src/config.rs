//! Declarative run configuration for `fit`, read from JSON and patched by flags.

use std::path::{Path, PathBuf};

use mvstdm::evaluate::HoldoutSpec;
use mvstdm::grid::expected_node_count;
use mvstdm::model::{ObservationTensor, Priors};
use mvstdm::parallel::Exec;
use mvstdm::sampler::{SamplerConfig, TransitionMode};
use mvstdm::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest icosahedral level accepted by `fit` (K = 2562).
pub const MAX_GRID_LEVEL: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Multivariate,
    Univariate { variable: String },
    /// Univariate with `A = I`.
    UnivariateRw { variable: String },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Multivariate => "multivariate",
            Mode::Univariate { .. } => "univariate",
            Mode::UnivariateRw { .. } => "univariate_rw",
        }
    }

    pub fn transition(&self) -> TransitionMode {
        match self {
            Mode::UnivariateRw { .. } => TransitionMode::FixedIdentity,
            _ => TransitionMode::Estimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    /// Expected number of variables; checked against the selection when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_vars: Option<usize>,
    pub grid_level: u32,
    pub kappa: f64,
    pub range_factor: f64,
    pub mode: Mode,
    /// Variables fitted in multivariate mode; all of them when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<String>>,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            n_vars: None,
            grid_level: 1,
            kappa: 2.0,
            range_factor: mvstdm::basis::DEFAULT_RANGE_FACTOR,
            mode: Mode::Multivariate,
            variables: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorBlock {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub lambda: f64,
    pub m0: f64,
    pub c0: f64,
}

impl Default for PriorBlock {
    fn default() -> Self {
        Self { a_sigma: 1.0, b_sigma: 1.0, a_tau: 1.0, b_tau: 1.0, lambda: 0.25, m0: 0.0, c0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerBlock {
    pub n_iter: usize,
    /// Defaults to a third of `n_iter`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub store_states: bool,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        Self { n_iter: 1500, burn_in: None, thin: 1, n_chains: 2, seed: 1, store_states: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory as written by `simulate` or `ingest`.
    pub data: PathBuf,
    /// Draw directory.
    pub output: PathBuf,
    /// Model name used in score tables; defaults to the mode name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub prior: PriorBlock,
    #[serde(default)]
    pub sampler: SamplerBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<HoldoutSpec>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run configuration: {e}")))
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.model.mode.name().to_string())
    }

    /// Every violated constraint, joined into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let m = &self.model;
        if m.grid_level > MAX_GRID_LEVEL {
            problems.push(format!(
                "grid_level {} exceeds {MAX_GRID_LEVEL} ({} nodes)",
                m.grid_level,
                expected_node_count(m.grid_level)
            ));
        }
        if !(m.kappa > 0.0 && m.kappa.is_finite()) {
            problems.push(format!("kappa must be positive, got {}", m.kappa));
        }
        if !(m.range_factor > 0.0 && m.range_factor.is_finite()) {
            problems.push(format!("range_factor must be positive, got {}", m.range_factor));
        }
        match (&m.mode, &m.variables) {
            (Mode::Multivariate, Some(v)) if v.is_empty() => problems.push("variables must not be empty".into()),
            (Mode::Multivariate, Some(v)) => {
                let mut sorted = v.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != v.len() {
                    problems.push("variables contain duplicates".into());
                }
            }
            (Mode::Univariate { .. } | Mode::UnivariateRw { .. }, Some(_)) => {
                problems.push("variables is only meaningful in multivariate mode".into())
            }
            _ => {}
        }
        if let (Some(n), Mode::Univariate { .. } | Mode::UnivariateRw { .. }) = (m.n_vars, &m.mode) {
            if n != 1 {
                problems.push(format!("univariate modes fit one variable, n_vars is {n}"));
            }
        }
        if m.n_vars == Some(0) {
            problems.push("n_vars must be positive".into());
        }
        let p = &self.prior;
        for (name, v) in [("a_sigma", p.a_sigma), ("b_sigma", p.b_sigma), ("a_tau", p.a_tau), ("b_tau", p.b_tau), ("lambda", p.lambda), ("c0", p.c0)] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("prior {name} must be positive, got {v}"));
            }
        }
        if !p.m0.is_finite() {
            problems.push("prior m0 must be finite".into());
        }
        if let Err(e) = self.sampler_config(Exec::Sequential).validate() {
            problems.push(e.to_string().trim_start_matches("invalid configuration: ").to_string());
        }
        if let Some(HoldoutSpec::RandomFraction { fraction, .. }) = &self.holdout {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                problems.push(format!("holdout fraction must be in (0, 1), got {fraction}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn sampler_config(&self, exec: Exec) -> SamplerConfig {
        let s = &self.sampler;
        let mut c = SamplerConfig::new(s.n_iter, s.seed);
        if let Some(b) = s.burn_in {
            c.burn_in = b;
        }
        c.thin = s.thin;
        c.n_chains = s.n_chains;
        c.store_states = s.store_states;
        c.exec = exec;
        c
    }

    pub fn priors(&self, state_dim: usize) -> Result<Priors> {
        let p = &self.prior;
        Priors::uniform(state_dim, p.m0, p.c0, p.a_sigma, p.b_sigma, p.a_tau, p.b_tau, p.lambda)
    }

    /// Indices of the fitted variables in `obs`.
    pub fn variable_indices(&self, obs: &ObservationTensor) -> Result<Vec<usize>> {
        let idx = match (&self.model.mode, &self.model.variables) {
            (Mode::Univariate { variable } | Mode::UnivariateRw { variable }, _) => vec![obs.var_index(variable)?],
            (Mode::Multivariate, Some(names)) => names.iter().map(|n| obs.var_index(n)).collect::<Result<_>>()?,
            (Mode::Multivariate, None) => (0..obs.n_vars()).collect(),
        };
        if let Some(n) = self.model.n_vars {
            if n != idx.len() {
                return Err(Error::Config(format!("n_vars is {n} but {} variables are selected", idx.len())));
            }
        }
        Ok(idx)
    }
}
