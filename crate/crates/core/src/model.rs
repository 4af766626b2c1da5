//! Parameter containers of the multivariate dynamic model and the operations
//! that only depend on them.
//!
//! Observations at time `t = 1..T` sit at tensor index `t - 1`; states are
//! stored for `t = 0..T`, so the state paired with tensor time `t` is
//! `alphas[t + 1]`. Within a stacked state vector, variable `i` occupies the
//! slice `i*K .. (i+1)*K`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GeoPoint;
use crate::sparse::SparseRealMatrix;

/// Calendar month tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    /// 1..=12
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Argument(format!("month must be in 1..=12, got {month}")));
        }
        Ok(Self { year, month })
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self { year: self.year + 1, month: 1 }
        } else {
            Self { year: self.year, month: self.month + 1 }
        }
    }

    /// `count` consecutive months starting at `self`.
    pub fn series(self, count: usize) -> Vec<Self> {
        std::iter::successors(Some(self), |m| Some(m.succ()))
            .take(count)
            .collect()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::Argument(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y.parse().map_err(|_| Error::Argument(format!("bad year in {s:?}")))?;
        let month = m.parse().map_err(|_| Error::Argument(format!("bad month in {s:?}")))?;
        Self::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The `M x M` array of length-`K` diagonals of the transition blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBlocks {
    m: usize,
    k: usize,
    values: Vec<f64>,
}

impl TransitionBlocks {
    pub fn from_fn(m: usize, k: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(Error::Argument("transition blocks need M >= 1 and K >= 1".into()));
        }
        let mut values = Vec::with_capacity(m * m * k);
        for i in 0..m {
            for j in 0..m {
                for kk in 0..k {
                    values.push(f(i, j, kk));
                }
            }
        }
        Self::from_vec(m, k, values)
    }

    /// Values laid out as `[(i * M + j) * K + k]`.
    pub fn from_vec(m: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || k == 0 || values.len() != m * m * k {
            return Err(Error::Argument(format!(
                "expected {} transition coefficients for M={m}, K={k}, got {}",
                m * m * k,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("transition coefficients must be finite".into()));
        }
        Ok(Self { m, k, values })
    }

    /// `A = I`: ones on own-lag blocks, zeros elsewhere.
    pub fn identity(m: usize, k: usize) -> Result<Self> {
        Self::from_fn(m, k, |i, j, _| if i == j { 1.0 } else { 0.0 })
    }

    pub fn n_vars(&self) -> usize {
        self.m
    }

    pub fn basis_size(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Diagonal of block `(i, j)`: the effect of variable `j` at `t-1` on variable `i` at `t`.
    pub fn block(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.m + j) * self.k;
        &self.values[start..start + self.k]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = (i * self.m + j) * self.k;
        &mut self.values[start..start + self.k]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `A x` for a stacked state vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (m, k) = (self.m, self.k);
        assert_eq!(x.len(), m * k, "state length mismatch");
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            let dst = &mut out[i * k..(i + 1) * k];
            for j in 0..m {
                let a = self.block(i, j);
                let src = &x[j * k..(j + 1) * k];
                for kk in 0..k {
                    dst[kk] += a[kk] * src[kk];
                }
            }
        }
        out
    }

    /// `A' x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let (m, k) = (self.m, self.k);
        assert_eq!(x.len(), m * k, "state length mismatch");
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            let src = &x[i * k..(i + 1) * k];
            for j in 0..m {
                let a = self.block(i, j);
                let dst = &mut out[j * k..(j + 1) * k];
                for kk in 0..k {
                    dst[kk] += a[kk] * src[kk];
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> TransitionBlocksJson {
        TransitionBlocksJson {
            m: self.m,
            k: self.k,
            blocks: (0..self.m)
                .map(|i| (0..self.m).map(|j| self.block(i, j).to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_json(json: &TransitionBlocksJson) -> Result<Self> {
        let (m, k) = (json.m, json.k);
        if json.blocks.len() != m || json.blocks.iter().any(|r| r.len() != m || r.iter().any(|b| b.len() != k)) {
            return Err(Error::Argument(format!("transition JSON blocks do not match M={m}, K={k}")));
        }
        Self::from_vec(m, k, json.blocks.iter().flatten().flatten().copied().collect())
    }
}

/// JSON layout `{M, K, blocks: [[[K reals] x M] x M]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionBlocksJson {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub blocks: Vec<Vec<Vec<f64>>>,
}

/// Sparse `MK x MK` transition matrix; block `(i, j)` is `diag(a_ij)`.
///
/// Every one of the `M^2 K` coefficients is kept structurally, zeros included.
pub fn assemble_transition(blocks: &TransitionBlocks) -> Result<SparseRealMatrix> {
    let (m, k) = (blocks.m, blocks.k);
    let rows = (0..m * k)
        .map(|row| {
            let (i, kk) = (row / k, row % k);
            (0..m).map(|j| (j * k + kk, blocks.block(i, j)[kk])).collect()
        })
        .collect();
    SparseRealMatrix::from_rows(m * k, rows)
}

/// Recover the blocks from an assembled transition matrix.
pub fn extract_transition(a: &SparseRealMatrix, m: usize) -> Result<TransitionBlocks> {
    if m == 0 || a.n_rows() != a.n_cols() || !a.n_rows().is_multiple_of(m) {
        return Err(Error::Alignment(format!(
            "a {}x{} matrix cannot hold {m} variable blocks",
            a.n_rows(),
            a.n_cols()
        )));
    }
    let k = a.n_rows() / m;
    TransitionBlocks::from_fn(m, k, |i, j, kk| a.get(i * k + kk, j * k + kk))
}

/// Measurement variances `sigma2[t][i]` and innovation scales `tau2[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceParams {
    n_times: usize,
    n_vars: usize,
    sigma2: Vec<f64>,
    tau2: Vec<f64>,
}

impl VarianceParams {
    /// `sigma2` laid out as `[t * M + i]`.
    pub fn new(n_times: usize, sigma2: Vec<f64>, tau2: Vec<f64>) -> Result<Self> {
        let n_vars = tau2.len();
        if n_vars == 0 || sigma2.len() != n_times * n_vars {
            return Err(Error::Argument(format!(
                "expected {} sigma2 values for T={n_times}, M={n_vars}, got {}",
                n_times * n_vars,
                sigma2.len()
            )));
        }
        if let Some(v) = sigma2.iter().chain(&tau2).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("variances must be positive, got {v}")));
        }
        Ok(Self { n_times, n_vars, sigma2, tau2 })
    }

    pub fn constant(n_times: usize, n_vars: usize, sigma2: f64, tau2: f64) -> Result<Self> {
        Self::new(n_times, vec![sigma2; n_times * n_vars], vec![tau2; n_vars])
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn sigma2(&self, t: usize, i: usize) -> f64 {
        self.sigma2[t * self.n_vars + i]
    }

    pub fn sigma2_slice(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn tau2(&self) -> &[f64] {
        &self.tau2
    }
}

/// Conjugate prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Prior mean of the initial state, length `MK`.
    pub m0: Vec<f64>,
    /// Diagonal of the prior covariance of the initial state, length `MK`.
    pub c0_diag: Vec<f64>,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    /// Prior variance of every transition coefficient.
    pub lambda: f64,
}

impl Priors {
    /// Scalar `m0` and `C0 = c0 * I` replicated to length `state_dim`.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        state_dim: usize,
        m0: f64,
        c0: f64,
        a_sigma: f64,
        b_sigma: f64,
        a_tau: f64,
        b_tau: f64,
        lambda: f64,
    ) -> Result<Self> {
        let p = Self {
            m0: vec![m0; state_dim],
            c0_diag: vec![c0; state_dim],
            a_sigma,
            b_sigma,
            a_tau,
            b_tau,
            lambda,
        };
        p.validate(state_dim)?;
        Ok(p)
    }

    /// The settings used throughout the simulation study and application:
    /// `m0 = 0`, `C0 = I`, `a = b = 1` for both variance families, `lambda = 1/4`.
    pub fn standard(state_dim: usize) -> Self {
        Self::uniform(state_dim, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.25).expect("valid defaults")
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.m0.len() != state_dim || self.c0_diag.len() != state_dim {
            return Err(Error::Config(format!(
                "prior m0/C0 must have length {state_dim}, got {}/{}",
                self.m0.len(),
                self.c0_diag.len()
            )));
        }
        if self.m0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("prior mean m0 must be finite".into()));
        }
        if self.c0_diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("prior C0 diagonal must be positive".into()));
        }
        for (name, v) in [
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// States `alpha_0, ..., alpha_T`, each stacked over variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub alphas: Vec<DVector<f64>>,
}

impl StateSequence {
    pub fn new(alphas: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = alphas.first() else {
            return Err(Error::Argument("state sequence must hold at least alpha_0".into()));
        };
        let dim = first.len();
        if alphas.iter().any(|a| a.len() != dim || a.iter().any(|v| !v.is_finite())) {
            return Err(Error::Argument("states must share a length and be finite".into()));
        }
        Ok(Self { alphas })
    }

    /// Number of observation times `T` (states minus one).
    pub fn n_times(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.alphas[0].len()
    }

    /// Part of `alpha_t` that belongs to variable `i`.
    pub fn var_slice(&self, t: usize, i: usize, k: usize) -> &[f64] {
        &self.alphas[t].as_slice()[i * k..(i + 1) * k]
    }
}

/// `T x M x N` gridded values with an observed/missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTensor {
    n_times: usize,
    n_vars: usize,
    n_locs: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    pub locations: Vec<GeoPoint>,
    pub time_labels: Vec<YearMonth>,
    pub var_names: Vec<String>,
}

impl ObservationTensor {
    /// `values` and `mask` are laid out as `[(t * M + i) * N + s]`.
    pub fn new(
        n_vars: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
        locations: Vec<GeoPoint>,
        time_labels: Vec<YearMonth>,
        var_names: Vec<String>,
    ) -> Result<Self> {
        let (n_times, n_locs) = (time_labels.len(), locations.len());
        if n_times == 0 || n_vars == 0 || n_locs == 0 {
            return Err(Error::Argument("observation tensor dimensions must be positive".into()));
        }
        let len = n_times * n_vars * n_locs;
        if values.len() != len || mask.len() != len {
            return Err(Error::Alignment(format!(
                "expected {len} values and mask entries, got {} and {}",
                values.len(),
                mask.len()
            )));
        }
        if var_names.len() != n_vars {
            return Err(Error::Alignment(format!(
                "{} variable names for {n_vars} variables",
                var_names.len()
            )));
        }
        if let Some(p) = (0..len).find(|&p| mask[p] && !values[p].is_finite()) {
            return Err(Error::Argument(format!("observed value at flat index {p} is not finite")));
        }
        Ok(Self {
            n_times,
            n_vars,
            n_locs,
            values,
            mask,
            locations,
            time_labels,
            var_names,
        })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_locs(&self) -> usize {
        self.n_locs
    }

    #[inline]
    pub fn index(&self, t: usize, i: usize, s: usize) -> usize {
        (t * self.n_vars + i) * self.n_locs + s
    }

    /// The observed value, or `None` when masked.
    #[inline]
    pub fn get(&self, t: usize, i: usize, s: usize) -> Option<f64> {
        let p = self.index(t, i, s);
        self.mask[p].then_some(self.values[p])
    }

    /// Raw stored value regardless of the mask (truth for held-out scoring).
    pub fn raw(&self, t: usize, i: usize, s: usize) -> f64 {
        self.values[self.index(t, i, s)]
    }

    pub fn is_observed(&self, t: usize, i: usize, s: usize) -> bool {
        self.mask[self.index(t, i, s)]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Observed `(location, value)` pairs for variable `i` at time `t`.
    pub fn observed(&self, t: usize, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let base = self.index(t, i, 0);
        (0..self.n_locs).filter(move |&s| self.mask[base + s]).map(move |s| (s, self.values[base + s]))
    }

    pub fn fully_observed(&self, t: usize, i: usize) -> bool {
        let base = self.index(t, i, 0);
        self.mask[base..base + self.n_locs].iter().all(|&m| m)
    }

    /// Copy with every entry flagged in `hide` (same layout) marked missing.
    pub fn with_hidden(&self, hide: &[bool]) -> Result<Self> {
        if hide.len() != self.mask.len() {
            return Err(Error::Alignment("hold-out mask does not match the tensor".into()));
        }
        let mut out = self.clone();
        for (m, &h) in out.mask.iter_mut().zip(hide) {
            *m = *m && !h;
        }
        Ok(out)
    }

    /// Restrict to a subset of variables, in the given order.
    pub fn select_vars(&self, vars: &[usize]) -> Result<Self> {
        if vars.is_empty() || vars.iter().any(|&v| v >= self.n_vars) {
            return Err(Error::Argument(format!("invalid variable selection {vars:?}")));
        }
        let mut values = Vec::with_capacity(self.n_times * vars.len() * self.n_locs);
        let mut mask = Vec::with_capacity(values.capacity());
        for t in 0..self.n_times {
            for &i in vars {
                let base = self.index(t, i, 0);
                values.extend_from_slice(&self.values[base..base + self.n_locs]);
                mask.extend_from_slice(&self.mask[base..base + self.n_locs]);
            }
        }
        Self::new(
            vars.len(),
            values,
            mask,
            self.locations.clone(),
            self.time_labels.clone(),
            vars.iter().map(|&v| self.var_names[v].clone()).collect(),
        )
    }

    /// Restrict to a contiguous range of times.
    pub fn select_time(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.n_times {
            return Err(Error::Argument(format!("invalid time range {range:?} for {} times", self.n_times)));
        }
        let (lo, hi) = (self.index(range.start, 0, 0), self.index(range.end, 0, 0));
        Self::new(
            self.n_vars,
            self.values[lo..hi].to_vec(),
            self.mask[lo..hi].to_vec(),
            self.locations.clone(),
            self.time_labels[range].to_vec(),
            self.var_names.clone(),
        )
    }

    pub fn var_index(&self, name: &str) -> Result<usize> {
        self.var_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown variable {name:?}; have {:?}", self.var_names)))
    }
}

/// `Phi a` divided elementwise by `Phi 1`: the basis-weighted average of the
/// coefficients at every observation location.
pub fn project_transition_block(phi: &SparseRealMatrix, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != phi.n_cols() {
        return Err(Error::Alignment(format!(
            "coefficient vector has length {}, basis has {} columns",
            a.len(),
            phi.n_cols()
        )));
    }
    let num = phi.mul_vec(a);
    let den = phi.mul_vec(&vec![1.0; phi.n_cols()]);
    num.iter()
        .zip(&den)
        .enumerate()
        .map(|(s, (n, d))| {
            if *d == 0.0 {
                Err(Error::Domain(format!(
                    "basis row for location {s} sums to zero; cannot rescale the projection"
                )))
            } else {
                Ok(n / d)
            }
        })
        .collect()
}

/// Unscaled projection `Phi a`.
pub fn projection_numerator(phi: &SparseRealMatrix, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != phi.n_cols() {
        return Err(Error::Alignment("coefficient vector does not match the basis".into()));
    }
    Ok(phi.mul_vec(a))
}

/// Gaussian log-density of the observed entries given the states.
///
/// `sigma2[t * M + i]` is the measurement variance of variable `i` at tensor time `t`.
pub fn log_likelihood(
    obs: &ObservationTensor,
    states: &StateSequence,
    phi: &SparseRealMatrix,
    sigma2: &[f64],
) -> Result<f64> {
    let (t_n, m, k) = (obs.n_times(), obs.n_vars(), phi.n_cols());
    if states.n_times() != t_n || states.state_dim() != m * k || sigma2.len() != t_n * m {
        return Err(Error::Alignment("log-likelihood inputs have inconsistent dimensions".into()));
    }
    if phi.n_rows() != obs.n_locs() {
        return Err(Error::Alignment("basis rows do not match the observation locations".into()));
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for t in 0..t_n {
        for i in 0..m {
            let v = sigma2[t * m + i];
            if !(v > 0.0) {
                return Err(Error::Domain(format!("sigma2 at (t={t}, i={i}) is {v}")));
            }
            let mut count = 0usize;
            let mut ss = 0.0;
            let alpha = states.var_slice(t + 1, i, k);
            for (s, y) in obs.observed(t, i) {
                let (cols, vals) = phi.row(s);
                let mean: f64 = cols.iter().zip(vals).map(|(&c, &w)| w * alpha[c]).sum();
                ss += (y - mean).powi(2);
                count += 1;
            }
            total += -0.5 * (count as f64) * (ln2pi + v.ln()) - 0.5 * ss / v;
        }
    }
    Ok(total)
}
