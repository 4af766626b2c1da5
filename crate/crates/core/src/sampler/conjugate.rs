//! Inverse-gamma full conditionals for the innovation scales and the
//! measurement variances.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ObservationTensor, Priors, StateSequence, TransitionBlocks};
use crate::parallel::{map_range, Exec};
use crate::rng::inverse_gamma;
use crate::sparse::SparseRealMatrix;

/// Shape and rate of an inverse-gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaParams {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        inverse_gamma(rng, self.shape, self.rate)
    }
}

/// Per-variable posterior of `tau2_i`:
/// `IG(a_tau + K T / 2, b_tau + 1/2 sum_t eta_t' B'B eta_t)` with
/// `eta_t = alpha_t - A alpha_{t-1}` restricted to variable `i`.
pub fn tau2_posterior(
    states: &StateSequence,
    blocks: &TransitionBlocks,
    sar_gram: &SparseRealMatrix,
    priors: &Priors,
    exec: Exec,
) -> Result<Vec<InvGammaParams>> {
    let (m, k) = (blocks.n_vars(), blocks.basis_size());
    let t_n = states.n_times();
    if t_n == 0 {
        return Err(Error::Argument("tau2 update needs at least one transition".into()));
    }
    if states.state_dim() != m * k || sar_gram.n_rows() != k {
        return Err(Error::Alignment("tau2 update: state, transition and SAR sizes disagree".into()));
    }
    // quads[t - 1][i] = eta_t^(i)' B'B eta_t^(i)
    let quads = map_range(exec, t_n, |t0| {
        let t = t0 + 1;
        let pred = blocks.apply(states.alphas[t - 1].as_slice());
        let eta: Vec<f64> = states.alphas[t].iter().zip(&pred).map(|(a, p)| a - p).collect();
        (0..m)
            .map(|i| sar_gram.quad_form(&eta[i * k..(i + 1) * k]))
            .collect::<Vec<f64>>()
    });
    let shape = priors.a_tau + (k * t_n) as f64 / 2.0;
    Ok((0..m)
        .map(|i| InvGammaParams {
            shape,
            rate: priors.b_tau + 0.5 * quads.iter().map(|q| q[i]).sum::<f64>(),
        })
        .collect())
}

pub fn sample_tau2<R: Rng + ?Sized>(
    states: &StateSequence,
    blocks: &TransitionBlocks,
    sar_gram: &SparseRealMatrix,
    priors: &Priors,
    exec: Exec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    tau2_posterior(states, blocks, sar_gram, priors, exec)?
        .iter()
        .map(|p| p.draw(rng))
        .collect()
}

/// Per `(t, i)` posterior of `sigma2_it`, laid out as `[t * M + i]`.
///
/// Only unmasked entries contribute: the shape grows by half the number of
/// observed locations and the rate by half their squared residuals.
pub fn sigma2_posterior(
    obs: &ObservationTensor,
    states: &StateSequence,
    phi: &SparseRealMatrix,
    priors: &Priors,
    exec: Exec,
) -> Result<Vec<InvGammaParams>> {
    let (t_n, m, k) = (obs.n_times(), obs.n_vars(), phi.n_cols());
    if states.n_times() != t_n || states.state_dim() != m * k || phi.n_rows() != obs.n_locs() {
        return Err(Error::Alignment("sigma2 update: observation, state and basis sizes disagree".into()));
    }
    Ok(map_range(exec, t_n * m, |idx| {
        let (t, i) = (idx / m, idx % m);
        let alpha = states.var_slice(t + 1, i, k);
        let mut n_obs = 0usize;
        let mut ss = 0.0;
        for (s, y) in obs.observed(t, i) {
            let (cols, vals) = phi.row(s);
            let fit: f64 = cols.iter().zip(vals).map(|(&c, &w)| w * alpha[c]).sum();
            ss += (y - fit) * (y - fit);
            n_obs += 1;
        }
        InvGammaParams {
            shape: priors.a_sigma + n_obs as f64 / 2.0,
            rate: priors.b_sigma + 0.5 * ss,
        }
    }))
}

pub fn sample_sigma2<R: Rng + ?Sized>(
    obs: &ObservationTensor,
    states: &StateSequence,
    phi: &SparseRealMatrix,
    priors: &Priors,
    exec: Exec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    sigma2_posterior(obs, states, phi, priors, exec)?
        .iter()
        .map(|p| p.draw(rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoPoint;
    use crate::model::YearMonth;
    use crate::rng::stream_rng;
    use nalgebra::DVector;

    fn zero_states(t_n: usize, dim: usize) -> StateSequence {
        StateSequence::new(vec![DVector::zeros(dim); t_n + 1]).unwrap()
    }

    #[test]
    fn tau2_shape_from_dimensions() {
        // K = 42, T = 144, a_tau = 1 -> 1 + 42 * 144 / 2 = 3025
        let k = 42;
        let gram = SparseRealMatrix::identity(k).unwrap();
        let blocks = TransitionBlocks::identity(1, k).unwrap();
        let post = tau2_posterior(&zero_states(144, k), &blocks, &gram, &Priors::standard(k), Exec::Sequential).unwrap();
        assert_eq!(post[0].shape, 3025.0);
        // all eta zero -> rate is the prior rate
        assert_eq!(post[0].rate, 1.0);
    }

    #[test]
    fn tau2_rate_sums_quadratic_forms() {
        // K=2, M=2, T=2, A = 0.5 I, B'B = [[2, -1], [-1, 2]]
        let gram = SparseRealMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)]).unwrap();
        let blocks = TransitionBlocks::from_fn(2, 2, |i, j, _| if i == j { 0.5 } else { 0.0 }).unwrap();
        let states = StateSequence::new(vec![
            DVector::from_row_slice(&[2.0, 0.0, 0.0, 4.0]),
            DVector::from_row_slice(&[2.0, 1.0, 1.0, 2.0]),
            DVector::from_row_slice(&[1.0, 0.5, 0.0, 0.0]),
        ])
        .unwrap();
        let priors = Priors::standard(4);
        let post = tau2_posterior(&states, &blocks, &gram, &priors, Exec::Parallel).unwrap();
        // t=1: eta = (1, 1 | 1, 0); t=2: eta = (0, 0 | -0.5, -1)
        let q = |a: f64, b: f64| 2.0 * a * a - 2.0 * a * b + 2.0 * b * b;
        let rate0 = 1.0 + 0.5 * (q(1.0, 1.0) + q(0.0, 0.0));
        let rate1 = 1.0 + 0.5 * (q(1.0, 0.0) + q(-0.5, -1.0));
        assert!((post[0].rate - rate0).abs() < 1e-14);
        assert!((post[1].rate - rate1).abs() < 1e-14);
        assert_eq!(post[0].shape, 1.0 + 2.0);
    }

    fn obs_tensor(n_locs: usize, observed: bool) -> ObservationTensor {
        ObservationTensor::new(
            1,
            vec![0.0; n_locs],
            vec![observed; n_locs],
            (0..n_locs).map(|s| GeoPoint::new(0.0, -3.0 + s as f64 * 0.005).unwrap()).collect(),
            vec![YearMonth::new(2000, 1).unwrap()],
            vec!["y".into()],
        )
        .unwrap()
    }

    #[test]
    fn sigma2_zero_residuals() {
        // N_obs = 1152, a = b = 1 -> IG(577, 1)
        let n = 1152;
        let phi = SparseRealMatrix::from_rows(1, (0..n).map(|_| vec![(0, 1.0)]).collect()).unwrap();
        let post = sigma2_posterior(&obs_tensor(n, true), &zero_states(1, 1), &phi, &Priors::standard(1), Exec::Sequential).unwrap();
        assert_eq!(post, vec![InvGammaParams { shape: 577.0, rate: 1.0 }]);
    }

    #[test]
    fn sigma2_fully_masked_is_prior() {
        let n = 10;
        let phi = SparseRealMatrix::from_rows(1, (0..n).map(|_| vec![(0, 1.0)]).collect()).unwrap();
        let mut priors = Priors::standard(1);
        priors.a_sigma = 2.5;
        priors.b_sigma = 0.7;
        let states = StateSequence::new(vec![DVector::from_element(1, 0.0), DVector::from_element(1, 5.0)]).unwrap();
        let post = sigma2_posterior(&obs_tensor(n, false), &states, &phi, &priors, Exec::Sequential).unwrap();
        assert_eq!(post, vec![InvGammaParams { shape: 2.5, rate: 0.7 }]);
    }

    #[test]
    fn masked_values_are_never_read() {
        let n = 6;
        let phi = SparseRealMatrix::from_rows(1, (0..n).map(|_| vec![(0, 1.0)]).collect()).unwrap();
        let states = StateSequence::new(vec![DVector::from_element(1, 0.0), DVector::from_element(1, 0.3)]).unwrap();
        let base = ObservationTensor::new(
            1,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![true, true, false, true, true, true],
            obs_tensor(n, true).locations,
            vec![YearMonth::new(2000, 1).unwrap()],
            vec!["y".into()],
        )
        .unwrap();
        let mut vals = base.values().to_vec();
        vals[2] = -1e6;
        let altered = ObservationTensor::new(1, vals, base.mask().to_vec(), base.locations.clone(), base.time_labels.clone(), vec!["y".into()]).unwrap();
        let p = Priors::standard(1);
        assert_eq!(
            sigma2_posterior(&base, &states, &phi, &p, Exec::Sequential).unwrap(),
            sigma2_posterior(&altered, &states, &phi, &p, Exec::Sequential).unwrap()
        );
    }

    #[test]
    fn draws_have_posterior_mean() {
        let k = 3;
        let gram = SparseRealMatrix::identity(k).unwrap();
        let blocks = TransitionBlocks::identity(1, k).unwrap();
        let states = StateSequence::new(
            (0..11).map(|t| DVector::from_element(k, (t as f64 * 0.7).sin())).collect(),
        )
        .unwrap();
        let priors = Priors::standard(k);
        let post = tau2_posterior(&states, &blocks, &gram, &priors, Exec::Sequential).unwrap()[0];
        let mut rng = stream_rng(3, 0);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_tau2(&states, &blocks, &gram, &priors, Exec::Sequential, &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        let expected = post.rate / (post.shape - 1.0);
        assert!((mean - expected).abs() < 0.01 * expected, "{mean} vs {expected}");
    }
}
