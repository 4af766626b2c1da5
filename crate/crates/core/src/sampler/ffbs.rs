//! Forward filtering, backward sampling of the basis coefficients.
//!
//! The filter is run in information form and only ever touches the
//! innovation precision `Q^{-1}`. With `H_{t-1} = P_{t-1} + A'Q^{-1}A`,
//!
//! ```text
//! R_t^{-1} = Q^{-1} - Q^{-1} A H_{t-1}^{-1} A' Q^{-1}
//! P_t      = R_t^{-1} + sum_obs phi phi' / sigma2
//! m_t      = P_t^{-1} (R_t^{-1} A m_{t-1} + sum_obs phi y / sigma2)
//! ```
//!
//! so missing entries simply drop out of the sums. The backward pass draws
//! `alpha_T ~ N(m_T, P_T^{-1})` and then
//! `alpha_t | alpha_{t+1} ~ N(H_t^{-1}(P_t m_t + A'Q^{-1} alpha_{t+1}), H_t^{-1})`,
//! reusing the factors of `H_t` from the forward pass.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::DynamicModel;
use crate::error::{Error, Result};
use crate::model::{ObservationTensor, Priors, StateSequence, TransitionBlocks};
use crate::parallel::{map_range, Exec};
use crate::rng::fill_std_normal;

/// Filtered moments for `t = 0..=T`; index 0 is the prior of `alpha_0`.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub means: Vec<DVector<f64>>,
    pub precisions: Vec<DMatrix<f64>>,
    /// Factors of `P_t + A'Q^{-1}A` for `t = 0..T`.
    smoothing: Vec<Cholesky<f64, Dyn>>,
}

impl FilterOutput {
    pub fn covariance(&self, t: usize) -> Result<DMatrix<f64>> {
        Ok(factor(self.precisions[t].clone(), t, "filtered precision")?.inverse())
    }
}

fn factor(mut m: DMatrix<f64>, t: usize, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} at time {t} has non-finite entries")));
    }
    symmetrize(&mut m);
    Cholesky::new(m).ok_or_else(|| Error::Numerical(format!("{what} at time {t} is not positive definite")))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in r + 1..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// `mean + L^{-T} z` for a precision factor `L L'`.
fn draw_from_precision<R: Rng + ?Sized>(chol: &Cholesky<f64, Dyn>, mean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let mut z = vec![0.0; mean.len()];
    fill_std_normal(rng, &mut z);
    let z = DVector::from_vec(z);
    let dev = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    mean + dev
}

pub(crate) fn dense_transition(blocks: &TransitionBlocks) -> DMatrix<f64> {
    let (m, k) = (blocks.n_vars(), blocks.basis_size());
    let mut a = DMatrix::zeros(m * k, m * k);
    for i in 0..m {
        for j in 0..m {
            for (kk, v) in blocks.block(i, j).iter().enumerate() {
                a[(i * k + kk, j * k + kk)] = *v;
            }
        }
    }
    a
}

fn innovation_precision(model: &DynamicModel, tau2: &[f64]) -> DMatrix<f64> {
    let k = model.basis_size();
    let mut q = DMatrix::zeros(tau2.len() * k, tau2.len() * k);
    for (i, t2) in tau2.iter().enumerate() {
        q.view_mut((i * k, i * k), (k, k)).copy_from(&(&model.sar_gram_dense / *t2));
    }
    q
}

/// Observation information at one time: per-variable `Phi_o' Phi_o / sigma2`
/// and `Phi_o' y_o / sigma2` (`None` for a variable with nothing observed).
struct ObsInfo {
    blocks: Vec<Option<(DMatrix<f64>, DVector<f64>)>>,
}

fn observation_info(model: &DynamicModel, obs: &ObservationTensor, sigma2: &[f64], t: usize) -> ObsInfo {
    let m = obs.n_vars();
    let k = model.basis_size();
    let phi = &model.phi;
    let blocks = (0..m)
        .map(|i| {
            let w = 1.0 / sigma2[t * m + i];
            let mut vec = DVector::zeros(k);
            let mut count = 0usize;
            for (s, y) in obs.observed(t, i) {
                let (cols, vals) = phi.row(s);
                for (&c, &v) in cols.iter().zip(vals) {
                    vec[c] += v * y * w;
                }
                count += 1;
            }
            if count == 0 {
                return None;
            }
            let mat = if count == obs.n_locs() {
                &model.phi_gram * w
            } else {
                let mut mat = DMatrix::zeros(k, k);
                for (s, _) in obs.observed(t, i) {
                    let (cols, vals) = phi.row(s);
                    for (&c1, &v1) in cols.iter().zip(vals) {
                        for (&c2, &v2) in cols.iter().zip(vals) {
                            mat[(c1, c2)] += v1 * v2 * w;
                        }
                    }
                }
                mat
            };
            Some((mat, vec))
        })
        .collect();
    ObsInfo { blocks }
}

fn check_inputs(model: &DynamicModel, obs: &ObservationTensor, blocks: &TransitionBlocks, tau2: &[f64], sigma2: &[f64], priors: &Priors) -> Result<()> {
    let (m, k) = (obs.n_vars(), model.basis_size());
    if blocks.n_vars() != m || blocks.basis_size() != k || tau2.len() != m {
        return Err(Error::Alignment("FFBS: transition and tau2 do not match the observation variables".into()));
    }
    if sigma2.len() != obs.n_times() * m {
        return Err(Error::Alignment(format!(
            "FFBS: expected {} measurement variances, got {}",
            obs.n_times() * m,
            sigma2.len()
        )));
    }
    if model.phi.n_rows() != obs.n_locs() {
        return Err(Error::Alignment("FFBS: basis rows do not match the observation locations".into()));
    }
    if tau2.iter().chain(sigma2).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numerical("FFBS: variances must be positive and finite".into()));
    }
    priors.validate(m * k)
}

pub fn forward_filter(
    model: &DynamicModel,
    obs: &ObservationTensor,
    blocks: &TransitionBlocks,
    tau2: &[f64],
    sigma2: &[f64],
    priors: &Priors,
    exec: Exec,
) -> Result<FilterOutput> {
    check_inputs(model, obs, blocks, tau2, sigma2, priors)?;
    let (t_n, m, k) = (obs.n_times(), obs.n_vars(), model.basis_size());
    let n = m * k;
    let a = dense_transition(blocks);
    let qinv = innovation_precision(model, tau2);
    let qinv_a = &qinv * &a;
    let at_qinv_a = a.transpose() * &qinv_a;
    let infos = map_range(exec, t_n, |t| observation_info(model, obs, sigma2, t));

    let mut means = Vec::with_capacity(t_n + 1);
    let mut precisions = Vec::with_capacity(t_n + 1);
    let mut smoothing = Vec::with_capacity(t_n);
    means.push(DVector::from_column_slice(&priors.m0));
    precisions.push(DMatrix::from_diagonal(&DVector::from_iterator(n, priors.c0_diag.iter().map(|v| 1.0 / v))));

    for (t0, info) in infos.iter().enumerate() {
        let t = t0 + 1;
        let h = factor(&precisions[t0] + &at_qinv_a, t0, "smoothing precision")?;
        // R^{-1} = Q^{-1} - (Q^{-1}A) H^{-1} (Q^{-1}A)'
        let g = h.solve(&qinv_a.transpose());
        let mut r_inv = &qinv - &qinv_a * g;
        symmetrize(&mut r_inv);
        let pred = &a * &means[t0];
        smoothing.push(h);
        if info.blocks.iter().all(Option::is_none) {
            means.push(pred);
            precisions.push(r_inv);
            continue;
        }
        let mut rhs = &r_inv * &pred;
        let mut prec = r_inv;
        for (i, blk) in info.blocks.iter().enumerate() {
            if let Some((mat, vec)) = blk {
                let mut view = prec.view_mut((i * k, i * k), (k, k));
                view += mat;
                let mut rv = rhs.rows_mut(i * k, k);
                rv += vec;
            }
        }
        let p_chol = factor(prec.clone(), t, "filtered precision")?;
        means.push(p_chol.solve(&rhs));
        precisions.push(prec);
    }
    Ok(FilterOutput { means, precisions, smoothing })
}

/// One joint draw of `alpha_0, ..., alpha_T` from their full conditional.
#[allow(clippy::too_many_arguments)]
pub fn ffbs<R: Rng + ?Sized>(
    model: &DynamicModel,
    obs: &ObservationTensor,
    blocks: &TransitionBlocks,
    tau2: &[f64],
    sigma2: &[f64],
    priors: &Priors,
    exec: Exec,
    rng: &mut R,
) -> Result<StateSequence> {
    let filt = forward_filter(model, obs, blocks, tau2, sigma2, priors, exec)?;
    let t_n = obs.n_times();
    let a = dense_transition(blocks);
    let at_qinv = a.transpose() * innovation_precision(model, tau2);

    let mut out = vec![DVector::zeros(0); t_n + 1];
    let last = factor(filt.precisions[t_n].clone(), t_n, "filtered precision")?;
    out[t_n] = draw_from_precision(&last, &filt.means[t_n], rng);
    for t in (0..t_n).rev() {
        let chol = &filt.smoothing[t];
        let rhs = &filt.precisions[t] * &filt.means[t] + &at_qinv * &out[t + 1];
        let mean = chol.solve(&rhs);
        out[t] = draw_from_precision(chol, &mean, rng);
    }
    StateSequence::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoPoint;
    use crate::model::YearMonth;
    use crate::rng::stream_rng;
    use crate::sampler::TransitionMode;
    use crate::sparse::SparseRealMatrix;

    fn tensor(m: usize, n: usize, t_n: usize, values: Vec<f64>, mask: Vec<bool>) -> ObservationTensor {
        ObservationTensor::new(
            m,
            values,
            mask,
            (0..n).map(|s| GeoPoint::from_degrees(10.0 * s as f64, 0.0).unwrap()).collect(),
            YearMonth::new(2000, 1).unwrap().series(t_n),
            (0..m).map(|i| format!("v{i}")).collect(),
        )
        .unwrap()
    }

    fn small_model(m: usize) -> DynamicModel {
        // N = 3 locations, K = 2 basis functions
        let phi = SparseRealMatrix::from_triplets(3, 2, vec![(0, 0, 1.0), (1, 0, 0.4), (1, 1, 0.6), (2, 1, 0.9)]).unwrap();
        let gram = SparseRealMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, -0.7), (1, 0, -0.7), (1, 1, 1.6)]).unwrap();
        DynamicModel::new(phi, gram, m, TransitionMode::Estimate).unwrap()
    }

    fn dense_q(model: &DynamicModel, tau2: &[f64]) -> DMatrix<f64> {
        let k = model.basis_size();
        let cov = model.sar_gram_dense.clone().try_inverse().unwrap();
        let mut q = DMatrix::zeros(tau2.len() * k, tau2.len() * k);
        for (i, t2) in tau2.iter().enumerate() {
            q.view_mut((i * k, i * k), (k, k)).copy_from(&(&cov * *t2));
        }
        q
    }

    /// Covariance-form Kalman filter written directly from the state-space model.
    fn naive_filter(
        model: &DynamicModel,
        obs: &ObservationTensor,
        blocks: &TransitionBlocks,
        tau2: &[f64],
        sigma2: &[f64],
        priors: &Priors,
    ) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        let (m, k, nloc) = (obs.n_vars(), model.basis_size(), obs.n_locs());
        let phi = model.phi.to_dense();
        let a = dense_transition(blocks);
        let q = dense_q(model, tau2);
        let mut mean = DVector::from_column_slice(&priors.m0);
        let mut cov = DMatrix::from_diagonal(&DVector::from_column_slice(&priors.c0_diag));
        let mut out = vec![(mean.clone(), cov.clone())];
        for t in 0..obs.n_times() {
            mean = &a * &mean;
            cov = &a * &cov * a.transpose() + &q;
            let rows: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..nloc).map(move |s| (i, s))).filter(|&(i, s)| obs.is_observed(t, i, s)).collect();
            if !rows.is_empty() {
                let mut f = DMatrix::zeros(rows.len(), m * k);
                let mut y = DVector::zeros(rows.len());
                let mut v = DMatrix::zeros(rows.len(), rows.len());
                for (r, &(i, s)) in rows.iter().enumerate() {
                    for c in 0..k {
                        f[(r, i * k + c)] = phi[(s, c)];
                    }
                    y[r] = obs.raw(t, i, s);
                    v[(r, r)] = sigma2[t * m + i];
                }
                let s_mat = &f * &cov * f.transpose() + v;
                let gain = &cov * f.transpose() * s_mat.try_inverse().unwrap();
                mean = &mean + &gain * (y - &f * &mean);
                cov = &cov - &gain * &f * &cov;
            }
            out.push((mean.clone(), cov.clone()));
        }
        out
    }

    #[test]
    fn information_filter_matches_kalman_filter() {
        let model = small_model(2);
        let t_n = 4;
        let mut rng = stream_rng(11, 0);
        let mut vals = vec![0.0; t_n * 2 * 3];
        fill_std_normal(&mut rng, &mut vals);
        let mut mask = vec![true; vals.len()];
        mask[1] = false;
        mask[7] = false;
        for s in 0..6 {
            mask[12 + s] = false; // time 2 entirely missing
        }
        let obs = tensor(2, 3, t_n, vals, mask);
        let blocks = TransitionBlocks::from_vec(2, 2, vec![0.8, 0.7, 0.1, -0.2, 0.3, 0.0, 0.5, 0.6]).unwrap();
        let tau2 = [0.5, 1.5];
        let sigma2: Vec<f64> = (0..t_n * 2).map(|j| 0.2 + 0.1 * j as f64).collect();
        let mut priors = Priors::standard(4);
        priors.m0 = vec![0.3, -0.1, 0.0, 0.2];
        priors.c0_diag = vec![1.0, 2.0, 0.5, 1.0];
        let filt = forward_filter(&model, &obs, &blocks, &tau2, &sigma2, &priors, Exec::Parallel).unwrap();
        let naive = naive_filter(&model, &obs, &blocks, &tau2, &sigma2, &priors);
        for t in 0..=t_n {
            assert!((&filt.means[t] - &naive[t].0).abs().max() < 1e-10, "mean at {t}");
            assert!((filt.covariance(t).unwrap() - &naive[t].1).abs().max() < 1e-10, "cov at {t}");
        }
    }

    #[test]
    fn noiseless_limit_inverts_the_basis() {
        // square, invertible basis: states at t >= 1 are pinned to Phi^{-1} y
        let phi = SparseRealMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 0.5), (1, 1, 2.0)]).unwrap();
        let model = DynamicModel::new(phi, SparseRealMatrix::identity(2).unwrap(), 1, TransitionMode::Estimate).unwrap();
        let obs = tensor(1, 2, 3, vec![1.0, 2.0, -1.0, 0.5, 3.0, 4.0], vec![true; 6]);
        let blocks = TransitionBlocks::identity(1, 2).unwrap();
        let mut rng = stream_rng(1, 0);
        let states = ffbs(&model, &obs, &blocks, &[1.0], &[1e-12; 3], &Priors::standard(2), Exec::Sequential, &mut rng).unwrap();
        for t in 0..3 {
            let y = [obs.raw(t, 0, 0), obs.raw(t, 0, 1)];
            let a1 = y[1] / 2.0;
            let a0 = y[0] - 0.5 * a1;
            assert!((states.alphas[t + 1][0] - a0).abs() < 1e-4);
            assert!((states.alphas[t + 1][1] - a1).abs() < 1e-4);
        }
    }

    #[test]
    fn all_missing_propagates_the_prior() {
        let model = small_model(1);
        let obs = tensor(1, 3, 1, vec![0.0; 3], vec![false; 3]);
        let blocks = TransitionBlocks::from_vec(1, 2, vec![0.5, 2.0]).unwrap();
        let priors = Priors::standard(2);
        let filt = forward_filter(&model, &obs, &blocks, &[2.0], &[1.0], &priors, Exec::Sequential).unwrap();
        let a = dense_transition(&blocks);
        let expected = &a * a.transpose() + dense_q(&model, &[2.0]);
        assert!((filt.covariance(1).unwrap() - expected).abs().max() < 1e-12);
        assert_eq!(filt.means[1], DVector::zeros(2));
    }

    #[test]
    fn rejects_bad_variances() {
        let model = small_model(1);
        let obs = tensor(1, 3, 1, vec![0.0; 3], vec![true; 3]);
        let blocks = TransitionBlocks::identity(1, 2).unwrap();
        let mut rng = stream_rng(1, 0);
        let err = ffbs(&model, &obs, &blocks, &[1.0], &[0.0], &Priors::standard(2), Exec::Sequential, &mut rng).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn non_pd_covariance_names_the_time() {
        let model = small_model(1);
        let obs = tensor(1, 3, 2, vec![0.0; 6], vec![true; 6]);
        let blocks = TransitionBlocks::from_vec(1, 2, vec![1e200, 1.0]).unwrap();
        let mut rng = stream_rng(1, 0);
        let err = ffbs(&model, &obs, &blocks, &[1.0], &[1.0, 1.0], &Priors::standard(2), Exec::Sequential, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(err.to_string().contains("time"), "{err}");
    }

    /// Monte Carlo check of the joint draw against the dense joint posterior.
    #[test]
    fn draws_match_joint_posterior() {
        let model = small_model(1);
        let t_n = 2;
        let obs = tensor(1, 3, t_n, vec![0.5, -0.3, 1.2, 0.0, 0.8, -0.6], vec![true, true, false, true, true, true]);
        let blocks = TransitionBlocks::from_vec(1, 2, vec![0.7, -0.4]).unwrap();
        let tau2 = [0.6];
        let sigma2 = [0.3, 0.8];
        let priors = Priors::standard(2);

        // joint precision over (alpha_0, alpha_1, alpha_2)
        let k = 2;
        let dim = (t_n + 1) * k;
        let a = dense_transition(&blocks);
        let qinv = innovation_precision(&model, &tau2);
        let phi = model.phi.to_dense();
        let mut prec = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        prec.view_mut((0, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
        for t in 1..=t_n {
            let (p, c) = (t * k, (t - 1) * k);
            let mut v = prec.view_mut((p, p), (k, k));
            v += &qinv;
            let mut v = prec.view_mut((c, c), (k, k));
            v += a.transpose() * &qinv * &a;
            let off = -(&qinv * &a);
            let mut v = prec.view_mut((p, c), (k, k));
            v += &off;
            let mut v = prec.view_mut((c, p), (k, k));
            v += off.transpose();
            for s in 0..3 {
                if obs.is_observed(t - 1, 0, s) {
                    let row = phi.row(s).transpose();
                    let mut v = prec.view_mut((p, p), (k, k));
                    v += &row * row.transpose() / sigma2[t - 1];
                    let mut r = rhs.rows_mut(p, k);
                    r += &row * obs.raw(t - 1, 0, s) / sigma2[t - 1];
                }
            }
        }
        let cov = prec.clone().try_inverse().unwrap();
        let mean = &cov * rhs;

        let mut rng = stream_rng(99, 0);
        let n = 40_000;
        let mut sum = DVector::<f64>::zeros(dim);
        let mut sq = DMatrix::<f64>::zeros(dim, dim);
        for _ in 0..n {
            let s = ffbs(&model, &obs, &blocks, &tau2, &sigma2, &priors, Exec::Sequential, &mut rng).unwrap();
            let x = DVector::from_iterator(dim, s.alphas.iter().flat_map(|a| a.iter().copied()));
            sq += &x * x.transpose();
            sum += x;
        }
        let emp_mean = &sum / n as f64;
        let emp_cov = &sq / n as f64 - &emp_mean * emp_mean.transpose();
        for r in 0..dim {
            let se = (cov[(r, r)] / n as f64).sqrt();
            assert!((emp_mean[r] - mean[r]).abs() < 4.5 * se, "mean {r}");
            for c in 0..dim {
                let scale = (cov[(r, r)] * cov[(c, c)]).sqrt();
                assert!((emp_cov[(r, c)] - cov[(r, c)]).abs() < 0.04 * scale, "cov {r},{c}");
            }
        }
    }
}
