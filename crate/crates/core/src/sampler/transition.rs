//! Full conditional of the transition coefficients.
//!
//! Writing the state evolution as a regression of `alpha_{t+1}` on
//! `X_t = I_M (x) [diag(alpha_t^(1)) ... diag(alpha_t^(M))]` with error
//! precision `Q^{-1} = blockdiag(B'B / tau2_i)`, the posterior precision is
//! block diagonal over the *receiving* variable `i`: the coefficients
//! `(a_i1, ..., a_iM)` only enter the rows of variable `i`. Each of the `M`
//! blocks is an `MK x MK` sparse system
//!
//! ```text
//! P_i[(j,k), (j',k')] = (1/tau2_i) (B'B)[k,k'] sum_t alpha_t^(j)[k] alpha_t^(j')[k'] + delta / lambda
//! r_i[(j,k)]          = (1/tau2_i) sum_t alpha_t^(j)[k] (B'B alpha_{t+1}^(i))[k] + mu0 / lambda
//! ```
//!
//! with Minnesota prior mean `mu0 = 1` on own lags and `0` on cross lags.
//! The sums run over `t = 0..T-1`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Priors, StateSequence, TransitionBlocks};
use crate::parallel::{map_range, Exec};
use crate::rng::fill_std_normal;
use crate::sparse::{SparseCholesky, SparseRealMatrix};

/// Posterior of the coefficients received by one variable.
#[derive(Debug, Clone)]
pub struct RowPosterior {
    /// Mean, indexed `j * K + k`.
    pub mean: Vec<f64>,
    /// Factor of the posterior precision.
    pub precision_factor: SparseCholesky,
}

pub fn transition_posterior(
    states: &StateSequence,
    sar_gram: &SparseRealMatrix,
    tau2: &[f64],
    priors: &Priors,
    exec: Exec,
) -> Result<Vec<RowPosterior>> {
    let m = tau2.len();
    let k = sar_gram.n_rows();
    let t_n = states.n_times();
    if t_n < 2 {
        return Err(Error::Argument(format!(
            "transition update needs at least 2 observation times, got {t_n}"
        )));
    }
    if m == 0 || states.state_dim() != m * k {
        return Err(Error::Alignment("transition update: state and SAR sizes disagree".into()));
    }
    let inv_lambda = 1.0 / priors.lambda;

    // cross[(j, j')][p] = sum_t alpha_t^(j)[row(p)] * alpha_t^(j')[col(p)] over the B'B pattern
    let pattern: Vec<(usize, usize, f64)> = sar_gram.triplets().collect();
    let cross = map_range(exec, m * m, |jj| {
        let (j, jp) = (jj / m, jj % m);
        let mut acc = vec![0.0; pattern.len()];
        for t in 0..t_n {
            let a = states.var_slice(t, j, k);
            let b = states.var_slice(t, jp, k);
            for (p, &(r, c, _)) in pattern.iter().enumerate() {
                acc[p] += a[r] * b[c];
            }
        }
        acc
    });
    // gram_next[t][i] = B'B alpha_{t+1}^(i)
    let gram_next: Vec<Vec<Vec<f64>>> = map_range(exec, t_n, |t| {
        (0..m)
            .map(|i| sar_gram.mul_vec(states.var_slice(t + 1, i, k)))
            .collect()
    });

    let rows = map_range(exec, m, |i| -> Result<RowPosterior> {
        let w = 1.0 / tau2[i];
        let mut triplets = Vec::with_capacity(m * m * pattern.len());
        for j in 0..m {
            for jp in 0..m {
                let acc = &cross[j * m + jp];
                for (p, &(r, c, g)) in pattern.iter().enumerate() {
                    let mut v = w * g * acc[p];
                    if j == jp && r == c {
                        v += inv_lambda;
                    }
                    triplets.push((j * k + r, jp * k + c, v));
                }
            }
        }
        let precision = SparseRealMatrix::from_triplets(m * k, m * k, triplets)?;
        let mut rhs = vec![0.0; m * k];
        for j in 0..m {
            let prior_mean = if i == j { 1.0 } else { 0.0 };
            for kk in 0..k {
                let s: f64 = gram_next.iter().enumerate().map(|(t, g)| states.var_slice(t, j, k)[kk] * g[i][kk]).sum();
                rhs[j * k + kk] = w * s + prior_mean * inv_lambda;
            }
        }
        let factor = SparseCholesky::factor(&precision).map_err(|e| {
            Error::Numerical(format!("transition posterior precision for variable {i}: {e}"))
        })?;
        Ok(RowPosterior {
            mean: factor.solve(&rhs),
            precision_factor: factor,
        })
    });
    rows.into_iter().collect()
}

/// One draw of all `M^2 K` transition coefficients.
pub fn sample_transition<R: Rng + ?Sized>(
    states: &StateSequence,
    sar_gram: &SparseRealMatrix,
    tau2: &[f64],
    priors: &Priors,
    exec: Exec,
    rng: &mut R,
) -> Result<TransitionBlocks> {
    let posts = transition_posterior(states, sar_gram, tau2, priors, exec)?;
    let m = tau2.len();
    let k = sar_gram.n_rows();
    let mut out = TransitionBlocks::identity(m, k)?;
    let mut z = vec![0.0; m * k];
    for (i, post) in posts.iter().enumerate() {
        fill_std_normal(rng, &mut z);
        post.precision_factor.solve_upper_in_place(&mut z);
        for j in 0..m {
            let dst = out.block_mut(i, j);
            for kk in 0..k {
                dst[kk] = post.mean[j * k + kk] + z[j * k + kk];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_sar_matrix;
    use crate::grid::build_icosahedral_grid;
    use crate::rng::stream_rng;
    use nalgebra::{DMatrix, DVector};

    fn random_states(t_n: usize, dim: usize, seed: u64) -> StateSequence {
        let mut rng = stream_rng(seed, 0);
        StateSequence::new(
            (0..=t_n)
                .map(|_| {
                    let mut v = vec![0.0; dim];
                    fill_std_normal(&mut rng, &mut v);
                    DVector::from_vec(v)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn refuses_single_time() {
        let gram = SparseRealMatrix::identity(2).unwrap();
        let states = random_states(1, 2, 1);
        assert!(transition_posterior(&states, &gram, &[1.0], &Priors::standard(2), Exec::Sequential).is_err());
    }

    #[test]
    fn scalar_regression_with_flat_prior() {
        // M = K = 1, alpha = 1 everywhere, B'B = 1, tau2 = 1: mean = T/T = 1.
        let gram = SparseRealMatrix::identity(1).unwrap();
        let states = StateSequence::new(vec![DVector::from_element(1, 1.0); 11]).unwrap();
        let mut priors = Priors::standard(1);
        priors.lambda = f64::INFINITY;
        let post = transition_posterior(&states, &gram, &[1.0], &priors, Exec::Sequential).unwrap();
        assert!((post[0].mean[0] - 1.0).abs() < 1e-14);
        // posterior variance = tau2 / sum alpha_t^2 = 1/10
        let var = post[0].precision_factor.inverse_dense()[(0, 0)];
        assert!((var - 0.1).abs() < 1e-14);
    }

    #[test]
    fn zero_states_return_the_prior() {
        let grid = build_icosahedral_grid(0).unwrap();
        let gram = build_sar_matrix(&grid, 2.0).unwrap().gram();
        let states = StateSequence::new(vec![DVector::zeros(24); 6]).unwrap();
        let priors = Priors::standard(24);
        let post = transition_posterior(&states, &gram, &[1.0, 2.0], &priors, Exec::Sequential).unwrap();
        for (i, p) in post.iter().enumerate() {
            for j in 0..2 {
                for kk in 0..12 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((p.mean[j * 12 + kk] - expected).abs() < 1e-14);
                }
            }
            let cov = p.precision_factor.inverse_dense();
            assert!((cov - DMatrix::identity(24, 24) * priors.lambda).abs().max() < 1e-14);
        }
    }

    #[test]
    fn tight_prior_collapses_to_minnesota_mean() {
        let grid = build_icosahedral_grid(0).unwrap();
        let gram = build_sar_matrix(&grid, 2.0).unwrap().gram();
        let states = random_states(20, 36, 5);
        let mut priors = Priors::standard(36);
        priors.lambda = 1e-16;
        let mut rng = stream_rng(9, 0);
        let a = sample_transition(&states, &gram, &[1.0, 1.0, 1.0], &priors, Exec::Sequential, &mut rng).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(a.block(i, j).iter().all(|v| (v - target).abs() < 1e-6));
            }
        }
    }

    /// Dense regression oracle: stack X_t and solve the normal equations directly.
    #[test]
    fn matches_dense_regression() {
        let (m, k, t_n) = (2, 3, 5);
        let gram = SparseRealMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 2.0), (0, 1, -0.5), (1, 0, -0.5), (1, 1, 2.5), (1, 2, -0.3), (2, 1, -0.3), (2, 2, 1.5)],
        )
        .unwrap();
        let tau2 = [0.7, 1.9];
        let states = random_states(t_n, m * k, 17);
        let priors = Priors::standard(m * k);
        let n = m * k;
        // parameter vector ordered (i, j, k), matching TransitionBlocks
        let p = m * m * k;
        let qinv = {
            let mut q = DMatrix::<f64>::zeros(n, n);
            let g = gram.to_dense();
            for i in 0..m {
                q.view_mut((i * k, i * k), (k, k)).copy_from(&(&g / tau2[i]));
            }
            q
        };
        let mut prec = DMatrix::<f64>::identity(p, p) / priors.lambda;
        let mut mu0 = DVector::<f64>::zeros(p);
        for i in 0..m {
            for kk in 0..k {
                mu0[(i * m + i) * k + kk] = 1.0;
            }
        }
        let mut rhs = &mu0 / priors.lambda;
        for t in 0..t_n {
            let mut x = DMatrix::<f64>::zeros(n, p);
            for i in 0..m {
                for j in 0..m {
                    for kk in 0..k {
                        x[(i * k + kk, (i * m + j) * k + kk)] = states.alphas[t][j * k + kk];
                    }
                }
            }
            prec += x.transpose() * &qinv * &x;
            rhs += x.transpose() * &qinv * &states.alphas[t + 1];
        }
        let mean = prec.clone().cholesky().unwrap().solve(&rhs);
        let cov = prec.cholesky().unwrap().inverse();

        let post = transition_posterior(&states, &gram, &tau2, &priors, Exec::Parallel).unwrap();
        for i in 0..m {
            let row_cov = post[i].precision_factor.inverse_dense();
            for j in 0..m {
                for kk in 0..k {
                    let a = (i * m + j) * k + kk;
                    assert!((post[i].mean[j * k + kk] - mean[a]).abs() < 1e-12);
                    for jp in 0..m {
                        for kp in 0..k {
                            let b = (i * m + jp) * k + kp;
                            assert!((row_cov[(j * k + kk, jp * k + kp)] - cov[(a, b)]).abs() < 1e-12);
                        }
                    }
                }
            }
            // rows for different receiving variables are uncorrelated
            for other in 0..m {
                if other != i {
                    assert!(cov[((i * m) * k, (other * m) * k)].abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn draws_have_posterior_moments() {
        let gram = SparseRealMatrix::from_triplets(2, 2, vec![(0, 0, 1.5), (0, 1, -0.4), (1, 0, -0.4), (1, 1, 1.2)]).unwrap();
        let states = random_states(6, 4, 23);
        let priors = Priors::standard(4);
        let tau2 = [0.8, 1.3];
        let post = transition_posterior(&states, &gram, &tau2, &priors, Exec::Sequential).unwrap();
        let mut rng = stream_rng(29, 0);
        let n = 40_000;
        let mut sum = [0.0; 8];
        let mut sq = [0.0; 8];
        for _ in 0..n {
            let a = sample_transition(&states, &gram, &tau2, &priors, Exec::Sequential, &mut rng).unwrap();
            for (idx, v) in a.as_slice().iter().enumerate() {
                sum[idx] += v;
                sq[idx] += v * v;
            }
        }
        for i in 0..2 {
            let cov = post[i].precision_factor.inverse_dense();
            for j in 0..2 {
                for kk in 0..2 {
                    let idx = (i * 2 + j) * 2 + kk;
                    let mean = sum[idx] / n as f64;
                    let var = sq[idx] / n as f64 - mean * mean;
                    let v = cov[(j * 2 + kk, j * 2 + kk)];
                    assert!((mean - post[i].mean[j * 2 + kk]).abs() < 4.0 * (v / n as f64).sqrt());
                    assert!((var / v - 1.0).abs() < 0.05);
                }
            }
        }
    }
}
