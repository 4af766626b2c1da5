use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluate::holdout::HoldoutMask;
use crate::evaluate::summary::summarize;
use crate::model::{ObservationTensor, YearMonth};
use crate::parallel::{map_range, map_slice, Exec};
use crate::rng::{std_normal, stream_rng};
use crate::sampler::PosteriorDraws;
use crate::sparse::SparseRealMatrix;

/// `(1/m) sum |x_i - y| - 1/(2 m^2) sum_ij |x_i - x_j|`, evaluated in
/// `O(m log m)` through the sorted samples.
pub fn crps_empirical(samples: &[f64], y: f64) -> f64 {
    assert!(!samples.is_empty(), "CRPS needs at least one sample");
    let m = samples.len() as f64;
    let abs = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 - m + 1.0))
        .sum();
    (abs - spread / (m * m)).max(0.0)
}

/// Direct double-sum form of [`crps_empirical`].
pub fn crps_pairwise(samples: &[f64], y: f64) -> f64 {
    let m = samples.len() as f64;
    let abs = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    let pair: f64 = samples.iter().map(|a| samples.iter().map(|b| (a - b).abs()).sum::<f64>()).sum();
    abs - pair / (2.0 * m * m)
}

/// Root mean squared error.
pub fn rmspe(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Argument("RMSPE of an empty group".into()));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Fraction of truths inside their `[lo, hi]` interval.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> f64 {
    assert_eq!(intervals.len(), truths.len(), "intervals and truths must align");
    if truths.is_empty() {
        return f64::NAN;
    }
    let hits = intervals.iter().zip(truths).filter(|((lo, hi), y)| lo <= *y && *y <= hi).count();
    hits as f64 / truths.len() as f64
}

/// Posterior predictive samples for held-out entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    /// `(t, i, s)` in the indexing of the scored tensor.
    pub entries: Vec<(usize, usize, usize)>,
    pub truth: Vec<f64>,
    /// One vector of samples per entry, one sample per retained draw.
    pub samples: Vec<Vec<f64>>,
}

impl PredictiveDraws {
    pub fn means(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect()
    }
}

/// `y* = phi_s' alpha_t + eps`, `eps ~ N(0, sigma2_it)`, for every retained
/// draw and every held-out entry of `obs`.
///
/// Variables are matched by name, so draws from a single-variable fit can be
/// scored against a multivariate tensor.
pub fn predictive_draws(
    draws: &PosteriorDraws,
    phi: &SparseRealMatrix,
    obs: &ObservationTensor,
    mask: &HoldoutMask,
    seed: u64,
    exec: Exec,
) -> Result<PredictiveDraws> {
    if !draws.has_states() {
        return Err(Error::Config(
            "posterior draws do not include states; refit with store_states enabled".into(),
        ));
    }
    if draws.n_times != obs.n_times() || phi.n_rows() != obs.n_locs() || phi.n_cols() != draws.basis_size {
        return Err(Error::Alignment("draws, basis and observations have inconsistent dimensions".into()));
    }
    let var_map: Vec<Option<usize>> = obs
        .var_names
        .iter()
        .map(|name| draws.var_names.iter().position(|v| v == name))
        .collect();
    let entries: Vec<(usize, usize, usize)> = mask
        .entries()
        .into_iter()
        .filter(|&(_, i, _)| var_map[i].is_some())
        .collect();
    if entries.is_empty() {
        return Err(Error::Config("none of the held-out variables were fitted".into()));
    }
    let (m, k) = (draws.n_vars, draws.basis_size);
    let dim = m * k;
    let all: Vec<(&[f64], &[f64])> = draws
        .chains
        .iter()
        .flat_map(|c| c.states.as_ref().unwrap().iter().zip(&c.sigma2))
        .map(|(s, v)| (s.as_slice(), v.as_slice()))
        .collect();
    let means = map_slice(exec, &entries, |&(t, i, s)| {
        let di = var_map[i].unwrap();
        let (cols, vals) = phi.row(s);
        all.iter()
            .map(|(state, _)| {
                let alpha = &state[(t + 1) * dim + di * k..(t + 1) * dim + (di + 1) * k];
                cols.iter().zip(vals).map(|(&c, &w)| w * alpha[c]).sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let mut rng = stream_rng(seed, 0);
    let samples = entries
        .iter()
        .zip(means)
        .map(|(&(t, i, _), mu)| {
            let di = var_map[i].unwrap();
            mu.iter()
                .zip(&all)
                .map(|(mean, (_, sigma2))| mean + sigma2[t * m + di].sqrt() * std_normal(&mut rng))
                .collect()
        })
        .collect();
    let truth = entries.iter().map(|&(t, i, s)| obs.raw(t, i, s)).collect();
    Ok(PredictiveDraws { entries, truth, samples })
}

/// Per-entry predictive summaries: `variable,time,lat,lon,truth,mean,q025,q975`.
pub fn write_predictions_csv(path: &Path, pred: &PredictiveDraws, obs: &ObservationTensor) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    w.write_record(["variable", "time", "lat", "lon", "truth", "mean", "q025", "q975"]).map_err(err)?;
    for ((&(t, i, s), y), samples) in pred.entries.iter().zip(&pred.truth).zip(&pred.samples) {
        let loc = obs.locations[s];
        let (mean, lo, hi) = if samples.len() >= 2 {
            let sm = summarize(samples)?;
            (sm.mean, sm.q025, sm.q975)
        } else {
            (samples[0], samples[0], samples[0])
        };
        w.write_record([
            obs.var_names[i].clone(),
            obs.time_labels[t].to_string(),
            loc.lat_deg().to_string(),
            loc.lon_deg().to_string(),
            y.to_string(),
            mean.to_string(),
            lo.to_string(),
            hi.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub model: String,
    pub variable: String,
    /// `None` for the time-averaged row.
    pub month: Option<YearMonth>,
    pub crps: f64,
    pub rmspe: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub monthly: Vec<ScoreRow>,
    pub average: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn extend(&mut self, other: ScoreTable) {
        self.monthly.extend(other.monthly);
        self.average.extend(other.average);
    }

    pub fn average_for(&self, model: &str, variable: &str) -> Option<&ScoreRow> {
        self.average.iter().find(|r| r.model == model && r.variable == variable)
    }

    /// `model,variable,month,crps,rmspe`
    pub fn write_monthly_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        let err = |e: csv::Error| Error::parse(path, e.to_string());
        w.write_record(["model", "variable", "month", "crps", "rmspe"]).map_err(err)?;
        for r in &self.monthly {
            let month = r.month.map(|m| m.to_string()).unwrap_or_default();
            w.write_record([r.model.as_str(), &r.variable, &month, &r.crps.to_string(), &r.rmspe.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `model,variable,crps,rmspe`
    pub fn write_average_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        let err = |e: csv::Error| Error::parse(path, e.to_string());
        w.write_record(["model", "variable", "crps", "rmspe"]).map_err(err)?;
        for r in &self.average {
            w.write_record([r.model.as_str(), &r.variable, &r.crps.to_string(), &r.rmspe.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Per-month and time-averaged scores of one model.
///
/// CRPS is computed per entry, averaged over the locations of each month, and
/// the monthly values are averaged over time. RMSPE uses the predictive mean;
/// the averaged row pools every held-out entry of the variable.
pub fn score_holdout(model: &str, pred: &PredictiveDraws, obs: &ObservationTensor, exec: Exec) -> Result<ScoreTable> {
    let crps: Vec<f64> = map_range(exec, pred.entries.len(), |e| crps_empirical(&pred.samples[e], pred.truth[e]));
    let means = pred.means();
    // (variable, time) -> entry indices
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (e, &(t, i, _)) in pred.entries.iter().enumerate() {
        groups.entry((i, t)).or_default().push(e);
    }
    let mut table = ScoreTable::default();
    let mut per_var: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((i, t), idx) in &groups {
        let errors: Vec<f64> = idx.iter().map(|&e| means[e] - pred.truth[e]).collect();
        let c = idx.iter().map(|&e| crps[e]).sum::<f64>() / idx.len() as f64;
        table.monthly.push(ScoreRow {
            model: model.to_string(),
            variable: obs.var_names[*i].clone(),
            month: Some(obs.time_labels[*t]),
            crps: c,
            rmspe: rmspe(&errors)?,
        });
        let slot = per_var.entry(*i).or_default();
        slot.0.push(c);
        slot.1.extend(errors);
    }
    for (i, (monthly_crps, errors)) in per_var {
        table.average.push(ScoreRow {
            model: model.to_string(),
            variable: obs.var_names[i].clone(),
            month: None,
            crps: monthly_crps.iter().sum::<f64>() / monthly_crps.len() as f64,
            rmspe: rmspe(&errors)?,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::holdout::{build_holdout_mask, HoldoutSpec};
    use crate::ingest::LatLonGrid;
    use crate::rng::fill_std_normal;
    use crate::sampler::ChainDraws;
    use proptest::prelude::*;

    #[test]
    fn crps_examples() {
        assert_eq!(crps_empirical(&[0.0, 1.0], 0.0), 0.25);
        assert_eq!(crps_pairwise(&[0.0, 1.0], 0.0), 0.25);
        assert_eq!(crps_empirical(&[2.5], -1.0), 3.5);
        assert_eq!(crps_empirical(&[4.0; 9], 4.0), 0.0);
    }

    #[test]
    fn rmspe_examples() {
        assert_eq!(rmspe(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((rmspe(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmspe(&[]).is_err());
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&[(0.0, 1.0), (2.0, 3.0)], &[0.5, 2.0]), 1.0);
        assert_eq!(coverage(&[(0.0, 1.0), (2.0, 3.0)], &[5.0, -2.0]), 0.0);
        assert_eq!(coverage(&[(0.0, 1.0), (2.0, 3.0)], &[0.5, -2.0]), 0.5);
    }

    proptest! {
        #[test]
        fn crps_fast_path_matches_double_sum(xs in prop::collection::vec(-50.0f64..50.0, 1..60), y in -60.0f64..60.0) {
            let a = crps_empirical(&xs, y);
            let b = crps_pairwise(&xs, y);
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn crps_single_sample_is_absolute_error(x in -1e3f64..1e3, y in -1e3f64..1e3) {
            prop_assert!((crps_empirical(&[x], y) - (x - y).abs()).abs() < 1e-12);
        }

        #[test]
        fn crps_zero_only_for_point_mass_at_truth(xs in prop::collection::vec(-5.0f64..5.0, 2..20), y in -5.0f64..5.0) {
            let all_equal = xs.iter().all(|x| *x == y);
            prop_assert_eq!(crps_pairwise(&xs, y) == 0.0, all_equal);
        }

        #[test]
        fn rmspe_dominates_mean_absolute_error(errs in prop::collection::vec(-100.0f64..100.0, 1..50)) {
            let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64;
            prop_assert!(rmspe(&errs).unwrap() >= mae - 1e-12);
        }
    }

    /// Two-variable toy with one basis function equal to 1 everywhere.
    fn toy(n_draws: usize, sigma2: f64) -> (PosteriorDraws, SparseRealMatrix, ObservationTensor, HoldoutMask) {
        let g = LatLonGrid::new(2, 2).unwrap();
        let t_n = 3;
        let phi = SparseRealMatrix::from_rows(1, vec![vec![(0, 1.0)]; 4]).unwrap();
        let mut rng = stream_rng(3, 0);
        let states: Vec<Vec<f64>> = (0..n_draws)
            .map(|_| {
                let mut v = vec![0.0; (t_n + 1) * 2];
                fill_std_normal(&mut rng, &mut v);
                v
            })
            .collect();
        let draws = PosteriorDraws {
            n_vars: 2,
            n_times: t_n,
            basis_size: 1,
            var_names: vec!["a".into(), "b".into()],
            time_labels: YearMonth::new(2000, 1).unwrap().series(t_n),
            chains: vec![ChainDraws {
                chain: 0,
                iterations: (1..=n_draws).collect(),
                tau2: vec![vec![1.0, 1.0]; n_draws],
                sigma2: vec![vec![sigma2; t_n * 2]; n_draws],
                transition: None,
                states: Some(states),
                loglik: vec![0.0; n_draws],
            }],
        };
        let vals: Vec<f64> = (0..t_n * 2 * 4).map(|p| p as f64 * 0.1).collect();
        let obs = ObservationTensor::new(2, vals, vec![true; 24], g.locations(), draws.time_labels.clone(), draws.var_names.clone()).unwrap();
        let mask = build_holdout_mask(&HoldoutSpec::RandomFraction { fraction: 0.5, seed: 1, variable: Some("b".into()) }, &obs).unwrap();
        (draws, phi, obs, mask)
    }

    #[test]
    fn zero_noise_reproduces_the_mean() {
        let (draws, phi, obs, mask) = toy(1, 1e-300);
        let pred = predictive_draws(&draws, &phi, &obs, &mask, 0, Exec::Sequential).unwrap();
        assert_eq!(pred.entries.len(), 2 * 3);
        let state = &draws.chains[0].states.as_ref().unwrap()[0];
        for (&(t, i, _), s) in pred.entries.iter().zip(&pred.samples) {
            assert_eq!(i, 1);
            assert!((s[0] - state[(t + 1) * 2 + 1]).abs() < 1e-140);
        }
    }

    #[test]
    fn predictive_mean_is_linear_in_states() {
        let (draws, phi, obs, mask) = toy(4000, 0.25);
        let pred = predictive_draws(&draws, &phi, &obs, &mask, 5, Exec::Parallel).unwrap();
        let states = draws.chains[0].states.as_ref().unwrap();
        for (e, &(t, _, _)) in pred.entries.iter().enumerate() {
            let state_mean = states.iter().map(|s| s[(t + 1) * 2 + 1]).sum::<f64>() / 4000.0;
            let pm = pred.samples[e].iter().sum::<f64>() / 4000.0;
            assert_eq!(pred.samples[e].len(), 4000);
            assert!(pred.samples[e].iter().all(|v| v.is_finite()));
            assert!((pm - state_mean).abs() < 4.0 * (0.25f64 / 4000.0).sqrt());
        }
        assert_eq!(pred, predictive_draws(&draws, &phi, &obs, &mask, 5, Exec::Sequential).unwrap());
    }

    #[test]
    fn missing_states_is_actionable() {
        let (mut draws, phi, obs, mask) = toy(2, 1.0);
        draws.chains[0].states = None;
        let err = predictive_draws(&draws, &phi, &obs, &mask, 0, Exec::Sequential).unwrap_err();
        assert!(err.to_string().contains("store_states"));
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let (draws, _, obs, mask) = toy(1, 1.0);
        let entries = mask.entries();
        let truth: Vec<f64> = entries.iter().map(|&(t, i, s)| obs.raw(t, i, s)).collect();
        let pred = PredictiveDraws { samples: truth.iter().map(|y| vec![*y; 3]).collect(), truth, entries };
        let table = score_holdout("oracle", &pred, &obs, Exec::Sequential).unwrap();
        assert_eq!(table.monthly.len(), draws.n_times);
        assert!(table.monthly.iter().all(|r| r.crps == 0.0 && r.rmspe < 1e-15));
        let avg = table.average_for("oracle", "b").unwrap();
        assert_eq!(avg.crps, 0.0);
        assert!(avg.rmspe < 1e-15);
    }

    #[test]
    fn score_csv_layout() {
        let (draws, phi, obs, mask) = toy(10, 1.0);
        let pred = predictive_draws(&draws, &phi, &obs, &mask, 5, Exec::Sequential).unwrap();
        let mut table = score_holdout("mv", &pred, &obs, Exec::Sequential).unwrap();
        table.extend(score_holdout("rw", &pred, &obs, Exec::Sequential).unwrap());
        let dir = tempfile::tempdir().unwrap();
        table.write_monthly_csv(&dir.path().join("m.csv")).unwrap();
        table.write_average_csv(&dir.path().join("a.csv")).unwrap();
        write_predictions_csv(&dir.path().join("p.csv"), &pred, &obs).unwrap();
        let avg = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(avg.lines().count(), 3);
        assert!(avg.starts_with("model,variable,crps,rmspe\nmv,b,"));
        let monthly = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(monthly.lines().count(), 1 + 2 * 3);
        assert!(monthly.lines().nth(1).unwrap().starts_with("mv,b,2000-01,"));
        let p = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert_eq!(p.lines().count(), 1 + pred.entries.len());
    }
}
