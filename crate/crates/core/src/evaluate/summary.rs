use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;

/// Quantile of sorted data by linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

impl Summary {
    pub fn covers(&self, x: f64) -> bool {
        self.q025 <= x && x <= self.q975
    }
}

pub fn summarize(draws: &[f64]) -> Result<Summary> {
    if draws.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 draws to summarize, got {}", draws.len())));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean: draws.iter().sum::<f64>() / draws.len() as f64,
        q025: quantile(&sorted, 0.025),
        q975: quantile(&sorted, 0.975),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub parameter: String,
    pub summary: Summary,
}

/// Summaries of every scalar parameter: `tau2[var]`, `sigma2[var,time]` and,
/// when sampled, `A[i,j,k]`.
pub fn posterior_summary(draws: &PosteriorDraws) -> Result<Vec<ParameterSummary>> {
    let (m, k) = (draws.n_vars, draws.basis_size);
    let mut out = Vec::new();
    for i in 0..m {
        out.push(ParameterSummary {
            parameter: format!("tau2[{}]", draws.var_names[i]),
            summary: summarize(&draws.tau2(i))?,
        });
    }
    for t in 0..draws.n_times {
        for i in 0..m {
            out.push(ParameterSummary {
                parameter: format!("sigma2[{},{}]", draws.var_names[i], draws.time_labels[t]),
                summary: summarize(&draws.sigma2(t, i))?,
            });
        }
    }
    if draws.has_transition() {
        for i in 0..m {
            for j in 0..m {
                for kk in 0..k {
                    out.push(ParameterSummary {
                        parameter: format!("A[{i},{j},{kk}]"),
                        summary: summarize(&draws.transition(i, j, kk))?,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, rows: &[ParameterSummary]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    w.write_record(["parameter", "mean", "q025", "q975"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            r.summary.mean.to_string(),
            r.summary.q025.to_string(),
            r.summary.q975.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
