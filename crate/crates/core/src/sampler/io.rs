//! Draw directories: one CSV per parameter family plus `manifest.json`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! draw directory reads back bit for bit.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChainDraws, PosteriorDraws, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::YearMonth;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsManifest {
    pub n_vars: usize,
    pub n_times: usize,
    pub basis_size: usize,
    pub var_names: Vec<String>,
    pub time_labels: Vec<YearMonth>,
    pub draws_per_chain: Vec<usize>,
    pub sampler: SamplerConfig,
    pub transition_estimated: bool,
    pub states_stored: bool,
    pub timings_secs: Vec<f64>,
    /// Free-form run configuration supplied by the caller.
    #[serde(default)]
    pub run: serde_json::Value,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::parse(path, e.to_string())
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_draws(
    dir: &Path,
    draws: &PosteriorDraws,
    sampler: &SamplerConfig,
    timings_secs: &[f64],
    run: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (m, k) = (draws.n_vars, draws.basis_size);

    let path = dir.join("tau2.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["chain", "iter", "variable", "value"]).map_err(write_err(&path))?;
    for c in &draws.chains {
        for (it, d) in c.iterations.iter().zip(&c.tau2) {
            for (i, v) in d.iter().enumerate() {
                w.write_record([c.chain.to_string(), it.to_string(), draws.var_names[i].clone(), v.to_string()])
                    .map_err(write_err(&path))?;
            }
        }
    }
    finish(w, &path)?;

    let path = dir.join("sigma2.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["chain", "iter", "variable", "time", "value"]).map_err(write_err(&path))?;
    for c in &draws.chains {
        for (it, d) in c.iterations.iter().zip(&c.sigma2) {
            for (idx, v) in d.iter().enumerate() {
                let (t, i) = (idx / m, idx % m);
                w.write_record([
                    c.chain.to_string(),
                    it.to_string(),
                    draws.var_names[i].clone(),
                    draws.time_labels[t].to_string(),
                    v.to_string(),
                ])
                .map_err(write_err(&path))?;
            }
        }
    }
    finish(w, &path)?;

    if draws.has_transition() {
        let path = dir.join("transition.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["chain", "iter", "i", "j", "k", "value"]).map_err(write_err(&path))?;
        for c in &draws.chains {
            for (it, d) in c.iterations.iter().zip(c.transition.as_ref().unwrap()) {
                for (idx, v) in d.iter().enumerate() {
                    let (ij, kk) = (idx / k, idx % k);
                    w.write_record([
                        c.chain.to_string(),
                        it.to_string(),
                        (ij / m).to_string(),
                        (ij % m).to_string(),
                        kk.to_string(),
                        v.to_string(),
                    ])
                    .map_err(write_err(&path))?;
                }
            }
        }
        finish(w, &path)?;
    }

    if draws.has_states() {
        let path = dir.join("states.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["chain", "iter", "time", "index", "value"]).map_err(write_err(&path))?;
        let dim = m * k;
        for c in &draws.chains {
            for (it, d) in c.iterations.iter().zip(c.states.as_ref().unwrap()) {
                for (idx, v) in d.iter().enumerate() {
                    w.write_record([
                        c.chain.to_string(),
                        it.to_string(),
                        (idx / dim).to_string(),
                        (idx % dim).to_string(),
                        v.to_string(),
                    ])
                    .map_err(write_err(&path))?;
                }
            }
        }
        finish(w, &path)?;
    }

    let path = dir.join("loglik.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["chain", "iter", "value"]).map_err(write_err(&path))?;
    for c in &draws.chains {
        for (it, v) in c.iterations.iter().zip(&c.loglik) {
            w.write_record([c.chain.to_string(), it.to_string(), v.to_string()])
                .map_err(write_err(&path))?;
        }
    }
    finish(w, &path)?;

    let manifest = DrawsManifest {
        n_vars: m,
        n_times: draws.n_times,
        basis_size: k,
        var_names: draws.var_names.clone(),
        time_labels: draws.time_labels.clone(),
        draws_per_chain: draws.chains.iter().map(ChainDraws::len).collect(),
        sampler: sampler.clone(),
        transition_estimated: draws.has_transition(),
        states_stored: draws.has_states(),
        timings_secs: timings_secs.to_vec(),
        run,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| Error::parse(&path, e.to_string()))?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DrawsManifest> {
    let path = dir.join(MANIFEST_FILE);
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::parse(&path, e.to_string()))
}

/// Read every row of a draws CSV as string fields, checking the header.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(f));
    let got = r.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::parse(path, format!("expected header {header:?}, found {got:?}")));
    }
    r.records().map(|rec| rec.map_err(|e| Error::parse(path, e.to_string()))).collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, format!("bad field {idx} in record {rec:?}")))
}

struct Slots {
    /// `(chain, iter)` -> row in that chain's draw list
    position: HashMap<(usize, usize), usize>,
}

impl Slots {
    fn get(&self, path: &Path, chain: usize, iter: usize) -> Result<(usize, usize)> {
        self.position
            .get(&(chain, iter))
            .map(|&p| (chain, p))
            .ok_or_else(|| Error::parse(path, format!("draw (chain {chain}, iter {iter}) is not in loglik.csv")))
    }
}

pub fn read_draws(dir: &Path) -> Result<(PosteriorDraws, DrawsManifest)> {
    let man = read_manifest(dir)?;
    let (m, k, t_n) = (man.n_vars, man.basis_size, man.n_times);
    let n_chains = man.draws_per_chain.len();
    let mut chains: Vec<ChainDraws> = (0..n_chains)
        .map(|c| ChainDraws {
            chain: c,
            iterations: Vec::new(),
            tau2: Vec::new(),
            sigma2: Vec::new(),
            transition: man.transition_estimated.then(Vec::new),
            states: man.states_stored.then(Vec::new),
            loglik: Vec::new(),
        })
        .collect();

    let path = dir.join("loglik.csv");
    let mut slots = Slots { position: HashMap::new() };
    for rec in read_rows(&path, &["chain", "iter", "value"])? {
        let c: usize = field(&path, &rec, 0)?;
        let it: usize = field(&path, &rec, 1)?;
        let chain = chains
            .get_mut(c)
            .ok_or_else(|| Error::parse(&path, format!("chain {c} not in manifest")))?;
        slots.position.insert((c, it), chain.iterations.len());
        chain.iterations.push(it);
        chain.loglik.push(field(&path, &rec, 2)?);
    }
    for (c, chain) in chains.iter_mut().enumerate() {
        if chain.len() != man.draws_per_chain[c] {
            return Err(Error::parse(&path, format!("chain {c}: manifest lists {} draws, found {}", man.draws_per_chain[c], chain.len())));
        }
        let n = chain.len();
        chain.tau2 = vec![vec![f64::NAN; m]; n];
        chain.sigma2 = vec![vec![f64::NAN; t_n * m]; n];
        if let Some(tr) = chain.transition.as_mut() {
            *tr = vec![vec![f64::NAN; m * m * k]; n];
        }
        if let Some(st) = chain.states.as_mut() {
            *st = vec![vec![f64::NAN; (t_n + 1) * m * k]; n];
        }
    }
    let var_idx = |path: &Path, name: &str| -> Result<usize> {
        man.var_names
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::parse(path, format!("unknown variable {name:?}")))
    };
    let time_idx: HashMap<YearMonth, usize> = man.time_labels.iter().enumerate().map(|(t, ym)| (*ym, t)).collect();

    let path = dir.join("tau2.csv");
    for rec in read_rows(&path, &["chain", "iter", "variable", "value"])? {
        let (c, p) = slots.get(&path, field(&path, &rec, 0)?, field(&path, &rec, 1)?)?;
        let i = var_idx(&path, &rec[2])?;
        chains[c].tau2[p][i] = field(&path, &rec, 3)?;
    }

    let path = dir.join("sigma2.csv");
    for rec in read_rows(&path, &["chain", "iter", "variable", "time", "value"])? {
        let (c, p) = slots.get(&path, field(&path, &rec, 0)?, field(&path, &rec, 1)?)?;
        let i = var_idx(&path, &rec[2])?;
        let ym: YearMonth = field(&path, &rec, 3)?;
        let t = *time_idx
            .get(&ym)
            .ok_or_else(|| Error::parse(&path, format!("unknown time {ym}")))?;
        chains[c].sigma2[p][t * m + i] = field(&path, &rec, 4)?;
    }

    if man.transition_estimated {
        let path = dir.join("transition.csv");
        for rec in read_rows(&path, &["chain", "iter", "i", "j", "k", "value"])? {
            let (c, p) = slots.get(&path, field(&path, &rec, 0)?, field(&path, &rec, 1)?)?;
            let (i, j, kk): (usize, usize, usize) = (field(&path, &rec, 2)?, field(&path, &rec, 3)?, field(&path, &rec, 4)?);
            if i >= m || j >= m || kk >= k {
                return Err(Error::parse(&path, format!("index ({i}, {j}, {kk}) out of range")));
            }
            chains[c].transition.as_mut().unwrap()[p][(i * m + j) * k + kk] = field(&path, &rec, 5)?;
        }
    }

    if man.states_stored {
        let path = dir.join("states.csv");
        let dim = m * k;
        for rec in read_rows(&path, &["chain", "iter", "time", "index", "value"])? {
            let (c, p) = slots.get(&path, field(&path, &rec, 0)?, field(&path, &rec, 1)?)?;
            let (t, idx): (usize, usize) = (field(&path, &rec, 2)?, field(&path, &rec, 3)?);
            if t > t_n || idx >= dim {
                return Err(Error::parse(&path, format!("state index ({t}, {idx}) out of range")));
            }
            chains[c].states.as_mut().unwrap()[p][t * dim + idx] = field(&path, &rec, 4)?;
        }
    }

    let complete = chains.iter().all(|c| {
        c.tau2.iter().chain(&c.sigma2).flatten().all(|v| !v.is_nan())
            && c.transition.iter().flatten().flatten().all(|v| !v.is_nan())
            && c.states.iter().flatten().flatten().all(|v| !v.is_nan())
    });
    if !complete {
        return Err(Error::parse(dir, "draw files are missing entries"));
    }

    Ok((
        PosteriorDraws {
            n_vars: m,
            n_times: t_n,
            basis_size: k,
            var_names: man.var_names.clone(),
            time_labels: man.time_labels.clone(),
            chains,
        },
        man,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_draws(with_optional: bool) -> PosteriorDraws {
        let (m, k, t_n) = (2, 3, 2);
        let chain = |c: usize| ChainDraws {
            chain: c,
            iterations: vec![3, 5],
            tau2: vec![vec![0.1 + c as f64, 1.0 / 3.0], vec![2.5, 1e-300]],
            sigma2: vec![vec![0.5, 0.25, 0.125, std::f64::consts::PI]; 2],
            transition: with_optional.then(|| vec![(0..m * m * k).map(|v| v as f64 * 0.1 - 0.7).collect(); 2]),
            states: with_optional.then(|| vec![(0..(t_n + 1) * m * k).map(|v| (v as f64).sin()).collect(); 2]),
            loglik: vec![-123.456, -1e10],
        };
        PosteriorDraws {
            n_vars: m,
            n_times: t_n,
            basis_size: k,
            var_names: vec!["x".into(), "y,z".into()],
            time_labels: YearMonth::new(1999, 12).unwrap().series(t_n),
            chains: vec![chain(0), chain(1)],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for opt in [true, false] {
            let dir = tempfile::tempdir().unwrap();
            let draws = sample_draws(opt);
            let cfg = SamplerConfig::new(6, 9);
            write_draws(dir.path(), &draws, &cfg, &[0.5, 0.25], serde_json::json!({"label": "t"})).unwrap();
            assert_eq!(dir.path().join("transition.csv").exists(), opt);
            let (back, man) = read_draws(dir.path()).unwrap();
            assert_eq!(back, draws);
            assert_eq!(man.sampler, cfg);
            assert_eq!(man.run["label"], "t");
        }
    }

    #[test]
    fn header_mismatch_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_draws(dir.path(), &sample_draws(false), &SamplerConfig::new(6, 9), &[], serde_json::Value::Null).unwrap();
        fs::write(dir.path().join("tau2.csv"), "a,b\n").unwrap();
        let err = read_draws(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = read_draws(Path::new("/nonexistent/draws")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
