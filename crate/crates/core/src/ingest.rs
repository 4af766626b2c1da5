//! Gridded monthly series: regridding, climatologies and standardized anomalies.
//!
//! A dataset directory holds one CSV per variable with header
//! `time,lat,lon,value` (empty value = missing) and a `manifest.json`
//! describing the grid, the variables and the time axis.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GeoPoint;
use crate::model::{ObservationTensor, YearMonth};
use crate::parallel::{map_range, Exec};

pub const DATASET_MANIFEST: &str = "manifest.json";

/// Regular cell-centred latitude-longitude grid. Row 0 is the northernmost
/// band, column 0 starts at 180W.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatLonGrid {
    pub n_lat: usize,
    pub n_lon: usize,
}

impl LatLonGrid {
    pub fn new(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat == 0 || n_lon == 0 {
            return Err(Error::Argument(format!("grid dimensions must be positive, got {n_lat}x{n_lon}")));
        }
        Ok(Self { n_lat, n_lon })
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn dlat(&self) -> f64 {
        180.0 / self.n_lat as f64
    }

    pub fn dlon(&self) -> f64 {
        360.0 / self.n_lon as f64
    }

    pub fn center(&self, r: usize, c: usize) -> (f64, f64) {
        (90.0 - (r as f64 + 0.5) * self.dlat(), -180.0 + (c as f64 + 0.5) * self.dlon())
    }

    /// `(south, north)` edges of row `r` in degrees.
    pub fn lat_edges(&self, r: usize) -> (f64, f64) {
        (90.0 - (r + 1) as f64 * self.dlat(), 90.0 - r as f64 * self.dlat())
    }

    /// `(west, east)` edges of column `c` in degrees.
    pub fn lon_edges(&self, c: usize) -> (f64, f64) {
        (-180.0 + c as f64 * self.dlon(), -180.0 + (c + 1) as f64 * self.dlon())
    }

    /// Cell centres in canonical order: descending latitude, then ascending longitude.
    pub fn locations(&self) -> Vec<GeoPoint> {
        (0..self.n_lat)
            .flat_map(|r| (0..self.n_lon).map(move |c| (r, c)))
            .map(|(r, c)| {
                let (lat, lon) = self.center(r, c);
                GeoPoint::from_degrees(lat, lon).expect("cell centres are valid")
            })
            .collect()
    }

    /// Cell containing a centre given in degrees, if it matches one.
    fn locate(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let r = ((90.0 - lat) / self.dlat() - 0.5).round();
        let c = ((lon + 180.0) / self.dlon() - 0.5).round();
        if r < 0.0 || c < 0.0 || r as usize >= self.n_lat || c as usize >= self.n_lon {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        let (clat, clon) = self.center(r, c);
        ((clat - lat).abs() < 1e-6 && (clon - lon).abs() < 1e-6).then_some((r, c))
    }
}

/// One variable on a lat-lon grid over consecutive months.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedSeries {
    pub name: String,
    pub grid: LatLonGrid,
    pub times: Vec<YearMonth>,
    /// `[t * n_cells + r * n_lon + c]`
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl GriddedSeries {
    pub fn new(name: impl Into<String>, grid: LatLonGrid, times: Vec<YearMonth>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let name = name.into();
        let len = times.len() * grid.n_cells();
        if values.len() != len || mask.len() != len {
            return Err(Error::Alignment(format!(
                "series {name}: expected {len} values, got {} values and {} mask entries",
                values.len(),
                mask.len()
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!("series {name}: time axis must be strictly increasing")));
        }
        if let Some(p) = (0..len).find(|&p| mask[p] && !values[p].is_finite()) {
            return Err(Error::Argument(format!("series {name}: non-finite value at flat index {p}")));
        }
        // normalise hidden slots so equality ignores whatever was stored there
        let values = values.into_iter().zip(&mask).map(|(v, &m)| if m { v } else { 0.0 }).collect();
        Ok(Self { name, grid, times, values, mask })
    }

    /// Build from optional values.
    pub fn from_options(name: impl Into<String>, grid: LatLonGrid, times: Vec<YearMonth>, values: Vec<Option<f64>>) -> Result<Self> {
        let mask = values.iter().map(Option::is_some).collect();
        let values = values.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        Self::new(name, grid, times, values, mask)
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    #[inline]
    fn index(&self, t: usize, r: usize, c: usize) -> usize {
        t * self.grid.n_cells() + r * self.grid.n_lon + c
    }

    pub fn get(&self, t: usize, r: usize, c: usize) -> Option<f64> {
        let p = self.index(t, r, c);
        self.mask[p].then_some(self.values[p])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        let err = |e: csv::Error| Error::parse(path, e.to_string());
        w.write_record(["time", "lat", "lon", "value"]).map_err(err)?;
        for (t, ym) in self.times.iter().enumerate() {
            let label = ym.to_string();
            for r in 0..self.grid.n_lat {
                for c in 0..self.grid.n_lon {
                    let (lat, lon) = self.grid.center(r, c);
                    let v = self.get(t, r, c).map(|v| v.to_string()).unwrap_or_default();
                    w.write_record([label.as_str(), &lat.to_string(), &lon.to_string(), &v]).map_err(err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a CSV onto a known grid and time axis. Absent rows are missing.
    pub fn read_csv(path: &Path, name: impl Into<String>, grid: LatLonGrid, times: Vec<YearMonth>) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(f));
        let header = rd.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
        if header.iter().ne(["time", "lat", "lon", "value"]) {
            return Err(Error::parse(path, format!("expected header time,lat,lon,value, found {header:?}")));
        }
        let t_index: BTreeMap<YearMonth, usize> = times.iter().enumerate().map(|(t, ym)| (*ym, t)).collect();
        let len = times.len() * grid.n_cells();
        let mut values = vec![0.0; len];
        let mut mask = vec![false; len];
        let mut seen = vec![false; len];
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let bad = |what: &str| Error::parse(path, format!("row {}: {what}", line + 2));
            let ym: YearMonth = rec[0].parse().map_err(|_| bad("bad time"))?;
            let t = *t_index.get(&ym).ok_or_else(|| bad("time not on the axis"))?;
            let lat: f64 = rec[1].parse().map_err(|_| bad("bad lat"))?;
            let lon: f64 = rec[2].parse().map_err(|_| bad("bad lon"))?;
            let (r, c) = grid.locate(lat, lon).ok_or_else(|| bad("coordinates are not a cell centre"))?;
            let p = t * grid.n_cells() + r * grid.n_lon + c;
            if seen[p] {
                return Err(bad("duplicate cell"));
            }
            seen[p] = true;
            if !rec[3].is_empty() {
                values[p] = rec[3].parse().map_err(|_| bad("bad value"))?;
                mask[p] = true;
            }
        }
        Self::new(name, grid, times, values, mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableFile {
    pub name: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid: LatLonGrid,
    pub times: Vec<YearMonth>,
    pub variables: Vec<VariableFile>,
}

/// Write a dataset directory; all series must share grid and time axis.
pub fn write_dataset(dir: &Path, series: &[GriddedSeries]) -> Result<()> {
    let first = check_aligned(series)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut variables = Vec::with_capacity(series.len());
    for s in series {
        let file = format!("{}.csv", s.name);
        s.write_csv(&dir.join(&file))?;
        variables.push(VariableFile { name: s.name.clone(), file });
    }
    let manifest = DatasetManifest { grid: first.grid, times: first.times.clone(), variables };
    write_json(&dir.join(DATASET_MANIFEST), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<GriddedSeries>> {
    let man: DatasetManifest = read_json(&dir.join(DATASET_MANIFEST))?;
    man.variables
        .iter()
        .map(|v| GriddedSeries::read_csv(&dir.join(&v.file), v.name.clone(), man.grid, man.times.clone()))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::parse(path, e.to_string()))
}

fn check_aligned(series: &[GriddedSeries]) -> Result<&GriddedSeries> {
    let first = series.first().ok_or_else(|| Error::Argument("no series given".into()))?;
    for s in &series[1..] {
        if s.grid != first.grid || s.times != first.times {
            return Err(Error::Alignment(format!(
                "series {} does not share the grid and time axis of {}",
                s.name, first.name
            )));
        }
    }
    Ok(first)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegridMode {
    /// Weight each source cell by its spherical area inside the target cell.
    #[default]
    AreaWeighted,
    /// Weight by overlap in degree units, ignoring latitude.
    Unweighted,
}

/// Fractional overlaps `(source index, weight)` of each target interval.
fn overlaps(n_src: usize, n_dst: usize, src_edges: impl Fn(usize) -> (f64, f64), dst_edges: impl Fn(usize) -> (f64, f64), measure: impl Fn(f64, f64) -> f64) -> Vec<Vec<(usize, f64)>> {
    (0..n_dst)
        .map(|d| {
            let (lo, hi) = dst_edges(d);
            (0..n_src)
                .filter_map(|s| {
                    let (slo, shi) = src_edges(s);
                    let (a, b) = (lo.max(slo), hi.min(shi));
                    (b - a > 1e-12).then(|| (s, measure(a, b)))
                })
                .collect()
        })
        .collect()
}

/// Block-average `series` onto `target` with fractional cell overlaps.
/// Missing source cells drop out; a target cell with no observed source is missing.
pub fn regrid_average(series: &GriddedSeries, target: LatLonGrid, mode: RegridMode, exec: Exec) -> Result<GriddedSeries> {
    let src = series.grid;
    let lat_measure = move |a: f64, b: f64| match mode {
        RegridMode::AreaWeighted => b.to_radians().sin() - a.to_radians().sin(),
        RegridMode::Unweighted => b - a,
    };
    let lat_w = overlaps(src.n_lat, target.n_lat, |r| src.lat_edges(r), |r| target.lat_edges(r), lat_measure);
    let lon_w = overlaps(src.n_lon, target.n_lon, |c| src.lon_edges(c), |c| target.lon_edges(c), |a, b| b - a);
    let slices = map_range(exec, series.n_times(), |t| {
        let mut vals = Vec::with_capacity(target.n_cells());
        for lw in &lat_w {
            for ow in &lon_w {
                let (mut num, mut den) = (0.0, 0.0);
                for &(r, wr) in lw {
                    for &(c, wc) in ow {
                        if let Some(v) = series.get(t, r, c) {
                            num += wr * wc * v;
                            den += wr * wc;
                        }
                    }
                }
                vals.push((den > 0.0).then(|| num / den));
            }
        }
        vals
    });
    GriddedSeries::from_options(series.name.clone(), target, series.times.clone(), slices.concat())
}

/// Per-cell, per-calendar-month mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub grid: LatLonGrid,
    /// `[(month - 1) * n_cells + cell]`
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: Vec<usize>,
}

impl Climatology {
    /// `(mean, std)` for a cell, or an error when fewer than two values went in.
    pub fn cell(&self, month: u8, r: usize, c: usize) -> Result<(f64, f64)> {
        let p = (month as usize - 1) * self.grid.n_cells() + r * self.grid.n_lon + c;
        if self.count[p] < 2 {
            return Err(Error::Domain(format!(
                "climatology for month {month} at cell ({r}, {c}) has {} value(s); need at least 2",
                self.count[p]
            )));
        }
        Ok((self.mean[p], self.std[p]))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        let err = |e: csv::Error| Error::parse(path, e.to_string());
        w.write_record(["lat", "lon", "month", "mean", "std"]).map_err(err)?;
        let n = self.grid.n_cells();
        for r in 0..self.grid.n_lat {
            for c in 0..self.grid.n_lon {
                let (lat, lon) = self.grid.center(r, c);
                for month in 1..=12usize {
                    let p = (month - 1) * n + r * self.grid.n_lon + c;
                    let (mean, std) = match self.count[p] {
                        0 => (String::new(), String::new()),
                        1 => (self.mean[p].to_string(), String::new()),
                        _ => (self.mean[p].to_string(), self.std[p].to_string()),
                    };
                    w.write_record([lat.to_string(), lon.to_string(), month.to_string(), mean, std]).map_err(err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn compute_climatology(series: &GriddedSeries, years: RangeInclusive<i32>) -> Result<Climatology> {
    let n = series.grid.n_cells();
    let mut sum = vec![0.0; 12 * n];
    let mut count = vec![0usize; 12 * n];
    let in_ref: Vec<usize> = (0..series.n_times()).filter(|&t| years.contains(&series.times[t].year)).collect();
    if in_ref.is_empty() {
        return Err(Error::Argument(format!("no times of {} fall in years {years:?}", series.name)));
    }
    for &t in &in_ref {
        let base = (series.times[t].month as usize - 1) * n;
        for cell in 0..n {
            let p = t * n + cell;
            if series.mask[p] {
                sum[base + cell] += series.values[p];
                count[base + cell] += 1;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let mut ss = vec![0.0; 12 * n];
    for &t in &in_ref {
        let base = (series.times[t].month as usize - 1) * n;
        for cell in 0..n {
            let p = t * n + cell;
            if series.mask[p] {
                let d = series.values[p] - mean[base + cell];
                ss[base + cell] += d * d;
            }
        }
    }
    let std = ss
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 1 { (s / (c - 1) as f64).sqrt() } else { 0.0 })
        .collect();
    Ok(Climatology { grid: series.grid, mean, std, count })
}

fn check_clim(series: &GriddedSeries, clim: &Climatology) -> Result<()> {
    if series.grid != clim.grid {
        return Err(Error::Alignment(format!("climatology grid does not match series {}", series.name)));
    }
    Ok(())
}

/// `(value - mean) / std` per cell and calendar month; missing stays missing.
pub fn standardize_anomalies(series: &GriddedSeries, clim: &Climatology) -> Result<GriddedSeries> {
    check_clim(series, clim)?;
    let g = series.grid;
    let mut out = Vec::with_capacity(series.values.len());
    for (t, ym) in series.times.iter().enumerate() {
        for r in 0..g.n_lat {
            for c in 0..g.n_lon {
                out.push(match series.get(t, r, c) {
                    None => None,
                    Some(v) => {
                        let (mean, std) = clim.cell(ym.month, r, c)?;
                        if !(std > 1e-12 * mean.abs().max(1.0)) {
                            let (lat, lon) = g.center(r, c);
                            return Err(Error::Domain(format!(
                                "zero climatological std for {} month {} at cell ({r}, {c}) = ({lat}, {lon})",
                                series.name, ym.month
                            )));
                        }
                        Some((v - mean) / std)
                    }
                });
            }
        }
    }
    GriddedSeries::from_options(series.name.clone(), g, series.times.clone(), out)
}

/// Inverse of [`standardize_anomalies`].
pub fn restore_from_anomalies(anoms: &GriddedSeries, clim: &Climatology) -> Result<GriddedSeries> {
    check_clim(anoms, clim)?;
    let g = anoms.grid;
    let mut out = Vec::with_capacity(anoms.values.len());
    for (t, ym) in anoms.times.iter().enumerate() {
        for r in 0..g.n_lat {
            for c in 0..g.n_lon {
                out.push(match anoms.get(t, r, c) {
                    None => None,
                    Some(v) => {
                        let (mean, std) = clim.cell(ym.month, r, c)?;
                        Some(v * std + mean)
                    }
                });
            }
        }
    }
    GriddedSeries::from_options(anoms.name.clone(), g, anoms.times.clone(), out)
}

/// Stack aligned series into a `T x M x N` tensor with canonical location order.
pub fn to_observation_tensor(series: &[GriddedSeries]) -> Result<ObservationTensor> {
    let first = check_aligned(series)?;
    let n = first.grid.n_cells();
    let m = series.len();
    let mut values = Vec::with_capacity(first.n_times() * m * n);
    let mut mask = Vec::with_capacity(values.capacity());
    for t in 0..first.n_times() {
        for s in series {
            values.extend_from_slice(&s.values[t * n..(t + 1) * n]);
            mask.extend_from_slice(&s.mask[t * n..(t + 1) * n]);
        }
    }
    ObservationTensor::new(
        m,
        values,
        mask,
        first.grid.locations(),
        first.times.clone(),
        series.iter().map(|s| s.name.clone()).collect(),
    )
}

/// Split a tensor whose locations are the cells of `grid` back into series.
pub fn series_from_tensor(obs: &ObservationTensor, grid: LatLonGrid) -> Result<Vec<GriddedSeries>> {
    if obs.n_locs() != grid.n_cells() {
        return Err(Error::Alignment(format!(
            "tensor has {} locations, grid has {} cells",
            obs.n_locs(),
            grid.n_cells()
        )));
    }
    (0..obs.n_vars())
        .map(|i| {
            let vals = (0..obs.n_times())
                .flat_map(|t| (0..obs.n_locs()).map(move |s| obs.get(t, i, s)))
                .collect();
            GriddedSeries::from_options(obs.var_names[i].clone(), grid, obs.time_labels.clone(), vals)
        })
        .collect()
}
