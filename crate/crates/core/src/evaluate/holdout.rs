use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObservationTensor, YearMonth};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoldoutSpec {
    /// One variable inside a lon/lat box over an inclusive month window.
    SpatialBlock {
        variable: String,
        lon_min: f64,
        lon_max: f64,
        lat_min: f64,
        lat_max: f64,
        start: YearMonth,
        end: YearMonth,
    },
    /// Whole time series at a seeded random subset of `round(fraction * N)`
    /// locations, for one variable or (when `variable` is absent) all of them.
    RandomFraction {
        fraction: f64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variable: Option<String>,
    },
}

impl HoldoutSpec {
    /// 155W-35W, 5S-80N, August 1991 to July 1994.
    pub fn north_america(variable: impl Into<String>) -> Self {
        HoldoutSpec::SpatialBlock {
            variable: variable.into(),
            lon_min: -155.0,
            lon_max: -35.0,
            lat_min: -5.0,
            lat_max: 80.0,
            start: YearMonth { year: 1991, month: 8 },
            end: YearMonth { year: 1994, month: 7 },
        }
    }

    /// Variable whose entries are scored, if the mask targets a single one.
    pub fn variable(&self) -> Option<&str> {
        match self {
            HoldoutSpec::SpatialBlock { variable, .. } => Some(variable),
            HoldoutSpec::RandomFraction { variable, .. } => variable.as_deref(),
        }
    }
}

/// A hold-out specification resolved against a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutMask {
    pub spec: HoldoutSpec,
    /// Same layout as the tensor: `true` = held out.
    pub hide: Vec<bool>,
    n_vars: usize,
    n_locs: usize,
}

impl HoldoutMask {
    pub fn count(&self) -> usize {
        self.hide.iter().filter(|&&h| h).count()
    }

    /// Held-out `(t, i, s)` triples in tensor order.
    pub fn entries(&self) -> Vec<(usize, usize, usize)> {
        let (m, n) = (self.n_vars, self.n_locs);
        self.hide
            .iter()
            .enumerate()
            .filter(|(_, &h)| h)
            .map(|(p, _)| (p / (m * n), (p / n) % m, p % n))
            .collect()
    }
}

fn in_lon_range(lon: f64, lo: f64, hi: f64) -> bool {
    if lo <= hi {
        lo <= lon && lon <= hi
    } else {
        lon >= lo || lon <= hi
    }
}

pub fn build_holdout_mask(spec: &HoldoutSpec, obs: &ObservationTensor) -> Result<HoldoutMask> {
    let (t_n, m, n) = (obs.n_times(), obs.n_vars(), obs.n_locs());
    let mut hide = vec![false; t_n * m * n];
    match spec {
        HoldoutSpec::SpatialBlock { variable, lon_min, lon_max, lat_min, lat_max, start, end } => {
            if lat_min > lat_max || start > end {
                return Err(Error::Config("hold-out block has inverted bounds".into()));
            }
            if [*lon_min, *lon_max].iter().any(|l| !(-180.0..=180.0).contains(l)) || *lat_min < -90.0 || *lat_max > 90.0 {
                return Err(Error::Config("hold-out block bounds lie outside the globe".into()));
            }
            let i = obs.var_index(variable)?;
            let locs: Vec<usize> = (0..n)
                .filter(|&s| {
                    let p = obs.locations[s];
                    (*lat_min..=*lat_max).contains(&p.lat_deg()) && in_lon_range(p.lon_deg(), *lon_min, *lon_max)
                })
                .collect();
            for t in (0..t_n).filter(|&t| (*start..=*end).contains(&obs.time_labels[t])) {
                for &s in &locs {
                    hide[obs.index(t, i, s)] = true;
                }
            }
        }
        HoldoutSpec::RandomFraction { fraction, seed, variable } => {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(Error::Config(format!("hold-out fraction must be in (0, 1), got {fraction}")));
            }
            let vars: Vec<usize> = match variable {
                Some(v) => vec![obs.var_index(v)?],
                None => (0..m).collect(),
            };
            let count = (fraction * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(*seed, 0));
            for &s in &order[..count] {
                for t in 0..t_n {
                    for &i in &vars {
                        hide[obs.index(t, i, s)] = true;
                    }
                }
            }
        }
    }
    let hidden = hide.iter().filter(|&&h| h).count();
    if hidden == 0 {
        return Err(Error::Config("hold-out mask selects no entries".into()));
    }
    if hidden == hide.len() {
        return Err(Error::Config("hold-out mask selects every entry".into()));
    }
    Ok(HoldoutMask { spec: spec.clone(), hide, n_vars: m, n_locs: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::LatLonGrid;

    fn tensor(n_lat: usize, n_lon: usize, start: YearMonth, n_t: usize) -> ObservationTensor {
        let g = LatLonGrid::new(n_lat, n_lon).unwrap();
        let len = n_t * 3 * g.n_cells();
        ObservationTensor::new(3, vec![0.0; len], vec![true; len], g.locations(), start.series(n_t), vec!["U10".into(), "T50".into(), "AOD".into()]).unwrap()
    }

    #[test]
    fn north_america_block() {
        let obs = tensor(24, 48, YearMonth::new(1984, 1).unwrap(), 144);
        let mask = build_holdout_mask(&HoldoutSpec::north_america("T50"), &obs).unwrap();
        let entries = mask.entries();
        // latitude centres in [-5, 80]: 78.75 .. -3.75 -> 12 rows; longitude centres in [-155, -35]: -153.75 .. -41.25 -> 16 columns
        assert_eq!(entries.len(), 12 * 16 * 36);
        assert!(entries.iter().all(|&(_, i, _)| i == 1));
        let times: Vec<usize> = entries.iter().map(|e| e.0).collect();
        assert_eq!(obs.time_labels[*times.iter().min().unwrap()].to_string(), "1991-08");
        assert_eq!(obs.time_labels[*times.iter().max().unwrap()].to_string(), "1994-07");
        for &(_, _, s) in &entries {
            let p = obs.locations[s];
            assert!((-155.0..=-35.0).contains(&p.lon_deg()) && (-5.0..=80.0).contains(&p.lat_deg()));
        }
    }

    #[test]
    fn random_fraction_masks_whole_series() {
        let obs = tensor(24, 48, YearMonth::new(1984, 1).unwrap(), 4);
        let spec = HoldoutSpec::RandomFraction { fraction: 0.1, seed: 7, variable: None };
        let mask = build_holdout_mask(&spec, &obs).unwrap();
        let locs: std::collections::BTreeSet<usize> = mask.entries().iter().map(|e| e.2).collect();
        assert_eq!(locs.len(), 115);
        assert_eq!(mask.count(), 115 * 4 * 3);
        assert_eq!(build_holdout_mask(&spec, &obs).unwrap(), mask);
        let other = build_holdout_mask(&HoldoutSpec::RandomFraction { fraction: 0.1, seed: 8, variable: None }, &obs).unwrap();
        assert_ne!(other.hide, mask.hide);
        let one = build_holdout_mask(&HoldoutSpec::RandomFraction { fraction: 0.1, seed: 7, variable: Some("AOD".into()) }, &obs).unwrap();
        assert_eq!(one.count(), 115 * 4);
    }

    #[test]
    fn empty_and_full_masks_are_rejected() {
        let obs = tensor(4, 8, YearMonth::new(1984, 1).unwrap(), 2);
        assert!(build_holdout_mask(&HoldoutSpec::north_america("T50"), &obs).is_err());
        assert!(build_holdout_mask(&HoldoutSpec::RandomFraction { fraction: 1.0, seed: 1, variable: None }, &obs).is_err());
        assert!(build_holdout_mask(&HoldoutSpec::RandomFraction { fraction: 0.001, seed: 1, variable: None }, &obs).is_err());
        assert!(build_holdout_mask(&HoldoutSpec::north_america("nope"), &obs).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let json = serde_json::to_value(HoldoutSpec::north_america("T50")).unwrap();
        assert_eq!(json["kind"], "spatial_block");
        assert_eq!(json["start"], "1991-08");
        let back: HoldoutSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, HoldoutSpec::north_america("T50"));
    }
}
