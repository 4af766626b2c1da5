//! Icosahedral basis grid on the unit sphere.
//!
//! The grid is built by repeated midpoint subdivision of the 20 faces of an
//! icosahedron that has one vertex on each pole. Nodes are deduplicated on
//! quantized Cartesian coordinates, projected back onto the sphere and then
//! sorted by descending latitude and ascending longitude, which gives a
//! deterministic node index for every level.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest subdivision level accepted by [`build_icosahedral_grid`] (10 242 nodes).
pub const MAX_LEVEL: u32 = 5;

const DEDUP_QUANTUM: f64 = 1e-9;

/// Point on the unit sphere, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validated constructor; `lat` in `[-pi/2, pi/2]`, `lon` in `[-pi, pi)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Domain(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if lat.abs() > PI / 2.0 + 1e-12 {
            return Err(Error::Domain(format!("latitude {lat} outside [-pi/2, pi/2]")));
        }
        if !(-PI..PI).contains(&lon) {
            return Err(Error::Domain(format!("longitude {lon} outside [-pi, pi)")));
        }
        Ok(Self {
            lat: lat.clamp(-PI / 2.0, PI / 2.0),
            lon,
        })
    }

    /// Build from degrees, wrapping longitude into `[-180, 180)`.
    pub fn from_degrees(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        Self::new(lat_deg.to_radians(), wrap_lon(lon_deg.to_radians()))
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat.to_degrees()
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon.to_degrees()
    }

    fn from_unit_vector(v: [f64; 3]) -> Self {
        let lat = v[2].clamp(-1.0, 1.0).asin();
        let lon = if v[0].abs() < 1e-12 && v[1].abs() < 1e-12 {
            0.0
        } else {
            wrap_lon(v[1].atan2(v[0]))
        };
        Self { lat, lon }
    }

    fn to_unit_vector(self) -> [f64; 3] {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        [cl * co, cl * so, sl]
    }
}

fn wrap_lon(lon: f64) -> f64 {
    let mut x = (lon + PI).rem_euclid(2.0 * PI) - PI;
    if x >= PI {
        x -= 2.0 * PI;
    }
    x
}

/// Great-circle angle between two points (haversine form).
pub fn great_circle_distance(p: GeoPoint, q: GeoPoint) -> f64 {
    let dlat = q.lat - p.lat;
    let dlon = q.lon - p.lon;
    let h = (dlat / 2.0).sin().powi(2) + p.lat.cos() * q.lat.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisGrid {
    level: u32,
    centers: Vec<GeoPoint>,
    adjacency: Vec<Vec<usize>>,
}

impl BasisGrid {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of nodes `K`.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[GeoPoint] {
        &self.centers
    }

    /// Sorted neighbor indices of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn neighbor_count(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_export(&self) -> GridExport {
        let round10 = |x: f64| (x * 1e10).round() / 1e10;
        GridExport {
            level: self.level,
            centers: self
                .centers
                .iter()
                .map(|c| ExportPoint {
                    lat_deg: round10(c.lat_deg()),
                    lon_deg: round10(c.lon_deg()),
                })
                .collect(),
            adjacency: self.adjacency.clone(),
        }
    }
}

/// JSON layout written by the `grid` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridExport {
    pub level: u32,
    pub centers: Vec<ExportPoint>,
    pub adjacency: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

pub fn expected_node_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn quantize(v: [f64; 3]) -> (i64, i64, i64) {
    let q = |x: f64| (x / DEDUP_QUANTUM).round() as i64;
    (q(v[0]), q(v[1]), q(v[2]))
}

struct Mesh {
    vertices: Vec<[f64; 3]>,
    lookup: HashMap<(i64, i64, i64), usize>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    fn vertex(&mut self, v: [f64; 3]) -> usize {
        let v = normalize(v);
        let key = quantize(v);
        if let Some(&i) = self.lookup.get(&key) {
            return i;
        }
        self.vertices.push(v);
        self.lookup.insert(key, self.vertices.len() - 1);
        self.vertices.len() - 1
    }

    fn icosahedron() -> Self {
        let mut mesh = Mesh {
            vertices: Vec::new(),
            lookup: HashMap::new(),
            faces: Vec::new(),
        };
        let ring_lat = 0.5f64.atan();
        let north = mesh.vertex([0.0, 0.0, 1.0]);
        let upper: Vec<usize> = (0..5)
            .map(|k| {
                let p = GeoPoint {
                    lat: ring_lat,
                    lon: wrap_lon(k as f64 * 2.0 * PI / 5.0),
                };
                mesh.vertex(p.to_unit_vector())
            })
            .collect();
        let lower: Vec<usize> = (0..5)
            .map(|k| {
                let p = GeoPoint {
                    lat: -ring_lat,
                    lon: wrap_lon(PI / 5.0 + k as f64 * 2.0 * PI / 5.0),
                };
                mesh.vertex(p.to_unit_vector())
            })
            .collect();
        let south = mesh.vertex([0.0, 0.0, -1.0]);
        for k in 0..5 {
            let k1 = (k + 1) % 5;
            mesh.faces.push([north, upper[k], upper[k1]]);
            mesh.faces.push([upper[k], lower[k], upper[k1]]);
            mesh.faces.push([upper[k1], lower[k], lower[k1]]);
            mesh.faces.push([south, lower[k1], lower[k]]);
        }
        mesh
    }

    fn subdivide(&mut self) {
        let faces = std::mem::take(&mut self.faces);
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let mid = |m: &mut Mesh, i: usize, j: usize| {
                let (p, q) = (m.vertices[i], m.vertices[j]);
                m.vertex([p[0] + q[0], p[1] + q[1], p[2] + q[2]])
            };
            let ab = mid(self, a, b);
            let bc = mid(self, b, c);
            let ca = mid(self, c, a);
            next.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        self.faces = next;
    }
}

/// Build the icosahedral grid at subdivision depth `level` (`K = 10 * 4^level + 2`).
pub fn build_icosahedral_grid(level: u32) -> Result<BasisGrid> {
    if level > MAX_LEVEL {
        return Err(Error::BoundedResource(format!(
            "grid level {level} exceeds the maximum of {MAX_LEVEL}"
        )));
    }
    let mut mesh = Mesh::icosahedron();
    for _ in 0..level {
        mesh.subdivide();
    }

    let points: Vec<GeoPoint> = mesh
        .vertices
        .iter()
        .map(|&v| GeoPoint::from_unit_vector(v))
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    let key = |p: &GeoPoint| ((p.lat / DEDUP_QUANTUM).round() as i64, p.lon);
    order.sort_by(|&i, &j| {
        let (li, oi) = key(&points[i]);
        let (lj, oj) = key(&points[j]);
        lj.cmp(&li).then(oi.total_cmp(&oj))
    });
    let mut rank = vec![0usize; points.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }

    let mut sets = vec![BTreeSet::new(); points.len()];
    for f in &mesh.faces {
        for e in 0..3 {
            let (a, b) = (rank[f[e]], rank[f[(e + 1) % 3]]);
            sets[a].insert(b);
            sets[b].insert(a);
        }
    }

    Ok(BasisGrid {
        level,
        centers: order.iter().map(|&i| points[i]).collect(),
        adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    })
}

/// Mean great-circle length of the grid edges.
pub fn mesh_spacing(grid: &BasisGrid) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, nbrs) in grid.adjacency.iter().enumerate() {
        for &j in nbrs.iter().filter(|&&j| j > i) {
            total += great_circle_distance(grid.centers[i], grid.centers[j]);
            count += 1;
        }
    }
    total / count as f64
}
