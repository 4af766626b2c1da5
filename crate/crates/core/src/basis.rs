//! Wendland basis matrix, SAR matrix and the Kronecker-structured assemblies
//! built from them.

use crate::error::{Error, Result};
use crate::grid::{great_circle_distance, mesh_spacing, BasisGrid, GeoPoint};
use crate::parallel::{map_slice, Exec};
use crate::sparse::SparseRealMatrix;

/// Default support of each basis function, in multiples of the mean grid spacing.
pub const DEFAULT_RANGE_FACTOR: f64 = 2.5;

/// Basis entries below this magnitude are left out of the sparse pattern.
pub const DROP_TOLERANCE: f64 = 1e-15;

/// Compactly supported Wendland function `(1-d)^6 (35 d^2 + 18 d + 3) / 3` on `[0, 1]`.
pub fn wendland(d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("wendland distance must be >= 0, got {d}")));
    }
    if d >= 1.0 {
        return Ok(0.0);
    }
    let r = 1.0 - d;
    Ok(r.powi(6) * (35.0 * d * d + 18.0 * d + 3.0) / 3.0)
}

#[derive(Debug, Clone)]
pub struct BasisSpec<'a> {
    pub grid: &'a BasisGrid,
    pub range_factor: f64,
    pub obs_locations: &'a [GeoPoint],
}

impl<'a> BasisSpec<'a> {
    pub fn new(grid: &'a BasisGrid, obs_locations: &'a [GeoPoint]) -> Self {
        Self {
            grid,
            range_factor: DEFAULT_RANGE_FACTOR,
            obs_locations,
        }
    }

    /// Support radius in radians: `range_factor * mesh_spacing`.
    pub fn support(&self) -> f64 {
        self.range_factor * mesh_spacing(self.grid)
    }
}

/// `N x K` basis matrix with entry `(s, k) = wendland(dist(s, k) / support)`.
pub fn build_basis_matrix(spec: &BasisSpec<'_>) -> Result<SparseRealMatrix> {
    build_basis_matrix_with(spec, Exec::default())
}

pub fn build_basis_matrix_with(spec: &BasisSpec<'_>, exec: Exec) -> Result<SparseRealMatrix> {
    if spec.obs_locations.is_empty() {
        return Err(Error::Argument("basis matrix needs at least one location".into()));
    }
    if !(spec.range_factor > 0.0 && spec.range_factor.is_finite()) {
        return Err(Error::Argument(format!(
            "range factor must be positive, got {}",
            spec.range_factor
        )));
    }
    let theta = spec.support();
    let centers = spec.grid.centers();
    let rows = map_slice(exec, spec.obs_locations, |&loc| {
        centers
            .iter()
            .enumerate()
            .filter_map(|(k, &c)| {
                let v = wendland(great_circle_distance(loc, c) / theta).unwrap_or(0.0);
                (v.abs() >= DROP_TOLERANCE).then_some((k, v))
            })
            .collect::<Vec<_>>()
    });
    SparseRealMatrix::from_rows(centers.len(), rows)
}

/// `K x K` SAR matrix: `1 + kappa^2` on the diagonal, `-1/n_i` toward each neighbor.
pub fn build_sar_matrix(grid: &BasisGrid, kappa: f64) -> Result<SparseRealMatrix> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("kappa must be > 0, got {kappa}")));
    }
    let diag = 1.0 + kappa * kappa;
    let rows = (0..grid.len())
        .map(|i| {
            let nbrs = grid.neighbors(i);
            let off = -1.0 / nbrs.len() as f64;
            let mut row: Vec<(usize, f64)> = nbrs.iter().map(|&j| (j, off)).collect();
            row.push((i, diag));
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    SparseRealMatrix::from_rows(grid.len(), rows)
}

/// Innovation precision `blockdiag(B'B / tau2_1, ..., B'B / tau2_M)`.
///
/// Takes the Gram matrix `B'B` directly so callers compute it once.
pub fn build_innovation_precision(sar_gram: &SparseRealMatrix, tau2: &[f64]) -> Result<SparseRealMatrix> {
    if tau2.is_empty() {
        return Err(Error::Argument("tau2 must have at least one entry".into()));
    }
    if let Some(bad) = tau2.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("tau2 entries must be positive, got {bad}")));
    }
    let blocks: Vec<_> = tau2.iter().map(|t| (sar_gram, 1.0 / t)).collect();
    SparseRealMatrix::block_diag_scaled(&blocks)
}

/// `I_M (x) Phi`.
pub fn expand_basis(phi: &SparseRealMatrix, m: usize) -> Result<SparseRealMatrix> {
    if m == 0 {
        return Err(Error::Argument("variable count must be >= 1".into()));
    }
    let blocks: Vec<_> = (0..m).map(|_| (phi, 1.0)).collect();
    SparseRealMatrix::block_diag_scaled(&blocks)
}
