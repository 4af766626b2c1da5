//! Compressed sparse row matrices and a sparse Cholesky factorization.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Real matrix in compressed sparse row layout.
///
/// Column indices are strictly increasing within a row, so there are no
/// duplicate entries. Explicit zeros are allowed: the structural pattern is
/// whatever the constructor was given.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRealMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRealMatrix {
    /// Build from `(row, col, value)` triplets in any order.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Argument(format!(
                "matrix dimensions must be positive, got {n_rows}x{n_cols}"
            )));
        }
        for &(r, c, v) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Argument(format!(
                    "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Argument(format!("non-finite value at ({r}, {c})")));
            }
        }
        triplets.sort_by_key(|e| (e.0, e.1));
        if let Some(w) = triplets.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Argument(format!(
                "duplicate entry at ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx: triplets.iter().map(|t| t.1).collect(),
            values: triplets.iter().map(|t| t.2).collect(),
        })
    }

    /// Build from per-row `(col, value)` lists; each list must be sorted by column.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n_rows = rows.len();
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Argument(format!(
                "matrix dimensions must be positive, got {n_rows}x{n_cols}"
            )));
        }
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (r, row) in rows.into_iter().enumerate() {
            let mut last = None;
            for (c, v) in row {
                if c >= n_cols || !v.is_finite() || last.is_some_and(|l| l >= c) {
                    return Err(Error::Argument(format!(
                        "row {r}: invalid or unsorted entry at column {c}"
                    )));
                }
                last = Some(c);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Value at `(r, c)`; structurally absent entries read as zero.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |p| vals[p])
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    /// All entries as `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "dimension mismatch in mul_vec");
        (0..self.n_rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// `self' * x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows, "dimension mismatch in tr_mul_vec");
        let mut out = vec![0.0; self.n_cols];
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * xr;
            }
        }
        out
    }

    /// Quadratic form `x' A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n_cols];
        for (r, c, v) in self.triplets() {
            rows[c].push((r, v));
        }
        Self::from_rows(self.n_rows, rows).expect("transpose of a valid matrix")
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::Alignment(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let mut acc = vec![0.0; other.n_cols];
        let mut seen = vec![usize::MAX; other.n_cols];
        let mut rows = Vec::with_capacity(self.n_rows);
        for r in 0..self.n_rows {
            let mut pattern = Vec::new();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &b) in ocols.iter().zip(ovals) {
                    if seen[c] != r {
                        seen[c] = r;
                        acc[c] = 0.0;
                        pattern.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            pattern.sort_unstable();
            rows.push(pattern.into_iter().map(|c| (c, acc[c])).collect());
        }
        Self::from_rows(other.n_cols, rows)
    }

    /// `self' * self`.
    pub fn gram(&self) -> Self {
        self.transpose()
            .matmul(self)
            .expect("gram dimensions always agree")
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Block-diagonal matrix with the given blocks, each multiplied by its scale.
    pub fn block_diag_scaled(blocks: &[(&Self, f64)]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Argument("block_diag needs at least one block".into()));
        }
        let n_cols: usize = blocks.iter().map(|(b, _)| b.n_cols).sum();
        let mut rows = Vec::new();
        let mut col_offset = 0;
        for (b, s) in blocks {
            for r in 0..b.n_rows {
                let (cols, vals) = b.row(r);
                rows.push(
                    cols.iter()
                        .zip(vals)
                        .map(|(&c, &v)| (c + col_offset, v * s))
                        .collect(),
                );
            }
            col_offset += b.n_cols;
        }
        Self::from_rows(n_cols, rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            d[(r, c)] = v;
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && self
                .triplets()
                .all(|(r, c, v)| (v - self.get(c, r)).abs() <= tol && self.contains(c, r))
    }

    /// Serialize as `rows cols nnz` followed by one `row col value` line per entry.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = String::new();
        writeln!(buf, "{} {} {}", self.n_rows, self.n_cols, self.nnz()).unwrap();
        for (r, c, v) in self.triplets() {
            writeln!(buf, "{r} {c} {v:.16e}").unwrap();
        }
        w.write_all(buf.as_bytes())
    }

    pub fn read_triplets<R: Read>(r: R) -> Result<Self> {
        let bad = |msg: String| Error::parse("<triplets>", msg);
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty input".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(format!("bad header field {s:?}"))))
            .collect::<Result<_>>()?;
        let [n_rows, n_cols, nnz] = head[..] else {
            return Err(bad(format!("header must have 3 fields, got {header:?}")));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {line:?}")));
            }
            let r = f[0].parse().map_err(|_| bad(format!("bad row in {line:?}")))?;
            let c = f[1].parse().map_err(|_| bad(format!("bad col in {line:?}")))?;
            let v = f[2].parse().map_err(|_| bad(format!("bad value in {line:?}")))?;
            triplets.push((r, c, v));
        }
        if triplets.len() != nnz {
            return Err(bad(format!("header says {nnz} entries, found {}", triplets.len())));
        }
        Self::from_triplets(n_rows, n_cols, triplets)
    }
}

/// Lower-triangular Cholesky factor `L` of a sparse SPD matrix, `A = L L'`.
///
/// Up-looking factorization in the natural ordering: the elimination tree
/// gives the pattern of each row of `L`, a first pass counts the columns and
/// the second fills them. `L` is kept in compressed column form with the
/// diagonal first in every column.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl SparseCholesky {
    pub fn factor(a: &SparseRealMatrix) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::Argument(format!(
                "Cholesky needs a square matrix, got {}x{}",
                a.n_rows, a.n_cols
            )));
        }
        let n = a.n_rows;
        // Column k of the upper triangle equals row k restricted to cols <= k.
        let upper = |k: usize| {
            let (cols, vals) = a.row(k);
            let end = cols.partition_point(|&c| c <= k);
            (&cols[..end], &vals[..end])
        };

        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &i0 in upper(k).0 {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut pattern = vec![0usize; n];
        // Marks are stamped with `pass * n + k`, so no reset is needed between passes.
        let mut reach = |k: usize, pass: usize, pattern: &mut [usize]| -> usize {
            let stamp = pass * n + k;
            let mut top = n;
            mark[k] = stamp;
            for &i0 in upper(k).0 {
                let mut i = i0;
                let mut len = 0;
                while mark[i] != stamp {
                    stack[len] = i;
                    len += 1;
                    mark[i] = stamp;
                    i = parent[i];
                    if i == NONE {
                        break;
                    }
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = stack[len];
                }
            }
            top
        };

        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = reach(k, 0, &mut pattern);
            for &i in &pattern[top..] {
                counts[i] += 1;
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + counts[k];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut next = col_ptr[..n].to_vec();
        let mut x = vec![0.0; n];

        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            let top = reach(k, 1, &mut pattern);
            let (cols, vals) = upper(k);
            for (&i, &v) in cols.iter().zip(vals) {
                x[i] = v;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &pattern[top..] {
                let lki = x[i] / values[col_ptr[i]];
                x[i] = 0.0;
                for p in col_ptr[i] + 1..next[i] {
                    x[row_idx[p]] -= values[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                row_idx[p] = k;
                values[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite: pivot {k} is {d:.3e} \
                     (pivots so far in [{min_pivot:.3e}, {max_pivot:.3e}])"
                )));
            }
            let p = next[k];
            next[k] += 1;
            row_idx[p] = k;
            values[p] = d.sqrt();
            min_pivot = min_pivot.min(d);
            max_pivot = max_pivot.max(d);
        }
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// In place `x <- L^{-1} x`.
    pub fn solve_lower_in_place(&self, x: &mut [f64]) {
        for j in 0..self.n {
            let p0 = self.col_ptr[j];
            x[j] /= self.values[p0];
            let xj = x[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                x[self.row_idx[p]] -= self.values[p] * xj;
            }
        }
    }

    /// In place `x <- L'^{-1} x`.
    pub fn solve_upper_in_place(&self, x: &mut [f64]) {
        for j in (0..self.n).rev() {
            let p0 = self.col_ptr[j];
            let mut s = x[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                s -= self.values[p] * x[self.row_idx[p]];
            }
            x[j] = s / self.values[p0];
        }
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// Dense `A^{-1}`, column by column.
    pub fn inverse_dense(&self) -> DMatrix<f64> {
        let mut inv = DMatrix::zeros(self.n, self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            inv.column_mut(j).copy_from_slice(&col);
        }
        // exact symmetry
        let t = inv.transpose();
        (inv + t) * 0.5
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|j| self.values[self.col_ptr[j]].ln())
            .sum::<f64>()
    }

    pub fn to_dense_lower(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                l[(self.row_idx[p], j)] = self.values[p];
            }
        }
        l
    }
}
