//! P1 finite-element assembly and the sparse/banded linear algebra used by the
//! time steppers.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::mesh::Mesh;

/// Compressed-row sparse matrix with sorted, duplicate-free columns per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            debug_assert!(c < ncols);
            cols[fill[r]] = c;
            vals[fill[r]] = v;
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|p| (cols[p], vals[p])));
            scratch.sort_by_key(|e| e.0);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            out.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, a * v)).collect();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, b * v)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.triplets()
            .iter()
            .all(|&(i, j, v)| (v - self.get(j, i)).abs() <= rel_tol * scale)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Sum of all entries, i.e. `1ᵀ A 1`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `xᵀ A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                x[i] * cols.iter().zip(vals).map(|(&j, &v)| v * y[j]).sum::<f64>()
            })
            .sum()
    }

    /// Lower and upper bandwidth.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut lo, mut hi) = (0, 0);
        for i in 0..self.nrows {
            for &j in self.row(i).0 {
                if j < i {
                    lo = lo.max(i - j);
                } else {
                    hi = hi.max(j - i);
                }
            }
        }
        (lo, hi)
    }

    /// Coordinate-format dump, one `row col value` line per stored entry.
    pub fn to_coo_string(&self) -> String {
        let mut s = format!("% {} {} {}\n", self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{i} {j} {v:.17e}");
        }
        s
    }
}

/// Element integral of `λ_a λ_b λ_c` over a simplex of measure `vol`.
fn triple_product(a: usize, b: usize, c: usize, dim: usize, vol: f64) -> f64 {
    // |e| d! Π m_i! / (3 + d)!
    let (fd, denom) = if dim == 1 { (1.0, 24.0) } else { (2.0, 120.0) };
    let mult = if a == b && b == c {
        6.0
    } else if a == b || b == c || a == c {
        2.0
    } else {
        1.0
    };
    vol * fd * mult / denom
}

fn element_mass(dim: usize, vol: f64, a: usize, b: usize) -> f64 {
    match (dim, a == b) {
        (1, true) => vol / 3.0,
        (1, false) => vol / 6.0,
        (_, true) => vol / 6.0,
        (_, false) => vol / 12.0,
    }
}

fn assemble_with<F>(mesh: &Mesh, filter: Option<&[bool]>, mut local: F) -> CsrMatrix
where
    F: FnMut(usize, &[usize], usize, usize) -> f64,
{
    let k = mesh.dim() + 1;
    let mut t = Vec::with_capacity(mesh.element_count() * k * k);
    for e in 0..mesh.element_count() {
        if let Some(f) = filter {
            if !f[e] {
                continue;
            }
        }
        let el = mesh.element(e);
        for a in 0..k {
            for b in 0..k {
                t.push((el[a], el[b], local(e, el, a, b)));
            }
        }
    }
    let n = mesh.node_count();
    CsrMatrix::from_triplets(n, n, &t)
}

pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let dim = mesh.dim();
    assemble_with(mesh, None, |e, _, a, b| {
        element_mass(dim, mesh.element_measure(e), a, b)
    })
}

/// Mass matrix restricted to flagged elements (the observation subdomain).
pub fn assemble_masked_mass(mesh: &Mesh, element_flags: &[bool]) -> Result<CsrMatrix> {
    if element_flags.len() != mesh.element_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} element flags for {} elements",
            element_flags.len(),
            mesh.element_count()
        )));
    }
    let dim = mesh.dim();
    Ok(assemble_with(mesh, Some(element_flags), |e, _, a, b| {
        element_mass(dim, mesh.element_measure(e), a, b)
    }))
}

pub fn assemble_stiffness(mesh: &Mesh, nu: f64) -> Result<CsrMatrix> {
    if !(nu > 0.0) {
        return invalid(format!("diffusion coefficient must be positive, got {nu}"));
    }
    let m = match mesh.dim() {
        1 => assemble_with(mesh, None, |e, _, a, b| {
            let h = mesh.element_measure(e);
            if a == b {
                nu / h
            } else {
                -nu / h
            }
        }),
        _ => {
            // gradients of barycentric coordinates are constant per triangle
            let mut cache: Option<(usize, [[f64; 2]; 3], f64)> = None;
            assemble_with(mesh, None, move |e, el, a, b| {
                if cache.map(|c| c.0) != Some(e) {
                    let p: Vec<[f64; 2]> = el.iter().map(|&v| mesh.node(v)).collect();
                    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
                    let mut g = [[0.0; 2]; 3];
                    for i in 0..3 {
                        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                        g[i] = [(p[j][1] - p[k][1]) / area2, (p[k][0] - p[j][0]) / area2];
                    }
                    cache = Some((e, g, 0.5 * area2.abs()));
                }
                let (_, g, area) = cache.unwrap();
                nu * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])
            })
        }
    };
    Ok(m)
}

/// `∫ q φ_i φ_j` with `q` taken as its P1 interpolant, integrated exactly.
pub fn assemble_weighted_mass(mesh: &Mesh, q: &[f64]) -> Result<CsrMatrix> {
    if q.len() != mesh.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "weight has {} values for {} nodes",
            q.len(),
            mesh.node_count()
        )));
    }
    let dim = mesh.dim();
    Ok(assemble_with(mesh, None, |e, el, a, b| {
        let vol = mesh.element_measure(e);
        (0..=dim)
            .map(|c| q[el[c]] * triple_product(a, b, c, dim, vol))
            .sum()
    }))
}

/// Symmetric elimination of the flagged rows/columns: they are replaced by
/// identity rows so the reduced system keeps its structure.
pub fn apply_dirichlet(a: &CsrMatrix, fixed: &[bool]) -> CsrMatrix {
    let mut t = Vec::with_capacity(a.nnz());
    for (i, j, v) in a.triplets() {
        if !fixed[i] && !fixed[j] {
            t.push((i, j, v));
        }
    }
    for (i, _) in fixed.iter().enumerate().filter(|(_, &f)| f) {
        t.push((i, i, 1.0));
    }
    CsrMatrix::from_triplets(a.nrows(), a.ncols(), &t)
}

/// Zeroes entries of `v` at fixed nodes.
pub fn zero_fixed(v: &mut [f64], fixed: &[bool]) {
    for (x, &f) in v.iter_mut().zip(fixed) {
        if f {
            *x = 0.0;
        }
    }
}

pub const DEFAULT_CG_TOL: f64 = 1e-10;

/// [`zero_fixed`] on each nodal block of a component-major state.
pub fn zero_fixed_components(v: &mut [f64], fixed: &[bool]) {
    for chunk in v.chunks_mut(fixed.len()) {
        zero_fixed(chunk, fixed);
    }
}

/// Jacobi-preconditioned conjugate gradients; returns an error with the final
/// residual when `max_iter` (default `10 n`) is exhausted.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    solve_spd_with(a, b, tol, 10 * a.nrows().max(10))
}

pub fn solve_spd_with(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.nrows();
    if b.len() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "system {}x{} with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let dinv: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SingularPivot { row: it, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: norm2(&r) / bnorm,
    })
}

/// LU factorization of a banded matrix without pivoting. Suited to the
/// implicit-Euler operators, whose symmetric part is positive definite.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major band storage: entry (i, j) at `i * width + (j + kl - i)`.
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("banded LU needs a square matrix".into()));
        }
        let (kl, ku) = a.bandwidth();
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for (i, j, v) in a.triplets() {
            band[i * width + j + kl - i] = v;
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = band[k * width + kl];
            if !(pivot.abs() > 1e-14 * scale) {
                return Err(Error::SingularPivot { row: k, pivot });
            }
            let jmax = (k + ku).min(n - 1);
            for i in k + 1..=(k + kl).min(n - 1) {
                let ik = i * width + k + kl - i;
                let l = band[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[ik] = l;
                for j in k + 1..=jmax {
                    band[i * width + j + kl - i] -= l * band[k * width + j + kl - k];
                }
            }
        }
        Ok(BandedLu { n, kl, ku, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.kl + self.ku + 1) + j + self.kl - i]
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut s = x[i];
            for j in lo..i {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=hi {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        // Uᵀ y = b
        for j in 0..n {
            x[j] /= self.at(j, j);
            let v = x[j];
            for i in j + 1..=(j + self.ku).min(n - 1) {
                x[i] -= self.at(j, i) * v;
            }
        }
        // Lᵀ x = y
        for j in (0..n).rev() {
            let v = x[j];
            for i in j.saturating_sub(self.kl)..j {
                x[i] -= self.at(j, i) * v;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
