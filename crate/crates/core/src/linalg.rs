//! Sparse storage and the linear solvers used by implicit stages.
//!
//! Jacobians are assembled as [`CsrMatrix`]. Stage matrices `I - s J` are
//! factored with a banded LU ([`BandLu`]) with partial pivoting; the same
//! factorization serves the transposed solves of the adjoint sweep. Row-major
//! unknown ordering on tensor grids keeps the bandwidth at one grid row.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &t)
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

    /// Iterates the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    /// `out = A x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `out = Aᵀ x`
    pub fn matvec_t(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += v * xi;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.matvec(x, &mut out);
        out
    }

    pub fn mul_vec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.matvec_t(x, &mut out);
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// `I - s A` for square `A`.
    pub fn identity_minus(&self, s: f64) -> Self {
        assert_eq!(self.nrows, self.ncols);
        let mut t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, -s * v)).collect();
        t.extend((0..self.nrows).map(|i| (i, i, 1.0)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] += v;
        }
        d
    }

    /// Lower and upper bandwidths `(kl, ku)` of the stored pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let t = self.transpose();
        self.indptr == t.indptr
            && self.indices == t.indices
            && self
                .values
                .iter()
                .zip(&t.values)
                .all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs()))
    }
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern of `a`:
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for nb in &mut adj {
        nb.sort_unstable();
        nb.dedup();
    }
    let bfs = |start: usize, seen: &mut Vec<bool>, order: &mut Vec<usize>| {
        let first = order.len();
        seen[start] = true;
        order.push(start);
        let mut head = first;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                seen[w] = true;
                order.push(w);
            }
        }
        first
    };
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        // move to a pseudo-peripheral node: last node of a BFS from the root
        let mut scratch_seen = seen.clone();
        let mut scratch = Vec::new();
        bfs(root, &mut scratch_seen, &mut scratch);
        let start = *scratch.last().unwrap();
        bfs(start, &mut seen, &mut order);
    }
    order.reverse();
    order
}

/// Banded LU factorization with partial pivoting, applied after a reverse
/// Cuthill–McKee reordering when that narrows the band.
///
/// Storage follows the LAPACK `gbtrf` column layout: `ab[j * ldab + kv + i - j]`
/// holds `A[i][j]`, with `kv = kl + ku` leaving room for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    kv: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    perm: Option<Vec<usize>>,
}

fn permuted_bandwidths(a: &CsrMatrix, inv: &[usize]) -> (usize, usize) {
    a.triplets().into_iter().fold((0, 0), |(kl, ku), (i, j, _)| {
        let (i, j) = (inv[i], inv[j]);
        (kl.max(i.saturating_sub(j)), ku.max(j.saturating_sub(i)))
    })
}

impl BandLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::DimensionMismatch {
                expected: a.nrows,
                got: a.ncols,
            });
        }
        let n = a.nrows;
        let identity: Vec<usize> = (0..n).collect();
        let (mut kl, mut ku) = a.bandwidths();
        let mut perm = None;
        let mut inv = identity;
        if kl + ku > 2 {
            let p = reverse_cuthill_mckee(a);
            let mut pinv = vec![0; n];
            for (new, &old) in p.iter().enumerate() {
                pinv[old] = new;
            }
            let (pl, pu) = permuted_bandwidths(a, &pinv);
            if pl + pu < kl + ku {
                (kl, ku) = (pl, pu);
                inv = pinv;
                perm = Some(p);
            }
        }
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            kv,
            ldab,
            ab: vec![0.0; ldab * n],
            ipiv: vec![0; n],
            perm,
        };
        for (i, j, v) in a.triplets() {
            *lu.at_mut(inv[i], inv[j]) += v;
        }
        lu.decompose()?;
        Ok(lu)
    }

    /// Bytes held by the factors.
    pub fn memory_bytes(&self) -> usize {
        8 * self.ab.len() + 8 * self.ipiv.len() + self.perm.as_ref().map_or(0, |p| 8 * p.len())
    }

    fn permute(&self, b: &mut [f64]) {
        if let Some(p) = &self.perm {
            let tmp: Vec<f64> = p.iter().map(|&old| b[old]).collect();
            b.copy_from_slice(&tmp);
        }
    }

    fn unpermute(&self, b: &mut [f64]) {
        if let Some(p) = &self.perm {
            let tmp = b.to_vec();
            for (new, &old) in p.iter().enumerate() {
                b[old] = tmp[new];
            }
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[j * self.ldab + self.kv + i - j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.ab[j * self.ldab + self.kv + i - j]
    }

    fn decompose(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.kv - kl;
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.at(j, j).abs();
            for i in 1..=km {
                let v = self.at(j + i, j).abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            self.ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::SingularMatrix(j));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.at(j, c);
                    let b = self.at(j + jp, c);
                    *self.at_mut(j, c) = b;
                    *self.at_mut(j + jp, c) = a;
                }
            }
            if km > 0 {
                let inv = 1.0 / self.at(j, j);
                for i in 1..=km {
                    *self.at_mut(j + i, j) *= inv;
                }
                for c in (j + 1)..=ju {
                    let u = self.at(j, c);
                    if u != 0.0 {
                        for i in 1..=km {
                            let l = self.at(j + i, j);
                            *self.at_mut(j + i, c) -= l * u;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        self.permute(b);
        self.solve_banded(b);
        self.unpermute(b);
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        self.permute(b);
        self.solve_banded_transpose(b);
        self.unpermute(b);
    }

    /// Column `j` rows `j - up ..= j + down` of the factors.
    #[inline]
    fn column(&self, j: usize, up: usize, down: usize) -> &[f64] {
        let base = j * self.ldab + self.kv;
        &self.ab[base - up..=base + down]
    }

    fn solve_banded(&self, b: &mut [f64]) {
        let n = self.n;
        for j in 0..n.saturating_sub(1) {
            let lm = self.kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let bj = b[j];
            if bj != 0.0 {
                let col = &self.column(j, 0, lm)[1..];
                for (x, m) in b[j + 1..=j + lm].iter_mut().zip(col) {
                    *x -= bj * m;
                }
            }
        }
        for j in (0..n).rev() {
            let up = self.kv.min(j);
            let col = self.column(j, up, 0);
            b[j] /= col[up];
            let bj = b[j];
            if bj != 0.0 {
                for (x, u) in b[j - up..j].iter_mut().zip(&col[..up]) {
                    *x -= bj * u;
                }
            }
        }
    }

    fn solve_banded_transpose(&self, b: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let up = self.kv.min(j);
            let col = self.column(j, up, 0);
            let s: f64 = b[j - up..j].iter().zip(&col[..up]).map(|(x, u)| x * u).sum();
            b[j] = (b[j] - s) / col[up];
        }
        for j in (0..n.saturating_sub(1)).rev() {
            let lm = self.kl.min(n - 1 - j);
            let col = &self.column(j, 0, lm)[1..];
            let s: f64 = b[j + 1..=j + lm].iter().zip(col).map(|(x, m)| x * m).sum();
            b[j] -= s;
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}

/// Unpreconditioned conjugate gradients for symmetric positive definite `a`.
///
/// Stops when `‖r‖ ≤ tol · ‖b‖`.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        a.matvec(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Err(Error::LinearSolver {
        iterations: max_iter,
        residual: rr.sqrt() / bnorm,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += alpha x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `‖a - b‖₂ / ‖b‖₂`, or the absolute difference when `b` vanishes.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d = norm2(&sub(a, b));
    let s = norm2(b);
    if s == 0.0 {
        d
    } else {
        d / s
    }
}
