//! Minimal sparse kernels used by the full-order solver: real CSR storage,
//! a complex banded LU with partial pivoting, and a restart-free GMRES.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real sparse matrix in compressed-sparse-row form.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows];
        for &(r, _, _) in triplets {
            counts[r] += 1;
        }
        let mut row_start = vec![0usize; nrows + 1];
        for i in 0..nrows {
            row_start[i + 1] = row_start[i] + counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut next = row_start.clone();
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        // sort each row by column and merge duplicates
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        for r in 0..nrows {
            let lo = row_start[r];
            let hi = row_start[r + 1];
            let mut entries: Vec<(usize, f64)> =
                (lo..hi).map(|k| (cols[k], vals[k])).collect();
            entries.sort_unstable_by_key(|e| e.0);
            for (c, v) in entries {
                if let Some(last) = out_cols.last() {
                    if *last == c && out_cols.len() > row_ptr[r] {
                        *out_vals.last_mut().unwrap() += v;
                        continue;
                    }
                }
                out_cols.push(c);
                out_vals.push(v);
            }
            row_ptr[r + 1] = out_cols.len();
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx: out_cols,
            vals: out_vals,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Row `r` as (columns, values) slices.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// x^T A y for conformal vectors.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut row_acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                row_acc += v * y[*c];
            }
            acc += x[r] * row_acc;
        }
        acc
    }

    /// Largest absolute asymmetry max|A - A^T|.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(*c, r)).abs());
            }
        }
        worst
    }

    /// Sum of all entries.
    pub fn sum(&self) -> f64 {
        self.vals.iter().sum()
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .map(move |(c, v)| (r, *c, *v))
                .collect::<Vec<_>>()
        })
    }

    /// Linear combination sum_k alpha_k * A_k of structurally compatible matrices.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        assert!(!terms.is_empty());
        let nrows = terms[0].1.nrows;
        let ncols = terms[0].1.ncols;
        let mut triplets = Vec::new();
        for (alpha, m) in terms {
            assert_eq!(m.nrows, nrows);
            assert_eq!(m.ncols, ncols);
            for (r, c, v) in m.iter_entries() {
                triplets.push((r, c, alpha * v));
            }
        }
        CsrMatrix::from_triplets(nrows, ncols, &triplets)
    }
}

/// Complex sparse matrix in CSR form; the direct-solver side of the
/// real block system [[B, -C], [C, B]] reduced to B + iC.
#[derive(Debug, Clone)]
pub struct ComplexCsr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<Complex64>,
}

impl ComplexCsr {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, Complex64)]) -> Self {
        let real: Vec<(usize, usize, f64)> =
            triplets.iter().map(|&(r, c, v)| (r, c, v.re)).collect();
        let imag: Vec<(usize, usize, f64)> =
            triplets.iter().map(|&(r, c, v)| (r, c, v.im)).collect();
        let re = CsrMatrix::from_triplets(n, n, &real);
        let im = CsrMatrix::from_triplets(n, n, &imag);
        // identical structure by construction
        let vals = re
            .vals
            .iter()
            .zip(&im.vals)
            .map(|(a, b)| Complex64::new(*a, *b))
            .collect();
        ComplexCsr {
            n,
            row_ptr: re.row_ptr,
            col_idx: re.col_idx,
            vals,
        }
    }

    pub fn row(&self, r: usize) -> (&[usize], &[Complex64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    /// Lower and upper bandwidths of the sparsity pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for r in 0..self.n {
            let (cols, _) = self.row(r);
            for c in cols {
                if *c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }
}

/// Banded LU factorization with partial pivoting of a complex matrix,
/// LAPACK gbtrf-style storage.
pub struct BandLu {
    n: usize,
    kl: usize,
    /// expanded upper bandwidth kl + ku (fill from pivoting)
    kus: usize,
    /// column-major band storage, column height kl + kus + 1
    data: Vec<Complex64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // valid for j.saturating_sub(kus) <= i <= min(n-1, j+kl)
        j * (self.kl + self.kus + 1) + (self.kus + i - j)
    }

    /// Factors a complex CSR matrix. Fails if a pivot column is exactly zero.
    pub fn factor(a: &ComplexCsr) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let kus = kl + ku;
        let height = kl + kus + 1;
        let mut lu = BandLu {
            n,
            kl,
            kus,
            data: vec![Complex64::new(0.0, 0.0); n * height],
            ipiv: vec![0; n],
        };
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let k = lu.idx(r, *c);
                lu.data[k] = *v;
            }
        }
        for j in 0..n {
            let imax = (j + kl).min(n - 1);
            // pivot search in column j
            let mut p = j;
            let mut pmag = lu.data[lu.idx(j, j)].norm_sqr();
            for i in (j + 1)..=imax {
                let mag = lu.data[lu.idx(i, j)].norm_sqr();
                if mag > pmag {
                    pmag = mag;
                    p = i;
                }
            }
            if pmag == 0.0 {
                return Err(Error::SingularFactorization(format!(
                    "zero pivot column at index {j}"
                )));
            }
            lu.ipiv[j] = p;
            let jmax = (j + kus).min(n - 1);
            if p != j {
                for c in j..=jmax {
                    let a = lu.idx(j, c);
                    let b = lu.idx(p, c);
                    lu.data.swap(a, b);
                }
            }
            let piv = lu.data[lu.idx(j, j)];
            for i in (j + 1)..=imax {
                let k_ij = lu.idx(i, j);
                let l = lu.data[k_ij] / piv;
                lu.data[k_ij] = l;
                if l != Complex64::new(0.0, 0.0) {
                    for c in (j + 1)..=jmax {
                        let upper = lu.data[lu.idx(j, c)];
                        let k_ic = lu.idx(i, c);
                        lu.data[k_ic] -= l * upper;
                    }
                }
            }
        }
        Ok(lu)
    }

    /// Solves A x = b in place of a fresh vector.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        let n = self.n;
        // forward: apply pivots and L
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let imax = (j + self.kl).min(n - 1);
            let xj = x[j];
            for i in (j + 1)..=imax {
                x[i] -= self.data[self.idx(i, j)] * xj;
            }
        }
        // backward: U x = y
        for j in (0..n).rev() {
            let jmax = (j + self.kus).min(n - 1);
            let mut acc = x[j];
            for c in (j + 1)..=jmax {
                acc -= self.data[self.idx(j, c)] * x[c];
            }
            x[j] = acc / self.data[self.idx(j, j)];
        }
        x
    }
}

/// Outcome of a converged GMRES solve.
#[derive(Debug)]
pub struct GmresResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Restart-free right-preconditioned GMRES on a real CSR system.
///
/// `precond` applies M^{-1}; pass the identity for unpreconditioned runs.
/// The Givens-updated residual of the right-preconditioned system is the
/// true residual norm, so the stopping test needs no extra matvec.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<GmresResult> {
    let n = b.len();
    assert_eq!(a.nrows, n);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(GmresResult {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    // x0 = 0, so r0 = b
    let mut basis: Vec<Vec<f64>> = vec![b.iter().map(|v| v / bnorm).collect()];
    let mut h: Vec<Vec<f64>> = Vec::new(); // h[j] holds column j, length j+2
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![bnorm];
    let mut residual = bnorm;
    let mut iters = 0;

    for j in 0..max_iter {
        iters = j + 1;
        let z = precond(&basis[j]);
        let mut w = a.matvec_alloc(&z);
        let mut hj = vec![0.0; j + 2];
        for (i, v) in basis.iter().enumerate() {
            let hij = dot(&w, v);
            hj[i] = hij;
            for (wk, vk) in w.iter_mut().zip(v) {
                *wk -= hij * vk;
            }
        }
        hj[j + 1] = norm2(&w);
        // apply previous Givens rotations
        for i in 0..j {
            let t = cs[i] * hj[i] + sn[i] * hj[i + 1];
            hj[i + 1] = -sn[i] * hj[i] + cs[i] * hj[i + 1];
            hj[i] = t;
        }
        let (c, s) = givens(hj[j], hj[j + 1]);
        cs.push(c);
        sn.push(s);
        hj[j] = c * hj[j] + s * hj[j + 1];
        hj[j + 1] = 0.0;
        g.push(-s * g[j]);
        g[j] *= c;
        h.push(hj);
        residual = g[j + 1].abs();
        if residual <= tol * bnorm {
            let x = gmres_assemble(&basis[..=j], &h, &g, precond);
            return Ok(GmresResult {
                x,
                iterations: iters,
                residual,
            });
        }
        let wn = norm2(&w);
        if wn == 0.0 {
            break; // Krylov space exhausted, solution is exact
        }
        basis.push(w.iter().map(|v| v / wn).collect());
    }
    if residual <= tol * bnorm || tol == 0.0 {
        let k = h.len();
        let x = gmres_assemble(&basis[..k], &h, &g, precond);
        let r = sub(b, &a.matvec_alloc(&x));
        return Ok(GmresResult {
            x,
            iterations: iters,
            residual: norm2(&r),
        });
    }
    Err(Error::IterationLimit {
        iters,
        residual: residual / bnorm,
    })
}

fn gmres_assemble(
    basis: &[Vec<f64>],
    h: &[Vec<f64>],
    g: &[f64],
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let k = basis.len().min(h.len());
    // back-substitute the k x k triangular system
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for j in (i + 1)..k {
            acc -= h[j][i] * y[j];
        }
        y[i] = acc / h[i][i];
    }
    let n = basis[0].len();
    let mut z = vec![0.0; n];
    for (j, v) in basis.iter().enumerate().take(k) {
        for (zk, vk) in z.iter_mut().zip(v) {
            *zk += y[j] * vk;
        }
    }
    precond(&z)
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn csr_duplicate_triplets_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.5), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn band_lu_solves_complex_tridiagonal() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, Complex64::new(3.0, 0.7)));
            if i > 0 {
                t.push((i, i - 1, Complex64::new(-1.0, 0.2)));
            }
            if i + 1 < n {
                t.push((i, i + 1, Complex64::new(-1.0, -0.4)));
            }
        }
        let a = ComplexCsr::from_triplets(n, &t);
        let x_true: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(i as f64 * 0.3 - 1.0, (i as f64).sin()))
            .collect();
        let b = a.matvec(&x_true);
        let lu = BandLu::factor(&a).unwrap();
        let x = lu.solve(&b);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert_relative_eq!(xi.re, ti.re, max_relative = 1e-11, epsilon = 1e-12);
            assert_relative_eq!(xi.im, ti.im, max_relative = 1e-11, epsilon = 1e-12);
        }
    }

    #[test]
    fn band_lu_pivots_on_indefinite_matrix() {
        // small diagonal entry forces a pivot swap
        let t = vec![
            (0usize, 0usize, Complex64::new(1e-14, 0.0)),
            (0, 1, Complex64::new(1.0, 0.0)),
            (1, 0, Complex64::new(1.0, 0.0)),
            (1, 1, Complex64::new(1.0, 0.0)),
        ];
        let a = ComplexCsr::from_triplets(2, &t);
        let b = vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)];
        let lu = BandLu::factor(&a).unwrap();
        let x = lu.solve(&b);
        let r = a.matvec(&x);
        assert_relative_eq!(r[0].re, 1.0, epsilon = 1e-10);
        assert_relative_eq!(r[1].re, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn gmres_matches_exact_solution_unpreconditioned() {
        let n = 30;
        let a = laplacian_1d(n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.17).cos()).collect();
        let b = a.matvec_alloc(&x_true);
        let id = |v: &[f64]| v.to_vec();
        let res = gmres(&a, &b, &id, 1e-12, 200).unwrap();
        for (xi, ti) in res.x.iter().zip(&x_true) {
            assert_relative_eq!(xi, ti, max_relative = 1e-8, epsilon = 1e-9);
        }
    }

    #[test]
    fn gmres_reports_iteration_limit() {
        let n = 50;
        let a = laplacian_1d(n);
        let b = vec![1.0; n];
        let id = |v: &[f64]| v.to_vec();
        let err = gmres(&a, &b, &id, 1e-14, 3).unwrap_err();
        match err {
            Error::IterationLimit { iters, residual } => {
                assert_eq!(iters, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
