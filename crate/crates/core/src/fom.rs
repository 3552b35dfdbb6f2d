//! Full-order Helmholtz solver: real block assembly, Dirichlet imposition,
//! and direct / preconditioned-GMRES solution paths.
//!
//! The real block matrix has the structure [[B, -C], [C, B]] with
//! B = S0 - k^2 M0 + (k xi_i/|xi|^2) K2_0 and
//! C = (k xi_r/|xi|^2) K2_0 + k K4_0; the direct path solves the
//! equivalent complex system (B + iC)(p_r + i p_i) = b_r + i b_i.

use num_complex::Complex64;

use crate::assembly::FomOperators;
use crate::error::{Error, Result};
use crate::sparse::{gmres, BandLu, ComplexCsr, CsrMatrix};

/// Random input triple: wavenumber and complex source amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomParams {
    pub k: f64,
    pub mu_r: f64,
    pub mu_i: f64,
}

impl RandomParams {
    pub fn new(k: f64, mu_r: f64, mu_i: f64) -> Result<Self> {
        if k <= 0.0 {
            return Err(Error::InvalidArgument(format!("wavenumber k={k} must be positive")));
        }
        Ok(RandomParams { k, mu_r, mu_i })
    }
}

/// Complex liner impedance, or the hard-wall limit where the liner
/// boundary terms vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impedance {
    pub xi_r: f64,
    pub xi_i: f64,
    pub hard_wall: bool,
}

impl Impedance {
    pub fn new(xi_r: f64, xi_i: f64) -> Result<Self> {
        if xi_r <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "impedance resistance xi_r={xi_r} must be positive"
            )));
        }
        Ok(Impedance {
            xi_r,
            xi_i,
            hard_wall: false,
        })
    }

    pub fn hard_wall() -> Self {
        Impedance {
            xi_r: 0.0,
            xi_i: 0.0,
            hard_wall: true,
        }
    }

    /// Liner coefficients (k xi_i/|xi|^2, k xi_r/|xi|^2); zero for hard wall.
    pub fn liner_coefficients(&self, k: f64) -> Result<(f64, f64)> {
        if self.hard_wall {
            return Ok((0.0, 0.0));
        }
        let norm2 = self.xi_r * self.xi_r + self.xi_i * self.xi_i;
        if norm2 == 0.0 {
            return Err(Error::InvalidArgument(
                "impedance |xi| = 0 is not allowed without hard_wall".into(),
            ));
        }
        Ok((k * self.xi_i / norm2, k * self.xi_r / norm2))
    }
}

/// The Dirichlet-imposed 2n x 2n real system A p = b.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub n: usize,
}

/// Assembles the pre-Dirichlet block matrix [[B, -C], [C, B]].
pub fn assemble_block(
    fom: &FomOperators,
    theta: &RandomParams,
    xi: &Impedance,
) -> Result<CsrMatrix> {
    let (c_sym, c_skew) = xi.liner_coefficients(theta.k)?;
    let k = theta.k;
    let b = CsrMatrix::linear_combination(&[
        (1.0, &fom.s0),
        (-k * k, &fom.m0),
        (c_sym, &fom.k2_0),
    ]);
    let c = CsrMatrix::linear_combination(&[(c_skew, &fom.k2_0), (k, &fom.k4_0)]);
    let n = fom.n;
    let mut trip = Vec::with_capacity(2 * (b.vals.len() + c.vals.len()));
    for (r, col, v) in b.iter_entries() {
        trip.push((r, col, v));
        trip.push((n + r, n + col, v));
    }
    for (r, col, v) in c.iter_entries() {
        trip.push((r, n + col, -v));
        trip.push((n + r, col, v));
    }
    Ok(CsrMatrix::from_triplets(2 * n, 2 * n, &trip))
}

/// Replaces source-boundary rows by unit rows and builds the load vector
/// b = mu_r g_r + mu_i g_i.
pub fn apply_dirichlet(
    atilde: &CsrMatrix,
    fom: &FomOperators,
    theta: &RandomParams,
) -> BlockSystem {
    let n = fom.n;
    assert_eq!(atilde.nrows, 2 * n);
    let mut trip = Vec::with_capacity(atilde.vals.len());
    for (r, c, v) in atilde.iter_entries() {
        let scalar_row = if r < n { r } else { r - n };
        if fom.is_dirichlet(scalar_row) {
            continue;
        }
        trip.push((r, c, v));
    }
    for &i in &fom.dirichlet_idx {
        trip.push((i, i, 1.0));
        trip.push((n + i, n + i, 1.0));
    }
    let a = CsrMatrix::from_triplets(2 * n, 2 * n, &trip);
    let mut b = vec![0.0; 2 * n];
    for &i in &fom.dirichlet_idx {
        b[i] = theta.mu_r * fom.g_gamma1[i];
        b[n + i] = theta.mu_i * fom.g_gamma1[i];
    }
    BlockSystem { a, b, n }
}

impl BlockSystem {
    /// Reduces the block system to its equivalent complex n x n form.
    /// Relies on the [[B, -C], [C, B]] structure preserved by Dirichlet
    /// row replacement.
    pub fn to_complex(&self) -> (ComplexCsr, Vec<Complex64>) {
        let n = self.n;
        let mut trip = Vec::new();
        for r in 0..n {
            let (cols, vals) = self.a.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c < n {
                    trip.push((r, *c, Complex64::new(*v, 0.0)));
                } else {
                    // top-right block stores -C
                    trip.push((r, c - n, Complex64::new(0.0, -v)));
                }
            }
        }
        let cb: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(self.b[i], self.b[n + i]))
            .collect();
        (ComplexCsr::from_triplets(n, &trip), cb)
    }

    /// Solves A^T q = rhs. The transpose has the block pattern
    /// [[X, Y], [-Y, X]], which is the real form of the complex matrix
    /// X - iY, so the same complex banded factorization applies.
    pub fn solve_transposed(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(rhs.len(), 2 * n);
        let mut trip = Vec::with_capacity(self.a.vals.len());
        for (r, c, v) in self.a.iter_entries() {
            let (rt, ct) = (c, r);
            if rt < n {
                if ct < n {
                    trip.push((rt, ct, Complex64::new(v, 0.0)));
                } else {
                    trip.push((rt, ct - n, Complex64::new(0.0, -v)));
                }
            }
            // rows n..2n duplicate the same complex entries
        }
        let h = ComplexCsr::from_triplets(n, &trip);
        let lu = BandLu::factor(&h)?;
        let cb: Vec<Complex64> = (0..n).map(|i| Complex64::new(rhs[i], rhs[n + i])).collect();
        let x = lu.solve(&cb);
        let mut q = vec![0.0; 2 * n];
        for (i, v) in x.iter().enumerate() {
            q[i] = v.re;
            q[n + i] = v.im;
        }
        Ok(q)
    }
}

/// How to solve the full-order system.
#[derive(Debug, Clone, Copy)]
pub enum SolveMethod {
    Direct,
    GmresShiftedLaplacian {
        beta1: f64,
        beta2: f64,
        tol: f64,
        max_iter: usize,
    },
}

impl SolveMethod {
    pub fn gmres_default() -> Self {
        SolveMethod::GmresShiftedLaplacian {
            beta1: 1.0,
            beta2: 0.5,
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

/// Per-solve diagnostics; `iterations` is zero for the direct path.
#[derive(Debug, Clone, Copy)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
}

/// Reusable complex factorization of one (k, xi) system. Solves for many
/// right-hand sides (one per mu) share the factorization.
pub struct FomFactorization {
    lu: BandLu,
    n: usize,
}

impl FomFactorization {
    pub fn new(sys: &BlockSystem) -> Result<Self> {
        let (h, _) = sys.to_complex();
        Ok(FomFactorization {
            lu: BandLu::factor(&h)?,
            n: sys.n,
        })
    }

    /// Solves for the given block right-hand side (length 2n).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let cb: Vec<Complex64> = (0..n).map(|i| Complex64::new(b[i], b[n + i])).collect();
        let x = self.lu.solve(&cb);
        let mut p = vec![0.0; 2 * n];
        for (i, v) in x.iter().enumerate() {
            p[i] = v.re;
            p[n + i] = v.im;
        }
        p
    }
}

/// Solves the full-order system by the requested method.
///
/// The GMRES path preconditions with a complete factorization of the
/// shifted operator -lap - (beta1 - beta2 i) k^2 under the same boundary
/// conditions, and iterates on the real 2n x 2n block system.
pub fn solve_fom(
    sys: &BlockSystem,
    fom: &FomOperators,
    theta: &RandomParams,
    xi: &Impedance,
    method: SolveMethod,
) -> Result<(Vec<f64>, SolveInfo)> {
    match method {
        SolveMethod::Direct => {
            let fac = FomFactorization::new(sys)?;
            let p = fac.solve(&sys.b);
            let r = residual_norm(&sys.a, &p, &sys.b);
            Ok((p, SolveInfo {
                iterations: 0,
                residual: r,
            }))
        }
        SolveMethod::GmresShiftedLaplacian {
            beta1,
            beta2,
            tol,
            max_iter,
        } => {
            let shifted = assemble_shifted_complex(fom, theta, xi, beta1, beta2)?;
            let lu = BandLu::factor(&shifted)?;
            let n = sys.n;
            let precond = move |v: &[f64]| -> Vec<f64> {
                let cb: Vec<Complex64> =
                    (0..n).map(|i| Complex64::new(v[i], v[n + i])).collect();
                let x = lu.solve(&cb);
                let mut out = vec![0.0; 2 * n];
                for (i, z) in x.iter().enumerate() {
                    out[i] = z.re;
                    out[n + i] = z.im;
                }
                out
            };
            let res = gmres(&sys.a, &sys.b, &precond, tol, max_iter)?;
            Ok((
                res.x,
                SolveInfo {
                    iterations: res.iterations,
                    residual: res.residual,
                },
            ))
        }
    }
}

/// Complex matrix of the shifted-Laplacian preconditioner with the same
/// Robin terms and Dirichlet rows as the state system.
fn assemble_shifted_complex(
    fom: &FomOperators,
    theta: &RandomParams,
    xi: &Impedance,
    beta1: f64,
    beta2: f64,
) -> Result<ComplexCsr> {
    let (c_sym, c_skew) = xi.liner_coefficients(theta.k)?;
    let k = theta.k;
    let n = fom.n;
    let b = CsrMatrix::linear_combination(&[
        (1.0, &fom.s0),
        (-beta1 * k * k, &fom.m0),
        (c_sym, &fom.k2_0),
    ]);
    let c = CsrMatrix::linear_combination(&[
        (beta2 * k * k, &fom.m0),
        (c_skew, &fom.k2_0),
        (k, &fom.k4_0),
    ]);
    let mut trip = Vec::new();
    for r in 0..n {
        if fom.is_dirichlet(r) {
            trip.push((r, r, Complex64::new(1.0, 0.0)));
            continue;
        }
        let (cols, vals) = b.row(r);
        for (cc, v) in cols.iter().zip(vals) {
            trip.push((r, *cc, Complex64::new(*v, 0.0)));
        }
        let (cols, vals) = c.row(r);
        for (cc, v) in cols.iter().zip(vals) {
            trip.push((r, *cc, Complex64::new(0.0, *v)));
        }
    }
    Ok(ComplexCsr::from_triplets(n, &trip))
}

/// Acoustic energy p_r^T M0 p_r + p_i^T M0 p_i of a block solution vector.
pub fn noise_energy(p: &[f64], fom: &FomOperators) -> f64 {
    let n = fom.n;
    assert_eq!(p.len(), 2 * n);
    fom.m0.bilinear(&p[..n], &p[..n]) + fom.m0.bilinear(&p[n..], &p[n..])
}

fn residual_norm(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec_alloc(x);
    ax.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}
