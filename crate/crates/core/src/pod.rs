//! Snapshot generation and POD basis extraction, with both the thin-QR+SVD
//! (Euclidean) and correlation-matrix (mass-weighted) construction paths.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::FomOperators;
use crate::error::{Error, Result};
use crate::fom::{
    apply_dirichlet, assemble_block, solve_fom, Impedance, RandomParams, SolveMethod,
};

/// One sampling quadruple (k, mu, xi_r, xi_i).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleQuad {
    pub k: f64,
    pub mu_r: f64,
    pub mu_i: f64,
    pub xi_r: f64,
    pub xi_i: f64,
}

impl SampleQuad {
    pub fn params(&self) -> Result<RandomParams> {
        RandomParams::new(self.k, self.mu_r, self.mu_i)
    }

    pub fn impedance(&self) -> Result<Impedance> {
        Impedance::new(self.xi_r, self.xi_i)
    }
}

/// Snapshot matrix with the sample quadruple describing each column.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    /// 2n x m, columns are full-order solutions
    pub p: DMatrix<f64>,
    pub samples: Vec<SampleQuad>,
}

/// Cartesian sampling grid over k values and the mu / xi sets.
pub fn default_sample_grid(
    k_count: usize,
    k_range: (f64, f64),
    mu_set: &[(f64, f64)],
    xir_set: &[f64],
    xii_set: &[f64],
) -> Vec<SampleQuad> {
    assert!(k_count >= 2, "k_count must be at least 2");
    let mut out = Vec::with_capacity(k_count * mu_set.len() * xir_set.len() * xii_set.len());
    for i in 0..k_count {
        let k = k_range.0 + (k_range.1 - k_range.0) * i as f64 / (k_count - 1) as f64;
        for &(mu_r, mu_i) in mu_set {
            for &xi_r in xir_set {
                for &xi_i in xii_set {
                    out.push(SampleQuad {
                        k,
                        mu_r,
                        mu_i,
                        xi_r,
                        xi_i,
                    });
                }
            }
        }
    }
    out
}

/// The paper-style sampling grid: 40 wavenumbers on [5,10], mu in {1, i},
/// xi_r in {0.05, 0.5, 2}, xi_i in {-0.05, -0.5, -2}; 720 samples.
pub fn paper_sample_grid() -> Vec<SampleQuad> {
    default_sample_grid(
        40,
        (5.0, 10.0),
        &[(1.0, 0.0), (0.0, 1.0)],
        &[0.05, 0.5, 2.0],
        &[-0.05, -0.5, -2.0],
    )
}

/// Solves the full-order model at each sample; columns follow sample order.
pub fn build_snapshots(
    fom: &FomOperators,
    samples: &[SampleQuad],
    method: SolveMethod,
) -> Result<SnapshotSet> {
    let n2 = 2 * fom.n;
    let columns: Vec<Vec<f64>> = samples
        .par_iter()
        .enumerate()
        .map(|(j, s)| -> Result<Vec<f64>> {
            let wrap = |e: Error| Error::SampleSolve {
                sample: j,
                source: Box::new(e),
            };
            let theta = s.params().map_err(wrap)?;
            let xi = s.impedance().map_err(wrap)?;
            let at = assemble_block(fom, &theta, &xi).map_err(wrap)?;
            let sys = apply_dirichlet(&at, fom, &theta);
            let (p, _) = solve_fom(&sys, fom, &theta, &xi, method).map_err(wrap)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut p = DMatrix::zeros(n2, samples.len());
    for (j, col) in columns.iter().enumerate() {
        p.set_column(j, &DVector::from_column_slice(col));
    }
    Ok(SnapshotSet {
        p,
        samples: samples.to_vec(),
    })
}

/// Inner product in which a basis is orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PodMode {
    Euclidean,
    MassWeighted,
}

/// Mode-count selection rule.
#[derive(Debug, Clone, Copy)]
pub enum PodSelect {
    Rank(usize),
    /// smallest N with sqrt(sum_{i<=N} s_i^2) >= tau * sqrt(sum_i s_i^2)
    Energy(f64),
}

/// Orthonormal POD basis with its full singular spectrum.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// 2n x N mode matrix
    pub z: DMatrix<f64>,
    /// full positive spectrum, descending (length = numerical rank >= N)
    pub singular_values: Vec<f64>,
    pub mode: PodMode,
}

impl PodBasis {
    pub fn num_modes(&self) -> usize {
        self.z.ncols()
    }

    /// Identity basis of the full space, Euclidean-orthonormal.
    pub fn identity(n2: usize) -> Self {
        PodBasis {
            z: DMatrix::identity(n2, n2),
            singular_values: vec![1.0; n2],
            mode: PodMode::Euclidean,
        }
    }

    /// Truncates to the leading `n` modes.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.z.ncols() {
            return Err(Error::Rank {
                requested: n,
                rank: self.z.ncols(),
            });
        }
        Ok(PodBasis {
            z: self.z.columns(0, n).into_owned(),
            singular_values: self.singular_values.clone(),
            mode: self.mode,
        })
    }
}

fn rank_tolerance(svals: &[f64]) -> f64 {
    svals.first().copied().unwrap_or(0.0) * 1e-12
}

/// Number of modes a selection rule keeps for a given spectrum.
pub fn selected_count(svals: &[f64], select: PodSelect) -> Result<usize> {
    select_modes(svals, select)
}

fn select_modes(svals: &[f64], select: PodSelect) -> Result<usize> {
    let tol = rank_tolerance(svals);
    let rank = svals.iter().filter(|s| **s > tol).count();
    match select {
        PodSelect::Rank(n) => {
            if n == 0 || n > rank {
                Err(Error::Rank {
                    requested: n,
                    rank,
                })
            } else {
                Ok(n)
            }
        }
        PodSelect::Energy(tau) => {
            if !(0.0 < tau && tau <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "energy fraction tau={tau} must be in (0,1]"
                )));
            }
            let total: f64 = svals[..rank].iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            for (i, s) in svals[..rank].iter().enumerate() {
                acc += s * s;
                if acc.sqrt() >= tau * total.sqrt() {
                    return Ok(i + 1);
                }
            }
            Ok(rank)
        }
    }
}

/// Deterministic sign convention: the entry of largest magnitude in each
/// mode is made positive.
fn fix_signs(z: &mut DMatrix<f64>) {
    for j in 0..z.ncols() {
        let mut best = 0usize;
        let mut mag = 0.0f64;
        for i in 0..z.nrows() {
            let a = z[(i, j)].abs();
            if a > mag {
                mag = a;
                best = i;
            }
        }
        if z[(best, j)] < 0.0 {
            for i in 0..z.nrows() {
                z[(i, j)] = -z[(i, j)];
            }
        }
    }
}

/// Euclidean POD via thin QR of the snapshot matrix and SVD of its R factor.
pub fn pod_qr_svd(p: &DMatrix<f64>, select: PodSelect) -> Result<PodBasis> {
    if p.ncols() == 0 || p.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("empty or zero snapshot matrix".into()));
    }
    let qr = p.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let svd = r.svd(true, false);
    let u_r = svd
        .u
        .ok_or_else(|| Error::SingularFactorization("SVD of R factor failed".into()))?;
    let svals: Vec<f64> = svd.singular_values.iter().copied().collect();
    let n = select_modes(&svals, select)?;
    let tol = rank_tolerance(&svals);
    let spectrum: Vec<f64> = svals.iter().copied().filter(|s| *s > tol).collect();
    let mut z = &q * u_r.columns(0, n).into_owned();
    fix_signs(&mut z);
    Ok(PodBasis {
        z,
        singular_values: spectrum,
        mode: PodMode::Euclidean,
    })
}

/// Applies blockdiag(M0, M0) to each column.
pub fn block_mass_apply(fom: &FomOperators, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = fom.n;
    assert_eq!(x.nrows(), 2 * n);
    let mut out = DMatrix::zeros(2 * n, x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let top = fom.m0.matvec_alloc(&col[..n]);
        let bottom = fom.m0.matvec_alloc(&col[n..]);
        for i in 0..n {
            out[(i, j)] = top[i];
            out[(n + i, j)] = bottom[i];
        }
    }
    out
}

/// Mass-weighted POD via the snapshot correlation matrix P^T M P.
pub fn pod_correlation(
    p: &DMatrix<f64>,
    fom: &FomOperators,
    select: PodSelect,
) -> Result<PodBasis> {
    if p.ncols() == 0 || p.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("empty or zero snapshot matrix".into()));
    }
    let mp = block_mass_apply(fom, p);
    let corr = p.transpose() * &mp;
    let eig = corr.symmetric_eigen();
    let mut pairs: Vec<(f64, usize)> = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let lambda_max = pairs[0].0;
    if lambda_max <= 0.0 {
        return Err(Error::Rank {
            requested: 1,
            rank: 0,
        });
    }
    // eigenvalues of C_P are squared singular values in the M inner product
    let svals: Vec<f64> = pairs
        .iter()
        .map(|(l, _)| l.max(0.0).sqrt())
        .collect();
    let n = select_modes(&svals, select)?;
    let tol = rank_tolerance(&svals);
    let spectrum: Vec<f64> = svals.iter().copied().filter(|s| *s > tol).collect();
    if n > spectrum.len() {
        return Err(Error::Rank {
            requested: n,
            rank: spectrum.len(),
        });
    }
    let mut z = DMatrix::zeros(p.nrows(), n);
    for (j, (lambda, idx)) in pairs.iter().take(n).enumerate() {
        let u = eig.eigenvectors.column(*idx);
        let mode = p * u / lambda.sqrt();
        z.set_column(j, &mode);
    }
    fix_signs(&mut z);
    Ok(PodBasis {
        z,
        singular_values: spectrum,
        mode: PodMode::MassWeighted,
    })
}

/// Coefficients of the orthogonal projection of `v` onto the basis, in the
/// basis's own inner product.
pub fn project_coefficients(
    basis: &PodBasis,
    fom: &FomOperators,
    v: &DVector<f64>,
) -> DVector<f64> {
    match basis.mode {
        PodMode::Euclidean => basis.z.transpose() * v,
        PodMode::MassWeighted => {
            let mv = block_mass_apply(fom, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
            basis.z.transpose() * DVector::from_column_slice(mv.column(0).as_slice())
        }
    }
}

/// Max-norm departure from orthonormality in the basis's inner product.
pub fn orthonormality_defect(basis: &PodBasis, fom: &FomOperators) -> f64 {
    let gram = match basis.mode {
        PodMode::Euclidean => basis.z.transpose() * &basis.z,
        PodMode::MassWeighted => basis.z.transpose() * block_mass_apply(fom, &basis.z),
    };
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operators, default_source_profile};
    use crate::mesh::generate_duct_mesh;
    use approx::assert_relative_eq;

    fn desk_fom() -> FomOperators {
        let mesh = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.1).unwrap();
        assemble_operators(&mesh, default_source_profile).unwrap()
    }

    #[test]
    fn paper_grid_has_720_samples() {
        let grid = paper_sample_grid();
        assert_eq!(grid.len(), 720);
        assert_relative_eq!(grid[0].k, 5.0);
        assert_relative_eq!(grid.last().unwrap().k, 10.0);
    }

    #[test]
    fn grid_size_is_product_of_cardinalities() {
        let g = default_sample_grid(3, (1.0, 2.0), &[(1.0, 0.0)], &[0.5, 2.0], &[-1.0]);
        assert_eq!(g.len(), 3 * 1 * 2 * 1);
        let g2 = default_sample_grid(2, (1.0, 2.0), &[(1.0, 0.0)], &[0.5], &[-1.0]);
        assert_eq!(g2.len(), 2);
    }

    #[test]
    fn single_sample_snapshot_matches_direct_solve() {
        let fom = desk_fom();
        let s = SampleQuad {
            k: 5.0,
            mu_r: 1.0,
            mu_i: 2.0,
            xi_r: 1.0,
            xi_i: -1.0,
        };
        let set = build_snapshots(&fom, &[s], SolveMethod::Direct).unwrap();
        assert_eq!(set.p.ncols(), 1);
        let theta = s.params().unwrap();
        let xi = s.impedance().unwrap();
        let sys = apply_dirichlet(&assemble_block(&fom, &theta, &xi).unwrap(), &fom, &theta);
        let (p, _) = solve_fom(&sys, &fom, &theta, &xi, SolveMethod::Direct).unwrap();
        for (a, b) in set.p.column(0).iter().zip(&p) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn duplicate_sample_duplicates_column() {
        let fom = desk_fom();
        let s = SampleQuad {
            k: 5.0,
            mu_r: 1.0,
            mu_i: 0.0,
            xi_r: 1.0,
            xi_i: -1.0,
        };
        let set = build_snapshots(&fom, &[s, s], SolveMethod::Direct).unwrap();
        assert_eq!(set.p.column(0), set.p.column(1));
    }

    #[test]
    fn qr_svd_exact_on_orthogonal_columns() {
        let mut p = DMatrix::zeros(6, 2);
        p[(0, 0)] = 2.0;
        p[(3, 1)] = -1.5;
        let basis = pod_qr_svd(&p, PodSelect::Rank(2)).unwrap();
        // exact reconstruction: residual of both columns is zero
        for j in 0..2 {
            let col = p.column(j).into_owned();
            let coeff = basis.z.transpose() * &col;
            let rec = &basis.z * coeff;
            let res = (&col - rec).norm();
            assert!(res < 1e-12);
        }
    }

    #[test]
    fn qr_svd_matches_dense_svd_oracle() {
        let mut p = DMatrix::zeros(50, 10);
        let mut state = 7u64;
        for v in p.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5;
        }
        let basis = pod_qr_svd(&p, PodSelect::Rank(10)).unwrap();
        let svd = p.clone().svd(true, false);
        let u = svd.u.unwrap();
        for j in 0..10 {
            assert_relative_eq!(
                basis.singular_values[j],
                svd.singular_values[j],
                max_relative = 1e-10
            );
            // columns agree up to sign
            let a = basis.z.column(j);
            let b = u.column(j);
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            let diff: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - dot.signum() * y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff < 1e-8, "mode {j} differs by {diff}");
        }
    }

    #[test]
    fn rank_request_beyond_numerical_rank_errors() {
        let mut p = DMatrix::zeros(8, 3);
        for i in 0..8 {
            p[(i, 0)] = i as f64;
            p[(i, 1)] = 2.0 * i as f64; // dependent column
            p[(i, 2)] = (i as f64).sin();
        }
        let err = pod_qr_svd(&p, PodSelect::Rank(3)).unwrap_err();
        match err {
            Error::Rank { requested, rank } => {
                assert_eq!(requested, 3);
                assert_eq!(rank, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn correlation_single_snapshot_is_m_normalized() {
        let fom = desk_fom();
        let s = SampleQuad {
            k: 6.0,
            mu_r: 1.0,
            mu_i: 1.0,
            xi_r: 0.5,
            xi_i: -0.5,
        };
        let set = build_snapshots(&fom, &[s], SolveMethod::Direct).unwrap();
        let basis = pod_correlation(&set.p, &fom, PodSelect::Rank(1)).unwrap();
        assert!(orthonormality_defect(&basis, &fom) < 1e-10);
        // mode is the snapshot up to M-normalization and sign
        let z = basis.z.column(0);
        let p = set.p.column(0);
        let ratio = z[0] / p[0];
        for (a, b) in z.iter().zip(p.iter()) {
            assert_relative_eq!(*a, ratio * b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2_tail_identity_on_small_snapshot_set() {
        let fom = desk_fom();
        let grid = default_sample_grid(
            5,
            (4.0, 8.0),
            &[(1.0, 0.0), (0.0, 1.0)],
            &[0.5, 2.0],
            &[-0.5],
        );
        let set = build_snapshots(&fom, &grid, SolveMethod::Direct).unwrap();
        let full = pod_correlation(&set.p, &fom, PodSelect::Energy(0.999999999)).unwrap();
        let d = full.num_modes();
        let lambdas: Vec<f64> = full.singular_values.iter().map(|s| s * s).collect();
        for n in 1..d {
            let basis = full.truncated(n).unwrap();
            let mut err_sum = 0.0;
            for j in 0..set.p.ncols() {
                let col = set.p.column(j).into_owned();
                let coeff = project_coefficients(&basis, &fom, &col);
                let resid = &col - &basis.z * coeff;
                let rm = block_mass_apply(
                    &fom,
                    &DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()),
                );
                err_sum += resid.dot(&DVector::from_column_slice(rm.column(0).as_slice()));
            }
            let tail: f64 = lambdas[n..].iter().sum();
            assert_relative_eq!(err_sum, tail, max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn euclidean_orthonormality() {
        let fom = desk_fom();
        let grid = default_sample_grid(3, (5.0, 7.0), &[(1.0, 0.0)], &[1.0], &[-1.0]);
        let set = build_snapshots(&fom, &grid, SolveMethod::Direct).unwrap();
        let basis = pod_qr_svd(&set.p, PodSelect::Rank(3)).unwrap();
        assert!(orthonormality_defect(&basis, &fom) < 1e-10);
        // spectrum strictly positive and non-increasing
        for w in basis.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
            assert!(w[1] > 0.0);
        }
    }
}
