//! Offline projection of the full-order operators and the O(N) online
//! reduced solver. `RomOperators` deliberately holds no size-n data, so the
//! online path cannot touch the full-order space.

use nalgebra::{DMatrix, DVector};

use crate::assembly::FomOperators;
use crate::error::{Error, Result};
use crate::fom::{
    apply_dirichlet, assemble_block, solve_fom, Impedance, RandomParams,
    SolveMethod,
};
use crate::pod::{PodBasis, PodMode};
use crate::sparse::CsrMatrix;

/// Dense projected operators; everything needed for online assembly.
#[derive(Debug, Clone)]
pub struct RomOperators {
    pub mr: DMatrix<f64>,
    pub sr: DMatrix<f64>,
    pub k2r: DMatrix<f64>,
    pub k2r_skew: DMatrix<f64>,
    pub k4r_skew: DMatrix<f64>,
    pub ir: DMatrix<f64>,
    /// Z^T blockdiag(M0,M0) Z, unmasked; identity in mass-weighted mode
    pub mr_energy: DMatrix<f64>,
    pub gr_red: DVector<f64>,
    pub gi_red: DVector<f64>,
    pub n_modes: usize,
    pub mode: PodMode,
    /// identifier of the basis used for projection
    pub basis_ref: String,
}

/// Reduced-coordinate solution for one parameter draw.
#[derive(Debug, Clone)]
pub struct RomSolution {
    pub p_rb: DVector<f64>,
    pub theta: RandomParams,
    pub xi: Impedance,
}

/// Largest mode count accepted for the dense online solver.
pub const MAX_MODES: usize = 512;

fn apply_scalar_blocks(
    fom: &FomOperators,
    w: &CsrMatrix,
    z: &DMatrix<f64>,
    skew: bool,
) -> DMatrix<f64> {
    let n = fom.n;
    let cols = z.ncols();
    let mut out = DMatrix::zeros(2 * n, cols);
    let mut top_in = vec![0.0; n];
    let mut bot_in = vec![0.0; n];
    for j in 0..cols {
        for i in 0..n {
            top_in[i] = z[(i, j)];
            bot_in[i] = z[(n + i, j)];
        }
        let (top, bot) = if skew {
            // [[0, -W],[W, 0]]
            let t: Vec<f64> = w.matvec_alloc(&bot_in).iter().map(|v| -v).collect();
            (t, w.matvec_alloc(&top_in))
        } else {
            (w.matvec_alloc(&top_in), w.matvec_alloc(&bot_in))
        };
        for i in 0..n {
            out[(i, j)] = top[i];
            out[(n + i, j)] = bot[i];
        }
    }
    out
}

fn zero_dirichlet_rows(fom: &FomOperators, x: &mut DMatrix<f64>) {
    let n = fom.n;
    for &i in &fom.dirichlet_idx {
        for j in 0..x.ncols() {
            x[(i, j)] = 0.0;
            x[(n + i, j)] = 0.0;
        }
    }
}

/// Projects all full-order operators onto the basis.
pub fn project_operators(basis: &PodBasis, fom: &FomOperators) -> Result<RomOperators> {
    let n = fom.n;
    let z = &basis.z;
    if z.nrows() != 2 * n {
        return Err(Error::Dimension(format!(
            "basis has {} rows, expected {}",
            z.nrows(),
            2 * n
        )));
    }
    let n_modes = z.ncols();
    if n_modes > MAX_MODES {
        return Err(Error::InvalidArgument(format!(
            "mode count {n_modes} exceeds the dense-solver limit {MAX_MODES}"
        )));
    }
    let zt = z.transpose();

    let masked_projection = |w: &CsrMatrix, skew: bool| -> DMatrix<f64> {
        let mut wz = apply_scalar_blocks(fom, w, z, skew);
        zero_dirichlet_rows(fom, &mut wz);
        &zt * wz
    };

    let mr = masked_projection(&fom.m0, false);
    let sr = masked_projection(&fom.s0, false);
    let k2r = masked_projection(&fom.k2_0, false);
    let k2r_skew = masked_projection(&fom.k2_0, true);
    let k4r_skew = masked_projection(&fom.k4_0, true);

    // I_r = Z^T I_Gamma1 Z: only Dirichlet rows of Z contribute
    let mut ir = DMatrix::zeros(n_modes, n_modes);
    for &i in &fom.dirichlet_idx {
        for r in [i, n + i] {
            for a in 0..n_modes {
                for b in 0..n_modes {
                    ir[(a, b)] += z[(r, a)] * z[(r, b)];
                }
            }
        }
    }

    let mr_energy = {
        let mz = apply_scalar_blocks(fom, &fom.m0, z, false);
        &zt * mz
    };

    let mut gr = DVector::zeros(2 * n);
    let mut gi = DVector::zeros(2 * n);
    for &i in &fom.dirichlet_idx {
        gr[i] = fom.g_gamma1[i];
        gi[n + i] = fom.g_gamma1[i];
    }
    let gr_red = &zt * gr;
    let gi_red = &zt * gi;

    Ok(RomOperators {
        mr,
        sr,
        k2r,
        k2r_skew,
        k4r_skew,
        ir,
        mr_energy,
        gr_red,
        gi_red,
        n_modes,
        mode: basis.mode,
        basis_ref: format!("pod-{:?}-N{}", basis.mode, n_modes),
    })
}

pub(crate) fn assemble_reduced_matrix(
    ops: &RomOperators,
    k: f64,
    xi: &Impedance,
) -> Result<DMatrix<f64>> {
    let (c_sym, c_skew) = xi.liner_coefficients(k)?;
    Ok(&ops.sr - k * k * &ops.mr + c_sym * &ops.k2r + c_skew * &ops.k2r_skew
        + k * &ops.k4r_skew
        + &ops.ir)
}

/// Online assembly of the dense reduced system; O(N^2) work, no size-n data.
pub fn assemble_rom(
    ops: &RomOperators,
    theta: &RandomParams,
    xi: &Impedance,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let a_r = assemble_reduced_matrix(ops, theta.k, xi)?;
    let b_r = theta.mu_r * &ops.gr_red + theta.mu_i * &ops.gi_red;
    Ok((a_r, b_r))
}

/// Analytic derivatives of the reduced matrix with respect to the
/// impedance components.
pub fn reduced_matrix_xi_derivatives(
    ops: &RomOperators,
    theta: &RandomParams,
    xi: &Impedance,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if xi.hard_wall {
        return Err(Error::InvalidArgument(
            "impedance sensitivities are undefined for a hard wall".into(),
        ));
    }
    let k = theta.k;
    let (r, im) = (xi.xi_r, xi.xi_i);
    let norm2 = r * r + im * im;
    if norm2 == 0.0 {
        return Err(Error::InvalidArgument("|xi| = 0".into()));
    }
    let norm4 = norm2 * norm2;
    let d_dr = k * ((-2.0 * r * im / norm4) * &ops.k2r + ((im * im - r * r) / norm4) * &ops.k2r_skew);
    let d_di = k * (((r * r - im * im) / norm4) * &ops.k2r + (-2.0 * r * im / norm4) * &ops.k2r_skew);
    Ok((d_dr, d_di))
}

/// Dense LU solve of the reduced system.
pub fn solve_rom(
    a_r: &DMatrix<f64>,
    b_r: &DVector<f64>,
    theta: &RandomParams,
    xi: &Impedance,
) -> Result<RomSolution> {
    let lu = a_r.clone().lu();
    match lu.solve(b_r) {
        Some(p_rb) if p_rb.iter().all(|v| v.is_finite()) => Ok(RomSolution {
            p_rb,
            theta: *theta,
            xi: *xi,
        }),
        _ => {
            let u = lu.u();
            let mut dmax = 0.0f64;
            let mut dmin = f64::INFINITY;
            for i in 0..u.nrows().min(u.ncols()) {
                let d = u[(i, i)].abs();
                dmax = dmax.max(d);
                dmin = dmin.min(d);
            }
            let cond = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
            Err(Error::SingularReduced { sample: 0, cond })
        }
    }
}

/// Reduced acoustic energy p_rb^T (Z^T M Z) p_rb; equals the squared
/// Euclidean norm of the coordinates in mass-weighted mode.
pub fn rom_energy(sol: &RomSolution, ops: &RomOperators) -> f64 {
    (sol.p_rb.transpose() * &ops.mr_energy * &sol.p_rb)[(0, 0)]
}

/// Relative Euclidean reconstruction error of the ROM against the FOM.
pub fn relative_error(
    xi: &Impedance,
    theta: &RandomParams,
    basis: &PodBasis,
    ops: &RomOperators,
    fom: &FomOperators,
    method: SolveMethod,
) -> Result<f64> {
    let sys = apply_dirichlet(&assemble_block(fom, theta, xi)?, fom, theta);
    let (p, _) = solve_fom(&sys, fom, theta, xi, method)?;
    let pnorm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if pnorm == 0.0 {
        return Err(Error::InvalidArgument(
            "zero full-order solution, relative error undefined".into(),
        ));
    }
    let (a_r, b_r) = assemble_rom(ops, theta, xi)?;
    let sol = solve_rom(&a_r, &b_r, theta, xi)?;
    let rec = &basis.z * &sol.p_rb;
    let diff: f64 = rec
        .iter()
        .zip(&p)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / pnorm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operators, default_source_profile};
    use crate::fom::noise_energy;
    use crate::mesh::generate_duct_mesh;
    use crate::pod::{build_snapshots, default_sample_grid, pod_correlation, PodSelect, SampleQuad};
    use approx::assert_relative_eq;

    fn desk_fom() -> FomOperators {
        let mesh = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.12).unwrap();
        assemble_operators(&mesh, default_source_profile).unwrap()
    }

    fn dense_of(a: &CsrMatrix) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(a.nrows, a.ncols);
        for (r, c, v) in a.iter_entries() {
            m[(r, c)] += v;
        }
        m
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
    }

    fn random_orthonormal(n2: usize, cols: usize, seed: u64) -> PodBasis {
        let mut state = seed;
        let mut m = DMatrix::zeros(n2, cols);
        for v in m.iter_mut() {
            *v = lcg(&mut state);
        }
        let q = m.qr().q();
        PodBasis {
            z: q,
            singular_values: vec![1.0; cols],
            mode: PodMode::Euclidean,
        }
    }

    #[test]
    fn identity_basis_reproduces_fom() {
        let fom = desk_fom();
        let n2 = 2 * fom.n;
        let basis = PodBasis::identity(n2);
        let ops = project_operators(&basis, &fom).unwrap();
        let theta = RandomParams::new(5.0, 2.0, -1.0).unwrap();
        let xi = Impedance::new(1.0, -1.0).unwrap();
        let sys = apply_dirichlet(&assemble_block(&fom, &theta, &xi).unwrap(), &fom, &theta);
        let (a_r, b_r) = assemble_rom(&ops, &theta, &xi).unwrap();
        let a_dense = dense_of(&sys.a);
        assert!((a_r - &a_dense).amax() < 1e-10);
        for (i, v) in b_r.iter().enumerate() {
            assert_relative_eq!(*v, sys.b[i], epsilon = 1e-14);
        }
        let e = relative_error(&xi, &theta, &basis, &ops, &fom, SolveMethod::Direct).unwrap();
        assert!(e <= 1e-10, "identity-basis relative error {e}");
    }

    #[test]
    fn single_mode_reduces_to_scalars() {
        let fom = desk_fom();
        let s = SampleQuad {
            k: 5.0,
            mu_r: 1.0,
            mu_i: 0.0,
            xi_r: 1.0,
            xi_i: -1.0,
        };
        let set = build_snapshots(&fom, &[s], SolveMethod::Direct).unwrap();
        let basis = pod_correlation(&set.p, &fom, PodSelect::Rank(1)).unwrap();
        let ops = project_operators(&basis, &fom).unwrap();
        let theta = s.params().unwrap();
        let xi = s.impedance().unwrap();
        let (a_r, b_r) = assemble_rom(&ops, &theta, &xi).unwrap();
        assert_eq!(a_r.nrows(), 1);
        let sol = solve_rom(&a_r, &b_r, &theta, &xi).unwrap();
        assert_relative_eq!(sol.p_rb[0], b_r[0] / a_r[(0, 0)], max_relative = 1e-14);
    }

    #[test]
    fn masked_plus_dirichlet_partition_identity() {
        let fom = desk_fom();
        let n = fom.n;
        let basis = random_orthonormal(2 * n, 12, 99);
        let z = &basis.z;
        // Z^T (I-I_G) M Z + Z^T I_G M Z = Z^T M Z
        let mz = apply_scalar_blocks(&fom, &fom.m0, z, false);
        let mut masked = mz.clone();
        zero_dirichlet_rows(&fom, &mut masked);
        let mut dirichlet_part = DMatrix::zeros(2 * n, 12);
        for &i in &fom.dirichlet_idx {
            for r in [i, n + i] {
                for j in 0..12 {
                    dirichlet_part[(r, j)] = mz[(r, j)];
                }
            }
        }
        let lhs = z.transpose() * (&masked + &dirichlet_part);
        let rhs = z.transpose() * &mz;
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn online_assembly_matches_direct_projection() {
        let fom = desk_fom();
        let n2 = 2 * fom.n;
        let basis = random_orthonormal(n2, 10, 4242);
        let ops = project_operators(&basis, &fom).unwrap();
        let mut state = 7u64;
        for t in 0..10 {
            let k = 3.0 + 6.0 * (lcg(&mut state) + 0.5);
            let xi = Impedance::new(0.05 + 2.0 * (lcg(&mut state) + 0.5), -1.5 * (lcg(&mut state) + 0.5) - 0.01)
                .unwrap();
            let theta = RandomParams::new(k, lcg(&mut state), lcg(&mut state)).unwrap();
            let sys = apply_dirichlet(&assemble_block(&fom, &theta, &xi).unwrap(), &fom, &theta);
            let a_dense = dense_of(&sys.a);
            let slow = basis.z.transpose() * &a_dense * &basis.z;
            let (a_r, b_r) = assemble_rom(&ops, &theta, &xi).unwrap();
            assert!((a_r - slow).amax() < 1e-10, "draw {t}");
            let b_slow = basis.z.transpose() * DVector::from_column_slice(&sys.b);
            assert!((b_r - b_slow).amax() < 1e-12);
        }
    }

    #[test]
    fn hard_wall_and_zero_k_limits() {
        let fom = desk_fom();
        let basis = random_orthonormal(2 * fom.n, 6, 17);
        let ops = project_operators(&basis, &fom).unwrap();
        let theta = RandomParams::new(4.0, 1.0, 0.0).unwrap();
        let hw = assemble_rom(&ops, &theta, &Impedance::hard_wall()).unwrap().0;
        let expect = &ops.sr - 16.0 * &ops.mr + 4.0 * &ops.k4r_skew + &ops.ir;
        assert!((hw - expect).amax() < 1e-12);
        // k = 0 limit through the internal assembly path
        let a0 = assemble_reduced_matrix(&ops, 0.0, &Impedance::new(1.0, -1.0).unwrap()).unwrap();
        assert!((a0 - (&ops.sr + &ops.ir)).amax() < 1e-14);
    }

    #[test]
    fn solve_rom_matches_gaussian_elimination_oracle() {
        let mut state = 31u64;
        let n = 90;
        let mut a = DMatrix::zeros(n, n);
        for v in a.iter_mut() {
            *v = lcg(&mut state);
        }
        for i in 0..n {
            a[(i, i)] += 3.0; // keep it comfortably nonsingular
        }
        let mut b = DVector::zeros(n);
        for v in b.iter_mut() {
            *v = lcg(&mut state);
        }
        let theta = RandomParams::new(1.0, 1.0, 0.0).unwrap();
        let xi = Impedance::new(1.0, 0.0).unwrap();
        let sol = solve_rom(&a, &b, &theta, &xi).unwrap();
        // independent oracle: plain Gaussian elimination with partial pivoting
        let mut m = a.clone();
        let mut rhs = b.clone();
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m[(r, col)].abs() > m[(piv, col)].abs() {
                    piv = r;
                }
            }
            if piv != col {
                m.swap_rows(col, piv);
                rhs.swap_rows(col, piv);
            }
            for r in col + 1..n {
                let f = m[(r, col)] / m[(col, col)];
                for c in col..n {
                    let v = m[(col, c)];
                    m[(r, c)] -= f * v;
                }
                let v = rhs[col];
                rhs[r] -= f * v;
            }
        }
        let mut x = DVector::zeros(n);
        for r in (0..n).rev() {
            let mut acc = rhs[r];
            for c in r + 1..n {
                acc -= m[(r, c)] * x[c];
            }
            x[r] = acc / m[(r, r)];
        }
        assert!((sol.p_rb - x).amax() < 1e-11);
    }

    #[test]
    fn singular_reduced_system_reports_condition() {
        let a = DMatrix::zeros(3, 3);
        let b = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let theta = RandomParams::new(1.0, 1.0, 0.0).unwrap();
        let xi = Impedance::new(1.0, 0.0).unwrap();
        assert!(solve_rom(&a, &b, &theta, &xi).is_err());
    }

    #[test]
    fn rom_energy_consistency() {
        let fom = desk_fom();
        let grid = default_sample_grid(4, (4.0, 7.0), &[(1.0, 0.0), (0.0, 1.0)], &[0.5], &[-0.5]);
        let set = build_snapshots(&fom, &grid, SolveMethod::Direct).unwrap();
        let basis = pod_correlation(&set.p, &fom, PodSelect::Rank(5)).unwrap();
        let ops = project_operators(&basis, &fom).unwrap();
        // mass-weighted: energy matrix is the identity
        assert!((ops.mr_energy.clone() - DMatrix::identity(5, 5)).amax() < 1e-10);
        let theta = RandomParams::new(5.0, 1.0, 1.0).unwrap();
        let xi = Impedance::new(0.5, -0.5).unwrap();
        let mut state = 5u64;
        let p_rb = DVector::from_fn(5, |_, _| lcg(&mut state));
        let sol = RomSolution {
            p_rb: p_rb.clone(),
            theta,
            xi,
        };
        let e = rom_energy(&sol, &ops);
        assert_relative_eq!(e, p_rb.norm_squared(), max_relative = 1e-10);
        // equals the full-order energy of the reconstruction
        let rec: Vec<f64> = (&basis.z * &p_rb).iter().copied().collect();
        assert_relative_eq!(e, noise_energy(&rec, &fom), max_relative = 1e-10);
        // zero solution
        let zero = RomSolution {
            p_rb: DVector::zeros(5),
            theta,
            xi,
        };
        assert_eq!(rom_energy(&zero, &ops), 0.0);
    }

    #[test]
    fn in_sample_reproduction() {
        let fom = desk_fom();
        let grid = default_sample_grid(3, (4.0, 6.0), &[(1.0, 0.0)], &[0.5, 2.0], &[-0.5]);
        let set = build_snapshots(&fom, &grid, SolveMethod::Direct).unwrap();
        let basis = pod_correlation(&set.p, &fom, PodSelect::Energy(0.999999999)).unwrap();
        let ops = project_operators(&basis, &fom).unwrap();
        for s in &grid {
            let e = relative_error(
                &s.impedance().unwrap(),
                &s.params().unwrap(),
                &basis,
                &ops,
                &fom,
                SolveMethod::Direct,
            )
            .unwrap();
            assert!(e <= 1e-8, "in-sample error {e}");
        }
    }

    #[test]
    fn xi_derivatives_match_finite_differences() {
        let fom = desk_fom();
        let basis = random_orthonormal(2 * fom.n, 8, 3);
        let ops = project_operators(&basis, &fom).unwrap();
        let theta = RandomParams::new(6.0, 1.0, 1.0).unwrap();
        let xi = Impedance::new(1.3, -0.8).unwrap();
        let (d_dr, d_di) = reduced_matrix_xi_derivatives(&ops, &theta, &xi).unwrap();
        let h = 1e-6;
        let ap = assemble_reduced_matrix(&ops, theta.k, &Impedance::new(xi.xi_r + h, xi.xi_i).unwrap()).unwrap();
        let am = assemble_reduced_matrix(&ops, theta.k, &Impedance::new(xi.xi_r - h, xi.xi_i).unwrap()).unwrap();
        let fd_r = (ap - am) / (2.0 * h);
        assert!((fd_r - &d_dr).amax() < 1e-7);
        let ap = assemble_reduced_matrix(&ops, theta.k, &Impedance::new(xi.xi_r, xi.xi_i + h).unwrap()).unwrap();
        let am = assemble_reduced_matrix(&ops, theta.k, &Impedance::new(xi.xi_r, xi.xi_i - h).unwrap()).unwrap();
        let fd_i = (ap - am) / (2.0 * h);
        assert!((fd_i - &d_di).amax() < 1e-7);
    }
}
