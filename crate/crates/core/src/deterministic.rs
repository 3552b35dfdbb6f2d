//! Deterministic (single-parameter) impedance design objectives at a
//! nominal parameter, in full-order and reduced-order form. These back the
//! FOM-vs-ROM optimization comparison.

use nalgebra::DVector;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::assembly::FomOperators;
use crate::error::{Error, Result};
use crate::fom::{
    apply_dirichlet, assemble_block, noise_energy, solve_fom, Impedance, RandomParams, SolveMethod,
};
use crate::rom::{
    assemble_rom, reduced_matrix_xi_derivatives, rom_energy, solve_rom, RomOperators,
};
use crate::sparse::CsrMatrix;

/// Shared settings of the deterministic design problem
/// J(xi) = E(xi; theta) / (2 gamma_p) + (gamma/2) |xi|^2.
#[derive(Debug, Clone)]
pub struct DeterministicConfig {
    pub theta: RandomParams,
    pub gamma: f64,
    pub gamma_p: f64,
}

/// Full-order hard-wall energy at a parameter, for use as gamma_p.
pub fn hard_wall_energy_fom(fom: &FomOperators, theta: &RandomParams) -> Result<f64> {
    let hw = Impedance::hard_wall();
    let sys = apply_dirichlet(&assemble_block(fom, theta, &hw)?, fom, theta);
    let (p, _) = solve_fom(&sys, fom, theta, &hw, SolveMethod::Direct)?;
    Ok(noise_energy(&p, fom))
}

/// Coefficient derivatives of the liner term: (d c_sym / d xi_c,
/// d c_skew / d xi_c) for c in {r, i}, where c_sym = k xi_i / |xi|^2 and
/// c_skew = k xi_r / |xi|^2.
fn liner_coefficient_derivatives(k: f64, xi: &Impedance) -> ((f64, f64), (f64, f64)) {
    let (r, im) = (xi.xi_r, xi.xi_i);
    let m2 = r * r + im * im;
    let m4 = m2 * m2;
    let d_r = (-2.0 * k * r * im / m4, k * (im * im - r * r) / m4);
    let d_i = (k * (r * r - im * im) / m4, -2.0 * k * r * im / m4);
    (d_r, d_i)
}

/// q^T (dA/dxi_c) p for the Dirichlet-masked block system, where
/// dA/dxi_c = d_sym blockdiag(K2) + d_skew [[0, -K2], [K2, 0]] with the
/// Dirichlet rows zeroed.
fn masked_derivative_bilinear(
    fom: &FomOperators,
    q: &[f64],
    p: &[f64],
    d_sym: f64,
    d_skew: f64,
) -> f64 {
    let n = fom.n;
    let k2: &CsrMatrix = &fom.k2_0;
    let mut sym = 0.0;
    let mut skew = 0.0;
    for r in 0..n {
        if fom.is_dirichlet(r) {
            continue;
        }
        let (cols, vals) = k2.row(r);
        let mut wr = 0.0;
        let mut wi = 0.0;
        for (c, v) in cols.iter().zip(vals) {
            wr += v * p[*c];
            wi += v * p[n + *c];
        }
        sym += q[r] * wr + q[n + r] * wi;
        skew += -q[r] * wi + q[n + r] * wr;
    }
    d_sym * sym + d_skew * skew
}

/// The full-order deterministic objective over (xi_r, xi_i).
pub struct FomDeterministic<'a> {
    pub fom: &'a FomOperators,
    pub cfg: &'a DeterministicConfig,
    pub solves: AtomicUsize,
}

impl<'a> FomDeterministic<'a> {
    pub fn new(fom: &'a FomOperators, cfg: &'a DeterministicConfig) -> Self {
        FomDeterministic {
            fom,
            cfg,
            solves: AtomicUsize::new(0),
        }
    }

    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    fn state(&self, xi: &Impedance) -> Result<(crate::fom::BlockSystem, Vec<f64>)> {
        let sys = apply_dirichlet(
            &assemble_block(self.fom, &self.cfg.theta, xi)?,
            self.fom,
            &self.cfg.theta,
        );
        let (p, _) = solve_fom(&sys, self.fom, &self.cfg.theta, xi, SolveMethod::Direct)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        Ok((sys, p))
    }
}

impl crate::bfgs::Objective for FomDeterministic<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let xi = match Impedance::new(x[0], x[1]) {
            Ok(xi) => xi,
            // passivity bound xi_r > 0: infeasible trials backtrack
            Err(_) => return Ok(f64::INFINITY),
        };
        let (_, p) = self.state(&xi)?;
        let e = noise_energy(&p, self.fom);
        Ok(0.5 * e / self.cfg.gamma_p + 0.5 * self.cfg.gamma * (x[0] * x[0] + x[1] * x[1]))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let xi = Impedance::new(x[0], x[1])?;
        let (sys, p) = self.state(&xi)?;
        let n = self.fom.n;
        // adjoint rhs: dJ/dp = M_block p / gamma_p
        let mut rhs = vec![0.0; 2 * n];
        let mp_r = self.fom.m0.matvec_alloc(&p[..n]);
        let mp_i = self.fom.m0.matvec_alloc(&p[n..]);
        for i in 0..n {
            rhs[i] = mp_r[i] / self.cfg.gamma_p;
            rhs[n + i] = mp_i[i] / self.cfg.gamma_p;
        }
        let q = sys.solve_transposed(&rhs)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        let (d_r, d_i) = liner_coefficient_derivatives(self.cfg.theta.k, &xi);
        let g_r =
            self.cfg.gamma * x[0] - masked_derivative_bilinear(self.fom, &q, &p, d_r.0, d_r.1);
        let g_i =
            self.cfg.gamma * x[1] - masked_derivative_bilinear(self.fom, &q, &p, d_i.0, d_i.1);
        Ok(DVector::from_column_slice(&[g_r, g_i]))
    }
}

/// The reduced-order deterministic objective over (xi_r, xi_i).
pub struct RomDeterministic<'a> {
    pub ops: &'a RomOperators,
    pub cfg: &'a DeterministicConfig,
    pub solves: AtomicUsize,
}

impl<'a> RomDeterministic<'a> {
    pub fn new(ops: &'a RomOperators, cfg: &'a DeterministicConfig) -> Self {
        RomDeterministic {
            ops,
            cfg,
            solves: AtomicUsize::new(0),
        }
    }

    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

impl crate::bfgs::Objective for RomDeterministic<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let xi = match Impedance::new(x[0], x[1]) {
            Ok(xi) => xi,
            Err(_) => return Ok(f64::INFINITY),
        };
        let (a_r, b_r) = assemble_rom(self.ops, &self.cfg.theta, &xi)?;
        let sol = solve_rom(&a_r, &b_r, &self.cfg.theta, &xi)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        let e = rom_energy(&sol, self.ops);
        Ok(0.5 * e / self.cfg.gamma_p + 0.5 * self.cfg.gamma * (x[0] * x[0] + x[1] * x[1]))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let xi = Impedance::new(x[0], x[1])?;
        let (a_r, b_r) = assemble_rom(self.ops, &self.cfg.theta, &xi)?;
        let sol = solve_rom(&a_r, &b_r, &self.cfg.theta, &xi)?;
        self.solves.fetch_add(2, Ordering::Relaxed);
        let rhs = (&self.ops.mr_energy * &sol.p_rb) / self.cfg.gamma_p;
        let q = a_r
            .transpose()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularFactorization("deterministic adjoint".into()))?;
        let (d_dr, d_di) = reduced_matrix_xi_derivatives(self.ops, &self.cfg.theta, &xi)?;
        let g_r = self.cfg.gamma * x[0] - (q.transpose() * (&d_dr * &sol.p_rb))[(0, 0)];
        let g_i = self.cfg.gamma * x[1] - (q.transpose() * (&d_di * &sol.p_rb))[(0, 0)];
        Ok(DVector::from_column_slice(&[g_r, g_i]))
    }
}
