//! Cross-check the reduced model inside an optimization loop: run the same
//! deterministic impedance design problem against the full-order objective
//! and the reduced-order objective from the same starting point.
//!
//! The snapshot family sweeps the impedance plane at the design-point
//! parameters, so the reduced objective tracks the full one along the whole
//! optimization path and both BFGS runs land on the same optimum.
//!
//! ```bash
//! cargo run --release --example dual_optimization
//! ```

use ducfem::assembly::{assemble_operators, multimode_source_profile};
use ducfem::bfgs::{minimize, BfgsOptions};
use ducfem::deterministic::{
    hard_wall_energy_fom, DeterministicConfig, FomDeterministic, RomDeterministic,
};
use ducfem::fom::{RandomParams, SolveMethod};
use ducfem::mesh::generate_duct_mesh;
use ducfem::pod::{build_snapshots, pod_correlation, PodSelect, SampleQuad};
use ducfem::rom::project_operators;
use nalgebra::DVector;
use std::time::Instant;

fn main() -> ducfem::Result<()> {
    let mesh = generate_duct_mesh(2.0, 1.0, 0.6, 0.8, 0.05)?;
    let fom = assemble_operators(&mesh, multimode_source_profile(1.0))?;
    let theta = RandomParams::new(5.0, 10.0, 10.0)?;
    let gamma_p = hard_wall_energy_fom(&fom, &theta)?;

    // impedance sweep at the design point
    let mut grid = Vec::new();
    for xi_r in [0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
        for xi_i in [-10.0, -5.0, -2.0, -0.5, 0.0, 0.5, 2.0, 5.0, 10.0] {
            grid.push(SampleQuad {
                k: theta.k,
                mu_r: theta.mu_r,
                mu_i: theta.mu_i,
                xi_r,
                xi_i,
            });
        }
    }
    let set = build_snapshots(&fom, &grid, SolveMethod::Direct)?;
    let basis = pod_correlation(&set.p, &fom, PodSelect::Energy(1.0))?;
    let ops = project_operators(&basis, &fom)?;
    println!("basis: {} modes from {} snapshots", basis.num_modes(), grid.len());

    let dcfg = DeterministicConfig {
        theta,
        gamma: 1e-6,
        gamma_p,
    };
    let x0 = DVector::from_column_slice(&[10.0, 10.0]);
    let opts = BfgsOptions::default();

    let t = Instant::now();
    let fobj = FomDeterministic::new(&fom, &dcfg);
    let fst = minimize(&fobj, &x0, &opts)?;
    println!(
        "FOM: xi* = {:.5}{:+.5}i  J* = {:.6}  ({} iterations, {} solves, {:.2}s)",
        fst.x[0],
        fst.x[1],
        fst.j,
        fst.iter,
        fobj.solve_count(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let robj = RomDeterministic::new(&ops, &dcfg);
    let rst = minimize(&robj, &x0, &opts)?;
    println!(
        "ROM: xi* = {:.5}{:+.5}i  J* = {:.6}  ({} iterations, {} solves, {:.2}s)",
        rst.x[0],
        rst.x[1],
        rst.j,
        rst.iter,
        robj.solve_count(),
        t.elapsed().as_secs_f64()
    );

    let diff = ((fst.x[0] - rst.x[0]).powi(2) + (fst.x[1] - rst.x[1]).powi(2)).sqrt();
    let scale = (fst.x[0].powi(2) + fst.x[1].powi(2)).sqrt();
    println!("optima agree to {:.2e} relative", diff / scale);
    Ok(())
}
