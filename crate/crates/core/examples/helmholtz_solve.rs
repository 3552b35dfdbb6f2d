//! Solve one full-order Helmholtz problem with an impedance liner, by the
//! direct banded factorization and by preconditioned GMRES, and compare.
//!
//! The complex liner impedance xi enters the Robin condition on the treated
//! wall segment; the GMRES path preconditions the indefinite system with a
//! complete factorization of the shifted Laplacian (beta1, beta2) = (1, 0.5).
//!
//! ```bash
//! cargo run --release --example helmholtz_solve
//! ```

use ducfem::assembly::{assemble_operators, default_source_profile};
use ducfem::fom::{
    apply_dirichlet, assemble_block, noise_energy, solve_fom, Impedance, RandomParams,
    SolveMethod,
};
use ducfem::mesh::generate_duct_mesh;

fn main() -> ducfem::Result<()> {
    let mesh = generate_duct_mesh(2.0, 1.0, 0.6, 0.8, 0.05)?;
    let fom = assemble_operators(&mesh, default_source_profile)?;
    println!("{} nodes ({} real unknowns)", fom.n, 2 * fom.n);

    let theta = RandomParams::new(8.0, 20.0, 20.0)?;
    let xi = Impedance::new(2.0, -1.0)?;
    let sys = apply_dirichlet(&assemble_block(&fom, &theta, &xi)?, &fom, &theta);

    let (p_direct, _) = solve_fom(&sys, &fom, &theta, &xi, SolveMethod::Direct)?;
    println!(
        "direct:  acoustic energy {:.6e} at k={}, xi={}{:+}i",
        noise_energy(&p_direct, &fom),
        theta.k,
        xi.xi_r,
        xi.xi_i
    );

    let (p_gmres, info) = solve_fom(&sys, &fom, &theta, &xi, SolveMethod::gmres_default())?;
    println!(
        "gmres:   {} iterations, final residual {:.2e}",
        info.iterations, info.residual
    );
    let norm: f64 = p_direct.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = p_direct
        .iter()
        .zip(&p_gmres)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    println!("solver agreement: relative difference {:.2e}", diff / norm);

    // hard wall for reference: the liner term switched off
    let hw = Impedance::hard_wall();
    let sys_hw = apply_dirichlet(&assemble_block(&fom, &theta, &hw)?, &fom, &theta);
    let (p_hw, _) = solve_fom(&sys_hw, &fom, &theta, &hw, SolveMethod::Direct)?;
    println!(
        "hard wall energy {:.6e} -> the liner removes {:.1}% of it",
        noise_energy(&p_hw, &fom),
        100.0 * (1.0 - noise_energy(&p_direct, &fom) / noise_energy(&p_hw, &fom))
    );
    Ok(())
}
