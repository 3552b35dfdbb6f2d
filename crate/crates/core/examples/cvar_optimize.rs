//! Optimize the liner impedance against the smoothed CVaR of the acoustic
//! energy under random wavenumber and source amplitude.
//!
//! The reduced model makes each Monte Carlo sample cheap enough to use
//! thousands of draws per objective evaluation; the gradient comes from one
//! reduced adjoint solve per active sample. Raising the probability level
//! beta shifts the design toward protecting against the worst cases.
//!
//! ```bash
//! cargo run --release --example cvar_optimize
//! ```

use ducfem::assembly::{assemble_operators, multimode_source_profile};
use ducfem::bfgs::{minimize, BfgsOptions};
use ducfem::cvar::{
    empirical_var_cvar, hard_wall_normalizer, sample_energies, sample_params, CvarConfig,
    CvarObjective,
};
use ducfem::fom::{Impedance, RandomParams, SolveMethod};
use ducfem::mesh::generate_duct_mesh;
use ducfem::pod::{build_snapshots, default_sample_grid, pod_correlation, PodSelect};
use ducfem::rom::project_operators;
use nalgebra::DVector;

fn main() -> ducfem::Result<()> {
    // offline: snapshots and reduced operators
    let mesh = generate_duct_mesh(2.0, 1.0, 0.6, 0.8, 0.1)?;
    let fom = assemble_operators(&mesh, multimode_source_profile(1.0))?;
    let grid = default_sample_grid(
        30,
        (5.0, 10.0),
        &[(1.0, 0.0), (0.0, 1.0)],
        &[1.0, 10.0, 40.0, 100.0],
        &[-100.0, -30.0, -4.0, 4.0, 30.0, 100.0],
    );
    let set = build_snapshots(&fom, &grid, SolveMethod::Direct)?;
    let basis = pod_correlation(&set.p, &fom, PodSelect::Energy(1.0))?.truncated(24)?;
    let ops = project_operators(&basis, &fom)?;

    // normalize energies by the hard-wall energy at the nominal parameter
    let theta0 = RandomParams::new(10.0, 30.0, 30.0)?;
    let gamma_p = hard_wall_normalizer(&ops, &theta0)?;
    println!("offline done: N = {} modes, gamma_p = {gamma_p:.4e}", basis.num_modes());

    let base = CvarConfig::paper_defaults(0.5, 2000, 77, gamma_p);
    let samples = sample_params(&base)?;
    println!(
        "{:>5} {:>10} {:>10} {:>9} {:>9} {:>5} {:>7}",
        "beta", "xi_r*", "xi_i*", "J*", "alpha*", "iters", "solves"
    );
    for beta in [0.5, 0.75, 0.95] {
        let cfg = CvarConfig { beta, ..base.clone() };
        let obj = CvarObjective::new(&samples, &ops, &cfg);
        // start alpha at the empirical beta-quantile at the initial design
        let xi0 = Impedance::new(10.0, 10.0)?;
        let e0 = sample_energies(&xi0, &samples, &ops, &cfg, None)?;
        let (alpha0, _) = empirical_var_cvar(&e0, beta, None);
        let x0 = DVector::from_column_slice(&[10.0, 10.0, alpha0]);
        let st = minimize(&obj, &x0, &BfgsOptions::default())?;
        println!(
            "{beta:>5} {:>10.4} {:>10.4} {:>9.5} {:>9.5} {:>5} {:>7}",
            st.x[0],
            st.x[1],
            st.j,
            st.x[2],
            st.iter,
            obj.solve_count()
        );
    }
    Ok(())
}
