//! Verify the adjoint gradient of the smoothed-CVaR objective against
//! central finite differences at random control points.
//!
//! Each gradient evaluation costs one reduced state solve and one reduced
//! adjoint solve per active sample; the finite-difference probe costs two
//! full objective evaluations per control component and serves only as an
//! independent check.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use ducfem::assembly::{assemble_operators, multimode_source_profile};
use ducfem::cvar::{
    evaluate_objective, hard_wall_normalizer, sample_params, solve_adjoints_and_gradient,
    CvarConfig,
};
use ducfem::fom::{Impedance, RandomParams, SolveMethod};
use ducfem::mesh::generate_duct_mesh;
use ducfem::pod::{build_snapshots, default_sample_grid, pod_correlation, PodSelect};
use ducfem::rom::project_operators;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ducfem::Result<()> {
    let mesh = generate_duct_mesh(2.0, 1.0, 0.6, 0.8, 0.1)?;
    let fom = assemble_operators(&mesh, multimode_source_profile(1.0))?;
    let grid = default_sample_grid(
        20,
        (5.0, 10.0),
        &[(1.0, 0.0), (0.0, 1.0)],
        &[1.0, 10.0, 100.0],
        &[-30.0, -4.0, 4.0, 30.0],
    );
    let set = build_snapshots(&fom, &grid, SolveMethod::Direct)?;
    let basis = pod_correlation(&set.p, &fom, PodSelect::Energy(0.9999))?;
    let ops = project_operators(&basis, &fom)?;

    let theta0 = RandomParams::new(10.0, 30.0, 30.0)?;
    let cfg = CvarConfig::paper_defaults(0.9, 64, 123, hard_wall_normalizer(&ops, &theta0)?);
    let samples = sample_params(&cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut u = |lo: f64, hi: f64| Uniform::new(lo, hi).sample(&mut rng);
    println!(
        "{:>24} {:>14} {:>14} {:>10}",
        "control point", "component", "rel error", ""
    );
    for _ in 0..5 {
        let x = [u(0.5, 5.0), u(-5.0, 5.0), u(0.3, 1.2)];
        let xi = Impedance::new(x[0], x[1])?;
        let g = solve_adjoints_and_gradient(&xi, x[2], &samples, &ops, &cfg, None)?;
        for (c, name) in ["xi_r", "xi_i", "alpha"].iter().enumerate() {
            let h = 1e-6 * x[c].abs().max(1.0);
            let at = |x: [f64; 3]| -> ducfem::Result<f64> {
                Ok(evaluate_objective(&Impedance::new(x[0], x[1])?, x[2], &samples, &ops, &cfg)?.0)
            };
            let mut xp = x;
            xp[c] += h;
            let mut xm = x;
            xm[c] -= h;
            let fd = (at(xp)? - at(xm)?) / (2.0 * h);
            let rel = (g[c] - fd).abs() / fd.abs().max(g[c].abs()).max(1e-12);
            println!(
                "({:+.3},{:+.3},{:+.3}) {:>14} {:>14.3e} {}",
                x[0],
                x[1],
                x[2],
                name,
                rel,
                if rel < 1e-5 { "ok" } else { "MISMATCH" }
            );
        }
    }
    Ok(())
}
