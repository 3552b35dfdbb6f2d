//! Measure out-of-sample reduced-order model accuracy against the full
//! model over random parameter draws, for a ladder of basis sizes.
//!
//! For each draw the full system is solved once and the reduced system is
//! solved online; the reported number is the relative Euclidean error of
//! the reconstructed field. The median should decay as modes are added.
//!
//! ```bash
//! cargo run --release --example rom_accuracy
//! ```

use ducfem::assembly::{assemble_operators, multimode_source_profile};
use ducfem::fom::{Impedance, RandomParams, SolveMethod};
use ducfem::mesh::generate_duct_mesh;
use ducfem::pod::{build_snapshots, default_sample_grid, pod_correlation, PodSelect};
use ducfem::rom::{project_operators, relative_error};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ducfem::Result<()> {
    let mesh = generate_duct_mesh(2.0, 1.0, 0.6, 0.8, 0.1)?;
    let fom = assemble_operators(&mesh, multimode_source_profile(1.0))?;
    let grid = default_sample_grid(
        30,
        (5.0, 10.0),
        &[(1.0, 0.0), (0.0, 1.0)],
        &[1.0, 10.0, 40.0, 100.0],
        &[-100.0, -30.0, -4.0, 4.0, 30.0, 100.0],
    );
    println!("offline: {} snapshots on {} nodes", grid.len(), fom.n);
    let set = build_snapshots(&fom, &grid, SolveMethod::Direct)?;
    let basis = pod_correlation(&set.p, &fom, PodSelect::Energy(1.0))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut u = |lo: f64, hi: f64| Uniform::new(lo, hi).sample(&mut rng);
    let draws: Vec<(RandomParams, Impedance)> = (0..40)
        .map(|_| {
            (
                RandomParams::new(u(5.0, 10.0), u(10.0, 30.0), u(10.0, 30.0)).unwrap(),
                Impedance::new(u(1e-6, 100.0), u(-100.0, 100.0)).unwrap(),
            )
        })
        .collect();

    println!("{:>4} {:>12} {:>12} {:>12}", "N", "median", "q1", "q3");
    for n in [8, 12, 16, 20, 24] {
        let zn = basis.truncated(n)?;
        let ops = project_operators(&zn, &fom)?;
        let mut errs: Vec<f64> = draws
            .iter()
            .map(|(theta, xi)| relative_error(xi, theta, &zn, &ops, &fom, SolveMethod::Direct))
            .collect::<ducfem::Result<_>>()?;
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = errs.len();
        println!(
            "{n:>4} {:>12.4e} {:>12.4e} {:>12.4e}",
            errs[m / 2],
            errs[m / 4],
            errs[3 * m / 4]
        );
    }
    Ok(())
}
