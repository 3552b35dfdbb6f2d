//! Build a POD basis from full-order snapshots and inspect its singular
//! spectrum and the energy-based mode-count rule.
//!
//! Both construction paths are shown: the Euclidean thin-QR + SVD route and
//! the mass-weighted correlation-matrix route (orthonormal in the L2 inner
//! product of the mesh).
//!
//! ```bash
//! cargo run --release --example pod_spectrum
//! ```

use ducfem::assembly::{assemble_operators, default_source_profile};
use ducfem::fom::SolveMethod;
use ducfem::mesh::generate_duct_mesh;
use ducfem::pod::{
    build_snapshots, default_sample_grid, orthonormality_defect, pod_correlation, pod_qr_svd,
    selected_count, PodSelect,
};

fn main() -> ducfem::Result<()> {
    let mesh = generate_duct_mesh(2.0, 1.0, 0.6, 0.8, 0.1)?;
    let fom = assemble_operators(&mesh, default_source_profile)?;
    let grid = default_sample_grid(
        20,
        (5.0, 10.0),
        &[(1.0, 0.0), (0.0, 1.0)],
        &[1.0, 10.0, 100.0],
        &[-30.0, -4.0, 4.0, 30.0],
    );
    println!("solving {} snapshots on {} nodes...", grid.len(), fom.n);
    let set = build_snapshots(&fom, &grid, SolveMethod::Direct)?;

    let euclid = pod_qr_svd(&set.p, PodSelect::Energy(1.0))?;
    let weighted = pod_correlation(&set.p, &fom, PodSelect::Energy(1.0))?;
    println!(
        "numerical rank: {} (euclidean) / {} (mass-weighted)",
        euclid.num_modes(),
        weighted.num_modes()
    );
    println!(
        "orthonormality defect: {:.2e} (euclidean) / {:.2e} (mass-weighted)",
        orthonormality_defect(&euclid, &fom),
        orthonormality_defect(&weighted, &fom)
    );

    let s = &weighted.singular_values;
    println!("leading singular values (mass-weighted):");
    for (i, v) in s.iter().take(12).enumerate() {
        println!("  sigma_{:<2} = {:.4e}  ({:.2e} relative)", i + 1, v, v / s[0]);
    }

    println!("energy criterion: smallest N with retained energy >= tau");
    for tau in [0.9, 0.99, 0.995, 0.999, 0.9999] {
        let n = selected_count(s, PodSelect::Energy(tau))?;
        println!("  tau = {tau:<6} -> N = {n}");
    }
    Ok(())
}
