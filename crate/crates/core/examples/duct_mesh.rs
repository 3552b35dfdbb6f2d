//! Generate a structured duct mesh and assemble the parameter-independent
//! finite-element operators.
//!
//! The duct is the rectangle [0, L] x [0, H] with four boundary roles: the
//! fan source at x = 0, an acoustic liner segment on the top wall, a
//! non-reflecting far-field condition at x = L, and hard walls elsewhere.
//!
//! ```bash
//! cargo run --release --example duct_mesh
//! ```

use ducfem::assembly::{assemble_operators, default_source_profile};
use ducfem::mesh::{generate_duct_mesh, TAG_FAR_FIELD, TAG_LINER, TAG_SOURCE};

fn main() -> ducfem::Result<()> {
    let (length, height) = (2.0, 1.0);
    let mesh = generate_duct_mesh(length, height, 0.6, 0.8, 0.05)?;
    println!(
        "duct {length} x {height}: {} nodes, {} triangles, {} boundary edges",
        mesh.num_nodes(),
        mesh.elements.len(),
        mesh.boundary_edges.len()
    );
    for (tag, name) in [
        (TAG_SOURCE, "fan source"),
        (TAG_LINER, "liner"),
        (TAG_FAR_FIELD, "far field"),
    ] {
        println!("  {:>10}: {} nodes", name, mesh.nodes_on_tag(tag).len());
    }

    let fom = assemble_operators(&mesh, default_source_profile)?;
    println!("mass matrix sums to the domain area: {:.12}", fom.domain_area());
    println!("liner boundary mass sums to the liner length: {:.12}", fom.k2_0.sum());
    println!("far-field boundary mass sums to the duct height: {:.12}", fom.k4_0.sum());
    println!("{} Dirichlet (source) nodes carry the fan profile", fom.dirichlet_idx.len());

    let path = std::env::temp_dir().join("duct_mesh.txt");
    mesh.save(&path)?;
    println!("mesh written to {}", path.display());
    Ok(())
}
