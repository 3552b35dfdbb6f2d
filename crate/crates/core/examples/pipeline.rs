//! Run the whole offline/online pipeline programmatically — the same five
//! stages the `ducfem` binary exposes as subcommands — from an in-memory
//! configuration.
//!
//! Artifacts land in a scratch directory: the snapshot matrix (PMAT), the
//! POD basis and spectrum, validation error tables (CSV), and JSON reports
//! for the optimization runs.
//!
//! ```bash
//! cargo run --release --example pipeline
//! ```

use ducfem::commands::{
    cmd_build_pod, cmd_compare_fom_rom, cmd_generate_snapshots, cmd_optimize, cmd_validate,
};
use ducfem::config::parse_config;
use std::path::Path;
use std::time::Instant;

const CONFIG: &str = "\
[mesh]
length = 2
height = 1
liner_start = 0.6
liner_length = 0.8
h = 0.1
source = multimode

[sampling]
seed = 42
q = 1000
k_count = 20
xi_r_set = 1, 10, 40, 100
xi_i_set = -100, -30, -4, 4, 30, 100

[pod]
n = 20

[validate]
draws = 30
n_list = 12, 16, 20
";

fn main() -> ducfem::Result<()> {
    let cfg = parse_config(Path::new("pipeline-example.ini"), CONFIG)?;
    let out = std::env::temp_dir().join("ducfem-pipeline-example");
    let workers = 4;
    println!("writing artifacts to {}", out.display());
    for (name, stage) in [
        ("generate-snapshots", cmd_generate_snapshots as fn(_, _, &Path) -> _),
        ("build-pod", cmd_build_pod),
        ("validate", cmd_validate),
        ("optimize", cmd_optimize),
        ("compare-fom-rom", cmd_compare_fom_rom),
    ] {
        let t = Instant::now();
        stage(&cfg, workers, &out)?;
        println!("stage {name:<20} done in {:.2}s", t.elapsed().as_secs_f64());
    }
    println!("inspect validate_report.json and optimize_beta_*.json in the output directory");
    Ok(())
}
