//! Pipeline commands behind the CLI subcommands. Each command reads a
//! RunConfig, runs inside a worker pool of the requested size, and writes
//! its artifacts into the output directory.

use nalgebra::DVector;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::assembly::{
    assemble_operators, default_source_profile, multimode_source_profile, FomOperators,
};
use crate::bfgs::{minimize, BfgsOptions, IterRecord, OptState};
use crate::config::RunConfig;
use crate::cvar::{
    empirical_var_cvar, hard_wall_normalizer, sample_energies, sample_params, CvarConfig,
    CvarObjective,
};
use crate::deterministic::{
    hard_wall_energy_fom, DeterministicConfig, FomDeterministic, RomDeterministic,
};
use crate::error::{Error, Result};
use crate::fom::{Impedance, RandomParams};
use crate::io;
use crate::mesh::{generate_duct_mesh, load_mesh, Mesh};
use crate::pod::{
    build_snapshots, default_sample_grid, pod_correlation, pod_qr_svd, PodMode,
    PodSelect, SnapshotSet,
};
use crate::rom::{project_operators, relative_error, RomOperators};

/// Labeled seed splits so each stage draws from an independent stream.
fn split_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed into the base seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    seed ^ h
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

fn problem_mesh(cfg: &RunConfig) -> Result<Mesh> {
    match &cfg.mesh.path {
        Some(p) => load_mesh(p),
        None => generate_duct_mesh(
            cfg.mesh.length,
            cfg.mesh.height,
            cfg.mesh.liner_start,
            cfg.mesh.liner_length,
            cfg.mesh.h,
        ),
    }
}

pub fn prepare_problem(cfg: &RunConfig) -> Result<(Mesh, FomOperators)> {
    let mesh = problem_mesh(cfg)?;
    let fom = match cfg.mesh.source {
        crate::config::SourceProfile::Fan => assemble_operators(&mesh, default_source_profile)?,
        crate::config::SourceProfile::Multimode => {
            assemble_operators(&mesh, multimode_source_profile(cfg.mesh.height))?
        }
    };
    Ok((mesh, fom))
}

fn snapshot_grid(cfg: &RunConfig) -> Vec<crate::pod::SampleQuad> {
    let mut grid = default_sample_grid(
        cfg.sampling.k_count,
        (cfg.sampling.k_min, cfg.sampling.k_max),
        &cfg.sampling.mu_set,
        &cfg.sampling.xi_r_set,
        &cfg.sampling.xi_i_set,
    );
    if cfg.sampling.aux_k_count >= 2 {
        // strongly-absorbing impedances at reduced source amplitude: these
        // enrich the basis tail without displacing the dominant modes
        let a = cfg.sampling.aux_amplitude;
        grid.extend(default_sample_grid(
            cfg.sampling.aux_k_count,
            (cfg.sampling.k_min, cfg.sampling.k_max),
            &[(a, 0.0), (0.0, a)],
            &cfg.sampling.aux_xi_r_set,
            &cfg.sampling.aux_xi_i_set,
        ));
    }
    grid
}

fn nominal_theta(cfg: &RunConfig) -> Result<RandomParams> {
    RandomParams::new(cfg.sampling.k_max, cfg.sampling.mu_r_max, cfg.sampling.mu_i_max)
}

fn history_rows(history: &[IterRecord], with_alpha: bool) -> Vec<Vec<String>> {
    history
        .iter()
        .map(|r| {
            let mut row = vec![
                r.iter.to_string(),
                r.j.to_string(),
                r.grad_norm.to_string(),
                r.x[0].to_string(),
                r.x[1].to_string(),
            ];
            if with_alpha {
                row.push(r.x[2].to_string());
            }
            row.push(r.step.to_string());
            row
        })
        .collect()
}

fn write_history(path: &Path, st: &OptState, with_alpha: bool) -> Result<()> {
    let header: &[&str] = if with_alpha {
        &["iter", "J", "grad_norm", "xi_r", "xi_i", "alpha", "step_len"]
    } else {
        &["iter", "J", "grad_norm", "xi_r", "xi_i", "step_len"]
    };
    io::write_csv(path, header, &history_rows(&st.history, with_alpha))
}

fn termination_name(t: crate::bfgs::Termination) -> &'static str {
    use crate::bfgs::Termination::*;
    match t {
        GradientReduced => "gradient-reduced",
        ObjectiveReduced => "objective-reduced",
        StepStalled => "step-stalled",
        IterationLimit => "iteration-limit",
        LineSearchFailed => "line-search-failed",
    }
}

/// generate-snapshots: solve the full-order problem over the snapshot grid
/// and write the snapshot matrix plus its sample sidecar.
pub fn cmd_generate_snapshots(cfg: &RunConfig, workers: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let t0 = Instant::now();
    let (mesh, fom) = prepare_problem(cfg)?;
    let grid = snapshot_grid(cfg);
    let pool = build_pool(workers)?;
    let set = pool.install(|| build_snapshots(&fom, &grid, cfg.solver.method));
    let set = match set {
        Ok(s) => s,
        Err(e) => {
            // no partial artifacts on failure
            let _ = fs::remove_file(out.join("snapshots.pmat"));
            let _ = fs::remove_file(out.join("samples.csv"));
            return Err(e);
        }
    };
    let wall = t0.elapsed().as_secs_f64();
    eprintln!(
        "generated {} snapshots on {} nodes in {:.2}s ({:.1} ms/sample)",
        set.samples.len(),
        fom.n,
        wall,
        1e3 * wall / set.samples.len() as f64
    );
    mesh.save(out.join("mesh.txt"))?;
    io::write_pmat(&out.join("snapshots.pmat"), &set.p)?;
    io::write_samples(&out.join("samples.csv"), &set.samples)?;
    io::write_json(
        &out.join("snapshot_manifest.json"),
        &io::SnapshotManifest {
            schema_version: io::SCHEMA_VERSION,
            sample_count: set.samples.len(),
            mesh_nodes: fom.n,
            solver: match cfg.solver.method {
                crate::fom::SolveMethod::Direct => "direct".to_string(),
                crate::fom::SolveMethod::GmresShiftedLaplacian { .. } => "gmres".to_string(),
            },
            workers,
            wall_time_s: wall,
        },
    )
}

fn load_snapshots(out: &Path) -> Result<SnapshotSet> {
    let p = io::read_pmat(&out.join("snapshots.pmat"))?;
    let samples = io::read_samples(&out.join("samples.csv"))?;
    if samples.len() != p.ncols() {
        return Err(Error::Dimension(format!(
            "snapshot matrix has {} columns but sidecar lists {} samples",
            p.ncols(),
            samples.len()
        )));
    }
    Ok(SnapshotSet { p, samples })
}

/// build-pod: compress the stored snapshots into a POD basis; writes the
/// basis, the singular spectrum CSV, and the projected reduced operators.
pub fn cmd_build_pod(cfg: &RunConfig, workers: usize, out: &Path) -> Result<()> {
    let t0 = Instant::now();
    let set = load_snapshots(out)?;
    let (_, fom) = prepare_problem(cfg)?;
    if 2 * fom.n != set.p.nrows() {
        return Err(Error::Dimension(format!(
            "snapshots have {} rows but the mesh gives {}",
            set.p.nrows(),
            2 * fom.n
        )));
    }
    let pool = build_pool(workers)?;
    // keep every numerically significant mode on disk so validation can
    // sweep basis sizes; the reduced operators use the configured selection
    let full = pool.install(|| match cfg.pod.mode {
        PodMode::Euclidean => pod_qr_svd(&set.p, PodSelect::Energy(1.0)),
        PodMode::MassWeighted => pod_correlation(&set.p, &fom, PodSelect::Energy(1.0)),
    })?;
    let n_select = crate::pod::selected_count(&full.singular_values, cfg.pod.select)?;
    let basis = full.truncated(n_select)?;
    io::save_basis(out, &full)?;
    let ops = project_operators(&basis, &fom)?;
    io::save_rom(&out.join("rom"), &ops)?;
    let total: f64 = full.singular_values.iter().map(|s| s * s).sum();
    let kept: f64 = full.singular_values[..n_select].iter().map(|s| s * s).sum();
    io::write_json(
        &out.join("pod_report.json"),
        &io::PodReport {
            schema_version: io::SCHEMA_VERSION,
            num_modes: n_select,
            mode: match basis.mode {
                PodMode::Euclidean => "euclidean".into(),
                PodMode::MassWeighted => "mass-weighted".into(),
            },
            selection: match cfg.pod.select {
                PodSelect::Rank(n) => format!("n={n}"),
                PodSelect::Energy(t) => format!("tau={t}"),
            },
            energy_retained: (kept / total).sqrt(),
            workers,
            wall_time_s: t0.elapsed().as_secs_f64(),
        },
    )
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Quartiles by the inclusive median-split rule.
fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let n = sorted.len();
    let med = median_of_sorted(sorted);
    if n < 2 {
        return (med, med, med);
    }
    let half = n / 2;
    let q1 = median_of_sorted(&sorted[..half]);
    let q3 = median_of_sorted(&sorted[n - half..]);
    (q1, med, q3)
}

/// validate: out-of-sample FOM-vs-ROM relative errors over random
/// parameter draws, per basis size.
pub fn cmd_validate(cfg: &RunConfig, workers: usize, out: &Path) -> Result<()> {
    let t0 = Instant::now();
    let (_, fom) = prepare_problem(cfg)?;
    let basis = io::load_basis(out)?;
    let seed = split_seed(cfg.sampling.seed, "validate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = &cfg.validate;
    let s = &cfg.sampling;
    let draw_one = |rng: &mut ChaCha8Rng| -> (RandomParams, Impedance) {
        let u = |lo: f64, hi: f64, r: &mut ChaCha8Rng| {
            if lo == hi {
                lo
            } else {
                Uniform::new(lo, hi).sample(r)
            }
        };
        let k = u(v.k_min.unwrap_or(s.k_min), v.k_max.unwrap_or(s.k_max), rng);
        let mu_r = u(s.mu_r_min, s.mu_r_max, rng);
        let mu_i = u(s.mu_i_min, s.mu_i_max, rng);
        let xi_r = u(v.xi_r_min.max(1e-6), v.xi_r_max, rng);
        let xi_i = u(v.xi_i_min, v.xi_i_max, rng);
        (
            RandomParams::new(k, mu_r, mu_i).unwrap(),
            Impedance::new(xi_r, xi_i).unwrap(),
        )
    };
    let draws: Vec<(RandomParams, Impedance)> =
        (0..v.draws).map(|_| draw_one(&mut rng)).collect();

    let pool = build_pool(workers)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut summary = Vec::new();
    for &n in &v.n_list {
        let truncated = basis.truncated(n)?;
        let ops = project_operators(&truncated, &fom)?;
        let errors: Vec<f64> = pool.install(|| {
            use rayon::prelude::*;
            draws
                .par_iter()
                .map(|(theta, xi)| {
                    relative_error(xi, theta, &truncated, &ops, &fom, cfg.solver.method)
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        for (i, e) in errors.iter().enumerate() {
            let (theta, xi) = &draws[i];
            rows.push(vec![
                i.to_string(),
                n.to_string(),
                theta.k.to_string(),
                theta.mu_r.to_string(),
                theta.mu_i.to_string(),
                xi.xi_r.to_string(),
                xi.xi_i.to_string(),
                e.to_string(),
            ]);
        }
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (q1, med, q3) = quartiles(&sorted);
        let fence = q3 + 1.5 * (q3 - q1);
        let outliers = sorted.iter().filter(|e| **e > fence).count();
        summary.push(io::ValidateSummaryRow {
            n,
            median: med,
            q1,
            q3,
            outliers,
        });
    }
    io::write_csv(
        &out.join("validate_errors.csv"),
        &["draw", "n", "k", "mu_r", "mu_i", "xi_r", "xi_i", "e_rel"],
        &rows,
    )?;
    io::write_json(
        &out.join("validate_report.json"),
        &io::ValidateReport {
            schema_version: io::SCHEMA_VERSION,
            draws: v.draws,
            seed,
            per_n: summary,
            workers,
            wall_time_s: t0.elapsed().as_secs_f64(),
        },
    )
}

fn load_rom_ops(cfg: &RunConfig, out: &Path, fom: &FomOperators) -> Result<RomOperators> {
    let rom_dir = out.join("rom");
    if rom_dir.join("manifest.json").exists() {
        io::load_rom(&rom_dir)
    } else {
        let basis = io::load_basis(out)?;
        let _ = cfg;
        project_operators(&basis, fom)
    }
}

/// One optimize run at a fixed beta over a shared sample set.
fn optimize_one_beta(
    beta: f64,
    samples: &[RandomParams],
    ops: &RomOperators,
    cfg: &RunConfig,
    gamma_p: f64,
    seed: u64,
) -> Result<(OptState, usize, f64)> {
    let ccfg = CvarConfig {
        beta,
        eps: cfg.cvar.eps,
        gamma: cfg.cvar.gamma,
        gamma_p,
        q: samples.len(),
        seed,
        k_range: (cfg.sampling.k_min, cfg.sampling.k_max),
        mu_r_range: (cfg.sampling.mu_r_min, cfg.sampling.mu_r_max),
        mu_i_range: (cfg.sampling.mu_i_min, cfg.sampling.mu_i_max),
        weights: None,
    };
    let obj = CvarObjective::new(samples, ops, &ccfg);
    // alpha0: empirical beta-quantile of the normalized energies at xi0
    let xi0 = Impedance::new(10.0, 10.0)?;
    let energies = sample_energies(&xi0, samples, ops, &ccfg, None)?;
    let (alpha0, _) = empirical_var_cvar(&energies, beta, None);
    let x0 = DVector::from_column_slice(&[10.0, 10.0, alpha0]);
    let st = minimize(&obj, &x0, &BfgsOptions::default())?;
    let solves = obj.solve_count() + samples.len();
    Ok((st, solves, alpha0))
}

/// optimize: smoothed-CVaR impedance optimization for each configured
/// beta over one shared Monte Carlo sample set.
pub fn cmd_optimize(cfg: &RunConfig, workers: usize, out: &Path) -> Result<()> {
    let (_, fom) = prepare_problem(cfg)?;
    let ops = load_rom_ops(cfg, out, &fom)?;
    let seed = split_seed(cfg.sampling.seed, "optimize");
    let base = CvarConfig {
        beta: 0.5,
        eps: cfg.cvar.eps,
        gamma: cfg.cvar.gamma,
        gamma_p: 1.0,
        q: cfg.sampling.q,
        seed,
        k_range: (cfg.sampling.k_min, cfg.sampling.k_max),
        mu_r_range: (cfg.sampling.mu_r_min, cfg.sampling.mu_r_max),
        mu_i_range: (cfg.sampling.mu_i_min, cfg.sampling.mu_i_max),
        weights: None,
    };
    let samples = sample_params(&base)?;
    let theta0 = nominal_theta(cfg)?;
    let gamma_p = match cfg.cvar.gamma_p {
        Some(g) => g,
        None => hard_wall_normalizer(&ops, &theta0)?,
    };
    let pool = build_pool(workers)?;
    for &beta in &cfg.cvar.betas {
        let t0 = Instant::now();
        let (st, solves, _alpha0) =
            pool.install(|| optimize_one_beta(beta, &samples, &ops, cfg, gamma_p, seed))?;
        let wall = t0.elapsed().as_secs_f64();
        let tag = format!("{beta}");
        write_history(&out.join(format!("optimize_history_beta_{tag}.csv")), &st, true)?;
        io::write_json(
            &out.join(format!("optimize_beta_{tag}.json")),
            &io::OptimizeReport {
                schema_version: io::SCHEMA_VERSION,
                beta,
                q: samples.len(),
                seed,
                xi_r: st.x[0],
                xi_i: st.x[1],
                alpha: st.x[2],
                final_j: st.j,
                iterations: st.iter,
                pde_solves: solves,
                termination: termination_name(st.termination).to_string(),
                workers,
                wall_time_s: wall,
            },
        )?;
        eprintln!(
            "beta={beta}: J={:.6e} xi={:.4}{:+.4}i alpha={:.4} in {} iterations ({:.1}s)",
            st.j, st.x[0], st.x[1], st.x[2], st.iter, wall
        );
    }
    Ok(())
}

/// compare-fom-rom: the deterministic single-parameter design problem run
/// against both the full-order and reduced-order objectives from the same
/// start.
pub fn cmd_compare_fom_rom(cfg: &RunConfig, workers: usize, out: &Path) -> Result<()> {
    let (_, fom) = prepare_problem(cfg)?;
    let ops = load_rom_ops(cfg, out, &fom)?;
    let theta = nominal_theta(cfg)?;
    // one shared normalizer so the two objectives are directly comparable
    let gamma_p = match cfg.cvar.gamma_p {
        Some(g) => g,
        None => hard_wall_energy_fom(&fom, &theta)?,
    };
    let dcfg = DeterministicConfig {
        theta: theta.clone(),
        gamma: cfg.cvar.gamma,
        gamma_p,
    };
    let pool = build_pool(workers)?;
    let x0 = DVector::from_column_slice(&[10.0, 10.0]);
    let opts = BfgsOptions::default();

    let t0 = Instant::now();
    let fobj = FomDeterministic::new(&fom, &dcfg);
    let fst = pool.install(|| minimize(&fobj, &x0, &opts))?;
    let f_wall = t0.elapsed().as_secs_f64();
    let f_solves = fobj.solve_count();

    let t1 = Instant::now();
    let robj = RomDeterministic::new(&ops, &dcfg);
    let rst = pool.install(|| minimize(&robj, &x0, &opts))?;
    let r_wall = t1.elapsed().as_secs_f64();
    let r_solves = robj.solve_count();

    write_history(&out.join("compare_fom_history.csv"), &fst, false)?;
    write_history(&out.join("compare_rom_history.csv"), &rst, false)?;
    let diff = ((fst.x[0] - rst.x[0]).powi(2) + (fst.x[1] - rst.x[1]).powi(2)).sqrt();
    let scale = (fst.x[0] * fst.x[0] + fst.x[1] * fst.x[1]).sqrt();
    io::write_json(
        &out.join("compare_report.json"),
        &io::CompareReport {
            schema_version: io::SCHEMA_VERSION,
            k: theta.k,
            mu_r: theta.mu_r,
            mu_i: theta.mu_i,
            fom: io::OptimumSummary {
                xi_r: fst.x[0],
                xi_i: fst.x[1],
                final_j: fst.j,
                iterations: fst.iter,
                pde_solves: f_solves,
                wall_time_s: f_wall,
            },
            rom: io::OptimumSummary {
                xi_r: rst.x[0],
                xi_i: rst.x[1],
                final_j: rst.j,
                iterations: rst.iter,
                pde_solves: r_solves,
                wall_time_s: r_wall,
            },
            xi_rel_diff: diff / scale,
            workers,
        },
    )?;
    eprintln!(
        "FOM optimum {:.4}{:+.4}i ({} iterations), ROM optimum {:.4}{:+.4}i ({} iterations)",
        fst.x[0], fst.x[1], fst.iter, rst.x[0], rst.x[1], rst.iter
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use tempfile::tempdir;

    fn tiny_config() -> RunConfig {
        parse_config(
            Path::new("test.ini"),
            "\
[mesh]
length = 1.0
height = 0.5
liner_start = 0.2
liner_length = 0.4
h = 0.1

[sampling]
seed = 11
q = 12
k_count = 5
k_min = 4
k_max = 8
mu_set = 1, i
xi_r_set = 0.5, 2
xi_i_set = -0.5, -2
mu_r_min = 5
mu_r_max = 15
mu_i_min = 5
mu_i_max = 15

[pod]
tau = 0.9999

[validate]
draws = 6
n_list = 2, 4
",
        )
        .unwrap()
    }

    #[test]
    fn pipeline_end_to_end_smoke() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        let out = dir.path();
        cmd_generate_snapshots(&cfg, 2, out).unwrap();
        assert!(out.join("snapshots.pmat").exists());
        assert!(out.join("samples.csv").exists());
        cmd_build_pod(&cfg, 2, out).unwrap();
        assert!(out.join("basis.pmat").exists());
        assert!(out.join("spectrum.csv").exists());
        assert!(out.join("rom/manifest.json").exists());
        cmd_validate(&cfg, 2, out).unwrap();
        let report: io::ValidateReport = serde_json::from_str(
            &fs::read_to_string(out.join("validate_report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report.per_n.len(), 2);
        cmd_optimize(&cfg, 2, out).unwrap();
        assert!(out.join("optimize_beta_0.5.json").exists());
        assert!(out.join("optimize_beta_0.95.json").exists());
        cmd_compare_fom_rom(&cfg, 2, out).unwrap();
        let cmp: io::CompareReport = serde_json::from_str(
            &fs::read_to_string(out.join("compare_report.json")).unwrap(),
        )
        .unwrap();
        assert!(cmp.xi_rel_diff.is_finite());
    }

    #[test]
    fn spectrum_csv_is_nonincreasing() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        let out = dir.path();
        cmd_generate_snapshots(&cfg, 1, out).unwrap();
        cmd_build_pod(&cfg, 1, out).unwrap();
        let text = fs::read_to_string(out.join("spectrum.csv")).unwrap();
        let sigmas: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(!sigmas.is_empty());
        for w in sigmas.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn optimize_is_deterministic_across_reruns() {
        let mut cfg = tiny_config();
        cfg.cvar.betas = vec![0.75];
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        for out in [d1.path(), d2.path()] {
            cmd_generate_snapshots(&cfg, 2, out).unwrap();
            cmd_build_pod(&cfg, 2, out).unwrap();
            cmd_optimize(&cfg, 2, out).unwrap();
        }
        let strip_timing = |p: &Path| -> String {
            fs::read_to_string(p.join("optimize_beta_0.75.json"))
                .unwrap()
                .lines()
                .filter(|l| !l.contains("wall_time_s"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip_timing(d1.path()), strip_timing(d2.path()));
        let h1 = fs::read(d1.path().join("optimize_history_beta_0.75.csv")).unwrap();
        let h2 = fs::read(d2.path().join("optimize_history_beta_0.75.csv")).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn quartile_helper_matches_hand_values() {
        let sorted: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let (q1, med, q3) = quartiles(&sorted);
        assert_eq!(med, 4.5);
        assert_eq!(q1, 2.5);
        assert_eq!(q3, 6.5);
    }
}
