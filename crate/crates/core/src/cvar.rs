//! Smoothed-CVaR objective over Monte Carlo samples, adjoint-based
//! gradients, and the empirical VaR/CVaR estimators.

use nalgebra::DVector;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::fom::{Impedance, RandomParams};
use crate::rom::{
    assemble_rom, reduced_matrix_xi_derivatives, rom_energy, solve_rom, RomOperators,
};

/// C^2 smoothing of the plus function: cubic/quartic blend on |x| < eps/2.
pub fn smoothed_plus(x: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0);
    if x <= -eps / 2.0 {
        0.0
    } else if x >= eps / 2.0 {
        x
    } else {
        // normalized form: exact at the knots and at x = 0 (u is a dyadic
        // rational there, so every factor rounds exactly)
        let u = (x + eps / 2.0) / eps;
        eps * u * u * u * (1.0 - 0.5 * u)
    }
}

/// Exact derivative of [`smoothed_plus`].
pub fn smoothed_plus_d(x: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0);
    if x <= -eps / 2.0 {
        0.0
    } else if x >= eps / 2.0 {
        1.0
    } else {
        let u = (x + eps / 2.0) / eps;
        u * u * (3.0 - 2.0 * u)
    }
}

/// Configuration of the stochastic objective.
#[derive(Debug, Clone)]
pub struct CvarConfig {
    /// probability level in (0,1)
    pub beta: f64,
    /// plus-function smoothing parameter
    pub eps: f64,
    /// Tikhonov weight on |xi|^2
    pub gamma: f64,
    /// energy normalizer (hard-wall energy at the nominal parameter)
    pub gamma_p: f64,
    /// Monte Carlo sample count
    pub q: usize,
    pub seed: u64,
    pub k_range: (f64, f64),
    pub mu_r_range: (f64, f64),
    pub mu_i_range: (f64, f64),
    /// quadrature weights; `None` means uniform 1/Q
    pub weights: Option<Vec<f64>>,
}

impl CvarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta={} not in (0,1)", self.beta)));
        }
        if self.eps <= 0.0 {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidArgument("gamma must be nonnegative".into()));
        }
        if self.gamma_p <= 0.0 {
            return Err(Error::InvalidArgument("gamma_p must be positive".into()));
        }
        if self.q == 0 {
            return Err(Error::InvalidArgument("Q must be at least 1".into()));
        }
        for (name, (lo, hi)) in [
            ("k", self.k_range),
            ("mu_r", self.mu_r_range),
            ("mu_i", self.mu_i_range),
        ] {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("empty {name} range [{lo},{hi}]")));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.q {
                return Err(Error::InvalidArgument("weight count must equal Q".into()));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("weights sum to {s}, expected 1")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, j: usize) -> f64 {
        match &self.weights {
            Some(w) => w[j],
            None => 1.0 / self.q as f64,
        }
    }

    /// Paper-style defaults at a given sample count; gamma_p must still be
    /// set from the hard-wall energy.
    pub fn paper_defaults(beta: f64, q: usize, seed: u64, gamma_p: f64) -> Self {
        CvarConfig {
            beta,
            eps: 1e-4,
            gamma: 1e-6,
            gamma_p,
            q,
            seed,
            k_range: (5.0, 10.0),
            mu_r_range: (10.0, 30.0),
            mu_i_range: (10.0, 30.0),
            weights: None,
        }
    }
}

/// Draws the Q i.i.d. uniform parameter samples for a config; deterministic
/// in the seed.
pub fn sample_params(cfg: &CvarConfig) -> Result<Vec<RandomParams>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dist = |(lo, hi): (f64, f64)| -> Box<dyn Fn(&mut ChaCha8Rng) -> f64> {
        if lo == hi {
            Box::new(move |_| lo)
        } else {
            let u = Uniform::new(lo, hi);
            Box::new(move |r| u.sample(r))
        }
    };
    let dk = dist(cfg.k_range);
    let dmr = dist(cfg.mu_r_range);
    let dmi = dist(cfg.mu_i_range);
    (0..cfg.q)
        .map(|_| {
            let k = dk(&mut rng);
            let mu_r = dmr(&mut rng);
            let mu_i = dmi(&mut rng);
            RandomParams::new(k, mu_r, mu_i)
        })
        .collect()
}

/// Normalized per-sample energies E_j / gamma_p at the given impedance.
/// Reduction order is sample-index order, independent of worker count.
pub fn sample_energies(
    xi: &Impedance,
    samples: &[RandomParams],
    ops: &RomOperators,
    cfg: &CvarConfig,
    solve_counter: Option<&AtomicUsize>,
) -> Result<Vec<f64>> {
    let energies: Vec<f64> = samples
        .par_iter()
        .enumerate()
        .map(|(j, theta)| -> Result<f64> {
            let (a_r, b_r) = assemble_rom(ops, theta, xi).map_err(|e| Error::SampleSolve {
                sample: j,
                source: Box::new(e),
            })?;
            let sol = solve_rom(&a_r, &b_r, theta, xi).map_err(|e| match e {
                Error::SingularReduced { cond, .. } => Error::SingularReduced { sample: j, cond },
                other => Error::SampleSolve {
                    sample: j,
                    source: Box::new(other),
                },
            })?;
            Ok(rom_energy(&sol, ops) / cfg.gamma_p)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = solve_counter {
        c.fetch_add(samples.len(), Ordering::Relaxed);
    }
    Ok(energies)
}

/// Smoothed-CVaR objective value and the per-sample normalized energies.
pub fn evaluate_objective(
    xi: &Impedance,
    alpha: f64,
    samples: &[RandomParams],
    ops: &RomOperators,
    cfg: &CvarConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let energies = sample_energies(xi, samples, ops, cfg, None)?;
    let j = objective_from_energies(xi, alpha, &energies, cfg);
    Ok((j, energies))
}

/// Assembles J from precomputed normalized energies (fixed index order).
pub fn objective_from_energies(
    xi: &Impedance,
    alpha: f64,
    energies: &[f64],
    cfg: &CvarConfig,
) -> f64 {
    let mut acc = 0.0;
    for (j, e) in energies.iter().enumerate() {
        acc += cfg.weight(j) * smoothed_plus(e - alpha, cfg.eps);
    }
    let reg = 0.5 * cfg.gamma * (xi.xi_r * xi.xi_r + xi.xi_i * xi.xi_i);
    0.5 * (alpha + acc / (1.0 - cfg.beta)) + reg
}

/// Adjoint gradient (d/d xi_r, d/d xi_i, d/d alpha) of the smoothed-CVaR
/// objective. Each sample solves one state and one adjoint system; partial
/// sums are reduced in sample-index order.
pub fn solve_adjoints_and_gradient(
    xi: &Impedance,
    alpha: f64,
    samples: &[RandomParams],
    ops: &RomOperators,
    cfg: &CvarConfig,
    solve_counter: Option<&AtomicUsize>,
) -> Result<[f64; 3]> {
    cfg.validate()?;
    let per_sample: Vec<(f64, f64, f64)> = samples
        .par_iter()
        .enumerate()
        .map(|(j, theta)| -> Result<(f64, f64, f64)> {
            let wrap = |e: Error| Error::SampleSolve {
                sample: j,
                source: Box::new(e),
            };
            let (a_r, b_r) = assemble_rom(ops, theta, xi).map_err(wrap)?;
            let state = solve_rom(&a_r, &b_r, theta, xi).map_err(wrap)?;
            let e_norm = rom_energy(&state, ops) / cfg.gamma_p;
            let hp = smoothed_plus_d(e_norm - alpha, cfg.eps);
            if hp == 0.0 {
                return Ok((0.0, 0.0, 0.0));
            }
            // adjoint: A_r^T q = h' / ((1-beta) gamma_p) * M_energy p_rb
            let scale = hp / ((1.0 - cfg.beta) * cfg.gamma_p);
            let rhs = scale * (&ops.mr_energy * &state.p_rb);
            let q = a_r
                .transpose()
                .lu()
                .solve(&rhs)
                .ok_or_else(|| wrap(Error::SingularFactorization("adjoint system".into())))?;
            let (d_dr, d_di) = reduced_matrix_xi_derivatives(ops, theta, xi).map_err(wrap)?;
            let gr = -(q.transpose() * (&d_dr * &state.p_rb))[(0, 0)];
            let gi = -(q.transpose() * (&d_di * &state.p_rb))[(0, 0)];
            Ok((gr, gi, hp))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = solve_counter {
        c.fetch_add(2 * samples.len(), Ordering::Relaxed);
    }
    let mut g_r = cfg.gamma * xi.xi_r;
    let mut g_i = cfg.gamma * xi.xi_i;
    let mut hp_sum = 0.0;
    for (j, (gr, gi, hp)) in per_sample.iter().enumerate() {
        let w = cfg.weight(j);
        g_r += w * gr;
        g_i += w * gi;
        hp_sum += w * hp;
    }
    let g_a = 0.5 - hp_sum / (2.0 * (1.0 - cfg.beta));
    Ok([g_r, g_i, g_a])
}

/// Weighted empirical VaR and CVaR of a cost sample.
pub fn empirical_var_cvar(energies: &[f64], beta: f64, weights: Option<&[f64]>) -> (f64, f64) {
    assert!(!energies.is_empty());
    assert!((0.0..1.0).contains(&beta));
    let q = energies.len();
    let w = |j: usize| weights.map_or(1.0 / q as f64, |w| w[j]);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|a, b| energies[*a].partial_cmp(&energies[*b]).unwrap());
    let mut cum = 0.0;
    let mut var = energies[order[q - 1]];
    for &j in &order {
        cum += w(j);
        if cum >= beta - 1e-15 {
            var = energies[j];
            break;
        }
    }
    let mut tail_w = 0.0;
    let mut tail_e = 0.0;
    for j in 0..q {
        if energies[j] >= var {
            tail_w += w(j);
            tail_e += w(j) * energies[j];
        }
    }
    (var, tail_e / tail_w)
}

/// Hard-wall reduced energy at the nominal parameter, used as the energy
/// normalizer gamma_p.
pub fn hard_wall_normalizer(ops: &RomOperators, theta_nominal: &RandomParams) -> Result<f64> {
    let hw = Impedance::hard_wall();
    let (a_r, b_r) = assemble_rom(ops, theta_nominal, &hw)?;
    let sol = solve_rom(&a_r, &b_r, theta_nominal, &hw)?;
    Ok(rom_energy(&sol, ops))
}

/// The smoothed-CVaR objective as a 3-control optimization problem
/// (xi_r, xi_i, alpha); tracks reduced-system solve counts.
pub struct CvarObjective<'a> {
    pub samples: &'a [RandomParams],
    pub ops: &'a RomOperators,
    pub cfg: &'a CvarConfig,
    pub solves: AtomicUsize,
}

impl<'a> CvarObjective<'a> {
    pub fn new(samples: &'a [RandomParams], ops: &'a RomOperators, cfg: &'a CvarConfig) -> Self {
        CvarObjective {
            samples,
            ops,
            cfg,
            solves: AtomicUsize::new(0),
        }
    }

    fn impedance(x: &DVector<f64>) -> Result<Impedance> {
        Impedance::new(x[0], x[1])
    }

    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

impl crate::bfgs::Objective for CvarObjective<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let xi = match Self::impedance(x) {
            Ok(xi) => xi,
            // passivity bound xi_r > 0: infeasible trials backtrack
            Err(_) => return Ok(f64::INFINITY),
        };
        let energies = sample_energies(&xi, self.samples, self.ops, self.cfg, Some(&self.solves))?;
        Ok(objective_from_energies(&xi, x[2], &energies, self.cfg))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let xi = Self::impedance(x)?;
        let g = solve_adjoints_and_gradient(
            &xi,
            x[2],
            self.samples,
            self.ops,
            self.cfg,
            Some(&self.solves),
        )?;
        Ok(DVector::from_column_slice(&g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operators, default_source_profile};
    use crate::fom::{apply_dirichlet, assemble_block, noise_energy, solve_fom, SolveMethod};
    use crate::mesh::generate_duct_mesh;
    use crate::pod::PodBasis;
    use crate::rom::project_operators;
    use approx::assert_relative_eq;

    #[test]
    fn smoothed_plus_knots_and_center() {
        for eps in [1e-4, 1e-2, 1.0] {
            assert_relative_eq!(smoothed_plus(eps / 2.0, eps), eps / 2.0, epsilon = 1e-15);
            assert_eq!(smoothed_plus(-eps / 2.0, eps), 0.0);
            assert_relative_eq!(smoothed_plus(0.0, eps), 3.0 * eps / 32.0, epsilon = 1e-15);
            // derivative continuity at the knots
            let d = 1e-9 * eps;
            assert!((smoothed_plus_d(eps / 2.0 - d, eps) - 1.0).abs() < 1e-6);
            assert!(smoothed_plus_d(-eps / 2.0 + d, eps).abs() < 1e-6);
        }
    }

    #[test]
    fn smoothed_plus_close_to_plus_function() {
        let eps = 1e-3;
        for i in 0..10_000 {
            let x = -0.5 + i as f64 * 1e-4;
            let exact = x.max(0.0);
            let h = smoothed_plus(x, eps);
            assert!((h - exact).abs() <= eps / 2.0 + 1e-15, "x={x}");
            assert!(h >= exact - eps, "lower bound violated at x={x}");
        }
    }

    fn toy_cfg(q: usize) -> CvarConfig {
        CvarConfig {
            beta: 0.8,
            eps: 1e-4,
            gamma: 1e-6,
            gamma_p: 1.0,
            q,
            seed: 7,
            k_range: (5.0, 10.0),
            mu_r_range: (10.0, 30.0),
            mu_i_range: (10.0, 30.0),
            weights: None,
        }
    }

    #[test]
    fn samples_are_deterministic_and_in_range() {
        let cfg = toy_cfg(100);
        let a = sample_params(&cfg).unwrap();
        let b = sample_params(&cfg).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.k >= 5.0 && s.k <= 10.0);
            assert!(s.mu_r >= 10.0 && s.mu_r <= 30.0);
        }
    }

    #[test]
    fn degenerate_ranges_give_constant_samples() {
        let mut cfg = toy_cfg(10);
        cfg.k_range = (6.0, 6.0);
        cfg.mu_r_range = (12.0, 12.0);
        cfg.mu_i_range = (0.0, 0.0);
        for s in sample_params(&cfg).unwrap() {
            assert_eq!(s.k, 6.0);
            assert_eq!(s.mu_r, 12.0);
            assert_eq!(s.mu_i, 0.0);
        }
    }

    #[test]
    fn empirical_uniform_moments() {
        let mut cfg = toy_cfg(100_000);
        cfg.seed = 3;
        let samples = sample_params(&cfg).unwrap();
        let n = samples.len() as f64;
        let mean_k: f64 = samples.iter().map(|s| s.k).sum::<f64>() / n;
        // uniform on [5,10]: sd of the mean is (5/sqrt(12))/sqrt(n)
        let se = 5.0 / 12.0f64.sqrt() / n.sqrt();
        assert!((mean_k - 7.5).abs() < 3.0 * se, "mean {mean_k}");
    }

    #[test]
    fn empty_range_is_rejected() {
        let mut cfg = toy_cfg(10);
        cfg.k_range = (8.0, 5.0);
        assert!(sample_params(&cfg).is_err());
    }

    #[test]
    fn var_cvar_bruteforce_example() {
        let e: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let (var, cvar) = empirical_var_cvar(&e, 0.8, None);
        assert_eq!(var, 8.0);
        assert_relative_eq!(cvar, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn var_cvar_limits() {
        let e = vec![4.0, 1.0, 3.0, 2.0];
        let (_, cvar0) = empirical_var_cvar(&e, 1e-12, None);
        assert_relative_eq!(cvar0, 2.5, epsilon = 1e-12);
        for beta in [0.1, 0.5, 0.9] {
            let (var, cvar) = empirical_var_cvar(&[5.5; 7], beta, None);
            assert_eq!(var, 5.5);
            assert_relative_eq!(cvar, 5.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn cvar_monotone_in_beta() {
        let e: Vec<f64> = (0..40).map(|i| ((i * 17) % 31) as f64).collect();
        let mut last = f64::NEG_INFINITY;
        for i in 1..10 {
            let beta = i as f64 / 10.0;
            let (_, cvar) = empirical_var_cvar(&e, beta, None);
            assert!(cvar >= last - 1e-12, "beta={beta}");
            last = cvar;
        }
    }

    fn small_problem() -> (crate::assembly::FomOperators, RomOperators, PodBasis) {
        let mesh = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.12).unwrap();
        let fom = assemble_operators(&mesh, default_source_profile).unwrap();
        let grid = crate::pod::default_sample_grid(
            6,
            (4.0, 9.0),
            &[(1.0, 0.0), (0.0, 1.0)],
            &[0.5, 2.0],
            &[-0.5, -2.0],
        );
        let set = crate::pod::build_snapshots(&fom, &grid, SolveMethod::Direct).unwrap();
        let basis =
            crate::pod::pod_correlation(&set.p, &fom, crate::pod::PodSelect::Energy(0.9999)).unwrap();
        let ops = project_operators(&basis, &fom).unwrap();
        (fom, ops, basis)
    }

    #[test]
    fn objective_with_inactive_samples_is_affine() {
        let (_, ops, _) = small_problem();
        let mut cfg = toy_cfg(8);
        cfg.gamma_p = 1.0;
        let samples = sample_params(&cfg).unwrap();
        let xi = Impedance::new(1.0, -1.0).unwrap();
        // alpha far above every normalized energy: h vanishes
        let (_, energies) = evaluate_objective(&xi, 0.0, &samples, &ops, &cfg).unwrap();
        let alpha = energies.iter().cloned().fold(0.0f64, f64::max) + 1.0;
        let (j, _) = evaluate_objective(&xi, alpha, &samples, &ops, &cfg).unwrap();
        let expect = 0.5 * alpha + 0.5 * cfg.gamma * 2.0;
        assert_relative_eq!(j, expect, epsilon = 1e-12);
        // gradient reduces to (gamma xi_r, gamma xi_i, 1/2)
        let g = solve_adjoints_and_gradient(&xi, alpha, &samples, &ops, &cfg, None).unwrap();
        assert_relative_eq!(g[0], cfg.gamma * 1.0, epsilon = 1e-14);
        assert_relative_eq!(g[1], cfg.gamma * -1.0, epsilon = 1e-14);
        assert_relative_eq!(g[2], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn objective_affine_in_gamma() {
        let (_, ops, _) = small_problem();
        let samples = sample_params(&toy_cfg(8)).unwrap();
        let xi = Impedance::new(2.0, -1.5).unwrap();
        let j_at = |gamma: f64| {
            let mut cfg = toy_cfg(8);
            cfg.gamma = gamma;
            evaluate_objective(&xi, 0.1, &samples, &ops, &cfg).unwrap().0
        };
        let j1 = j_at(1.0);
        let j2 = j_at(2.0);
        let xi2 = 2.0f64 * 2.0 + 1.5 * 1.5;
        assert_relative_eq!(j2 - j1, 0.5 * xi2, max_relative = 1e-10);
    }

    #[test]
    fn objective_matches_fom_unsmoothed_oracle() {
        // identity-basis ROM vs an independent FOM + exact plus function path
        let mesh = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.16).unwrap();
        let fom = assemble_operators(&mesh, default_source_profile).unwrap();
        let basis = PodBasis::identity(2 * fom.n);
        let ops = project_operators(&basis, &fom).unwrap();
        let mut cfg = toy_cfg(8);
        cfg.gamma_p = 10.0;
        let samples = sample_params(&cfg).unwrap();
        let xi = Impedance::new(1.0, -1.0).unwrap();
        let alpha = 0.4;
        let (j, _) = evaluate_objective(&xi, alpha, &samples, &ops, &cfg).unwrap();
        // oracle
        let mut acc = 0.0;
        for theta in &samples {
            let sys = apply_dirichlet(&assemble_block(&fom, theta, &xi).unwrap(), &fom, theta);
            let (p, _) = solve_fom(&sys, &fom, theta, &xi, SolveMethod::Direct).unwrap();
            let e = noise_energy(&p, &fom) / cfg.gamma_p;
            acc += (e - alpha).max(0.0) / 8.0;
        }
        let j_oracle = 0.5 * (alpha + acc / (1.0 - cfg.beta)) + 0.5 * cfg.gamma * 2.0;
        let tol = cfg.eps / (2.0 * (1.0 - cfg.beta)) * 0.5 + 1e-8;
        assert!((j - j_oracle).abs() <= tol, "diff {}", (j - j_oracle).abs());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (_, ops, _) = small_problem();
        let mut cfg = toy_cfg(16);
        // normalize energies to O(1) so alpha interacts with the samples
        let theta0 = RandomParams::new(10.0, 30.0, 30.0).unwrap();
        cfg.gamma_p = hard_wall_normalizer(&ops, &theta0).unwrap();
        cfg.beta = 0.9;
        let samples = sample_params(&cfg).unwrap();
        let x0 = [1.2, -0.7, 0.3];
        let xi = Impedance::new(x0[0], x0[1]).unwrap();
        let g = solve_adjoints_and_gradient(&xi, x0[2], &samples, &ops, &cfg, None).unwrap();
        for c in 0..3 {
            let h = 1e-6 * x0[c].abs().max(1.0);
            let mut xp = x0;
            xp[c] += h;
            let mut xm = x0;
            xm[c] -= h;
            let jp = evaluate_objective(
                &Impedance::new(xp[0], xp[1]).unwrap(),
                xp[2],
                &samples,
                &ops,
                &cfg,
            )
            .unwrap()
            .0;
            let jm = evaluate_objective(
                &Impedance::new(xm[0], xm[1]).unwrap(),
                xm[2],
                &samples,
                &ops,
                &cfg,
            )
            .unwrap()
            .0;
            let fd = (jp - jm) / (2.0 * h);
            let denom = fd.abs().max(1e-8);
            assert!(
                ((g[c] - fd) / denom).abs() < 1e-5,
                "component {c}: adjoint {} vs fd {fd}",
                g[c]
            );
        }
    }
}
