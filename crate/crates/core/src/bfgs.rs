//! Dense inverse-Hessian BFGS with an Armijo backtracking line search
//! using quadratic/cubic interpolation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A smooth objective with an exact gradient.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientReduced,
    ObjectiveReduced,
    StepStalled,
    IterationLimit,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub x: Vec<f64>,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub x: DVector<f64>,
    pub j: f64,
    pub grad: DVector<f64>,
    pub h: DMatrix<f64>,
    pub iter: usize,
    pub history: Vec<IterRecord>,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub obj_tol: f64,
    pub step_tol: f64,
    pub armijo_c1: f64,
    pub max_trials: usize,
    pub curvature_floor: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 100,
            grad_tol: 1e-6,
            obj_tol: 1e-6,
            step_tol: 1e-6,
            armijo_c1: 1e-4,
            max_trials: 10,
            curvature_floor: 1e-12,
        }
    }
}

/// Safeguarded interpolation step: quadratic from one trial, cubic from the
/// two most recent; the result is clamped into [0.1 t, 0.5 t].
fn interpolate_step(
    phi0: f64,
    dphi0: f64,
    t1: f64,
    phi1: f64,
    prev: Option<(f64, f64)>,
) -> f64 {
    let raw = match prev {
        None => {
            // quadratic through phi(0), phi'(0), phi(t1)
            let denom = 2.0 * (phi1 - phi0 - dphi0 * t1);
            if denom.abs() < 1e-300 {
                0.5 * t1
            } else {
                -dphi0 * t1 * t1 / denom
            }
        }
        Some((t0, phi_t0)) => {
            // cubic through phi(0), phi'(0) and the two most recent trials
            let d1 = phi1 - phi0 - dphi0 * t1;
            let d0 = phi_t0 - phi0 - dphi0 * t0;
            let det = t0 * t0 * t1 * t1 * (t1 - t0);
            if det.abs() < 1e-300 {
                0.5 * t1
            } else {
                let a = (t0 * t0 * d1 - t1 * t1 * d0) / det;
                let b = (-t0 * t0 * t0 * d1 + t1 * t1 * t1 * d0) / det;
                if a.abs() < 1e-300 {
                    // quadratic fallback
                    if b.abs() < 1e-300 {
                        0.5 * t1
                    } else {
                        -dphi0 / (2.0 * b)
                    }
                } else {
                    let disc = b * b - 3.0 * a * dphi0;
                    if disc < 0.0 {
                        0.5 * t1
                    } else {
                        (-b + disc.sqrt()) / (3.0 * a)
                    }
                }
            }
        }
    };
    raw.clamp(0.1 * t1, 0.5 * t1)
}

/// Minimizes `f` starting from `x0`. The initial inverse Hessian is
/// I / ||grad(x0)||; the objective is non-increasing along the iterate
/// history by the Armijo condition.
pub fn minimize(f: &dyn Objective, x0: &DVector<f64>, opts: &BfgsOptions) -> Result<OptState> {
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "start point has {} entries, objective expects {n}",
            x0.len()
        )));
    }
    let mut x = x0.clone();
    let mut j = f.value(&x)?;
    if !j.is_finite() {
        return Err(Error::InvalidArgument(
            "objective is not finite at the start point".into(),
        ));
    }
    let mut g = f.gradient(&x)?;
    let j0 = j;
    let g0_norm = g.norm();
    let mut history = vec![IterRecord {
        iter: 0,
        j,
        grad_norm: g0_norm,
        x: x.as_slice().to_vec(),
        step: 0.0,
    }];
    if g0_norm == 0.0 {
        return Ok(OptState {
            x,
            j,
            grad: g,
            h: DMatrix::identity(n, n),
            iter: 0,
            history,
            termination: Termination::GradientReduced,
        });
    }
    let mut h = DMatrix::<f64>::identity(n, n) / g0_norm;
    let mut iter = 0usize;
    let termination = loop {
        if iter >= opts.max_iter {
            break Termination::IterationLimit;
        }
        let v = -(&h * &g);
        let dphi0 = g.dot(&v);
        let v = if dphi0 < 0.0 {
            v
        } else {
            // fallback to steepest descent if H lost positive definiteness
            -&g / g.norm()
        };
        let dphi0 = g.dot(&v);

        // Armijo backtracking with interpolation
        let mut t = 1.0;
        let mut prev: Option<(f64, f64)> = None;
        let mut accepted: Option<(f64, f64, DVector<f64>)> = None;
        for _ in 0..opts.max_trials {
            let x_trial = &x + t * &v;
            let j_trial = f.value(&x_trial)?;
            // infeasible/overflowed trial: plain backtracking, no fit
            if !j_trial.is_finite() {
                t *= 0.5;
                continue;
            }
            if j_trial <= j + opts.armijo_c1 * t * dphi0 {
                accepted = Some((t, j_trial, x_trial));
                break;
            }
            let t_new = interpolate_step(j, dphi0, t, j_trial, prev);
            prev = Some((t, j_trial));
            t = t_new;
        }
        let (t, j_new, x_new) = match accepted {
            Some(a) => a,
            None => break Termination::LineSearchFailed,
        };
        let g_new = f.gradient(&x_new)?;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let ys = y.dot(&s);
        if ys > opts.curvature_floor {
            let rho = 1.0 / ys;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            let ss = &s * s.transpose();
            h = &h - rho * (&hy * s.transpose() + &s * hy.transpose())
                + rho * (1.0 + rho * yhy) * ss;
        }
        let step_len = s.norm();
        x = x_new;
        j = j_new;
        g = g_new;
        iter += 1;
        history.push(IterRecord {
            iter,
            j,
            grad_norm: g.norm(),
            x: x.as_slice().to_vec(),
            step: t,
        });
        if g.norm() <= opts.grad_tol * g0_norm {
            break Termination::GradientReduced;
        }
        if j.abs() <= opts.obj_tol * j0.abs() {
            break Termination::ObjectiveReduced;
        }
        if step_len <= opts.step_tol * x.norm() {
            break Termination::StepStalled;
        }
    };
    Ok(OptState {
        x,
        j,
        grad: g,
        h,
        iter,
        history,
        termination,
    })
}
