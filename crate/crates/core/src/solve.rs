//! Smooth constrained NLP solver with forward-mode differentiation.
//!
//! Problems expose their objective and constraints generically over
//! [`Scalar`], so the same evaluators produce values on `f64` and
//! derivatives through [`Dual`] sweeps. The solver is an augmented
//! Lagrangian:
//!
//! - inequalities `c(z) <= 0` get slack variables, `c(z) + s = 0` with
//!   `s >= 0`, so the merit stays smooth;
//! - the bound-constrained inner problem is minimized by a projected
//!   L-BFGS with Armijo backtracking along the projection arc;
//! - multipliers update as `nu <- nu + rho h` after each inner solve, and
//!   the penalty grows when feasibility stalls.
//!
//! Minimizing the augmented merit to inner tolerance `omega` bounds the
//! projected Lagrangian gradient at the updated multipliers by the same
//! `omega`, which is what the reported stationarity measures.

use crate::dual::{gradient, Dual};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::GRAD_LANES;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::time::Instant;

/// Constrained problem with generic evaluators.
///
/// Convention: equalities are `c_eq(z) = 0`, inequalities `c_in(z) <= 0`,
/// plus box bounds on the variables.
pub trait NlpProblem: Sync {
    fn dim(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    /// Variable lower bounds (`-inf` allowed), length `dim`.
    fn lower(&self) -> &[f64];
    /// Variable upper bounds (`inf` allowed), length `dim`.
    fn upper(&self) -> &[f64];
    fn objective<T: Scalar>(&self, z: &[T]) -> T;
    fn eq_constraints<T: Scalar>(&self, z: &[T], out: &mut [T]);
    fn ineq_constraints<T: Scalar>(&self, z: &[T], out: &mut [T]);
}

/// Solver options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// KKT tolerance on stationarity, feasibility and complementarity.
    pub tol: f64,
    /// Total inner-iteration budget across all outer iterations.
    pub max_iter: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Emit one line per outer iteration to stderr.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e10,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
}

/// Result of a solve, with KKT residuals in infinity norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub z: Vec<f64>,
    pub objective: f64,
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub wall_time_s: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

fn project(w: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((wi, &lo), &hi) in w.iter_mut().zip(lower).zip(upper) {
        *wi = wi.clamp(lo, hi);
    }
}

/// Augmented merit over the extended vector `w = [z, s]`.
fn merit<T: Scalar, P: NlpProblem>(problem: &P, w: &[T], nu: &[f64], rho: f64) -> T {
    let n = problem.dim();
    let m_eq = problem.num_eq();
    let m_in = problem.num_ineq();
    let (z, s) = w.split_at(n);
    let mut h = vec![T::zero(); m_eq + m_in];
    problem.eq_constraints(z, &mut h[..m_eq]);
    problem.ineq_constraints(z, &mut h[m_eq..]);
    for (hi, &si) in h[m_eq..].iter_mut().zip(s) {
        *hi = *hi + si;
    }
    let mut acc = problem.objective(z);
    let half_rho = T::from_f64(0.5 * rho);
    for (i, &hi) in h.iter().enumerate() {
        acc = acc + T::from_f64(nu[i]) * hi + half_rho * hi * hi;
    }
    acc
}

fn constraint_values<P: NlpProblem>(problem: &P, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut eq = vec![0.0; problem.num_eq()];
    let mut ineq = vec![0.0; problem.num_ineq()];
    problem.eq_constraints(z, &mut eq);
    problem.ineq_constraints(z, &mut ineq);
    for (i, v) in eq.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "equality constraint {i} evaluated to {v} at the current iterate"
            )));
        }
    }
    for (i, v) in ineq.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "inequality constraint {i} evaluated to {v} at the current iterate"
            )));
        }
    }
    Ok((eq, ineq))
}

struct LbfgsMemory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl LbfgsMemory {
    fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::new(),
            capacity,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        if sy > 1e-10 * ss.sqrt() * yy.sqrt() && sy.is_finite() {
            if self.pairs.len() == self.capacity {
                self.pairs.pop_front();
            }
            self.pairs.push_back((s, y, 1.0 / sy));
        }
    }

    /// Two-loop recursion on the free subspace (`mask[i] == false` entries
    /// are held at zero).
    fn direction(&self, grad: &[f64], mask: &[bool]) -> Vec<f64> {
        let n = grad.len();
        let mut q: Vec<f64> = grad
            .iter()
            .zip(mask)
            .map(|(&g, &active)| if active { 0.0 } else { -g })
            .collect();
        if self.pairs.is_empty() {
            return q;
        }
        let masked = |v: &[f64], i: usize| if mask[i] { 0.0 } else { v[i] };
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, inv_sy) in self.pairs.iter().rev() {
            let alpha = inv_sy * (0..n).map(|i| masked(s, i) * q[i]).sum::<f64>();
            for i in 0..n {
                q[i] -= alpha * masked(y, i);
            }
            alphas.push(alpha);
        }
        let (s_last, y_last, _) = self.pairs.back().unwrap();
        let sy: f64 = (0..n).map(|i| masked(s_last, i) * masked(y_last, i)).sum();
        let yy: f64 = (0..n).map(|i| masked(y_last, i).powi(2)).sum();
        if sy > 0.0 && yy > 0.0 {
            let scale = sy / yy;
            for qi in q.iter_mut() {
                *qi *= scale;
            }
        }
        for ((s, y, inv_sy), alpha) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let beta = inv_sy * (0..n).map(|i| masked(y, i) * q[i]).sum::<f64>();
            for i in 0..n {
                q[i] += (alpha - beta) * masked(s, i);
            }
        }
        for i in 0..n {
            if mask[i] {
                q[i] = 0.0;
            }
        }
        q
    }
}

struct InnerOutcome {
    pg_norm: f64,
    iterations: usize,
    stalled: bool,
}

/// Projected L-BFGS for `min merit(w)` subject to box bounds.
#[allow(clippy::too_many_arguments)]
fn minimize_box<P: NlpProblem>(
    problem: &P,
    w: &mut Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    nu: &[f64],
    rho: f64,
    inner_tol: f64,
    budget: usize,
) -> Result<InnerOutcome> {
    let n = w.len();
    let eval = |w: &[f64]| -> f64 { merit::<f64, P>(problem, w, nu, rho) };
    let grad_eval = |w: &[f64]| -> Vec<f64> {
        gradient::<GRAD_LANES, _>(|wd: &[Dual<GRAD_LANES>]| merit(problem, wd, nu, rho), w)
    };

    let mut value = eval(w);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "augmented merit is {value} at the start of an inner solve"
        )));
    }
    let mut grad = grad_eval(w);
    let mut memory = LbfgsMemory::new(12);
    let mut iterations = 0;
    let mut stalls = 0;

    loop {
        // Projected-gradient residual and active-set mask.
        let mut pg_norm: f64 = 0.0;
        let mut mask = vec![false; n];
        for i in 0..n {
            let step = (w[i] - grad[i]).clamp(lower[i], upper[i]) - w[i];
            pg_norm = pg_norm.max(step.abs());
            let eps = 1e-9 * (1.0 + w[i].abs());
            mask[i] = (w[i] - lower[i] <= eps && grad[i] > 0.0)
                || (upper[i] - w[i] <= eps && grad[i] < 0.0);
        }
        if pg_norm <= inner_tol {
            return Ok(InnerOutcome {
                pg_norm,
                iterations,
                stalled: false,
            });
        }
        if iterations >= budget {
            return Ok(InnerOutcome {
                pg_norm,
                iterations,
                stalled: false,
            });
        }

        let mut dir = memory.direction(&grad, &mask);
        let mut descent: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        let dir_norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(descent < -1e-12 * dir_norm * grad_norm) {
            // Not a reliable descent direction; restart from steepest descent.
            memory.pairs.clear();
            dir = grad
                .iter()
                .zip(&mask)
                .map(|(&g, &m)| if m { 0.0 } else { -g })
                .collect();
            descent = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
            if descent >= 0.0 {
                // Only bound-blocked directions remain.
                return Ok(InnerOutcome {
                    pg_norm,
                    iterations,
                    stalled: false,
                });
            }
        }

        // Backtracking along the projection arc.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = w.clone();
            for i in 0..n {
                cand[i] += alpha * dir[i];
            }
            project(&mut cand, lower, upper);
            let actual_step: f64 = cand
                .iter()
                .zip(w.iter())
                .zip(&grad)
                .map(|((c, x), g)| (c - x) * g)
                .sum();
            let cand_value = eval(&cand);
            if cand_value.is_finite() && cand_value <= value + 1e-4 * actual_step && actual_step < 0.0
            {
                let new_grad = grad_eval(&cand);
                let s: Vec<f64> = cand.iter().zip(w.iter()).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                memory.push(s, y);
                *w = cand;
                value = cand_value;
                grad = new_grad;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            stalls += 1;
            memory.pairs.clear();
            if stalls >= 3 {
                return Ok(InnerOutcome {
                    pg_norm,
                    iterations,
                    stalled: true,
                });
            }
        } else {
            stalls = 0;
        }
    }
}

/// Solve the problem from `z0` (projected into the bounds if necessary).
pub fn solve<P: NlpProblem>(problem: &P, z0: &[f64], config: &SolverConfig) -> Result<SolveResult> {
    let start = Instant::now();
    let n = problem.dim();
    let m_eq = problem.num_eq();
    let m_in = problem.num_ineq();
    assert_eq!(z0.len(), n, "initial iterate dimension mismatch");

    // Extended variables: z then slacks.
    let mut lower = problem.lower().to_vec();
    let mut upper = problem.upper().to_vec();
    lower.resize(n + m_in, 0.0);
    upper.resize(n + m_in, f64::INFINITY);

    let mut w = z0.to_vec();
    project(&mut w[..n], problem.lower(), problem.upper());
    let (_, ineq0) = constraint_values(problem, &w[..n])?;
    w.extend(ineq0.iter().map(|&c| (-c).max(0.0)));

    let mut nu = vec![0.0; m_eq + m_in];
    let mut rho = config.initial_penalty;
    let mut best_feas = f64::INFINITY;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;
    let mut stationarity = f64::INFINITY;
    let mut feasibility = f64::INFINITY;
    let mut complementarity = f64::INFINITY;
    let mut inner_tol = (config.tol * 100.0).max(1e-4);

    let mut outer = 0;
    while iterations < config.max_iter {
        outer += 1;
        let budget = config.max_iter - iterations;
        let outcome = minimize_box(
            problem, &mut w, &lower, &upper, &nu, rho, inner_tol, budget,
        )?;
        iterations += outcome.iterations.max(1);

        let (eq, ineq) = constraint_values(problem, &w[..n])?;
        let mut h = eq.clone();
        h.extend(ineq.iter().zip(&w[n..]).map(|(&c, &s)| c + s));
        let h_norm = h.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

        // First-order multiplier update.
        for (nui, &hi) in nu.iter_mut().zip(&h) {
            *nui = (*nui + rho * hi).clamp(-1e12, 1e12);
        }

        // KKT residuals at the updated multipliers (penalty off).
        let lag_grad = gradient::<GRAD_LANES, _>(
            |wd: &[Dual<GRAD_LANES>]| merit(problem, wd, &nu, 0.0),
            &w,
        );
        stationarity = 0.0;
        for i in 0..w.len() {
            let step = (w[i] - lag_grad[i]).clamp(lower[i], upper[i]) - w[i];
            stationarity = stationarity.max(step.abs());
        }
        feasibility = eq.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for &c in &ineq {
            feasibility = feasibility.max(c.max(0.0));
        }
        complementarity = 0.0;
        for (i, &c) in ineq.iter().enumerate() {
            complementarity = complementarity.max(nu[m_eq + i].min(-c).abs());
        }

        if config.trace {
            eprintln!(
                "outer {outer:3} inner {:4} rho {rho:9.1e} feas {feasibility:9.2e} stat {stationarity:9.2e} comp {complementarity:9.2e}",
                outcome.iterations
            );
        }

        if stationarity <= config.tol
            && feasibility <= config.tol
            && complementarity <= config.tol
        {
            status = SolveStatus::Converged;
            break;
        }

        if outcome.stalled && h_norm > best_feas * 0.999 && rho >= config.max_penalty {
            status = SolveStatus::LineSearchFailure;
            break;
        }

        // Penalty management: grow when feasibility is not improving.
        if h_norm > 0.25 * best_feas && h_norm > config.tol {
            rho = (rho * config.penalty_growth).min(config.max_penalty);
        }
        best_feas = best_feas.min(h_norm);
        inner_tol = (inner_tol * 0.2).max(config.tol * 0.5);
    }

    let z = w[..n].to_vec();
    let objective = problem.objective::<f64>(&z);
    Ok(SolveResult {
        z,
        objective,
        stationarity,
        feasibility,
        complementarity,
        status,
        iterations,
        outer_iterations: outer,
        wall_time_s: start.elapsed().as_secs_f64(),
        eq_multipliers: nu[..m_eq].to_vec(),
        ineq_multipliers: nu[m_eq..].to_vec(),
    })
}

/// Compare forward-mode derivatives of the objective and every constraint
/// against central finite differences at `z`; returns the worst relative
/// error. Steps shrink near variable bounds so probes stay inside the box.
pub fn check_gradients<P: NlpProblem>(problem: &P, z: &[f64], h: f64) -> f64 {
    let n = problem.dim();
    let m_eq = problem.num_eq();
    let m_in = problem.num_ineq();
    let rows = 1 + m_eq + m_in;

    let eval_all = |z: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; rows];
        out[0] = problem.objective::<f64>(z);
        let (eq_part, in_part) = out[1..].split_at_mut(m_eq);
        problem.eq_constraints(z, eq_part);
        problem.ineq_constraints(z, in_part);
        out
    };

    // Forward-mode Jacobian, GRAD_LANES columns per sweep.
    let mut jac = vec![vec![0.0; n]; rows];
    let mut args: Vec<Dual<GRAD_LANES>> = z.iter().map(|&v| Dual::constant(v)).collect();
    let mut start = 0;
    while start < n {
        let width = GRAD_LANES.min(n - start);
        for lane in 0..width {
            args[start + lane] = Dual::variable(z[start + lane], lane);
        }
        let mut out = vec![Dual::<GRAD_LANES>::constant(0.0); rows];
        out[0] = problem.objective(&args);
        let (eq_part, in_part) = out[1..].split_at_mut(m_eq);
        problem.eq_constraints(&args, eq_part);
        problem.ineq_constraints(&args, in_part);
        for (row, value) in out.iter().enumerate() {
            for lane in 0..width {
                jac[row][start + lane] = value.du[lane];
            }
        }
        for lane in 0..width {
            args[start + lane] = Dual::constant(z[start + lane]);
        }
        start += width;
    }

    let lower = problem.lower();
    let upper = problem.upper();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut step = h * (1.0 + z[i].abs());
        if lower[i].is_finite() {
            step = step.min(0.45 * (z[i] - lower[i]));
        }
        if upper[i].is_finite() {
            step = step.min(0.45 * (upper[i] - z[i]));
        }
        if step <= 0.0 {
            continue;
        }
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[i] += step;
        zm[i] -= step;
        let fp = eval_all(&zp);
        let fm = eval_all(&zm);
        for row in 0..rows {
            let fd = (fp[row] - fm[row]) / (2.0 * step);
            let ad = jac[row][i];
            let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}
