//! Box-constrained Method of Moving Asymptotes.
//!
//! The objective is maximized by minimizing its negation. With only bound
//! constraints the convex approximation is separable, so each subproblem is
//! solved coordinate by coordinate in closed form.
//!
//! The regularization term of the approximation is raised, per coordinate,
//! to match a secant estimate of the objective's curvature from the last
//! two gradients; without curvature information the step length is set by
//! the asymptote gap alone and smooth problems converge slowly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diff::DiffComponent;
use crate::error::{Error, Result};
use crate::format::format_sig;

const ASYMPTOTE_INIT: f64 = 0.5;
const SHRINK: f64 = 0.7;
const EXPAND: f64 = 1.2;
const GAP_MIN: f64 = 0.01;
const GAP_MAX: f64 = 10.0;
const MOVE: f64 = 0.5;
const RAA0: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCriteria {
    pub max_iters: usize,
    pub rel_change_tol: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria {
            max_iters: 20,
            rel_change_tol: 0.01,
        }
    }
}

impl StopCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.rel_change_tol > 0.0) {
            return Err(Error::Config(format!(
                "stop criteria must be positive, got max_iters {} and rel_change_tol {}",
                self.max_iters, self.rel_change_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmaState {
    pub x: Vec<f64>,
    pub x_prev: Option<Vec<f64>>,
    pub x_prev2: Option<Vec<f64>>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Gradient of the maximized objective at `x_prev`.
    pub grad_prev: Option<Vec<f64>>,
    /// Completed steps.
    pub iteration: usize,
}

impl MmaState {
    /// Coordinates with `x_min == x_max` stay fixed.
    pub fn new(x0: Vec<f64>, x_min: Vec<f64>, x_max: Vec<f64>) -> Result<Self> {
        let n = x0.len();
        if x_min.len() != n || x_max.len() != n {
            return Err(Error::Length {
                context: "mma bounds".into(),
                expected: n,
                actual: x_min.len().min(x_max.len()),
            });
        }
        for i in 0..n {
            if !(x_min[i] <= x0[i] && x0[i] <= x_max[i]) || !x0[i].is_finite() {
                return Err(Error::Config(format!(
                    "x0[{i}] = {} outside bounds [{}, {}]",
                    x0[i], x_min[i], x_max[i]
                )));
            }
        }
        let range: Vec<f64> = (0..n).map(|i| x_max[i] - x_min[i]).collect();
        Ok(MmaState {
            low: (0..n).map(|i| x0[i] - ASYMPTOTE_INIT * range[i]).collect(),
            upp: (0..n).map(|i| x0[i] + ASYMPTOTE_INIT * range[i]).collect(),
            x: x0,
            x_prev: None,
            x_prev2: None,
            x_min,
            x_max,
            grad_prev: None,
            iteration: 0,
        })
    }

    pub fn range(&self, i: usize) -> f64 {
        self.x_max[i] - self.x_min[i]
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.range(i) > 0.0
    }

    /// Asymptotes used by the next step.
    fn next_asymptotes(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.x.len();
        let mut low = vec![0.0; n];
        let mut upp = vec![0.0; n];
        for i in 0..n {
            let x = self.x[i];
            let r = self.range(i);
            match (&self.x_prev, &self.x_prev2) {
                (Some(p1), Some(p2)) if self.iteration >= 2 => {
                    let trend = (x - p1[i]) * (p1[i] - p2[i]);
                    let gamma = if trend < 0.0 {
                        SHRINK
                    } else if trend > 0.0 {
                        EXPAND
                    } else {
                        1.0
                    };
                    let lo_gap = (gamma * (p1[i] - self.low[i])).clamp(GAP_MIN * r, GAP_MAX * r);
                    let up_gap = (gamma * (self.upp[i] - p1[i])).clamp(GAP_MIN * r, GAP_MAX * r);
                    low[i] = x - lo_gap;
                    upp[i] = x + up_gap;
                }
                _ => {
                    low[i] = x - ASYMPTOTE_INIT * r;
                    upp[i] = x + ASYMPTOTE_INIT * r;
                }
            }
        }
        (low, upp)
    }
}

/// One coordinate of the separable approximation
/// `p / (upp - y) + q / (y - low)` on `[alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subproblem {
    pub p: f64,
    pub q: f64,
    pub low: f64,
    pub upp: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Subproblem {
    /// Approximation of the minimized objective (up to a constant).
    pub fn value(&self, y: f64) -> f64 {
        self.p / (self.upp - y) + self.q / (y - self.low)
    }

    /// Closed-form minimizer: the stationary point of the strictly convex
    /// approximation, clamped to the move limits.
    pub fn solve(&self) -> f64 {
        let sp = self.p.sqrt();
        let sq = self.q.sqrt();
        let y = (sq * self.upp + sp * self.low) / (sp + sq);
        y.clamp(self.alpha, self.beta)
    }
}

/// Builds the subproblem for coordinate `i` at the current state, given the
/// gradient `grad` of the maximized objective and the asymptotes to use.
fn subproblem(state: &MmaState, i: usize, grad: &[f64], low: f64, upp: f64) -> Subproblem {
    let x = state.x[i];
    let r = state.range(i);
    let g = -grad[i];
    let (gp, gm) = (g.max(0.0), (-g).max(0.0));
    let ux = upp - x;
    let xl = x - low;
    let a = 1.001 * gp + 0.001 * gm;
    let b = 0.001 * gp + 1.001 * gm;
    let mut rho = RAA0;
    if let (Some(xp), Some(gprev)) = (&state.x_prev, &state.grad_prev) {
        let dx = x - xp[i];
        if dx != 0.0 {
            // Secant curvature of the minimized objective; the approximation
            // has curvature 2(a + rho/r)/ux + 2(b + rho/r)/xl at x.
            let curvature = (g + gprev[i]) / dx;
            let needed = r * (curvature - 2.0 * a / ux - 2.0 * b / xl) / (2.0 * (1.0 / ux + 1.0 / xl));
            if needed.is_finite() {
                rho = rho.max(needed);
            }
        }
    }
    Subproblem {
        p: ux * ux * (a + rho / r),
        q: xl * xl * (b + rho / r),
        low,
        upp,
        alpha: state.x_min[i].max(x - MOVE * xl),
        beta: state.x_max[i].min(x + MOVE * ux),
    }
}

/// Subproblems the next [`mma_step`] would solve, one per free coordinate
/// (`None` for frozen ones).
pub fn subproblems(state: &MmaState, grad: &[f64]) -> Vec<Option<Subproblem>> {
    let (low, upp) = state.next_asymptotes();
    (0..state.x.len())
        .map(|i| state.is_free(i).then(|| subproblem(state, i, grad, low[i], upp[i])))
        .collect()
}

/// Advances the iterate of a maximization of `f` with gradient `grad`.
pub fn mma_step(state: &MmaState, f: f64, grad: &[f64]) -> Result<MmaState> {
    if grad.len() != state.x.len() {
        return Err(Error::Length {
            context: "mma gradient".into(),
            expected: state.x.len(),
            actual: grad.len(),
        });
    }
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("objective {f}")));
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {g}")));
    }
    let (low, upp) = state.next_asymptotes();
    let mut x = state.x.clone();
    for i in 0..x.len() {
        if state.is_free(i) {
            x[i] = subproblem(state, i, grad, low[i], upp[i]).solve();
        }
    }
    Ok(MmaState {
        x,
        x_prev: Some(state.x.clone()),
        x_prev2: state.x_prev.clone(),
        low,
        upp,
        x_min: state.x_min.clone(),
        x_max: state.x_max.clone(),
        grad_prev: Some(grad.to_vec()),
        iteration: state.iteration + 1,
    })
}

/// Largest step relative to the bound range over free coordinates.
pub fn rel_change(state: &MmaState, previous: &[f64]) -> f64 {
    (0..state.x.len())
        .filter(|&i| state.is_free(i))
        .map(|i| (state.x[i] - previous[i]).abs() / state.range(i))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iter: usize,
    /// Iterate at which the objective and gradient were evaluated.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Gradient norm over free coordinates.
    pub grad_norm: f64,
    /// Relative change of the step taken from `x`.
    pub rel_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub final_x: Vec<f64>,
    pub final_objective: f64,
    pub converged: bool,
}

/// Maximizes the scalar output of `objective` over the box.
pub fn optimize(
    objective: &dyn DiffComponent,
    x0: &[f64],
    x_min: &[f64],
    x_max: &[f64],
    stop: StopCriteria,
) -> Result<Trajectory> {
    stop.validate()?;
    if objective.output_shape().len() != 1 {
        return Err(Error::Config(format!(
            "objective `{}` must produce one value, produces {}",
            objective.name(),
            objective.output_shape()
        )));
    }
    let mut state = MmaState::new(x0.to_vec(), x_min.to_vec(), x_max.to_vec())?;
    let mut rows = Vec::new();
    let mut converged = false;
    let at = |iteration: usize, e: Error| Error::Iteration {
        iteration,
        source: Box::new(e),
    };
    for iter in 1..=stop.max_iters {
        let (f, grad) = objective.value_and_vjp(&state.x, &[1.0]).map_err(|e| at(iter, e))?;
        let f = f[0];
        let grad_norm = (0..grad.len())
            .filter(|&i| state.is_free(i))
            .map(|i| grad[i] * grad[i])
            .sum::<f64>()
            .sqrt();
        let next = mma_step(&state, f, &grad).map_err(|e| at(iter, e))?;
        let change = rel_change(&next, &state.x);
        rows.push(TrajectoryRow {
            iter,
            x: state.x.clone(),
            objective: f,
            grad_norm,
            rel_change: change,
        });
        state = next;
        if change < stop.rel_change_tol {
            converged = true;
            break;
        }
    }
    let final_objective = objective.forward(&state.x).map_err(|e| at(rows.len() + 1, e))?[0];
    Ok(Trajectory {
        rows,
        final_x: state.x,
        final_objective,
        converged,
    })
}

pub const TRAJECTORY_HEADER: &str = "iter,r_a,r_b,L,theta_z,objective,grad_norm,rel_change";

/// Trajectory of a 6-parameter design optimization.
pub fn write_trajectory_csv<W: Write>(mut out: W, traj: &Trajectory) -> Result<()> {
    let io = |e| Error::io("trajectory", e);
    writeln!(out, "{TRAJECTORY_HEADER}").map_err(io)?;
    for row in &traj.rows {
        if row.x.len() != 6 {
            return Err(Error::Length {
                context: "trajectory design vector".into(),
                expected: 6,
                actual: row.x.len(),
            });
        }
        let cells = [
            row.x[0],
            row.x[1],
            row.x[2],
            row.x[5],
            row.objective,
            row.grad_norm,
            row.rel_change,
        ]
        .map(|v| format_sig(v, 17));
        writeln!(out, "{},{}", row.iter, cells.join(",")).map_err(io)?;
    }
    Ok(())
}
