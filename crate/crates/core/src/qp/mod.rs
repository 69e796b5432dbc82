//! Per-agent projection subproblem: the cluster prior is projected onto the
//! polyhedron where every pair of observed log-share ratios is matched within
//! `tol`, intersected with the parameter box.

mod dual;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{CompiledDesign, MarketObservation};
use crate::error::{Error, Result};
use dual::{DualOutcome, Halfspace};

/// Certified optimality threshold on the KKT residual.
pub const KKT_TOLERANCE: f64 = 1e-6;

/// Two-sided row `lower ≤ aᵀθ ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub a: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl ConstraintRow {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPSubproblem {
    pub prior: Vec<f64>,
    pub constraint_rows: Vec<ConstraintRow>,
    /// Per-parameter `(lb, ub)`, infinite where unbounded.
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
    pub tol_used: f64,
    /// Alternative pair `(j, j')` behind each row.
    pub pair_index: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QPStatus {
    Optimal,
    Relaxed,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPSolution {
    pub theta: Vec<f64>,
    /// `‖θ − prior‖²`.
    #[serde(with = "crate::float_serde")]
    pub objective: f64,
    #[serde(with = "crate::float_serde")]
    pub kkt_residual: f64,
    /// Constraint rows at either bound.
    pub active_set: Vec<usize>,
    /// Parameters at a box bound.
    pub active_bounds: Vec<usize>,
    /// Row multipliers (positive when the lower side binds).
    pub row_multipliers: Vec<f64>,
    pub status: QPStatus,
    pub tol_used: f64,
}

impl QPSolution {
    fn infeasible(p: &QPSubproblem) -> Self {
        Self {
            theta: p.prior.clone(),
            objective: f64::NAN,
            kkt_residual: f64::INFINITY,
            active_set: Vec::new(),
            active_bounds: Vec::new(),
            row_multipliers: Vec::new(),
            status: QPStatus::Infeasible,
            tol_used: p.tol_used,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status != QPStatus::Infeasible
    }
}

/// Prior-independent constraint geometry of one agent: `(X_j − X_j', ln(s_j/s_j'))`
/// for every unordered pair with both shares positive.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGeometry {
    pub rows: Vec<(Vec<f64>, f64)>,
    pub pair_index: Vec<(usize, usize)>,
    pub bounds: Vec<(f64, f64)>,
}

impl AgentGeometry {
    pub fn new(obs: &MarketObservation, design: &CompiledDesign, bounds: &[(f64, f64)]) -> Self {
        let x = design.rows_for(&obs.attributes);
        let positive: Vec<usize> = (0..obs.shares.len()).filter(|&j| obs.shares[j] > 0.0).collect();
        let mut rows = Vec::new();
        let mut pair_index = Vec::new();
        for (a, &j) in positive.iter().enumerate() {
            for &k in &positive[a + 1..] {
                let diff: Vec<f64> = x[j].iter().zip(&x[k]).map(|(p, q)| p - q).collect();
                rows.push((diff, (obs.shares[j] / obs.shares[k]).ln()));
                pair_index.push((j, k));
            }
        }
        Self {
            rows,
            pair_index,
            bounds: bounds.to_vec(),
        }
    }

    pub fn subproblem(&self, prior: &[f64], tol: f64) -> QPSubproblem {
        QPSubproblem {
            prior: prior.to_vec(),
            constraint_rows: self
                .rows
                .iter()
                .map(|(a, c)| ConstraintRow { a: a.clone(), lower: c - tol, upper: c + tol })
                .collect(),
            bounds: self.bounds.clone(),
            tol_used: tol,
            pair_index: self.pair_index.clone(),
        }
    }
}

/// Builds the projection subproblem for one agent at tolerance `tol`.
///
/// Pairs involving a zero share contribute no row; with fewer than two
/// positive shares the problem is a plain box projection.
pub fn build_agent_qp(
    obs: &MarketObservation,
    design: &CompiledDesign,
    bounds: &[(f64, f64)],
    prior: &[f64],
    tol: f64,
) -> Result<QPSubproblem> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tol must be positive, got {tol}")));
    }
    if prior.len() != design.n_params() || bounds.len() != design.n_params() {
        return Err(Error::Precondition(format!(
            "prior/bounds length must equal the parameter count {}",
            design.n_params()
        )));
    }
    Ok(AgentGeometry::new(obs, design, bounds).subproblem(prior, tol))
}

fn halfspaces(p: &QPSubproblem) -> (Vec<Halfspace>, Vec<(usize, bool)>, Vec<(usize, bool)>) {
    let n = p.prior.len();
    let mut hs = Vec::new();
    let mut row_of = Vec::new();
    let mut bound_of = Vec::new();
    for (i, row) in p.constraint_rows.iter().enumerate() {
        let a = DVector::from_column_slice(&row.a);
        if row.lower.is_finite() {
            hs.push(Halfspace { normal: a.clone(), rhs: row.lower });
            row_of.push((i, true));
            bound_of.push((usize::MAX, false));
        }
        if row.upper.is_finite() {
            hs.push(Halfspace { normal: -a, rhs: -row.upper });
            row_of.push((i, false));
            bound_of.push((usize::MAX, false));
        }
    }
    for (k, &(lb, ub)) in p.bounds.iter().enumerate() {
        if lb.is_finite() {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            hs.push(Halfspace { normal: e, rhs: lb });
            row_of.push((usize::MAX, true));
            bound_of.push((k, true));
        }
        if ub.is_finite() {
            let mut e = DVector::zeros(n);
            e[k] = -1.0;
            hs.push(Halfspace { normal: e, rhs: -ub });
            row_of.push((usize::MAX, false));
            bound_of.push((k, false));
        }
    }
    (hs, row_of, bound_of)
}

/// Unique minimiser of `‖θ − prior‖²` over the subproblem's polyhedron.
pub fn solve_projection_qp(p: &QPSubproblem) -> QPSolution {
    let (hs, row_of, bound_of) = halfspaces(p);
    let prior = DVector::from_column_slice(&p.prior);
    let max_steps = 50 * (hs.len() + p.prior.len() + 1);
    let (mut x, mult, active) = match dual::solve(&prior, &hs, max_steps) {
        DualOutcome::Solved { x, multipliers, active } => (x, multipliers, active),
        DualOutcome::Infeasible | DualOutcome::IterationLimit => {
            return QPSolution::infeasible(p)
        }
    };
    // snap active box sides so bounds hold exactly
    for &i in &active {
        let (k, lower) = bound_of[i];
        if k != usize::MAX {
            x[k] = if lower { p.bounds[k].0 } else { p.bounds[k].1 };
        }
    }

    // KKT: x − p − Σ u_i c_i = 0, u ≥ 0, u_i s_i = 0, s ≥ 0
    let mut stationarity = &x - &prior;
    let mut full_u = vec![0.0; hs.len()];
    for (&i, &u) in active.iter().zip(&mult) {
        stationarity -= &hs[i].normal * u;
        full_u[i] = u;
    }
    let mut residual = stationarity.amax();
    for (i, h) in hs.iter().enumerate() {
        let s = slack(h, &x);
        let scale = 1.0 + h.rhs.abs();
        residual = residual
            .max((-s / scale).max(0.0))
            .max((-full_u[i]).max(0.0))
            .max((full_u[i] * s).abs());
    }

    let mut row_multipliers = vec![0.0; p.constraint_rows.len()];
    let mut active_set = Vec::new();
    let mut active_bounds = Vec::new();
    for &i in &active {
        let (row, lower) = row_of[i];
        if row != usize::MAX {
            row_multipliers[row] += if lower { full_u[i] } else { -full_u[i] };
            active_set.push(row);
        } else {
            active_bounds.push(bound_of[i].0);
        }
    }
    active_set.sort_unstable();
    active_set.dedup();
    active_bounds.sort_unstable();

    let theta: Vec<f64> = x.iter().copied().collect();
    let objective = (&x - &prior).norm_squared();
    QPSolution {
        theta,
        objective,
        kkt_residual: residual,
        active_set,
        active_bounds,
        row_multipliers,
        status: if residual <= KKT_TOLERANCE { QPStatus::Optimal } else { QPStatus::Infeasible },
        tol_used: p.tol_used,
    }
}

fn slack(h: &Halfspace, x: &DVector<f64>) -> f64 {
    h.normal.dot(x) - h.rhs
}

/// Solves at `tol`, doubling it up to `max_doublings` times while infeasible.
pub fn relax_tolerance(geometry: &AgentGeometry, prior: &[f64], tol: f64, max_doublings: u32) -> QPSolution {
    let mut t = tol;
    for attempt in 0..=max_doublings {
        let mut sol = solve_projection_qp(&geometry.subproblem(prior, t));
        if sol.is_feasible() {
            if attempt > 0 {
                sol.status = QPStatus::Relaxed;
            }
            return sol;
        }
        if attempt < max_doublings {
            t *= 2.0;
        }
    }
    let mut sol = QPSolution::infeasible(&geometry.subproblem(prior, t));
    sol.tol_used = t;
    sol
}

/// Largest violation of the pair constraints and box at the problem's tolerance.
pub fn max_violation(p: &QPSubproblem, theta: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for row in &p.constraint_rows {
        let v: f64 = row.a.iter().zip(theta).map(|(a, t)| a * t).sum();
        worst = worst.max(row.lower - v).max(v - row.upper);
    }
    for (&(lb, ub), &t) in p.bounds.iter().zip(theta) {
        worst = worst.max(lb - t).max(t - ub);
    }
    worst
}
