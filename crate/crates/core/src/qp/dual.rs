//! Dual active-set method (Goldfarb–Idnani) specialised to the Euclidean
//! projection `min ½‖x − p‖²  s.t.  c_iᵀx ≥ b_i`.
//!
//! With an identity Hessian the unconstrained minimiser is `p` itself and the
//! primal step direction is the component of the violated normal orthogonal to
//! the active normals, so each step only needs a thin QR of the active set.

use nalgebra::{DMatrix, DVector};

/// One-sided constraint `normalᵀx ≥ rhs`.
#[derive(Debug, Clone)]
pub(crate) struct Halfspace {
    pub normal: DVector<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) enum DualOutcome {
    Solved { x: DVector<f64>, multipliers: Vec<f64>, active: Vec<usize> },
    Infeasible,
    IterationLimit,
}

/// Violations smaller than this (relative to the constraint normal) are ignored.
const FEASIBILITY_TOL: f64 = 1e-11;
/// Primal step directions shorter than this (relative) are treated as zero.
const DIRECTION_TOL: f64 = 1e-10;

fn slack(h: &Halfspace, x: &DVector<f64>) -> f64 {
    h.normal.dot(x) - h.rhs
}

struct ActiveSet {
    index: Vec<usize>,
    multipliers: Vec<f64>,
}

impl ActiveSet {
    /// Returns `(z, r)`: the primal direction for adding `d` and the
    /// corresponding change of the active multipliers per unit step.
    fn directions(&self, constraints: &[Halfspace], d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = d.len();
        let m = self.index.len();
        if m == 0 {
            return (d.clone(), DVector::zeros(0));
        }
        let mut nmat = DMatrix::zeros(n, m);
        for (c, &i) in self.index.iter().enumerate() {
            nmat.set_column(c, &constraints[i].normal);
        }
        let qr = nmat.qr();
        let q = qr.q();
        let r = qr.r();
        let qtd = q.transpose() * d;
        let z = d - &q * &qtd;
        let rr = r
            .solve_upper_triangular(&qtd)
            .unwrap_or_else(|| DVector::from_element(m, f64::NAN));
        (z, rr)
    }

    fn drop(&mut self, pos: usize) {
        self.index.remove(pos);
        self.multipliers.remove(pos);
    }
}

pub(crate) fn solve(prior: &DVector<f64>, constraints: &[Halfspace], max_steps: usize) -> DualOutcome {
    let mut x = prior.clone();
    let mut active = ActiveSet { index: Vec::new(), multipliers: Vec::new() };
    let norms: Vec<f64> = constraints.iter().map(|h| h.normal.norm()).collect();
    let mut steps = 0usize;

    loop {
        // most violated constraint (scaled by normal length)
        let mut worst: Option<(usize, f64)> = None;
        for (i, h) in constraints.iter().enumerate() {
            if active.index.contains(&i) {
                continue;
            }
            let s = slack(h, &x);
            let scaled = if norms[i] > 0.0 { s / norms[i] } else { s };
            let scale = 1.0 + h.rhs.abs() / norms[i].max(1e-300);
            if scaled < -FEASIBILITY_TOL * scale && worst.is_none_or(|(_, w)| scaled < w) {
                worst = Some((i, scaled));
            }
        }
        let Some((q, _)) = worst else {
            return DualOutcome::Solved {
                x,
                multipliers: active.multipliers,
                active: active.index,
            };
        };

        let d = constraints[q].normal.clone();
        let mut u_q = 0.0;
        loop {
            steps += 1;
            if steps > max_steps {
                return DualOutcome::IterationLimit;
            }
            let (z, r) = active.directions(constraints, &d);
            if r.iter().any(|v| !v.is_finite()) {
                return DualOutcome::IterationLimit;
            }
            // partial step: largest t keeping active multipliers nonnegative
            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for (pos, (&u, &rv)) in active.multipliers.iter().zip(r.iter()).enumerate() {
                if rv > 0.0 {
                    let t = u / rv;
                    if t < t1 {
                        t1 = t;
                        drop_pos = Some(pos);
                    }
                }
            }
            let z_small = z.norm() <= DIRECTION_TOL * norms[q].max(1e-300);
            let t2 = if z_small {
                f64::INFINITY
            } else {
                -slack(&constraints[q], &x) / z.dot(&d)
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return DualOutcome::Infeasible;
            }
            if !z_small {
                x += &z * t;
            }
            for (u, rv) in active.multipliers.iter_mut().zip(r.iter()) {
                *u -= t * rv;
            }
            u_q += t;
            if t2 <= t1 {
                active.index.push(q);
                active.multipliers.push(u_q);
                break;
            }
            if let Some(pos) = drop_pos {
                active.drop(pos);
            }
        }
    }
}
