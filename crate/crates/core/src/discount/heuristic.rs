use super::bnb::Candidates;
use super::{DiscountInstance, DiscountSolution};
use crate::error::Result;

/// Greedy by gain per unit of loss, then single additions and one-for-one
/// swaps until none improves. The gap is measured against the root bound.
pub fn solve_bp_heuristic(inst: &DiscountInstance) -> Result<DiscountSolution> {
    inst.validate()?;
    let c = Candidates::new(inst);
    let n = c.len();
    let mut on = vec![false; n];
    let (mut count, mut loss, mut gain) = (0usize, 0.0, 0.0);
    for k in 0..n {
        if count < inst.max_regions && inst.within_budget(loss + c.loss[k]) {
            on[k] = true;
            count += 1;
            loss += c.loss[k];
            gain += c.gain[k];
        }
    }
    loop {
        let mut best: Option<(Option<usize>, usize, f64)> = None;
        for u in (0..n).filter(|&u| !on[u]) {
            if count < inst.max_regions
                && inst.within_budget(loss + c.loss[u])
                && c.gain[u] > 0.0
                && best.is_none_or(|b| c.gain[u] > b.2)
            {
                best = Some((None, u, c.gain[u]));
            }
            for s in (0..n).filter(|&s| on[s]) {
                let delta = c.gain[u] - c.gain[s];
                if delta > 1e-12 * gain.abs().max(1.0)
                    && inst.within_budget(loss - c.loss[s] + c.loss[u])
                    && best.is_none_or(|b| delta > b.2)
                {
                    best = Some((Some(s), u, delta));
                }
            }
        }
        let Some((out, u, delta)) = best else { break };
        if let Some(s) = out {
            on[s] = false;
            loss -= c.loss[s];
        } else {
            count += 1;
        }
        on[u] = true;
        loss += c.loss[u];
        gain += delta;
    }
    let mut selected = vec![false; inst.regions.len()];
    for k in (0..n).filter(|&k| on[k]) {
        selected[c.index[k]] = true;
    }
    let bound = c.bound(0, inst.max_regions, inst.budget);
    let sol = inst.solution(&selected, false, 0.0);
    let gap = (bound - sol.ridership_gain).max(0.0);
    Ok(DiscountSolution { gap, ..sol })
}
