use super::{DiscountInstance, DiscountSolution};
use crate::error::{Error, Result};

/// Largest region count accepted by the exact solver.
pub const MAX_EXACT_REGIONS: usize = 64;

/// Regions worth considering, ordered by gain per unit of revenue loss.
pub(super) struct Candidates {
    pub index: Vec<usize>,
    pub gain: Vec<f64>,
    pub loss: Vec<f64>,
    /// `top[i][s]`: sum of the `s` largest gains among candidates `i..`.
    top: Vec<Vec<f64>>,
}

impl Candidates {
    pub fn new(inst: &DiscountInstance) -> Self {
        let (gain, loss) = inst.region_totals();
        let mut index: Vec<usize> = (0..gain.len())
            .filter(|&r| gain[r] > 0.0 && inst.within_budget(loss[r]))
            .collect();
        let ratio = |r: usize| if loss[r] > 0.0 { gain[r] / loss[r] } else { f64::INFINITY };
        index.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));
        let gain: Vec<f64> = index.iter().map(|&r| gain[r]).collect();
        let loss: Vec<f64> = index.iter().map(|&r| loss[r]).collect();
        let n = index.len();
        let top = (0..=n)
            .map(|i| {
                let mut g = gain[i..].to_vec();
                g.sort_by(|a, b| b.total_cmp(a));
                std::iter::once(0.0)
                    .chain(g.iter().scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    }))
                    .collect()
            })
            .collect();
        Self { index, gain, loss, top }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    /// Upper bound on the extra gain from candidates `i..` with `slots`
    /// selections and `capacity` budget left: the smaller of the best-gains
    /// cardinality bound and the fractional knapsack bound.
    pub fn bound(&self, i: usize, slots: usize, capacity: f64) -> f64 {
        let card = self.top[i][slots.min(self.len() - i)];
        if !capacity.is_finite() {
            return card;
        }
        let mut cap = capacity;
        let mut lp = 0.0;
        for c in i..self.len() {
            if self.loss[c] <= cap {
                cap -= self.loss[c];
                lp += self.gain[c];
            } else {
                lp += self.gain[c] * cap / self.loss[c];
                break;
            }
        }
        card.min(lp)
    }
}

struct Search<'a> {
    c: &'a Candidates,
    budget: f64,
    inst: &'a DiscountInstance,
    chosen: Vec<bool>,
    best: f64,
    best_set: Vec<bool>,
}

impl Search<'_> {
    fn dfs(&mut self, i: usize, gain: f64, loss: f64, slots: usize) {
        if gain > self.best {
            self.best = gain;
            self.best_set.clone_from(&self.chosen);
        }
        if i == self.c.len() || slots == 0 {
            return;
        }
        if gain + self.c.bound(i, slots, self.budget - loss) <= self.best {
            return;
        }
        let l = loss + self.c.loss[i];
        if self.inst.within_budget(l) {
            self.chosen[i] = true;
            self.dfs(i + 1, gain + self.c.gain[i], l, slots - 1);
            self.chosen[i] = false;
        }
        self.dfs(i + 1, gain, loss, slots);
    }
}

/// Exact optimum by depth-first branch and bound over region indicators.
pub fn solve_bp_exact(inst: &DiscountInstance) -> Result<DiscountSolution> {
    inst.validate()?;
    if inst.regions.len() > MAX_EXACT_REGIONS {
        return Err(Error::Precondition(format!(
            "exact solver handles at most {MAX_EXACT_REGIONS} regions, got {}",
            inst.regions.len()
        )));
    }
    let c = Candidates::new(inst);
    let mut s = Search {
        c: &c,
        budget: inst.budget,
        inst,
        chosen: vec![false; c.len()],
        best: 0.0,
        best_set: vec![false; c.len()],
    };
    s.dfs(0, 0.0, 0.0, inst.max_regions);
    let mut selected = vec![false; inst.regions.len()];
    for (k, &on) in s.best_set.iter().enumerate() {
        if on {
            selected[c.index[k]] = true;
        }
    }
    Ok(inst.solution(&selected, true, 0.0))
}
