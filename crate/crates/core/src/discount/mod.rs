//! Choice of fare-discount regions that maximises predicted ridership under a
//! region count limit and a revenue-loss budget.

mod bnb;
mod heuristic;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::SharePredictor;
use crate::data::Dataset;
use crate::error::{Error, Result};

pub use bnb::{solve_bp_exact, MAX_EXACT_REGIONS};
pub use heuristic::solve_bp_heuristic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountConfig {
    pub transit_alternative: String,
    pub fare_column: String,
    pub discount_rate: f64,
    /// Maximum number of discounted regions.
    #[serde(rename = "O")]
    pub max_regions: usize,
    /// Revenue-loss budget per day; infinite means unconstrained.
    #[serde(rename = "B", with = "crate::float_serde")]
    pub budget: f64,
    /// Weight each agent's loss by its discounted transit trips instead of
    /// charging one discounted fare per agent.
    #[serde(default)]
    pub demand_weighted_loss: bool,
}

impl Default for DiscountConfig {
    fn default() -> Self {
        Self {
            transit_alternative: "transit".into(),
            fare_column: "cost".into(),
            discount_rate: 0.5,
            max_regions: usize::MAX,
            budget: f64::INFINITY,
            demand_weighted_loss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountInstance {
    pub regions: Vec<String>,
    /// Agent indices per region, aligned with `regions`.
    pub agents_by_region: Vec<Vec<usize>>,
    pub agent_ids: Vec<String>,
    pub demand: Vec<f64>,
    pub fare: Vec<f64>,
    pub share_with: Vec<f64>,
    pub share_without: Vec<f64>,
    /// Revenue-loss coefficient per agent.
    pub loss: Vec<f64>,
    #[serde(rename = "O")]
    pub max_regions: usize,
    #[serde(rename = "B", with = "crate::float_serde")]
    pub budget: f64,
    pub discount_rate: f64,
}

impl DiscountInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.agent_ids.len();
        if [self.demand.len(), self.fare.len(), self.share_with.len(), self.share_without.len(), self.loss.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Precondition("per-agent vectors differ in length".into()));
        }
        if self.agents_by_region.len() != self.regions.len() {
            return Err(Error::Precondition("agents_by_region must align with regions".into()));
        }
        let mut seen = vec![false; n];
        for &t in self.agents_by_region.iter().flatten() {
            if t >= n || std::mem::replace(&mut seen[t], true) {
                return Err(Error::Precondition(format!("agent index {t} missing or in two regions")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Precondition("every agent must belong to a region".into()));
        }
        let bad_share = |s: &f64| !(0.0..=1.0).contains(s);
        if self.share_with.iter().any(bad_share) || self.share_without.iter().any(bad_share) {
            return Err(Error::Precondition("shares must lie in [0, 1]".into()));
        }
        if self.loss.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Precondition("revenue losses must be finite and nonnegative".into()));
        }
        if !(self.budget >= 0.0) {
            return Err(Error::Precondition(format!("budget must be >= 0, got {}", self.budget)));
        }
        Ok(())
    }

    pub fn within_budget(&self, loss: f64) -> bool {
        loss <= self.budget + 1e-12 * self.budget.abs().max(1.0)
    }

    /// Ridership gain and revenue loss of discounting each region.
    pub fn region_totals(&self) -> (Vec<f64>, Vec<f64>) {
        self.agents_by_region
            .iter()
            .map(|agents| {
                let gain = agents
                    .iter()
                    .map(|&t| (self.share_with[t] - self.share_without[t]) * self.demand[t])
                    .sum::<f64>();
                let loss = agents.iter().map(|&t| self.loss[t]).sum::<f64>();
                (gain, loss)
            })
            .unzip()
    }

    /// Ridership with no discount anywhere.
    pub fn baseline_ridership(&self) -> f64 {
        self.share_without.iter().zip(&self.demand).map(|(s, d)| s * d).sum()
    }

    /// `Σ_t [ŝ^dis x_t + ŝ^non-dis (1 − x_t)] d_t` with `x_t` the indicator of
    /// the agent's region.
    pub fn ridership(&self, selected: &[bool]) -> f64 {
        let mut x = vec![false; self.agent_ids.len()];
        for (r, agents) in self.agents_by_region.iter().enumerate() {
            if selected[r] {
                agents.iter().for_each(|&t| x[t] = true);
            }
        }
        (0..x.len())
            .map(|t| if x[t] { self.share_with[t] } else { self.share_without[t] } * self.demand[t])
            .sum()
    }

    pub fn revenue_loss(&self, selected: &[bool]) -> f64 {
        self.agents_by_region
            .iter()
            .zip(selected)
            .filter(|(_, s)| **s)
            .flat_map(|(a, _)| a.iter().map(|&t| self.loss[t]))
            .sum()
    }

    /// Daily fare revenue from transit riders.
    pub fn revenue(&self, selected: &[bool]) -> f64 {
        let mut total = 0.0;
        for (r, agents) in self.agents_by_region.iter().enumerate() {
            for &t in agents {
                total += if selected[r] {
                    (1.0 - self.discount_rate) * self.fare[t] * self.share_with[t]
                } else {
                    self.fare[t] * self.share_without[t]
                } * self.demand[t];
            }
        }
        total
    }

    pub fn solution(&self, selected: &[bool], optimal: bool, gap: f64) -> DiscountSolution {
        let objective = self.ridership(selected);
        DiscountSolution {
            selected_regions: self
                .regions
                .iter()
                .zip(selected)
                .filter(|(_, s)| **s)
                .map(|(r, _)| r.clone())
                .collect(),
            objective_ridership: objective,
            ridership_gain: objective - self.baseline_ridership(),
            revenue_change: -self.revenue_loss(selected),
            optimal,
            gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountSolution {
    pub selected_regions: Vec<String>,
    /// Trips per day.
    pub objective_ridership: f64,
    pub ridership_gain: f64,
    /// Minus the budgeted revenue loss.
    pub revenue_change: f64,
    pub optimal: bool,
    pub gap: f64,
}

impl DiscountSolution {
    pub fn selection(&self, inst: &DiscountInstance) -> Vec<bool> {
        inst.regions.iter().map(|r| self.selected_regions.contains(r)).collect()
    }
}

/// Before/after network totals of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountSummary {
    pub total_ridership_before: f64,
    pub total_ridership_after: f64,
    pub total_revenue_before: f64,
    pub total_revenue_after: f64,
    pub ridership_change: f64,
    pub revenue_change: f64,
}

pub fn summarize(inst: &DiscountInstance, sol: &DiscountSolution) -> DiscountSummary {
    let none = vec![false; inst.regions.len()];
    let sel = sol.selection(inst);
    let (r0, r1) = (inst.ridership(&none), inst.ridership(&sel));
    let (v0, v1) = (inst.revenue(&none), inst.revenue(&sel));
    DiscountSummary {
        total_ridership_before: r0,
        total_ridership_after: r1,
        total_revenue_before: v0,
        total_revenue_after: v1,
        ridership_change: r1 - r0,
        revenue_change: v1 - v0,
    }
}

pub fn write_summary_csv<W: Write>(w: W, s: &DiscountSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["total_ridership", "total_revenue", "change_of_ridership", "change_of_revenue", "scenario"])?;
    out.write_record([
        s.total_ridership_before.to_string(),
        s.total_revenue_before.to_string(),
        "0".into(),
        "0".into(),
        "no_discount".into(),
    ])?;
    out.write_record([
        s.total_ridership_after.to_string(),
        s.total_revenue_after.to_string(),
        s.ridership_change.to_string(),
        s.revenue_change.to_string(),
        "discount".into(),
    ])?;
    out.flush()?;
    Ok(())
}

/// Transit shares at observed and at discounted fares for every agent, grouped
/// by region in first-appearance order.
pub fn precompute_discount_shares(
    model: &dyn SharePredictor,
    ds: &Dataset,
    cfg: &DiscountConfig,
) -> Result<DiscountInstance> {
    if !(0.0..=1.0).contains(&cfg.discount_rate) {
        return Err(Error::Precondition(format!("discount rate {} outside [0, 1]", cfg.discount_rate)));
    }
    let j = ds.spec().alternative_index(&cfg.transit_alternative).ok_or_else(|| {
        Error::Precondition(format!("no transit alternative {:?} in the spec", cfg.transit_alternative))
    })?;
    let k = ds
        .column_index(&cfg.fare_column)
        .ok_or_else(|| Error::InvalidSpec(format!("fare column {:?} not in dataset", cfg.fare_column)))?;
    let shares: Vec<(f64, f64)> = ds
        .observations()
        .par_iter()
        .map(|o| {
            let without = model.predict(o)?[j];
            let mut d = o.clone();
            d.attributes[j][k] *= 1.0 - cfg.discount_rate;
            let with = model.predict(&d)?[j];
            Ok((with, without))
        })
        .collect::<Result<_>>()?;

    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut regions = Vec::new();
    let mut agents_by_region: Vec<Vec<usize>> = Vec::new();
    for (t, o) in ds.observations().iter().enumerate() {
        let r = *index.entry(o.region_id.as_str()).or_insert_with(|| {
            regions.push(o.region_id.clone());
            agents_by_region.push(Vec::new());
            regions.len() - 1
        });
        agents_by_region[r].push(t);
    }
    let obs = ds.observations();
    let fare: Vec<f64> = obs.iter().map(|o| o.attributes[j][k]).collect();
    let loss = (0..obs.len())
        .map(|t| {
            let base = cfg.discount_rate * fare[t];
            if cfg.demand_weighted_loss {
                base * obs[t].demand * shares[t].0
            } else {
                base
            }
        })
        .collect();
    let inst = DiscountInstance {
        regions,
        agents_by_region,
        agent_ids: obs.iter().map(|o| o.agent_id.clone()).collect(),
        demand: obs.iter().map(|o| o.demand).collect(),
        fare,
        share_with: shares.iter().map(|s| s.0).collect(),
        share_without: shares.iter().map(|s| s.1).collect(),
        loss,
        max_regions: cfg.max_regions,
        budget: cfg.budget,
        discount_rate: cfg.discount_rate,
    };
    inst.validate()?;
    Ok(inst)
}

/// Exact search when the instance is small enough, greedy with swaps otherwise.
pub fn solve_bp(inst: &DiscountInstance) -> Result<DiscountSolution> {
    if inst.regions.len() <= MAX_EXACT_REGIONS {
        solve_bp_exact(inst)
    } else {
        solve_bp_heuristic(inst)
    }
}

#[cfg(test)]
mod tests;
