use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CompiledDesign, Dataset, MarketObservation};
use crate::error::{Error, Result};
use crate::estimator::EstimationResult;

fn param(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::InvalidSpec(format!("unknown parameter {name:?}")))
}

/// `θ_time / θ_cost`, or `None` when the cost parameter is zero.
pub fn value_of_time(theta: &[f64], names: &[String], time_param: &str, cost_param: &str) -> Result<Option<f64>> {
    let t = theta[param(names, time_param)?];
    let c = theta[param(names, cost_param)?];
    Ok((c != 0.0).then(|| t / c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVot {
    pub segment: String,
    pub n_agents: usize,
    /// Agents with a zero cost parameter.
    pub n_undefined: usize,
    #[serde(with = "crate::float_serde")]
    pub mean: f64,
    #[serde(with = "crate::float_serde")]
    pub median: f64,
}

/// Mean and median value of time per population segment of `ds`.
pub fn vot_by_segment(
    result: &EstimationResult,
    ds: &Dataset,
    time_param: &str,
    cost_param: &str,
) -> Result<Vec<SegmentVot>> {
    let mut by_segment: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for a in &result.agent_params {
        let obs = ds
            .observation(&a.agent_id)
            .ok_or_else(|| Error::Precondition(format!("agent {:?} not in dataset", a.agent_id)))?;
        let entry = by_segment.entry(obs.segment.clone()).or_default();
        entry.0 += 1;
        if let Some(v) = value_of_time(&result.theta_or_prior(a), &result.parameter_names, time_param, cost_param)? {
            entry.1.push(v);
        }
    }
    Ok(by_segment
        .into_iter()
        .map(|(segment, (n_agents, mut v))| {
            v.sort_by(f64::total_cmp);
            let median = match v.len() {
                0 => f64::NAN,
                n if n % 2 == 1 => v[n / 2],
                n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
            };
            SegmentVot {
                segment,
                n_agents,
                n_undefined: n_agents - v.len(),
                mean: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
                median,
            }
        })
        .collect())
}

fn log_sum(v: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    let kept: Vec<f64> = v.iter().enumerate().filter(|&(j, _)| keep(j)).map(|(_, x)| *x).collect();
    let max = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + kept.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Logsum welfare loss of removing `removed` from the choice set, in money
/// units. `None` when the cost parameter is not negative.
pub fn compensating_variation_set(
    theta: &[f64],
    obs: &MarketObservation,
    design: &CompiledDesign,
    cost_index: usize,
    removed: &[usize],
) -> Result<Option<f64>> {
    let cost = theta[cost_index];
    if !(cost < 0.0) {
        return Ok(None);
    }
    let v = design.utilities(theta, &obs.attributes);
    if v.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::obs(&obs.agent_id, "utility", "non-finite utility"));
    }
    let reduced = log_sum(&v, |j| !removed.contains(&j));
    if reduced == f64::NEG_INFINITY {
        return Err(Error::Precondition(format!(
            "agent {}: no alternative with finite utility remains",
            obs.agent_id
        )));
    }
    Ok(Some((reduced - log_sum(&v, |_| true)) / cost))
}

pub fn compensating_variation(
    theta: &[f64],
    obs: &MarketObservation,
    design: &CompiledDesign,
    cost_index: usize,
    removed: usize,
) -> Result<Option<f64>> {
    compensating_variation_set(theta, obs, design, cost_index, &[removed])
}

/// Empirical CDF points `(value, F(value))` of the finite entries.
pub fn cv_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}
