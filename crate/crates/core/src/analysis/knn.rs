use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::{Dataset, MarketObservation};
use crate::error::{Error, Result};
use crate::estimator::EstimationResult;

fn distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Tastes for unseen agents: the unweighted mean of the `k` nearest trained
/// agents of the same segment by Euclidean origin/destination distance, ties
/// broken by agent id.
pub fn knn_transfer(
    trained: &EstimationResult,
    train_ds: &Dataset,
    new_agents: &[MarketObservation],
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Precondition("K must be at least 1".into()));
    }
    let mut by_segment: HashMap<&str, Vec<(&str, [f64; 4], Vec<f64>)>> = HashMap::new();
    for a in &trained.agent_params {
        let obs = train_ds
            .observation(&a.agent_id)
            .ok_or_else(|| Error::Precondition(format!("trained agent {:?} not in training data", a.agent_id)))?;
        by_segment
            .entry(obs.segment.as_str())
            .or_default()
            .push((a.agent_id.as_str(), obs.od_features(), trained.theta_or_prior(a)));
    }
    new_agents
        .par_iter()
        .map(|o| {
            let pool = by_segment
                .get(o.segment.as_str())
                .ok_or_else(|| Error::UnseenSegment(o.segment.clone()))?;
            if pool.len() < k {
                return Err(Error::Precondition(format!(
                    "segment {:?} has {} trained agents, fewer than K = {k}",
                    o.segment,
                    pool.len()
                )));
            }
            let target = o.od_features();
            let mut ranked: Vec<(f64, &str, &Vec<f64>)> =
                pool.iter().map(|(id, od, t)| (distance(&target, od), *id, t)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            let mut mean = vec![0.0; trained.parameter_names.len()];
            for (_, _, t) in &ranked[..k] {
                for (m, v) in mean.iter_mut().zip(t.iter()) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= k as f64);
            Ok(mean)
        })
        .collect()
}
