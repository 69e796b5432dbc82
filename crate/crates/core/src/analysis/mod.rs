//! Share prediction and the evaluation layer built on it: accuracy metrics,
//! arc elasticities, diversion ratios, welfare measures and parameter
//! transfer to unseen agents.

mod elasticity;
mod knn;
mod welfare;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{predict_with_design, BenchmarkFit};
use crate::data::{CompiledDesign, Dataset, MarketObservation};
use crate::error::{Error, Result};
use crate::estimator::EstimationResult;

pub use elasticity::{
    agent_price_elasticities, diversion_ratios, elasticity_report, price_elasticity, DiversionMatrix,
    ElasticityColumn, ElasticityReport,
};
pub use knn::knn_transfer;
pub use welfare::{
    compensating_variation, compensating_variation_set, cv_cdf, value_of_time, vot_by_segment, SegmentVot,
};

/// Anything that maps a market observation to predicted shares.
pub trait SharePredictor: Sync {
    fn predict(&self, obs: &MarketObservation) -> Result<Vec<f64>>;
}

/// Softmax of `θᵀX_j` over the alternatives of `obs`.
pub fn predict_shares(theta: &[f64], obs: &MarketObservation, design: &CompiledDesign) -> Result<Vec<f64>> {
    if theta.len() != design.n_params() {
        return Err(Error::Precondition(format!(
            "theta has {} entries, the spec {}",
            theta.len(),
            design.n_params()
        )));
    }
    let v = design.utilities(theta, &obs.attributes);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::obs(&obs.agent_id, "utility", "non-finite utility"));
    }
    Ok(crate::synthetic::softmax(&v))
}

/// Agent-specific tastes keyed by agent id.
#[derive(Debug, Clone)]
pub struct AgentTastes {
    design: CompiledDesign,
    thetas: HashMap<String, Vec<f64>>,
}

impl AgentTastes {
    pub fn new(design: CompiledDesign, thetas: HashMap<String, Vec<f64>>) -> Self {
        Self { design, thetas }
    }

    /// Tastes of every estimated agent; infeasible agents fall back to their
    /// cluster prior. `ds` must be the (augmented) estimation dataset.
    pub fn from_estimation(result: &EstimationResult, ds: &Dataset) -> Result<Self> {
        let thetas = result
            .agent_params
            .iter()
            .map(|a| (a.agent_id.clone(), result.theta_or_prior(a)))
            .collect();
        Ok(Self::new(ds.design()?, thetas))
    }

    /// Tastes for agents outside the training set, e.g. from [`knn_transfer`].
    pub fn with_agents(mut self, agents: &[MarketObservation], thetas: Vec<Vec<f64>>) -> Self {
        for (o, t) in agents.iter().zip(thetas) {
            self.thetas.insert(o.agent_id.clone(), t);
        }
        self
    }

    pub fn theta(&self, agent_id: &str) -> Option<&[f64]> {
        self.thetas.get(agent_id).map(Vec::as_slice)
    }

    pub fn design(&self) -> &CompiledDesign {
        &self.design
    }
}

impl SharePredictor for AgentTastes {
    fn predict(&self, obs: &MarketObservation) -> Result<Vec<f64>> {
        let theta = self
            .theta(&obs.agent_id)
            .ok_or_else(|| Error::Precondition(format!("no tastes for agent {:?}", obs.agent_id)))?;
        predict_shares(theta, obs, &self.design)
    }
}

/// A fitted benchmark with its design compiled once.
#[derive(Debug, Clone)]
pub struct BenchmarkPredictor {
    fit: BenchmarkFit,
    design: CompiledDesign,
}

impl BenchmarkPredictor {
    pub fn new(fit: BenchmarkFit) -> Result<Self> {
        let design = fit.design()?;
        Ok(Self { fit, design })
    }

    pub fn fit(&self) -> &BenchmarkFit {
        &self.fit
    }
}

impl SharePredictor for BenchmarkPredictor {
    fn predict(&self, obs: &MarketObservation) -> Result<Vec<f64>> {
        predict_with_design(&self.fit, &self.design, obs)
    }
}

/// Predictions for every observation, in dataset order.
pub fn predict_all(model: &dyn SharePredictor, observations: &[MarketObservation]) -> Result<Vec<Vec<f64>>> {
    observations.par_iter().map(|o| model.predict(o)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub mae: f64,
    pub overall_accuracy: f64,
    /// `None` when there are no more agents than `k_dof`.
    pub adjusted_r_square: Option<f64>,
    pub per_alternative_mae: Vec<f64>,
    pub n_agents: usize,
    #[serde(rename = "K_dof")]
    pub k_dof: usize,
}

/// MAE, overall accuracy and adjusted R² against the uniform-share null model.
pub fn accuracy_metrics(predicted: &[Vec<f64>], observed: &[Vec<f64>], k_dof: usize) -> Result<PredictionReport> {
    let t = observed.len();
    if t == 0 {
        return Err(Error::NoObservations);
    }
    if predicted.len() != t {
        return Err(Error::Precondition(format!("{} predictions for {t} agents", predicted.len())));
    }
    let n_alt = observed[0].len();
    let mut abs_by_alt = vec![0.0; n_alt];
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (p, s) in predicted.iter().zip(observed) {
        if p.len() != n_alt || s.len() != n_alt {
            return Err(Error::Precondition("agents have different numbers of alternatives".into()));
        }
        let null = 1.0 / n_alt as f64;
        for j in 0..n_alt {
            abs_by_alt[j] += (p[j] - s[j]).abs();
            ss_res += (p[j] - s[j]).powi(2);
            ss_tot += (s[j] - null).powi(2);
        }
    }
    let mae = abs_by_alt.iter().sum::<f64>() / (t * n_alt) as f64;
    let adjusted_r_square = (t > k_dof).then(|| {
        1.0 - (ss_res / (t - k_dof) as f64) / (ss_tot / (t as f64 - 1.0))
    });
    // on the simplex Σ_j min(ŝ_j, s_j) = 1 − ½ Σ_j |ŝ_j − s_j|, which keeps
    // OA at exactly 1 only for exact predictions
    let total_abs: f64 = abs_by_alt.iter().sum();
    Ok(PredictionReport {
        mae,
        overall_accuracy: 1.0 - 0.5 * total_abs / t as f64,
        adjusted_r_square,
        per_alternative_mae: abs_by_alt.iter().map(|a| a / t as f64).collect(),
        n_agents: t,
        k_dof,
    })
}

/// Predicts every observation and scores it.
pub fn evaluate(model: &dyn SharePredictor, observations: &[MarketObservation], k_dof: usize) -> Result<PredictionReport> {
    let predicted = predict_all(model, observations)?;
    let observed: Vec<Vec<f64>> = observations.iter().map(|o| o.shares.clone()).collect();
    accuracy_metrics(&predicted, &observed, k_dof)
}

#[cfg(test)]
mod tests;
