//! Fixed-point estimation of agent-specific tastes with cluster priors.

mod bootstrap;
mod kmeans;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::qp::{relax_tolerance, solve_projection_qp, AgentGeometry, QPStatus};
use crate::regression::{control_function_stage1, FirstStage};

pub use bootstrap::{bootstrap_standard_errors, BootstrapReport};
pub use kmeans::{
    align_labels, kmeans_cluster, kmeans_with, lloyd, KMeansResult, DEFAULT_RESTARTS, MAX_LLOYD_ITERATIONS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Number of taste clusters.
    #[serde(rename = "M")]
    pub n_clusters: usize,
    pub tol: f64,
    pub max_iterations: usize,
    /// Relative prior change below which iteration stops.
    pub convergence_threshold: f64,
    pub seed: u64,
    pub max_tol_doublings: u32,
    pub bootstrap_resamples: usize,
    /// k-means++ restarts per reclassification.
    pub kmeans_restarts: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n_clusters: 1,
            tol: 0.5,
            max_iterations: 50,
            convergence_threshold: 0.005,
            seed: 0,
            max_tol_doublings: 3,
            bootstrap_resamples: 0,
            kmeans_restarts: DEFAULT_RESTARTS,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::Precondition("M must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Precondition(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(Error::Precondition("convergence_threshold must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Precondition("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParameters {
    pub agent_id: String,
    /// `None` when the agent's subproblem is infeasible at every tried tolerance.
    pub theta: Option<Vec<f64>>,
    pub cluster: usize,
    pub status: QPStatus,
    #[serde(with = "crate::float_serde")]
    pub tol_used: f64,
    /// `‖θ_t − θ_0^m‖²` in the final iteration.
    #[serde(with = "crate::float_serde")]
    pub objective: f64,
    #[serde(with = "crate::float_serde")]
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Priors after this iteration's update.
    pub priors: Vec<Vec<f64>>,
    pub cluster_sizes: Vec<usize>,
    #[serde(with = "crate::float_serde")]
    pub mean_objective: f64,
    #[serde(with = "crate::float_serde")]
    pub max_relative_change: f64,
    #[serde(with = "crate::float_serde")]
    pub kmeans_inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub parameter_names: Vec<String>,
    pub priors: Vec<Vec<f64>>,
    /// In dataset order.
    pub agent_params: Vec<AgentParameters>,
    pub trace: Vec<IterationTrace>,
    pub converged: bool,
    pub iterations_run: usize,
    pub n_infeasible: usize,
    pub n_relaxed: usize,
    #[serde(default)]
    pub bootstrap_se: Option<Vec<Vec<f64>>>,
    pub config: EstimatorConfig,
}

impl EstimationResult {
    pub fn agent(&self, agent_id: &str) -> Option<&AgentParameters> {
        self.agent_params.iter().find(|a| a.agent_id == agent_id)
    }

    /// The agent's own θ, or its cluster prior when it has none.
    pub fn theta_or_prior(&self, a: &AgentParameters) -> Vec<f64> {
        a.theta.clone().unwrap_or_else(|| self.priors[a.cluster].clone())
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|p| p == name)
    }

    pub fn cluster_members(&self, m: usize) -> Vec<&str> {
        self.agent_params
            .iter()
            .filter(|a| a.cluster == m)
            .map(|a| a.agent_id.as_str())
            .collect()
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Precondition(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `agent_id, cluster, status, tol_used, objective, <parameters...>`.
    pub fn write_agent_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["agent_id".to_string(), "cluster".into(), "status".into(), "tol_used".into(), "objective".into()];
        header.extend(self.parameter_names.iter().cloned());
        out.write_record(&header)?;
        for a in &self.agent_params {
            let status = serde_json::to_value(a.status)?.as_str().unwrap_or_default().to_string();
            let mut rec = vec![a.agent_id.clone(), a.cluster.to_string(), status, a.tol_used.to_string(), a.objective.to_string()];
            match &a.theta {
                Some(t) => rec.extend(t.iter().map(f64::to_string)),
                None => rec.extend(std::iter::repeat_n(String::new(), self.parameter_names.len())),
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per (iteration, cluster) with the updated prior.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "iteration".to_string(),
            "cluster".into(),
            "size".into(),
            "mean_objective".into(),
            "max_relative_change".into(),
        ];
        header.extend(self.parameter_names.iter().cloned());
        out.write_record(&header)?;
        for t in &self.trace {
            for (m, prior) in t.priors.iter().enumerate() {
                let mut rec = vec![
                    t.iteration.to_string(),
                    m.to_string(),
                    t.cluster_sizes[m].to_string(),
                    t.mean_objective.to_string(),
                    t.max_relative_change.to_string(),
                ];
                rec.extend(prior.iter().map(f64::to_string));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `i/(i+1)·prior + 1/(i+1)·y`.
pub fn msa_update(prior: &[f64], y: &[f64], i: usize) -> Vec<f64> {
    let w = i as f64 / (i as f64 + 1.0);
    let v = 1.0 / (i as f64 + 1.0);
    prior.iter().zip(y).map(|(p, y)| w * p + v * y).collect()
}

/// `‖new − old‖∞ / ‖old‖∞`, with `0/0 = 0`.
pub fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let num = old.iter().zip(new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let den = old.iter().map(|a| a.abs()).fold(0.0, f64::max);
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn iteration_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

/// Runs the prior/projection/reclassification fixed point on `ds`.
///
/// The dataset must already carry the control residual column when the spec
/// declares an endogenous column (see [`fit_glam`]).
pub fn estimate_glam(ds: &Dataset, cfg: &EstimatorConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let spec = ds.spec();
    let design = ds.design()?;
    let bounds = spec.bound_pairs();
    let k = spec.n_params();
    let m = cfg.n_clusters;
    let n = ds.len();
    if n == 0 {
        return Err(Error::NoObservations);
    }

    let geometry: Vec<AgentGeometry> = ds
        .observations()
        .par_iter()
        .map(|o| AgentGeometry::new(o, &design, &bounds))
        .collect();

    // feasibility does not depend on the prior: fix each agent's tolerance once
    let zero = vec![0.0; k];
    let initial: Vec<_> = geometry
        .par_iter()
        .map(|g| relax_tolerance(g, &zero, cfg.tol, cfg.max_tol_doublings))
        .collect();
    let status: Vec<QPStatus> = initial.iter().map(|s| s.status).collect();
    let tol_used: Vec<f64> = initial.iter().map(|s| s.tol_used).collect();
    let feasible: Vec<usize> = (0..n).filter(|&t| status[t] != QPStatus::Infeasible).collect();
    if feasible.is_empty() {
        return Err(Error::Estimation("every agent subproblem is infeasible".into()));
    }
    if m > feasible.len() {
        return Err(Error::Estimation(format!(
            "M = {m} exceeds the number of feasible agents ({})",
            feasible.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let mut priors = vec![vec![0.0; k]; m];
    let mut theta: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut objective = vec![f64::NAN; n];
    let mut kkt = vec![f64::NAN; n];
    let mut trace = Vec::new();
    let mut converged = false;

    for i in 0..cfg.max_iterations {
        let sols: Vec<_> = (0..n)
            .into_par_iter()
            .map(|t| {
                if status[t] == QPStatus::Infeasible {
                    None
                } else {
                    Some(solve_projection_qp(&geometry[t].subproblem(&priors[assign[t]], tol_used[t])))
                }
            })
            .collect();
        for (t, sol) in sols.into_iter().enumerate() {
            match sol {
                Some(s) if s.is_feasible() => {
                    objective[t] = s.objective;
                    kkt[t] = s.kkt_residual;
                    theta[t] = Some(s.theta);
                }
                Some(s) => {
                    objective[t] = f64::NAN;
                    kkt[t] = s.kkt_residual;
                }
                None => {}
            }
        }

        let members: Vec<usize> = feasible.iter().copied().filter(|&t| theta[t].is_some()).collect();
        let points: Vec<Vec<f64>> = members.iter().map(|&t| theta[t].clone().unwrap()).collect();
        let warm = (i > 0).then_some(priors.as_slice());
        let km = kmeans_with(&points, m, iteration_seed(cfg.seed, i), cfg.kmeans_restarts, warm)?;
        let perm = align_labels(&km.centroids, &priors);
        let mut relabel = vec![0; m];
        for (target, &c) in perm.iter().enumerate() {
            relabel[c] = target;
        }
        for (idx, &t) in members.iter().enumerate() {
            assign[t] = relabel[km.assignments[idx]];
        }

        // cluster means in agent order
        let mut sums = vec![vec![0.0; k]; m];
        let mut sizes = vec![0usize; m];
        for &t in &members {
            let c = assign[t];
            sizes[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(theta[t].as_ref().unwrap()) {
                *s += v;
            }
        }
        let mut max_change: f64 = 0.0;
        for c in 0..m {
            let y: Vec<f64> = if sizes[c] > 0 {
                sums[c].iter().map(|s| s / sizes[c] as f64).collect()
            } else {
                priors[c].clone()
            };
            let updated = msa_update(&priors[c], &y, i);
            max_change = max_change.max(relative_change(&priors[c], &updated));
            priors[c] = updated;
        }
        let mean_objective = if members.is_empty() {
            f64::NAN
        } else {
            members.iter().map(|&t| objective[t]).sum::<f64>() / members.len() as f64
        };
        trace.push(IterationTrace {
            iteration: i,
            priors: priors.clone(),
            cluster_sizes: sizes,
            mean_objective,
            max_relative_change: max_change,
            kmeans_inertia: km.inertia,
        });
        if i >= 1 && max_change < cfg.convergence_threshold {
            converged = true;
            break;
        }
    }

    let agent_params: Vec<AgentParameters> = ds
        .observations()
        .iter()
        .enumerate()
        .map(|(t, o)| AgentParameters {
            agent_id: o.agent_id.clone(),
            theta: theta[t].clone(),
            cluster: assign[t],
            status: if theta[t].is_some() { status[t] } else { QPStatus::Infeasible },
            tol_used: tol_used[t],
            objective: objective[t],
            kkt_residual: kkt[t],
        })
        .collect();
    let n_infeasible = agent_params.iter().filter(|a| a.status == QPStatus::Infeasible).count();
    let n_relaxed = agent_params.iter().filter(|a| a.status == QPStatus::Relaxed).count();
    Ok(EstimationResult {
        parameter_names: spec.parameter_names.clone(),
        priors,
        agent_params,
        iterations_run: trace.len(),
        trace,
        converged,
        n_infeasible,
        n_relaxed,
        bootstrap_se: None,
        config: cfg.clone(),
    })
}

/// Control-function stage 1 (when the spec declares endogeneity) followed by
/// [`estimate_glam`]. Returns the augmented dataset and first-stage fits too.
pub fn fit_glam(ds: &Dataset, cfg: &EstimatorConfig) -> Result<(Dataset, Vec<FirstStage>, EstimationResult)> {
    let (augmented, stages) = control_function_stage1(ds)?;
    let result = estimate_glam(&augmented, cfg)?;
    Ok((augmented, stages, result))
}
