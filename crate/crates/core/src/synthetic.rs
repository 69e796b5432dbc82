//! Forward-simulated market data with exact logit shares, for recovery
//! experiments and demos.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Feature, InstrumentSpec, MarketObservation, ModelSpec};
use crate::error::Result;

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn renormalise(mut s: Vec<f64>) -> Vec<f64> {
    let total: f64 = s.iter().sum();
    for x in s.iter_mut() {
        *x /= total;
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasteMarketsConfig {
    pub n_agents: usize,
    /// Alternatives `alt0..`, `alt0` being the reference.
    pub n_alternatives: usize,
    /// Planted taste vectors over `[time, cost, asc_alt1, ...]`; agent `t`
    /// receives `tastes[t % len]`.
    pub tastes: Vec<Vec<f64>>,
    pub with_asc: bool,
    pub attribute_range: (f64, f64),
    pub n_segments: usize,
    pub n_regions: usize,
    pub seed: u64,
}

impl Default for TasteMarketsConfig {
    fn default() -> Self {
        Self {
            n_agents: 200,
            n_alternatives: 6,
            tastes: vec![vec![-0.3, -0.8], vec![-0.9, -0.1]],
            with_asc: false,
            attribute_range: (0.0, 30.0),
            n_segments: 1,
            n_regions: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarkets {
    pub dataset: Dataset,
    /// Planted taste index per agent.
    pub labels: Vec<usize>,
}

pub fn alternative_name(j: usize) -> String {
    format!("alt{j}")
}

/// Spec with generic `time`/`cost` columns on every alternative and optional
/// constants on all but the reference `alt0`.
pub fn taste_spec(n_alternatives: usize, with_asc: bool) -> ModelSpec {
    let alternatives: Vec<String> = (0..n_alternatives).map(alternative_name).collect();
    let mut parameter_names = vec!["time".to_string(), "cost".to_string()];
    let mut design_map = BTreeMap::new();
    for (j, alt) in alternatives.iter().enumerate() {
        let mut row = BTreeMap::new();
        row.insert("time".to_string(), Feature::Column("time".into()));
        row.insert("cost".to_string(), Feature::Column("cost".into()));
        if with_asc && j > 0 {
            let p = format!("asc_{alt}");
            parameter_names.push(p.clone());
            row.insert(p, Feature::Constant);
        }
        design_map.insert(alt.clone(), row);
    }
    ModelSpec {
        parameter_names,
        bounds: BTreeMap::new(),
        alternatives,
        design_map,
        reference_alternative: Some(alternative_name(0)),
        endogenous_column: None,
        endogenous_alternatives: None,
        control_parameter: None,
        column_scale: BTreeMap::new(),
        instruments: None,
    }
}

/// Markets whose shares are the exact softmax of the planted tastes.
pub fn taste_markets(cfg: &TasteMarketsConfig) -> Result<SyntheticMarkets> {
    let spec = taste_spec(cfg.n_alternatives, cfg.with_asc);
    let columns = vec!["time".to_string(), "cost".to_string()];
    let design = crate::data::CompiledDesign::new(&spec, &columns)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.attribute_range;
    let mut obs = Vec::with_capacity(cfg.n_agents);
    let mut labels = Vec::with_capacity(cfg.n_agents);
    for t in 0..cfg.n_agents {
        let label = t % cfg.tastes.len();
        let attributes: Vec<Vec<f64>> = (0..cfg.n_alternatives)
            .map(|_| vec![rng.random_range(lo..hi), rng.random_range(lo..hi)])
            .collect();
        let shares = renormalise(softmax(&design.utilities(&cfg.tastes[label], &attributes)));
        obs.push(MarketObservation {
            agent_id: format!("{t:06}"),
            segment: format!("s{}", t % cfg.n_segments.max(1)),
            region_id: format!("r{:02}", t % cfg.n_regions.max(1)),
            origin_xy: [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)],
            destination_xy: [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)],
            attributes,
            shares,
            demand: rng.random_range(10.0..100.0),
        });
        labels.push(label);
    }
    Ok(SyntheticMarkets {
        dataset: Dataset::new(spec, columns, obs, None)?,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndogenousMarketsConfig {
    pub n_markets: usize,
    /// Inside alternatives `alt1..`; `alt0` is the outside good.
    pub n_inside: usize,
    /// `[time, cost, asc]`, the constant shared by all inside alternatives.
    pub theta: [f64; 3],
    /// Loading of the price shock on the structural error.
    pub lambda: f64,
    /// Standard deviation of the structural error part unrelated to price.
    pub xi_noise: f64,
    pub seed: u64,
}

impl Default for EndogenousMarketsConfig {
    fn default() -> Self {
        Self {
            n_markets: 5000,
            n_inside: 4,
            theta: [-0.5, -1.0, 1.0],
            lambda: 1.0,
            xi_noise: 0.3,
            seed: 7,
        }
    }
}

/// Spec for [`endogenous_markets`]; `control` adds the residual term `phi`.
pub fn endogenous_spec(n_inside: usize, control: bool) -> ModelSpec {
    let alternatives: Vec<String> = (0..=n_inside).map(alternative_name).collect();
    let mut parameter_names: Vec<String> = ["time", "cost", "asc"].iter().map(|s| s.to_string()).collect();
    if control {
        parameter_names.push("phi".into());
    }
    let mut design_map = BTreeMap::new();
    for (j, alt) in alternatives.iter().enumerate() {
        let mut row = BTreeMap::new();
        row.insert("time".to_string(), Feature::Column("time".into()));
        if j > 0 {
            row.insert("cost".to_string(), Feature::Column("cost".into()));
            row.insert("asc".to_string(), Feature::Constant);
            if control {
                row.insert("phi".to_string(), Feature::Column("cost_residual".into()));
            }
        }
        design_map.insert(alt.clone(), row);
    }
    ModelSpec {
        parameter_names,
        bounds: BTreeMap::new(),
        alternatives: alternatives.clone(),
        design_map,
        reference_alternative: Some(alternative_name(0)),
        endogenous_column: control.then(|| "cost".to_string()),
        endogenous_alternatives: control.then(|| alternatives[1..].to_vec()),
        control_parameter: control.then(|| "phi".to_string()),
        column_scale: BTreeMap::new(),
        instruments: Some(InstrumentSpec {
            excluded_columns: vec!["shifter".into()],
            groups: Vec::new(),
            group_columns: Vec::new(),
        }),
    }
}

/// Markets with `cost_j = 2 + z_j + v_j` and structural error
/// `ξ_j = λ v_j + e_j` entering utility; `z` is the excluded shifter.
pub fn endogenous_markets(cfg: &EndogenousMarketsConfig, control: bool) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [bt, bc, asc] = cfg.theta;
    let mut obs = Vec::with_capacity(cfg.n_markets);
    for t in 0..cfg.n_markets {
        let time0 = rng.random_range(0.5..2.0);
        let mut attributes = vec![vec![time0, 0.0, 0.0]];
        let mut v = vec![bt * time0];
        for _ in 0..cfg.n_inside {
            let z: f64 = StandardNormal.sample(&mut rng);
            let shock: f64 = StandardNormal.sample(&mut rng);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let time = rng.random_range(0.5..2.0);
            let cost = 2.0 + z + shock;
            attributes.push(vec![time, cost, z]);
            v.push(bt * time + bc * cost + asc + cfg.lambda * shock + cfg.xi_noise * noise);
        }
        obs.push(MarketObservation {
            agent_id: format!("m{t:06}"),
            segment: "all".into(),
            region_id: "r".into(),
            origin_xy: [0.0; 2],
            destination_xy: [0.0; 2],
            attributes,
            shares: renormalise(softmax(&v)),
            demand: 1.0,
        });
    }
    Dataset::new(
        endogenous_spec(cfg.n_inside, control),
        vec!["time".into(), "cost".into(), "shifter".into()],
        obs,
        None,
    )
}
