use std::path::{Path, PathBuf};

use glamlogit::benchmarks::ModelKind;
use glamlogit::data::GroupDimension;
use glamlogit::estimator::EstimatorConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GLAMLOGIT_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "glamlogit_out";

/// Every setting a command may read. Loaded from an optional JSON file, then
/// overlaid with command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Estimation result JSON consumed by evaluate, analyze and optimize.
    pub result: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Fitted benchmark JSON files to score next to GLAM.
    pub benchmarks: Option<Vec<PathBuf>>,
    pub threads: Option<usize>,

    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub max_iterations: Option<usize>,
    pub convergence_threshold: Option<f64>,
    pub max_tol_doublings: Option<u32>,
    pub kmeans_restarts: Option<usize>,
    pub bootstrap_resamples: Option<usize>,

    pub model: Option<ModelKind>,
    pub groups: Option<Vec<GroupDimension>>,
    /// Columns averaged over benchmark groups to instrument the group terms.
    pub instrument_columns: Option<Vec<String>>,

    /// Largest K of the KNN sweep.
    pub knn_k: Option<usize>,
    pub perturbation: Option<f64>,
    pub price_column: Option<String>,
    pub time_columns: Option<Vec<String>>,
    pub time_param: Option<String>,
    pub cost_param: Option<String>,
    pub removed_alternative: Option<String>,

    pub transit_alternative: Option<String>,
    pub fare_column: Option<String>,
    #[serde(rename = "O")]
    pub max_regions: Option<usize>,
    #[serde(rename = "B", with = "opt_float")]
    pub budget: Option<f64>,
    pub discount_rate: Option<f64>,
    pub demand_weighted_loss: Option<bool>,
    pub heuristic: Option<bool>,
}

/// `B` may be `"inf"` in JSON.
mod opt_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if !x.is_finite() => Repr::Text(x.to_string()).serialize(s),
            Some(x) => Repr::Number(*x).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Number(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    /// Values set in `self` win over those in `base`.
    pub fn overlay(self, base: RunConfig) -> RunConfig {
        let (Ok(Value::Object(top)), Ok(Value::Object(mut merged))) =
            (serde_json::to_value(&self), serde_json::to_value(&base))
        else {
            unreachable!("RunConfig serialises to an object");
        };
        for (k, v) in top {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
        serde_json::from_value(Value::Object(merged)).expect("merged config has the same schema")
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::validation(format!("missing required setting `{name}`")))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn estimator(&self) -> EstimatorConfig {
        let d = EstimatorConfig::default();
        EstimatorConfig {
            n_clusters: self.m.unwrap_or(d.n_clusters),
            tol: self.tol.unwrap_or(d.tol),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            convergence_threshold: self.convergence_threshold.unwrap_or(d.convergence_threshold),
            seed: self.seed.unwrap_or(d.seed),
            max_tol_doublings: self.max_tol_doublings.unwrap_or(d.max_tol_doublings),
            bootstrap_resamples: self.bootstrap_resamples.unwrap_or(d.bootstrap_resamples),
            kmeans_restarts: self.kmeans_restarts.unwrap_or(d.kmeans_restarts),
        }
    }

    pub fn check_ranges(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::validation(format!("{what} out of range")));
        if self.threads == Some(0) {
            return bad("threads");
        }
        if self.knn_k == Some(0) {
            return bad("knn_k");
        }
        if self.perturbation.is_some_and(|p| !(p > 0.0 && p.is_finite())) {
            return bad("perturbation");
        }
        if self.discount_rate.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
            return bad("discount_rate");
        }
        if self.budget.is_some_and(|b| !(b >= 0.0)) {
            return bad("B");
        }
        Ok(())
    }
}
