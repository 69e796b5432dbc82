use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{align_labels, fit_glam, EstimatorConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    /// Full-sample priors that resampled priors are aligned to.
    pub reference_priors: Vec<Vec<f64>>,
    /// Per cluster, per parameter sample standard deviation.
    pub standard_errors: Vec<Vec<f64>>,
    pub successful: usize,
    /// `(resample index, error message)` for skipped resamples.
    pub failures: Vec<(usize, String)>,
}

fn resample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ds.len();
    let obs = (0..n)
        .map(|draw| {
            let mut o = ds.observations()[rng.random_range(0..n)].clone();
            o.agent_id = format!("{}#{draw}", o.agent_id);
            o
        })
        .collect();
    ds.with_observations(obs)
}

/// Agent-level bootstrap of the cluster priors. Each resample re-runs the
/// first stage and the full estimation; priors are matched to the
/// full-sample priors by nearest-centroid alignment.
pub fn bootstrap_standard_errors(ds: &Dataset, cfg: &EstimatorConfig) -> Result<BootstrapReport> {
    if cfg.bootstrap_resamples < 2 {
        return Err(Error::Precondition(format!(
            "bootstrap needs at least 2 resamples, got {}",
            cfg.bootstrap_resamples
        )));
    }
    let (_, _, base) = fit_glam(ds, cfg)?;
    let reference = base.priors.clone();
    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xB007_5712_AB5E_ED00);
    let seeds: Vec<u64> = (0..cfg.bootstrap_resamples).map(|_| seeder.random()).collect();
    let runs: Vec<Result<Vec<Vec<f64>>>> = seeds
        .par_iter()
        .map(|&s| {
            let sample = resample(ds, s)?;
            let (_, _, r) = fit_glam(&sample, cfg)?;
            let perm = align_labels(&r.priors, &reference);
            Ok(perm.iter().map(|&c| r.priors[c].clone()).collect())
        })
        .collect();

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (b, r) in runs.into_iter().enumerate() {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => failures.push((b, e.to_string())),
        }
    }
    if 2 * failures.len() > cfg.bootstrap_resamples || ok.len() < 2 {
        return Err(Error::Estimation(format!(
            "{} of {} bootstrap resamples failed",
            failures.len(),
            cfg.bootstrap_resamples
        )));
    }
    let m = reference.len();
    let k = reference.first().map_or(0, Vec::len);
    let nb = ok.len() as f64;
    let mut se = vec![vec![0.0; k]; m];
    for c in 0..m {
        for j in 0..k {
            let mean = ok.iter().map(|p| p[c][j]).sum::<f64>() / nb;
            let var = ok.iter().map(|p| (p[c][j] - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            se[c][j] = var.sqrt();
        }
    }
    Ok(BootstrapReport {
        reference_priors: reference,
        standard_errors: se,
        successful: ok.len(),
        failures,
    })
}
