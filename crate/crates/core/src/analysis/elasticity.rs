use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SharePredictor;
use crate::data::{Dataset, MarketObservation};
use crate::error::{Error, Result};

fn column(ds: &Dataset, name: &str) -> Result<usize> {
    ds.column_index(name)
        .ok_or_else(|| Error::InvalidSpec(format!("column {name:?} not in dataset")))
}

fn alternative(ds: &Dataset, name: &str) -> Result<usize> {
    ds.spec()
        .alternative_index(name)
        .ok_or_else(|| Error::InvalidSpec(format!("unknown alternative {name:?}")))
}

fn perturbed(obs: &MarketObservation, j: usize, k: usize, perturbation: f64) -> MarketObservation {
    let mut o = obs.clone();
    o.attributes[j][k] *= 1.0 + perturbation;
    o
}

fn check_perturbation(perturbation: f64) -> Result<()> {
    if !(perturbation > 0.0 && perturbation.is_finite()) {
        return Err(Error::Precondition(format!("perturbation must be positive, got {perturbation}")));
    }
    Ok(())
}

/// Arc elasticities of every alternative's share with respect to column `k`
/// of alternative `target` for one agent. `None` when that price is zero;
/// entries are NaN where the base share is zero.
pub fn agent_price_elasticities(
    model: &dyn SharePredictor,
    obs: &MarketObservation,
    target: usize,
    k: usize,
    perturbation: f64,
) -> Result<Option<Vec<f64>>> {
    if obs.attributes[target][k] == 0.0 {
        return Ok(None);
    }
    let base = model.predict(obs)?;
    let after = model.predict(&perturbed(obs, target, k, perturbation))?;
    Ok(Some(
        base.iter()
            .zip(&after)
            .map(|(s0, s1)| if *s0 > 0.0 { (s1 - s0) / s0 / perturbation } else { f64::NAN })
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityColumn {
    pub target_alternative: String,
    pub column: String,
    pub perturbation: f64,
    /// Mean elasticity of each alternative's share; NaN if every agent was excluded.
    #[serde(with = "crate::float_serde::vec")]
    pub elasticity: Vec<f64>,
    /// Agents skipped because the target price is zero.
    pub excluded_zero_price: usize,
    /// Per alternative, agents skipped because the base share is zero.
    pub excluded_zero_share: Vec<usize>,
}

/// Agent-averaged arc elasticities for a `perturbation` change of one
/// alternative's price column.
pub fn price_elasticity(
    model: &dyn SharePredictor,
    ds: &Dataset,
    target_column: &str,
    target_alternative: &str,
    perturbation: f64,
) -> Result<ElasticityColumn> {
    check_perturbation(perturbation)?;
    let k = column(ds, target_column)?;
    let target = alternative(ds, target_alternative)?;
    let per_agent: Vec<Option<Vec<f64>>> = ds
        .observations()
        .par_iter()
        .map(|o| agent_price_elasticities(model, o, target, k, perturbation))
        .collect::<Result<_>>()?;
    let n_alt = ds.spec().alternatives.len();
    let mut sums = vec![0.0; n_alt];
    let mut counts = vec![0usize; n_alt];
    let mut excluded_zero_price = 0;
    let mut excluded_zero_share = vec![0usize; n_alt];
    for e in &per_agent {
        match e {
            None => excluded_zero_price += 1,
            Some(e) => {
                for j in 0..n_alt {
                    if e[j].is_nan() {
                        excluded_zero_share[j] += 1;
                    } else {
                        sums[j] += e[j];
                        counts[j] += 1;
                    }
                }
            }
        }
    }
    if excluded_zero_price == ds.len() {
        return Err(Error::Precondition(format!(
            "{target_column} of {target_alternative} is zero for every agent"
        )));
    }
    Ok(ElasticityColumn {
        target_alternative: target_alternative.to_string(),
        column: target_column.to_string(),
        perturbation,
        elasticity: sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
            .collect(),
        excluded_zero_price,
        excluded_zero_share,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversionMatrix {
    pub alternatives: Vec<String>,
    /// `matrix[j*][j]`: share of trips leaving `j*` that move to `j`; NaN
    /// off the diagonal when no agent responds to `j*`'s time.
    #[serde(with = "crate::float_serde::matrix")]
    pub matrix: Vec<Vec<f64>>,
    /// Per row, agents whose share of `j*` did not move.
    pub excluded: Vec<usize>,
}

/// Diversion ratios for a `perturbation` increase of each alternative's time
/// column (`time_columns[j]` for alternative `j`).
///
/// The trips leaving `j*` are measured as the sum of the gains elsewhere,
/// which equals `-Δŝ_j*` on the simplex and keeps every row sum at one.
pub fn diversion_ratios(
    model: &dyn SharePredictor,
    ds: &Dataset,
    time_columns: &[String],
    perturbation: f64,
) -> Result<DiversionMatrix> {
    check_perturbation(perturbation)?;
    let alternatives = ds.spec().alternatives.clone();
    let n_alt = alternatives.len();
    if time_columns.len() != n_alt {
        return Err(Error::Precondition(format!(
            "{} time columns for {n_alt} alternatives",
            time_columns.len()
        )));
    }
    let cols: Vec<usize> = time_columns.iter().map(|c| column(ds, c)).collect::<Result<_>>()?;
    let base: Vec<Vec<f64>> = ds.observations().par_iter().map(|o| model.predict(o)).collect::<Result<_>>()?;
    let mut matrix = vec![vec![0.0; n_alt]; n_alt];
    let mut excluded = vec![0usize; n_alt];
    for target in 0..n_alt {
        let rows: Vec<Option<Vec<f64>>> = ds
            .observations()
            .par_iter()
            .zip(&base)
            .map(|(o, s0)| {
                let s1 = model.predict(&perturbed(o, target, cols[target], perturbation))?;
                let delta: Vec<f64> = s1.iter().zip(s0).map(|(a, b)| a - b).collect();
                let leaving: f64 = (0..n_alt).filter(|&j| j != target).map(|j| delta[j]).sum();
                if leaving == 0.0 {
                    return Ok(None);
                }
                Ok(Some(
                    (0..n_alt)
                        .map(|j| if j == target { -1.0 } else { delta[j] / leaving })
                        .collect(),
                ))
            })
            .collect::<Result<_>>()?;
        let used: Vec<&Vec<f64>> = rows.iter().flatten().collect();
        excluded[target] = rows.len() - used.len();
        for j in 0..n_alt {
            matrix[target][j] = if j == target {
                -1.0
            } else if used.is_empty() {
                f64::NAN
            } else {
                used.iter().map(|r| r[j]).sum::<f64>() / used.len() as f64
            };
        }
    }
    Ok(DiversionMatrix {
        alternatives,
        matrix,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    pub alternatives: Vec<String>,
    pub price_column: String,
    pub perturbation: f64,
    /// Own-price elasticity per alternative.
    #[serde(with = "crate::float_serde::vec")]
    pub direct: Vec<f64>,
    /// `cross[j*][j]`: response of `j`'s share to `j*`'s price; NaN rows for
    /// alternatives whose price is zero for every agent.
    #[serde(with = "crate::float_serde::matrix")]
    pub cross: Vec<Vec<f64>>,
    pub excluded_zero_price: Vec<usize>,
    pub diversion: DiversionMatrix,
}

/// Full price-elasticity matrix plus the time-based diversion matrix.
pub fn elasticity_report(
    model: &dyn SharePredictor,
    ds: &Dataset,
    price_column: &str,
    time_columns: &[String],
    perturbation: f64,
) -> Result<ElasticityReport> {
    let alternatives = ds.spec().alternatives.clone();
    let n_alt = alternatives.len();
    let mut cross = Vec::with_capacity(n_alt);
    let mut excluded_zero_price = Vec::with_capacity(n_alt);
    for alt in &alternatives {
        match price_elasticity(model, ds, price_column, alt, perturbation) {
            Ok(c) => {
                excluded_zero_price.push(c.excluded_zero_price);
                cross.push(c.elasticity);
            }
            Err(Error::Precondition(_)) => {
                excluded_zero_price.push(ds.len());
                cross.push(vec![f64::NAN; n_alt]);
            }
            Err(e) => return Err(e),
        }
    }
    let direct = (0..n_alt).map(|j| cross[j][j]).collect();
    Ok(ElasticityReport {
        diversion: diversion_ratios(model, ds, time_columns, perturbation)?,
        alternatives,
        price_column: price_column.to_string(),
        perturbation,
        direct,
        cross,
        excluded_zero_price,
    })
}
