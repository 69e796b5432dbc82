//! Market-level MNL, NL and IPDL benchmarks estimated by linear (IV)
//! regression on inverted shares.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CompiledDesign, Dataset, Feature, GroupDimension, MarketObservation, ModelSpec};
use crate::error::{Error, Result};
use crate::regression::{ols_fit, tsls_fit, InstrumentMatrix, LinearModelFit};

/// Damping applied to the log-share fixed point.
pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_TOLERANCE: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "MNL")]
    Mnl,
    #[serde(rename = "NL")]
    Nl,
    #[serde(rename = "IPDL")]
    Ipdl,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mnl => "MNL",
            ModelKind::Nl => "NL",
            ModelKind::Ipdl => "IPDL",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MNL" => Ok(ModelKind::Mnl),
            "NL" => Ok(ModelKind::Nl),
            "IPDL" => Ok(ModelKind::Ipdl),
            _ => Err(Error::Precondition(format!("unknown benchmark model {s:?}"))),
        }
    }
}

/// One column of the inverted-share regression other than the grouping terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    /// Design-row difference against the reference for a spec parameter.
    Parameter { index: usize },
    /// Constant for one inside alternative.
    Asc { alternative: usize },
}

impl Regressor {
    fn value(self, x: &[Vec<f64>], j: usize, reference: usize) -> f64 {
        match self {
            Regressor::Parameter { index } => x[j][index] - x[reference][index],
            Regressor::Asc { alternative } => f64::from(u8::from(j == alternative)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFit {
    pub model_kind: ModelKind,
    /// Names of `regressors`, aligned with `coefficients`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub regressors: Vec<Regressor>,
    /// Grouping parameters, one per dimension of `groups`.
    pub rho: Vec<f64>,
    pub rho_fixed: bool,
    pub fit: LinearModelFit,
    pub reference_alternative: String,
    pub groups: Vec<GroupDimension>,
    /// Spec parameters without variation across the regression rows.
    pub dropped_parameters: Vec<String>,
    /// Inside-alternative rows skipped because of a zero share.
    pub excluded_rows: usize,
    pub n_rows: usize,
    pub spec: ModelSpec,
    pub columns: Vec<String>,
}

impl BenchmarkFit {
    /// Coefficient by name, including `rho_<dimension>`.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Some(self.coefficients[i]);
        }
        self.groups
            .iter()
            .position(|g| format!("rho_{}", g.name) == name)
            .map(|d| self.rho[d])
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn reference_index(&self) -> Result<usize> {
        self.spec
            .alternative_index(&self.reference_alternative)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown reference {:?}", self.reference_alternative)))
    }

    /// Mean utilities `δ_j` relative to the reference (which gets 0).
    pub fn mean_utilities(&self, design: &CompiledDesign, obs: &MarketObservation) -> Result<Vec<f64>> {
        let reference = self.reference_index()?;
        let x = design.rows_for(&obs.attributes);
        Ok((0..x.len())
            .map(|j| {
                if j == reference {
                    return 0.0;
                }
                self.regressors
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(r, b)| b * r.value(&x, j, reference))
                    .sum()
            })
            .collect())
    }

    pub fn design(&self) -> Result<CompiledDesign> {
        CompiledDesign::new(&self.spec, &self.columns)
    }
}

fn has_constant(spec: &ModelSpec, alternative: &str) -> bool {
    spec.design_map
        .get(alternative)
        .is_some_and(|m| m.values().any(|f| *f == Feature::Constant))
}

/// Group member indices per dimension and alternative; ungrouped alternatives
/// form singletons.
pub fn group_members(spec: &ModelSpec, groups: &[GroupDimension]) -> Result<Vec<Vec<Vec<usize>>>> {
    groups
        .iter()
        .map(|d| {
            spec.alternatives
                .iter()
                .enumerate()
                .map(|(j, alt)| match d.group_of(alt) {
                    None => Ok(vec![j]),
                    Some(g) => g
                        .iter()
                        .map(|a| {
                            spec.alternative_index(a).ok_or_else(|| {
                                Error::InvalidSpec(format!("dimension {} names unknown alternative {a:?}", d.name))
                            })
                        })
                        .collect(),
                })
                .collect()
        })
        .collect()
}

fn within_group_log_share(shares: &[f64], members: &[usize], j: usize) -> f64 {
    let total: f64 = members.iter().map(|&k| shares[k]).sum();
    (shares[j] / total).ln()
}

/// Estimates a benchmark with free grouping parameters.
pub fn estimate_benchmark(
    ds: &Dataset,
    kind: ModelKind,
    groups: &[GroupDimension],
    instruments: &InstrumentMatrix,
) -> Result<BenchmarkFit> {
    fit_benchmark(ds, kind, groups, instruments, None)
}

/// Estimates a benchmark with the grouping parameters held at `rho`.
pub fn estimate_benchmark_fixed_rho(
    ds: &Dataset,
    kind: ModelKind,
    groups: &[GroupDimension],
    instruments: &InstrumentMatrix,
    rho: &[f64],
) -> Result<BenchmarkFit> {
    if rho.len() != groups.len() {
        return Err(Error::Precondition(format!(
            "{} fixed rho values for {} dimensions",
            rho.len(),
            groups.len()
        )));
    }
    fit_benchmark(ds, kind, groups, instruments, Some(rho))
}

fn fit_benchmark(
    ds: &Dataset,
    kind: ModelKind,
    groups: &[GroupDimension],
    instruments: &InstrumentMatrix,
    fixed_rho: Option<&[f64]>,
) -> Result<BenchmarkFit> {
    match (kind, groups.len()) {
        (ModelKind::Mnl, 0) | (ModelKind::Nl, 1) => {}
        (ModelKind::Ipdl, d) if d >= 1 => {}
        (k, d) => {
            return Err(Error::Precondition(format!("{k} cannot take {d} grouping dimensions")));
        }
    }
    let spec = ds.spec();
    let reference_name = spec
        .reference_alternative
        .clone()
        .ok_or_else(|| Error::Precondition("benchmarks need a reference alternative".into()))?;
    let reference = spec
        .alternative_index(&reference_name)
        .ok_or_else(|| Error::InvalidSpec(format!("unknown reference {reference_name:?}")))?;
    if instruments.values.len() != ds.len() {
        return Err(Error::Precondition("instrument matrix covers a different number of markets".into()));
    }
    let design = ds.design()?;
    let members = group_members(spec, groups)?;
    let control = spec.control_parameter.as_ref().and_then(|p| spec.param_index(p));
    let endogenous_params: Vec<usize> = match &spec.endogenous_column {
        Some(col) => {
            let f = Feature::Column(col.clone());
            (0..spec.n_params())
                .filter(|&p| {
                    spec.design_map
                        .values()
                        .any(|m| m.get(&spec.parameter_names[p]) == Some(&f))
                })
                .collect()
        }
        None => Vec::new(),
    };

    let mut candidates: Vec<Regressor> = (0..spec.n_params())
        .filter(|&p| Some(p) != control)
        .map(|index| Regressor::Parameter { index })
        .collect();
    for (j, alt) in spec.alternatives.iter().enumerate() {
        if j != reference && !has_constant(spec, alt) {
            candidates.push(Regressor::Asc { alternative: j });
        }
    }

    // stacked rows (t, j) over inside alternatives with positive shares
    let mut rows: Vec<(usize, usize)> = Vec::new();
    let mut excluded_rows = 0;
    let mut x_rows = Vec::with_capacity(ds.len());
    for (t, o) in ds.observations().iter().enumerate() {
        if !(o.shares[reference] > 0.0) {
            return Err(Error::obs(&o.agent_id, "share", "reference alternative has zero share"));
        }
        for j in 0..spec.alternatives.len() {
            if j == reference {
                continue;
            }
            if o.shares[j] > 0.0 {
                rows.push((t, j));
            } else {
                excluded_rows += 1;
            }
        }
        x_rows.push(design.rows_for(&o.attributes));
    }
    if rows.is_empty() {
        return Err(Error::NoObservations);
    }

    let name_of = |r: &Regressor| match *r {
        Regressor::Parameter { index } => spec.parameter_names[index].clone(),
        Regressor::Asc { alternative } => format!("asc_{}", spec.alternatives[alternative]),
    };
    let mut regressors = Vec::new();
    let mut dropped_parameters = Vec::new();
    for r in candidates {
        if rows.iter().any(|&(t, j)| r.value(&x_rows[t], j, reference) != 0.0) {
            regressors.push(r);
        } else if let Regressor::Parameter { index } = r {
            dropped_parameters.push(spec.parameter_names[index].clone());
        }
    }
    let is_endog = |r: &Regressor| matches!(r, Regressor::Parameter { index } if endogenous_params.contains(index));
    let exog: Vec<Regressor> = regressors.iter().copied().filter(|r| !is_endog(r)).collect();
    let endog: Vec<Regressor> = regressors.iter().copied().filter(|r| is_endog(r)).collect();
    let rho_names: Vec<String> = groups.iter().map(|g| format!("rho_{}", g.name)).collect();

    let n = rows.len();
    let obs = ds.observations();
    let mut y = Vec::with_capacity(n);
    let mut w = DMatrix::zeros(n, groups.len());
    for (r, &(t, j)) in rows.iter().enumerate() {
        let s = &obs[t].shares;
        let mut target = (s[j] / s[reference]).ln();
        for d in 0..groups.len() {
            let term = within_group_log_share(s, &members[d][j], j);
            w[(r, d)] = term;
            if let Some(rho) = fixed_rho {
                target -= rho[d] * term;
            }
        }
        y.push(target);
    }
    let matrix = |cols: &[Regressor]| {
        DMatrix::from_fn(n, cols.len(), |r, c| {
            let (t, j) = rows[r];
            cols[c].value(&x_rows[t], j, reference)
        })
    };
    let x_exog = matrix(&exog);
    let mut x_endog = matrix(&endog);
    let exog_names: Vec<String> = exog.iter().map(name_of).collect();
    let mut endog_names: Vec<String> = endog.iter().map(name_of).collect();
    if fixed_rho.is_none() && !groups.is_empty() {
        let k = x_endog.ncols();
        x_endog = x_endog.resize_horizontally(k + groups.len(), 0.0);
        x_endog.columns_mut(k, groups.len()).copy_from(&w);
        endog_names.extend(rho_names.iter().cloned());
    }

    let fit = if x_endog.ncols() == 0 {
        ols_fit(&y, &x_exog, &exog_names, false)?
    } else {
        let z = DMatrix::from_fn(n, instruments.n_instruments(), |r, c| {
            let (t, j) = rows[r];
            instruments.get(t, j)[c]
        });
        tsls_fit(&y, &x_exog, &exog_names, &x_endog, &endog_names, &z, &instruments.names, false)?
    };

    let mut ordered = exog.clone();
    ordered.extend(endog.iter().copied());
    let coefficients: Vec<f64> = ordered
        .iter()
        .map(|r| fit.coefficient(&name_of(r)).expect("fitted column"))
        .collect();
    let rho = match fixed_rho {
        Some(r) => r.to_vec(),
        None => rho_names.iter().map(|nm| fit.coefficient(nm).expect("fitted rho")).collect(),
    };
    Ok(BenchmarkFit {
        model_kind: kind,
        names: ordered.iter().map(name_of).collect(),
        coefficients,
        regressors: ordered,
        rho,
        rho_fixed: fixed_rho.is_some(),
        fit,
        reference_alternative: reference_name,
        groups: groups.to_vec(),
        dropped_parameters,
        excluded_rows,
        n_rows: n,
        spec: spec.clone(),
        columns: ds.columns().to_vec(),
    })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn group_log_sum(l: &[f64], members: &[usize]) -> f64 {
    let v: Vec<f64> = members.iter().map(|&k| l[k]).collect();
    log_sum_exp(&v)
}

/// Shares solving `ln(s_j/s_0) = δ_j + Σ_d ρ_d ln(s_j / Σ_{J_d(j)} s)` for
/// every non-reference `j`, by damped iteration on log shares.
///
/// `members[d][j]` lists the alternatives in `j`'s group of dimension `d`.
pub fn solve_implicit_shares(
    delta: &[f64],
    reference: usize,
    members: &[Vec<Vec<usize>>],
    rho: &[f64],
) -> Result<Vec<f64>> {
    let n = delta.len();
    let residual = |l: &[f64]| {
        (0..n)
            .filter(|&j| j != reference)
            .map(|j| {
                let nest: f64 = members
                    .iter()
                    .zip(rho)
                    .map(|(m, r)| r * (l[j] - group_log_sum(l, &m[j])))
                    .sum();
                (l[j] - l[reference] - delta[j] - nest).abs()
            })
            .fold(0.0, f64::max)
    };
    let mut d = delta.to_vec();
    d[reference] = 0.0;
    let z = log_sum_exp(&d);
    let mut l: Vec<f64> = d.iter().map(|v| v - z).collect();
    if rho.iter().all(|&r| r == 0.0) {
        return Ok(l.into_iter().map(f64::exp).collect());
    }
    let mut res = residual(&l);
    for _ in 0..FIXED_POINT_MAX_ITERATIONS {
        if res <= FIXED_POINT_TOLERANCE {
            return Ok(l.into_iter().map(f64::exp).collect());
        }
        let v: Vec<f64> = (0..n)
            .map(|j| {
                if j == reference {
                    return 0.0;
                }
                delta[j]
                    + members
                        .iter()
                        .zip(rho)
                        .map(|(m, r)| r * (l[j] - group_log_sum(&l, &m[j])))
                        .sum::<f64>()
            })
            .collect();
        let zv = log_sum_exp(&v);
        for (li, vi) in l.iter_mut().zip(&v) {
            *li = (1.0 - FIXED_POINT_DAMPING) * *li + FIXED_POINT_DAMPING * (vi - zv);
        }
        let zl = log_sum_exp(&l);
        l.iter_mut().for_each(|x| *x -= zl);
        res = residual(&l);
    }
    if res <= FIXED_POINT_TOLERANCE {
        return Ok(l.into_iter().map(f64::exp).collect());
    }
    Err(Error::NoConvergence {
        iterations: FIXED_POINT_MAX_ITERATIONS,
        residual: res,
    })
}

/// Predicted shares of one market under a fitted benchmark.
pub fn benchmark_predict_shares(fit: &BenchmarkFit, obs: &MarketObservation) -> Result<Vec<f64>> {
    predict_with_design(fit, &fit.design()?, obs)
}

pub(crate) fn predict_with_design(
    fit: &BenchmarkFit,
    design: &CompiledDesign,
    obs: &MarketObservation,
) -> Result<Vec<f64>> {
    let delta = fit.mean_utilities(design, obs)?;
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::obs(&obs.agent_id, "utility", "non-finite mean utility"));
    }
    let members = group_members(&fit.spec, &fit.groups)?;
    solve_implicit_shares(&delta, fit.reference_index()?, &members, &fit.rho)
}
