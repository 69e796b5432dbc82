use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{build_differentiation_instruments, ols_fit, InstrumentMatrix, LinearModelFit};
use crate::data::{Dataset, Feature};
use crate::error::{Error, Result};

/// First-stage regression of the endogenous column for one alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub alternative: String,
    pub fit: LinearModelFit,
}

/// Instruments declared by the spec: own-alternative excluded columns and
/// leave-one-out group averages.
pub fn declared_instruments(ds: &Dataset) -> Result<InstrumentMatrix> {
    let inst = ds.spec().instruments.clone().unwrap_or_default();
    let direct = InstrumentMatrix::from_columns(ds, &inst.excluded_columns)?;
    if inst.groups.is_empty() || inst.group_columns.is_empty() {
        return Ok(direct);
    }
    let grouped = build_differentiation_instruments(ds, &inst.groups, &inst.group_columns)?;
    direct.concat(&grouped)
}

/// Pooled per-alternative regression of the endogenous column on the
/// alternative's exogenous design columns plus instruments. The residuals are
/// attached as the spec's control column (zero for other alternatives).
///
/// Without a declared endogenous column this returns the dataset unchanged.
pub fn control_function_stage1(ds: &Dataset) -> Result<(Dataset, Vec<FirstStage>)> {
    let spec = ds.spec();
    let (Some(endog), Some(control)) = (spec.endogenous_column.clone(), spec.control_column()) else {
        return Ok((ds.clone(), Vec::new()));
    };
    let endog_idx = ds
        .column_index(&endog)
        .ok_or_else(|| Error::InvalidSpec(format!("endogenous column {endog:?} not in dataset")))?;
    let instruments = declared_instruments(ds)?;
    if instruments.n_instruments() == 0 {
        return Err(Error::UnderIdentified { instruments: 0, endogenous: 1 });
    }

    let n = ds.len();
    let n_alt = spec.alternatives.len();
    let mut residual = vec![vec![0.0; n_alt]; n];
    let mut stages = Vec::new();
    for alt in spec.endogenous_alternatives() {
        let j = spec
            .alternative_index(&alt)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown endogenous alternative {alt:?}")))?;
        let mut exog: Vec<(String, usize)> = Vec::new();
        if let Some(row) = spec.design_map.get(&alt) {
            for f in row.values() {
                if let Feature::Column(c) = f {
                    if *c == endog || *c == control || exog.iter().any(|(e, _)| e == c) {
                        continue;
                    }
                    let k = ds.column_index(c).ok_or_else(|| {
                        Error::InvalidSpec(format!("column {c:?} not in dataset"))
                    })?;
                    let first = ds.observations()[0].attributes[j][k];
                    // constant columns are absorbed by the intercept
                    if ds.observations().iter().any(|o| o.attributes[j][k] != first) {
                        exog.push((c.clone(), k));
                    }
                }
            }
        }
        let n_inst = instruments.n_instruments();
        let mut x = DMatrix::zeros(n, exog.len() + n_inst);
        let mut y = Vec::with_capacity(n);
        for (t, o) in ds.observations().iter().enumerate() {
            y.push(o.attributes[j][endog_idx]);
            for (c, (_, k)) in exog.iter().enumerate() {
                x[(t, c)] = o.attributes[j][*k];
            }
            for (c, v) in instruments.get(t, j).iter().enumerate() {
                x[(t, exog.len() + c)] = *v;
            }
        }
        let mut names: Vec<String> = exog.iter().map(|(c, _)| c.clone()).collect();
        names.extend(instruments.names.iter().cloned());
        let mut fit = ols_fit(&y, &x, &names, true)?;
        fit.used_instruments = instruments.names.clone();
        for (t, r) in fit.residuals.iter().enumerate() {
            residual[t][j] = *r;
        }
        stages.push(FirstStage { alternative: alt, fit });
    }
    Ok((ds.with_column(&control, &residual)?, stages))
}
