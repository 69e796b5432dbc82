use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupDimension};
use crate::error::{Error, Result};

/// Instrument values indexed `[observation][alternative][instrument]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl InstrumentMatrix {
    pub fn n_instruments(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, obs: usize, alternative: usize) -> &[f64] {
        &self.values[obs][alternative]
    }

    /// Column-wise concatenation of two instrument sets over the same markets.
    pub fn concat(&self, other: &InstrumentMatrix) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::Precondition("instrument sets cover different markets".into()));
        }
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.iter().chain(y).copied().collect())
                    .collect()
            })
            .collect();
        let mut warnings = self.warnings.clone();
        warnings.extend(other.warnings.iter().cloned());
        Ok(Self { names, values, warnings })
    }

    /// Own-alternative values of plain attribute columns.
    pub fn from_columns(ds: &Dataset, columns: &[String]) -> Result<Self> {
        let idx = columns
            .iter()
            .map(|c| {
                ds.column_index(c)
                    .ok_or_else(|| Error::InvalidSpec(format!("instrument column {c:?} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = ds
            .observations()
            .iter()
            .map(|o| {
                o.attributes
                    .iter()
                    .map(|row| idx.iter().map(|&k| row[k]).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            names: columns.to_vec(),
            values,
            warnings: Vec::new(),
        })
    }
}

/// For every market, alternative, dimension and column: the mean of that
/// column over the other members of the alternative's group.
///
/// An alternative alone in its group (or ungrouped) gets 0 and a warning.
pub fn build_differentiation_instruments(
    ds: &Dataset,
    dimensions: &[GroupDimension],
    columns: &[String],
) -> Result<InstrumentMatrix> {
    let spec = ds.spec();
    let col_idx = columns
        .iter()
        .map(|c| {
            ds.column_index(c)
                .ok_or_else(|| Error::InvalidSpec(format!("instrument column {c:?} not in dataset")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut names = Vec::new();
    let mut warnings = Vec::new();
    // others[d][j] = indices of the other members of j's group in dimension d
    let mut others: Vec<Vec<Vec<usize>>> = Vec::new();
    for d in dimensions {
        let mut per_alt = Vec::with_capacity(spec.alternatives.len());
        for alt in &spec.alternatives {
            let members: Vec<usize> = d
                .group_of(alt)
                .unwrap_or(&[])
                .iter()
                .filter(|a| *a != alt)
                .map(|a| {
                    spec.alternative_index(a).ok_or_else(|| {
                        Error::InvalidSpec(format!("dimension {} names unknown alternative {a:?}", d.name))
                    })
                })
                .collect::<Result<_>>()?;
            if members.is_empty() {
                warnings.push(format!(
                    "alternative {alt} has no other members in dimension {}; instrument set to 0",
                    d.name
                ));
            }
            per_alt.push(members);
        }
        others.push(per_alt);
        for c in columns {
            names.push(format!("{c}_{}_others", d.name));
        }
    }

    let values = ds
        .observations()
        .iter()
        .map(|o| {
            (0..spec.alternatives.len())
                .map(|j| {
                    let mut v = Vec::with_capacity(names.len());
                    for per_alt in &others {
                        let members = &per_alt[j];
                        for &k in &col_idx {
                            v.push(if members.is_empty() {
                                0.0
                            } else {
                                members.iter().map(|&m| o.attributes[m][k]).sum::<f64>()
                                    / members.len() as f64
                            });
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();
    Ok(InstrumentMatrix { names, values, warnings })
}
