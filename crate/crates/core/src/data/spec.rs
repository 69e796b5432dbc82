//! Model specification: parameter vocabulary, per-alternative design rows and bounds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Literal used in the JSON design map for an alternative-specific constant.
pub const CONSTANT_FEATURE: &str = "1";

/// What feeds one parameter slot of an alternative's design row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Feature {
    /// Constant 1 (alternative-specific constant).
    Constant,
    /// Value of the named attribute column.
    Column(String),
}

impl From<String> for Feature {
    fn from(s: String) -> Self {
        if s == CONSTANT_FEATURE {
            Feature::Constant
        } else {
            Feature::Column(s)
        }
    }
}

impl From<Feature> for String {
    fn from(f: Feature) -> Self {
        match f {
            Feature::Constant => CONSTANT_FEATURE.to_string(),
            Feature::Column(c) => c,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Constant => f.write_str(CONSTANT_FEATURE),
            Feature::Column(c) => f.write_str(c),
        }
    }
}

/// One segmentation dimension: a name plus the groups of alternatives it defines.
///
/// Alternatives not listed in any group of a dimension form their own singleton group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDimension {
    pub name: String,
    pub groups: Vec<Vec<String>>,
}

impl GroupDimension {
    pub fn new(name: impl Into<String>, groups: Vec<Vec<&str>>) -> Self {
        Self {
            name: name.into(),
            groups: groups
                .into_iter()
                .map(|g| g.into_iter().map(str::to_string).collect())
                .collect(),
        }
    }

    /// Members of the group containing `alternative`, or `None` if it is ungrouped.
    pub fn group_of(&self, alternative: &str) -> Option<&[String]> {
        self.groups
            .iter()
            .find(|g| g.iter().any(|a| a == alternative))
            .map(Vec::as_slice)
    }
}

/// Instruments for the first-stage regression of the endogenous column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    /// Attribute columns used directly as excluded instruments (own-alternative values).
    #[serde(default)]
    pub excluded_columns: Vec<String>,
    /// Leave-one-out group averages are built over these dimensions ...
    #[serde(default)]
    pub groups: Vec<GroupDimension>,
    /// ... of these attribute columns.
    #[serde(default)]
    pub group_columns: Vec<String>,
}

/// Schema of the utility model shared by every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub parameter_names: Vec<String>,
    /// `parameter -> [lb, ub]`; `null` or a missing entry means unbounded.
    #[serde(default)]
    pub bounds: BTreeMap<String, [Option<f64>; 2]>,
    pub alternatives: Vec<String>,
    /// `alternative -> parameter -> feature`.
    pub design_map: BTreeMap<String, BTreeMap<String, Feature>>,
    /// Alternative without a constant; also the outside good for benchmarks.
    #[serde(default)]
    pub reference_alternative: Option<String>,
    #[serde(default)]
    pub endogenous_column: Option<String>,
    /// Alternatives whose endogenous column is instrumented. Defaults to every
    /// alternative whose design uses the endogenous column.
    #[serde(default)]
    pub endogenous_alternatives: Option<Vec<String>>,
    #[serde(default)]
    pub control_parameter: Option<String>,
    /// Unit conversion applied when building design rows, e.g. minutes to hours = 1/60.
    #[serde(default)]
    pub column_scale: BTreeMap<String, f64>,
    #[serde(default)]
    pub instruments: Option<InstrumentSpec>,
}

impl ModelSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let spec: ModelSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_params(&self) -> usize {
        self.parameter_names.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|p| p == name)
    }

    pub fn alternative_index(&self, name: &str) -> Option<usize> {
        self.alternatives.iter().position(|a| a == name)
    }

    /// Name of the attribute column that carries the first-stage control residual.
    pub fn control_column(&self) -> Option<String> {
        self.endogenous_column
            .as_ref()
            .map(|c| format!("{c}_residual"))
    }

    /// Bounds as `(lb, ub)` aligned with `parameter_names`, infinite where unbounded.
    pub fn bound_pairs(&self) -> Vec<(f64, f64)> {
        self.parameter_names
            .iter()
            .map(|p| match self.bounds.get(p) {
                Some([lb, ub]) => (
                    lb.unwrap_or(f64::NEG_INFINITY),
                    ub.unwrap_or(f64::INFINITY),
                ),
                None => (f64::NEG_INFINITY, f64::INFINITY),
            })
            .collect()
    }

    fn has_constant(&self, alternative: &str) -> bool {
        self.design_map
            .get(alternative)
            .is_some_and(|m| m.values().any(|f| *f == Feature::Constant))
    }

    /// Alternatives whose endogenous column gets a first-stage regression.
    pub fn endogenous_alternatives(&self) -> Vec<String> {
        let Some(col) = &self.endogenous_column else {
            return Vec::new();
        };
        if let Some(explicit) = &self.endogenous_alternatives {
            return explicit.clone();
        }
        let feature = Feature::Column(col.clone());
        self.alternatives
            .iter()
            .filter(|a| {
                self.design_map
                    .get(*a)
                    .is_some_and(|m| m.values().any(|f| *f == feature))
            })
            .cloned()
            .collect()
    }

    /// Attribute columns referenced by the design map, excluding the control residual.
    pub fn referenced_columns(&self) -> BTreeSet<String> {
        let control = self.control_column();
        self.design_map
            .values()
            .flat_map(|m| m.values())
            .filter_map(|f| match f {
                Feature::Column(c) if Some(c) != control.as_ref() => Some(c.clone()),
                _ => None,
            })
            .collect()
    }

    /// Checks the schema invariants that do not depend on data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.parameter_names.is_empty() {
            return bad("no parameters declared".into());
        }
        if self.alternatives.len() < 2 {
            return bad("at least two alternatives are required".into());
        }
        let mut seen = BTreeSet::new();
        for p in &self.parameter_names {
            if !seen.insert(p) {
                return bad(format!("duplicate parameter {p:?}"));
            }
        }
        let mut seen = BTreeSet::new();
        for a in &self.alternatives {
            if !seen.insert(a) {
                return bad(format!("duplicate alternative {a:?}"));
            }
        }
        for (alt, row) in &self.design_map {
            if self.alternative_index(alt).is_none() {
                return bad(format!("design_map names unknown alternative {alt:?}"));
            }
            for p in row.keys() {
                if self.param_index(p).is_none() {
                    return bad(format!("design_map[{alt}] names unknown parameter {p:?}"));
                }
            }
        }
        for p in &self.parameter_names {
            if !self.design_map.values().any(|row| row.contains_key(p)) {
                return bad(format!("parameter {p:?} does not appear in any design row"));
            }
        }
        for (p, [lb, ub]) in &self.bounds {
            if self.param_index(p).is_none() {
                return bad(format!("bounds name unknown parameter {p:?}"));
            }
            if let (Some(l), Some(u)) = (lb, ub) {
                if l > u {
                    return bad(format!("bounds for {p:?} have lb {l} > ub {u}"));
                }
            }
        }
        match &self.reference_alternative {
            Some(r) => {
                if self.alternative_index(r).is_none() {
                    return bad(format!("reference alternative {r:?} is not an alternative"));
                }
                if self.has_constant(r) {
                    return bad(format!("reference alternative {r:?} carries a constant"));
                }
            }
            None => {
                if self.alternatives.iter().all(|a| self.has_constant(a)) {
                    return bad("every alternative carries a constant; one must be the reference".into());
                }
            }
        }
        if self.endogenous_column.is_some() != self.control_parameter.is_some() {
            return bad("control_parameter must be set if and only if endogenous_column is set".into());
        }
        if let (Some(col), Some(ctrl)) = (&self.endogenous_column, &self.control_parameter) {
            if self.param_index(ctrl).is_none() {
                return bad(format!("control parameter {ctrl:?} is not a parameter"));
            }
            let residual = Feature::Column(format!("{col}_residual"));
            for (alt, row) in &self.design_map {
                if let Some(f) = row.get(ctrl) {
                    if *f != residual {
                        return bad(format!(
                            "design_map[{alt}][{ctrl}] must be the control column {residual}"
                        ));
                    }
                }
            }
            for alt in self.endogenous_alternatives() {
                if self.alternative_index(&alt).is_none() {
                    return bad(format!("endogenous alternative {alt:?} is unknown"));
                }
            }
        }
        for (c, s) in &self.column_scale {
            if !s.is_finite() || *s == 0.0 {
                return bad(format!("column_scale for {c:?} must be finite and nonzero"));
            }
        }
        if let Some(inst) = &self.instruments {
            for d in &inst.groups {
                for g in &d.groups {
                    for a in g {
                        if self.alternative_index(a).is_none() {
                            return bad(format!("instrument dimension {} names unknown alternative {a:?}", d.name));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Constant,
    Column { index: usize, scale: f64 },
}

/// A `ModelSpec` resolved against a concrete column list, ready to emit design rows.
#[derive(Debug, Clone)]
pub struct CompiledDesign {
    rows: Vec<Vec<(usize, Slot)>>,
    n_params: usize,
}

impl CompiledDesign {
    pub fn new(spec: &ModelSpec, columns: &[String]) -> Result<Self> {
        let mut rows = Vec::with_capacity(spec.alternatives.len());
        for alt in &spec.alternatives {
            let mut row = Vec::new();
            if let Some(map) = spec.design_map.get(alt) {
                for (param, feature) in map {
                    let p = spec.param_index(param).ok_or_else(|| {
                        Error::InvalidSpec(format!("unknown parameter {param:?}"))
                    })?;
                    let slot = match feature {
                        Feature::Constant => Slot::Constant,
                        Feature::Column(c) => {
                            let index = columns.iter().position(|x| x == c).ok_or_else(|| {
                                if Some(c) == spec.control_column().as_ref() {
                                    Error::Precondition(format!(
                                        "control column {c:?} is missing; run the first-stage control regression"
                                    ))
                                } else {
                                    Error::InvalidSpec(format!(
                                        "design_map[{alt}][{param}] references missing column {c:?}"
                                    ))
                                }
                            })?;
                            let scale = spec.column_scale.get(c).copied().unwrap_or(1.0);
                            Slot::Column { index, scale }
                        }
                    };
                    row.push((p, slot));
                }
            }
            rows.push(row);
        }
        Ok(Self {
            rows,
            n_params: spec.n_params(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_alternatives(&self) -> usize {
        self.rows.len()
    }

    /// Design row `X_j` for one alternative given that alternative's attribute values.
    pub fn row(&self, alternative: usize, attributes: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_params];
        self.fill_row(alternative, attributes, &mut x);
        x
    }

    pub fn fill_row(&self, alternative: usize, attributes: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(p, slot) in &self.rows[alternative] {
            out[p] += match slot {
                Slot::Constant => 1.0,
                Slot::Column { index, scale } => attributes[index] * scale,
            };
        }
    }

    /// All design rows of one market, `|J| x K_p`.
    pub fn rows_for(&self, attributes: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.rows.len())
            .map(|j| self.row(j, &attributes[j]))
            .collect()
    }

    /// Systematic utilities `theta' X_j` for every alternative.
    pub fn utilities(&self, theta: &[f64], attributes: &[Vec<f64>]) -> Vec<f64> {
        (0..self.rows.len())
            .map(|j| {
                self.rows[j]
                    .iter()
                    .map(|&(p, slot)| {
                        theta[p]
                            * match slot {
                                Slot::Constant => 1.0,
                                Slot::Column { index, scale } => attributes[j][index] * scale,
                            }
                    })
                    .sum()
            })
            .collect()
    }
}
