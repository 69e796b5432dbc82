//! Market-level dataset schema, validation, CSV ingest and trip aggregation.

mod aggregate;
mod csv_io;
mod spec;
mod split;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aggregate::{aggregate_trips, GroupKey, TripRecord};
pub use csv_io::{load_dataset_csv, read_dataset_csv, write_dataset_csv, write_dataset_csv_to};
pub use spec::{CompiledDesign, Feature, GroupDimension, InstrumentSpec, ModelSpec, CONSTANT_FEATURE};
pub use split::train_test_split;

/// Observed shares must sum to one within this tolerance.
pub const SHARE_SUM_TOLERANCE: f64 = 1e-9;

/// One agent (market): homogeneous decision makers sharing attributes and shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketObservation {
    pub agent_id: String,
    pub segment: String,
    pub region_id: String,
    pub origin_xy: [f64; 2],
    pub destination_xy: [f64; 2],
    /// `|J|` rows, one value per dataset column.
    pub attributes: Vec<Vec<f64>>,
    pub shares: Vec<f64>,
    /// Trips per day.
    pub demand: f64,
}

impl MarketObservation {
    /// Origin and destination coordinates as one feature vector.
    pub fn od_features(&self) -> [f64; 4] {
        [
            self.origin_xy[0],
            self.origin_xy[1],
            self.destination_xy[0],
            self.destination_xy[1],
        ]
    }

    fn validate(&self, n_alternatives: usize, columns: &[String]) -> Result<()> {
        let id = &self.agent_id;
        if self.shares.len() != n_alternatives || self.attributes.len() != n_alternatives {
            return Err(Error::obs(id, "alternative", "wrong number of alternatives"));
        }
        for (j, row) in self.attributes.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::obs(id, "attributes", format!("alternative {j} has {} values, expected {}", row.len(), columns.len())));
            }
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::obs(id, &columns[k], "non-finite attribute"));
            }
        }
        if let Some(s) = self.shares.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::obs(id, "share", format!("share {s} outside [0, 1]")));
        }
        let total: f64 = self.shares.iter().sum();
        if (total - 1.0).abs() > SHARE_SUM_TOLERANCE {
            return Err(Error::obs(id, "share", format!("shares sum to {total}, not 1")));
        }
        if !(self.demand >= 0.0 && self.demand.is_finite()) {
            return Err(Error::obs(id, "demand", format!("demand {} must be finite and >= 0", self.demand)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// Validated collection of markets conforming to one `ModelSpec`.
///
/// Immutable after construction; the only mutation path is
/// [`Dataset::with_column`], which returns a new dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: ModelSpec,
    columns: Vec<String>,
    observations: Vec<MarketObservation>,
    split_tag: Option<Vec<SplitTag>>,
}

impl Dataset {
    pub fn new(
        spec: ModelSpec,
        columns: Vec<String>,
        observations: Vec<MarketObservation>,
        split_tag: Option<Vec<SplitTag>>,
    ) -> Result<Self> {
        spec.validate()?;
        if observations.is_empty() {
            return Err(Error::NoObservations);
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return Err(Error::InvalidSpec(format!("duplicate column {c:?}")));
            }
        }
        for c in spec.referenced_columns() {
            if !columns.contains(&c) {
                return Err(Error::InvalidSpec(format!("design references column {c:?} absent from data")));
            }
        }
        if let Some(inst) = &spec.instruments {
            for c in inst.excluded_columns.iter().chain(&inst.group_columns) {
                if !columns.contains(c) {
                    return Err(Error::InvalidSpec(format!("instrument column {c:?} absent from data")));
                }
            }
        }
        if let Some(c) = &spec.endogenous_column {
            if !columns.contains(c) {
                return Err(Error::InvalidSpec(format!("endogenous column {c:?} absent from data")));
            }
        }
        let mut ids = BTreeSet::new();
        for o in &observations {
            if !ids.insert(o.agent_id.as_str()) {
                return Err(Error::obs(&o.agent_id, "agent_id", "duplicate agent"));
            }
            o.validate(spec.alternatives.len(), &columns)?;
        }
        if let Some(tags) = &split_tag {
            if tags.len() != observations.len() {
                return Err(Error::InvalidSpec("split tag length does not match observations".into()));
            }
        }
        Ok(Self {
            spec,
            columns,
            observations,
            split_tag,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn observations(&self) -> &[MarketObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn split_tag(&self) -> Option<&[SplitTag]> {
        self.split_tag.as_deref()
    }

    pub fn design(&self) -> Result<CompiledDesign> {
        CompiledDesign::new(&self.spec, &self.columns)
    }

    pub fn observation(&self, agent_id: &str) -> Option<&MarketObservation> {
        self.observations.iter().find(|o| o.agent_id == agent_id)
    }

    /// Returns a copy with `name` set to `values[t][j]`, appending the column if new.
    pub fn with_column(&self, name: &str, values: &[Vec<f64>]) -> Result<Self> {
        if values.len() != self.observations.len() {
            return Err(Error::Precondition(format!("column {name:?} needs one row per observation")));
        }
        let mut columns = self.columns.clone();
        let existing = self.column_index(name);
        if existing.is_none() {
            columns.push(name.to_string());
        }
        let mut observations = self.observations.clone();
        for (obs, vals) in observations.iter_mut().zip(values) {
            if vals.len() != obs.attributes.len() {
                return Err(Error::obs(&obs.agent_id, name, "wrong number of alternatives"));
            }
            for (row, v) in obs.attributes.iter_mut().zip(vals) {
                match existing {
                    Some(k) => row[k] = *v,
                    None => row.push(*v),
                }
            }
        }
        Self::new(self.spec.clone(), columns, observations, self.split_tag.clone())
    }

    /// Subset of observations by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let observations = indices.iter().map(|&i| self.observations[i].clone()).collect();
        let split = self
            .split_tag
            .as_ref()
            .map(|t| indices.iter().map(|&i| t[i]).collect());
        Self::new(self.spec.clone(), self.columns.clone(), observations, split)
    }

    /// Replaces the observation list (used by resampling).
    pub fn with_observations(&self, observations: Vec<MarketObservation>) -> Result<Self> {
        Self::new(self.spec.clone(), self.columns.clone(), observations, None)
    }

    pub fn with_split(&self, tags: Vec<SplitTag>) -> Result<Self> {
        Self::new(self.spec.clone(), self.columns.clone(), self.observations.clone(), Some(tags))
    }

    /// Observations tagged `tag`; errors when no split tags are present.
    pub fn tagged(&self, tag: SplitTag) -> Result<Self> {
        let tags = self
            .split_tag
            .as_ref()
            .ok_or_else(|| Error::Precondition("dataset has no split column".into()))?;
        let idx: Vec<usize> = (0..self.len()).filter(|&i| tags[i] == tag).collect();
        if idx.is_empty() {
            return Err(Error::NoObservations);
        }
        let mut ds = self.subset(&idx)?;
        ds.split_tag = None;
        Ok(ds)
    }
}
