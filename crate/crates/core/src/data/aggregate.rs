//! Aggregation of individual trips into market-level observations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, MarketObservation, ModelSpec};
use crate::error::{Error, Result};

/// Markets are (segment, origin zone, destination zone) cells.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub segment: String,
    pub origin: String,
    pub destination: String,
}

impl GroupKey {
    pub fn new(segment: &str, origin: &str, destination: &str) -> Self {
        Self {
            segment: segment.into(),
            origin: origin.into(),
            destination: destination.into(),
        }
    }

    fn agent_id(&self) -> String {
        format!("{}:{}:{}", self.segment, self.origin, self.destination)
    }
}

/// One individual trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub key: GroupKey,
    pub region_id: String,
    pub origin_xy: [f64; 2],
    pub destination_xy: [f64; 2],
    pub chosen: String,
    /// Attribute vectors (aligned with the aggregation column list) for the
    /// alternatives this trip observed; usually just the chosen one.
    pub observed: BTreeMap<String, Vec<f64>>,
}

#[derive(Default)]
struct Accumulator {
    trips: usize,
    chosen: Vec<usize>,
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
    origin: [f64; 2],
    destination: [f64; 2],
    region: String,
}

/// Averages attributes per alternative (unweighted) and counts choice frequencies.
///
/// `external` supplies attributes for alternatives never observed within a group.
pub fn aggregate_trips(
    trips: &[TripRecord],
    spec: &ModelSpec,
    columns: &[String],
    external: &BTreeMap<(GroupKey, String), Vec<f64>>,
) -> Result<Dataset> {
    let n_alt = spec.alternatives.len();
    let n_col = columns.len();
    let mut groups: BTreeMap<GroupKey, Accumulator> = BTreeMap::new();
    for trip in trips {
        let acc = groups.entry(trip.key.clone()).or_insert_with(|| Accumulator {
            chosen: vec![0; n_alt],
            sums: vec![vec![0.0; n_col]; n_alt],
            counts: vec![0; n_alt],
            region: trip.region_id.clone(),
            ..Default::default()
        });
        let id = trip.key.agent_id();
        let j = spec
            .alternative_index(&trip.chosen)
            .ok_or_else(|| Error::obs(&id, "alternative", format!("unknown alternative {:?}", trip.chosen)))?;
        acc.trips += 1;
        acc.chosen[j] += 1;
        for k in 0..2 {
            acc.origin[k] += trip.origin_xy[k];
            acc.destination[k] += trip.destination_xy[k];
        }
        for (alt, values) in &trip.observed {
            let a = spec
                .alternative_index(alt)
                .ok_or_else(|| Error::obs(&id, "alternative", format!("unknown alternative {alt:?}")))?;
            if values.len() != n_col {
                return Err(Error::obs(&id, alt, "attribute vector length does not match columns"));
            }
            for (s, v) in acc.sums[a].iter_mut().zip(values) {
                *s += v;
            }
            acc.counts[a] += 1;
        }
    }

    let mut observations = Vec::with_capacity(groups.len());
    for (key, acc) in groups {
        let id = key.agent_id();
        let n = acc.trips as f64;
        let mut attributes = Vec::with_capacity(n_alt);
        for (j, alt) in spec.alternatives.iter().enumerate() {
            if acc.counts[j] > 0 {
                let c = acc.counts[j] as f64;
                attributes.push(acc.sums[j].iter().map(|s| s / c).collect());
            } else if let Some(v) = external.get(&(key.clone(), alt.clone())) {
                attributes.push(v.clone());
            } else {
                return Err(Error::UnobservedAlternative {
                    group: id,
                    alternative: alt.clone(),
                });
            }
        }
        observations.push(MarketObservation {
            agent_id: id,
            segment: key.segment.clone(),
            region_id: acc.region,
            origin_xy: [acc.origin[0] / n, acc.origin[1] / n],
            destination_xy: [acc.destination[0] / n, acc.destination[1] / n],
            attributes,
            shares: acc.chosen.iter().map(|&c| c as f64 / n).collect(),
            demand: n,
        });
    }
    Dataset::new(spec.clone(), columns.to_vec(), observations, None)
}
