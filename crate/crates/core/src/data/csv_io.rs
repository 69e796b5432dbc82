//! Long-format CSV: one row per (agent, alternative).
//!
//! Reserved columns are `agent_id`, `alternative`, `share` (required) and
//! `segment`, `region_id`, `origin_x`, `origin_y`, `destination_x`,
//! `destination_y`, `demand`, `split` (optional). Every other column is an
//! attribute.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, MarketObservation, ModelSpec, SplitTag};
use crate::error::{Error, Result};

const RESERVED: [&str; 11] = [
    "agent_id",
    "segment",
    "region_id",
    "origin_x",
    "origin_y",
    "destination_x",
    "destination_y",
    "alternative",
    "share",
    "demand",
    "split",
];

struct Header {
    index: HashMap<String, usize>,
    attributes: Vec<(String, usize)>,
}

impl Header {
    fn parse(record: &csv::StringRecord) -> Result<Self> {
        let mut index = HashMap::new();
        let mut attributes = Vec::new();
        for (i, name) in record.iter().enumerate() {
            let name = name.trim().to_string();
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate CSV column {name:?}")));
            }
            if !RESERVED.contains(&name.as_str()) {
                attributes.push((name, i));
            }
        }
        for required in ["agent_id", "alternative", "share"] {
            if !index.contains_key(required) {
                return Err(Error::InvalidSpec(format!("CSV lacks required column {required:?}")));
            }
        }
        Ok(Self { index, attributes })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.index.get(name).and_then(|&i| rec.get(i)).map(str::trim)
    }
}

fn parse_num(agent: &str, column: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| Error::obs(agent, column, format!("non-numeric value {raw:?}")))
}

struct AgentRows {
    first: csv::StringRecord,
    by_alt: Vec<Option<csv::StringRecord>>,
}

/// Reads and validates a long-format markets CSV from any reader.
pub fn read_dataset_csv<R: Read>(reader: R, spec: &ModelSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = Header::parse(rdr.headers()?)?;
    let n_alt = spec.alternatives.len();

    let mut order: Vec<String> = Vec::new();
    let mut agents: HashMap<String, AgentRows> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let agent = header.get(&rec, "agent_id").unwrap_or("").to_string();
        if agent.is_empty() {
            return Err(Error::obs("?", "agent_id", "empty agent id"));
        }
        let alt = header.get(&rec, "alternative").unwrap_or("");
        let j = spec
            .alternative_index(alt)
            .ok_or_else(|| Error::obs(&agent, "alternative", format!("unknown alternative {alt:?}")))?;
        let entry = agents.entry(agent.clone()).or_insert_with(|| {
            order.push(agent.clone());
            AgentRows {
                first: rec.clone(),
                by_alt: vec![None; n_alt],
            }
        });
        if entry.by_alt[j].is_some() {
            return Err(Error::obs(&agent, "alternative", format!("duplicate row for alternative {alt:?}")));
        }
        entry.by_alt[j] = Some(rec);
    }
    if order.is_empty() {
        return Err(Error::NoObservations);
    }

    let columns: Vec<String> = header.attributes.iter().map(|(n, _)| n.clone()).collect();
    let has_split = header.index.contains_key("split");
    let mut observations = Vec::with_capacity(order.len());
    let mut tags = Vec::with_capacity(order.len());
    for agent in &order {
        let rows = &agents[agent];
        let text = |name: &str| header.get(&rows.first, name).unwrap_or("").to_string();
        let num_or = |name: &str, default: f64| -> Result<f64> {
            match header.get(&rows.first, name) {
                Some(raw) if !raw.is_empty() => parse_num(agent, name, raw),
                _ => Ok(default),
            }
        };
        let mut attributes = Vec::with_capacity(n_alt);
        let mut shares = Vec::with_capacity(n_alt);
        for (j, rec) in rows.by_alt.iter().enumerate() {
            let rec = rec.as_ref().ok_or_else(|| {
                Error::obs(agent, "alternative", format!("missing alternative {:?}", spec.alternatives[j]))
            })?;
            let share_raw = header.get(rec, "share").unwrap_or("");
            shares.push(parse_num(agent, "share", share_raw)?);
            let mut row = Vec::with_capacity(columns.len());
            for (name, i) in &header.attributes {
                row.push(parse_num(agent, name, rec.get(*i).unwrap_or("").trim())?);
            }
            attributes.push(row);
        }
        let segment = text("segment");
        observations.push(MarketObservation {
            agent_id: agent.clone(),
            segment: if segment.is_empty() { "all".into() } else { segment },
            region_id: text("region_id"),
            origin_xy: [num_or("origin_x", 0.0)?, num_or("origin_y", 0.0)?],
            destination_xy: [num_or("destination_x", 0.0)?, num_or("destination_y", 0.0)?],
            attributes,
            shares,
            demand: num_or("demand", 1.0)?,
        });
        if has_split {
            tags.push(match text("split").as_str() {
                "train" => SplitTag::Train,
                "test" => SplitTag::Test,
                other => return Err(Error::obs(agent, "split", format!("unknown split tag {other:?}"))),
            });
        }
    }
    Dataset::new(spec.clone(), columns, observations, has_split.then_some(tags))
}

pub fn load_dataset_csv(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    read_dataset_csv(std::io::BufReader::new(file), spec)
}

/// Writes the long format; floats use shortest round-trip formatting.
pub fn write_dataset_csv_to<W: Write>(writer: W, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let has_split = ds.split_tag().is_some();
    let mut header: Vec<&str> = RESERVED[..10].to_vec();
    if has_split {
        header.push("split");
    }
    header.extend(ds.columns().iter().map(String::as_str));
    w.write_record(&header)?;
    for (t, obs) in ds.observations().iter().enumerate() {
        for (j, alt) in ds.spec().alternatives.iter().enumerate() {
            let mut rec: Vec<String> = vec![
                obs.agent_id.clone(),
                obs.segment.clone(),
                obs.region_id.clone(),
                obs.origin_xy[0].to_string(),
                obs.origin_xy[1].to_string(),
                obs.destination_xy[0].to_string(),
                obs.destination_xy[1].to_string(),
                alt.clone(),
                obs.shares[j].to_string(),
                obs.demand.to_string(),
            ];
            if let Some(tags) = ds.split_tag() {
                rec.push(tags[t].as_str().to_string());
            }
            rec.extend(obs.attributes[j].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset_csv_to(std::io::BufWriter::new(file), ds)
}
