//! Focal-observation logs to a ten-layer raw/ancillary multiplex series.
//!
//! Input rows are `date,focal,individual,relation[,occurrence]`. Rows that
//! share `(date, focal, occurrence)` form one observation occurrence; rows
//! without an occurrence index stand alone. Every unordered pair within an
//! occurrence gets one count of its proximity type, and per bucket the raw
//! layer counts days with at least one occurrence while the ancillary layer
//! counts same-day repeats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MultiplexSeries, MultiplexSnapshot, NodeRegistry, TimeLabel, WeightedGraph};

/// Number of proximity types, and so of layers in an ingested series.
pub const TYPE_COUNT: usize = 10;

/// Nested proximity to the focal, ordered from loosest to closest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Party,
    Prox5,
    Prox2,
    Groom,
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "party" => Ok(Relation::Party),
            "prox5" => Ok(Relation::Prox5),
            "prox2" => Ok(Relation::Prox2),
            "groom" => Ok(Relation::Groom),
            other => Err(Error::invalid(format!("unknown relation {other:?}"))),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Party => "party",
            Relation::Prox5 => "prox5",
            Relation::Prox2 => "prox2",
            Relation::Groom => "groom",
        })
    }
}

/// Position of an individual within one occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Focal,
    Status(Relation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationRecord {
    pub date: NaiveDate,
    pub focal: String,
    pub individual: String,
    pub relation: Relation,
    pub occurrence: Option<u32>,
}

#[derive(Deserialize)]
struct RawRow {
    date: String,
    focal: String,
    individual: String,
    relation: String,
    #[serde(default)]
    occurrence: Option<String>,
}

pub fn parse_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    parse_observations_from(std::fs::File::open(path)?)
}

pub fn parse_observations_from<R: Read>(reader: R) -> Result<Vec<ObservationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["date", "focal", "individual", "relation"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("missing column {required:?}"),
            });
        }
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse { line, msg };
        let raw: RawRow = row
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&raw.date, "%Y-%m-%d")
            .map_err(|e| parse_err(format!("bad date {:?}: {e}", raw.date)))?;
        let relation = raw
            .relation
            .parse::<Relation>()
            .map_err(|e| parse_err(e.to_string()))?;
        let occurrence = match raw.occurrence.as_deref() {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<u32>()
                    .map_err(|_| parse_err(format!("bad occurrence index {s:?}")))?,
            ),
        };
        if raw.focal.is_empty() || raw.individual.is_empty() {
            return Err(parse_err("empty node label".into()));
        }
        if raw.focal == raw.individual {
            return Err(Error::invalid(format!(
                "line {line}: individual {:?} observed as its own focal",
                raw.focal
            )));
        }
        out.push(ObservationRecord {
            date,
            focal: raw.focal,
            individual: raw.individual,
            relation,
            occurrence,
        });
    }
    Ok(out)
}

/// Proximity type (1..=10) of a pair given both members' roles. Grooming
/// between two non-focal individuals counts as within-2m.
pub fn classify_pair_type(a: Role, b: Role) -> Result<u8> {
    // Levels for non-focal members: party 1, prox5 2, prox2 or groom 3.
    fn level(r: Relation) -> u8 {
        match r {
            Relation::Party => 1,
            Relation::Prox5 => 2,
            Relation::Prox2 | Relation::Groom => 3,
        }
    }
    match (a, b) {
        (Role::Focal, Role::Focal) => Err(Error::invalid("a pair cannot consist of two focals")),
        (Role::Focal, Role::Status(r)) | (Role::Status(r), Role::Focal) => Ok(match r {
            Relation::Party => 4,
            Relation::Prox5 => 7,
            Relation::Prox2 => 9,
            Relation::Groom => 10,
        }),
        (Role::Status(x), Role::Status(y)) => {
            let (lo, hi) = (level(x).min(level(y)), level(x).max(level(y)));
            Ok(match (lo, hi) {
                (1, 1) => 1,
                (1, 2) => 2,
                (1, 3) => 3,
                (2, 2) => 5,
                (2, 3) => 6,
                _ => 8,
            })
        }
    }
}

/// Unordered pair of labels plus proximity type.
pub type PairTypeKey = (String, String, u8);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyTypeCounts {
    pub date: NaiveDate,
    pub counts: BTreeMap<PairTypeKey, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum OccurrenceKey {
    Indexed(u32),
    Row(usize),
}

/// Counts per day, pair and type. Within an occurrence an individual listed
/// more than once keeps its closest status.
pub fn daily_counts(records: &[ObservationRecord]) -> Result<Vec<DailyTypeCounts>> {
    let mut occurrences: BTreeMap<(NaiveDate, &str, OccurrenceKey), BTreeMap<&str, Relation>> =
        BTreeMap::new();
    for (row, r) in records.iter().enumerate() {
        let key = match r.occurrence {
            Some(k) => OccurrenceKey::Indexed(k),
            None => OccurrenceKey::Row(row),
        };
        let members = occurrences.entry((r.date, &r.focal, key)).or_default();
        let status = members.entry(&r.individual).or_insert(r.relation);
        *status = (*status).max(r.relation);
    }

    let mut days: BTreeMap<NaiveDate, BTreeMap<PairTypeKey, u32>> = BTreeMap::new();
    for ((date, focal, _), members) in &occurrences {
        let day = days.entry(*date).or_default();
        let mut bump = |u: &str, v: &str, ty: u8| {
            let (u, v) = if u < v { (u, v) } else { (v, u) };
            *day.entry((u.to_string(), v.to_string(), ty)).or_insert(0) += 1;
        };
        let list: Vec<(&str, Relation)> = members.iter().map(|(k, v)| (*k, *v)).collect();
        for (i, &(u, ru)) in list.iter().enumerate() {
            bump(focal, u, classify_pair_type(Role::Focal, Role::Status(ru))?);
            for &(v, rv) in &list[i + 1..] {
                bump(u, v, classify_pair_type(Role::Status(ru), Role::Status(rv))?);
            }
        }
    }
    Ok(days
        .into_iter()
        .map(|(date, counts)| DailyTypeCounts { date, counts })
        .collect())
}

/// Time bucketing rule for [`aggregate_period`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    #[default]
    Year,
    Month,
}

impl Bucket {
    pub fn label(self, date: NaiveDate) -> TimeLabel {
        match self {
            Bucket::Year => TimeLabel::Int(date.year() as i64),
            Bucket::Month => TimeLabel::Text(date.format("%Y-%m").to_string()),
        }
    }
}

impl FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "year" => Ok(Bucket::Year),
            "month" => Ok(Bucket::Month),
            other => Err(Error::invalid(format!(
                "unknown bucket {other:?} (expected year or month)"
            ))),
        }
    }
}

/// Builds the series: layer `h` holds type `h`, raw weights count days with
/// an occurrence, ancillary weights count same-day repeats. Nodes are every
/// label seen in `daily`, sorted.
pub fn aggregate_period(daily: &[DailyTypeCounts], bucket: Bucket) -> Result<MultiplexSeries> {
    let labels: BTreeSet<&str> = daily
        .iter()
        .flat_map(|d| d.counts.keys().flat_map(|(u, v, _)| [u.as_str(), v.as_str()]))
        .collect();
    let registry = Arc::new(NodeRegistry::new(
        labels.into_iter().map(str::to_string).collect(),
    )?);

    // Bucket labels of one kind sort the same way as the dates they cover.
    let mut buckets: Vec<(TimeLabel, Vec<&DailyTypeCounts>)> = Vec::new();
    let mut sorted: Vec<&DailyTypeCounts> = daily.iter().collect();
    sorted.sort_by_key(|d| d.date);
    for d in sorted {
        let label = bucket.label(d.date);
        match buckets.last_mut() {
            Some((l, days)) if *l == label => days.push(d),
            _ => buckets.push((label, vec![d])),
        }
    }

    let mut snapshots = Vec::with_capacity(buckets.len());
    for (label, days) in buckets {
        let mut raw = vec![WeightedGraph::new(registry.clone()); TYPE_COUNT];
        let mut add = vec![WeightedGraph::new(registry.clone()); TYPE_COUNT];
        for day in days {
            for ((u, v, ty), &count) in &day.counts {
                if count == 0 {
                    continue;
                }
                let (i, j) = (registry.require(u)?, registry.require(v)?);
                let h = *ty as usize - 1;
                raw[h].add_weight(i, j, 1.0)?;
                if count > 1 {
                    add[h].add_weight(i, j, (count - 1) as f64)?;
                }
            }
        }
        snapshots.push(MultiplexSnapshot::new(label, raw, add)?);
    }
    MultiplexSeries::new(snapshots)
}

/// Parse, count and aggregate in one call.
pub fn ingest(path: &Path, bucket: Bucket) -> Result<MultiplexSeries> {
    aggregate_period(&daily_counts(&parse_observations(path)?)?, bucket)
}
