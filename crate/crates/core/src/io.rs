//! CSV event streams, snapshot files and the split sidecar.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::graph::{dtdg_to_events, sort_events, Event, Mode, NodeId, SnapshotGraph};
use crate::train::{Dataset, Prepared, TrainConfig};

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, message: message.into() }
}

fn header_check(headers: &csv::StringRecord, lead: &[&str]) -> Result<usize> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got.len() < lead.len() || got[..lead.len()] != *lead {
        return Err(parse_err(1, format!("expected header starting with `{}`, got `{}`", lead.join(","), got.join(","))));
    }
    for (i, h) in got[lead.len()..].iter().enumerate() {
        if *h != format!("feat_{i}") {
            return Err(parse_err(1, format!("column `{h}` should be `feat_{i}`")));
        }
    }
    Ok(got.len() - lead.len())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| parse_err(line, format!("missing {name}")))?.trim();
    raw.parse().map_err(|_| parse_err(line, format!("bad {name} `{raw}`")))
}

fn features(rec: &csv::StringRecord, from: usize, n: usize, line: u64) -> Result<Vec<f64>> {
    if rec.len() != from + n {
        return Err(parse_err(line, format!("expected {} fields, found {}", from + n, rec.len())));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let v: f64 = field(rec, from + i, &format!("feat_{i}"), line)?;
        if !v.is_finite() {
            return Err(parse_err(line, format!("feat_{i} is not finite")));
        }
        out.push(v);
    }
    Ok(out)
}

fn reader(r: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r)
}

/// `src,dst,t,feat_*` rows, sorted by time (with a warning if they were not).
pub fn read_ctdg(r: impl Read) -> Result<Vec<Event>> {
    let mut rdr = reader(r);
    let nf = header_check(rdr.headers()?, &["src", "dst", "t"])?;
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let t: f64 = field(&rec, 2, "t", line)?;
        if !t.is_finite() {
            return Err(parse_err(line, "t is not finite"));
        }
        events.push(Event::new(field(&rec, 0, "src", line)?, field(&rec, 1, "dst", line)?, t, features(&rec, 3, nf, line)?));
    }
    if !sort_events(&mut events) {
        warn!("event stream was not in time order; sorted it");
    }
    Ok(events)
}

/// `snapshot,src,dst,feat_*` rows grouped by snapshot; row order inside a
/// snapshot is kept.
pub fn read_dtdg(r: impl Read) -> Result<Vec<SnapshotGraph>> {
    let mut rdr = reader(r);
    let nf = header_check(rdr.headers()?, &["snapshot", "src", "dst"])?;
    let mut groups: BTreeMap<u64, Vec<(NodeId, NodeId, Vec<f64>)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let snap: u64 = field(&rec, 0, "snapshot", line)?;
        let edge = (field(&rec, 1, "src", line)?, field(&rec, 2, "dst", line)?, features(&rec, 3, nf, line)?);
        groups.entry(snap).or_default().push(edge);
    }
    Ok(groups.into_iter().map(|(index, edges)| SnapshotGraph { index, edges }).collect())
}

pub fn load_dataset(path: &Path, mode: Mode) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let events = match mode {
        Mode::Ctdg => read_ctdg(f)?,
        Mode::Dtdg => dtdg_to_events(&read_dtdg(f)?)?,
    };
    Dataset::new(events, mode)
}

/// Writes events as `src,dst,t,feat_*`.
pub fn write_events(w: impl Write, events: &[Event]) -> Result<()> {
    let nf = events.first().map_or(0, |e| e.features.len());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["src".to_string(), "dst".to_string(), "t".to_string()];
    header.extend((0..nf).map(|i| format!("feat_{i}")));
    wtr.write_record(&header)?;
    for e in events {
        if e.features.len() != nf {
            bail!(Dimension, "mixed feature widths {} and {nf}", e.features.len());
        }
        let mut row = vec![e.src.to_string(), e.dst.to_string(), fmt_f64(e.t)];
        row.extend(e.features.iter().map(|f| fmt_f64(*f)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same value.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}").trim_end_matches(".0").to_string()
}

/// First event index of each snapshot in a converted stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotBoundary {
    pub snapshot: u64,
    pub start: usize,
}

/// Metadata written next to a converted or split stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub mode: Mode,
    pub events: usize,
    pub edge_dim: usize,
    pub snapshot_boundaries: Vec<SnapshotBoundary>,
    pub seed: Option<u64>,
    pub train_end: Option<usize>,
    pub val_end: Option<usize>,
    /// Last train / validation timestamp.
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub masked_nodes: Vec<NodeId>,
    pub val_negative_digest: Option<String>,
    pub test_negative_digest: Option<String>,
}

impl Sidecar {
    pub fn for_stream(events: &[Event], mode: Mode) -> Self {
        let mut snapshot_boundaries = Vec::new();
        if mode == Mode::Dtdg {
            for (i, e) in events.iter().enumerate() {
                if i == 0 || e.t != events[i - 1].t {
                    snapshot_boundaries.push(SnapshotBoundary { snapshot: e.t as u64, start: i });
                }
            }
        }
        Self {
            mode,
            events: events.len(),
            edge_dim: events.first().map_or(0, |e| e.features.len()),
            snapshot_boundaries,
            seed: None,
            train_end: None,
            val_end: None,
            t1: None,
            t2: None,
            masked_nodes: Vec::new(),
            val_negative_digest: None,
            test_negative_digest: None,
        }
    }

    pub fn for_split(config: &TrainConfig, prepared: &Prepared) -> Self {
        let mut s = Self::for_stream(&prepared.events, config.mode);
        let ev = &prepared.events;
        s.seed = Some(config.seed);
        s.train_end = Some(prepared.split.train.end);
        s.val_end = Some(prepared.split.val.end);
        s.t1 = Some(ev[prepared.split.train.end - 1].t);
        s.t2 = Some(ev[prepared.split.val.end - 1].t);
        s.masked_nodes = prepared.masked.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        s.val_negative_digest = Some(format!("{:016x}", prepared.val_negatives.digest()));
        s.test_negative_digest = Some(format!("{:016x}", prepared.test_negatives.digest()));
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }
}
