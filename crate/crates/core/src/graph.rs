//! Event streams, snapshot conversion, temporal neighbor logs, splits and
//! mini-batching.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Ctdg,
    Dtdg,
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctdg" => Ok(Self::Ctdg),
            "dtdg" => Ok(Self::Dtdg),
            other => bail!(InvalidArgument, "unknown mode `{other}` (expected ctdg or dtdg)"),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Ctdg => "ctdg",
            Mode::Dtdg => "dtdg",
        })
    }
}

/// One temporal interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub features: Vec<f64>,
}

impl Event {
    pub fn new(src: NodeId, dst: NodeId, t: f64, features: Vec<f64>) -> Self {
        Self { src, dst, t, features }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotGraph {
    pub index: u64,
    pub edges: Vec<(NodeId, NodeId, Vec<f64>)>,
}

/// Flattens snapshots into events stamped with the snapshot index.
pub fn dtdg_to_events(snapshots: &[SnapshotGraph]) -> Result<Vec<Event>> {
    for w in snapshots.windows(2) {
        if w[1].index <= w[0].index {
            bail!(InvalidInput, "snapshot indices must strictly increase ({} then {})", w[0].index, w[1].index);
        }
    }
    Ok(snapshots
        .iter()
        .flat_map(|s| s.edges.iter().map(move |(a, b, f)| Event::new(*a, *b, s.index as f64, f.clone())))
        .collect())
}

/// Groups a sorted DTDG event stream back into snapshots.
pub fn events_to_snapshots(events: &[Event]) -> Result<Vec<SnapshotGraph>> {
    let mut out: Vec<SnapshotGraph> = Vec::new();
    for e in events {
        if e.t < 0.0 || e.t.fract() != 0.0 {
            bail!(InvalidInput, "snapshot time {} is not a non-negative integer", e.t);
        }
        let idx = e.t as u64;
        match out.last_mut() {
            Some(s) if s.index == idx => s.edges.push((e.src, e.dst, e.features.clone())),
            Some(s) if s.index > idx => bail!(InvalidInput, "events are not sorted by snapshot"),
            _ => out.push(SnapshotGraph { index: idx, edges: vec![(e.src, e.dst, e.features.clone())] }),
        }
    }
    Ok(out)
}

/// Stable sort by time; returns whether the input was already sorted.
pub fn sort_events(events: &mut [Event]) -> bool {
    let sorted = events.windows(2).all(|w| w[0].t <= w[1].t);
    if !sorted {
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    sorted
}

/// Sorted set of every node appearing in the stream.
pub fn node_universe(events: &[Event]) -> Vec<NodeId> {
    let set: BTreeSet<NodeId> = events.iter().flat_map(|e| [e.src, e.dst]).collect();
    set.into_iter().collect()
}

/// Splits into batches of exactly `b` plus an unpadded remainder.
pub fn make_minibatches<T>(items: &[T], b: usize) -> Result<Vec<&[T]>> {
    if b == 0 {
        bail!(InvalidArgument, "batch size must be at least 1");
    }
    Ok(items.chunks(b).collect())
}

/// Ranges of equal-timestamp runs in a sorted stream.
pub fn time_groups(events: &[Event]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].t != events[start].t {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub inductive_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15, inductive_fraction: 0.10, seed: 0 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            bail!(InvalidArgument, "split fractions {parts:?} must be positive and sum to 1");
        }
        Ok(())
    }
}

/// Index ranges into the sorted stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
    /// Last training / validation snapshot index (DTDG only).
    pub t1: Option<u64>,
    pub t2: Option<u64>,
}

pub fn chronological_split(events: &[Event], config: &SplitConfig, mode: Mode) -> Result<Split> {
    config.validate()?;
    let groups = time_groups(events);
    if groups.len() < 3 {
        bail!(InvalidInput, "need at least 3 distinct timestamps to split, found {}", groups.len());
    }
    if events.windows(2).any(|w| w[0].t > w[1].t) {
        bail!(InvalidInput, "stream must be sorted by time before splitting");
    }
    let n = events.len();
    let (b1, b2, t1, t2) = match mode {
        Mode::Ctdg => {
            let boundary = |frac: f64| {
                let mut b = ((frac * n as f64).floor() as usize).clamp(1, n);
                while b < n && events[b].t == events[b - 1].t {
                    b += 1;
                }
                b
            };
            (boundary(config.train), boundary(config.train + config.val), None, None)
        }
        Mode::Dtdg => {
            let ends: Vec<usize> = groups.iter().map(|g| g.end).collect();
            let nearest = |target: f64, from: usize| {
                (from..ends.len() - 1)
                    .min_by(|a, b| {
                        let da = (ends[*a] as f64 - target).abs();
                        let db = (ends[*b] as f64 - target).abs();
                        da.total_cmp(&db)
                    })
            };
            let too_few = || crate::Error::InvalidInput(format!("{} snapshots cannot form three partitions", groups.len()));
            let g1 = nearest(config.train * n as f64, 0).ok_or_else(too_few)?;
            let g2 = nearest((config.train + config.val) * n as f64, g1 + 1).ok_or_else(too_few)?;
            (ends[g1], ends[g2], Some(events[ends[g1] - 1].t as u64), Some(events[ends[g2] - 1].t as u64))
        }
    };
    if b1 == 0 || b1 >= b2 || b2 >= n {
        bail!(InvalidInput, "split boundaries {b1}/{b2} leave an empty partition of {n} events");
    }
    Ok(Split { train: 0..b1, val: b1..b2, test: b2..n, t1, t2 })
}

/// Samples `⌊fraction·|U|⌋` nodes and drops every event touching them.
pub fn mask_inductive_nodes(
    train: &[Event],
    universe: &[NodeId],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Event>, BTreeSet<NodeId>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        bail!(InvalidArgument, "inductive fraction must lie in (0, 1), got {fraction}");
    }
    let k = (fraction * universe.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masked: BTreeSet<NodeId> = sample(&mut rng, universe.len(), k).into_iter().map(|i| universe[i]).collect();
    let kept = train.iter().filter(|e| !masked.contains(&e.src) && !masked.contains(&e.dst)).cloned().collect();
    Ok((kept, masked))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Interaction {
    neighbor: NodeId,
    t: f64,
    event: usize,
}

/// Up to N most recent prior interactions, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborBatch {
    pub neighbors: Vec<NodeId>,
    pub times: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
}

impl NeighborBatch {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Valid entries as `(neighbor, t, features)`.
    pub fn entries(&self) -> impl Iterator<Item = (NodeId, f64, &[f64])> {
        (0..self.valid.len()).filter(|i| self.valid[*i]).map(|i| (self.neighbors[i], self.times[i], &self.features[i][..]))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditStats {
    pub samples: u64,
    pub entries: u64,
    pub violations: u64,
}

/// Append-only per-node interaction logs. Every event adds a record for both
/// endpoints. Every neighbor query is audited for temporal leakage.
#[derive(Debug, Clone, Default)]
pub struct TemporalGraph {
    logs: BTreeMap<NodeId, Vec<Interaction>>,
    features: Vec<Vec<f64>>,
    window: Option<f64>,
    last_t: f64,
    audit: Cell<AuditStats>,
}

impl TemporalGraph {
    pub fn new(window: Option<f64>) -> Self {
        Self { window, last_t: f64::NEG_INFINITY, ..Self::default() }
    }

    pub fn num_events(&self) -> usize {
        self.features.len()
    }

    pub fn window(&self) -> Option<f64> {
        self.window
    }

    /// Events must arrive in non-decreasing time order.
    pub fn ingest(&mut self, e: &Event) -> Result<()> {
        if e.t < self.last_t {
            bail!(TemporalOrder, "event at t={} ingested after t={}", e.t, self.last_t);
        }
        self.last_t = e.t;
        let id = self.features.len();
        self.features.push(e.features.clone());
        self.logs.entry(e.src).or_default().push(Interaction { neighbor: e.dst, t: e.t, event: id });
        if e.dst != e.src {
            self.logs.entry(e.dst).or_default().push(Interaction { neighbor: e.src, t: e.t, event: id });
        }
        Ok(())
    }

    pub fn ingest_all<'a>(&mut self, events: impl IntoIterator<Item = &'a Event>) -> Result<()> {
        for e in events {
            self.ingest(e)?;
        }
        Ok(())
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.logs.get(&node).map_or(0, |l| l.len())
    }

    /// The `n` most recent interactions of `node` strictly before `t`; ties
    /// go to the later-ingested interaction.
    pub fn sample_recent_neighbors(&self, node: NodeId, t: f64, n: usize) -> NeighborBatch {
        let mut batch = NeighborBatch {
            neighbors: vec![0; n],
            times: vec![0.0; n],
            features: vec![Vec::new(); n],
            valid: vec![false; n],
        };
        if let Some(log) = self.logs.get(&node) {
            let end = log.partition_point(|r| r.t < t);
            let lower = self.window.map_or(f64::NEG_INFINITY, |w| t - w);
            for (slot, r) in log[..end].iter().rev().take_while(|r| r.t >= lower).take(n).enumerate() {
                batch.neighbors[slot] = r.neighbor;
                batch.times[slot] = r.t;
                batch.features[slot] = self.features[r.event].clone();
                batch.valid[slot] = true;
            }
        }
        self.record_audit(&batch, t);
        batch
    }

    fn record_audit(&self, batch: &NeighborBatch, t: f64) {
        let mut a = self.audit.get();
        a.samples += 1;
        for (_, tj, _) in batch.entries() {
            a.entries += 1;
            if !(tj < t) {
                a.violations += 1;
            }
        }
        self.audit.set(a);
        debug_assert!(batch.entries().all(|(_, tj, _)| tj < t), "neighbor at or after query time {t}");
    }

    pub fn audit(&self) -> AuditStats {
        self.audit.get()
    }
}

#[cfg(test)]
mod tests;
