//! Experiment harness: a planted-pattern synthetic stream, noise injection,
//! spectrum tables, noise sweeps and ablations.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decoder::sample_negatives;
use crate::encoder::Attention;
use crate::error::{bail, Result};
use crate::graph::{chronological_split, node_universe, Event, Mode, NodeId, SplitConfig};
use crate::metrics::auc;
use crate::spectral::{dft, magnitude, ComplexVector};
use crate::state::Dynamics;
use crate::train::{train, Dataset, TrainConfig};

/// Communities of nodes firing once per period at a fixed phase. A node
/// links to one of three partners from its own community whose phase is one
/// step later, rotating partner every period; so both who a node talks to and
/// when its partners were last seen are predictable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub nodes: usize,
    pub communities: usize,
    pub period: usize,
    pub events: usize,
    /// CTDG timestamps are `step + U[0, jitter)`.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self { nodes: 200, communities: 2, period: 10, events: 5000, jitter: 0.3, seed: 0 }
    }
}

pub fn community(cfg: &PlantedConfig, v: NodeId) -> usize {
    (v / cfg.period) % cfg.communities
}

pub fn phase(cfg: &PlantedConfig, v: NodeId) -> usize {
    v % cfg.period
}

/// CTDG timestamps are `step + U[0, jitter)`; DTDG puts each step in its own
/// snapshot.
pub fn planted_pattern(cfg: &PlantedConfig, mode: Mode) -> Result<Vec<Event>> {
    if cfg.communities == 0 || cfg.period == 0 || !(0.0..1.0).contains(&cfg.jitter) {
        bail!(InvalidArgument, "planted pattern needs communities, a period and jitter in [0, 1)");
    }
    let mut pools = vec![Vec::new(); cfg.communities * cfg.period];
    for v in 0..cfg.nodes {
        pools[community(cfg, v) * cfg.period + phase(cfg, v)].push(v);
    }
    if pools.iter().any(|p| p.len() < 3) {
        bail!(InvalidArgument, "every (community, phase) cell needs at least 3 nodes");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let partners: Vec<[NodeId; 3]> = (0..cfg.nodes)
        .map(|v| {
            let pool = &pools[community(cfg, v) * cfg.period + (phase(cfg, v) + 1) % cfg.period];
            let pick = sample(&mut rng, pool.len(), 3);
            [pool[pick.index(0)], pool[pick.index(1)], pool[pick.index(2)]]
        })
        .collect();
    let mut events = Vec::with_capacity(cfg.events);
    let mut step = 0usize;
    while events.len() < cfg.events {
        let round = step / cfg.period;
        for v in (0..cfg.nodes).filter(|v| phase(cfg, *v) == step % cfg.period) {
            if events.len() == cfg.events {
                break;
            }
            let dst = partners[v][round % 3];
            let t = match mode {
                Mode::Ctdg => step as f64 + rng.gen_range(0.0..1.0) * cfg.jitter,
                Mode::Dtdg => step as f64,
            };
            // slow community-specific oscillation plus a little noise
            let wave = (2.0 * std::f64::consts::PI * step as f64 / (4.0 * cfg.period as f64)).sin();
            let feature = if community(cfg, v) == 0 { wave } else { -wave } + 0.05 * rng.gen_range(-1.0..1.0);
            events.push(Event::new(v, dst, t, vec![feature]));
        }
        step += 1;
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(events)
}

/// Test AUC of a logistic regression on `[ln(1+deg src), ln(1+deg dst)]`
/// with degrees counted over the training range.
pub fn degree_baseline_auc(events: &[Event], mode: Mode, seed: u64) -> Result<f64> {
    let split = chronological_split(events, &SplitConfig::default(), mode)?;
    let universe = node_universe(events);
    let train = &events[split.train.clone()];
    let test = &events[split.test.clone()];
    let mut degree = std::collections::HashMap::new();
    for e in train {
        *degree.entry(e.src).or_insert(0usize) += 1;
        *degree.entry(e.dst).or_insert(0usize) += 1;
    }
    let feat = |s: NodeId, d: NodeId| {
        let f = |v| (1.0 + *degree.get(&v).unwrap_or(&0) as f64).ln();
        [1.0, f(s), f(d)]
    };
    let tn = sample_negatives(train, &universe, 1, seed)?;
    let mut xs = Vec::new();
    for (e, n) in train.iter().zip(&tn) {
        xs.push((feat(e.src, e.dst), 1.0));
        xs.push((feat(e.src, n[0]), 0.0));
    }
    let mut w = [0.0f64; 3];
    for _ in 0..2000 {
        let mut g = [0.0; 3];
        for (x, y) in &xs {
            let p = crate::autograd::sigmoid(w.iter().zip(x).map(|(a, b)| a * b).sum());
            for k in 0..3 {
                g[k] += (p - y) * x[k];
            }
        }
        for k in 0..3 {
            w[k] -= 0.5 * g[k] / xs.len() as f64;
        }
    }
    let score = |x: [f64; 3]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let negs = sample_negatives(test, &universe, 1, seed.wrapping_add(1))?;
    let pos: Vec<f64> = test.iter().map(|e| score(feat(e.src, e.dst))).collect();
    let neg: Vec<f64> = test.iter().zip(&negs).map(|(e, n)| score(feat(e.src, n[0]))).collect();
    auc(&pos, &neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub edge: f64,
    pub attr: f64,
    /// Gaussian scale in units of each feature's standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// The sweep's single-knob form: both fractions at `level`, σ = 1.
    pub fn level(level: f64, seed: u64) -> Self {
        Self { edge: level, attr: level, sigma: 1.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge) || !(0.0..=1.0).contains(&self.attr) || !(self.sigma >= 0.0) {
            bail!(InvalidArgument, "noise fractions must lie in [0, 1] and σ must be non-negative");
        }
        Ok(())
    }
}

/// Replaces `⌊p_e·|E|⌋` destinations and perturbs the features of
/// `⌊p_a·|E|⌋` events. Timestamps never change.
pub fn inject_noise(events: &[Event], spec: &NoiseSpec) -> Result<Vec<Event>> {
    spec.validate()?;
    let mut out = events.to_vec();
    let n = events.len();
    let universe = node_universe(events);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k_edge = (spec.edge * n as f64).floor() as usize;
    for i in sample(&mut rng, n, k_edge).into_iter() {
        let e = &mut out[i];
        let (src, orig) = (e.src, e.dst);
        let choices: Vec<NodeId> = universe.iter().copied().filter(|v| *v != src && *v != orig).collect();
        if choices.is_empty() {
            bail!(InvalidInput, "no replacement destination for event {i}");
        }
        e.dst = choices[rng.gen_range(0..choices.len())];
    }
    let k_attr = (spec.attr * n as f64).floor() as usize;
    let nf = events.first().map_or(0, |e| e.features.len());
    if k_attr > 0 && nf > 0 && spec.sigma > 0.0 {
        let std: Vec<f64> = (0..nf)
            .map(|f| {
                let mean = events.iter().map(|e| e.features[f]).sum::<f64>() / n as f64;
                (events.iter().map(|e| (e.features[f] - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
            })
            .collect();
        for i in sample(&mut rng, n, k_attr).into_iter() {
            for (f, s) in std.iter().enumerate() {
                if *s > 0.0 {
                    let d = Normal::new(0.0, spec.sigma * s).expect("positive scale");
                    out[i].features[f] += d.sample(&mut rng);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub f: usize,
    pub amp_feature: f64,
    pub amp_interarrival: f64,
}

/// Amplitude spectra of one edge feature and of the inter-arrival gaps over
/// the first `window` events. The first gap is taken as 0.
pub fn spectrum(events: &[Event], window: usize, feature: usize) -> Result<Vec<SpectrumRow>> {
    if window == 0 || window > events.len() {
        bail!(InvalidArgument, "window {window} must lie in 1..={}", events.len());
    }
    let head = &events[..window];
    let nf = head[0].features.len();
    if feature >= nf {
        bail!(InvalidArgument, "feature index {feature} out of range for {nf} features");
    }
    let x: Vec<f64> = head.iter().map(|e| e.features[feature]).collect();
    let gaps: Vec<f64> = (0..window).map(|i| if i == 0 { 0.0 } else { head[i].t - head[i - 1].t }).collect();
    let ax = magnitude(&dft(&ComplexVector::from_real(&x))?);
    let ag = magnitude(&dft(&ComplexVector::from_real(&gaps))?);
    Ok((0..window).map(|f| SpectrumRow { f, amp_feature: ax[f], amp_interarrival: ag[f] }).collect())
}

/// Share of one-sided spectral energy in bins below `W/8`.
pub fn low_band_fraction(amplitudes: &[f64]) -> f64 {
    let w = amplitudes.len();
    let one_sided = &amplitudes[..=w / 2];
    let total: f64 = one_sided.iter().map(|a| a * a).sum();
    if total == 0.0 {
        return 0.0;
    }
    one_sided.iter().take(w / 8).map(|a| a * a).sum::<f64>() / total
}

pub fn write_spectrum_csv(w: impl Write, rows: &[SpectrumRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_spectrum_csv(r: impl std::io::Read) -> Result<Vec<SpectrumRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub const DEFAULT_NOISE_LEVELS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub variant: Attention,
    pub seed: u64,
    pub auc: f64,
    pub ap: f64,
}

/// Trains every (level, variant, seed) cell on a noisy copy of the stream
/// and reports test AUC/AP.
pub fn noise_sweep(
    dataset: &Dataset,
    levels: &[f64],
    variants: &[Attention],
    seeds: &[u64],
    base: &TrainConfig,
    on_row: &mut dyn FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        bail!(InvalidArgument, "noise levels must lie in [0, 1]");
    }
    let mut rows = Vec::new();
    for &level in levels {
        for &seed in seeds {
            let noisy = Dataset::new(inject_noise(&dataset.events, &NoiseSpec::level(level, seed))?, dataset.mode)?;
            for &variant in variants {
                let cfg = TrainConfig { attention: variant, seed, ..*base };
                let out = train(&cfg, &noisy)?;
                let row = SweepRow { level, variant, seed, auc: out.summary.test.auc, ap: out.summary.test.ap };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(w: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sweep_csv(r: impl std::io::Read) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean of `f` over rows matching `keep`.
pub fn mean_by<T>(rows: &[T], keep: impl Fn(&T) -> bool, f: impl Fn(&T) -> f64) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter(|r| keep(r)).map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// The model variants compared in an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Dot-product attention in both branches.
    WGat,
    /// Ungated spectral attention.
    WoFgatN,
    /// Plain linear state update.
    WoGlobal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::WGat, Variant::WoFgatN, Variant::WoGlobal];

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        match self {
            Variant::Full => TrainConfig { attention: Attention::FgatN, dynamics: Dynamics::Frequency, ..*base },
            Variant::WGat => TrainConfig { attention: Attention::Gat, dynamics: Dynamics::Frequency, ..*base },
            Variant::WoFgatN => TrainConfig { attention: Attention::Fgat, dynamics: Dynamics::Frequency, ..*base },
            Variant::WoGlobal => TrainConfig { attention: Attention::FgatN, dynamics: Dynamics::TimeLinear, ..*base },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::WGat => "w_gat",
            Variant::WoFgatN => "wo_fgat_n",
            Variant::WoGlobal => "wo_global",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub auc: f64,
    pub ap: f64,
    pub mrr: Option<f64>,
}

pub fn ablate(
    dataset: &Dataset,
    variants: &[Variant],
    seeds: &[u64],
    base: &TrainConfig,
    on_row: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &variant in variants {
            let cfg = TrainConfig { seed, ..variant.apply(base) };
            let out = train(&cfg, dataset)?;
            let t = out.summary.test;
            let row = AblationRow { variant, seed, auc: t.auc, ap: t.ap, mrr: t.mrr };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(w: impl Write, rows: &[AblationRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_ablation_csv(r: impl std::io::Read) -> Result<Vec<AblationRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests;
