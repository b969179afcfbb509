//! The unified training loop, streaming evaluation and checkpoints.
//!
//! Each batch is embedded against the state and neighbor logs as they stood
//! before the batch, scored, and only then folded into the stores. Validation
//! and test continue the same stream without gradient steps.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, ParamGrads, ParamStore, Tape, Tensor, Var};
use crate::decoder::{sample_negatives, sample_negatives_with, LinkDecoder};
use crate::encoder::{constant_states, embed_on_tape, Attention, EncoderConfig, EncoderParams};
use crate::encodings::TimeEncoder;
use crate::error::{bail, Result};
use crate::fgat::GateRule;
use crate::graph::{
    chronological_split, make_minibatches, mask_inductive_nodes, node_universe, sort_events, time_groups, AuditStats,
    Event, Mode, NodeId, Split, SplitConfig, TemporalGraph,
};
use crate::metrics::{ap, auc, reciprocal_rank};
use crate::state::{replay_update, Dynamics, StateDims, StateParams, StateStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub neighbors: usize,
    pub theta: f64,
    /// 0 freezes the parameters (no optimizer step).
    pub lr: f64,
    pub dim: usize,
    pub time_dim: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub attention: Attention,
    pub dynamics: Dynamics,
    pub gate_rule: GateRule,
    pub window: Option<f64>,
    pub split: SplitConfig,
    /// Negatives per positive for MRR.
    pub mrr_negatives: usize,
    /// MRR is always computed for snapshot graphs; for event streams only
    /// when asked, since it costs 100 extra embeddings per event.
    pub ctdg_mrr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ctdg,
            batch_size: 600,
            neighbors: 12,
            theta: 0.2,
            lr: 1e-4,
            dim: 100,
            time_dim: 100,
            epochs: 50,
            patience: 5,
            seed: 0,
            attention: Attention::default(),
            dynamics: Dynamics::default(),
            gate_rule: GateRule::default(),
            window: None,
            split: SplitConfig::default(),
            mrr_negatives: 100,
            ctdg_mrr: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("neighbors", self.neighbors),
            ("dim", self.dim),
            ("time_dim", self.time_dim),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("mrr_negatives", self.mrr_negatives),
        ];
        for (name, v) in counts {
            if v == 0 {
                bail!(InvalidArgument, "{name} must be positive");
            }
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            bail!(InvalidArgument, "theta must be positive, got {}", self.theta);
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            bail!(InvalidArgument, "learning rate must be finite and non-negative, got {}", self.lr);
        }
        if let Some(w) = self.window {
            if !(w > 0.0) {
                bail!(InvalidArgument, "window must be positive, got {w}");
            }
        }
        if !(0.0..1.0).contains(&self.split.inductive_fraction) {
            bail!(InvalidArgument, "inductive fraction must lie in [0, 1)");
        }
        self.split.validate()
    }

    pub fn wants_mrr(&self) -> bool {
        self.mode == Mode::Dtdg || self.ctdg_mrr
    }

    pub fn encoder(&self, edge_dim: usize) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            time_dim: self.time_dim,
            edge_dim,
            neighbors: self.neighbors,
            theta: self.theta,
            gate_rule: self.gate_rule,
            attention: self.attention,
        }
    }
}

/// A time-sorted event stream with a fixed edge-feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub events: Vec<Event>,
    pub mode: Mode,
    pub edge_dim: usize,
}

impl Dataset {
    pub fn new(mut events: Vec<Event>, mode: Mode) -> Result<Self> {
        if events.is_empty() {
            bail!(InvalidInput, "dataset has no events");
        }
        let edge_dim = events[0].features.len();
        if let Some((i, e)) = events.iter().enumerate().find(|(_, e)| e.features.len() != edge_dim) {
            bail!(InvalidInput, "event {i} has {} features, expected {edge_dim}", e.features.len());
        }
        if events.iter().any(|e| !e.t.is_finite() || e.features.iter().any(|f| !f.is_finite())) {
            bail!(InvalidInput, "timestamps and features must be finite");
        }
        if !sort_events(&mut events) {
            warn!("events were not in time order; sorted them");
        }
        Ok(Self { events, mode, edge_dim })
    }
}

/// Parameters of the whole model plus the configuration that shaped them.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub edge_dim: usize,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub state: StateParams,
    pub decoder: LinkDecoder,
    pub time_encoder: TimeEncoder,
}

impl Model {
    pub fn new(config: &TrainConfig, edge_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::init(&mut store, config.encoder(edge_dim), &mut rng);
        let dims = StateDims { state: config.dim, time: config.time_dim, edge: edge_dim, node: 0 };
        let state = StateParams::init(&mut store, dims, config.dynamics, &mut rng);
        let decoder = LinkDecoder::init(&mut store, config.dim, &mut rng);
        Ok(Self {
            config: *config,
            edge_dim,
            store,
            encoder,
            state,
            decoder,
            time_encoder: TimeEncoder::new(config.time_dim)?,
        })
    }

    pub fn state_dims(&self) -> StateDims {
        self.state.dims
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            config: self.config,
            edge_dim: self.edge_dim,
            shapes: shape_headers(&self.store),
            params: self.store.clone(),
        };
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: CheckpointFile = serde_json::from_reader(r)?;
        if file.format != CHECKPOINT_FORMAT || file.version != 1 {
            bail!(InvalidInput, "{} is not a version-1 model checkpoint", path.display());
        }
        let mut model = Model::new(&file.config, file.edge_dim)?;
        if file.shapes != shape_headers(&model.store) || shape_headers(&file.params) != file.shapes {
            bail!(InvalidInput, "checkpoint shapes do not match the configured model");
        }
        model.store.load_values(&file.params)?;
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "unidyg-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ShapeHeader {
    name: String,
    rows: usize,
    cols: usize,
    complex: bool,
}

fn shape_headers(store: &ParamStore) -> Vec<ShapeHeader> {
    store
        .iter()
        .map(|(_, p)| ShapeHeader {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            complex: p.value.is_complex(),
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: TrainConfig,
    edge_dim: usize,
    shapes: Vec<ShapeHeader>,
    params: ParamStore,
}

/// Neighbor logs and node memory evolving along one pass over the stream.
#[derive(Debug, Clone)]
pub struct Stream {
    pub graph: TemporalGraph,
    pub states: StateStore,
}

impl Stream {
    pub fn new(model: &Model) -> Self {
        Self { graph: TemporalGraph::new(model.config.window), states: StateStore::new(model.state_dims(), model.config.mode) }
    }

    /// Folds a processed batch into the stores; `flush` applies staged
    /// state updates.
    pub fn advance(&mut self, model: &Model, batch: &[Event], flush: bool) -> Result<()> {
        self.graph.ingest_all(batch)?;
        for e in batch {
            self.states.stage(e, &model.time_encoder)?;
        }
        if flush {
            self.states.flush(&model.store, &model.state, &model.time_encoder)?;
        }
        Ok(())
    }
}

/// Batch ranges and whether state is flushed after each. Event streams flush
/// every batch; snapshot graphs batch within a snapshot and flush at its end.
pub fn plan_batches(events: &[Event], mode: Mode, batch_size: usize) -> Result<Vec<(Range<usize>, bool)>> {
    let mut out = Vec::new();
    match mode {
        Mode::Ctdg => {
            let mut start = 0;
            for b in make_minibatches(events, batch_size)? {
                out.push((start..start + b.len(), true));
                start += b.len();
            }
        }
        Mode::Dtdg => {
            for g in time_groups(events) {
                let mut start = g.start;
                for b in make_minibatches(&events[g.clone()], batch_size)? {
                    let end = start + b.len();
                    out.push((start..end, end == g.end));
                    start = end;
                }
            }
        }
    }
    Ok(out)
}

/// Node states as tape variables. A node updated by the last flush replays
/// that update so the update weights get gradient; the stored value is kept
/// exactly by adding the constant gap between stored and replayed values.
fn replay_states<'a>(model: &'a Model, states: &'a StateStore) -> impl FnMut(&mut Tape<'_>, NodeId) -> Result<Var> + 'a {
    let mut cache: HashMap<NodeId, Var> = HashMap::new();
    move |tape, v| {
        if let Some(var) = cache.get(&v) {
            return Ok(*var);
        }
        let st = states.get(v);
        let var = match &st.last_update {
            Some(rec) => {
                let r = replay_update(tape, &model.state, rec, &model.time_encoder)?;
                let gap: Vec<f64> = st.s.iter().zip(&tape.value(r).re).map(|(s, x)| s - x).collect();
                if gap.iter().all(|g| *g == 0.0) {
                    r
                } else {
                    let c = tape.row(&gap);
                    tape.add(r, c)
                }
            }
            None => tape.row(&st.s),
        };
        cache.insert(v, var);
        Ok(var)
    }
}

/// Upper bound on tape nodes held at once during a batch (a node of the
/// default model averages a few kilobytes).
const TAPE_NODE_BUDGET: usize = 150_000;

fn time_key(t: f64) -> u64 {
    t.to_bits()
}

/// Dense per-parameter gradient sums, added to the store in id order.
struct GradSum(Vec<Option<Tensor>>);

impl GradSum {
    fn new(n: usize) -> Self {
        Self(vec![None; n])
    }

    fn add(&mut self, g: ParamGrads) {
        for (id, t) in g.0 {
            match &mut self.0[id.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        }
    }

    fn into_grads(self) -> ParamGrads {
        ParamGrads(
            self.0
                .into_iter()
                .enumerate()
                .filter_map(|(i, t)| t.map(|t| (crate::autograd::ParamId(i), t)))
                .collect(),
        )
    }
}

/// One gradient step on a batch; returns the batch loss.
fn train_batch(model: &mut Model, stream: &Stream, batch: &[Event], negs: &[NodeId], adam: Option<&mut Adam>) -> Result<f64> {
    let mut index: HashMap<(NodeId, u64), usize> = HashMap::new();
    let mut queries: Vec<(NodeId, f64)> = Vec::new();
    let mut slot = |v: NodeId, t: f64| {
        *index.entry((v, time_key(t))).or_insert_with(|| {
            queries.push((v, t));
            queries.len() - 1
        })
    };
    let pairs: Vec<(usize, usize, usize)> = batch.iter().zip(negs).map(|(e, n)| (slot(e.src, e.t), slot(e.dst, e.t), slot(*n, e.t))).collect();

    // Forward every query once. Tapes are kept for the backward pass while
    // they fit the budget; the rest are rebuilt after the loss is known.
    let mut zs = Vec::with_capacity(queries.len());
    let mut kept: Vec<Option<(Tape<'_>, Var)>> = Vec::with_capacity(queries.len());
    let mut kept_nodes = 0usize;
    for &(v, t) in &queries {
        let mut tape = Tape::new(&model.store);
        let mut src = replay_states(model, &stream.states);
        let out = embed_on_tape(&mut tape, &model.encoder, &model.time_encoder, &stream.graph, v, t, &mut src)?;
        zs.push(tape.value(out.z).re.clone());
        if kept_nodes + tape.len() <= TAPE_NODE_BUDGET {
            kept_nodes += tape.len();
            kept.push(Some((tape, out.z)));
        } else {
            kept.push(None);
        }
    }

    // decoder and loss with embeddings as leaves
    let mut sum = GradSum::new(model.store.len());
    let (loss, z_grads) = {
        let mut tape = Tape::new(&model.store);
        let leaves: Vec<Var> = zs.iter().map(|z| tape.row(z)).collect();
        let src = tape.stack_rows(&pairs.iter().map(|p| leaves[p.0]).collect::<Vec<_>>());
        let dst = tape.stack_rows(&pairs.iter().map(|p| leaves[p.1]).collect::<Vec<_>>());
        let neg = tape.stack_rows(&pairs.iter().map(|p| leaves[p.2]).collect::<Vec<_>>());
        let pos_logit = model.decoder.on_tape(&mut tape, src, dst);
        let neg_logit = model.decoder.on_tape(&mut tape, src, neg);
        let loss_var = tape.bce_with_logits(pos_logit, neg_logit);
        let loss = tape.value(loss_var).re[0];
        if !loss.is_finite() {
            bail!(Numeric, "non-finite loss {loss}; batch dump: {}", batch_dump(batch, negs, &tape, pos_logit, neg_logit));
        }
        let grads = tape.backward(loss_var)?;
        sum.add(tape.param_grads(&grads));
        let z_grads: Vec<Tensor> = leaves.iter().map(|l| grads.wrt_or_zero(&tape, *l)).collect();
        (loss, z_grads)
    };

    // back through each embedding
    for ((&(v, t), g), slot) in queries.iter().zip(z_grads).zip(kept) {
        if g.re.iter().all(|x| *x == 0.0) {
            continue;
        }
        let (tape, z) = match slot {
            Some(k) => k,
            None => {
                let mut tape = Tape::new(&model.store);
                let mut src = replay_states(model, &stream.states);
                let out = embed_on_tape(&mut tape, &model.encoder, &model.time_encoder, &stream.graph, v, t, &mut src)?;
                (tape, out.z)
            }
        };
        let grads = tape.backward_from(z, g);
        sum.add(tape.param_grads(&grads));
    }

    model.store.accumulate(&sum.into_grads());
    match adam {
        Some(adam) => adam.step(&mut model.store)?,
        None => model.store.zero_grad(),
    }
    Ok(loss)
}

fn batch_dump(batch: &[Event], negs: &[NodeId], tape: &Tape<'_>, pos: Var, neg: Var) -> String {
    #[derive(Serialize)]
    struct Row<'a> {
        src: NodeId,
        dst: NodeId,
        neg: NodeId,
        t: f64,
        features: &'a [f64],
        pos_logit: f64,
        neg_logit: f64,
    }
    let (pl, nl) = (&tape.value(pos).re, &tape.value(neg).re);
    let rows: Vec<Row> = batch
        .iter()
        .zip(negs)
        .enumerate()
        .filter(|(i, _)| !pl[*i].is_finite() || !nl[*i].is_finite())
        .take(20)
        .map(|(i, (e, n))| Row { src: e.src, dst: e.dst, neg: *n, t: e.t, features: &e.features, pos_logit: pl[i], neg_logit: nl[i] })
        .collect();
    serde_json::to_string(&rows).unwrap_or_default()
}

/// Validation/test negatives, drawn once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalNegatives {
    pub one: Vec<NodeId>,
    /// Empty when MRR is not computed.
    pub many: Vec<Vec<NodeId>>,
}

impl EvalNegatives {
    pub fn draw(events: &[Event], universe: &[NodeId], mrr_k: Option<usize>, seed: u64) -> Result<Self> {
        let one = sample_negatives(events, universe, 1, seed)?.into_iter().map(|v| v[0]).collect();
        let many = match mrr_k {
            Some(k) => sample_negatives(events, universe, k, seed ^ 0x5eed_0f_4d_52_52)?,
            None => Vec::new(),
        };
        Ok(Self { one, many })
    }

    /// Order-sensitive FNV-1a digest, recorded in the split sidecar.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.one.iter().chain(self.many.iter().flatten()) {
            for b in (*v as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Everything fixed before the first epoch.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub events: Vec<Event>,
    pub split: Split,
    /// Training events after inductive masking.
    pub train: Vec<Event>,
    pub masked: BTreeSet<NodeId>,
    pub universe: Vec<NodeId>,
    pub train_universe: Vec<NodeId>,
    pub val_negatives: EvalNegatives,
    pub test_negatives: EvalNegatives,
}

impl Prepared {
    pub fn val(&self) -> &[Event] {
        &self.events[self.split.val.clone()]
    }

    pub fn test(&self) -> &[Event] {
        &self.events[self.split.test.clone()]
    }
}

pub fn prepare(config: &TrainConfig, dataset: &Dataset) -> Result<Prepared> {
    config.validate()?;
    if config.mode != dataset.mode {
        bail!(Mode, "configuration is {} but the dataset is {}", config.mode, dataset.mode);
    }
    let events = dataset.events.clone();
    let split_cfg = SplitConfig { seed: config.seed, ..config.split };
    let split = chronological_split(&events, &split_cfg, config.mode)?;
    let universe = node_universe(&events);
    let raw_train = &events[split.train.clone()];
    let (train, masked) = if config.mode == Mode::Ctdg && config.split.inductive_fraction > 0.0 {
        mask_inductive_nodes(raw_train, &universe, config.split.inductive_fraction, config.seed)?
    } else {
        (raw_train.to_vec(), BTreeSet::new())
    };
    if train.is_empty() {
        bail!(InvalidInput, "inductive masking removed every training event");
    }
    let train_universe = node_universe(&train);
    let mrr_k = config.wants_mrr().then_some(config.mrr_negatives);
    let val_negatives = EvalNegatives::draw(&events[split.val.clone()], &universe, mrr_k, config.seed.wrapping_add(1))?;
    let test_negatives = EvalNegatives::draw(&events[split.test.clone()], &universe, mrr_k, config.seed.wrapping_add(2))?;
    Ok(Prepared { events, split, train, masked, universe, train_universe, val_negatives, test_negatives })
}

/// Scores of one evaluation pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scores {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    /// Reciprocal rank per event; empty without MRR negatives.
    pub rr: Vec<f64>,
}

/// Scores `events` against the stream, folding each batch in afterwards.
pub fn score_stream(model: &Model, stream: &mut Stream, events: &[Event], negs: &EvalNegatives) -> Result<Scores> {
    if negs.one.len() != events.len() || (!negs.many.is_empty() && negs.many.len() != events.len()) {
        bail!(Dimension, "negatives do not line up with {} events", events.len());
    }
    let mut out = Scores::default();
    let mut cache: HashMap<(NodeId, u64), (Vec<f64>, Vec<f64>)> = HashMap::new();
    for (range, flush) in plan_batches(events, model.config.mode, model.config.batch_size)? {
        {
            let mut proj = |v: NodeId, t: f64| -> Result<(Vec<f64>, Vec<f64>)> {
                if let Some(p) = cache.get(&(v, time_key(t))) {
                    return Ok(p.clone());
                }
                let mut tape = Tape::new(&model.store);
                let mut src = constant_states(&stream.states);
                let e = embed_on_tape(&mut tape, &model.encoder, &model.time_encoder, &stream.graph, v, t, &mut src)?;
                let z = &tape.value(e.z).re;
                if z.iter().any(|x| !x.is_finite()) {
                    bail!(Numeric, "embedding of node {v} at t={t} is not finite");
                }
                let p = (model.decoder.project_src(&model.store, z), model.decoder.project_dst(&model.store, z));
                cache.insert((v, time_key(t)), p.clone());
                Ok(p)
            };
            for i in range.clone() {
                let e = &events[i];
                let (s, _) = proj(e.src, e.t)?;
                let (_, d) = proj(e.dst, e.t)?;
                let (_, n) = proj(negs.one[i], e.t)?;
                let p = model.decoder.logit_from_halves(&model.store, &s, &d);
                out.pos.push(p);
                out.neg.push(model.decoder.logit_from_halves(&model.store, &s, &n));
                if !negs.many.is_empty() {
                    let mut ns = Vec::with_capacity(negs.many[i].len());
                    for &v in &negs.many[i] {
                        let (_, d) = proj(v, e.t)?;
                        ns.push(model.decoder.logit_from_halves(&model.store, &s, &d));
                    }
                    out.rr.push(reciprocal_rank(p, &ns));
                }
            }
        }
        stream.advance(model, &events[range], flush)?;
        if flush {
            cache.clear();
        }
    }
    Ok(out)
}

/// Replays events into the stream without scoring them.
pub fn warm_stream(model: &Model, stream: &mut Stream, events: &[Event]) -> Result<()> {
    for (range, flush) in plan_batches(events, model.config.mode, model.config.batch_size)? {
        stream.advance(model, &events[range], flush)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_auc: f64,
    pub val_ap: f64,
    pub val_mrr: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub auc: f64,
    pub ap: f64,
    pub mrr: Option<f64>,
    /// Over test events touching a node hidden from training.
    pub inductive_auc: Option<f64>,
    pub inductive_ap: Option<f64>,
    pub inductive_events: usize,
}

/// Deterministic outcome of a run; per-epoch timings live in the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub epoch_losses: Vec<f64>,
    pub test: TestMetrics,
    pub audit: AuditStats,
    pub masked_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochLog>,
    pub summary: TrainSummary,
    pub prepared: Prepared,
}

fn add_audit(total: &mut AuditStats, a: AuditStats) {
    total.samples += a.samples;
    total.entries += a.entries;
    total.violations += a.violations;
}

fn metrics_from(scores: &Scores) -> Result<(f64, f64, Option<f64>)> {
    let mrr = (!scores.rr.is_empty()).then(|| scores.rr.iter().sum::<f64>() / scores.rr.len() as f64);
    Ok((auc(&scores.pos, &scores.neg)?, ap(&scores.pos, &scores.neg)?, mrr))
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(config, dataset, &mut |_| {})
}

/// Trains with early stopping; `on_epoch` sees every epoch record as it is
/// produced.
pub fn train_with(config: &TrainConfig, dataset: &Dataset, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let prepared = prepare(config, dataset)?;
    let mut model = Model::new(config, dataset.edge_dim)?;
    let mut adam = (config.lr > 0.0).then(|| Adam::new(AdamConfig::with_lr(config.lr)));
    let mut audit = AuditStats::default();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut wait = 0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut stream = Stream::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (range, flush) in plan_batches(&prepared.train, config.mode, config.batch_size)? {
            let batch = &prepared.train[range];
            let negs: Vec<NodeId> = sample_negatives_with(batch, &prepared.train_universe, 1, &mut rng)?
                .into_iter()
                .map(|v| v[0])
                .collect();
            let loss = train_batch(&mut model, &stream, batch, &negs, adam.as_mut())?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            stream.advance(&model, batch, flush)?;
        }
        let scores = score_stream(&model, &mut stream, prepared.val(), &prepared.val_negatives)?;
        add_audit(&mut audit, stream.graph.audit());
        let (val_auc, val_ap, val_mrr) = metrics_from(&scores)?;
        let log = EpochLog {
            epoch,
            loss: loss_sum / seen as f64,
            val_auc,
            val_ap,
            val_mrr,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.5} val auc {:.4} ap {:.4} mrr {} ({:.1}s)",
            log.loss,
            log.val_auc,
            log.val_ap,
            log.val_mrr.map_or("-".to_string(), |m| format!("{m:.4}")),
            log.seconds
        );
        on_epoch(&log);
        epochs.push(log);

        let score = match config.mode {
            Mode::Ctdg => val_ap,
            Mode::Dtdg => val_mrr.unwrap_or(val_ap),
        };
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, epoch, model.store.flat_values()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (best_val, best_epoch, values) = best.expect("at least one epoch runs");
    model.store.set_flat_values(&values);
    let (test, test_audit) = evaluate_prepared(&model, &prepared)?;
    add_audit(&mut audit, test_audit);
    let summary = TrainSummary {
        config: *config,
        epochs_run: epochs.len(),
        best_epoch,
        best_val,
        epoch_losses: epochs.iter().map(|e| e.loss).collect(),
        test,
        audit,
        masked_nodes: prepared.masked.len(),
    };
    Ok(TrainOutcome { model, epochs, summary, prepared })
}

/// Rebuilds the stream through train and validation, then scores the test
/// range.
pub fn evaluate_prepared(model: &Model, prepared: &Prepared) -> Result<(TestMetrics, AuditStats)> {
    let mut stream = Stream::new(model);
    warm_stream(model, &mut stream, &prepared.train)?;
    warm_stream(model, &mut stream, prepared.val())?;
    let test = prepared.test();
    let scores = score_stream(model, &mut stream, test, &prepared.test_negatives)?;
    let (auc_all, ap_all, mrr) = metrics_from(&scores)?;
    let inductive: Vec<usize> = (0..test.len())
        .filter(|i| prepared.masked.contains(&test[*i].src) || prepared.masked.contains(&test[*i].dst))
        .collect();
    let (inductive_auc, inductive_ap) = if inductive.is_empty() {
        (None, None)
    } else {
        let pos: Vec<f64> = inductive.iter().map(|i| scores.pos[*i]).collect();
        let neg: Vec<f64> = inductive.iter().map(|i| scores.neg[*i]).collect();
        (Some(auc(&pos, &neg)?), Some(ap(&pos, &neg)?))
    };
    let metrics = TestMetrics { auc: auc_all, ap: ap_all, mrr, inductive_auc, inductive_ap, inductive_events: inductive.len() };
    Ok((metrics, stream.graph.audit()))
}

/// Test metrics of a trained model on `dataset`, split as during training.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<TestMetrics> {
    let prepared = prepare(&model.config, dataset)?;
    Ok(evaluate_prepared(model, &prepared)?.0)
}
