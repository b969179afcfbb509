//! Divided temporal message passing: a time branch over `φ(t − t_j)`, an
//! attribute branch over `[e_j ‖ S_j]`, fused by an FFN with a residual.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::encodings::TimeEncoder;
use crate::error::{bail, Result};
use crate::fgat::{
    fgat_layer, fgat_n_layer, gat_layer, init_glorot, AttentionVars, FgatNParams, FgatParams, GatParams, GateRule,
};
use crate::graph::{Event, NodeId, TemporalGraph};
use crate::spectral::next_pow2;
use crate::state::StateStore;

/// Which attention runs in each branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    /// FGAT for time, FGAT_N for attributes.
    #[default]
    FgatN,
    /// FGAT in both branches.
    Fgat,
    /// Real dot-product attention in both branches.
    Gat,
}

impl std::str::FromStr for Attention {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgat_n" | "fgat-n" => Ok(Self::FgatN),
            "fgat" => Ok(Self::Fgat),
            "gat" => Ok(Self::Gat),
            other => bail!(InvalidArgument, "unknown attention `{other}` (expected fgat_n, fgat or gat)"),
        }
    }
}

impl std::fmt::Display for Attention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Attention::FgatN => "fgat_n",
            Attention::Fgat => "fgat",
            Attention::Gat => "gat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding dimension `d`; the node state has the same size.
    pub dim: usize,
    pub time_dim: usize,
    pub edge_dim: usize,
    pub neighbors: usize,
    pub theta: f64,
    pub gate_rule: GateRule,
    pub attention: Attention,
}

impl EncoderConfig {
    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn time_len(&self) -> usize {
        next_pow2(self.time_dim)
    }

    /// Longest of `[Z ‖ S]` and `[e ‖ S]`, rounded up to a power of two.
    pub fn attr_len(&self) -> usize {
        next_pow2((self.dim + self.state_dim()).max(self.edge_dim + self.state_dim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Branch {
    Fgat(FgatParams),
    FgatN(FgatNParams),
    Gat(GatParams),
}

impl Branch {
    fn apply(&self, tape: &mut Tape<'_>, input: &AttentionVars) -> Result<Var> {
        match self {
            Branch::Fgat(p) => fgat_layer(tape, input, p),
            Branch::FgatN(p) => fgat_n_layer(tape, input, p),
            Branch::Gat(p) => gat_layer(tape, input, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub time: Branch,
    pub attr: Branch,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl EncoderParams {
    pub fn init(store: &mut ParamStore, config: EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = config.dim;
        let (tl, al) = (config.time_len(), config.attr_len());
        let (time, attr) = match config.attention {
            Attention::FgatN => (
                Branch::Fgat(FgatParams::init(store, "time", tl, d, rng)),
                Branch::FgatN(FgatNParams::init(store, "attr", al, d, config.theta, config.gate_rule, rng)),
            ),
            Attention::Fgat => (
                Branch::Fgat(FgatParams::init(store, "time", tl, d, rng)),
                Branch::Fgat(FgatParams::init(store, "attr", al, d, rng)),
            ),
            Attention::Gat => (
                Branch::Gat(GatParams::init(store, "time", config.time_dim, config.time_dim, d, d, rng)),
                Branch::Gat(GatParams::init(
                    store,
                    "attr",
                    d + config.state_dim(),
                    config.edge_dim + config.state_dim(),
                    d,
                    d,
                    rng,
                )),
            ),
        };
        Self {
            config,
            time,
            attr,
            w1: store.add("ffn.w1", init_glorot(rng, 2 * d, 2 * d)),
            b1: store.add("ffn.b1", Tensor::zeros(1, 2 * d, false)),
            w2: store.add("ffn.w2", init_glorot(rng, 2 * d, d)),
            b2: store.add("ffn.b2", Tensor::zeros(1, d, false)),
        }
    }
}

/// Outputs of one embedding on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EmbedVars {
    pub z_time: Var,
    pub z_attr: Var,
    pub z: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEmbedding {
    pub node: NodeId,
    pub t: f64,
    pub z: Vec<f64>,
}

/// Builds `Z_i(t)` on `tape`. `state` yields `S_v` as a tape variable
/// (1×d_s) for any node the computation touches.
pub fn embed_on_tape(
    tape: &mut Tape<'_>,
    params: &EncoderParams,
    enc: &TimeEncoder,
    graph: &TemporalGraph,
    node: NodeId,
    t: f64,
    state: &mut dyn FnMut(&mut Tape<'_>, NodeId) -> Result<Var>,
) -> Result<EmbedVars> {
    let cfg = &params.config;
    if enc.dim() != cfg.time_dim {
        bail!(Dimension, "time encoder has {} dims, encoder expects {}", enc.dim(), cfg.time_dim);
    }
    let n = cfg.neighbors;
    let nb = graph.sample_recent_neighbors(node, t, n);

    let s_i = state(tape, node)?;
    let z_prev = tape.resize_cols(s_i, cfg.dim);

    // time branch
    let mut rows = vec![0.0; n * cfg.time_dim];
    for slot in 0..n {
        if nb.valid[slot] {
            rows[slot * cfg.time_dim..(slot + 1) * cfg.time_dim].copy_from_slice(&enc.encode(t - nb.times[slot])?);
        }
    }
    let tq = tape.row(&enc.zero());
    let tk = tape.leaf(Tensor::real(n, cfg.time_dim, rows));
    let time_in = AttentionVars { query: tq, keys: tk, values: tk, mask: nb.valid.clone() };
    let z_time = params.time.apply(tape, &time_in)?;

    // attribute branch
    let mut edge = vec![0.0; n * cfg.edge_dim];
    for slot in 0..n {
        if nb.valid[slot] {
            if nb.features[slot].len() != cfg.edge_dim {
                bail!(Dimension, "neighbor edge carries {} features, expected {}", nb.features[slot].len(), cfg.edge_dim);
            }
            edge[slot * cfg.edge_dim..(slot + 1) * cfg.edge_dim].copy_from_slice(&nb.features[slot]);
        }
    }
    let zero_state = tape.leaf(Tensor::zeros(1, cfg.state_dim(), false));
    let mut s_rows = Vec::with_capacity(n);
    for slot in 0..n {
        s_rows.push(if nb.valid[slot] { state(tape, nb.neighbors[slot])? } else { zero_state });
    }
    let aq = tape.concat_cols(&[z_prev, s_i]);
    let s_stack = tape.stack_rows(&s_rows);
    let ak = if cfg.edge_dim > 0 {
        let e = tape.leaf(Tensor::real(n, cfg.edge_dim, edge));
        tape.concat_cols(&[e, s_stack])
    } else {
        s_stack
    };
    let attr_in = AttentionVars { query: aq, keys: ak, values: ak, mask: nb.valid };
    let z_attr = params.attr.apply(tape, &attr_in)?;

    // fusion
    let h = tape.concat_cols(&[z_time, z_attr]);
    let w1 = tape.param(params.w1);
    let b1 = tape.param(params.b1);
    let w2 = tape.param(params.w2);
    let b2 = tape.param(params.b2);
    let h1 = tape.matmul(h, w1);
    let h1 = tape.add_row(h1, b1);
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(h1, w2);
    let h2 = tape.add_row(h2, b2);
    let h2 = tape.relu(h2);
    let z = tape.add(z_prev, h2);
    Ok(EmbedVars { z_time, z_attr, z })
}

/// Reads stored states as constants.
pub fn constant_states<'s>(states: &'s StateStore) -> impl FnMut(&mut Tape<'_>, NodeId) -> Result<Var> + 's {
    let mut cache: BTreeMap<NodeId, Var> = BTreeMap::new();
    move |tape, v| {
        if let Some(var) = cache.get(&v) {
            return Ok(*var);
        }
        let var = tape.row(&states.get(v).s);
        cache.insert(v, var);
        Ok(var)
    }
}

/// Inference-only embedding of `node` at time `t`.
pub fn embed(
    store: &ParamStore,
    params: &EncoderParams,
    enc: &TimeEncoder,
    graph: &TemporalGraph,
    states: &StateStore,
    node: NodeId,
    t: f64,
) -> Result<TemporalEmbedding> {
    let mut tape = Tape::new(store);
    let mut src = constant_states(states);
    let out = embed_on_tape(&mut tape, params, enc, graph, node, t, &mut src)?;
    let z = tape.value(out.z).re.clone();
    if !z.iter().all(|x| x.is_finite()) {
        bail!(Numeric, "embedding of node {node} at t={t} is not finite");
    }
    Ok(TemporalEmbedding { node, t, z })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Src,
    Dst,
}

/// Embeds the chosen endpoint of every event at the event time.
pub fn embed_batch(
    store: &ParamStore,
    params: &EncoderParams,
    enc: &TimeEncoder,
    graph: &TemporalGraph,
    states: &StateStore,
    events: &[Event],
    side: Side,
) -> Result<Vec<TemporalEmbedding>> {
    events
        .iter()
        .map(|e| {
            let node = match side {
                Side::Src => e.src,
                Side::Dst => e.dst,
            };
            embed(store, params, enc, graph, states, node, e.t)
        })
        .collect()
}
