//! Per-node memory: messages, the frequency-domain update and batch flushes.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::encodings::{concat, TimeEncoder};
use crate::error::{bail, Result};
use crate::fgat::{init_glorot, init_spectral_weight};
use crate::graph::{Event, Mode, NodeId};
use crate::spectral::next_pow2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    /// `σ(Re(idft(W_d ⊙ F(input))))`.
    #[default]
    Frequency,
    /// `σ(input · W + b)`.
    TimeLinear,
}

impl std::str::FromStr for Dynamics {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frequency" => Ok(Self::Frequency),
            "time-linear" => Ok(Self::TimeLinear),
            other => bail!(InvalidArgument, "unknown dynamics `{other}` (expected frequency or time-linear)"),
        }
    }
}

/// Dimensions of the update input `[S ‖ m ‖ φ(t − t⁻) ‖ x]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDims {
    pub state: usize,
    pub time: usize,
    pub edge: usize,
    pub node: usize,
}

impl StateDims {
    pub fn message(&self) -> usize {
        self.state + self.time + self.edge
    }

    pub fn input(&self) -> usize {
        self.state + self.message() + self.time + self.node
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub dims: StateDims,
    pub dynamics: Dynamics,
    /// Complex 1×len spectrum (frequency) or input×state matrix (time-linear).
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub len: usize,
}

impl StateParams {
    pub fn init(store: &mut ParamStore, dims: StateDims, dynamics: Dynamics, rng: &mut impl Rng) -> Self {
        match dynamics {
            Dynamics::Frequency => {
                let len = next_pow2(dims.input());
                let weight = store.add("state.wd", init_spectral_weight(rng, len));
                Self { dims, dynamics, weight, bias: None, len }
            }
            Dynamics::TimeLinear => {
                let weight = store.add("state.w", init_glorot(rng, dims.input(), dims.state));
                let bias = store.add("state.b", Tensor::zeros(1, dims.state, false));
                Self { dims, dynamics, weight, bias: Some(bias), len: dims.input() }
            }
        }
    }
}

/// A staged message awaiting the next flush.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub message: Option<Vec<f64>>,
    pub t: f64,
}

/// Inputs of the most recent applied update, kept so a training step can
/// replay it on a tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub prev_s: Vec<f64>,
    pub prev_t: f64,
    pub message: Option<Vec<f64>>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub s: Vec<f64>,
    pub t_prev: f64,
    pub pending: Option<Pending>,
    #[serde(skip)]
    pub last_update: Option<UpdateRecord>,
}

impl NodeState {
    pub fn zero(dim: usize) -> Self {
        Self { s: vec![0.0; dim], t_prev: 0.0, pending: None, last_update: None }
    }
}

/// Assembles `[S ‖ m ‖ φ(t − t⁻) ‖ x]`; a missing message becomes zeros.
pub fn update_input(
    dims: &StateDims,
    s: &[f64],
    message: Option<&[f64]>,
    t_prev: f64,
    t: f64,
    enc: &TimeEncoder,
) -> Result<Vec<f64>> {
    if t < t_prev {
        bail!(TemporalOrder, "update at t={t} precedes last update t={t_prev}");
    }
    if s.len() != dims.state {
        bail!(Dimension, "state has {} entries, expected {}", s.len(), dims.state);
    }
    let zeros = vec![0.0; dims.message()];
    let m = message.unwrap_or(&zeros);
    if m.len() != dims.message() {
        bail!(Dimension, "message has {} entries, expected {}", m.len(), dims.message());
    }
    let phi = enc.encode(t - t_prev)?;
    let x = vec![0.0; dims.node];
    Ok(concat(&[s, m, &phi, &x]))
}

/// The update function on a tape, with `input` held constant.
pub fn update_on_tape(tape: &mut Tape<'_>, params: &StateParams, input: &[f64]) -> Var {
    let x = tape.row(input);
    let pre = match params.dynamics {
        Dynamics::Frequency => {
            let f = tape.rfft(x, params.len);
            let w = tape.cparam(params.weight);
            let p = tape.cmul_row(f, w);
            let back = tape.ifft(p);
            let re = tape.real_part(back);
            tape.resize_cols(re, params.dims.state)
        }
        Dynamics::TimeLinear => {
            let w = tape.param(params.weight);
            let b = tape.param(params.bias.expect("time-linear dynamics carry a bias"));
            let y = tape.matmul(x, w);
            tape.add_row(y, b)
        }
    };
    tape.sigmoid(pre)
}

/// Applies one update and returns the new state with `t⁻ = t`.
pub fn update_state(
    store: &ParamStore,
    params: &StateParams,
    state: &NodeState,
    message: Option<&[f64]>,
    t: f64,
    enc: &TimeEncoder,
) -> Result<NodeState> {
    let input = update_input(&params.dims, &state.s, message, state.t_prev, t, enc)?;
    let mut tape = Tape::new(store);
    let out = update_on_tape(&mut tape, params, &input);
    let s = tape.value(out).re.clone();
    Ok(NodeState {
        s,
        t_prev: t,
        pending: None,
        last_update: Some(UpdateRecord {
            prev_s: state.s.clone(),
            prev_t: state.t_prev,
            message: message.map(<[f64]>::to_vec),
            t,
        }),
    })
}

/// Re-runs a recorded update on a tape so the update weights receive
/// gradient.
pub fn replay_update(tape: &mut Tape<'_>, params: &StateParams, record: &UpdateRecord, enc: &TimeEncoder) -> Result<Var> {
    let input = update_input(&params.dims, &record.prev_s, record.message.as_deref(), record.prev_t, record.t, enc)?;
    Ok(update_on_tape(tape, params, &input))
}

/// Node memory table. Unseen nodes read as the zero state at `t⁻ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStore {
    dims: StateDims,
    mode: Mode,
    states: BTreeMap<NodeId, NodeState>,
    default: NodeState,
}

impl StateStore {
    pub fn new(dims: StateDims, mode: Mode) -> Self {
        Self { dims, mode, states: BTreeMap::new(), default: NodeState::zero(dims.state) }
    }

    pub fn dims(&self) -> &StateDims {
        &self.dims
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn get(&self, node: NodeId) -> &NodeState {
        self.states.get(&node).unwrap_or(&self.default)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &NodeState)> {
        self.states.iter().map(|(k, v)| (*k, v))
    }

    pub fn has_pending(&self) -> bool {
        self.states.values().any(|s| s.pending.is_some())
    }

    /// `[S(t⁻) ‖ φ(t − t⁻) ‖ e]` for `node` receiving `event`.
    pub fn compute_message(&self, node: NodeId, event: &Event, enc: &TimeEncoder) -> Result<Vec<f64>> {
        if self.mode == Mode::Dtdg {
            bail!(Mode, "snapshot graphs update state without messages");
        }
        if event.features.len() != self.dims.edge {
            bail!(Dimension, "event carries {} features, expected {}", event.features.len(), self.dims.edge);
        }
        let st = self.get(node);
        if event.t < st.t_prev {
            bail!(TemporalOrder, "event at t={} precedes node {node}'s last update t={}", event.t, st.t_prev);
        }
        let phi = enc.encode(event.t - st.t_prev)?;
        Ok(concat(&[&st.s, &phi, &event.features]))
    }

    /// Stages updates for both endpoints; a later event to the same node
    /// replaces its earlier pending message.
    pub fn stage(&mut self, event: &Event, enc: &TimeEncoder) -> Result<()> {
        let ends: &[NodeId] = if event.src == event.dst { &[event.src] } else { &[event.src, event.dst] };
        for &v in ends {
            let message = match self.mode {
                Mode::Ctdg => Some(self.compute_message(v, event, enc)?),
                Mode::Dtdg => {
                    if event.t < self.get(v).t_prev {
                        bail!(TemporalOrder, "event at t={} precedes node {v}'s last update", event.t);
                    }
                    None
                }
            };
            let entry = self.states.entry(v).or_insert_with(|| self.default.clone());
            entry.pending = Some(Pending { message, t: event.t });
        }
        Ok(())
    }

    /// Applies every pending update. Returns the updated nodes in id order.
    pub fn flush(&mut self, store: &ParamStore, params: &StateParams, enc: &TimeEncoder) -> Result<Vec<NodeId>> {
        let mut touched = Vec::new();
        for (node, st) in self.states.iter_mut() {
            if let Some(p) = st.pending.take() {
                *st = update_state(store, params, st, p.message.as_deref(), p.t, enc)?;
                touched.push(*node);
            }
        }
        Ok(touched)
    }

    /// One `{node, t, s}` JSON object per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for (node, st) in &self.states {
            serde_json::to_writer(&mut w, &StateLine { node: *node, t: st.t_prev, s: st.s.clone() })?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl(dims: StateDims, mode: Mode, r: impl BufRead) -> Result<Self> {
        let mut store = Self::new(dims, mode);
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StateLine =
                serde_json::from_str(&line).map_err(|e| crate::Error::Parse { line: i + 1, message: e.to_string() })?;
            if rec.s.len() != dims.state {
                return Err(crate::Error::Parse { line: i + 1, message: format!("state of length {}", rec.s.len()) });
            }
            store.states.insert(rec.node, NodeState { s: rec.s, t_prev: rec.t, pending: None, last_update: None });
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct StateLine {
    node: NodeId,
    t: f64,
    s: Vec<f64>,
}

#[cfg(test)]
mod tests;
