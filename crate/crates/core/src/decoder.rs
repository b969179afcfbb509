//! Link decoder, negative sampling and the training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{bce_value, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{bail, Result};
use crate::fgat::init_glorot;
use crate::graph::{Event, NodeId};

/// `FFN([Z_src ‖ Z_dst])`: 2d → d (ReLU) → 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkDecoder {
    pub dim: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl LinkDecoder {
    pub fn init(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            dim,
            w1: store.add("dec.w1", init_glorot(rng, 2 * dim, dim)),
            b1: store.add("dec.b1", Tensor::zeros(1, dim, false)),
            w2: store.add("dec.w2", init_glorot(rng, dim, 1)),
            b2: store.add("dec.b2", Tensor::zeros(1, 1, false)),
        }
    }

    /// Logits (rows×1) for row-aligned source and destination embeddings.
    pub fn on_tape(&self, tape: &mut Tape<'_>, src: Var, dst: Var) -> Var {
        let h = tape.concat_cols(&[src, dst]);
        let w1 = tape.param(self.w1);
        let b1 = tape.param(self.b1);
        let w2 = tape.param(self.w2);
        let b2 = tape.param(self.b2);
        let h = tape.matmul(h, w1);
        let h = tape.add_row(h, b1);
        let h = tape.relu(h);
        let out = tape.matmul(h, w2);
        tape.add_row(out, b2)
    }

    /// `z · W1[:d]`, the source half of the hidden pre-activation.
    pub fn project_src(&self, store: &ParamStore, z: &[f64]) -> Vec<f64> {
        self.project(store, z, 0)
    }

    /// `z · W1[d:]`.
    pub fn project_dst(&self, store: &ParamStore, z: &[f64]) -> Vec<f64> {
        self.project(store, z, self.dim)
    }

    fn project(&self, store: &ParamStore, z: &[f64], row0: usize) -> Vec<f64> {
        let w = store.value(self.w1);
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, zi) in z.iter().enumerate() {
            let row = &w.re[(row0 + i) * d..(row0 + i + 1) * d];
            for (o, wij) in out.iter_mut().zip(row) {
                *o += zi * wij;
            }
        }
        out
    }

    /// Finishes a logit from the two projected halves. Matches `on_tape` up
    /// to summation order.
    pub fn logit_from_halves(&self, store: &ParamStore, src: &[f64], dst: &[f64]) -> f64 {
        let (b1, w2, b2) = (store.value(self.b1), store.value(self.w2), store.value(self.b2));
        let mut acc = b2.re[0];
        for j in 0..self.dim {
            acc += (src[j] + dst[j] + b1.re[j]).max(0.0) * w2.re[j];
        }
        acc
    }
}

pub fn decode_link(store: &ParamStore, decoder: &LinkDecoder, z_src: &[f64], z_dst: &[f64]) -> Result<f64> {
    if z_src.len() != decoder.dim || z_dst.len() != decoder.dim {
        bail!(Dimension, "embeddings of length {} and {}, decoder expects {}", z_src.len(), z_dst.len(), decoder.dim);
    }
    let mut tape = Tape::new(store);
    let s = tape.row(z_src);
    let d = tape.row(z_dst);
    let out = decoder.on_tape(&mut tape, s, d);
    Ok(tape.value(out).re[0])
}

/// `k` uniform destinations per event, never the event's own destination.
pub fn sample_negatives_with(
    batch: &[Event],
    universe: &[NodeId],
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<NodeId>>> {
    if universe.is_empty() {
        bail!(InvalidArgument, "negative sampling needs a non-empty node universe");
    }
    let mut out = Vec::with_capacity(batch.len());
    for e in batch {
        if universe.iter().all(|v| *v == e.dst) {
            bail!(InvalidArgument, "universe holds only the true destination {}; nothing to sample", e.dst);
        }
        let mut row = Vec::with_capacity(k);
        while row.len() < k {
            let v = universe[rng.gen_range(0..universe.len())];
            if v != e.dst {
                row.push(v);
            }
        }
        out.push(row);
    }
    Ok(out)
}

pub fn sample_negatives(batch: &[Event], universe: &[NodeId], k: usize, seed: u64) -> Result<Vec<Vec<NodeId>>> {
    sample_negatives_with(batch, universe, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Mean binary cross-entropy with logits.
pub fn bce_loss(pos: &[f64], neg: &[f64]) -> f64 {
    bce_value(pos, neg)
}
