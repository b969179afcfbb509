//! Fourier graph attention, its energy-gated variant and a real-valued
//! dot-product attention baseline.
//!
//! Every layer is written against the [`Tape`] so gradients come for free;
//! the `*_values` wrappers run a throwaway tape for inference and tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{masked_softmax_values, CVar, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{bail, Result};
use crate::spectral::{cmul, dft, ComplexVector};

/// Gate decisions closer than this to the threshold mark the evaluation as
/// non-differentiable for gradient checks.
pub const GATE_BOUNDARY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateRule {
    /// Keep components whose relative energy is at least θ.
    #[default]
    KeepHighEnergy,
    /// Keep components whose raw energy `|P_f|²` is below θ.
    KeepLowRawEnergy,
}

impl std::str::FromStr for GateRule {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep-high-energy" | "default" => Ok(Self::KeepHighEnergy),
            "keep-low-raw-energy" => Ok(Self::KeepLowRawEnergy),
            other => bail!(InvalidArgument, "unknown gate rule `{other}`"),
        }
    }
}

/// Uniform complex init: re and im each in `±sqrt(6 / (2·len)) / √2`.
pub fn init_spectral_weight(rng: &mut impl Rng, len: usize) -> Tensor {
    let bound = (6.0 / (2.0 * len as f64)).sqrt() / std::f64::consts::SQRT_2;
    let mut draw = || (0..len).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<_>>();
    let re = draw();
    let im = draw();
    Tensor::complex(1, len, re, im)
}

/// Glorot-uniform real matrix.
pub fn init_glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::real(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// Spectral weights of one FGAT layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgatParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// Transform length; every weight spectrum has this length.
    pub len: usize,
    /// Output dimension after truncation.
    pub out_dim: usize,
}

impl FgatParams {
    pub fn init(store: &mut ParamStore, prefix: &str, len: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            wq: store.add(format!("{prefix}.wq"), init_spectral_weight(rng, len)),
            wk: store.add(format!("{prefix}.wk"), init_spectral_weight(rng, len)),
            wv: store.add(format!("{prefix}.wv"), init_spectral_weight(rng, len)),
            len,
            out_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: ParamId,
    pub b: ParamId,
    pub theta: f64,
    pub rule: GateRule,
}

impl GateParams {
    /// `W_G` uses the spectral init; `B` starts small but non-zero so the
    /// masked components keep a usable gradient through the magnitude.
    pub fn init(store: &mut ParamStore, prefix: &str, len: usize, theta: f64, rule: GateRule, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{prefix}.w"), init_spectral_weight(rng, len));
        let mut b = init_spectral_weight(rng, len);
        b.scalars_mut().for_each(|v| *v *= 0.1);
        let b = store.add(format!("{prefix}.b"), b);
        Self { w, b, theta, rule }
    }
}

/// The three gates of an FGAT_N layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgatNParams {
    pub q: GateParams,
    pub k: GateParams,
    pub v: GateParams,
    pub len: usize,
    pub out_dim: usize,
}

impl FgatNParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        len: usize,
        out_dim: usize,
        theta: f64,
        rule: GateRule,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            q: GateParams::init(store, &format!("{prefix}.q"), len, theta, rule, rng),
            k: GateParams::init(store, &format!("{prefix}.k"), len, theta, rule, rng),
            v: GateParams::init(store, &format!("{prefix}.v"), len, theta, rule, rng),
            len,
            out_dim,
        }
    }
}

/// Real projection weights of the dot-product baseline:
/// `W_q` is dq×h, `W_k` is dk×h and `W_v` is dk×d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl GatParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dq: usize, dk: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            wq: store.add(format!("{prefix}.wq"), init_glorot(rng, dq, hidden)),
            wk: store.add(format!("{prefix}.wk"), init_glorot(rng, dk, hidden)),
            wv: store.add(format!("{prefix}.wv"), init_glorot(rng, dk, out_dim)),
        }
    }
}

/// Query (1×dq), keys and values (N×dk) already on a tape.
#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub query: Var,
    pub keys: Var,
    pub values: Var,
    pub mask: Vec<bool>,
}

/// Plain-vector attention input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInput {
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl AttentionInput {
    pub fn validate(&self) -> Result<()> {
        if self.keys.len() != self.values.len() || self.keys.len() != self.mask.len() {
            bail!(
                Dimension,
                "{} keys, {} values and {} mask entries",
                self.keys.len(),
                self.values.len(),
                self.mask.len()
            );
        }
        for (k, v) in self.keys.iter().zip(&self.values) {
            if k.len() != v.len() || k.len() != self.keys[0].len() {
                bail!(Dimension, "keys and values must share one dimension");
            }
        }
        Ok(())
    }

    pub fn to_tape(&self, tape: &mut Tape<'_>) -> Result<AttentionVars> {
        self.validate()?;
        let query = tape.row(&self.query);
        let dk = self.keys.first().map_or(0, |k| k.len());
        let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<_>>();
        let keys = tape.leaf(Tensor::real(self.keys.len(), dk, flat(&self.keys)));
        let values = tape.leaf(Tensor::real(self.values.len(), dk, flat(&self.values)));
        Ok(AttentionVars { query, keys, values, mask: self.mask.clone() })
    }
}

/// `α_j = softmax_j(Σ_f |A_jf|)` over valid rows; the plain-vector form of
/// the scoring used inside the layers.
pub fn magnitude_softmax(scores: &[ComplexVector], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        bail!(Dimension, "{} scores but {} mask entries", scores.len(), mask.len());
    }
    if scores.iter().any(|s| !s.is_finite()) {
        bail!(Numeric, "attention scores must be finite");
    }
    let mags: Vec<f64> = scores.iter().map(|s| crate::spectral::magnitude(s).iter().sum()).collect();
    Ok(masked_softmax_values(&mags, mask))
}

fn check_shapes(tape: &Tape<'_>, input: &AttentionVars, len: usize) -> Result<(usize, usize)> {
    let (qr, qc) = tape.value(input.query).shape();
    let (kr, kc) = tape.value(input.keys).shape();
    let (vr, vc) = tape.value(input.values).shape();
    if qr != 1 || kr != vr || kc != vc || kr != input.mask.len() {
        bail!(Dimension, "query {qr}x{qc}, keys {kr}x{kc}, values {vr}x{vc}, mask {}", input.mask.len());
    }
    if qc > len || kc > len {
        bail!(Dimension, "inputs of width {qc}/{kc} exceed transform length {len}");
    }
    Ok((kr, kc))
}

fn check_spectrum(tape: &Tape<'_>, id: ParamId, len: usize) -> Result<()> {
    let t = tape.params().value(id);
    if !t.is_complex() || t.shape() != (1, len) {
        bail!(Dimension, "spectral weight `{}` has shape {:?}, expected 1x{len}", tape.params().get(id).name, t.shape());
    }
    Ok(())
}

fn zero_output(tape: &mut Tape<'_>, d: usize) -> Var {
    tape.leaf(Tensor::zeros(1, d, false))
}

/// Gate mask for each row of `p` (rows × len), plus whether any component
/// sits within [`GATE_BOUNDARY`] of the threshold.
pub fn gate_mask(p: &Tensor, theta: f64, rule: GateRule) -> (Vec<f64>, bool) {
    let (rows, cols) = p.shape();
    let mut mask = vec![0.0; rows * cols];
    let mut near = false;
    for r in 0..rows {
        let energy: Vec<f64> =
            (r * cols..(r + 1) * cols).map(|k| p.re[k] * p.re[k] + p.im()[k] * p.im()[k]).collect();
        let mean = energy.iter().sum::<f64>() / cols as f64;
        for (f, e) in energy.iter().enumerate() {
            let (score, keep) = match rule {
                GateRule::KeepHighEnergy => {
                    let rel = if mean > 0.0 { e / mean } else { 0.0 };
                    (rel, rel >= theta)
                }
                GateRule::KeepLowRawEnergy => (*e, *e < theta),
            };
            if (score - theta).abs() < GATE_BOUNDARY {
                near = true;
            }
            mask[r * cols + f] = if keep { 1.0 } else { 0.0 };
        }
    }
    (mask, near)
}

/// `W_G ⊙ (P ⊙ M) + B` applied to every row of `p`.
pub fn energy_gate(tape: &mut Tape<'_>, p: CVar, gate: &GateParams) -> Result<CVar> {
    let len = tape.cvalue(p).cols();
    check_spectrum(tape, gate.w, len)?;
    check_spectrum(tape, gate.b, len)?;
    if !(gate.theta >= 0.0) {
        bail!(InvalidArgument, "gate threshold must be non-negative, got {}", gate.theta);
    }
    let (mask, near) = gate_mask(tape.cvalue(p), gate.theta, gate.rule);
    tape.note_branch(mask.iter().map(|m| *m > 0.0));
    if near {
        tape.flag_kink();
    }
    let masked = tape.cmask(p, mask);
    let w = tape.cparam(gate.w);
    let b = tape.cparam(gate.b);
    let scaled = tape.cmul_row(masked, w);
    Ok(tape.cadd_row(scaled, b))
}

/// Plain-vector energy gate.
pub fn energy_gate_values(
    p: &ComplexVector,
    w: &ComplexVector,
    b: &ComplexVector,
    theta: f64,
    rule: GateRule,
) -> Result<ComplexVector> {
    if p.len() != w.len() || p.len() != b.len() {
        bail!(Dimension, "gate lengths {} / {} / {}", p.len(), w.len(), b.len());
    }
    let (mask, _) = gate_mask(&Tensor::from_complex_vector(p), theta, rule);
    let masked = ComplexVector {
        re: p.re.iter().zip(&mask).map(|(x, m)| x * m).collect(),
        im: p.im.iter().zip(&mask).map(|(x, m)| x * m).collect(),
    };
    let mut out = cmul(w, &masked)?;
    for f in 0..out.len() {
        out.re[f] += b.re[f];
        out.im[f] += b.im[f];
    }
    Ok(out)
}

/// Shared tail: scores from projected spectra, softmax, aggregation, inverse
/// transform and truncation.
fn attend(tape: &mut Tape<'_>, q: CVar, k: CVar, v: CVar, mask: &[bool], out_dim: usize) -> Var {
    let a = tape.cmul_row(k, q);
    let mag = tape.magnitude(a);
    let score = tape.sum_cols(mag);
    let alpha = tape.masked_softmax(score, mask);
    let agg = tape.weighted_rows(alpha, v);
    let back = tape.ifft(agg);
    let re = tape.real_part(back);
    tape.resize_cols(re, out_dim)
}

/// Fourier graph attention for one query node; returns a 1×out_dim row.
pub fn fgat_layer(tape: &mut Tape<'_>, input: &AttentionVars, params: &FgatParams) -> Result<Var> {
    let len = params.len;
    check_shapes(tape, input, len)?;
    for id in [params.wq, params.wk, params.wv] {
        check_spectrum(tape, id, len)?;
    }
    if !input.mask.iter().any(|m| *m) {
        return Ok(zero_output(tape, params.out_dim));
    }
    let fq = tape.rfft(input.query, len);
    let fk = tape.rfft(input.keys, len);
    let fv = if input.values == input.keys { fk } else { tape.rfft(input.values, len) };
    let wq = tape.cparam(params.wq);
    let wk = tape.cparam(params.wk);
    let wv = tape.cparam(params.wv);
    let q = tape.cmul_row(fq, wq);
    let k = tape.cmul_row(fk, wk);
    let v = tape.cmul_row(fv, wv);
    Ok(attend(tape, q, k, v, &input.mask, params.out_dim))
}

/// FGAT with each spectral projection replaced by an energy gate.
pub fn fgat_n_layer(tape: &mut Tape<'_>, input: &AttentionVars, params: &FgatNParams) -> Result<Var> {
    let len = params.len;
    check_shapes(tape, input, len)?;
    if !input.mask.iter().any(|m| *m) {
        return Ok(zero_output(tape, params.out_dim));
    }
    let fq = tape.rfft(input.query, len);
    let fk = tape.rfft(input.keys, len);
    let fv = if input.values == input.keys { fk } else { tape.rfft(input.values, len) };
    let q = energy_gate(tape, fq, &params.q)?;
    let k = energy_gate(tape, fk, &params.k)?;
    let v = energy_gate(tape, fv, &params.v)?;
    Ok(attend(tape, q, k, v, &input.mask, params.out_dim))
}

/// Scaled dot-product attention in the time domain.
pub fn gat_layer(tape: &mut Tape<'_>, input: &AttentionVars, params: &GatParams) -> Result<Var> {
    let store = tape.params();
    let (wq, wk, wv) = (store.value(params.wq), store.value(params.wk), store.value(params.wv));
    let (kr, kc) = check_shapes(tape, input, usize::MAX)?;
    let qc = tape.value(input.query).cols();
    if wq.rows() != qc || wk.rows() != kc || wv.rows() != kc || wq.cols() != wk.cols() {
        bail!(
            Dimension,
            "baseline weights {:?}/{:?}/{:?} do not fit query {qc} and keys {kc}",
            wq.shape(),
            wk.shape(),
            wv.shape()
        );
    }
    let hidden = wq.cols();
    let out_dim = wv.cols();
    if kr == 0 || !input.mask.iter().any(|m| *m) {
        return Ok(zero_output(tape, out_dim));
    }
    let pq = tape.param(params.wq);
    let pk = tape.param(params.wk);
    let pv = tape.param(params.wv);
    let q = tape.matmul(input.query, pq);
    let k = tape.matmul(input.keys, pk);
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt);
    let s = tape.scale(s, 1.0 / (hidden as f64).sqrt());
    let s = tape.transpose(s);
    let alpha = tape.masked_softmax(s, &input.mask);
    let v = tape.matmul(input.values, pv);
    let at = tape.transpose(alpha);
    Ok(tape.matmul(at, v))
}

fn run_values(store: &ParamStore, input: &AttentionInput, f: impl FnOnce(&mut Tape<'_>, &AttentionVars) -> Result<Var>) -> Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let vars = input.to_tape(&mut tape)?;
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).re.clone())
}

pub fn fgat_values(store: &ParamStore, params: &FgatParams, input: &AttentionInput) -> Result<Vec<f64>> {
    run_values(store, input, |t, v| fgat_layer(t, v, params))
}

pub fn fgat_n_values(store: &ParamStore, params: &FgatNParams, input: &AttentionInput) -> Result<Vec<f64>> {
    run_values(store, input, |t, v| fgat_n_layer(t, v, params))
}

pub fn gat_values(store: &ParamStore, params: &GatParams, input: &AttentionInput) -> Result<Vec<f64>> {
    run_values(store, input, |t, v| gat_layer(t, v, params))
}

/// Spectrum of a zero-padded real vector; convenience for callers that need
/// the transform outside a tape.
pub fn padded_spectrum(x: &[f64], len: usize) -> Result<ComplexVector> {
    dft(&ComplexVector::from_real(&crate::encodings::pad_or_truncate(x, len)))
}
