//! Reverse-mode automatic differentiation over real and complex matrices.
//!
//! Complex values are differentiated through their real-pair view: the
//! gradient of a complex node is stored as `∂L/∂re + i·∂L/∂im`. Every op
//! records its inputs by node id; node ids only increase, and backward walks
//! them in strictly decreasing order.

mod gradcheck;
mod param;
mod tensor;

use std::collections::HashMap;
use std::rc::Rc;

pub use gradcheck::{grad_check, grad_check_coords, grad_check_tape, GradCheckReport, Input, Probe};
pub use param::{adam_step, Adam, AdamConfig, AdamState, ParamGrads, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use crate::error::{bail, Result};
use crate::spectral::transform_in_place;

/// Handle to a real-valued node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Handle to a complex-valued node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CVar(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

impl CVar {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Magnitudes below this have zero gradient.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    ConcatCols(Vec<usize>),
    StackRows(Vec<usize>),
    Resize(usize),
    SumAll(usize),
    SumCols(usize),
    MaskedSoftmax(usize, Rc<Vec<bool>>),
    Bce(usize, usize),
    Rfft(usize),
    Fft(usize),
    Ifft(usize),
    RealPart(usize),
    ImagPart(usize),
    Complex(usize, usize),
    CMul(usize, usize),
    CMulRow(usize, usize),
    CMask(usize, Rc<Vec<f64>>),
    Magnitude(usize),
    WeightedRows(usize, usize),
}

#[derive(Debug)]
enum Slot {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    slot: Slot,
    op: Op,
}

/// Append-only record of one forward pass.
///
/// Parameter leaves borrow their values from the [`ParamStore`] instead of
/// copying them. The tape also keeps a signature of every discrete branch
/// taken (ReLU patterns, gate masks) and a flag for evaluations that hit a
/// non-differentiable point; gradient checks use both.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, usize>,
    signature: u64,
    kink: bool,
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(7)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: HashMap::new(), signature: 0xcbf2_9ce4_8422_2325, kink: false }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of all discrete decisions made so far.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    /// Whether any op was evaluated at a non-differentiable point.
    pub fn hit_kink(&self) -> bool {
        self.kink
    }

    pub fn note_branch(&mut self, bits: impl IntoIterator<Item = bool>) {
        let mut h = self.signature;
        for (i, b) in bits.into_iter().enumerate() {
            if b {
                h = mix(h, i as u64 + 1);
            }
        }
        self.signature = mix(h, 0x9e37_79b9);
    }

    pub fn flag_kink(&mut self) {
        self.kink = true;
    }

    fn push(&mut self, value: Tensor, op: Op) -> usize {
        self.nodes.push(Node { slot: Slot::Owned(value), op });
        self.nodes.len() - 1
    }

    fn val(&self, i: usize) -> &Tensor {
        match &self.nodes[i].slot {
            Slot::Owned(t) => t,
            Slot::Param(id) => self.params.value(*id),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v.0)
    }

    pub fn cvalue(&self, v: CVar) -> &Tensor {
        self.val(v.0)
    }

    // ----- leaves -----

    pub fn leaf(&mut self, t: Tensor) -> Var {
        assert!(!t.is_complex(), "leaf() takes a real tensor; use cleaf()");
        Var(self.push(t, Op::Leaf))
    }

    pub fn cleaf(&mut self, t: Tensor) -> CVar {
        assert!(t.is_complex(), "cleaf() takes a complex tensor");
        CVar(self.push(t, Op::Leaf))
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.leaf(Tensor::row(values))
    }

    fn param_node(&mut self, id: ParamId) -> usize {
        if let Some(&i) = self.param_nodes.get(&id) {
            return i;
        }
        self.nodes.push(Node { slot: Slot::Param(id), op: Op::Param });
        let i = self.nodes.len() - 1;
        self.param_nodes.insert(id, i);
        i
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(!self.params.value(id).is_complex(), "parameter `{}` is complex", self.params.get(id).name);
        Var(self.param_node(id))
    }

    pub fn cparam(&mut self, id: ParamId) -> CVar {
        assert!(self.params.value(id).is_complex(), "parameter `{}` is real", self.params.get(id).name);
        CVar(self.param_node(id))
    }

    // ----- real ops -----

    fn binary_same(&self, a: usize, b: usize, what: &str) {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!(ta.shape(), tb.shape(), "{what}: shape mismatch");
        assert_eq!(ta.is_complex(), tb.is_complex(), "{what}: real/complex mismatch");
    }

    fn zip_map(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.val(a), self.val(b));
        let re = ta.re.iter().zip(&tb.re).map(|(x, y)| f(*x, *y)).collect();
        match (&ta.im, &tb.im) {
            (Some(ia), Some(ib)) => {
                Tensor::complex(ta.rows(), ta.cols(), re, ia.iter().zip(ib).map(|(x, y)| f(*x, *y)).collect())
            }
            _ => Tensor::real(ta.rows(), ta.cols(), re),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a.0, b.0, "add");
        let t = self.zip_map(a.0, b.0, |x, y| x + y);
        Var(self.push(t, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a.0, b.0, "sub");
        let t = self.zip_map(a.0, b.0, |x, y| x - y);
        Var(self.push(t, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a.0, b.0, "mul");
        let t = self.zip_map(a.0, b.0, |x, y| x * y);
        Var(self.push(t, Op::Mul(a.0, b.0)))
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> CVar {
        self.binary_same(a.0, b.0, "cadd");
        let t = self.zip_map(a.0, b.0, |x, y| x + y);
        CVar(self.push(t, Op::Add(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.val(a.0).clone();
        t.scalars_mut().for_each(|v| *v *= c);
        Var(self.push(t, Op::Scale(a.0, c)))
    }

    fn add_row_impl(&mut self, a: usize, b: usize) -> usize {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!(tb.rows(), 1, "add_row: bias must be a row");
        assert_eq!(ta.cols(), tb.cols(), "add_row: column mismatch");
        assert_eq!(ta.is_complex(), tb.is_complex(), "add_row: real/complex mismatch");
        let c = ta.cols();
        let mut t = ta.clone();
        for (k, v) in t.re.iter_mut().enumerate() {
            *v += tb.re[k % c];
        }
        if let (Some(im), Some(bim)) = (t.im.as_mut(), tb.im.as_ref()) {
            for (k, v) in im.iter_mut().enumerate() {
                *v += bim[k % c];
            }
        }
        self.push(t, Op::AddRow(a, b))
    }

    /// `a + b` with `b` (1×c) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        Var(self.add_row_impl(a.0, b.0))
    }

    pub fn cadd_row(&mut self, a: CVar, b: CVar) -> CVar {
        CVar(self.add_row_impl(a.0, b.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        let (r, k) = ta.shape();
        let (k2, c) = tb.shape();
        assert_eq!(k, k2, "matmul: inner dimensions {k} and {k2}");
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let av = ta.re[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.re[p * c..(p + 1) * c];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Var(self.push(Tensor::real(r, c, out), Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.val(a.0);
        let (r, c) = t.shape();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.re[i * c + j];
            }
        }
        Var(self.push(Tensor::real(c, r, out), Op::Transpose(a.0)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.val(a.0);
        let out = Tensor::real(t.rows(), t.cols(), t.re.iter().map(|v| v.max(0.0)).collect());
        let pattern: Vec<bool> = t.re.iter().map(|v| *v > 0.0).collect();
        self.note_branch(pattern);
        Var(self.push(out, Op::Relu(a.0)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.val(a.0);
        let out = Tensor::real(t.rows(), t.cols(), t.re.iter().map(|v| sigmoid(*v)).collect());
        Var(self.push(out, Op::Sigmoid(a.0)))
    }

    /// Horizontal concatenation of real matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.val(parts[0].0).rows();
        let total: usize = parts.iter().map(|p| self.val(p.0).cols()).sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for p in parts {
            let t = self.val(p.0);
            assert_eq!(t.rows(), rows, "concat_cols: row mismatch");
            assert!(!t.is_complex(), "concat_cols: complex input");
            let c = t.cols();
            for i in 0..rows {
                out[i * total + offset..i * total + offset + c].copy_from_slice(&t.re[i * c..(i + 1) * c]);
            }
            offset += c;
        }
        Var(self.push(Tensor::real(rows, total, out), Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// Vertical stacking of real matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows of nothing");
        let cols = self.val(parts[0].0).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.val(p.0);
            assert_eq!(t.cols(), cols, "stack_rows: column mismatch");
            assert!(!t.is_complex(), "stack_rows: complex input");
            out.extend_from_slice(&t.re);
            rows += t.rows();
        }
        Var(self.push(Tensor::real(rows, cols, out), Op::StackRows(parts.iter().map(|p| p.0).collect())))
    }

    /// Zero-pads or truncates every row to `cols` columns.
    pub fn resize_cols(&mut self, a: Var, cols: usize) -> Var {
        let t = self.val(a.0);
        let (r, c) = t.shape();
        let keep = c.min(cols);
        let mut out = vec![0.0; r * cols];
        for i in 0..r {
            out[i * cols..i * cols + keep].copy_from_slice(&t.re[i * c..i * c + keep]);
        }
        Var(self.push(Tensor::real(r, cols, out), Op::Resize(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a.0).re.iter().sum();
        Var(self.push(Tensor::scalar(s), Op::SumAll(a.0)))
    }

    /// Row sums as an r×1 column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.val(a.0);
        let (r, c) = t.shape();
        let out = (0..r).map(|i| t.re[i * c..(i + 1) * c].iter().sum()).collect();
        Var(self.push(Tensor::real(r, 1, out), Op::SumCols(a.0)))
    }

    /// Softmax over the valid entries of a column; invalid entries get 0 and
    /// an all-invalid mask yields all zeros.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Var {
        let t = self.val(scores.0);
        assert_eq!(t.cols(), 1, "masked_softmax expects a column");
        assert_eq!(t.rows(), mask.len(), "masked_softmax: mask length");
        let out = masked_softmax_values(&t.re, mask);
        let (r, _) = t.shape();
        Var(self.push(Tensor::real(r, 1, out), Op::MaskedSoftmax(scores.0, Rc::new(mask.to_vec()))))
    }

    /// Mean binary cross-entropy with logits; `pos` are labelled 1, `neg` 0.
    pub fn bce_with_logits(&mut self, pos: Var, neg: Var) -> Var {
        let loss = bce_value(&self.val(pos.0).re, &self.val(neg.0).re);
        Var(self.push(Tensor::scalar(loss), Op::Bce(pos.0, neg.0)))
    }

    // ----- complex ops -----

    /// Row-wise DFT of a real matrix after zero-padding each row to `len`.
    pub fn rfft(&mut self, a: Var, len: usize) -> CVar {
        let t = self.val(a.0);
        let (r, c) = t.shape();
        assert!(c <= len, "rfft: {c} columns exceed transform length {len}");
        let mut re = vec![0.0; r * len];
        let mut im = vec![0.0; r * len];
        for i in 0..r {
            re[i * len..i * len + c].copy_from_slice(&t.re[i * c..(i + 1) * c]);
            transform_in_place(&mut re[i * len..(i + 1) * len], &mut im[i * len..(i + 1) * len], false);
        }
        CVar(self.push(Tensor::complex(r, len, re, im), Op::Rfft(a.0)))
    }

    /// Row-wise forward DFT of a complex matrix.
    pub fn fft(&mut self, a: CVar) -> CVar {
        let mut t = self.val(a.0).clone();
        rowwise(&mut t, false, 1.0);
        CVar(self.push(t, Op::Fft(a.0)))
    }

    /// Row-wise inverse DFT (with the 1/n factor).
    pub fn ifft(&mut self, a: CVar) -> CVar {
        let mut t = self.val(a.0).clone();
        let n = t.cols();
        rowwise(&mut t, true, 1.0 / n as f64);
        CVar(self.push(t, Op::Ifft(a.0)))
    }

    pub fn real_part(&mut self, a: CVar) -> Var {
        let t = self.val(a.0);
        let out = Tensor::real(t.rows(), t.cols(), t.re.clone());
        Var(self.push(out, Op::RealPart(a.0)))
    }

    pub fn imag_part(&mut self, a: CVar) -> Var {
        let t = self.val(a.0);
        let out = Tensor::real(t.rows(), t.cols(), t.im().to_vec());
        Var(self.push(out, Op::ImagPart(a.0)))
    }

    pub fn complex(&mut self, re: Var, im: Var) -> CVar {
        let (tr, ti) = (self.val(re.0), self.val(im.0));
        assert_eq!(tr.shape(), ti.shape(), "complex: part shapes differ");
        let out = Tensor::complex(tr.rows(), tr.cols(), tr.re.clone(), ti.re.clone());
        CVar(self.push(out, Op::Complex(re.0, im.0)))
    }

    pub fn cmul(&mut self, a: CVar, b: CVar) -> CVar {
        self.binary_same(a.0, b.0, "cmul");
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        let out = cmul_broadcast(ta, tb);
        CVar(self.push(out, Op::CMul(a.0, b.0)))
    }

    /// Element-wise product with the row `w` (1×c) broadcast over rows of `a`.
    pub fn cmul_row(&mut self, a: CVar, w: CVar) -> CVar {
        let (ta, tw) = (self.val(a.0), self.val(w.0));
        assert_eq!(tw.rows(), 1, "cmul_row: weight must be a row");
        assert_eq!(ta.cols(), tw.cols(), "cmul_row: column mismatch {} vs {}", ta.cols(), tw.cols());
        let out = cmul_broadcast(ta, tw);
        CVar(self.push(out, Op::CMulRow(a.0, w.0)))
    }

    /// Multiplies both parts by a constant 0/1 (or any real) mask.
    pub fn cmask(&mut self, a: CVar, mask: Vec<f64>) -> CVar {
        let t = self.val(a.0);
        assert_eq!(mask.len(), t.len(), "cmask: mask length");
        let re = t.re.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let im = t.im().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::complex(t.rows(), t.cols(), re, im);
        CVar(self.push(out, Op::CMask(a.0, Rc::new(mask))))
    }

    /// Element-wise `sqrt(re² + im²)`.
    pub fn magnitude(&mut self, a: CVar) -> Var {
        let t = self.val(a.0);
        let re: Vec<f64> = t.re.iter().zip(t.im()).map(|(r, i)| r.hypot(*i)).collect();
        let kink = re.iter().any(|m| *m < MAGNITUDE_FLOOR);
        let out = Tensor::real(t.rows(), t.cols(), re);
        if kink {
            self.flag_kink();
        }
        Var(self.push(out, Op::Magnitude(a.0)))
    }

    /// `Σ_j w_j · m_j` over rows: `weights` is r×1 real, `m` is r×c complex.
    pub fn weighted_rows(&mut self, weights: Var, m: CVar) -> CVar {
        let (tw, tm) = (self.val(weights.0), self.val(m.0));
        assert_eq!(tw.cols(), 1, "weighted_rows: weights must be a column");
        assert_eq!(tw.rows(), tm.rows(), "weighted_rows: row mismatch");
        let c = tm.cols();
        let mut re = vec![0.0; c];
        let mut im = vec![0.0; c];
        for (j, w) in tw.re.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for f in 0..c {
                re[f] += w * tm.re[j * c + f];
                im[f] += w * tm.im()[j * c + f];
            }
        }
        CVar(self.push(Tensor::complex(1, c, re, im), Op::WeightedRows(weights.0, m.0)))
    }

    // ----- backward -----

    /// Gradients of a 1×1 output with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let t = self.val(loss.0);
        if t.shape() != (1, 1) {
            bail!(InvalidArgument, "backward needs a scalar loss, got shape {:?}", t.shape());
        }
        Ok(self.backward_seeded(loss.0, Tensor::scalar(1.0)))
    }

    /// Vector-Jacobian product from `out` with upstream gradient `seed`.
    pub fn backward_from(&self, out: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.val(out.0).shape(), "seed shape");
        self.backward_seeded(out.0, seed)
    }

    fn backward_seeded(&self, out: usize, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; out + 1];
        grads[out] = Some(seed);
        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], j: usize, t: Tensor| match &mut grads[j] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                let mut n = g.clone();
                n.scalars_mut().for_each(|v| *v = -*v);
                acc(grads, *b, n);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let ga = Tensor::real(g.rows(), g.cols(), g.re.iter().zip(&tb.re).map(|(x, y)| x * y).collect());
                let gb = Tensor::real(g.rows(), g.cols(), g.re.iter().zip(&ta.re).map(|(x, y)| x * y).collect());
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Scale(a, c) => {
                let mut n = g.clone();
                n.scalars_mut().for_each(|v| *v *= c);
                acc(grads, *a, n);
            }
            Op::AddRow(a, b) => {
                acc(grads, *a, g.clone());
                let c = g.cols();
                let mut gb = Tensor::zeros(1, c, g.is_complex());
                for (k, v) in g.re.iter().enumerate() {
                    gb.re[k % c] += v;
                }
                if let Some(gim) = &g.im {
                    let bim = gb.im_mut();
                    for (k, v) in gim.iter().enumerate() {
                        bim[k % c] += v;
                    }
                }
                acc(grads, *b, gb);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (r, k) = ta.shape();
                let c = tb.cols();
                let mut ga = vec![0.0; r * k];
                let mut gb = vec![0.0; k * c];
                for i in 0..r {
                    let grow = &g.re[i * c..(i + 1) * c];
                    for p in 0..k {
                        let brow = &tb.re[p * c..(p + 1) * c];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let av = ta.re[i * k + p];
                        if av != 0.0 {
                            for (o, gv) in gb[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
                acc(grads, *a, Tensor::real(r, k, ga));
                acc(grads, *b, Tensor::real(k, c, gb));
            }
            Op::Transpose(a) => {
                let (r, c) = g.shape();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = g.re[i * c + j];
                    }
                }
                acc(grads, *a, Tensor::real(c, r, out));
            }
            Op::Relu(a) => {
                let ta = self.val(*a);
                let out = g.re.iter().zip(&ta.re).map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 }).collect();
                acc(grads, *a, Tensor::real(g.rows(), g.cols(), out));
            }
            Op::Sigmoid(a) => {
                let y = self.val(i);
                let out = g.re.iter().zip(&y.re).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                acc(grads, *a, Tensor::real(g.rows(), g.cols(), out));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.val(*p).cols();
                    let mut out = vec![0.0; rows * c];
                    for r in 0..rows {
                        out[r * c..(r + 1) * c].copy_from_slice(&g.re[r * total + offset..r * total + offset + c]);
                    }
                    acc(grads, *p, Tensor::real(rows, c, out));
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for p in parts {
                    let r = self.val(*p).rows();
                    acc(grads, *p, Tensor::real(r, cols, g.re[offset * cols..(offset + r) * cols].to_vec()));
                    offset += r;
                }
            }
            Op::Resize(a) => {
                let (r, c) = self.val(*a).shape();
                let cols = g.cols();
                let keep = c.min(cols);
                let mut out = vec![0.0; r * c];
                for row in 0..r {
                    out[row * c..row * c + keep].copy_from_slice(&g.re[row * cols..row * cols + keep]);
                }
                acc(grads, *a, Tensor::real(r, c, out));
            }
            Op::SumAll(a) => {
                let ta = self.val(*a);
                acc(grads, *a, Tensor::real(ta.rows(), ta.cols(), vec![g.re[0]; ta.len()]));
            }
            Op::SumCols(a) => {
                let (r, c) = self.val(*a).shape();
                let out = (0..r * c).map(|k| g.re[k / c]).collect();
                acc(grads, *a, Tensor::real(r, c, out));
            }
            Op::MaskedSoftmax(a, mask) => {
                let y = &self.val(i).re;
                let dot: f64 = y.iter().zip(&g.re).map(|(p, gv)| p * gv).sum();
                let out = y
                    .iter()
                    .zip(&g.re)
                    .zip(mask.iter())
                    .map(|((p, gv), m)| if *m { p * (gv - dot) } else { 0.0 })
                    .collect();
                acc(grads, *a, Tensor::real(y.len(), 1, out));
            }
            Op::Bce(pos, neg) => {
                let (tp, tn) = (self.val(*pos), self.val(*neg));
                let n = (tp.len() + tn.len()) as f64;
                let gp = tp.re.iter().map(|x| g.re[0] * (sigmoid(*x) - 1.0) / n).collect();
                let gn = tn.re.iter().map(|x| g.re[0] * sigmoid(*x) / n).collect();
                acc(grads, *pos, Tensor::real(tp.rows(), tp.cols(), gp));
                acc(grads, *neg, Tensor::real(tn.rows(), tn.cols(), gn));
            }
            Op::Rfft(a) => {
                // adjoint of the DFT is the unnormalized inverse; keep the real part
                let (r, c) = self.val(*a).shape();
                let mut t = g.clone();
                rowwise(&mut t, true, 1.0);
                let len = t.cols();
                let mut out = vec![0.0; r * c];
                for row in 0..r {
                    out[row * c..(row + 1) * c].copy_from_slice(&t.re[row * len..row * len + c]);
                }
                acc(grads, *a, Tensor::real(r, c, out));
            }
            Op::Fft(a) => {
                let mut t = g.clone();
                rowwise(&mut t, true, 1.0);
                acc(grads, *a, t);
            }
            Op::Ifft(a) => {
                let mut t = g.clone();
                let n = t.cols();
                rowwise(&mut t, false, 1.0 / n as f64);
                acc(grads, *a, t);
            }
            Op::RealPart(a) => {
                acc(grads, *a, Tensor::complex(g.rows(), g.cols(), g.re.clone(), vec![0.0; g.len()]));
            }
            Op::ImagPart(a) => {
                acc(grads, *a, Tensor::complex(g.rows(), g.cols(), vec![0.0; g.len()], g.re.clone()));
            }
            Op::Complex(re, im) => {
                acc(grads, *re, Tensor::real(g.rows(), g.cols(), g.re.clone()));
                acc(grads, *im, Tensor::real(g.rows(), g.cols(), g.im().to_vec()));
            }
            Op::CMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                acc(grads, *a, cmul_conj(g, tb));
                acc(grads, *b, cmul_conj(g, ta));
            }
            Op::CMulRow(a, w) => {
                let (ta, tw) = (self.val(*a), self.val(*w));
                acc(grads, *a, cmul_conj(g, tw));
                let full = cmul_conj(g, ta);
                let c = g.cols();
                let mut gw = Tensor::zeros(1, c, true);
                for k in 0..full.len() {
                    gw.re[k % c] += full.re[k];
                    gw.im_mut()[k % c] += full.im()[k];
                }
                acc(grads, *w, gw);
            }
            Op::CMask(a, mask) => {
                let re = g.re.iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
                let im = g.im().iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
                acc(grads, *a, Tensor::complex(g.rows(), g.cols(), re, im));
            }
            Op::Magnitude(a) => {
                let ta = self.val(*a);
                let m = &self.val(i).re;
                let mut re = vec![0.0; g.len()];
                let mut im = vec![0.0; g.len()];
                for k in 0..g.len() {
                    if m[k] >= MAGNITUDE_FLOOR {
                        re[k] = g.re[k] * ta.re[k] / m[k];
                        im[k] = g.re[k] * ta.im()[k] / m[k];
                    }
                }
                acc(grads, *a, Tensor::complex(g.rows(), g.cols(), re, im));
            }
            Op::WeightedRows(w, m) => {
                let (tw, tm) = (self.val(*w), self.val(*m));
                let c = tm.cols();
                let rows = tm.rows();
                let mut gw = vec![0.0; rows];
                let mut gm = Tensor::zeros(rows, c, true);
                for j in 0..rows {
                    let wj = tw.re[j];
                    let mut s = 0.0;
                    for f in 0..c {
                        s += g.re[f] * tm.re[j * c + f] + g.im()[f] * tm.im()[j * c + f];
                        gm.re[j * c + f] = wj * g.re[f];
                    }
                    for f in 0..c {
                        gm.im_mut()[j * c + f] = wj * g.im()[f];
                    }
                    gw[j] = s;
                }
                acc(grads, *w, Tensor::real(rows, 1, gw));
                acc(grads, *m, gm);
            }
        }
    }

    /// Gradients of every parameter that appears on this tape.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        let mut out: Vec<(ParamId, Tensor)> = self
            .param_nodes
            .iter()
            .filter_map(|(id, node)| grads.grads.get(*node).and_then(|g| g.clone()).map(|g| (*id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        ParamGrads(out)
    }
}

/// Per-node gradients produced by a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn wrt_complex(&self, v: CVar) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a real node, zeros if unreachable.
    pub fn wrt_or_zero(&self, tape: &Tape<'_>, v: Var) -> Tensor {
        self.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros_like(tape.value(v)))
    }

    pub fn wrt_complex_or_zero(&self, tape: &Tape<'_>, v: CVar) -> Tensor {
        self.wrt_complex(v).cloned().unwrap_or_else(|| Tensor::zeros_like(tape.cvalue(v)))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn bce_value(pos: &[f64], neg: &[f64]) -> f64 {
    let n = (pos.len() + neg.len()) as f64;
    let total: f64 = pos.iter().map(|x| softplus(-x)).sum::<f64>() + neg.iter().map(|x| softplus(*x)).sum::<f64>();
    total / n
}

pub(crate) fn masked_softmax_values(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; scores.len()];
    }
    let exps: Vec<f64> = scores.iter().zip(mask).map(|(s, m)| if *m { (s - max).exp() } else { 0.0 }).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn rowwise(t: &mut Tensor, inverse: bool, scale: f64) {
    let (r, c) = t.shape();
    if t.im.is_none() {
        t.im = Some(vec![0.0; r * c]);
    }
    let im = t.im.as_mut().unwrap();
    for row in 0..r {
        transform_in_place(&mut t.re[row * c..(row + 1) * c], &mut im[row * c..(row + 1) * c], inverse);
    }
    if scale != 1.0 {
        t.scalars_mut().for_each(|v| *v *= scale);
    }
}

/// `a ⊙ b` where `b` is either the same shape or a broadcast row.
fn cmul_broadcast(a: &Tensor, b: &Tensor) -> Tensor {
    let c = a.cols();
    let n = a.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let (ar, ai, br, bi) = (&a.re, a.im(), &b.re, b.im());
    let bl = b.len();
    for k in 0..n {
        let kb = if bl == n { k } else { k % c };
        re[k] = ar[k] * br[kb] - ai[k] * bi[kb];
        im[k] = ar[k] * bi[kb] + ai[k] * br[kb];
    }
    Tensor::complex(a.rows(), c, re, im)
}

/// `g ⊙ conj(b)` where `b` is the same shape as `g` or a broadcast row.
fn cmul_conj(g: &Tensor, b: &Tensor) -> Tensor {
    let c = g.cols();
    let n = g.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let (gr, gi, br, bi) = (&g.re, g.im(), &b.re, b.im());
    let bl = b.len();
    for k in 0..n {
        let kb = if bl == n { k } else { k % c };
        re[k] = gr[k] * br[kb] + gi[k] * bi[kb];
        im[k] = gi[k] * br[kb] - gr[k] * bi[kb];
    }
    Tensor::complex(g.rows(), c, re, im)
}
