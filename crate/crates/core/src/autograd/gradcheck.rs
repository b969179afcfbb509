//! Central finite-difference checks of tape gradients.

use super::{CVar, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{bail, Result};

/// One forward evaluation as seen by the checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub signature: u64,
    pub kink: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±ε probes changed a discrete branch.
    pub skipped: usize,
    /// The base point itself is non-differentiable; nothing was checked.
    pub excluded: bool,
}

/// Handle passed to the function under test for each input tensor.
#[derive(Debug, Clone, Copy)]
pub enum Input {
    Real(Var),
    Complex(CVar),
}

impl Input {
    pub fn real(self) -> Var {
        match self {
            Input::Real(v) => v,
            Input::Complex(_) => panic!("input is complex"),
        }
    }

    pub fn complex(self) -> CVar {
        match self {
            Input::Complex(v) => v,
            Input::Real(_) => panic!("input is real"),
        }
    }
}

fn probe<F>(store: &ParamStore, f: &F) -> Result<Probe>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    let value = tape.value(out);
    if value.shape() != (1, 1) {
        bail!(InvalidArgument, "function under check must be scalar, got shape {:?}", value.shape());
    }
    let v = value.re[0];
    if !v.is_finite() {
        bail!(Numeric, "forward value is not finite: {v}");
    }
    Ok(Probe { value: v, signature: tape.signature(), kink: tape.hit_kink() })
}

fn analytic<F>(store: &ParamStore, f: &F) -> Result<(Probe, Vec<Tensor>)>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    let grads = tape.backward(out)?;
    let v = tape.value(out).re[0];
    if !v.is_finite() {
        bail!(Numeric, "forward value is not finite: {v}");
    }
    let mut per_param: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros_like(&p.value)).collect();
    for (id, g) in tape.param_grads(&grads).0 {
        per_param[id.0] = g;
    }
    Ok((Probe { value: v, signature: tape.signature(), kink: tape.hit_kink() }, per_param))
}

/// Checks the selected parameter coordinates; a coordinate is
/// `(parameter, index into its re-then-im scalar view)`.
pub fn grad_check_coords<F>(store: &ParamStore, f: F, eps: f64, coords: &[(ParamId, usize)]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        bail!(InvalidArgument, "ε must lie in [1e-7, 1e-3], got {eps}");
    }
    let (base, grads) = analytic(store, &f)?;
    if base.kink {
        return Ok(GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: coords.len(), excluded: true });
    }
    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0, excluded: false };
    for &(id, k) in coords {
        let original = *work.value(id).scalars().nth(k).expect("coordinate out of range");
        let set = |w: &mut ParamStore, x: f64| {
            *w.value_mut(id).scalars_mut().nth(k).unwrap() = x;
        };
        set(&mut work, original + eps);
        let plus = probe(&work, &f)?;
        set(&mut work, original - eps);
        let minus = probe(&work, &f)?;
        set(&mut work, original);
        if plus.signature != base.signature || minus.signature != base.signature || plus.kink || minus.kink {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * eps);
        let a = *grads[id.0].scalars().nth(k).unwrap();
        let err = (a - numeric).abs() / a.abs().max(1.0);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Checks every coordinate of every parameter in `store`.
pub fn grad_check_tape<F>(store: &ParamStore, f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let coords: Vec<(ParamId, usize)> =
        store.iter().flat_map(|(id, p)| (0..p.value.num_scalars()).map(move |k| (id, k))).collect();
    grad_check_coords(store, f, eps, &coords)
}

/// Checks `f` with respect to free input tensors.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Input]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs.iter().enumerate().map(|(i, t)| store.add(format!("x{i}"), t.clone())).collect();
    grad_check_tape(
        &store,
        |tape| {
            let handles: Vec<Input> = ids
                .iter()
                .map(|id| {
                    if tape.params().value(*id).is_complex() {
                        Input::Complex(tape.cparam(*id))
                    } else {
                        Input::Real(tape.param(*id))
                    }
                })
                .collect();
            f(tape, &handles)
        },
        eps,
    )
}
