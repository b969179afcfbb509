use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::grad_check_coords;

fn dims() -> StateDims {
    StateDims { state: 6, time: 4, edge: 2, node: 0 }
}

fn setup(dynamics: Dynamics, seed: u64) -> (ParamStore, StateParams, TimeEncoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = StateParams::init(&mut store, dims(), dynamics, &mut rng);
    (store, p, TimeEncoder::new(4).unwrap())
}

fn ev(src: NodeId, dst: NodeId, t: f64) -> Event {
    Event::new(src, dst, t, vec![t.sin(), 0.5])
}

#[test]
fn input_length_and_transform_size() {
    let d = StateDims { state: 100, time: 100, edge: 1, node: 0 };
    assert_eq!(d.message(), 201);
    assert_eq!(d.input(), 401);
    let mut store = ParamStore::new();
    let p = StateParams::init(&mut store, d, Dynamics::Frequency, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(p.len, 512);
}

#[test]
fn zero_spectrum_gives_half() {
    let (mut store, p, enc) = setup(Dynamics::Frequency, 1);
    *store.value_mut(p.weight) = Tensor::zeros(1, p.len, true);
    let st = update_state(&store, &p, &NodeState::zero(6), None, 3.0, &enc).unwrap();
    assert_eq!(st.s, vec![0.5; 6]);
    assert_eq!(st.t_prev, 3.0);
}

#[test]
fn identical_updates_agree() {
    let (store, p, enc) = setup(Dynamics::Frequency, 2);
    let base = NodeState { s: vec![0.3; 6], t_prev: 1.0, pending: None, last_update: None };
    let m = vec![0.1; 12];
    let a = update_state(&store, &p, &base, Some(&m), 2.0, &enc).unwrap();
    let b = update_state(&store, &p, &base, Some(&m), 2.0, &enc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn updates_reject_time_travel() {
    let (store, p, enc) = setup(Dynamics::Frequency, 3);
    let base = NodeState { s: vec![0.3; 6], t_prev: 5.0, pending: None, last_update: None };
    assert!(matches!(update_state(&store, &p, &base, None, 4.0, &enc), Err(crate::Error::TemporalOrder(_))));
}

#[test]
fn first_message_of_unseen_node() {
    let enc = TimeEncoder::new(4).unwrap();
    let store = StateStore::new(dims(), Mode::Ctdg);
    let e = Event::new(0, 1, 2.5, vec![0.7, -0.2]);
    let m = store.compute_message(0, &e, &enc).unwrap();
    let mut expect = vec![0.0; 6];
    expect.extend(enc.encode(2.5).unwrap());
    expect.extend([0.7, -0.2]);
    assert_eq!(m, expect);
}

#[test]
fn message_at_zero_delta() {
    let enc = TimeEncoder::new(4).unwrap();
    let mut store = StateStore::new(dims(), Mode::Ctdg);
    store.states.insert(3, NodeState { s: vec![0.25; 6], t_prev: 7.0, pending: None, last_update: None });
    let m = store.compute_message(3, &Event::new(3, 4, 7.0, vec![0.0, 0.0]), &enc).unwrap();
    assert_eq!(m, [vec![0.25; 6], vec![1.0; 4], vec![0.0; 2]].concat());
}

#[test]
fn messages_are_refused_for_snapshots() {
    let enc = TimeEncoder::new(4).unwrap();
    let store = StateStore::new(dims(), Mode::Dtdg);
    assert!(matches!(store.compute_message(0, &ev(0, 1, 1.0), &enc), Err(crate::Error::Mode(_))));
}

#[test]
fn latest_message_wins_within_a_batch() {
    let (params_store, p, enc) = setup(Dynamics::Frequency, 4);
    let mut store = StateStore::new(dims(), Mode::Ctdg);
    store.stage(&ev(0, 1, 1.0), &enc).unwrap();
    store.flush(&params_store, &p, &enc).unwrap();
    let before = store.clone();
    let batch = [ev(0, 2, 2.0), ev(1, 0, 2.5), ev(2, 3, 3.0), ev(0, 3, 3.5), ev(1, 2, 4.0)];
    let mut expect = BTreeMap::new();
    for e in &batch {
        for v in [e.src, e.dst] {
            expect.insert(v, (before.compute_message(v, e, &enc).unwrap(), e.t));
        }
    }
    for e in &batch {
        store.stage(e, &enc).unwrap();
    }
    for (v, (m, t)) in &expect {
        let pend = store.get(*v).pending.as_ref().unwrap();
        assert_eq!(pend.message.as_ref().unwrap(), m);
        assert_eq!(pend.t, *t);
    }
}

#[test]
fn empty_flush_changes_nothing() {
    let (params_store, p, enc) = setup(Dynamics::Frequency, 5);
    let mut store = StateStore::new(dims(), Mode::Ctdg);
    store.stage(&ev(0, 1, 1.0), &enc).unwrap();
    store.flush(&params_store, &p, &enc).unwrap();
    let before = store.clone();
    assert!(store.flush(&params_store, &p, &enc).unwrap().is_empty());
    assert_eq!(store, before);
}

#[test]
fn flush_sets_last_update_time() {
    let (params_store, p, enc) = setup(Dynamics::Frequency, 6);
    for mode in [Mode::Ctdg, Mode::Dtdg] {
        let mut store = StateStore::new(dims(), mode);
        store.stage(&ev(4, 9, 2.0), &enc).unwrap();
        assert_eq!(store.flush(&params_store, &p, &enc).unwrap(), vec![4, 9]);
        assert_eq!(store.get(4).t_prev, 2.0);
        assert_eq!(store.get(9).t_prev, 2.0);
        assert!(store.get(4).s.iter().all(|x| *x > 0.0 && *x < 1.0));
    }
}

#[test]
fn unseen_read_does_not_insert() {
    let store = StateStore::new(dims(), Mode::Ctdg);
    assert_eq!(store.get(42), &NodeState::zero(6));
    assert!(store.is_empty());
}

#[test]
fn batched_flush_matches_sequential_oracle() {
    let (params_store, p, enc) = setup(Dynamics::Frequency, 7);
    // each node at most once per batch
    let batches = [
        vec![ev(0, 1, 1.0), ev(2, 3, 1.5)],
        vec![ev(1, 2, 2.0), ev(3, 4, 2.0), ev(5, 0, 2.5)],
        vec![ev(0, 2, 3.0), ev(4, 1, 3.5)],
    ];
    let mut store = StateStore::new(dims(), Mode::Ctdg);
    for b in &batches {
        for e in b {
            store.stage(e, &enc).unwrap();
        }
        store.flush(&params_store, &p, &enc).unwrap();
    }
    let mut oracle: BTreeMap<NodeId, NodeState> = BTreeMap::new();
    for e in batches.iter().flatten() {
        let zero = NodeState::zero(6);
        let ss = oracle.get(&e.src).cloned().unwrap_or(zero.clone());
        let ds = oracle.get(&e.dst).cloned().unwrap_or(zero);
        let msg = |st: &NodeState| [st.s.clone(), enc.encode(e.t - st.t_prev).unwrap(), e.features.clone()].concat();
        let (ms, md) = (msg(&ss), msg(&ds));
        oracle.insert(e.src, update_state(&params_store, &p, &ss, Some(&ms), e.t, &enc).unwrap());
        oracle.insert(e.dst, update_state(&params_store, &p, &ds, Some(&md), e.t, &enc).unwrap());
    }
    for (v, st) in &oracle {
        assert_eq!(store.get(*v).t_prev, st.t_prev);
        for (a, b) in store.get(*v).s.iter().zip(&st.s) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn replay_reproduces_stored_state() {
    for dynamics in [Dynamics::Frequency, Dynamics::TimeLinear] {
        let (params_store, p, enc) = setup(dynamics, 8);
        let mut store = StateStore::new(dims(), Mode::Ctdg);
        store.stage(&ev(0, 1, 1.0), &enc).unwrap();
        store.flush(&params_store, &p, &enc).unwrap();
        store.stage(&ev(1, 0, 2.0), &enc).unwrap();
        store.flush(&params_store, &p, &enc).unwrap();
        let st = store.get(0);
        let mut tape = Tape::new(&params_store);
        let v = replay_update(&mut tape, &p, st.last_update.as_ref().unwrap(), &enc).unwrap();
        assert_eq!(tape.value(v).re, st.s);
    }
}

#[test]
fn update_weight_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for dynamics in [Dynamics::Frequency, Dynamics::TimeLinear] {
        for _ in 0..20 {
            let (store, p, enc) = setup(dynamics, rng.gen());
            let s: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
            let m: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input = update_input(&p.dims, &s, Some(&m), 0.5, 2.0, &enc).unwrap();
            let proj: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut coords: Vec<(ParamId, usize)> = (0..store.value(p.weight).num_scalars()).map(|k| (p.weight, k)).collect();
            if let Some(b) = p.bias {
                coords.extend((0..6).map(|k| (b, k)));
            }
            let rep = grad_check_coords(
                &store,
                |t| {
                    let out = update_on_tape(t, &p, &input);
                    let w = t.row(&proj);
                    let y = t.mul(out, w);
                    Ok(t.sum(y))
                },
                1e-6,
                &coords,
            )
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "{dynamics:?}: {}", rep.max_rel_error);
        }
    }
}

#[test]
fn jsonl_round_trip_is_exact() {
    let (params_store, p, enc) = setup(Dynamics::Frequency, 10);
    let mut store = StateStore::new(dims(), Mode::Ctdg);
    for e in [ev(0, 1, 0.3), ev(2, 1, 1.7)] {
        store.stage(&e, &enc).unwrap();
        store.flush(&params_store, &p, &enc).unwrap();
    }
    let mut buf = Vec::new();
    store.write_jsonl(&mut buf).unwrap();
    let back = StateStore::read_jsonl(dims(), Mode::Ctdg, &buf[..]).unwrap();
    for (v, st) in store.iter() {
        assert_eq!(back.get(v).s, st.s);
        assert_eq!(back.get(v).t_prev, st.t_prev);
    }
    assert!(matches!(
        StateStore::read_jsonl(dims(), Mode::Ctdg, &b"{\"node\":1,\"t\":0.0,\"s\":[1.0]}\n"[..]),
        Err(crate::Error::Parse { line: 1, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn states_stay_bounded_and_clocks_monotone(seed in any::<u64>(), linear in any::<bool>(), dtdg in any::<bool>()) {
        let dynamics = if linear { Dynamics::TimeLinear } else { Dynamics::Frequency };
        let mode = if dtdg { Mode::Dtdg } else { Mode::Ctdg };
        let (params_store, p, enc) = setup(dynamics, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = StateStore::new(dims(), mode);
        let mut last: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut t = 0.0;
        for _ in 0..10 {
            for _ in 0..rng.gen_range(1..6) {
                t += rng.gen_range(0.0..2.0f64).floor();
                let e = Event::new(rng.gen_range(0..6), rng.gen_range(0..6), t, vec![rng.gen_range(-5.0..5.0), 1.0]);
                store.stage(&e, &enc).unwrap();
            }
            store.flush(&params_store, &p, &enc).unwrap();
            for (v, st) in store.iter() {
                prop_assert!(st.s.iter().all(|x| *x > 0.0 && *x < 1.0));
                let prev = last.insert(v, st.t_prev).unwrap_or(0.0);
                prop_assert!(st.t_prev >= prev);
            }
        }
    }
}
