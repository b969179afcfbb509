use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn ev(src: NodeId, dst: NodeId, t: f64) -> Event {
    Event::new(src, dst, t, vec![t])
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize, nodes: usize) -> Vec<Event> {
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.6) {
                t += rng.gen_range(0..3) as f64;
            }
            let a = rng.gen_range(0..nodes);
            let mut b = rng.gen_range(0..nodes);
            if b == a {
                b = (a + 1) % nodes;
            }
            Event::new(a, b, t, vec![rng.gen()])
        })
        .collect()
}

#[test]
fn empty_snapshots_give_empty_stream() {
    assert!(dtdg_to_events(&[]).unwrap().is_empty());
}

#[test]
fn two_snapshots_flatten() {
    let snaps = vec![
        SnapshotGraph { index: 1, edges: vec![(0, 1, vec![]), (1, 2, vec![]), (2, 0, vec![])] },
        SnapshotGraph { index: 2, edges: vec![(3, 4, vec![]), (4, 0, vec![])] },
    ];
    let ev = dtdg_to_events(&snaps).unwrap();
    assert_eq!(ev.iter().map(|e| e.t).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, 2.0, 2.0]);
    assert_eq!((ev[1].src, ev[1].dst), (1, 2));
    assert_eq!(events_to_snapshots(&ev).unwrap(), snaps);
}

#[test]
fn duplicate_snapshot_index_is_rejected() {
    let s = SnapshotGraph { index: 3, edges: vec![] };
    assert!(matches!(dtdg_to_events(&[s.clone(), s]), Err(crate::Error::InvalidInput(_))));
}

#[test]
fn minibatch_sizes() {
    let sizes = |n: usize, b: usize| make_minibatches(&vec![0u8; n], b).unwrap().iter().map(|c| c.len()).collect::<Vec<_>>();
    assert_eq!(sizes(1500, 600), vec![600, 600, 300]);
    assert_eq!(sizes(600, 600), vec![600]);
    assert_eq!(sizes(599, 600), vec![599]);
    assert!(sizes(0, 600).is_empty());
    assert!(make_minibatches(&[1, 2], 0).is_err());
}

#[test]
fn equal_snapshots_split_seven_one_two() {
    let events: Vec<Event> = (1..=10).flat_map(|s| (0..10).map(move |i| ev(i, i + 1, s as f64))).collect();
    let sp = chronological_split(&events, &SplitConfig::default(), Mode::Dtdg).unwrap();
    assert_eq!(sp.train, 0..70);
    assert_eq!(sp.t1, Some(7));
    assert_eq!(sp.val, 70..80);
    assert_eq!(sp.t2, Some(8));
    assert_eq!(sp.test, 80..100);
}

#[test]
fn ctdg_split_never_straddles_a_timestamp() {
    // events 68..=72 share t = 68
    let events: Vec<Event> = (0..100).map(|i| ev(0, 1, if (68..=72).contains(&i) { 68.0 } else { i as f64 })).collect();
    let sp = chronological_split(&events, &SplitConfig::default(), Mode::Ctdg).unwrap();
    assert_eq!(sp.train, 0..73);
    assert_eq!(sp.val, 73..85);
    assert_eq!(sp.test, 85..100);
}

#[test]
fn split_needs_three_timestamps() {
    let events = vec![ev(0, 1, 1.0), ev(0, 1, 2.0), ev(1, 2, 2.0)];
    assert!(matches!(
        chronological_split(&events, &SplitConfig::default(), Mode::Ctdg),
        Err(crate::Error::InvalidInput(_))
    ));
}

#[test]
fn dtdg_split_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let sizes: Vec<usize> = (0..rng.gen_range(4..30)).map(|_| rng.gen_range(1..500)).collect();
        let events: Vec<Event> =
            sizes.iter().enumerate().flat_map(|(s, n)| (0..*n).map(move |_| ev(0, 1, s as f64))).collect();
        let n = events.len() as f64;
        let sp = chronological_split(&events, &SplitConfig::default(), Mode::Dtdg);
        // brute force: every admissible (T1, T2) pair, pick nearest cumulative counts
        let cum: Vec<usize> = sizes.iter().scan(0, |c, s| { *c += s; Some(*c) }).collect();
        let mut best1 = 0;
        for s in 0..sizes.len() - 1 {
            if (cum[s] as f64 - 0.7 * n).abs() < (cum[best1] as f64 - 0.7 * n).abs() {
                best1 = s;
            }
        }
        let mut best2 = best1 + 1;
        for s in best1 + 1..sizes.len() - 1 {
            if (cum[s] as f64 - 0.85 * n).abs() < (cum[best2] as f64 - 0.85 * n).abs() {
                best2 = s;
            }
        }
        if best2 >= sizes.len() - 1 {
            assert!(sp.is_err());
            continue;
        }
        let sp = sp.unwrap();
        assert_eq!(sp.t1, Some(best1 as u64));
        assert_eq!(sp.t2, Some(best2 as u64));
        assert_eq!(sp.train.end, cum[best1]);
        assert_eq!(sp.val.end, cum[best2]);
    }
}

#[test]
fn unseen_node_gets_invalid_batch() {
    let g = TemporalGraph::new(None);
    let b = g.sample_recent_neighbors(7, 10.0, 3);
    assert_eq!(b.valid, vec![false; 3]);
}

#[test]
fn neighbor_sampling_is_strict() {
    let mut g = TemporalGraph::new(None);
    g.ingest_all(&[ev(0, 1, 1.0), ev(0, 2, 3.0), ev(3, 0, 5.0)]).unwrap();
    let b = g.sample_recent_neighbors(0, 5.0, 2);
    assert_eq!(b.times, vec![3.0, 1.0]);
    assert_eq!(b.neighbors, vec![2, 1]);
    assert_eq!(b.valid, vec![true, true]);
    assert_eq!(g.audit().violations, 0);
}

#[test]
fn ties_prefer_later_ingestion() {
    let mut g = TemporalGraph::new(None);
    g.ingest_all(&[ev(0, 1, 2.0), ev(0, 2, 2.0), ev(0, 3, 2.0)]).unwrap();
    let b = g.sample_recent_neighbors(0, 3.0, 2);
    assert_eq!(b.neighbors, vec![3, 2]);
}

#[test]
fn window_limits_history() {
    let mut g = TemporalGraph::new(Some(2.0));
    g.ingest_all(&[ev(0, 1, 1.0), ev(0, 2, 3.0), ev(0, 3, 4.0)]).unwrap();
    let b = g.sample_recent_neighbors(0, 5.0, 5);
    assert_eq!(b.valid_count(), 2);
}

#[test]
fn out_of_order_ingestion_is_rejected() {
    let mut g = TemporalGraph::new(None);
    g.ingest(&ev(0, 1, 5.0)).unwrap();
    assert!(matches!(g.ingest(&ev(0, 1, 4.0)), Err(crate::Error::TemporalOrder(_))));
}

#[test]
fn sampling_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let events = random_stream(&mut rng, 200, 15);
    let mut g = TemporalGraph::new(None);
    g.ingest_all(&events).unwrap();
    for _ in 0..50 {
        let node = rng.gen_range(0..16);
        let t = rng.gen_range(0.0..events.last().unwrap().t + 2.0).floor();
        let n = rng.gen_range(1..10);
        let got = g.sample_recent_neighbors(node, t, n);
        let mut expect: Vec<(usize, &Event)> = events
            .iter()
            .enumerate()
            .filter(|(_, e)| (e.src == node || e.dst == node) && e.t < t)
            .collect();
        expect.sort_by(|a, b| b.1.t.total_cmp(&a.1.t).then(b.0.cmp(&a.0)));
        expect.truncate(n);
        assert_eq!(got.valid_count(), expect.len());
        for (slot, (_, e)) in expect.iter().enumerate() {
            let other = if e.src == node { e.dst } else { e.src };
            assert_eq!(got.neighbors[slot], other);
            assert_eq!(got.times[slot], e.t);
            assert_eq!(got.features[slot], e.features);
        }
    }
    assert_eq!(g.audit().samples, 50);
    assert_eq!(g.audit().violations, 0);
}

#[test]
fn inductive_mask_counts_and_determinism() {
    let universe: Vec<NodeId> = (0..1899).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let events = random_stream(&mut rng, 3000, 1899);
    let (kept, masked) = mask_inductive_nodes(&events, &universe, 0.10, 42).unwrap();
    assert_eq!(masked.len(), 189);
    let (_, again) = mask_inductive_nodes(&events, &universe, 0.10, 42).unwrap();
    assert_eq!(masked, again);
    assert!(kept.iter().all(|e| !masked.contains(&e.src) && !masked.contains(&e.dst)));
    let dropped = events.iter().filter(|e| masked.contains(&e.src) || masked.contains(&e.dst)).count();
    assert_eq!(kept.len() + dropped, events.len());
    for f in [0.0, 1.0, -0.1] {
        assert!(mask_inductive_nodes(&events, &universe, f, 1).is_err());
    }
}

proptest! {
    #[test]
    fn batches_conserve_events(n in 0usize..3000, b in 1usize..700) {
        let items: Vec<usize> = (0..n).collect();
        let batches = make_minibatches(&items, b).unwrap();
        prop_assert_eq!(batches.len(), n / b + usize::from(n % b != 0));
        for (i, c) in batches.iter().enumerate() {
            if i + 1 < batches.len() { prop_assert_eq!(c.len(), b); }
        }
        prop_assert_eq!(batches.concat(), items);
    }

    #[test]
    fn snapshot_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = 0u64;
        let snaps: Vec<SnapshotGraph> = (0..rng.gen_range(1..8)).map(|_| {
            idx += rng.gen_range(1..4);
            SnapshotGraph { index: idx, edges: (0..rng.gen_range(1..20)).map(|_| (rng.gen_range(0..9), rng.gen_range(0..9), vec![rng.gen()])).collect() }
        }).collect();
        prop_assert_eq!(events_to_snapshots(&dtdg_to_events(&snaps).unwrap()).unwrap(), snaps);
    }

    #[test]
    fn splits_partition_the_stream(seed in any::<u64>(), dtdg in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = random_stream(&mut rng, 300, 20);
        let mode = if dtdg { Mode::Dtdg } else { Mode::Ctdg };
        if let Ok(sp) = chronological_split(&events, &SplitConfig::default(), mode) {
            prop_assert_eq!(sp.train.start, 0);
            prop_assert_eq!(sp.train.end, sp.val.start);
            prop_assert_eq!(sp.val.end, sp.test.start);
            prop_assert_eq!(sp.test.end, events.len());
            prop_assert!(events[sp.train.end - 1].t < events[sp.val.start].t);
            prop_assert!(events[sp.val.end - 1].t < events[sp.test.start].t);
        }
    }

    #[test]
    fn sampled_times_precede_query(seed in any::<u64>(), n in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = random_stream(&mut rng, 150, 10);
        let mut g = TemporalGraph::new(None);
        g.ingest_all(&events).unwrap();
        for node in 0..10 {
            let t = rng.gen_range(0.0..60.0f64).floor();
            let b = g.sample_recent_neighbors(node, t, n);
            prop_assert!(b.entries().all(|(_, tj, _)| tj < t));
            prop_assert!(b.times.windows(2).zip(b.valid.windows(2)).all(|(w, v)| !(v[0] && v[1]) || w[0] >= w[1]));
        }
    }
}
