use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn stream(n: usize, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let src = rng.gen_range(0..20);
            Event::new(src, (src + 1 + rng.gen_range(0..19)) % 20, i as f64, vec![rng.gen_range(-1.0..1.0), 3.0])
        })
        .collect()
}

#[test]
fn planted_stream_shape() {
    let cfg = PlantedConfig::default();
    for mode in [Mode::Ctdg, Mode::Dtdg] {
        let ev = planted_pattern(&cfg, mode).unwrap();
        assert_eq!(ev.len(), 5000);
        assert!(ev.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(ev.iter().all(|e| e.src != e.dst && community(&cfg, e.src) == community(&cfg, e.dst)));
        assert_eq!(node_universe(&ev).len(), 200);
        assert_eq!(ev, planted_pattern(&cfg, mode).unwrap());
    }
    let dt = planted_pattern(&cfg, Mode::Dtdg).unwrap();
    assert_eq!(crate::graph::time_groups(&dt).len(), 250);
    assert!(dt.iter().all(|e| phase(&cfg, e.dst) == (phase(&cfg, e.src) + 1) % cfg.period));
    assert!(planted_pattern(&PlantedConfig { jitter: 1.0, ..cfg }, Mode::Ctdg).is_err());
}

#[test]
fn degree_baseline_stays_weak_on_planted_stream() {
    let ev = planted_pattern(&PlantedConfig::default(), Mode::Ctdg).unwrap();
    let a = degree_baseline_auc(&ev, Mode::Ctdg, 0).unwrap();
    assert!(a < 0.7, "degree baseline AUC {a}");
}

#[test]
fn zero_noise_is_identity() {
    let ev = stream(50, 0);
    assert_eq!(inject_noise(&ev, &NoiseSpec::level(0.0, 3)).unwrap(), ev);
}

#[test]
fn full_edge_noise_replaces_everything() {
    let ev = stream(100, 1);
    let spec = NoiseSpec { edge: 1.0, attr: 0.0, sigma: 1.0, seed: 2 };
    let noisy = inject_noise(&ev, &spec).unwrap();
    assert!(ev.iter().zip(&noisy).all(|(a, b)| a.dst != b.dst && b.dst != b.src && a.t == b.t && a.features == b.features));
}

#[test]
fn edge_noise_count_is_exact_and_reproducible() {
    let ev = stream(137, 2);
    let spec = NoiseSpec { edge: 0.3, attr: 0.0, sigma: 1.0, seed: 9 };
    let a = inject_noise(&ev, &spec).unwrap();
    let changed = ev.iter().zip(&a).filter(|(x, y)| x.dst != y.dst).count();
    assert_eq!(changed, (0.3f64 * 137.0).floor() as usize);
    assert_eq!(a, inject_noise(&ev, &spec).unwrap());
    assert_ne!(a, inject_noise(&ev, &NoiseSpec { seed: 10, ..spec }).unwrap());
}

#[test]
fn attribute_noise_scales_with_feature_spread() {
    let ev = stream(200, 3);
    let spec = NoiseSpec { edge: 0.0, attr: 0.5, sigma: 2.0, seed: 4 };
    let noisy = inject_noise(&ev, &spec).unwrap();
    let touched = ev.iter().zip(&noisy).filter(|(a, b)| a.features[0] != b.features[0]).count();
    assert_eq!(touched, 100);
    // constant column has zero spread, so it never moves
    assert!(noisy.iter().all(|e| e.features[1] == 3.0));
    assert!(ev.iter().zip(&noisy).all(|(a, b)| a.src == b.src && a.dst == b.dst && a.t == b.t));
    assert!(inject_noise(&ev, &NoiseSpec { attr: 1.5, ..spec }).is_err());
}

#[test]
fn constant_feature_has_dc_only() {
    let ev: Vec<Event> = (0..32).map(|i| Event::new(0, 1, i as f64, vec![2.5])).collect();
    let rows = spectrum(&ev, 32, 0).unwrap();
    assert!((rows[0].amp_feature - 80.0).abs() < 1e-9);
    assert!(rows[1..].iter().all(|r| r.amp_feature < 1e-9));
    // evenly spaced: gaps are [0, 1, 1, ...]
    assert!((rows[0].amp_interarrival - 31.0).abs() < 1e-9);
}

#[test]
fn sinusoid_peaks_at_its_bin_and_mirror() {
    let w = 64;
    let ev: Vec<Event> = (0..w)
        .map(|i| Event::new(0, 1, i as f64, vec![(2.0 * std::f64::consts::PI * 3.0 * i as f64 / w as f64).sin()]))
        .collect();
    let rows = spectrum(&ev, w, 0).unwrap();
    for r in &rows {
        if r.f == 3 || r.f == 61 {
            assert!((r.amp_feature - 32.0).abs() < 1e-9);
        } else {
            assert!(r.amp_feature < 1e-9, "bin {} = {}", r.f, r.amp_feature);
        }
    }
}

#[test]
fn random_walk_energy_sits_in_low_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = 0.0;
    let ev: Vec<Event> = (0..400)
        .map(|i| {
            x += rng.gen_range(-1.0..1.0);
            Event::new(0, 1, i as f64, vec![x])
        })
        .collect();
    let rows = spectrum(&ev, 400, 0).unwrap();
    let amps: Vec<f64> = rows.iter().map(|r| r.amp_feature).collect();
    let frac = low_band_fraction(&amps);
    assert!(frac > 0.8, "{frac}");
}

#[test]
fn spectrum_argument_errors() {
    let ev = stream(10, 5);
    assert!(spectrum(&ev, 11, 0).is_err());
    assert!(spectrum(&ev, 0, 0).is_err());
    assert!(spectrum(&ev, 10, 2).is_err());
}

#[test]
fn csv_round_trips() {
    let ev = stream(16, 6);
    let rows = spectrum(&ev, 16, 0).unwrap();
    let mut buf = Vec::new();
    write_spectrum_csv(&mut buf, &rows).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("f,amp_feature,amp_interarrival\n"));
    assert_eq!(read_spectrum_csv(&buf[..]).unwrap(), rows);

    let sweep = vec![SweepRow { level: 0.1, variant: Attention::Gat, seed: 3, auc: 0.75, ap: 0.5 }];
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &sweep).unwrap();
    assert_eq!(read_sweep_csv(&buf[..]).unwrap(), sweep);

    let abl = vec![
        AblationRow { variant: Variant::WoGlobal, seed: 1, auc: 0.9, ap: 0.8, mrr: Some(0.3) },
        AblationRow { variant: Variant::Full, seed: 1, auc: 0.9, ap: 0.8, mrr: None },
    ];
    let mut buf = Vec::new();
    write_ablation_csv(&mut buf, &abl).unwrap();
    assert_eq!(read_ablation_csv(&buf[..]).unwrap(), abl);
}

#[test]
fn variants_wire_the_right_switches() {
    let base = TrainConfig::default();
    assert_eq!(Variant::Full.apply(&base), base);
    assert_eq!(Variant::WGat.apply(&base).attention, Attention::Gat);
    assert_eq!(Variant::WoFgatN.apply(&base).attention, Attention::Fgat);
    let g = Variant::WoGlobal.apply(&base);
    assert_eq!((g.attention, g.dynamics), (Attention::FgatN, Dynamics::TimeLinear));
}

fn tiny(mode: Mode) -> TrainConfig {
    TrainConfig { mode, batch_size: 50, neighbors: 3, dim: 5, time_dim: 5, epochs: 1, patience: 1, lr: 1e-3, mrr_negatives: 5, ..TrainConfig::default() }
}

#[test]
fn sweep_zero_level_matches_clean_run() {
    let cfg = PlantedConfig { nodes: 60, events: 300, ..PlantedConfig::default() };
    let ds = Dataset::new(planted_pattern(&cfg, Mode::Ctdg).unwrap(), Mode::Ctdg).unwrap();
    let base = tiny(Mode::Ctdg);
    let rows = noise_sweep(&ds, &[0.0, 0.2], &[Attention::FgatN, Attention::Gat], &[7], &base, &mut |_| {}).unwrap();
    assert_eq!(rows.len(), 4);
    let clean = train(&TrainConfig { seed: 7, ..base }, &ds).unwrap();
    assert_eq!(rows[0].auc, clean.summary.test.auc);
    assert!(noise_sweep(&ds, &[1.5], &[Attention::Gat], &[0], &base, &mut |_| {}).is_err());
}

#[test]
fn ablation_rows_cover_variants_and_seeds() {
    let cfg = PlantedConfig { nodes: 60, events: 300, ..PlantedConfig::default() };
    let ds = Dataset::new(planted_pattern(&cfg, Mode::Dtdg).unwrap(), Mode::Dtdg).unwrap();
    let mut seen = 0;
    let rows = ablate(&ds, &Variant::ALL, &[0, 1], &tiny(Mode::Dtdg), &mut |_| seen += 1).unwrap();
    assert_eq!((rows.len(), seen), (8, 8));
    assert!(rows.iter().all(|r| r.mrr.is_some() && (0.0..=1.0).contains(&r.auc)));
    let m = mean_by(&rows, |r| r.variant == Variant::Full, |r| r.auc).unwrap();
    assert!((0.0..=1.0).contains(&m));
}

proptest! {
    #[test]
    fn noise_never_touches_time_or_sources(level in 0.0f64..1.0, seed in 0u64..50) {
        let ev = stream(60, seed);
        let noisy = inject_noise(&ev, &NoiseSpec::level(level, seed)).unwrap();
        prop_assert_eq!(noisy.len(), ev.len());
        for (a, b) in ev.iter().zip(&noisy) {
            prop_assert_eq!(a.t, b.t);
            prop_assert_eq!(a.src, b.src);
            prop_assert!(b.dst != b.src);
        }
    }

    #[test]
    fn band_fraction_is_a_fraction(xs in prop::collection::vec(-5.0f64..5.0, 8..64)) {
        let f = low_band_fraction(&xs.iter().map(|x| x.abs()).collect::<Vec<_>>());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
    }
}
