use proptest::prelude::*;
use ssbnn::data::*;
use ssbnn::Error;

fn record_strategy(f: usize) -> impl Strategy<Value = IncidentRecord> {
    (
        prop::collection::vec((0.0..10_000.0f64, 0..f), 1..40),
        0u8..2,
    )
        .prop_map(|(mut ev, label)| {
            ev.sort_by(|a, b| a.0.total_cmp(&b.0));
            IncidentRecord {
                incident_id: "r".into(),
                label,
                events: ev,
            }
        })
}

fn agg(window: f64, horizon: f64) -> AggregationConfig {
    AggregationConfig {
        window_seconds: window,
        horizon_seconds: horizon,
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn collapse_is_or_of_windows(rec in record_strategy(12), w in 1.0..600.0f64, h in 600.0..8000.0f64) {
        let cfg = agg(w, h);
        let windows = aggregate_events(&rec, &cfg, 12).unwrap();
        let collapsed = collapse_to_vector(&rec, &cfg, 12).unwrap();
        let mut or = vec![0u8; 12];
        for win in &windows {
            prop_assert!(win.features.iter().any(|&v| v == 1));
            for (o, v) in or.iter_mut().zip(&win.features) {
                *o |= v;
            }
        }
        prop_assert_eq!(or, collapsed);
        prop_assert!(windows.windows(2).all(|p| p[0].index < p[1].index));
    }

    #[test]
    fn events_past_the_horizon_are_dropped(rec in record_strategy(8), h in 60.0..5000.0f64) {
        let cfg = agg(60.0, h);
        let t0 = rec.events[0].0;
        let v = collapse_to_vector(&rec, &cfg, 8).unwrap();
        let mut expect = vec![0u8; 8];
        for &(t, f) in &rec.events {
            if t - t0 < h {
                expect[f] = 1;
            }
        }
        prop_assert_eq!(v, expect);
        for win in aggregate_events(&rec, &cfg, 8).unwrap() {
            prop_assert!((win.index as f64) * 60.0 < h);
        }
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive(labels in prop::collection::vec(0u8..2, 1..300), frac in 0.05..0.95f64, seed in any::<u64>(), strat in any::<bool>()) {
        let (tr, va) = split_indices(&labels, frac, seed, strat).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        if strat {
            for c in [0u8, 1] {
                let n = labels.iter().filter(|&&l| l == c).count();
                let k = tr.iter().filter(|&&i| labels[i] == c).count();
                prop_assert_eq!(k, (frac * n as f64).round() as usize);
            }
        }
    }

    #[test]
    fn jsonl_round_trips(recs in prop::collection::vec(record_strategy(20), 0..10)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_jsonl(&recs, &path).unwrap();
        prop_assert_eq!(read_jsonl(&path, 20).unwrap(), recs);
    }
}

#[test]
fn empty_record_is_an_error() {
    let rec = IncidentRecord {
        incident_id: "e".into(),
        label: 0,
        events: vec![],
    };
    assert!(matches!(
        collapse_to_vector(&rec, &agg(60.0, 3600.0), 4),
        Err(Error::EmptyRecord(_))
    ));
}

#[test]
fn malformed_records_are_rejected_on_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(
        &path,
        "{\"incident_id\":\"a\",\"label\":0,\"events\":[[0.0,9]]}\n",
    )
    .unwrap();
    assert!(read_jsonl(&path, 5).is_err());
    std::fs::write(
        &path,
        "{\"incident_id\":\"a\",\"label\":2,\"events\":[[0.0,1]]}\n",
    )
    .unwrap();
    assert!(read_jsonl(&path, 5).is_err());
    assert!(read_jsonl(&dir.path().join("missing.jsonl"), 5).is_err());
}

#[test]
fn generator_is_seeded_and_hits_the_positive_rate() {
    let cfg = SynthConfig {
        n_records: 20_000,
        seed: 5,
        ..Default::default()
    };
    let a = synth_generate(&cfg).unwrap();
    assert_eq!(a, synth_generate(&cfg).unwrap());
    assert_ne!(
        a,
        synth_generate(&SynthConfig {
            seed: 6,
            ..cfg.clone()
        })
        .unwrap()
    );
    let pos = a.iter().filter(|r| r.label == 1).count() as f64 / a.len() as f64;
    assert!((pos - 0.01).abs() < 0.003, "{pos}");
    assert!(a
        .iter()
        .all(|r| !r.events.is_empty() && r.validate(DEFAULT_NUM_FEATURES).is_ok()));
}

#[test]
fn planted_features_separate_the_classes() {
    let cfg = SynthConfig {
        n_records: 4000,
        positive_rate: 0.2,
        seed: 8,
        ..Default::default()
    };
    let recs = synth_generate(&cfg).unwrap();
    let d = Dataset::from_records(&recs, &AggregationConfig::default(), cfg.num_features).unwrap();
    let inf = informative_features(&cfg);
    assert_eq!(inf.len(), cfg.n_informative);
    let rate = |label: f64, f: usize| {
        let rows: Vec<usize> = (0..d.len()).filter(|&i| d.y[i] == label).collect();
        rows.iter().filter(|&&i| d.x.row(i)[f] == 1.0).count() as f64 / rows.len() as f64
    };
    for &f in &inf {
        assert!(rate(1.0, f) > rate(0.0, f) + 0.3);
    }
}

#[test]
fn default_metadata_covers_both_kinds() {
    let meta = default_feature_metadata(DEFAULT_NUM_FEATURES);
    assert_eq!(meta.len(), DEFAULT_NUM_FEATURES);
    let mitre = meta
        .values()
        .filter(|i| i.kind == FeatureKind::Mitre)
        .count();
    assert_eq!(mitre, DEFAULT_MITRE_FEATURES);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    write_feature_metadata(&meta, &p).unwrap();
    assert_eq!(read_feature_metadata(&p).unwrap(), meta);
}

#[test]
fn collapsed_csv_has_a_header_and_one_row_per_record() {
    let recs = synth_generate(&SynthConfig {
        n_records: 25,
        num_features: 6,
        n_informative: 2,
        background_rate: 0.2,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let d = Dataset::from_records(&recs, &AggregationConfig::default(), 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    write_collapsed_csv(&d, &p).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert_eq!(
        text.lines().nth(1).unwrap().split(',').count(),
        text.lines().next().unwrap().split(',').count()
    );
}
