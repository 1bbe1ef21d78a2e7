mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use ssbnn::data::{informative_features, synth_generate, AggregationConfig, Dataset, SynthConfig};
use ssbnn::eval::*;
use ssbnn::layers::*;
use ssbnn::rng::{seeded, stream, substream};
use ssbnn::trainer::{train, TrainConfig};
use ssbnn::Error;

#[test]
fn shuffled_labels_give_chance_auc() {
    let mut rng = seeded(1);
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    labels.shuffle(&mut rng);
    let auc = roc_points(&scores, &labels).unwrap().auc;
    assert!((0.47..=0.53).contains(&auc), "{auc}");
}

#[test]
fn trapezoid_auc_equals_rank_statistic_with_ties() {
    let mut rng = seeded(2);
    for _ in 0..50 {
        let n = rng.random_range(4..60);
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0..6) as f64) / 5.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = roc_points(&scores, &labels).unwrap().auc;
        let b = mann_whitney_auc(&scores, &labels).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_class_labels_are_degenerate() {
    assert!(matches!(
        roc_points(&[0.1, 0.2], &[1, 1]),
        Err(Error::DegenerateLabels)
    ));
    assert!(matches!(
        select_threshold(&[0.1], &[0], ThresholdPolicy::MaxGmean),
        Err(Error::DegenerateLabels)
    ));
}

#[test]
fn deterministic_posterior_has_zero_band_width() {
    let model = BnnModel::new(
        small_spec(PosteriorKind::Deterministic, 8, vec![4]),
        &mut seeded(3),
    )
    .unwrap();
    let data = binary_toy(200, 8, 3);
    let dist = roc_distribution(&model, &data, 10, &default_fpr_grid(51), &mut seeded(4)).unwrap();
    for i in 0..dist.grid.len() {
        assert_eq!(dist.tpr_low[i], dist.tpr_high[i]);
        assert_eq!(dist.tpr_low[i], dist.tpr_mean[i]);
    }
}

#[test]
fn mean_curve_auc_tracks_averaged_score_auc() {
    let (model, val) = trained_toy(5);
    let dist = roc_distribution(&model, &val, 100, &default_fpr_grid(201), &mut seeded(6)).unwrap();
    assert_eq!(dist.curves.len(), 100);
    assert!(
        (dist.mean_auc - dist.averaged_score_auc).abs() < 0.02,
        "{} {}",
        dist.mean_auc,
        dist.averaged_score_auc
    );
    for i in 0..dist.grid.len() {
        assert!(dist.tpr_low[i] <= dist.tpr_mean[i] && dist.tpr_mean[i] <= dist.tpr_high[i]);
    }
}

#[test]
fn max_gmean_threshold_matches_brute_force() {
    let mut rng = seeded(7);
    for _ in 0..40 {
        let n = rng.random_range(5..80);
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0..20) as f64) / 19.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let t = select_threshold(&scores, &labels, ThresholdPolicy::MaxGmean).unwrap();
        let best = scores
            .iter()
            .map(|&c| confusion_metrics(&scores, &labels, c).unwrap().g_mean)
            .fold(f64::MIN, f64::max);
        let got = confusion_metrics(&scores, &labels, t).unwrap().g_mean;
        assert!((got - best).abs() < 1e-12, "{got} vs {best}");
    }
    assert_eq!(
        select_threshold(&[0.9, 0.1], &[1, 0], ThresholdPolicy::Fixed05).unwrap(),
        0.5
    );
}

#[test]
fn metric_identities_hold() {
    let mut rng = seeded(8);
    for _ in 0..200 {
        let (tp, fp, tn, fn_) = (
            rng.random_range(1..50),
            rng.random_range(1..50),
            rng.random_range(1..50),
            rng.random_range(1..50),
        );
        let m = metrics_from_counts(tp, fp, tn, fn_);
        assert!((m.sensitivity + m.fnr - 1.0).abs() < 1e-12);
        assert!((m.specificity + m.fpr - 1.0).abs() < 1e-12);
        assert!((m.precision + m.fdr - 1.0).abs() < 1e-12);
        assert!((m.g_mean - (m.sensitivity * m.specificity).sqrt()).abs() < 1e-12);
        let f1 = 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
        assert!((m.f1 - f1).abs() < 1e-12);
        assert!(m.undefined.is_empty());
    }
    let m = metrics_from_counts(0, 0, 5, 0);
    assert!(m.undefined.contains(&"sensitivity".to_string()));
}

#[test]
fn linear_model_attributions_are_weight_times_input() {
    let model = BnnModel::new(
        small_spec(PosteriorKind::Deterministic, 5, vec![]),
        &mut seeded(9),
    )
    .unwrap();
    let w = model.layers()[0].weight.mu.row(0).to_vec();
    let x = [1.0, 0.0, 2.0, -1.0, 0.5];
    let a = integrated_gradients(&model, &x, &[0.0; 5], 16).unwrap();
    for i in 0..5 {
        assert!((a.scores[i] - w[i] * x[i]).abs() < 1e-12);
    }
    assert!(a.completeness_residual < 1e-12);
}

#[test]
fn zero_mean_weights_give_zero_attributions() {
    let mut model = BnnModel::new(
        small_spec(PosteriorKind::SpikeSlabRadial, 6, vec![4]),
        &mut seeded(10),
    )
    .unwrap();
    for layer in model.layers_mut() {
        layer.weight.mu.data_mut().fill(0.0);
    }
    let data = binary_toy(60, 6, 10);
    let report = feature_ranking(&model, &data, &RankingConfig::default(), None).unwrap();
    assert!(report
        .positive_scores
        .iter()
        .chain(&report.negative_scores)
        .all(|&s| s == 0.0));
}

#[test]
fn rankings_follow_a_feature_permutation() {
    let (model, val) = trained_toy(11);
    let f = model.input_dim();
    let mut perm: Vec<usize> = (0..f).collect();
    perm.shuffle(&mut seeded(12));
    // new column perm[j] holds old column j
    let mut pmodel = model.clone();
    let first = &mut pmodel.layers_mut()[0].weight;
    for t in [&mut first.theta_pi, &mut first.mu, &mut first.rho] {
        let old = t.clone();
        let out = old.shape()[0];
        for r in 0..out {
            for j in 0..f {
                t.data_mut()[r * f + perm[j]] = old.data()[r * f + j];
            }
        }
    }
    let mut px = val.x.clone();
    for i in 0..val.len() {
        for j in 0..f {
            px.data_mut()[i * f + perm[j]] = val.x.row(i)[j];
        }
    }
    let pval = Dataset::new(px, val.y.clone(), val.ids.clone()).unwrap();
    let cfg = RankingConfig {
        top_k: f,
        steps: 32,
        max_per_class: None,
    };
    let a = feature_ranking(&model, &val, &cfg, None).unwrap();
    let b = feature_ranking(&pmodel, &pval, &cfg, None).unwrap();
    for j in 0..f {
        assert!((a.positive_scores[j] - b.positive_scores[perm[j]]).abs() < 1e-9);
        assert!((a.negative_scores[j] - b.negative_scores[perm[j]]).abs() < 1e-9);
    }
    let ids_a: Vec<usize> = a.positive.iter().map(|r| perm[r.feature_id]).collect();
    let ids_b: Vec<usize> = b.positive.iter().map(|r| r.feature_id).collect();
    assert_eq!(ids_a, ids_b);
}

#[test]
fn planted_features_dominate_the_positive_ranking() {
    let synth = SynthConfig {
        n_records: 3000,
        num_features: 100,
        positive_rate: 0.2,
        n_informative: 10,
        background_rate: 0.05,
        seed: 13,
        ..Default::default()
    };
    let recs = synth_generate(&synth).unwrap();
    let data = Dataset::from_records(&recs, &AggregationConfig::default(), 100).unwrap();
    let tr = data.subset(&(0..2400).collect::<Vec<_>>());
    let va = data.subset(&(2400..3000).collect::<Vec<_>>());
    let mut spec = small_spec(PosteriorKind::SpikeSlabRadial, 100, vec![16]);
    spec.prior.lambda_p = 0.1;
    let model = BnnModel::new(spec, &mut substream(13, stream::INIT)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 64,
        learning_rate: 1e-2,
        mc_samples: 8,
        val_samples: 4,
        seed: 13,
        ..Default::default()
    };
    let out = train(model, &tr, &va, &cfg).unwrap();
    let report = feature_ranking(&out.best_model, &va, &RankingConfig::default(), None).unwrap();
    let planted = informative_features(&synth);
    let hits = report
        .positive
        .iter()
        .filter(|r| planted.contains(&r.feature_id))
        .count();
    assert!(hits >= 8, "{hits} of 10 planted");
    assert!(report.negative.windows(2).all(|w| w[0].score <= w[1].score));
}

#[test]
fn writers_produce_readable_files() {
    let dir = tempfile::tempdir().unwrap();
    let scores = [0.9, 0.2, 0.7, 0.4];
    let labels = [1, 0, 1, 0];
    let m = confusion_metrics(&scores, &labels, 0.5).unwrap();
    write_metrics_csv(&m, &dir.path().join("m.csv")).unwrap();
    write_json(&m, &dir.path().join("m.json")).unwrap();
    let back: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(back.tp, 2);
    let dist = roc_distribution_from_samples(
        &[scores.to_vec(), scores.to_vec()],
        &labels,
        &default_fpr_grid(11),
    )
    .unwrap();
    write_roc_csv(&dist, &dir.path().join("roc.csv")).unwrap();
    let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert_eq!(roc.lines().count(), 12);
}
