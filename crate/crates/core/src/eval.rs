//! ROC curves, threshold metrics and Integrated-Gradients attributions.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Dataset, FeatureKind, FeatureMetadata};
use crate::error::{Error, Result};
use crate::layers::{predict_proba, BnnModel, ForwardMode};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// TPR at `fpr`, linear between points and taking the upper value on
    /// vertical segments. Pinned to 0 at `fpr = 0`.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        if fpr <= 0.0 {
            return 0.0;
        }
        if fpr >= 1.0 {
            return 1.0;
        }
        let mut best: Option<f64> = None;
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x1 == fpr {
                best = Some(best.map_or(y1, |b: f64| b.max(y1)));
            } else if x0 < fpr && fpr < x1 {
                return y0 + (y1 - y0) * (fpr - x0) / (x1 - x0);
            }
        }
        best.unwrap_or(1.0)
    }
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Threshold sweep over distinct scores, ties grouped into one step.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "roc_points",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::LabelDomain(l as f64));
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Probability that a random positive outscores a random negative, ties ½.
/// Quadratic; meant as a reference.
pub fn mann_whitney_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(labels)?;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    Ok(wins / (pos * neg) as f64)
}

pub fn default_fpr_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocDistribution {
    pub curves: Vec<RocCurve>,
    pub grid: Vec<f64>,
    pub tpr_mean: Vec<f64>,
    pub tpr_low: Vec<f64>,
    pub tpr_high: Vec<f64>,
    /// Trapezoidal AUC of the mean curve on the grid.
    pub mean_auc: f64,
    /// AUC of the curve built from posterior-averaged scores.
    pub averaged_score_auc: f64,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

/// Per-sample ROC curves from an `(R, batch)` score matrix, summarised on
/// `grid` by the mean and the 5%/95% pointwise quantiles.
pub fn roc_distribution_from_samples(
    samples: &[Vec<f64>],
    labels: &[u8],
    grid: &[f64],
) -> Result<RocDistribution> {
    if samples.is_empty() {
        return Err(Error::Domain("need at least one posterior sample".into()));
    }
    if grid.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Domain("fpr grid must lie in [0, 1]".into()));
    }
    let curves: Vec<RocCurve> = samples
        .iter()
        .map(|s| roc_points(s, labels))
        .collect::<Result<_>>()?;
    let r = curves.len() as f64;
    let mut tpr_mean = Vec::with_capacity(grid.len());
    let mut tpr_low = Vec::with_capacity(grid.len());
    let mut tpr_high = Vec::with_capacity(grid.len());
    for &f in grid {
        let mut col: Vec<f64> = curves.iter().map(|c| c.tpr_at(f)).collect();
        col.sort_by(f64::total_cmp);
        let mean = (col.iter().sum::<f64>() / r).clamp(col[0], col[col.len() - 1]);
        tpr_mean.push(mean);
        tpr_low.push(quantile(&col, 0.05).min(mean));
        tpr_high.push(quantile(&col, 0.95).max(mean));
    }
    let mean_points: Vec<(f64, f64)> = grid.iter().copied().zip(tpr_mean.iter().copied()).collect();
    let n = labels.len();
    let averaged: Vec<f64> = (0..n)
        .map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / r)
        .collect();
    Ok(RocDistribution {
        mean_auc: trapezoid(&mean_points),
        averaged_score_auc: roc_points(&averaged, labels)?.auc,
        curves,
        grid: grid.to_vec(),
        tpr_mean,
        tpr_low,
        tpr_high,
    })
}

pub fn labels_u8(y: &[f64]) -> Vec<u8> {
    y.iter().map(|&v| v as u8).collect()
}

pub fn roc_distribution<R: Rng + ?Sized>(
    model: &BnnModel,
    data: &Dataset,
    r: usize,
    grid: &[f64],
    rng: &mut R,
) -> Result<RocDistribution> {
    if r < 2 {
        return Err(Error::Domain("need at least two posterior samples".into()));
    }
    let pred = predict_proba(model, &data.x, r, rng)?;
    roc_distribution_from_samples(&pred.samples, &labels_u8(&data.y), grid)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub fdr: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub f2: f64,
    pub g_mean: f64,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// Names of fields that hit a zero denominator and were set to 0.
    pub undefined: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Counts-only metrics; `score >= threshold` predicts positive.
pub fn metrics_from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> MetricsReport {
    let mut undefined = Vec::new();
    let (tpf, fpf, tnf, fnf) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let sensitivity = ratio(tpf, tpf + fnf, "sensitivity", &mut undefined);
    let specificity = ratio(tnf, tnf + fpf, "specificity", &mut undefined);
    let precision = ratio(tpf, tpf + fpf, "precision", &mut undefined);
    let accuracy = ratio(tpf + tnf, tpf + tnf + fpf + fnf, "accuracy", &mut undefined);
    MetricsReport {
        auc: None,
        sensitivity,
        specificity,
        precision,
        fpr: 1.0 - specificity,
        fnr: 1.0 - sensitivity,
        fdr: 1.0 - precision,
        accuracy,
        balanced_accuracy: (sensitivity + specificity) / 2.0,
        f1: f_beta(precision, sensitivity, 1.0),
        f2: f_beta(precision, sensitivity, 2.0),
        g_mean: (sensitivity * specificity).sqrt(),
        threshold: f64::NAN,
        tp,
        fp,
        tn,
        fn_,
        undefined,
    }
}

pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion_metrics",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut report = metrics_from_counts(tp, fp, tn, fn_);
    report.threshold = threshold;
    report.auc = roc_points(scores, labels).ok().map(|c| c.auc);
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    #[serde(rename = "fixed_0.5")]
    Fixed05,
    #[default]
    MaxGmean,
}

/// Threshold chosen on validation scores. `MaxGmean` scans every distinct
/// score; ties go to the smaller false-positive rate.
pub fn select_threshold(scores: &[f64], labels: &[u8], policy: ThresholdPolicy) -> Result<f64> {
    if policy == ThresholdPolicy::Fixed05 {
        return Ok(0.5);
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<(f64, f64, f64)> = None; // (gmean, fpr, threshold)
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let sens = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        let g = (sens * (1.0 - fpr)).sqrt();
        let better = match best {
            None => true,
            Some((bg, bf, _)) => g > bg || (g == bg && fpr < bf),
        };
        if better {
            best = Some((g, fpr, s));
        }
    }
    Ok(best.map(|b| b.2.clamp(0.0, 1.0)).unwrap_or(0.5))
}

/// Integrated Gradients for one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub scores: Vec<f64>,
    /// `F(x) − F(baseline)`.
    pub delta: f64,
    /// `|Σ scores − delta|`.
    pub completeness_residual: f64,
}

/// IG of the posterior-mean logit with a midpoint Riemann sum of `steps`
/// points on the straight path from `baseline` to `x`.
pub fn integrated_gradients(
    model: &BnnModel,
    x: &[f64],
    baseline: &[f64],
    steps: usize,
) -> Result<Attribution> {
    if steps == 0 {
        return Err(Error::Domain("steps must be positive".into()));
    }
    let f = model.input_dim();
    if x.len() != f || baseline.len() != f {
        return Err(Error::ShapeMismatch {
            op: "integrated_gradients",
            lhs: vec![x.len(), baseline.len()],
            rhs: vec![f],
        });
    }
    let diff: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mut path = Vec::with_capacity(steps * f);
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        path.extend(baseline.iter().zip(&diff).map(|(b, d)| b + alpha * d));
    }
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let xv = g.param(Tensor::new(vec![steps, f], path)?);
    let noise = model.draw_noise(ForwardMode::PosteriorMean, &mut crate::rng::seeded(0))?;
    let logits = model.forward(&mut g, &vars, xv, ForwardMode::PosteriorMean, &noise)?;
    let total = g.sum(logits)?;
    let grads = g.backward(total)?;
    let gx = grads.get_or_zeros(xv, &[steps, f]);
    let mut scores = vec![0.0; f];
    for k in 0..steps {
        for (s, gi) in scores.iter_mut().zip(gx.row(k)) {
            *s += gi;
        }
    }
    for (s, d) in scores.iter_mut().zip(&diff) {
        *s *= d / steps as f64;
    }
    let ends = Tensor::new(vec![2, f], x.iter().chain(baseline).copied().collect())?;
    let fx = model.posterior_mean_logits(&ends)?;
    let delta = fx.data()[0] - fx.data()[1];
    let completeness_residual = (scores.iter().sum::<f64>() - delta).abs();
    Ok(Attribution {
        scores,
        delta,
        completeness_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature_id: usize,
    pub name: String,
    pub kind: Option<FeatureKind>,
    pub score: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// Mean IG over positive inputs, highest first.
    pub positive: Vec<RankedFeature>,
    /// Mean IG over negative inputs, most negative first.
    pub negative: Vec<RankedFeature>,
    pub positive_scores: Vec<f64>,
    pub negative_scores: Vec<f64>,
    pub steps: usize,
    pub inputs_per_class: (usize, usize),
    pub max_completeness_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub top_k: usize,
    pub steps: usize,
    /// Use at most this many inputs of each class (first rows in order).
    pub max_per_class: Option<usize>,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            steps: 128,
            max_per_class: Some(500),
        }
    }
}

fn mean_attribution(
    model: &BnnModel,
    data: &Dataset,
    steps: usize,
    residual: &mut f64,
) -> Result<Vec<f64>> {
    let f = model.input_dim();
    let baseline = vec![0.0; f];
    let mut acc = vec![0.0; f];
    for i in 0..data.len() {
        let a = integrated_gradients(model, data.x.row(i), &baseline, steps)?;
        *residual = residual.max(a.completeness_residual);
        for (s, v) in acc.iter_mut().zip(&a.scores) {
            *s += v;
        }
    }
    let n = data.len().max(1) as f64;
    Ok(acc.into_iter().map(|s| s / n).collect())
}

fn rank(
    scores: &[f64],
    top_k: usize,
    descending: bool,
    meta: Option<&FeatureMetadata>,
) -> Vec<RankedFeature> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| {
        let c = scores[a].total_cmp(&scores[b]);
        (if descending { c.reverse() } else { c }).then(a.cmp(&b))
    });
    ids.into_iter()
        .take(top_k)
        .enumerate()
        .map(|(r, id)| {
            let info = meta.and_then(|m| m.get(&id));
            RankedFeature {
                feature_id: id,
                name: info.map_or_else(|| format!("feature_{id}"), |i| i.name.clone()),
                kind: info.map(|i| i.kind),
                score: scores[id],
                rank: r + 1,
            }
        })
        .collect()
}

/// Global IG rankings over positive-labeled and negative-labeled inputs.
pub fn feature_ranking(
    model: &BnnModel,
    data: &Dataset,
    cfg: &RankingConfig,
    meta: Option<&FeatureMetadata>,
) -> Result<AttributionReport> {
    class_counts(&labels_u8(&data.y))?;
    let cap = |d: Dataset| match cfg.max_per_class {
        Some(m) if d.len() > m => d.subset(&(0..m).collect::<Vec<_>>()),
        _ => d,
    };
    let pos = cap(data.with_label(1.0));
    let neg = cap(data.with_label(0.0));
    let mut residual: f64 = 0.0;
    let positive_scores = mean_attribution(model, &pos, cfg.steps, &mut residual)?;
    let negative_scores = mean_attribution(model, &neg, cfg.steps, &mut residual)?;
    Ok(AttributionReport {
        positive: rank(&positive_scores, cfg.top_k, true, meta),
        negative: rank(&negative_scores, cfg.top_k, false, meta),
        positive_scores,
        negative_scores,
        steps: cfg.steps,
        inputs_per_class: (pos.len(), neg.len()),
        max_completeness_residual: residual,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// `metric,value` rows.
pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value"])?;
    let rows = [
        ("auc", report.auc.unwrap_or(f64::NAN)),
        ("sensitivity", report.sensitivity),
        ("specificity", report.specificity),
        ("precision", report.precision),
        ("fpr", report.fpr),
        ("fnr", report.fnr),
        ("fdr", report.fdr),
        ("accuracy", report.accuracy),
        ("balanced_accuracy", report.balanced_accuracy),
        ("f1", report.f1),
        ("f2", report.f2),
        ("g_mean", report.g_mean),
        ("threshold", report.threshold),
        ("tp", report.tp as f64),
        ("fp", report.fp as f64),
        ("tn", report.tn as f64),
        ("fn", report.fn_ as f64),
    ];
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv(dist: &RocDistribution, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fpr", "tpr_mean", "tpr_low", "tpr_high"])?;
    for i in 0..dist.grid.len() {
        w.write_record(
            [
                dist.grid[i],
                dist.tpr_mean[i],
                dist.tpr_low[i],
                dist.tpr_high[i],
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attribution_csv(features: &[RankedFeature], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature_id", "name", "kind", "score", "rank"])?;
    for f in features {
        let kind = match f.kind {
            Some(FeatureKind::Mitre) => "mitre",
            Some(FeatureKind::Rule) => "rule",
            None => "",
        };
        w.write_record([
            f.feature_id.to_string(),
            f.name.clone(),
            kind.to_string(),
            f.score.to_string(),
            f.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_fixture_two_thirds() {
        let c = roc_points(&[0.9, 0.8, 0.4, 0.2], &[1, 1, 0, 1]).unwrap();
        assert!((c.auc - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn separable_scores_have_unit_auc() {
        let c = roc_points(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.auc, 1.0);
    }

    #[test]
    fn tied_scores_count_half() {
        let c = roc_points(&[0.5, 0.5], &[1, 0]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            roc_points(&[0.1, 0.2], &[1, 1]),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn hand_computed_confusion_fixture() {
        let m = metrics_from_counts(3, 1, 5, 1);
        assert_eq!(m.sensitivity, 0.75);
        assert!((m.specificity - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.accuracy, 0.8);
        assert!((m.g_mean - (0.75f64 * 5.0 / 6.0).sqrt()).abs() < 1e-15);
        assert!((m.g_mean - 0.7906).abs() < 1e-4);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = confusion_metrics(&[0.1, 0.2], &[0, 0], 0.5).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.undefined.contains(&"precision".to_string()));
        assert!(m.undefined.contains(&"sensitivity".to_string()));
        assert_eq!(m.auc, None);
    }

    #[test]
    fn threshold_zero_predicts_everything_positive() {
        let m = confusion_metrics(&[0.0, 0.3, 0.9], &[0, 1, 0], 0.0).unwrap();
        assert_eq!((m.sensitivity, m.specificity), (1.0, 0.0));
    }

    #[test]
    fn fixed_policy_ignores_data() {
        assert_eq!(
            select_threshold(&[0.9], &[1], ThresholdPolicy::Fixed05).unwrap(),
            0.5
        );
    }

    #[test]
    fn grid_endpoints_only() {
        let s = vec![vec![0.1, 0.9, 0.4], vec![0.3, 0.6, 0.7]];
        let d = roc_distribution_from_samples(&s, &[0, 1, 1], &[0.0, 1.0]).unwrap();
        assert_eq!(d.tpr_mean, vec![0.0, 1.0]);
        assert_eq!(d.mean_auc, 0.5);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 1.0], 0.05), 0.05);
        assert_eq!(quantile(&[2.0], 0.95), 2.0);
    }
}
