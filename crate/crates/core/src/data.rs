//! Incident records, time-window aggregation, synthetic data and dataset files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, substream};
use crate::tensor::Tensor;

pub const DEFAULT_NUM_FEATURES: usize = 706;
pub const DEFAULT_MITRE_FEATURES: usize = 298;
pub const DEFAULT_RULE_FEATURES: usize = 408;

/// A labeled incident: timestamped feature events. Label 1 is ransomware.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_id: String,
    pub label: u8,
    /// `(t_seconds, feature_id)` sorted by time.
    pub events: Vec<(f64, usize)>,
}

impl IncidentRecord {
    pub fn validate(&self, num_features: usize) -> Result<()> {
        if self.label > 1 {
            return Err(Error::LabelDomain(self.label as f64));
        }
        let mut prev = 0.0;
        for &(t, f) in &self.events {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::SchemaMismatch(format!(
                    "{}: event time {t} is not a non-negative number",
                    self.incident_id
                )));
            }
            if t < prev {
                return Err(Error::SchemaMismatch(format!(
                    "{}: events are not sorted by time",
                    self.incident_id
                )));
            }
            if f >= num_features {
                return Err(Error::SchemaMismatch(format!(
                    "{}: feature id {f} out of range for {num_features} features",
                    self.incident_id
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    WindowedSequence,
    #[default]
    CollapsedVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub window_seconds: f64,
    pub horizon_seconds: f64,
    pub mode: AggregationMode,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            window_seconds: 60.0,
            horizon_seconds: 3600.0,
            mode: AggregationMode::CollapsedVector,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds > 0.0 && self.window_seconds <= self.horizon_seconds)
            || !self.horizon_seconds.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "need 0 < window_seconds <= horizon_seconds, got ({}, {})",
                self.window_seconds, self.horizon_seconds
            )));
        }
        Ok(())
    }
}

/// Binary features observed in one time window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    /// Window `k` covers `[t0 + k·window, t0 + (k+1)·window)`.
    pub index: u64,
    pub features: Vec<u8>,
}

fn in_horizon_events<'a>(
    record: &'a IncidentRecord,
    cfg: &AggregationConfig,
) -> Result<impl Iterator<Item = (f64, usize)> + 'a> {
    let &(t0, _) = record
        .events
        .first()
        .ok_or_else(|| Error::EmptyRecord(record.incident_id.clone()))?;
    let horizon = cfg.horizon_seconds;
    Ok(record
        .events
        .iter()
        .map(move |&(t, f)| (t - t0, f))
        .filter(move |&(dt, _)| dt < horizon))
}

/// Or-aggregate events into windows anchored at the first event.
/// Empty windows are omitted; events at or after `t0 + horizon` are dropped.
pub fn aggregate_events(
    record: &IncidentRecord,
    cfg: &AggregationConfig,
    num_features: usize,
) -> Result<Vec<Window>> {
    cfg.validate()?;
    let mut windows: BTreeMap<u64, Vec<u8>> = BTreeMap::new();
    for (dt, f) in in_horizon_events(record, cfg)? {
        if f >= num_features {
            return Err(Error::SchemaMismatch(format!(
                "feature id {f} out of range"
            )));
        }
        let k = (dt / cfg.window_seconds).floor() as u64;
        windows.entry(k).or_insert_with(|| vec![0; num_features])[f] = 1;
    }
    Ok(windows
        .into_iter()
        .map(|(index, features)| Window { index, features })
        .collect())
}

/// Logical-or of every in-horizon event into one vector.
pub fn collapse_to_vector(
    record: &IncidentRecord,
    cfg: &AggregationConfig,
    num_features: usize,
) -> Result<Vec<u8>> {
    cfg.validate()?;
    let mut out = vec![0u8; num_features];
    for (_, f) in in_horizon_events(record, cfg)? {
        if f >= num_features {
            return Err(Error::SchemaMismatch(format!(
                "feature id {f} out of range"
            )));
        }
        out[f] = 1;
    }
    Ok(out)
}

/// Parameters of the synthetic incident generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_records: usize,
    pub num_features: usize,
    pub positive_rate: f64,
    pub n_informative: usize,
    /// Activation probability of each informative feature for positives.
    pub informative_rate_positive: f64,
    /// Activation probability of each informative feature for negatives.
    pub informative_rate_negative: f64,
    /// Activation probability of every other feature, both classes.
    pub background_rate: f64,
    /// Each active feature fires between 1 and this many events.
    pub max_events_per_feature: usize,
    pub horizon_seconds: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 20_000,
            num_features: DEFAULT_NUM_FEATURES,
            positive_rate: 0.01,
            n_informative: 10,
            informative_rate_positive: 0.6,
            informative_rate_negative: 0.05,
            background_rate: 5.0 / (DEFAULT_NUM_FEATURES - 10) as f64,
            max_events_per_feature: 3,
            horizon_seconds: 3600.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad(format!(
                "positive_rate must lie in (0, 1), got {}",
                self.positive_rate
            ));
        }
        if self.num_features == 0 || self.n_informative > self.num_features {
            return bad(format!(
                "need 0 < num_features and n_informative <= num_features, got ({}, {})",
                self.num_features, self.n_informative
            ));
        }
        for (name, p) in [
            ("informative_rate_positive", self.informative_rate_positive),
            ("informative_rate_negative", self.informative_rate_negative),
            ("background_rate", self.background_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.max_events_per_feature == 0 || !(self.horizon_seconds > 0.0) {
            return bad("max_events_per_feature and horizon_seconds must be positive".into());
        }
        Ok(())
    }

    /// Set the background rate so a negative record activates `mean` features
    /// on average before truncation.
    pub fn with_mean_active(mut self, mean: f64) -> Self {
        let informative = self.n_informative as f64 * self.informative_rate_negative;
        let others = (self.num_features - self.n_informative).max(1) as f64;
        self.background_rate = ((mean - informative) / others).clamp(0.0, 1.0);
        self
    }
}

/// The planted informative feature ids, sorted. Depends only on the seed,
/// `num_features` and `n_informative`.
pub fn informative_features(cfg: &SynthConfig) -> Vec<usize> {
    let mut rng = substream(cfg.seed, stream::SYNTH_FEATURES);
    let mut ids = index::sample(&mut rng, cfg.num_features, cfg.n_informative).into_vec();
    ids.sort_unstable();
    ids
}

/// Generate labeled incidents with planted class-dependent features.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<IncidentRecord>> {
    cfg.validate()?;
    let informative = informative_features(cfg);
    let is_informative: BTreeSet<usize> = informative.iter().copied().collect();
    let background: Vec<usize> = (0..cfg.num_features)
        .filter(|f| !is_informative.contains(f))
        .collect();
    let mut rng = substream(cfg.seed, stream::SYNTH);
    let t_max = cfg.horizon_seconds * 1.1;

    let mut records = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let label = u8::from(rng.random::<f64>() < cfg.positive_rate);
        let p_inf = if label == 1 {
            cfg.informative_rate_positive
        } else {
            cfg.informative_rate_negative
        };
        let mut active = Vec::new();
        for f in 0..cfg.num_features {
            let p = if is_informative.contains(&f) {
                p_inf
            } else {
                cfg.background_rate
            };
            if rng.random::<f64>() < p {
                active.push(f);
            }
        }
        if active.is_empty() {
            let pool = if background.is_empty() {
                &informative
            } else {
                &background
            };
            active.push(pool[rng.random_range(0..pool.len())]);
        }
        let mut events = Vec::new();
        for f in active {
            let n = rng.random_range(1..=cfg.max_events_per_feature);
            for _ in 0..n {
                events.push((rng.random::<f64>() * t_max, f));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        records.push(IncidentRecord {
            incident_id: format!("inc-{i:06}"),
            label,
            events,
        });
    }
    Ok(records)
}

/// Index split into `(train, validation)`; both sorted ascending.
///
/// With `stratified`, each label keeps `round(fraction · count)` of its
/// members in the training side.
pub fn split_indices(
    labels: &[u8],
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = substream(seed, stream::SPLIT);
    let strata: Vec<Vec<usize>> = if stratified {
        [0u8, 1u8]
            .iter()
            .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut members in strata {
        members.shuffle(&mut rng);
        let k = (fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..k]);
        val.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Split records into disjoint, exhaustive training and validation sets.
pub fn split_train_val(
    records: &[IncidentRecord],
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<IncidentRecord>, Vec<IncidentRecord>)> {
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let (train, val) = split_indices(&labels, fraction, seed, stratified)?;
    Ok((
        train.iter().map(|&i| records[i].clone()).collect(),
        val.iter().map(|&i| records[i].clone()).collect(),
    ))
}

/// Collapsed design matrix with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(n, num_features)` matrix of 0/1 values.
    pub x: Tensor,
    pub y: Vec<f64>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        if x.ndim() != 2 || x.shape()[0] != y.len() || ids.len() != y.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: x.shape().to_vec(),
                rhs: vec![y.len(), ids.len()],
            });
        }
        if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::LabelDomain(bad));
        }
        Ok(Self { x, y, ids })
    }

    pub fn from_records(
        records: &[IncidentRecord],
        cfg: &AggregationConfig,
        num_features: usize,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(records.len() * num_features);
        for r in records {
            data.extend(
                collapse_to_vector(r, cfg, num_features)?
                    .into_iter()
                    .map(f64::from),
            );
        }
        Self::new(
            Tensor::new(vec![records.len(), num_features], data)?,
            records.iter().map(|r| f64::from(r.label)).collect(),
            records.iter().map(|r| r.incident_id.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let f = self.num_features();
        let mut data = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
        }
        Self {
            x: Tensor::new(vec![indices.len(), f], data).expect("rows have width f"),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Rows matching `label`.
    pub fn with_label(&self, label: f64) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.y[i] == label).collect();
        self.subset(&idx)
    }
}

pub fn write_jsonl(records: &[IncidentRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read and validate a JSON-lines dataset.
pub fn read_jsonl(path: &Path, num_features: usize) -> Result<Vec<IncidentRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: IncidentRecord = serde_json::from_str(&line).map_err(|e| {
            Error::SchemaMismatch(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        r.validate(num_features)?;
        records.push(r);
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mitre,
    Rule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub kind: FeatureKind,
    pub name: String,
}

/// Feature id → metadata.
pub type FeatureMetadata = BTreeMap<usize, FeatureInfo>;

/// The first 298 ids are MITRE ATT&CK techniques, the rest rule-based
/// detections (truncated or extended to `num_features`).
pub fn default_feature_metadata(num_features: usize) -> FeatureMetadata {
    (0..num_features)
        .map(|f| {
            let info = if f < DEFAULT_MITRE_FEATURES {
                FeatureInfo {
                    kind: FeatureKind::Mitre,
                    name: format!("mitre_technique_{f:03}"),
                }
            } else {
                FeatureInfo {
                    kind: FeatureKind::Rule,
                    name: format!("rule_{:03}", f - DEFAULT_MITRE_FEATURES),
                }
            };
            (f, info)
        })
        .collect()
}

pub fn write_feature_metadata(meta: &FeatureMetadata, path: &Path) -> Result<()> {
    let as_strings: BTreeMap<String, &FeatureInfo> =
        meta.iter().map(|(k, v)| (k.to_string(), v)).collect();
    std::fs::write(path, serde_json::to_string_pretty(&as_strings)?)?;
    Ok(())
}

pub fn read_feature_metadata(path: &Path) -> Result<FeatureMetadata> {
    let raw: BTreeMap<String, FeatureInfo> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<usize>()
                .map(|id| (id, v))
                .map_err(|_| Error::SchemaMismatch(format!("feature id {k} is not an integer")))
        })
        .collect()
}

/// CSV with header `feature_0..feature_{F-1},label`.
pub fn write_collapsed_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let f = dataset.num_features();
    let mut header: Vec<String> = (0..f).map(|i| format!("feature_{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset
            .x
            .row(i)
            .iter()
            .map(|&v| (v as u8).to_string())
            .collect();
        row.push((dataset.y[i] as u8).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(events: Vec<(f64, usize)>) -> IncidentRecord {
        IncidentRecord {
            incident_id: "r".into(),
            label: 0,
            events,
        }
    }

    #[test]
    fn same_window_sets_one_bit() {
        let cfg = AggregationConfig::default();
        let w = aggregate_events(&record(vec![(0.0, 4), (59.0, 4)]), &cfg, 8).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].features.iter().filter(|&&b| b == 1).count(), 1);
    }

    #[test]
    fn crossing_the_boundary_opens_a_second_window() {
        let cfg = AggregationConfig::default();
        let w = aggregate_events(&record(vec![(0.0, 1), (61.0, 2)]), &cfg, 8).unwrap();
        assert_eq!(w.iter().map(|w| w.index).collect::<Vec<_>>(), vec![0, 1]);
        // exactly one window length later belongs to the next window
        let w = aggregate_events(&record(vec![(0.0, 1), (60.0, 2)]), &cfg, 8).unwrap();
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn events_past_the_horizon_are_dropped() {
        let cfg = AggregationConfig::default();
        let r = record(vec![(0.0, 1), (3599.9, 2), (3600.0, 3), (3601.0, 4)]);
        let v = collapse_to_vector(&r, &cfg, 8).unwrap();
        assert_eq!(v, vec![0, 1, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn windows_are_anchored_at_the_first_event() {
        let cfg = AggregationConfig::default();
        let r = record(vec![(1000.0, 1), (1059.0, 2), (1060.0, 3), (4601.0, 5)]);
        let w = aggregate_events(&r, &cfg, 8).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].features, vec![0, 1, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn repeated_feature_collapses_to_one_bit() {
        let cfg = AggregationConfig::default();
        let v =
            collapse_to_vector(&record(vec![(0.0, 3), (10.0, 3), (200.0, 3)]), &cfg, 6).unwrap();
        assert_eq!(v, vec![0, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn empty_record_is_an_error() {
        let cfg = AggregationConfig::default();
        assert!(matches!(
            collapse_to_vector(&record(vec![]), &cfg, 4),
            Err(Error::EmptyRecord(_))
        ));
        assert!(matches!(
            aggregate_events(&record(vec![]), &cfg, 4),
            Err(Error::EmptyRecord(_))
        ));
    }

    #[test]
    fn bad_window_config_is_rejected() {
        let cfg = AggregationConfig {
            window_seconds: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AggregationConfig {
            window_seconds: 100.0,
            horizon_seconds: 50.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let labels = vec![0u8; 10];
        let (a, b) = split_indices(&labels, 0.8, 1, false).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));

        let mut labels = vec![0u8; 1000];
        for l in labels.iter_mut().take(10) {
            *l = 1;
        }
        let (train, val) = split_indices(&labels, 0.8, 3, true).unwrap();
        assert_eq!(train.iter().filter(|&&i| labels[i] == 1).count(), 8);
        assert_eq!(train.len() + val.len(), 1000);
        assert_eq!(split_indices(&labels, 0.8, 3, true).unwrap(), (train, val));
        assert!(split_indices(&labels, 1.0, 3, true).is_err());
    }

    #[test]
    fn metadata_has_mitre_then_rule_ids() {
        let meta = default_feature_metadata(DEFAULT_NUM_FEATURES);
        let mitre = meta
            .values()
            .filter(|m| m.kind == FeatureKind::Mitre)
            .count();
        assert_eq!((mitre, meta.len() - mitre), (298, 408));
    }

    #[test]
    fn record_validation() {
        let mut r = record(vec![(5.0, 1), (2.0, 1)]);
        assert!(r.validate(4).is_err());
        r.events = vec![(0.0, 9)];
        assert!(r.validate(4).is_err());
        r.events = vec![(0.0, 1)];
        r.label = 2;
        assert!(matches!(r.validate(4), Err(Error::LabelDomain(_))));
    }
}
