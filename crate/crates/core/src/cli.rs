//! The `ssbnn` command line: generate-data, train, evaluate, importance.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{
    default_feature_metadata, informative_features, read_feature_metadata, read_jsonl,
    split_train_val, synth_generate, write_collapsed_csv, write_feature_metadata, write_jsonl,
    AggregationConfig, Dataset, FeatureKind, FeatureMetadata, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    confusion_metrics, default_fpr_grid, feature_ranking, labels_u8, roc_distribution_from_samples,
    select_threshold, write_attribution_csv, write_json, write_metrics_csv, write_roc_csv,
    RankedFeature, RankingConfig, ThresholdPolicy,
};
use crate::layers::{predict_proba, BnnModel, ModelSpec, PosteriorKind, CHECKPOINT_SCHEMA_VERSION};
use crate::rng::{stream, substream};
use crate::trainer::{train, KlScale, TrainConfig, CHECKPOINT_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const METADATA_FILE: &str = "features.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Posterior draws per evaluation (`R`).
    pub posterior_samples: usize,
    pub grid_points: usize,
    pub threshold_policy: ThresholdPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            posterior_samples: 100,
            grid_points: 101,
            threshold_policy: ThresholdPolicy::MaxGmean,
        }
    }
}

/// Everything a command needs, loadable from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub aggregation: AggregationConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Fraction of records used for training; the rest validate.
    pub split_fraction: f64,
    pub stratified_split: bool,
    pub eval: EvalConfig,
    pub importance: RankingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            aggregation: AggregationConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            split_fraction: 0.8,
            stratified_split: true,
            eval: EvalConfig::default(),
            importance: RankingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Push the run seed and feature count into the sub-configs.
    pub fn resolve(mut self) -> Result<Self> {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.model.architecture.input_dim = self.synth.num_features;
        self.synth.validate()?;
        self.aggregation.validate()?;
        self.model.architecture.validate()?;
        self.model.prior.validate()?;
        self.train.validate()?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.eval.posterior_samples == 0 || self.eval.grid_points < 2 {
            return Err(Error::InvalidConfig(
                "eval needs posterior_samples >= 1 and grid_points >= 2".into(),
            ));
        }
        if self.importance.steps == 0 {
            return Err(Error::InvalidConfig(
                "importance steps must be positive".into(),
            ));
        }
        Ok(self)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ssbnn",
    version,
    about = "Spike-and-slab Bayesian neural networks for incident classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset, feature metadata and a manifest.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_records: Option<usize>,
        /// Also export the collapsed design matrix as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Train a model and write its best checkpoint and per-epoch report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_posterior_kind)]
        posterior_kind: Option<PosteriorKind>,
        #[arg(long)]
        epochs: Option<usize>,
        /// per_dataset, per_batch_count or fixed_beta=<value>.
        #[arg(long, value_parser = parse_kl_scale)]
        kl_scale: Option<KlScale>,
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Metrics and ROC files for a checkpoint on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset used to pick the threshold; defaults to `--data`.
        #[arg(long)]
        val_data: Option<PathBuf>,
        /// Posterior draws (`R`).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Integrated-Gradients feature rankings.
    Importance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn parse_posterior_kind(s: &str) -> std::result::Result<PosteriorKind, String> {
    match s {
        "spike_slab_radial" => Ok(PosteriorKind::SpikeSlabRadial),
        "gaussian" => Ok(PosteriorKind::Gaussian),
        "deterministic" => Ok(PosteriorKind::Deterministic),
        other => Err(format!(
            "unknown posterior kind {other:?}; expected spike_slab_radial, gaussian or deterministic"
        )),
    }
}

pub fn parse_kl_scale(s: &str) -> std::result::Result<KlScale, String> {
    match s {
        "per_dataset" => Ok(KlScale::PerDataset),
        "per_batch_count" => Ok(KlScale::PerBatchCount),
        _ => match s.strip_prefix("fixed_beta=") {
            Some(v) => v
                .parse::<f64>()
                .map(|beta| KlScale::FixedBeta { beta })
                .map_err(|e| format!("bad beta {v:?}: {e}")),
            None => Err(format!(
                "unknown kl scale {s:?}; expected per_dataset, per_batch_count or fixed_beta=<value>"
            )),
        },
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => EXIT_INVALID_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::SchemaMismatch(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    details: serde_json::Value,
) -> Result<()> {
    write_json(cfg, &out.join(RUN_CONFIG_FILE))?;
    let manifest = json!({
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "command": command,
        "seed": cfg.seed,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "details": details,
    });
    write_json(&manifest, &out.join(MANIFEST_FILE))
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let records = read_jsonl(path, cfg.synth.num_features)?;
    Dataset::from_records(&records, &cfg.aggregation, cfg.synth.num_features)
}

fn load_model(path: &Path, cfg: &RunConfig) -> Result<BnnModel> {
    let (model, _) = BnnModel::load_checkpoint(path)?;
    if model.input_dim() != cfg.synth.num_features {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint expects {} features, config has {}",
            model.input_dim(),
            cfg.synth.num_features
        )));
    }
    Ok(model)
}

pub fn cmd_generate_data(cfg: &RunConfig, out: &Path, csv: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let records = synth_generate(&cfg.synth)?;
    write_jsonl(&records, &out.join(DATASET_FILE))?;
    write_feature_metadata(
        &default_feature_metadata(cfg.synth.num_features),
        &out.join(METADATA_FILE),
    )?;
    if csv {
        let ds = Dataset::from_records(&records, &cfg.aggregation, cfg.synth.num_features)?;
        write_collapsed_csv(&ds, &out.join("collapsed.csv"))?;
    }
    let positives = records.iter().filter(|r| r.label == 1).count();
    let rate = if records.is_empty() {
        0.0
    } else {
        positives as f64 / records.len() as f64
    };
    write_manifest(
        out,
        "generate-data",
        cfg,
        json!({
            "n_records": records.len(),
            "positives": positives,
            "positive_rate": rate,
            "num_features": cfg.synth.num_features,
            "informative_features": informative_features(&cfg.synth),
            "outputs": [DATASET_FILE, METADATA_FILE],
        }),
    )
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let records = read_jsonl(data, cfg.synth.num_features)?;
    let (train_records, val_records) =
        split_train_val(&records, cfg.split_fraction, cfg.seed, cfg.stratified_split)?;
    let train_ds = Dataset::from_records(&train_records, &cfg.aggregation, cfg.synth.num_features)?;
    let val_ds = Dataset::from_records(&val_records, &cfg.aggregation, cfg.synth.num_features)?;
    let mut rng = substream(cfg.seed, stream::INIT);
    let model = BnnModel::new(cfg.model.clone(), &mut rng)?;
    let mut tcfg = cfg.train.clone();
    tcfg.checkpoint_dir = Some(out.to_path_buf());
    let outcome = train(model, &train_ds, &val_ds, &tcfg)?;
    write_json(&outcome.report, &out.join("train_summary.json"))?;
    write_jsonl(&val_records, &out.join("validation.jsonl"))?;
    write_manifest(
        out,
        "train",
        cfg,
        json!({
            "data": data,
            "n_train": train_ds.len(),
            "n_val": val_ds.len(),
            "best_epoch": outcome.report.best_epoch,
            "best_val_loss": outcome.report.best_val_loss(),
            "initial_val_loss": outcome.report.initial_val_loss,
            "outputs": [CHECKPOINT_FILE, crate::trainer::REPORT_FILE, "train_summary.json", "validation.jsonl"],
        }),
    )
}

/// Mean scores and per-draw score matrix. Deterministic models get a single draw.
fn score_samples(
    model: &BnnModel,
    ds: &Dataset,
    r: usize,
    seed: u64,
    index: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let r = if model.posterior_kind().is_probabilistic() {
        r
    } else {
        1
    };
    let mut rng = substream(
        crate::rng::derive_seed(seed, stream::EVAL, index),
        stream::EVAL,
    );
    let pred = predict_proba(model, &ds.x, r, &mut rng)?;
    Ok((pred.mean, pred.samples))
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    val_data: Option<&Path>,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let model = load_model(checkpoint, cfg)?;
    let ds = load_dataset(data, cfg)?;
    let labels = labels_u8(&ds.y);
    let r = cfg.eval.posterior_samples;
    let (scores, samples) = score_samples(&model, &ds, r, cfg.seed, 0)?;
    let (val_scores, val_labels) = match val_data {
        Some(p) => {
            let v = load_dataset(p, cfg)?;
            (
                score_samples(&model, &v, r, cfg.seed, 1)?.0,
                labels_u8(&v.y),
            )
        }
        None => (scores.clone(), labels.clone()),
    };
    let threshold = select_threshold(&val_scores, &val_labels, cfg.eval.threshold_policy)?;
    let chosen = confusion_metrics(&scores, &labels, threshold)?;
    let fixed = confusion_metrics(&scores, &labels, 0.5)?;
    let dist =
        roc_distribution_from_samples(&samples, &labels, &default_fpr_grid(cfg.eval.grid_points))?;
    write_json(
        &json!({
            "selected": chosen,
            "fixed_0.5": fixed,
            "threshold_policy": cfg.eval.threshold_policy,
            "roc_mean_auc": dist.mean_auc,
            "roc_averaged_score_auc": dist.averaged_score_auc,
        }),
        &out.join("metrics.json"),
    )?;
    write_metrics_csv(&chosen, &out.join("metrics.csv"))?;
    write_metrics_csv(&fixed, &out.join("metrics_fixed_0.5.csv"))?;
    write_roc_csv(&dist, &out.join("roc.csv"))?;
    write_manifest(
        out,
        "evaluate",
        cfg,
        json!({
            "checkpoint": checkpoint,
            "data": data,
            "val_data": val_data,
            "posterior_samples": samples.len(),
            "threshold": threshold,
            "outputs": ["metrics.json", "metrics.csv", "metrics_fixed_0.5.csv", "roc.csv"],
        }),
    )
}

fn kind_summary(features: &[RankedFeature]) -> serde_json::Value {
    let count = |k: FeatureKind| features.iter().filter(|f| f.kind == Some(k)).count();
    let mean_abs = |k: FeatureKind| {
        let v: Vec<f64> = features
            .iter()
            .filter(|f| f.kind == Some(k))
            .map(|f| f.score.abs())
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    json!({
        "mitre": {"count": count(FeatureKind::Mitre), "mean_abs_score": mean_abs(FeatureKind::Mitre)},
        "rule": {"count": count(FeatureKind::Rule), "mean_abs_score": mean_abs(FeatureKind::Rule)},
    })
}

pub fn cmd_importance(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    metadata: Option<&Path>,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let model = load_model(checkpoint, cfg)?;
    let ds = load_dataset(data, cfg)?;
    let meta: FeatureMetadata = match metadata {
        Some(p) => read_feature_metadata(p)?,
        None => default_feature_metadata(cfg.synth.num_features),
    };
    let report = feature_ranking(&model, &ds, &cfg.importance, Some(&meta))?;
    write_attribution_csv(&report.positive, &out.join("attribution_positive.csv"))?;
    write_attribution_csv(&report.negative, &out.join("attribution_negative.csv"))?;
    write_json(&report, &out.join("attribution.json"))?;
    write_manifest(
        out,
        "importance",
        cfg,
        json!({
            "checkpoint": checkpoint,
            "data": data,
            "top_k": cfg.importance.top_k,
            "steps": cfg.importance.steps,
            "max_completeness_residual": report.max_completeness_residual,
            "kind_summary_positive": kind_summary(&report.positive),
            "kind_summary_negative": kind_summary(&report.negative),
            "outputs": ["attribution_positive.csv", "attribution_negative.csv", "attribution.json"],
        }),
    )
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            common,
            n_records,
            csv,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n_records {
                cfg.synth.n_records = n;
            }
            let cfg = cfg.resolve()?;
            cmd_generate_data(&cfg, &common.out, csv)
        }
        Command::Train {
            common,
            data,
            posterior_kind,
            epochs,
            kl_scale,
            mc_samples,
            batch_size,
            learning_rate,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = posterior_kind {
                cfg.model.posterior_kind = k;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(k) = kl_scale {
                cfg.train.kl_scale = k;
            }
            if let Some(m) = mc_samples {
                cfg.train.mc_samples = m;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = learning_rate {
                cfg.train.learning_rate = lr;
            }
            let cfg = cfg.resolve()?;
            cmd_train(&cfg, &data, &common.out)
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
            val_data,
            samples,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(r) = samples {
                cfg.eval.posterior_samples = r;
            }
            let cfg = cfg.resolve()?;
            cmd_evaluate(&cfg, &checkpoint, &data, val_data.as_deref(), &common.out)
        }
        Command::Importance {
            common,
            checkpoint,
            data,
            metadata,
            top_k,
            steps,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = top_k {
                cfg.importance.top_k = k;
            }
            if let Some(s) = steps {
                cfg.importance.steps = s;
            }
            let cfg = cfg.resolve()?;
            cmd_importance(&cfg, &checkpoint, &data, metadata.as_deref(), &common.out)
        }
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID_CONFIG
            } else {
                EXIT_OK
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
