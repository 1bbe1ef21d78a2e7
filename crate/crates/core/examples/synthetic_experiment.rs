//! Train spike-and-slab, Gaussian and deterministic models on the default
//! synthetic dataset and report validation AUC and first-layer inclusion.
//!
//! Settings come from environment variables; see `Settings::from_env`.

use std::time::Instant;

use ssbnn::data::{
    informative_features, split_train_val, synth_generate, AggregationConfig, Dataset, SynthConfig,
};
use ssbnn::eval::{labels_u8, roc_points};
use ssbnn::layers::{predict_proba, Architecture, BnnModel, InitConfig, ModelSpec, PosteriorKind};
use ssbnn::rng::{stream, substream};
use ssbnn::trainer::{train, KlScale, TrainConfig};
use ssbnn::vi::PriorConfig;

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() -> ssbnn::Result<()> {
    let seed: u64 = env("SEED", 7);
    let epochs: usize = env("EPOCHS", 40);
    let lr: f64 = env("LR", 1e-2);
    let m: usize = env("M", 16);
    let lambda_p: f64 = env("LAMBDA_P", 0.1);
    let hidden: usize = env("HIDDEN", 32);
    let kinds: String = env("KINDS", "spike_slab_radial".to_string());

    let synth = SynthConfig {
        seed,
        ..Default::default()
    };
    let records = synth_generate(&synth)?;
    let informative = informative_features(&synth);
    let (tr, va) = split_train_val(&records, 0.8, seed, true)?;
    let agg = AggregationConfig::default();
    let train_ds = Dataset::from_records(&tr, &agg, synth.num_features)?;
    let val_ds = Dataset::from_records(&va, &agg, synth.num_features)?;
    println!(
        "train {} ({} pos), val {} ({} pos)",
        train_ds.len(),
        train_ds.positives(),
        val_ds.len(),
        val_ds.positives()
    );

    for kind in kinds.split(',') {
        let posterior_kind = match kind {
            "gaussian" => PosteriorKind::Gaussian,
            "deterministic" => PosteriorKind::Deterministic,
            _ => PosteriorKind::SpikeSlabRadial,
        };
        let spec = ModelSpec {
            architecture: Architecture {
                input_dim: synth.num_features,
                hidden: vec![hidden],
                ..Default::default()
            },
            posterior_kind,
            prior: PriorConfig::new(lambda_p, 0.0, 1.0)?,
            init: InitConfig::default(),
        };
        let model = BnnModel::new(spec, &mut substream(seed, stream::INIT))?;
        let cfg = TrainConfig {
            epochs,
            learning_rate: lr,
            mc_samples: m,
            seed,
            kl_scale: KlScale::PerBatchCount,
            ..Default::default()
        };
        let t = Instant::now();
        let out = train(model, &train_ds, &val_ds, &cfg)?;
        let best = &out.best_model;
        let pred = predict_proba(best, &val_ds.x, 32, &mut substream(seed, stream::EVAL))?;
        let auc = roc_points(&pred.mean, &labels_u8(&val_ds.y))?.auc;
        let inc = best.first_layer_inclusion();
        let (mut a, mut b) = (0.0, 0.0);
        for (j, v) in inc.iter().enumerate() {
            if informative.contains(&j) {
                a += v;
            } else {
                b += v;
            }
        }
        a /= informative.len() as f64;
        b /= (inc.len() - informative.len()) as f64;
        println!(
            "{kind}: best_epoch {:?} val_auc {auc:.4} inclusion informative {a:.3} other {b:.3} gap {:.3} ({:.0}s)",
            out.report.best_epoch,
            a - b,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
