//! ELBO loss, Adam and the minibatch training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{BnnModel, ForwardMode, ForwardNoise, KlNoise, ModelVars};
use crate::rng::{derive_seed, seeded, stream, substream};
use crate::tensor::Tensor;
use crate::vi::{GumbelConfig, MIN_TRAINING_TAU};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "train_report.jsonl";

/// How the KL term is weighted against a minibatch NLL.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KlScale {
    /// `|batch| / N`.
    PerDataset,
    /// `1 / number_of_batches`, so one epoch sums to the full objective.
    #[default]
    PerBatchCount,
    /// A constant weight.
    FixedBeta { beta: f64 },
}

impl KlScale {
    pub fn weight(self, batch_len: usize, n_train: usize, n_batches: usize) -> f64 {
        match self {
            KlScale::PerDataset => batch_len as f64 / n_train as f64,
            KlScale::PerBatchCount => 1.0 / n_batches as f64,
            KlScale::FixedBeta { beta } => beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub kl_scale: KlScale,
    pub tau: f64,
    /// Monte-Carlo draws for the KL term.
    pub mc_samples: usize,
    /// Posterior draws for the validation loss.
    pub val_samples: usize,
    pub seed: u64,
    /// `None` uses negatives / positives of the training split.
    pub class_weight_positive: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            kl_scale: KlScale::PerBatchCount,
            tau: 0.5,
            mc_samples: 1000,
            val_samples: 8,
            seed: 0,
            class_weight_positive: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.tau < MIN_TRAINING_TAU || !self.tau.is_finite() {
            return bad(format!(
                "tau must be at least {MIN_TRAINING_TAU}, got {}",
                self.tau
            ));
        }
        if self.mc_samples == 0 || self.val_samples == 0 || self.batch_size == 0 {
            return bad("mc_samples, val_samples and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return bad("invalid Adam hyperparameters".into());
        }
        if let Some(w) = self.class_weight_positive {
            if !(w >= 1.0 && w.is_finite()) {
                return bad(format!("class_weight_positive must be >= 1, got {w}"));
            }
        }
        if let KlScale::FixedBeta { beta } = self.kl_scale {
            if !(beta >= 0.0 && beta.is_finite()) {
                return bad(format!("fixed beta must be non-negative, got {beta}"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Negatives over positives, or 1 when a class is missing.
pub fn balanced_positive_weight(y: &[f64]) -> f64 {
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        1.0
    } else {
        (neg as f64 / pos as f64).max(1.0)
    }
}

pub fn check_labels(y: &[f64]) -> Result<()> {
    match y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(&v) => Err(Error::LabelDomain(v)),
        None => Ok(()),
    }
}

/// `Σ w_i (softplus(z_i) − y_i z_i)` with `w_i = pos_weight` for positives.
pub fn weighted_bce(g: &mut Graph, logits: Var, y: &[f64], pos_weight: f64) -> Result<Var> {
    check_labels(y)?;
    let n = y.len();
    let yt = g.constant(Tensor::new(vec![n], y.to_vec())?);
    let wt = g.constant(Tensor::new(
        vec![n],
        y.iter()
            .map(|&v| if v == 1.0 { pos_weight } else { 1.0 })
            .collect(),
    )?);
    let sp = g.softplus(logits)?;
    let yz = g.mul(yt, logits)?;
    let per = g.sub(sp, yz)?;
    let weighted = g.mul(wt, per)?;
    g.sum(weighted)
}

/// Plain value version of [`weighted_bce`].
pub fn weighted_bce_value(logits: &[f64], y: &[f64], pos_weight: f64) -> f64 {
    logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let w = if t == 1.0 { pos_weight } else { 1.0 };
            w * (softplus(z) - t * z)
        })
        .sum()
}

/// Graph handles for one ELBO evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ElboParts {
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
}

/// `kl_weight · KL + Σ weighted BCE` for one minibatch with frozen noise.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss(
    g: &mut Graph,
    model: &BnnModel,
    vars: &ModelVars,
    x: &Tensor,
    y: &[f64],
    mode: ForwardMode,
    noise: &ForwardNoise,
    kl_noise: &KlNoise,
    kl_weight: f64,
    pos_weight: f64,
) -> Result<ElboParts> {
    if y.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    check_labels(y)?;
    let xv = g.constant(x.clone());
    let logits = model.forward(g, vars, xv, mode, noise)?;
    let nll = weighted_bce(g, logits, y, pos_weight)?;
    let kl = model.kl(g, vars, kl_noise)?;
    let scaled = g.scale(kl, kl_weight)?;
    let loss = g.add(nll, scaled)?;
    Ok(ElboParts { loss, nll, kl })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn for_params(params: &[&Tensor]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Metrics for one epoch. Losses are per training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub kl: f64,
    pub nll: f64,
    pub val_loss: f64,
    pub val_seed: u64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss; earliest on ties.
    pub best_epoch: Option<usize>,
    pub initial_val_loss: f64,
    pub initial_val_seed: u64,
    pub positive_weight: f64,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.epochs[e - 1].val_loss)
    }

    /// Equal ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            for e in &mut r.epochs {
                e.wall_seconds = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best_model: BnnModel,
    pub final_model: BnnModel,
}

/// `(1/N_val)·mean_s Σ NLL + KL / n_train` under hard posterior draws.
/// All randomness comes from `seed`.
pub fn validation_loss(
    model: &BnnModel,
    data: &Dataset,
    n_train: usize,
    cfg: &TrainConfig,
    pos_weight: f64,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() || n_train == 0 {
        return Err(Error::Domain("validation needs non-empty datasets".into()));
    }
    let mut rng = seeded(seed);
    let mut nll = 0.0;
    for _ in 0..cfg.val_samples {
        let logits = model.sample_logits(&data.x, ForwardMode::EvalHard, &mut rng)?;
        nll += weighted_bce_value(logits.data(), &data.y, pos_weight);
    }
    nll /= cfg.val_samples as f64 * data.len() as f64;
    let kl = crate::layers::model_kl(model, cfg.mc_samples, &mut rng)?;
    let loss = nll + kl / n_train as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss"));
    }
    Ok(loss)
}

/// Mean accuracy of `sigmoid(posterior-mean logit) > 0.5`.
pub fn posterior_mean_accuracy(model: &BnnModel, data: &Dataset) -> Result<f64> {
    let logits = model.posterior_mean_logits(&data.x)?;
    let hits = logits
        .data()
        .iter()
        .zip(&data.y)
        .filter(|(&z, &y)| (sigmoid(z) > 0.5) == (y == 1.0))
        .count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

fn diverged(epoch: usize, step: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(what) => Error::Divergence {
            epoch,
            step,
            detail: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Minibatch Adam on the ELBO, keeping the parameters with the lowest
/// validation loss.
pub fn train(
    model: BnnModel,
    train_data: &Dataset,
    val_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Domain(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for d in [train_data, val_data] {
        if d.num_features() != model.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "train",
                lhs: vec![d.num_features()],
                rhs: vec![model.input_dim()],
            });
        }
        check_labels(&d.y)?;
    }
    let n = train_data.len();
    let pos_weight = cfg
        .class_weight_positive
        .unwrap_or_else(|| balanced_positive_weight(&train_data.y));
    let n_batches = n.div_ceil(cfg.batch_size);
    let mode = ForwardMode::TrainRelaxed(GumbelConfig::training(cfg.tau)?);
    let adam = cfg.adam();

    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let save = |m: &BnnModel| -> Result<()> {
        if let Some(dir) = &cfg.checkpoint_dir {
            m.save_checkpoint(&dir.join(CHECKPOINT_FILE), cfg.seed)?;
        }
        Ok(())
    };

    let initial_val_seed = derive_seed(cfg.seed, stream::VALIDATION, 0);
    let initial_val_loss = validation_loss(&model, val_data, n, cfg, pos_weight, initial_val_seed)
        .map_err(|e| diverged(0, 0, e))?;
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        initial_val_loss,
        initial_val_seed,
        positive_weight: pos_weight,
    };
    save(&model)?;

    let mut model = model;
    let mut best_model = model.clone();
    let mut best_val = f64::INFINITY;
    let mut state = AdamState::for_params(&model.parameters());
    let mut shuffle_rng = substream(cfg.seed, stream::SHUFFLE);
    let mut noise_rng = substream(cfg.seed, stream::NOISE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report_writer = match &cfg.checkpoint_dir {
        Some(dir) => Some(BufWriter::new(File::create(dir.join(REPORT_FILE))?)),
        None => None,
    };

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut nll_sum, mut kl_sum) = (0.0, 0.0, 0.0);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_data.subset(chunk);
            let kl_weight = cfg.kl_scale.weight(chunk.len(), n, n_batches);
            let noise = model.draw_noise(mode, &mut noise_rng)?;
            let kl_noise = model.draw_kl_noise(cfg.mc_samples, &mut noise_rng)?;
            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let parts = elbo_loss(
                &mut g, &model, &vars, &batch.x, &batch.y, mode, &noise, &kl_noise, kl_weight,
                pos_weight,
            )
            .map_err(|e| diverged(epoch, step, e))?;
            let grads = g
                .backward(parts.loss)
                .map_err(|e| diverged(epoch, step, e))?;
            let grad_list: Vec<Tensor> = vars
                .all()
                .iter()
                .map(|&v| grads.get_or_zeros(v, g.value(v).shape()))
                .collect();
            if let Some(i) = grad_list.iter().position(|t| !t.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("non-finite gradient for parameter tensor {i}"),
                });
            }
            loss_sum += g.value(parts.loss).data()[0];
            nll_sum += g.value(parts.nll).data()[0];
            kl_sum += g.value(parts.kl).data()[0];
            let mut params = model.parameters_mut();
            adam_step(&mut params, &grad_list, &mut state, &adam)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: "non-finite parameters after update".into(),
                });
            }
        }
        let val_seed = derive_seed(cfg.seed, stream::VALIDATION, epoch as u64);
        let val_loss = validation_loss(&model, val_data, n, cfg, pos_weight, val_seed)
            .map_err(|e| diverged(epoch, n_batches, e))?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            kl: kl_sum / n_batches as f64,
            nll: nll_sum / n as f64,
            val_loss,
            val_seed,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(w) = report_writer.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        report.epochs.push(record);
        if val_loss < best_val {
            best_val = val_loss;
            report.best_epoch = Some(epoch);
            best_model = model.clone();
            save(&best_model)?;
        }
    }

    Ok(TrainOutcome {
        report,
        best_model,
        final_model: model,
    })
}
