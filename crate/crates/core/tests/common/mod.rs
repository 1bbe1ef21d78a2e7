#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

use ssbnn::autodiff::{grad_check, GradCheckReport, Graph, OpKind, Var};
use ssbnn::data::{
    informative_features, split_train_val, synth_generate, AggregationConfig, Dataset, SynthConfig,
};
use ssbnn::eval::{labels_u8, roc_points};
use ssbnn::layers::{
    predict_proba, Architecture, BnnModel, ForwardMode, InitConfig, LayerVars, ModelSpec,
    ModelVars, ParamVars, PosteriorKind,
};
use ssbnn::rng::{seeded, stream, substream};
use ssbnn::trainer::{elbo_loss, train, KlScale, TrainConfig, TrainOutcome};
use ssbnn::vi::{
    gumbel_softmax_var, kl_bernoulli_var, kl_gaussian_var, kl_spike_slab_var, logistic_noise,
    radial_kl_var, radial_noise, radial_noise_moments, radial_sample_var, GumbelConfig,
    PriorConfig, RadialGroup,
};
use ssbnn::Tensor;

pub const STEP: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub fn normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .unwrap()
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

// Values bounded away from zero so relu and abs stay off their kinks.
fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

// Contract a tensor output to a scalar with fixed random weights, so the
// check covers the full Jacobian rather than only its column sums.
fn contract(g: &mut Graph, out: Var, weights: &Tensor) -> ssbnn::Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn check_with<F>(
    name: &str,
    params: Vec<Tensor>,
    out_shape: &[usize],
    seed: u64,
    f: F,
) -> (String, GradCheckReport)
where
    F: Fn(&mut Graph, &[Var]) -> ssbnn::Result<Var>,
{
    let weights = normal(out_shape, &mut seeded(seed ^ 0xabc));
    let report = grad_check(
        |g, v| {
            let out = f(g, v)?;
            if g.value(out).len() == 1 {
                Ok(out)
            } else {
                contract(g, out, &weights)
            }
        },
        &params,
        STEP,
        TOL,
    )
    .unwrap();
    (name.to_string(), report)
}

/// Finite-difference checks of every engine operation.
pub fn op_grad_checks() -> Vec<(String, GradCheckReport)> {
    let mut rng = seeded(101);
    let mut out = Vec::new();
    for kind in OpKind::ALL {
        let (params, out_shape): (Vec<Tensor>, Vec<usize>) = match kind {
            OpKind::MatMul => (
                vec![normal(&[3, 4], &mut rng), normal(&[4, 2], &mut rng)],
                vec![3, 2],
            ),
            OpKind::Add | OpKind::Sub | OpKind::Mul => (
                vec![normal(&[3, 4], &mut rng), normal(&[4], &mut rng)],
                vec![3, 4],
            ),
            OpKind::Sum | OpKind::Mean | OpKind::L2Norm => {
                (vec![normal(&[3, 4], &mut rng)], vec![])
            }
            OpKind::Log => (vec![uniform(&[3, 4], 0.3, 2.0, &mut rng)], vec![3, 4]),
            OpKind::Relu | OpKind::Abs => (vec![away_from_zero(&[3, 4], &mut rng)], vec![3, 4]),
            OpKind::Transpose => (vec![normal(&[3, 4], &mut rng)], vec![4, 3]),
            _ => (vec![normal(&[3, 4], &mut rng)], vec![3, 4]),
        };
        out.push(check_with(
            &format!("{kind:?}"),
            params,
            &out_shape,
            kind as u64,
            move |g, v| g.apply(kind, &v[..kind.arity()]),
        ));
    }
    out.push(check_with(
        "Scale",
        vec![normal(&[5], &mut rng)],
        &[5],
        1,
        |g, v| g.scale(v[0], -2.5),
    ));
    out.push(check_with(
        "Broadcast",
        vec![normal(&[1, 3], &mut rng)],
        &[4, 3],
        2,
        |g, v| g.broadcast(v[0], &[4, 3]),
    ));
    out.push(check_with(
        "Reshape",
        vec![normal(&[2, 6], &mut rng)],
        &[3, 4],
        3,
        |g, v| g.reshape(v[0], &[3, 4]),
    ));
    out.push(check_with(
        "Composite",
        vec![normal(&[2, 3], &mut rng), normal(&[3], &mut rng)],
        &[],
        4,
        |g, v| {
            let wt = g.transpose(v[0])?;
            let xw = g.matmul(wt, v[0])?;
            let s = g.sigmoid(xw)?;
            let e = g.exp(v[1])?;
            let sp = g.softplus(e)?;
            let a = g.add(s, sp)?;
            let m = g.mean(a)?;
            let n = g.l2norm(v[1])?;
            g.mul(m, n)
        },
    ));
    out
}

/// Finite-difference checks of the samplers with frozen noise.
pub fn sampler_grad_checks() -> Vec<(String, GradCheckReport)> {
    let mut rng = seeded(202);
    let mut out = Vec::new();
    let shape = [3, 4];
    for group in [RadialGroup::PerLayer, RadialGroup::PerRow] {
        let eps = radial_noise(&shape, group, &mut rng).unwrap();
        out.push(check_with(
            &format!("radial sample ({group:?})"),
            vec![
                normal(&shape, &mut rng),
                uniform(&shape, 0.05, 1.0, &mut rng),
            ],
            &shape,
            5,
            move |g, v| radial_sample_var(g, v[0], v[1], &eps),
        ));
    }
    let logistic = logistic_noise(&shape, &mut rng);
    for tau in [0.5, 2.0 / 3.0, 1.0] {
        let l = logistic.clone();
        out.push(check_with(
            &format!("gumbel-softmax (tau={tau:.3})"),
            vec![uniform(&shape, -2.0, 2.0, &mut rng)],
            &shape,
            6,
            move |g, v| gumbel_softmax_var(g, v[0], &l, tau),
        ));
    }
    let eps = radial_noise(&shape, RadialGroup::PerLayer, &mut rng).unwrap();
    let l = logistic.clone();
    out.push(check_with(
        "spike-slab relaxed sample",
        vec![
            uniform(&shape, -2.0, 2.0, &mut rng),
            normal(&shape, &mut rng),
            uniform(&shape, -3.0, 0.0, &mut rng),
        ],
        &shape,
        7,
        move |g, v| {
            let sigma = g.softplus(v[2])?;
            let w = radial_sample_var(g, v[1], sigma, &eps)?;
            let gate = gumbel_softmax_var(g, v[0], &l, 0.5)?;
            g.mul(gate, w)
        },
    ));
    out
}

/// Finite-difference checks of the per-weight KL terms.
pub fn kl_grad_checks() -> Vec<(String, GradCheckReport)> {
    let mut rng = seeded(303);
    let shape = [2, 3];
    let prior = PriorConfig::new(0.3, 0.1, 0.8).unwrap();
    let moments = radial_noise_moments(&shape, RadialGroup::PerLayer, 50, &mut rng).unwrap();
    let mut out = Vec::new();
    let m = moments.clone();
    out.push(check_with(
        "radial slab KL",
        vec![
            normal(&shape, &mut rng),
            uniform(&shape, 0.05, 1.0, &mut rng),
        ],
        &shape,
        8,
        move |g, v| radial_kl_var(g, v[0], v[1], &m, &prior),
    ));
    out.push(check_with(
        "bernoulli KL",
        vec![uniform(&shape, -4.0, 4.0, &mut rng)],
        &shape,
        9,
        move |g, v| kl_bernoulli_var(g, v[0], prior.lambda_p),
    ));
    let m = moments.clone();
    out.push(check_with(
        "spike-slab KL",
        vec![
            uniform(&shape, -2.0, 2.0, &mut rng),
            normal(&shape, &mut rng),
            uniform(&shape, -3.0, 0.5, &mut rng),
        ],
        &shape,
        10,
        move |g, v| kl_spike_slab_var(g, v[0], v[1], v[2], &m, &prior),
    ));
    out.push(check_with(
        "gaussian KL",
        vec![
            normal(&shape, &mut rng),
            uniform(&shape, 0.05, 1.0, &mut rng),
        ],
        &shape,
        11,
        move |g, v| kl_gaussian_var(g, v[0], v[1], &prior),
    ));
    out
}

pub fn small_spec(kind: PosteriorKind, input: usize, hidden: Vec<usize>) -> ModelSpec {
    ModelSpec {
        architecture: Architecture {
            input_dim: input,
            hidden,
            ..Default::default()
        },
        posterior_kind: kind,
        prior: PriorConfig::new(0.3, 0.0, 1.0).unwrap(),
        init: InitConfig {
            sigma: 0.2,
            lambda: 0.6,
        },
    }
}

/// Rebuild model handles from a flat parameter list.
pub fn vars_from(params: &[Var]) -> ModelVars {
    ModelVars {
        layers: params
            .chunks(6)
            .map(|c| LayerVars {
                weight: ParamVars {
                    theta_pi: c[0],
                    mu: c[1],
                    rho: c[2],
                },
                bias: ParamVars {
                    theta_pi: c[3],
                    mu: c[4],
                    rho: c[5],
                },
            })
            .collect(),
    }
}

/// Gradient checks of the total model KL and the full ELBO for each
/// posterior kind, on a 2-weight model and a small hidden-layer model.
pub fn model_grad_checks() -> Vec<(String, GradCheckReport)> {
    let mut out = Vec::new();
    let mut rng = seeded(404);
    for kind in [
        PosteriorKind::SpikeSlabRadial,
        PosteriorKind::Gaussian,
        PosteriorKind::Deterministic,
    ] {
        for (input, hidden) in [(1usize, vec![]), (3, vec![4])] {
            let model = BnnModel::new(small_spec(kind, input, hidden.clone()), &mut rng).unwrap();
            let params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
            let kl_noise = model.draw_kl_noise(20, &mut rng).unwrap();
            let mode = ForwardMode::TrainRelaxed(GumbelConfig::training(0.5).unwrap());
            let noise = model.draw_noise(mode, &mut rng).unwrap();
            let x = uniform(&[5, input], 0.0, 1.0, &mut rng);
            let y = vec![1.0, 0.0, 1.0, 1.0, 0.0];
            let label = format!("{kind:?} [{input}, {hidden:?}]");
            {
                let model = model.clone();
                let kl_noise = kl_noise.clone();
                out.push((
                    format!("model_kl {label}"),
                    grad_check(
                        move |g, v| model.kl(g, &vars_from(v), &kl_noise),
                        &params,
                        STEP,
                        TOL,
                    )
                    .unwrap(),
                ));
            }
            let report = grad_check(
                |g, v| {
                    let parts = elbo_loss(
                        g,
                        &model,
                        &vars_from(v),
                        &x,
                        &y,
                        mode,
                        &noise,
                        &kl_noise,
                        0.37,
                        3.0,
                    )?;
                    Ok(parts.loss)
                },
                &params,
                STEP,
                TOL,
            )
            .unwrap();
            out.push((format!("elbo_loss {label}"), report));
        }
    }
    out
}

pub fn summarize(reports: &[(String, GradCheckReport)]) -> (bool, f64, Vec<String>) {
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for (name, r) in reports {
        let m = r.max_rel_error.iter().copied().fold(0.0, f64::max);
        worst = worst.max(m);
        if !r.passed {
            failed.push(format!("{name} ({m:.2e})"));
        }
    }
    (failed.is_empty(), worst, failed)
}

/// Two informative continuous features, linearly separable labels.
pub fn separable_toy(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let mut x = Vec::with_capacity(n * 2);
    let mut y = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let center = if label == 1 { 1.0 } else { -1.0 };
        x.push(center + 0.3 * rng.sample::<f64, _>(StandardNormal));
        x.push(center + 0.3 * rng.sample::<f64, _>(StandardNormal));
        y.push(label as f64);
        ids.push(format!("toy-{i}"));
    }
    Dataset::new(Tensor::new(vec![n, 2], x).unwrap(), y, ids).unwrap()
}

/// Binary toy data: feature 0 and 1 mark positives, the rest are noise.
pub fn binary_toy(n: usize, f: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let mut x = vec![0.0; n * f];
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.random::<f64>() < 0.3;
        for j in 0..f {
            let p = if j < 2 {
                if label {
                    0.8
                } else {
                    0.05
                }
            } else {
                0.2
            };
            if rng.random::<f64>() < p {
                x[i * f + j] = 1.0;
            }
        }
        y.push(if label { 1.0 } else { 0.0 });
    }
    Dataset::new(
        Tensor::new(vec![n, f], x).unwrap(),
        y,
        (0..n).map(|i| format!("b-{i}")).collect(),
    )
    .unwrap()
}

pub fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 1e-2,
        mc_samples: 8,
        val_samples: 4,
        seed,
        ..Default::default()
    }
}

/// A small spike-slab model trained on [`binary_toy`] data.
pub fn trained_toy(seed: u64) -> (BnnModel, Dataset) {
    let data = binary_toy(400, 8, seed);
    let val = binary_toy(200, 8, seed + 1);
    let model = BnnModel::new(
        small_spec(PosteriorKind::SpikeSlabRadial, 8, vec![6]),
        &mut substream(seed, stream::INIT),
    )
    .unwrap();
    let out = train(model, &data, &val, &quick_config(30, seed)).unwrap();
    (out.best_model, val)
}

/// Settings for the full-size synthetic experiment.
pub struct ExperimentConfig {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub lambda_p: f64,
    pub eval_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            hidden: vec![32],
            epochs: 40,
            learning_rate: 1e-2,
            mc_samples: 16,
            lambda_p: 0.1,
            eval_samples: 32,
        }
    }
}

pub struct ExperimentResult {
    pub kind: PosteriorKind,
    pub val_auc: f64,
    pub informative_inclusion: f64,
    pub other_inclusion: f64,
    pub outcome: TrainOutcome,
    pub seconds: f64,
}

pub struct ExperimentData {
    pub train: Dataset,
    pub val: Dataset,
    pub informative: Vec<usize>,
}

/// Default synthetic dataset with an 80/20 stratified split.
pub fn experiment_data(seed: u64) -> ExperimentData {
    let synth = SynthConfig {
        seed,
        ..Default::default()
    };
    let records = synth_generate(&synth).unwrap();
    let (tr, va) = split_train_val(&records, 0.8, seed, true).unwrap();
    let agg = AggregationConfig::default();
    ExperimentData {
        train: Dataset::from_records(&tr, &agg, synth.num_features).unwrap(),
        val: Dataset::from_records(&va, &agg, synth.num_features).unwrap(),
        informative: informative_features(&synth),
    }
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    kind: PosteriorKind,
) -> ExperimentResult {
    let started = std::time::Instant::now();
    let spec = ModelSpec {
        architecture: Architecture {
            input_dim: data.train.num_features(),
            hidden: cfg.hidden.clone(),
            ..Default::default()
        },
        posterior_kind: kind,
        prior: PriorConfig::new(cfg.lambda_p, 0.0, 1.0).unwrap(),
        init: InitConfig::default(),
    };
    let model = BnnModel::new(spec, &mut substream(cfg.seed, stream::INIT)).unwrap();
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        mc_samples: cfg.mc_samples,
        seed: cfg.seed,
        kl_scale: KlScale::PerBatchCount,
        ..Default::default()
    };
    let outcome = train(model, &data.train, &data.val, &tcfg).unwrap();
    let best = &outcome.best_model;
    let pred = predict_proba(
        best,
        &data.val.x,
        cfg.eval_samples,
        &mut substream(cfg.seed, stream::EVAL),
    )
    .unwrap();
    let val_auc = roc_points(&pred.mean, &labels_u8(&data.val.y)).unwrap().auc;
    let inc = best.first_layer_inclusion();
    let (mut a, mut b) = (0.0, 0.0);
    for (j, v) in inc.iter().enumerate() {
        if data.informative.contains(&j) {
            a += v;
        } else {
            b += v;
        }
    }
    ExperimentResult {
        kind,
        val_auc,
        informative_inclusion: a / data.informative.len() as f64,
        other_inclusion: b / (inc.len() - data.informative.len()) as f64,
        outcome,
        seconds: started.elapsed().as_secs_f64(),
    }
}
