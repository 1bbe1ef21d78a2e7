//! Variational fully connected layers and networks.
//!
//! A [`BnnModel`] is a stack of [`VariationalLinear`] layers with ReLU between
//! them and a single output logit. Each weight and bias owns the triple
//! `(theta_pi, mu, rho)`; which of them matter depends on the
//! [`PosteriorKind`].

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vi::{
    gumbel_softmax_var, kl_gaussian_var, kl_spike_slab_var, logistic_noise, logit, radial_noise,
    radial_noise_moments, radial_sample_var, rho_for_sigma, GumbelConfig, NoiseMoments,
    PriorConfig, RadialGroup, SpikeSlabRadialParams,
};

pub const CHECKPOINT_SCHEMA_VERSION: &str = "1.0";

/// Family of the approximate posterior over each weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    /// Spike at zero mixed with a radial slab.
    #[default]
    SpikeSlabRadial,
    /// Mean-field Gaussian; inclusion fixed at one.
    Gaussian,
    /// Point estimates only; `mu` is the weight.
    Deterministic,
}

impl PosteriorKind {
    pub fn is_probabilistic(self) -> bool {
        !matches!(self, PosteriorKind::Deterministic)
    }
}

/// Starting values for the variational parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub sigma: f64,
    pub lambda: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            lambda: 0.75,
        }
    }
}

/// Layer sizes and structural options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub radial_group: RadialGroup,
    /// When false, biases are plain point estimates (`mu` only).
    #[serde(default = "default_true")]
    pub variational_bias: bool,
}

fn default_true() -> bool {
    true
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: 706,
            hidden: vec![128, 64],
            radial_group: RadialGroup::PerLayer,
            variational_bias: true,
        }
    }
}

impl Architecture {
    /// Layer widths from input to the single output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer widths must be positive: {:?}",
                self.dims()
            )));
        }
        Ok(())
    }
}

/// Everything needed to build a fresh model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub posterior_kind: PosteriorKind,
    pub prior: PriorConfig,
    #[serde(default)]
    pub init: InitConfig,
}

/// How weights are drawn for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForwardMode {
    /// Relaxed inclusion via Gumbel-Softmax; used for training.
    TrainRelaxed(GumbelConfig),
    /// Exact Bernoulli inclusion; used for prediction.
    EvalHard,
    /// Weights fixed at `lambda_q ⊙ mu`.
    PosteriorMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: SpikeSlabRadialParams,
    pub bias: SpikeSlabRadialParams,
    pub prior: PriorConfig,
    pub posterior_kind: PosteriorKind,
    pub radial_group: RadialGroup,
    pub variational_bias: bool,
}

impl VariationalLinear {
    /// `mu ~ U(−1/√in, 1/√in)`, `sigma` and `lambda` from `init`.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        spec: &ModelSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut draw = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.sample(uniform)).collect();
            Tensor::new(shape.to_vec(), data).expect("length matches shape")
        };
        let theta = logit(spec.init.lambda);
        let rho = rho_for_sigma(spec.init.sigma);
        let weight_shape = [out_dim, in_dim];
        let weight = SpikeSlabRadialParams {
            theta_pi: Tensor::full(&weight_shape, theta),
            mu: draw(&weight_shape),
            rho: Tensor::full(&weight_shape, rho),
        };
        let bias = SpikeSlabRadialParams {
            theta_pi: Tensor::full(&[out_dim], theta),
            mu: draw(&[out_dim]),
            rho: Tensor::full(&[out_dim], rho),
        };
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            prior: spec.prior,
            posterior_kind: spec.posterior_kind,
            radial_group: spec.architecture.radial_group,
            variational_bias: spec.architecture.variational_bias,
        })
    }

    fn check_shapes(&self) -> Result<()> {
        let w = [self.out_dim, self.in_dim];
        let b = [self.out_dim];
        for t in [&self.weight.theta_pi, &self.weight.mu, &self.weight.rho] {
            if t.shape() != w {
                return Err(Error::ShapeMismatch {
                    op: "layer weight",
                    lhs: w.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        for t in [&self.bias.theta_pi, &self.bias.mu, &self.bias.rho] {
            if t.shape() != b {
                return Err(Error::ShapeMismatch {
                    op: "layer bias",
                    lhs: b.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn bias_is_variational(&self) -> bool {
        self.variational_bias && self.posterior_kind.is_probabilistic()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LayerVars {
        LayerVars {
            weight: ParamVars::bind(g, &self.weight, trainable),
            bias: ParamVars::bind(g, &self.bias, trainable),
        }
    }

    /// Draw the noise one forward pass of this layer consumes.
    pub fn draw_noise<R: Rng + ?Sized>(
        &self,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<LayerNoise> {
        let weight = draw_param_noise(
            self.posterior_kind,
            mode,
            self.radial_group,
            self.weight.shape(),
            rng,
        )?;
        let bias = if self.bias_is_variational() {
            draw_param_noise(
                self.posterior_kind,
                mode,
                self.radial_group,
                self.bias.shape(),
                rng,
            )?
        } else {
            ParamNoise::None
        };
        Ok(LayerNoise { weight, bias })
    }

    /// Draw the Monte-Carlo noise moments the KL estimate needs.
    pub fn draw_kl_noise<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<LayerKlNoise> {
        if m == 0 {
            return Err(Error::Domain(
                "Monte-Carlo sample count must be at least 1".into(),
            ));
        }
        if self.posterior_kind != PosteriorKind::SpikeSlabRadial {
            return Ok(LayerKlNoise::default());
        }
        let weight = Some(radial_noise_moments(
            self.weight.shape(),
            self.radial_group,
            m,
            rng,
        )?);
        let bias = if self.bias_is_variational() {
            Some(radial_noise_moments(
                self.bias.shape(),
                self.radial_group,
                m,
                rng,
            )?)
        } else {
            None
        };
        Ok(LayerKlNoise { weight, bias })
    }

    /// Value-level forward pass drawing fresh noise.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let noise = self.draw_noise(mode, rng)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = layer_forward(&mut g, self, &vars, xv, mode, &noise)?;
        Ok(g.value(y).clone())
    }
}

/// Graph handles for one parameter triple.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub theta_pi: Var,
    pub mu: Var,
    pub rho: Var,
}

impl ParamVars {
    fn bind(g: &mut Graph, p: &SpikeSlabRadialParams, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        Self {
            theta_pi: leaf(&p.theta_pi),
            mu: leaf(&p.mu),
            rho: leaf(&p.rho),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: ParamVars,
    pub bias: ParamVars,
}

/// Graph handles for every parameter, in [`BnnModel::parameters`] order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub layers: Vec<LayerVars>,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.theta_pi,
                    l.weight.mu,
                    l.weight.rho,
                    l.bias.theta_pi,
                    l.bias.mu,
                    l.bias.rho,
                ]
            })
            .collect()
    }
}

/// Noise for one parameter tensor in one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamNoise {
    None,
    /// Slab noise and logistic noise for the relaxed gate.
    Relaxed {
        slab: Tensor,
        logistic: Tensor,
    },
    /// Slab noise and uniforms compared against `lambda_q`.
    Hard {
        slab: Tensor,
        uniform: Tensor,
    },
    /// Standard normal noise for the Gaussian posterior.
    Gaussian {
        z: Tensor,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNoise {
    pub weight: ParamNoise,
    pub bias: ParamNoise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardNoise {
    pub layers: Vec<LayerNoise>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerKlNoise {
    pub weight: Option<NoiseMoments>,
    pub bias: Option<NoiseMoments>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlNoise {
    pub layers: Vec<LayerKlNoise>,
}

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random::<f64>()).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

fn draw_param_noise<R: Rng + ?Sized>(
    kind: PosteriorKind,
    mode: ForwardMode,
    group: RadialGroup,
    shape: &[usize],
    rng: &mut R,
) -> Result<ParamNoise> {
    Ok(match (kind, mode) {
        (PosteriorKind::Deterministic, _) | (_, ForwardMode::PosteriorMean) => ParamNoise::None,
        (PosteriorKind::Gaussian, _) => ParamNoise::Gaussian {
            z: normal_tensor(shape, rng),
        },
        (PosteriorKind::SpikeSlabRadial, ForwardMode::TrainRelaxed(_)) => {
            let slab = radial_noise(shape, group, rng)?;
            ParamNoise::Relaxed {
                slab,
                logistic: logistic_noise(shape, rng),
            }
        }
        (PosteriorKind::SpikeSlabRadial, ForwardMode::EvalHard) => {
            let slab = radial_noise(shape, group, rng)?;
            ParamNoise::Hard {
                slab,
                uniform: uniform_tensor(shape, rng),
            }
        }
    })
}

fn sample_param_var(
    g: &mut Graph,
    kind: PosteriorKind,
    mode: ForwardMode,
    pv: &ParamVars,
    noise: &ParamNoise,
) -> Result<Var> {
    match (kind, mode, noise) {
        (PosteriorKind::Deterministic, _, _) => Ok(pv.mu),
        (PosteriorKind::SpikeSlabRadial, ForwardMode::PosteriorMean, _) => {
            let lam = g.sigmoid(pv.theta_pi)?;
            g.mul(lam, pv.mu)
        }
        (PosteriorKind::Gaussian, ForwardMode::PosteriorMean, _) => Ok(pv.mu),
        (_, _, ParamNoise::None) => Ok(pv.mu),
        (_, _, ParamNoise::Gaussian { z }) => {
            let sigma = g.softplus(pv.rho)?;
            radial_sample_var(g, pv.mu, sigma, z)
        }
        (_, ForwardMode::TrainRelaxed(cfg), ParamNoise::Relaxed { slab, logistic }) => {
            let sigma = g.softplus(pv.rho)?;
            let w = radial_sample_var(g, pv.mu, sigma, slab)?;
            let gate = gumbel_softmax_var(g, pv.theta_pi, logistic, cfg.tau)?;
            g.mul(gate, w)
        }
        (_, _, ParamNoise::Hard { slab, uniform }) => {
            let sigma = g.softplus(pv.rho)?;
            let w = radial_sample_var(g, pv.mu, sigma, slab)?;
            let gate =
                g.value(pv.theta_pi)
                    .zip_map(uniform, |t, u| if u < sigmoid(t) { 1.0 } else { 0.0 })?;
            let gate = g.constant(gate);
            g.mul(gate, w)
        }
        (_, _, ParamNoise::Relaxed { .. }) => Err(Error::Domain(
            "relaxed noise supplied for a non-relaxed forward mode".into(),
        )),
    }
}

/// `x · Wᵀ + b` with `W` and `b` drawn according to `mode` and `noise`.
pub fn layer_forward(
    g: &mut Graph,
    layer: &VariationalLinear,
    vars: &LayerVars,
    x: Var,
    mode: ForwardMode,
    noise: &LayerNoise,
) -> Result<Var> {
    let xs = g.value(x).shape().to_vec();
    if xs.len() != 2 || xs[1] != layer.in_dim {
        return Err(Error::ShapeMismatch {
            op: "layer_forward",
            lhs: xs,
            rhs: vec![layer.out_dim, layer.in_dim],
        });
    }
    let w = sample_param_var(g, layer.posterior_kind, mode, &vars.weight, &noise.weight)?;
    let b = if layer.bias_is_variational() {
        sample_param_var(g, layer.posterior_kind, mode, &vars.bias, &noise.bias)?
    } else {
        vars.bias.mu
    };
    let wt = g.transpose(w)?;
    let xw = g.matmul(x, wt)?;
    g.add(xw, b)
}

/// Per-layer sum of `KL_{j,k}` on the graph.
pub fn layer_kl_var(
    g: &mut Graph,
    layer: &VariationalLinear,
    vars: &LayerVars,
    noise: &LayerKlNoise,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(2);
    let params = [
        (&vars.weight, &noise.weight, true),
        (&vars.bias, &noise.bias, layer.bias_is_variational()),
    ];
    for (pv, moments, active) in params {
        if !active {
            continue;
        }
        let per_weight = match layer.posterior_kind {
            PosteriorKind::Deterministic => continue,
            PosteriorKind::Gaussian => {
                let sigma = g.softplus(pv.rho)?;
                kl_gaussian_var(g, pv.mu, sigma, &layer.prior)?
            }
            PosteriorKind::SpikeSlabRadial => {
                let moments = moments
                    .as_ref()
                    .ok_or_else(|| Error::Domain("missing KL noise for spike-slab layer".into()))?;
                kl_spike_slab_var(g, pv.theta_pi, pv.mu, pv.rho, moments, &layer.prior)?
            }
        };
        parts.push(g.sum(per_weight)?);
    }
    let mut total = g.constant(Tensor::scalar(0.0));
    for p in parts {
        total = g.add(total, p)?;
    }
    Ok(total)
}

/// A stack of variational layers with ReLU activations and one output logit.
#[derive(Clone, Debug, PartialEq)]
pub struct BnnModel {
    spec: ModelSpec,
    layers: Vec<VariationalLinear>,
}

impl BnnModel {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.architecture.validate()?;
        spec.prior.validate()?;
        let dims = spec.architecture.dims();
        let layers = dims
            .windows(2)
            .map(|w| VariationalLinear::init(w[0], w[1], &spec, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, layers })
    }

    /// Assemble a model from explicit layers; dimensions must chain to one output.
    pub fn from_layers(spec: ModelSpec, layers: Vec<VariationalLinear>) -> Result<Self> {
        let dims = spec.architecture.dims();
        if layers.len() + 1 != dims.len() {
            return Err(Error::InvalidConfig(format!(
                "architecture {:?} needs {} layers, got {}",
                dims,
                dims.len() - 1,
                layers.len()
            )));
        }
        for (l, w) in layers.iter().zip(dims.windows(2)) {
            if l.in_dim != w[0] || l.out_dim != w[1] {
                return Err(Error::ShapeMismatch {
                    op: "layer chain",
                    lhs: w.to_vec(),
                    rhs: vec![l.in_dim, l.out_dim],
                });
            }
            l.check_shapes()?;
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn posterior_kind(&self) -> PosteriorKind {
        self.spec.posterior_kind
    }

    pub fn input_dim(&self) -> usize {
        self.spec.architecture.input_dim
    }

    pub fn layers(&self) -> &[VariationalLinear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [VariationalLinear] {
        &mut self.layers
    }

    /// All parameter tensors: per layer `weight.(theta_pi, mu, rho)` then
    /// `bias.(theta_pi, mu, rho)`.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    &l.weight.theta_pi,
                    &l.weight.mu,
                    &l.weight.rho,
                    &l.bias.theta_pi,
                    &l.bias.mu,
                    &l.bias.rho,
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    &mut l.weight.theta_pi,
                    &mut l.weight.mu,
                    &mut l.weight.rho,
                    &mut l.bias.theta_pi,
                    &mut l.bias.mu,
                    &mut l.bias.rho,
                ]
            })
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        ModelVars {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }

    pub fn draw_noise<R: Rng + ?Sized>(
        &self,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<ForwardNoise> {
        Ok(ForwardNoise {
            layers: self
                .layers
                .iter()
                .map(|l| l.draw_noise(mode, rng))
                .collect::<Result<_>>()?,
        })
    }

    pub fn draw_kl_noise<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<KlNoise> {
        Ok(KlNoise {
            layers: self
                .layers
                .iter()
                .map(|l| l.draw_kl_noise(m, rng))
                .collect::<Result<_>>()?,
        })
    }

    /// Logits of shape `(batch,)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        x: Var,
        mode: ForwardMode,
        noise: &ForwardNoise,
    ) -> Result<Var> {
        let batch = g.value(x).shape().first().copied().unwrap_or(0);
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, ((layer, lv), ln)) in self
            .layers
            .iter()
            .zip(&vars.layers)
            .zip(&noise.layers)
            .enumerate()
        {
            h = layer_forward(g, layer, lv, h, mode, ln)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        g.reshape(h, &[batch])
    }

    /// Sum of all per-weight KL terms on the graph.
    pub fn kl(&self, g: &mut Graph, vars: &ModelVars, noise: &KlNoise) -> Result<Var> {
        let mut total = g.constant(Tensor::scalar(0.0));
        for ((layer, lv), ln) in self.layers.iter().zip(&vars.layers).zip(&noise.layers) {
            let k = layer_kl_var(g, layer, lv, ln)?;
            total = g.add(total, k)?;
        }
        Ok(total)
    }

    /// Logits with freshly drawn noise and no gradient tracking.
    pub fn sample_logits<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let noise = self.draw_noise(mode, rng)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, xv, mode, &noise)?;
        Ok(g.value(out).clone())
    }

    /// Logits under the posterior-mean weights.
    pub fn posterior_mean_logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let noise = self.draw_noise(ForwardMode::PosteriorMean, &mut crate::rng::seeded(0))?;
        let out = self.forward(&mut g, &vars, xv, ForwardMode::PosteriorMean, &noise)?;
        Ok(g.value(out).clone())
    }

    /// Mean inclusion probability per input feature over the first layer.
    pub fn first_layer_inclusion(&self) -> Vec<f64> {
        let layer = &self.layers[0];
        let lam = layer.weight.lambda();
        (0..layer.in_dim)
            .map(|j| {
                (0..layer.out_dim)
                    .map(|i| lam.data()[i * layer.in_dim + j])
                    .sum::<f64>()
                    / layer.out_dim as f64
            })
            .collect()
    }
}

/// Monte-Carlo estimate of the total KL, as a plain number.
pub fn model_kl<R: Rng + ?Sized>(model: &BnnModel, m: usize, rng: &mut R) -> Result<f64> {
    let noise = model.draw_kl_noise(m, rng)?;
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let kl = model.kl(&mut g, &vars, &noise)?;
    Ok(g.value(kl).data()[0])
}

/// Predictive probabilities from `S` posterior draws.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Mean probability per row.
    pub mean: Vec<f64>,
    /// `samples[s][i]` is the probability of row `i` under draw `s`.
    pub samples: Vec<Vec<f64>>,
}

/// Average `sigmoid(logit)` over `s` hard posterior draws.
pub fn predict_proba<R: Rng + ?Sized>(
    model: &BnnModel,
    x: &Tensor,
    s: usize,
    rng: &mut R,
) -> Result<Prediction> {
    if s == 0 {
        return Err(Error::Domain("need at least one posterior sample".into()));
    }
    let batch = x.shape().first().copied().unwrap_or(0);
    let mut samples = Vec::with_capacity(s);
    let mut mean = vec![0.0; batch];
    for _ in 0..s {
        let logits = model.sample_logits(x, ForwardMode::EvalHard, rng)?;
        let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid(z)).collect();
        for (m, p) in mean.iter_mut().zip(&probs) {
            *m += p;
        }
        samples.push(probs);
    }
    for m in &mut mean {
        *m /= s as f64;
    }
    Ok(Prediction { mean, samples })
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    theta_pi: String,
    mu: String,
    rho: String,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    weight: ParamRecord,
    bias: ParamRecord,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: String,
    architecture: Architecture,
    posterior_kind: PosteriorKind,
    prior: PriorConfig,
    #[serde(default)]
    init: InitConfig,
    layers: Vec<LayerRecord>,
    rng_seed: u64,
}

fn encode(t: &Tensor) -> String {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode(s: &str, shape: &[usize]) -> Result<Tensor> {
    let bytes = BASE64
        .decode(s)
        .map_err(|e| Error::SchemaMismatch(format!("bad base64 parameter array: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::SchemaMismatch(
            "parameter array length is not a multiple of 8".into(),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(shape.to_vec(), data).map_err(|_| {
        Error::SchemaMismatch(format!("parameter array does not match shape {shape:?}"))
    })
}

/// Reject files whose major schema version differs from ours.
pub fn check_schema_version(found: &str, expected: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().unwrap_or("").to_string();
    if major(found) != major(expected) {
        return Err(Error::SchemaMismatch(format!(
            "unsupported schema version {found} (expected {expected})"
        )));
    }
    Ok(())
}

impl BnnModel {
    /// Serialize to the checkpoint JSON document.
    pub fn to_checkpoint_json(&self, rng_seed: u64) -> Result<String> {
        let rec = |p: &SpikeSlabRadialParams| ParamRecord {
            theta_pi: encode(&p.theta_pi),
            mu: encode(&p.mu),
            rho: encode(&p.rho),
        };
        let file = CheckpointFile {
            schema_version: CHECKPOINT_SCHEMA_VERSION.to_string(),
            architecture: self.spec.architecture.clone(),
            posterior_kind: self.spec.posterior_kind,
            prior: self.spec.prior,
            init: self.spec.init,
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: rec(&l.weight),
                    bias: rec(&l.bias),
                })
                .collect(),
            rng_seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parse a checkpoint document; returns the model and its recorded seed.
    pub fn from_checkpoint_json(json: &str) -> Result<(Self, u64)> {
        let file: CheckpointFile = serde_json::from_str(json)?;
        check_schema_version(&file.schema_version, CHECKPOINT_SCHEMA_VERSION)?;
        let spec = ModelSpec {
            architecture: file.architecture,
            posterior_kind: file.posterior_kind,
            prior: file.prior,
            init: file.init,
        };
        spec.architecture.validate()?;
        spec.prior.validate()?;
        let params = |p: &ParamRecord, shape: &[usize]| -> Result<SpikeSlabRadialParams> {
            SpikeSlabRadialParams::new(
                decode(&p.theta_pi, shape)?,
                decode(&p.mu, shape)?,
                decode(&p.rho, shape)?,
            )
        };
        let layers = file
            .layers
            .iter()
            .map(|l| {
                Ok(VariationalLinear {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: params(&l.weight, &[l.out_dim, l.in_dim])?,
                    bias: params(&l.bias, &[l.out_dim])?,
                    prior: spec.prior,
                    posterior_kind: spec.posterior_kind,
                    radial_group: spec.architecture.radial_group,
                    variational_bias: spec.architecture.variational_bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model =
            Self::from_layers(spec, layers).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        Ok((model, file.rng_seed))
    }

    pub fn save_checkpoint(&self, path: &Path, rng_seed: u64) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json(rng_seed)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, u64)> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
