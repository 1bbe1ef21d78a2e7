//! Distributions, reparameterized samplers and KL divergences for the radial
//! spike-and-slab posterior and its Gaussian-slab prior.
//!
//! Every weight carries three unconstrained parameters: the inclusion logit
//! `theta_pi` (so that `lambda_q = sigmoid(theta_pi)`), the slab location `mu`
//! and `rho`, with slab scale `sigma = softplus(rho)`.
//!
//! Sampling is split in two: noise is drawn from an explicit generator into
//! plain tensors, and the differentiable part combines parameters with that
//! noise on a [`Graph`]. Holding the noise fixed therefore freezes the whole
//! stochastic computation, which is what gradient checks rely on.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bounds applied to inclusion probabilities before taking logarithms.
pub const LAMBDA_CLAMP: f64 = 1e-6;
/// Lowest temperature accepted for training.
pub const MIN_TRAINING_TAU: f64 = 0.5;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Fixed parameters of the spike-and-slab prior: inclusion probability
/// `lambda_p` and a Gaussian slab `N(mu_p, sigma_p²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub lambda_p: f64,
    pub mu_p: f64,
    pub sigma_p: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            lambda_p: 0.5,
            mu_p: 0.0,
            sigma_p: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn new(lambda_p: f64, mu_p: f64, sigma_p: f64) -> Result<Self> {
        let prior = Self {
            lambda_p,
            mu_p,
            sigma_p,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p > 0.0 && self.lambda_p < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_p must lie in (0, 1), got {}",
                self.lambda_p
            )));
        }
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) || !self.mu_p.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "prior slab needs finite mu_p and sigma_p > 0, got ({}, {})",
                self.mu_p, self.sigma_p
            )));
        }
        Ok(())
    }

    /// Log density of the slab `N(mu_p, sigma_p²)` at `w`.
    pub fn slab_log_density(&self, w: f64) -> f64 {
        let z = (w - self.mu_p) / self.sigma_p;
        -0.5 * LN_2PI - self.sigma_p.ln() - 0.5 * z * z
    }
}

/// Gumbel-Softmax temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    pub tau: f64,
}

impl GumbelConfig {
    /// A temperature usable for training (`tau >= 0.5`).
    pub fn training(tau: f64) -> Result<Self> {
        if !(tau >= MIN_TRAINING_TAU) || !tau.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "training temperature must be at least {MIN_TRAINING_TAU}, got {tau}"
            )));
        }
        Ok(Self { tau })
    }

    /// Any positive temperature; intended for test harnesses probing the
    /// low-temperature limit.
    pub fn any_positive(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        Ok(Self { tau })
    }
}

impl Default for GumbelConfig {
    fn default() -> Self {
        Self {
            tau: MIN_TRAINING_TAU,
        }
    }
}

/// Which weights share one radial direction `ξ/‖ξ‖` and radius `|r|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialGroup {
    /// All weights of a parameter tensor form one group.
    #[default]
    PerLayer,
    /// Each row (last axis) forms its own group; a vector is a single row.
    PerRow,
}

impl RadialGroup {
    fn group_len(self, shape: &[usize]) -> Result<usize> {
        let n: usize = shape.iter().product();
        let len = match self {
            RadialGroup::PerLayer => n,
            RadialGroup::PerRow => shape.last().copied().unwrap_or(1),
        };
        if n == 0 || len == 0 {
            return Err(Error::DegenerateGroup);
        }
        Ok(len)
    }
}

/// Slab of the posterior: location and strictly positive scale per weight.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialParams {
    mu: Tensor,
    sigma: Tensor,
}

impl RadialParams {
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::ShapeMismatch {
                op: "radial params",
                lhs: mu.shape().to_vec(),
                rhs: sigma.shape().to_vec(),
            });
        }
        if let Some(bad) = sigma.data().iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Domain(format!("sigma must be positive, got {bad}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn sigma(&self) -> &Tensor {
        &self.sigma
    }
}

/// Inclusion logits `theta_pi`; `lambda = sigmoid(theta_pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliLogit {
    pub theta_pi: Tensor,
}

impl BernoulliLogit {
    pub fn lambda(&self) -> Tensor {
        self.theta_pi.map(sigmoid)
    }
}

/// Per-weight variational parameters of the radial spike-and-slab posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeSlabRadialParams {
    pub theta_pi: Tensor,
    pub mu: Tensor,
    pub rho: Tensor,
}

impl SpikeSlabRadialParams {
    pub fn new(theta_pi: Tensor, mu: Tensor, rho: Tensor) -> Result<Self> {
        for other in [&mu, &rho] {
            if other.shape() != theta_pi.shape() {
                return Err(Error::ShapeMismatch {
                    op: "spike-slab params",
                    lhs: theta_pi.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                });
            }
        }
        Ok(Self { theta_pi, mu, rho })
    }

    /// Parameters filled with one value each.
    pub fn constant(shape: &[usize], theta_pi: f64, mu: f64, rho: f64) -> Self {
        Self {
            theta_pi: Tensor::full(shape, theta_pi),
            mu: Tensor::full(shape, mu),
            rho: Tensor::full(shape, rho),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }

    pub fn inclusion(&self) -> BernoulliLogit {
        BernoulliLogit {
            theta_pi: self.theta_pi.clone(),
        }
    }

    pub fn lambda(&self) -> Tensor {
        self.theta_pi.map(sigmoid)
    }

    pub fn sigma(&self) -> Tensor {
        self.rho.map(softplus)
    }

    pub fn slab(&self) -> Result<RadialParams> {
        RadialParams::new(self.mu.clone(), self.sigma())
    }
}

/// `rho` such that `softplus(rho) = sigma`.
pub fn rho_for_sigma(sigma: f64) -> f64 {
    // ln(e^σ − 1), written to stay accurate for small and large σ
    if sigma > 30.0 {
        sigma + (-(-sigma).exp()).ln_1p()
    } else {
        sigma.exp_m1().ln()
    }
}

/// `theta_pi` such that `sigmoid(theta_pi) = lambda`.
pub fn logit(lambda: f64) -> f64 {
    (lambda / (1.0 - lambda)).ln()
}

/// Radial noise `ε = ξ/‖ξ‖ · |r|` with `ξ ~ N(0, I)` per group and one
/// `r ~ N(0, 1)` per group.
pub fn radial_noise<R: Rng + ?Sized>(
    shape: &[usize],
    group: RadialGroup,
    rng: &mut R,
) -> Result<Tensor> {
    let group_len = group.group_len(shape)?;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n / group_len {
        let start = data.len();
        let mut norm_sq = 0.0;
        for _ in 0..group_len {
            let xi: f64 = rng.sample(StandardNormal);
            norm_sq += xi * xi;
            data.push(xi);
        }
        let r: f64 = rng.sample(StandardNormal);
        let factor = r.abs() / norm_sq.sqrt();
        for v in &mut data[start..] {
            *v *= factor;
        }
    }
    Tensor::new(shape.to_vec(), data)
}

/// One reparameterized draw from `Radial(mu, sigma)`.
pub fn sample_radial<R: Rng + ?Sized>(
    params: &RadialParams,
    group: RadialGroup,
    rng: &mut R,
) -> Result<Tensor> {
    let eps = radial_noise(params.mu.shape(), group, rng)?;
    let mut out = params.mu.clone();
    for ((w, s), e) in out
        .data_mut()
        .iter_mut()
        .zip(params.sigma.data())
        .zip(eps.data())
    {
        *w += s * e;
    }
    Ok(out)
}

/// `w = mu + sigma ⊙ eps` on the graph.
pub fn radial_sample_var(g: &mut Graph, mu: Var, sigma: Var, eps: &Tensor) -> Result<Var> {
    let eps = g.constant(eps.clone());
    let scaled = g.mul(sigma, eps)?;
    g.add(mu, scaled)
}

/// Draw `u ~ U(0, 1)` from the open interval.
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Logistic noise `log(u / (1 − u))`, `u ~ U(0, 1)`.
pub fn logistic_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u = open_unit(rng);
            u.ln() - (-u).ln_1p()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Relaxed Bernoulli value `sigmoid((theta_pi + noise) / tau)`.
pub fn gumbel_softmax_value(theta_pi: f64, noise: f64, tau: f64) -> f64 {
    let v = sigmoid((theta_pi + noise) / tau);
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// One Gumbel-Softmax draw per logit, strictly inside `(0, 1)`.
pub fn sample_gumbel_softmax<R: Rng + ?Sized>(
    logit: &BernoulliLogit,
    cfg: GumbelConfig,
    rng: &mut R,
) -> Result<Tensor> {
    if !(cfg.tau > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {}",
            cfg.tau
        )));
    }
    let noise = logistic_noise(logit.theta_pi.shape(), rng);
    logit
        .theta_pi
        .zip_map(&noise, |t, l| gumbel_softmax_value(t, l, cfg.tau))
}

/// `sigmoid((theta_pi + noise) / tau)` on the graph.
pub fn gumbel_softmax_var(g: &mut Graph, theta_pi: Var, noise: &Tensor, tau: f64) -> Result<Var> {
    let noise = g.constant(noise.clone());
    let eta = g.add(theta_pi, noise)?;
    let scaled = g.scale(eta, 1.0 / tau)?;
    g.sigmoid(scaled)
}

/// Indicator draws `1[u < lambda]`.
pub fn bernoulli_indicator<R: Rng + ?Sized>(lambda: &Tensor, rng: &mut R) -> Tensor {
    let data = lambda
        .data()
        .iter()
        .map(|&l| if rng.random::<f64>() < l { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(lambda.shape().to_vec(), data).expect("length matches shape")
}

/// How the inclusion variable is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Gumbel-Softmax relaxation; differentiable in `theta_pi`.
    Relaxed,
    /// Exact Bernoulli draw; no gradient reaches `theta_pi`.
    Hard,
}

/// One draw `w = π ⊙ w_radial` from the spike-and-slab posterior.
pub fn sample_spike_slab<R: Rng + ?Sized>(
    params: &SpikeSlabRadialParams,
    cfg: GumbelConfig,
    mode: SampleMode,
    group: RadialGroup,
    rng: &mut R,
) -> Result<Tensor> {
    let slab = sample_radial(&params.slab()?, group, rng)?;
    let gate = match mode {
        SampleMode::Relaxed => sample_gumbel_softmax(&params.inclusion(), cfg, rng)?,
        SampleMode::Hard => bernoulli_indicator(&params.lambda(), rng),
    };
    gate.zip_map(&slab, |p, w| p * w)
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must lie strictly inside (0, 1), got {v}"
        )))
    }
}

/// `KL(Bern(lambda_q) ‖ Bern(lambda_p))` in closed form.
pub fn kl_bernoulli(lambda_q: f64, lambda_p: f64) -> Result<f64> {
    check_open_unit("lambda_q", lambda_q)?;
    check_open_unit("lambda_p", lambda_p)?;
    Ok(
        (1.0 - lambda_q) * ((1.0 - lambda_q) / (1.0 - lambda_p)).ln()
            + lambda_q * (lambda_q / lambda_p).ln(),
    )
}

/// [`kl_bernoulli`] with both arguments clamped to
/// `[LAMBDA_CLAMP, 1 − LAMBDA_CLAMP]`.
pub fn kl_bernoulli_clamped(lambda_q: f64, lambda_p: f64) -> f64 {
    let clamp = |l: f64| l.clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP);
    kl_bernoulli(clamp(lambda_q), clamp(lambda_p)).expect("clamped into the open interval")
}

/// `KL(N(mu_q, sigma_q²) ‖ N(mu_p, sigma_p²))` in closed form.
pub fn kl_gaussian_gaussian(mu_q: f64, sigma_q: f64, mu_p: f64, sigma_p: f64) -> Result<f64> {
    if !(sigma_q > 0.0) || !(sigma_p > 0.0) {
        return Err(Error::Domain(format!(
            "Gaussian scales must be positive, got ({sigma_q}, {sigma_p})"
        )));
    }
    let d = mu_q - mu_p;
    Ok((sigma_p / sigma_q).ln() + (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) - 0.5)
}

/// Running first and second moments of `M` radial noise draws, per weight.
///
/// The Monte-Carlo slab KL only needs `(1/M) Σ log p(w_i)` with a Gaussian
/// prior, which is quadratic in `w_i = mu + sigma·ε_i`; these two moments of
/// `ε` are therefore sufficient and the `M` draws never coexist in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMoments {
    pub mean: Tensor,
    pub mean_sq: Tensor,
    pub samples: usize,
}

impl NoiseMoments {
    /// Moments of an explicit list of noise draws.
    pub fn from_draws(draws: &[Tensor]) -> Result<Self> {
        let first = draws
            .first()
            .ok_or_else(|| Error::Domain("need at least one noise draw".into()))?;
        let mut acc = MomentAccumulator::new(first.shape());
        for d in draws {
            acc.push(d)?;
        }
        Ok(acc.finish())
    }
}

struct MomentAccumulator {
    sum: Tensor,
    sum_sq: Tensor,
    count: usize,
}

impl MomentAccumulator {
    fn new(shape: &[usize]) -> Self {
        Self {
            sum: Tensor::zeros(shape),
            sum_sq: Tensor::zeros(shape),
            count: 0,
        }
    }

    fn push(&mut self, eps: &Tensor) -> Result<()> {
        if eps.shape() != self.sum.shape() {
            return Err(Error::ShapeMismatch {
                op: "noise moments",
                lhs: self.sum.shape().to_vec(),
                rhs: eps.shape().to_vec(),
            });
        }
        for ((s, q), &e) in self
            .sum
            .data_mut()
            .iter_mut()
            .zip(self.sum_sq.data_mut().iter_mut())
            .zip(eps.data())
        {
            *s += e;
            *q += e * e;
        }
        self.count += 1;
        Ok(())
    }

    fn finish(self) -> NoiseMoments {
        let m = self.count as f64;
        NoiseMoments {
            mean: self.sum.map(|v| v / m),
            mean_sq: self.sum_sq.map(|v| v / m),
            samples: self.count,
        }
    }
}

/// Draw `m` radial noise tensors and keep only their running moments.
pub fn radial_noise_moments<R: Rng + ?Sized>(
    shape: &[usize],
    group: RadialGroup,
    m: usize,
    rng: &mut R,
) -> Result<NoiseMoments> {
    if m == 0 {
        return Err(Error::Domain(
            "Monte-Carlo sample count must be at least 1".into(),
        ));
    }
    let mut acc = MomentAccumulator::new(shape);
    for _ in 0..m {
        acc.push(&radial_noise(shape, group, rng)?)?;
    }
    Ok(acc.finish())
}

/// The two per-weight terms of the Monte-Carlo slab KL estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialKlTerms {
    /// `−log σ`.
    pub neg_log_sigma: Tensor,
    /// `−(1/M) Σᵢ log p(wᵢ)` under the prior slab.
    pub neg_mean_log_prior: Tensor,
}

impl RadialKlTerms {
    pub fn per_weight(&self) -> Tensor {
        self.neg_log_sigma
            .zip_map(&self.neg_mean_log_prior, |a, b| a + b)
            .expect("terms share a shape")
    }

    pub fn total(&self) -> f64 {
        self.per_weight().sum()
    }
}

/// Evaluate the slab KL estimate for fixed noise moments.
pub fn radial_kl_terms(
    params: &RadialParams,
    moments: &NoiseMoments,
    prior: &PriorConfig,
) -> Result<RadialKlTerms> {
    if moments.mean.shape() != params.mu.shape() {
        return Err(Error::ShapeMismatch {
            op: "radial kl",
            lhs: params.mu.shape().to_vec(),
            rhs: moments.mean.shape().to_vec(),
        });
    }
    let base = 0.5 * LN_2PI + prior.sigma_p.ln();
    let inv = 1.0 / (2.0 * prior.sigma_p * prior.sigma_p);
    let neg_mean_log_prior = (0..params.mu.len())
        .map(|i| {
            let d = params.mu.data()[i] - prior.mu_p;
            let s = params.sigma.data()[i];
            let m1 = moments.mean.data()[i];
            let m2 = moments.mean_sq.data()[i];
            base + inv * (d * d + 2.0 * d * s * m1 + s * s * m2)
        })
        .collect();
    Ok(RadialKlTerms {
        neg_log_sigma: params.sigma.map(|s| -s.ln()),
        neg_mean_log_prior: Tensor::new(params.mu.shape().to_vec(), neg_mean_log_prior)?,
    })
}

/// Monte-Carlo estimate, up to an additive constant, of
/// `KL(Radial(mu, sigma) ‖ N(mu_p, sigma_p²))` summed over all weights:
/// `Σ_k [−log σ_k − (1/M) Σᵢ log p(w_{ik})]`.
pub fn kl_radial_gaussian_mc<R: Rng + ?Sized>(
    params: &RadialParams,
    prior: &PriorConfig,
    m: usize,
    group: RadialGroup,
    rng: &mut R,
) -> Result<f64> {
    let moments = radial_noise_moments(params.mu.shape(), group, m, rng)?;
    Ok(radial_kl_terms(params, &moments, prior)?.total())
}

/// Per-weight slab KL estimate on the graph. `sigma` must be positive.
pub fn radial_kl_var(
    g: &mut Graph,
    mu: Var,
    sigma: Var,
    moments: &NoiseMoments,
    prior: &PriorConfig,
) -> Result<Var> {
    let mu_p = g.constant(Tensor::scalar(prior.mu_p));
    let d = g.sub(mu, mu_p)?;
    let d2 = g.mul(d, d)?;
    let m1 = g.constant(moments.mean.clone());
    let m2 = g.constant(moments.mean_sq.clone());
    let ds = g.mul(d, sigma)?;
    let cross = g.mul(ds, m1)?;
    let cross = g.scale(cross, 2.0)?;
    let s2 = g.mul(sigma, sigma)?;
    let quad = g.mul(s2, m2)?;
    let sum = g.add(d2, cross)?;
    let sum = g.add(sum, quad)?;
    let scaled = g.scale(sum, 1.0 / (2.0 * prior.sigma_p * prior.sigma_p))?;
    let base = g.constant(Tensor::scalar(0.5 * LN_2PI + prior.sigma_p.ln()));
    let neg_log_prior = g.add(scaled, base)?;
    let log_sigma = g.log(sigma)?;
    g.sub(neg_log_prior, log_sigma)
}

/// Per-weight `KL(Bern(sigmoid(theta_pi)) ‖ Bern(lambda_p))` on the graph.
///
/// Uses `log sigmoid(t) = −softplus(−t)` and `log(1 − sigmoid(t)) = −softplus(t)`,
/// which stays finite for any logit.
pub fn kl_bernoulli_var(g: &mut Graph, theta_pi: Var, lambda_p: f64) -> Result<Var> {
    let lambda_p = lambda_p.clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP);
    let lam = g.sigmoid(theta_pi)?;
    let one = g.constant(Tensor::scalar(1.0));
    let one_minus = g.sub(one, lam)?;

    let sp_pos = g.softplus(theta_pi)?;
    let log_one_minus_p = g.constant(Tensor::scalar((1.0 - lambda_p).ln()));
    let off = g.add(sp_pos, log_one_minus_p)?;
    let off = g.mul(one_minus, off)?;

    let neg_theta = g.neg(theta_pi)?;
    let sp_neg = g.softplus(neg_theta)?;
    let log_p = g.constant(Tensor::scalar(lambda_p.ln()));
    let on = g.add(sp_neg, log_p)?;
    let on = g.mul(lam, on)?;

    let total = g.add(off, on)?;
    g.neg(total)
}

/// Per-weight spike-and-slab KL on the graph:
/// `KL(Bern(λ_q) ‖ Bern(λ_p)) + λ_q · KL(g_q ‖ g_p)`.
pub fn kl_spike_slab_var(
    g: &mut Graph,
    theta_pi: Var,
    mu: Var,
    rho: Var,
    moments: &NoiseMoments,
    prior: &PriorConfig,
) -> Result<Var> {
    let bern = kl_bernoulli_var(g, theta_pi, prior.lambda_p)?;
    let sigma = g.softplus(rho)?;
    let slab = radial_kl_var(g, mu, sigma, moments, prior)?;
    let lam = g.sigmoid(theta_pi)?;
    let weighted = g.mul(lam, slab)?;
    g.add(bern, weighted)
}

/// Per-weight closed-form Gaussian KL on the graph.
pub fn kl_gaussian_var(g: &mut Graph, mu: Var, sigma: Var, prior: &PriorConfig) -> Result<Var> {
    let mu_p = g.constant(Tensor::scalar(prior.mu_p));
    let d = g.sub(mu, mu_p)?;
    let d2 = g.mul(d, d)?;
    let s2 = g.mul(sigma, sigma)?;
    let num = g.add(s2, d2)?;
    let quad = g.scale(num, 1.0 / (2.0 * prior.sigma_p * prior.sigma_p))?;
    let log_sigma = g.log(sigma)?;
    let c = g.constant(Tensor::scalar(prior.sigma_p.ln() - 0.5));
    let t = g.sub(quad, log_sigma)?;
    g.add(t, c)
}

/// Spike-and-slab KL from its two parts.
pub fn spike_slab_decomposition(lambda_q: f64, lambda_p: f64, slab_kl: f64) -> f64 {
    kl_bernoulli_clamped(lambda_q, lambda_p) + lambda_q * slab_kl
}

/// Monte-Carlo spike-and-slab KL summed over all weights.
pub fn kl_spike_slab<R: Rng + ?Sized>(
    params: &SpikeSlabRadialParams,
    prior: &PriorConfig,
    m: usize,
    group: RadialGroup,
    rng: &mut R,
) -> Result<f64> {
    let slab = params.slab()?;
    let moments = radial_noise_moments(params.shape(), group, m, rng)?;
    let slab_kl = radial_kl_terms(&slab, &moments, prior)?.per_weight();
    Ok(params
        .lambda()
        .data()
        .iter()
        .zip(slab_kl.data())
        .map(|(&l, &s)| spike_slab_decomposition(l, prior.lambda_p, s))
        .sum())
}
