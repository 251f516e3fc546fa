//! Small epsilon-prediction MLP denoiser with hand-written backpropagation.
//!
//! Input layout: `[x_i (d), sinusoidal embedding of i (embed_dim), obs]`.
//! Hidden layers use the configured activation; the output layer is linear.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    standard_normal_vec, ActionSpec, Denoiser, NoiseSchedule, Observation, ReverseStepParams,
};
use crate::error::{check_len, Error, Result};
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub action_dim: usize,
    pub obs_dim: usize,
    /// Even number of sinusoidal step features.
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpArch {
    pub fn input_dim(&self) -> usize {
        self.action_dim + self.embed_dim + self.obs_dim
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(&self.hidden);
        sizes.push(self.action_dim);
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_dim == 0 {
            return Err(Error::Config("action_dim must be positive".into()));
        }
        if !self.embed_dim.is_multiple_of(2) {
            return Err(Error::Config("embed_dim must be even".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            biases: vec![T::zero(); out_dim],
        }
    }

    fn forward(&self, input: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.biases)
            .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub arch: MlpArch,
    pub layers: Vec<Layer<T>>,
}

/// Sinusoidal features `[sin(i f_k), cos(i f_k)]` with geometric frequencies.
pub fn step_embedding<T: Scalar>(step: usize, embed_dim: usize) -> Vec<T> {
    let half = embed_dim / 2;
    let mut out = Vec::with_capacity(embed_dim);
    let t = T::c(step as f64);
    for k in 0..half {
        let freq = T::c((-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp());
        out.push((t * freq).sin());
    }
    for k in 0..half {
        let freq = T::c((-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp());
        out.push((t * freq).cos());
    }
    out
}

struct ForwardCache<T> {
    /// Inputs to each layer (`activations[0]` is the network input).
    activations: Vec<Vec<T>>,
    pre_activations: Vec<Vec<T>>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(arch: MlpArch) -> Result<Self> {
        arch.validate()?;
        let sizes = arch.layer_sizes();
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { arch, layers })
    }

    /// Glorot-uniform weights and zero biases from `seed`.
    pub fn init(arch: MlpArch, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::c(rng.random_range(-limit..limit));
            }
        }
        Ok(params)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        check_len("flat parameter vector", self.n_params(), flat.len())?;
        for (p, &v) in self.iter_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    fn assemble_input(&self, x: &[T], step: usize, obs: &[T]) -> Result<Vec<T>> {
        check_len("mlp action input", self.arch.action_dim, x.len())?;
        check_len("mlp observation input", self.arch.obs_dim, obs.len())?;
        if !all_finite(x) || !all_finite(obs) {
            return Err(Error::NonFinite("mlp input"));
        }
        let mut input = Vec::with_capacity(self.arch.input_dim());
        input.extend_from_slice(x);
        input.extend(step_embedding::<T>(step, self.arch.embed_dim));
        input.extend_from_slice(obs);
        Ok(input)
    }

    fn forward_cached(&self, input: Vec<T>) -> ForwardCache<T> {
        let last = self.layers.len() - 1;
        let mut activations = vec![input];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&activations[l]);
            if l < last {
                activations.push(z.iter().map(|&v| self.arch.activation.apply(v)).collect());
            }
            pre_activations.push(z);
        }
        ForwardCache {
            activations,
            pre_activations,
        }
    }

    /// Predicted noise `eps_hat(x_i, i, obs)`.
    pub fn predict_eps(&self, x: &[T], step: usize, obs: &[T]) -> Result<Vec<T>> {
        let input = self.assemble_input(x, step, obs)?;
        let mut cache = self.forward_cached(input);
        Ok(cache.pre_activations.pop().unwrap_or_default())
    }

    /// `mu = (x - beta_i / sqrt(1 - ab_i) eps_hat) / sqrt(alpha_i)`,
    /// `Sigma = reverse_var(i) I`.
    pub fn reverse_params(
        &self,
        x: &[T],
        step: usize,
        obs: &[T],
        sched: &NoiseSchedule<T>,
    ) -> Result<ReverseStepParams<T>> {
        sched.check_step(step)?;
        let eps = self.predict_eps(x, step, obs)?;
        reverse_params_from_eps(x, &eps, step, sched)
    }

    /// Accumulates `d loss / d params` for one example, given `d loss / d output`.
    fn backward(&self, cache: &ForwardCache<T>, mut delta: Vec<T>, grad: &mut Self) {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.activations[l];
            let g = &mut grad.layers[l];
            for (o, &dv) in delta.iter().enumerate() {
                g.biases[o] = g.biases[o] + dv;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw = *gw + dv * x;
                }
            }
            if l > 0 {
                let z_prev = &cache.pre_activations[l - 1];
                delta = (0..layer.in_dim)
                    .map(|j| {
                        let back = delta
                            .iter()
                            .enumerate()
                            .fold(T::zero(), |acc, (o, &dv)| acc + layer.weights[o * layer.in_dim + j] * dv);
                        back * self.arch.activation.derivative(z_prev[j])
                    })
                    .collect();
            }
        }
    }

    /// Mean squared noise-prediction error over `examples` and its gradient.
    pub fn loss_and_grad_on(&self, examples: &[TrainingExample<T>]) -> Result<(T, Self)> {
        if examples.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let scale = T::one() / T::c(examples.len() as f64);
        let mut grad = self.zeros_like();
        let mut loss = T::zero();
        for ex in examples {
            let input = self.assemble_input(&ex.x_noisy, ex.step, &ex.obs)?;
            let cache = self.forward_cached(input);
            let out = cache.pre_activations.last().expect("at least one layer");
            let delta: Vec<T> = out
                .iter()
                .zip(&ex.eps)
                .map(|(&p, &e)| {
                    let r = p - e;
                    loss = loss + r * r * scale;
                    T::c(2.0) * r * scale
                })
                .collect();
            self.backward(&cache, delta, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        Ok((loss, grad))
    }
}

/// Reverse-step Gaussian from a noise prediction.
pub fn reverse_params_from_eps<T: Scalar>(
    x: &[T],
    eps: &[T],
    step: usize,
    sched: &NoiseSchedule<T>,
) -> Result<ReverseStepParams<T>> {
    check_len("noise prediction", x.len(), eps.len())?;
    let coef = sched.beta(step) / (T::one() - sched.alpha_bar(step)).sqrt();
    let scale = sched.alpha(step).sqrt().recip();
    let mu = x
        .iter()
        .zip(eps)
        .map(|(&xi, &e)| scale * (xi - coef * e))
        .collect();
    ReverseStepParams::isotropic(mu, sched.reverse_var(step), step)
}

/// One noised training input with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample<T> {
    pub x_noisy: Vec<T>,
    pub step: usize,
    pub obs: Vec<T>,
    pub eps: Vec<T>,
}

/// A clean demonstration: action `x0` under flattened observation `obs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration<T> {
    pub x0: Vec<T>,
    pub obs: Vec<T>,
}

/// Draws a uniform step and Gaussian noise for every demonstration.
pub fn noise_batch<T: Scalar, R: Rng + ?Sized>(
    batch: &[&Demonstration<T>],
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Vec<TrainingExample<T>> {
    batch
        .iter()
        .map(|demo| {
            let step = rng.random_range(1..=sched.n_steps());
            let eps: Vec<T> = standard_normal_vec(demo.x0.len(), rng);
            let ab = sched.alpha_bar(step);
            let x_noisy = demo
                .x0
                .iter()
                .zip(&eps)
                .map(|(&x, &e)| ab.sqrt() * x + (T::one() - ab).sqrt() * e)
                .collect();
            TrainingExample {
                x_noisy,
                step,
                obs: demo.obs.clone(),
                eps,
            }
        })
        .collect()
}

/// Loss and gradient on a freshly noised batch.
pub fn loss_and_grad<T: Scalar, R: Rng + ?Sized>(
    params: &MlpParams<T>,
    batch: &[&Demonstration<T>],
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<(T, MlpParams<T>)> {
    params.loss_and_grad_on(&noise_batch(batch, sched, rng))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            optimizer: Optimizer::Adam,
            ema_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "learning_rate and batch_size must be positive".into(),
            ));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn update(&mut self, params: &mut MlpParams<T>, grad: &MlpParams<T>, lr: T) {
        self.t += 1;
        let (b1, b2) = (T::c(ADAM_BETA1), T::c(ADAM_BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + T::c(ADAM_EPS));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean minibatch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    /// Final parameters, or the last finite ones if training diverged.
    pub params: MlpParams<T>,
    pub log: TrainLog,
    pub diverged: Option<Error>,
}

/// Minibatch training from `init`; deterministic for a fixed `config.seed`.
pub fn train<T: Scalar>(
    init: MlpParams<T>,
    data: &[Demonstration<T>],
    sched: &NoiseSchedule<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut ema = config.ema_decay.map(|_| params.clone());
    let mut adam = Adam::new(params.n_params());
    let lr = T::c(config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let checkpoint = params.clone();
        let checkpoint_ema = ema.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut failure = None;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Demonstration<T>> = chunk.iter().map(|&k| &data[k]).collect();
            match loss_and_grad(&params, &batch, sched, &mut rng) {
                Ok((loss, grad)) if grad.is_finite() => {
                    total += loss.lossy_f64();
                    batches += 1;
                    match config.optimizer {
                        Optimizer::Adam => adam.update(&mut params, &grad, lr),
                        Optimizer::Sgd => {
                            for (p, &g) in params.iter_mut().zip(grad.iter()) {
                                *p = *p - lr * g;
                            }
                        }
                    }
                    if let (Some(e), Some(decay)) = (ema.as_mut(), config.ema_decay) {
                        let decay = T::c(decay);
                        for (s, &p) in e.iter_mut().zip(params.iter()) {
                            *s = decay * *s + (T::one() - decay) * p;
                        }
                    }
                    if !params.is_finite() {
                        failure = Some(f64::NAN);
                        break;
                    }
                }
                Ok((loss, _)) => {
                    failure = Some(loss.lossy_f64());
                    break;
                }
                Err(Error::NonFinite(_)) => {
                    failure = Some(f64::NAN);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(loss) = failure {
            return Ok(TrainOutcome {
                params: checkpoint_ema.unwrap_or(checkpoint),
                log,
                diverged: Some(Error::Divergence { epoch, loss }),
            });
        }
        log.epoch_losses.push(total / batches as f64);
    }
    Ok(TrainOutcome {
        params: ema.unwrap_or(params),
        log,
        diverged: None,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DISCOMLP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub arch: MlpArch,
    pub layer_sizes: Vec<usize>,
    pub n_params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

/// Writes `magic | u32 version | u64 header length | JSON header | f64 LE blob`.
pub fn write_checkpoint<T: Scalar, W: Write>(
    params: &MlpParams<T>,
    train: Option<&TrainConfig>,
    mut out: W,
) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        arch: params.arch.clone(),
        layer_sizes: params.arch.layer_sizes(),
        n_params: params.n_params(),
        train: train.cloned(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for v in params.iter() {
        out.write_all(&v.lossy_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<(MlpParams<T>, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut params = MlpParams::zeros(header.arch.clone())?;
    if params.n_params() != header.n_params || params.arch.layer_sizes() != header.layer_sizes {
        return Err(Error::Checkpoint("header shapes are inconsistent".into()));
    }
    let mut buf = [0u8; 8];
    for p in params.iter_mut() {
        input.read_exact(&mut buf)?;
        *p = T::c(f64::from_le_bytes(buf));
    }
    if input.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after weights".into()));
    }
    Ok((params, header))
}

/// Denoiser backed by a trained MLP.
#[derive(Debug, Clone)]
pub struct MlpDenoiser<T> {
    pub params: MlpParams<T>,
    pub spec: ActionSpec,
}

impl<T: Scalar> MlpDenoiser<T> {
    pub fn new(params: MlpParams<T>, spec: ActionSpec) -> Result<Self> {
        check_len("mlp action dimension", spec.flat_dim(), params.arch.action_dim)?;
        Ok(Self { params, spec })
    }
}

impl<T: Scalar> Denoiser<T> for MlpDenoiser<T> {
    fn action_spec(&self) -> ActionSpec {
        self.spec
    }

    fn reverse_params(
        &self,
        x: &[T],
        step: usize,
        obs: &Observation<T>,
        sched: &NoiseSchedule<T>,
    ) -> Result<ReverseStepParams<T>> {
        let flat = obs.flatten();
        // Unconditional models ignore whatever observation is supplied.
        let obs = if self.params.arch.obs_dim == 0 { &[][..] } else { &flat[..] };
        self.params.reverse_params(x, step, obs, sched)
    }
}
