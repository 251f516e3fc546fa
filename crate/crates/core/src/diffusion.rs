//! Noise schedules, the forward process and the generic reverse-chain sampler.
//!
//! Diffusion steps are indexed `1..=N`. Index `0` denotes clean data, with
//! `alpha_bar(0) == 1` by convention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `beta_i` evenly spaced from `beta_lo` (i = 1) to `beta_hi` (i = N).
    Linear,
    /// Every `beta_i` equals `beta_lo`.
    Constant,
}

/// Serializable recipe for a [`NoiseSchedule`].
///
/// When `betas` is present it is used verbatim and the other fields are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub n_steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
}

impl ScheduleConfig {
    pub fn linear(n_steps: usize, beta_lo: f64, beta_hi: f64) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            n_steps,
            beta_lo,
            beta_hi,
            betas: None,
        }
    }

    /// Explicit `beta_1..=beta_N`.
    pub fn explicit(betas: Vec<f64>) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            n_steps: betas.len(),
            beta_lo: betas.iter().cloned().fold(f64::INFINITY, f64::min),
            beta_hi: betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            betas: Some(betas),
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<NoiseSchedule<T>> {
        match &self.betas {
            Some(b) => NoiseSchedule::from_betas(b.iter().map(|&x| T::c(x)).collect()),
            None => NoiseSchedule::build(self.kind, self.n_steps, T::c(self.beta_lo), T::c(self.beta_hi)),
        }
    }
}

/// Precomputed `beta`, `alpha`, `alpha_bar` and posterior variance tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
    posterior_vars: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn build(kind: ScheduleKind, n_steps: usize, beta_lo: T, beta_hi: T) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidSchedule("n_steps must be positive".into()));
        }
        if !(beta_lo <= beta_hi) {
            return Err(Error::InvalidSchedule(format!(
                "beta_lo {beta_lo} exceeds beta_hi {beta_hi}"
            )));
        }
        let betas = match kind {
            ScheduleKind::Constant => vec![beta_lo; n_steps],
            ScheduleKind::Linear if n_steps == 1 => vec![beta_lo],
            ScheduleKind::Linear => {
                let span = beta_hi - beta_lo;
                let denom = T::c((n_steps - 1) as f64);
                (0..n_steps)
                    .map(|k| beta_lo + span * T::c(k as f64) / denom)
                    .collect()
            }
        };
        Self::from_betas(betas)
    }

    /// Custom schedule from explicit `beta_1..=beta_N`.
    pub fn from_betas(betas: Vec<T>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("n_steps must be positive".into()));
        }
        if let Some((k, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > T::zero() && b < T::one()))
        {
            return Err(Error::InvalidSchedule(format!(
                "beta_{} = {b} is outside (0, 1)",
                k + 1
            )));
        }
        let alphas: Vec<T> = betas.iter().map(|&b| T::one() - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = T::one();
        for &a in &alphas {
            acc = acc * a;
            alpha_bars.push(acc);
        }
        let posterior_vars = betas
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let prev = if k == 0 { T::one() } else { alpha_bars[k - 1] };
                (T::one() - prev) / (T::one() - alpha_bars[k]) * b
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_vars,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, step: usize) -> Result<()> {
        if step == 0 || step > self.n_steps() {
            Err(Error::InvalidStep {
                step,
                n_steps: self.n_steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, step: usize) -> T {
        self.betas[step - 1]
    }

    pub fn alpha(&self, step: usize) -> T {
        self.alphas[step - 1]
    }

    /// `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, step: usize) -> T {
        if step == 0 {
            T::one()
        } else {
            self.alpha_bars[step - 1]
        }
    }

    /// Posterior variance `beta_tilde_i`. Zero at `i = 1`.
    pub fn posterior_var(&self, step: usize) -> T {
        self.posterior_vars[step - 1]
    }

    /// Variance used for the reverse Gaussian at `step`.
    ///
    /// Equal to `beta_tilde_i` except at `i = 1`, where `beta_tilde_1 = 0`
    /// would leave the step density undefined; there it is clipped to
    /// `beta_tilde_2` (or `beta_1` when `N = 1`).
    pub fn reverse_var(&self, step: usize) -> T {
        if step > 1 {
            self.posterior_var(step)
        } else if self.n_steps() > 1 {
            self.posterior_var(2)
        } else {
            self.beta(1)
        }
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    pub fn posterior_vars(&self) -> &[T] {
        &self.posterior_vars
    }
}

/// Shape of the action a policy emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub action_dim: usize,
    /// Prediction length `T_p` (1 for single-shot tasks).
    pub horizon: usize,
}

impl ActionSpec {
    pub fn new(action_dim: usize, horizon: usize) -> Result<Self> {
        if action_dim == 0 || horizon == 0 {
            return Err(Error::InvalidHorizon(
                "action_dim and horizon must be positive".into(),
            ));
        }
        Ok(Self {
            action_dim,
            horizon,
        })
    }

    pub fn flat_dim(&self) -> usize {
        self.action_dim * self.horizon
    }
}

/// Gaussian `N(mu, diag(sigma_diag))` for one reverse step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseStepParams<T> {
    pub mu: Vec<T>,
    /// Variances, not standard deviations.
    pub sigma_diag: Vec<T>,
    pub step: usize,
}

impl<T: Scalar> ReverseStepParams<T> {
    pub fn new(mu: Vec<T>, sigma_diag: Vec<T>, step: usize) -> Result<Self> {
        check_len("reverse step variance", mu.len(), sigma_diag.len())?;
        if let Some(index) = sigma_diag.iter().position(|&s| !(s > T::zero())) {
            return Err(Error::NonPositiveVariance { index });
        }
        Ok(Self {
            mu,
            sigma_diag,
            step,
        })
    }

    /// Isotropic variance `var * I`.
    pub fn isotropic(mu: Vec<T>, var: T, step: usize) -> Result<Self> {
        let d = mu.len();
        Self::new(mu, vec![var; d], step)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// History of the last `T_o` state vectors, most recent last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub history: Vec<Vec<T>>,
}

impl<T: Scalar> Observation<T> {
    /// Empty observation for unconditional models.
    pub fn empty() -> Self {
        Self {
            history: Vec::new(),
        }
    }

    /// Window of length `t_o` ending at the newest of `states`, left-padded
    /// with zero vectors when fewer than `t_o` states exist.
    pub fn padded(states: &[Vec<T>], t_o: usize, state_dim: usize) -> Self {
        let available = states.len().min(t_o);
        let mut history = vec![vec![T::zero(); state_dim]; t_o - available];
        history.extend(states[states.len() - available..].iter().cloned());
        Self { history }
    }

    pub fn latest(&self) -> Option<&[T]> {
        self.history.last().map(Vec::as_slice)
    }

    pub fn flatten(&self) -> Vec<T> {
        self.history.iter().flatten().copied().collect()
    }
}

/// Maps `(x_i, i, observation)` to the reverse-step Gaussian.
///
/// Implementations must be deterministic and free of interior mutation.
pub trait Denoiser<T: Scalar>: Send + Sync {
    fn action_spec(&self) -> ActionSpec;

    fn reverse_params(
        &self,
        x: &[T],
        step: usize,
        obs: &Observation<T>,
        sched: &NoiseSchedule<T>,
    ) -> Result<ReverseStepParams<T>>;
}

pub fn standard_normal_vec<T: Scalar, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<T> {
    (0..dim).map(|_| T::standard_normal(rng)).collect()
}

/// Draws `x_i ~ N(sqrt(alpha_bar_i) x0, (1 - alpha_bar_i) I)`.
pub fn forward_marginal_sample<T: Scalar, R: Rng + ?Sized>(
    x0: &[T],
    step: usize,
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    sched.check_step(step)?;
    let ab = sched.alpha_bar(step);
    let (signal, noise) = (ab.sqrt(), (T::one() - ab).sqrt());
    Ok(x0
        .iter()
        .map(|&x| signal * x + noise * T::standard_normal(rng))
        .collect())
}

/// Draws one forward transition `x_i ~ N(sqrt(1 - beta_i) x_{i-1}, beta_i I)`.
pub fn forward_step_sample<T: Scalar, R: Rng + ?Sized>(
    x_prev: &[T],
    step: usize,
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    sched.check_step(step)?;
    let (keep, noise) = (sched.alpha(step).sqrt(), sched.beta(step).sqrt());
    Ok(x_prev
        .iter()
        .map(|&x| keep * x + noise * T::standard_normal(rng))
        .collect())
}

/// Draws from `N(mu, diag(sigma))`; returns `mu` untouched at step 1.
pub fn reverse_step_sample<T: Scalar, R: Rng + ?Sized>(
    params: &ReverseStepParams<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    if let Some(index) = params.sigma_diag.iter().position(|&s| !(s > T::zero())) {
        return Err(Error::NonPositiveVariance { index });
    }
    if params.step <= 1 {
        return Ok(params.mu.clone());
    }
    Ok(params
        .mu
        .iter()
        .zip(&params.sigma_diag)
        .map(|(&m, &s)| m + s.sqrt() * T::standard_normal(rng))
        .collect())
}

/// Runs the full reverse chain from `a_N ~ N(0, I)` and returns `a_0`.
pub fn sample_chain<T: Scalar, R: Rng + ?Sized>(
    denoiser: &dyn Denoiser<T>,
    obs: &Observation<T>,
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    let d = denoiser.action_spec().flat_dim();
    let mut x = standard_normal_vec(d, rng);
    for step in (1..=sched.n_steps()).rev() {
        let params = denoiser.reverse_params(&x, step, obs, sched)?;
        check_len("denoiser output", d, params.dim())?;
        x = reverse_step_sample(&params, rng)?;
    }
    Ok(x)
}
