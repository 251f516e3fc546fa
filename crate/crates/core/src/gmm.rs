//! Diagonal-covariance Gaussian mixtures with closed-form diffusion posteriors.
//!
//! When the data law is a declared mixture, every quantity a trained network
//! would approximate (noisy marginals, `E[x_0 | x_i]`, the true reverse kernel)
//! is available exactly. [`GmmDenoiser`] exposes the moment-matched Gaussian
//! reverse step; [`GmmModel::exact_reverse_sample`] draws from the exact
//! mixture kernel and is only used as a reference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{ActionSpec, Denoiser, NoiseSchedule, Observation, ReverseStepParams};
use crate::error::{check_len, Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGmm<T>", into = "RawGmm<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct GmmModel<T: Scalar> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    vars: Vec<Vec<T>>,
}

#[derive(Serialize, Deserialize)]
struct RawGmm<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    vars: Vec<Vec<T>>,
}

impl<T: Scalar> TryFrom<RawGmm<T>> for GmmModel<T> {
    type Error = Error;

    fn try_from(raw: RawGmm<T>) -> Result<Self> {
        GmmModel::new(raw.weights, raw.means, raw.vars)
    }
}

impl<T: Scalar> From<GmmModel<T>> for RawGmm<T> {
    fn from(g: GmmModel<T>) -> Self {
        RawGmm {
            weights: g.weights,
            means: g.means,
            vars: g.vars,
        }
    }
}

impl<T: Scalar> GmmModel<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, vars: Vec<Vec<T>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidModel("mixture has no components".into()));
        }
        if means.len() != weights.len() || vars.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} weights, {} means, {} variance vectors",
                weights.len(),
                means.len(),
                vars.len()
            )));
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidModel("weights must be positive".into()));
        }
        let total = weights.iter().fold(T::zero(), |a, &w| a + w);
        if (total - T::one()).abs() > T::c(1e-12).max(T::epsilon() * T::c(8.0)) {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidModel("zero-dimensional components".into()));
        }
        for (m, v) in means.iter().zip(&vars) {
            if m.len() != d || v.len() != d {
                return Err(Error::InvalidModel("component dimensions differ".into()));
            }
            if v.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
                return Err(Error::InvalidModel("variances must be positive".into()));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel("non-finite mean".into()));
            }
        }
        Ok(Self {
            weights,
            means,
            vars,
        })
    }

    /// Mixture with weights normalized from arbitrary positive values.
    pub fn from_unnormalized(weights: Vec<T>, means: Vec<Vec<T>>, vars: Vec<Vec<T>>) -> Result<Self> {
        let total = weights.iter().fold(T::zero(), |a, &w| a + w);
        Self::new(weights.into_iter().map(|w| w / total).collect(), means, vars)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn vars(&self) -> &[Vec<T>] {
        &self.vars
    }

    /// `log pi_j + log N(x; m_j, S_j)` for every component.
    pub fn component_log_joint(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("mixture input", self.dim(), x.len())?;
        let half_log_2pi = T::c(0.5) * (T::c(2.0) * T::PI()).ln();
        Ok(self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(&w, (m, v))| {
                let mut acc = w.ln();
                for ((&xk, &mk), &vk) in x.iter().zip(m).zip(v) {
                    let r = xk - mk;
                    acc = acc - half_log_2pi - T::c(0.5) * vk.ln() - T::c(0.5) * r * r / vk;
                }
                acc
            })
            .collect())
    }

    pub fn logpdf(&self, x: &[T]) -> Result<T> {
        Ok(log_sum_exp(&self.component_log_joint(x)?))
    }

    /// Posterior component probabilities, computed in the log domain.
    pub fn responsibilities(&self, x: &[T]) -> Result<Vec<T>> {
        let joint = self.component_log_joint(x)?;
        let norm = log_sum_exp(&joint);
        Ok(joint.into_iter().map(|l| (l - norm).exp()).collect())
    }

    /// Law of `x_i` when `x_0` follows this mixture.
    pub fn marginal_at_step(&self, step: usize, sched: &NoiseSchedule<T>) -> Result<Self> {
        sched.check_step(step)?;
        Ok(self.diffused(sched.alpha_bar(step)))
    }

    fn diffused(&self, alpha_bar: T) -> Self {
        let signal = alpha_bar.sqrt();
        let noise = T::one() - alpha_bar;
        Self {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| m.iter().map(|&x| signal * x).collect())
                .collect(),
            vars: self
                .vars
                .iter()
                .map(|v| v.iter().map(|&s| alpha_bar * s + noise).collect())
                .collect(),
        }
    }

    /// Per-component Gaussian posterior `(mean, var)` of `x_0` given `x_i`.
    fn component_posteriors(&self, x: &[T], alpha_bar: T) -> Vec<(Vec<T>, Vec<T>)> {
        let signal = alpha_bar.sqrt();
        let noise = T::one() - alpha_bar;
        self.means
            .iter()
            .zip(&self.vars)
            .map(|(m, v)| {
                let mut mean = Vec::with_capacity(m.len());
                let mut var = Vec::with_capacity(m.len());
                for ((&xk, &mk), &sk) in x.iter().zip(m).zip(v) {
                    let denom = alpha_bar * sk + noise;
                    mean.push(mk + signal * sk / denom * (xk - signal * mk));
                    var.push(sk * noise / denom);
                }
                (mean, var)
            })
            .collect()
    }

    /// `E[x_0 | x_i]` under the mixture prior.
    pub fn posterior_mean_x0(&self, x: &[T], step: usize, sched: &NoiseSchedule<T>) -> Result<Vec<T>> {
        sched.check_step(step)?;
        let resp = self.marginal_at_step(step, sched)?.responsibilities(x)?;
        let posts = self.component_posteriors(x, sched.alpha_bar(step));
        let mut out = vec![T::zero(); self.dim()];
        for (r, (mean, _)) in resp.iter().zip(&posts) {
            for (o, &m) in out.iter_mut().zip(mean) {
                *o = *o + *r * m;
            }
        }
        Ok(out)
    }

    /// Moment-matched Gaussian reverse step with `Sigma = reverse_var(i) I`.
    pub fn reverse_params(
        &self,
        x: &[T],
        step: usize,
        sched: &NoiseSchedule<T>,
    ) -> Result<ReverseStepParams<T>> {
        let x0_hat = self.posterior_mean_x0(x, step, sched)?;
        let (c0, ct) = posterior_coefficients(step, sched);
        let mu = x0_hat
            .iter()
            .zip(x)
            .map(|(&x0, &xt)| c0 * x0 + ct * xt)
            .collect();
        ReverseStepParams::isotropic(mu, sched.reverse_var(step), step)
    }

    /// Samples `x_{i-1}` from the exact reverse kernel of the mixture prior.
    pub fn exact_reverse_sample<R: Rng + ?Sized>(
        &self,
        x: &[T],
        step: usize,
        sched: &NoiseSchedule<T>,
        rng: &mut R,
    ) -> Result<Vec<T>> {
        sched.check_step(step)?;
        let resp = self.marginal_at_step(step, sched)?.responsibilities(x)?;
        let j = sample_index(&resp, rng);
        let (mean, var) = &self.component_posteriors(x, sched.alpha_bar(step))[j];
        let (c0, ct) = posterior_coefficients(step, sched);
        let extra = sched.posterior_var(step);
        Ok(mean
            .iter()
            .zip(var)
            .zip(x)
            .map(|((&m, &v), &xt)| {
                let sd = (c0 * c0 * v + extra).sqrt();
                c0 * m + ct * xt + sd * T::standard_normal(rng)
            })
            .collect())
    }

    /// Mean of the exact reverse kernel, `E[x_{i-1} | x_i]`.
    pub fn exact_reverse_mean(&self, x: &[T], step: usize, sched: &NoiseSchedule<T>) -> Result<Vec<T>> {
        sched.check_step(step)?;
        let resp = self.marginal_at_step(step, sched)?.responsibilities(x)?;
        let (c0, ct) = posterior_coefficients(step, sched);
        let mut out: Vec<T> = x.iter().map(|&xt| ct * xt).collect();
        for (r, (mean, _)) in resp.iter().zip(self.component_posteriors(x, sched.alpha_bar(step))) {
            for (o, m) in out.iter_mut().zip(mean) {
                *o = *o + *r * c0 * m;
            }
        }
        Ok(out)
    }

    /// Exact conditional mixture over the coordinates not in `fixed`.
    pub fn conditional(&self, fixed: &[usize], values: &[T]) -> Result<Self> {
        check_len("conditioning values", fixed.len(), values.len())?;
        let d = self.dim();
        if fixed.is_empty() || fixed.len() >= d {
            return Err(Error::InvalidModel(
                "conditioning set must be a non-empty proper subset".into(),
            ));
        }
        let mut is_fixed = vec![false; d];
        for &k in fixed {
            if k >= d || is_fixed[k] {
                return Err(Error::InvalidModel(format!("bad conditioning index {k}")));
            }
            is_fixed[k] = true;
        }
        let half_log_2pi = T::c(0.5) * (T::c(2.0) * T::PI()).ln();
        let log_w: Vec<T> = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(&w, (m, v))| {
                fixed.iter().zip(values).fold(w.ln(), |acc, (&k, &val)| {
                    let r = val - m[k];
                    acc - half_log_2pi - T::c(0.5) * v[k].ln() - T::c(0.5) * r * r / v[k]
                })
            })
            .collect();
        let norm = log_sum_exp(&log_w);
        let free = |row: &Vec<T>| -> Vec<T> {
            row.iter()
                .enumerate()
                .filter(|(k, _)| !is_fixed[*k])
                .map(|(_, &x)| x)
                .collect()
        };
        // Components with negligible weight are kept; their tiny weight is exact.
        let weights: Vec<T> = log_w
            .iter()
            .map(|&l| (l - norm).exp().max(T::min_positive_value()))
            .collect();
        Self::from_unnormalized(
            weights,
            self.means.iter().map(free).collect(),
            self.vars.iter().map(free).collect(),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let j = sample_index(&self.weights, rng);
        self.sample_component(j, rng)
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> Vec<T> {
        self.means[j]
            .iter()
            .zip(&self.vars[j])
            .map(|(&m, &v)| m + v.sqrt() * T::standard_normal(rng))
            .collect()
    }
}

/// Coefficients of `x_0` and `x_i` in the forward-posterior mean.
fn posterior_coefficients<T: Scalar>(step: usize, sched: &NoiseSchedule<T>) -> (T, T) {
    let ab = sched.alpha_bar(step);
    let ab_prev = sched.alpha_bar(step - 1);
    let beta = sched.beta(step);
    let c0 = ab_prev.sqrt() * beta / (T::one() - ab);
    let ct = sched.alpha(step).sqrt() * (T::one() - ab_prev) / (T::one() - ab);
    (c0, ct)
}

/// Inverse-CDF draw of an index from non-negative weights summing to ~1.
pub(crate) fn sample_index<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize {
    let total = weights.iter().fold(T::zero(), |a, &w| a + w);
    let u = T::unit_uniform(rng) * total;
    let mut acc = T::zero();
    for (j, &w) in weights.iter().enumerate() {
        acc = acc + w;
        if u < acc {
            return j;
        }
    }
    weights.len() - 1
}

/// Unconditional denoiser backed by an exactly known mixture.
#[derive(Debug, Clone)]
pub struct GmmDenoiser<T: Scalar> {
    pub model: GmmModel<T>,
    pub spec: ActionSpec,
}

impl<T: Scalar> GmmDenoiser<T> {
    pub fn new(model: GmmModel<T>, spec: ActionSpec) -> Result<Self> {
        check_len("mixture dimension", spec.flat_dim(), model.dim())?;
        Ok(Self { model, spec })
    }

    /// Single-shot spec covering the whole mixture dimension.
    pub fn flat(model: GmmModel<T>) -> Self {
        let spec = ActionSpec {
            action_dim: model.dim(),
            horizon: 1,
        };
        Self { model, spec }
    }
}

impl<T: Scalar> Denoiser<T> for GmmDenoiser<T> {
    fn action_spec(&self) -> ActionSpec {
        self.spec
    }

    fn reverse_params(
        &self,
        x: &[T],
        step: usize,
        _obs: &Observation<T>,
        sched: &NoiseSchedule<T>,
    ) -> Result<ReverseStepParams<T>> {
        self.model.reverse_params(x, step, sched)
    }
}
