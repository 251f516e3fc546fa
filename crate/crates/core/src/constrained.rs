//! Constrained inpainting: keep the merged sample inside the high-likelihood
//! ellipsoid of the reverse-step Gaussian while staying as close as possible
//! to the keyframe.
//!
//! With a diagonal covariance the projection
//!
//! ```text
//! min_a  sum_k (a_k - c_k)^2   s.t.  1/2 sum_k (a_k - mu_k)^2 / s_k <= gamma'
//! ```
//!
//! is a trust-region subproblem whose KKT point is
//! `a_k(lambda) = (2 s_k c_k + lambda mu_k) / (2 s_k + lambda)`, leaving a
//! single monotone scalar equation in the multiplier `lambda`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{reverse_step_sample, NoiseSchedule, ReverseStepParams};
use crate::error::{check_len, Error, Result};
use crate::inpainting::{sample_known, Mask};
use crate::scalar::Scalar;

pub const DUAL_TOLERANCE: f64 = 1e-10;
pub const MAX_DUAL_ITERATIONS: usize = 200;

/// Budget for end-effector position keyframes.
pub const GAMMA_POSITION: f64 = 1e-2;
/// Budget for end-effector velocity keyframes.
pub const GAMMA_VELOCITY: f64 = 1e-3;
/// Budget for joint-space keyframes, read as `3 x 10^-4`.
pub const GAMMA_JOINT: f64 = 3e-4;
/// Alternative literal reading of the joint budget, `3^-4`.
pub const GAMMA_JOINT_POWER_READING: f64 = 1.0 / 81.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaInterpretation {
    /// `gamma` is the total budget.
    #[default]
    Total,
    /// `gamma` is per action dimension and multiplied by `d`.
    PerDim,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// Project the merged candidate (keyframe on known entries, reverse
    /// sample elsewhere) onto the ellipsoid.
    #[default]
    MergedProjection,
    /// Spend the budget on known entries first (unknown pinned at `mu`),
    /// then project the reverse sample onto what is left.
    KeyframePriority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Constant(f64),
    /// `gamma` for reverse steps `1..=N`, indexed by `step - 1`.
    PerStep(Vec<f64>),
}

/// Inclusive range of reverse steps where the constraint is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepWindow {
    pub lo: usize,
    pub hi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSchedule {
    pub gamma: GammaSpec,
    #[serde(default)]
    pub interpretation: GammaInterpretation,
    #[serde(default)]
    pub mode: ProjectionMode,
    /// Steps outside the window fall back to the plain merge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<StepWindow>,
}

impl ConstraintSchedule {
    pub fn constant(gamma: f64) -> Self {
        Self {
            gamma: GammaSpec::Constant(gamma),
            interpretation: GammaInterpretation::Total,
            mode: ProjectionMode::MergedProjection,
            window: None,
        }
    }

    pub fn with_mode(mut self, mode: ProjectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self, n_steps: usize) -> Result<()> {
        match &self.gamma {
            GammaSpec::Constant(g) if !g.is_finite() => {
                Err(Error::Config("gamma must be finite".into()))
            }
            GammaSpec::PerStep(v) if v.len() != n_steps => Err(Error::Config(format!(
                "per-step gamma has {} entries for {n_steps} steps",
                v.len()
            ))),
            GammaSpec::PerStep(v) if v.iter().any(|g| !g.is_finite()) => {
                Err(Error::Config("gamma must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Effective total budget `gamma` for reverse step `step` in dimension `d`.
    pub fn gamma_at(&self, step: usize, d: usize) -> f64 {
        let g = match &self.gamma {
            GammaSpec::Constant(g) => *g,
            GammaSpec::PerStep(v) => v[step - 1],
        };
        match self.interpretation {
            GammaInterpretation::Total => g,
            GammaInterpretation::PerDim => g * d as f64,
        }
    }

    pub fn applies_at(&self, step: usize) -> bool {
        self.window.is_none_or(|w| (w.lo..=w.hi).contains(&step))
    }
}

/// `gamma' = gamma - 1/2 log((2 pi)^d det Sigma)` for diagonal `Sigma`.
pub fn gamma_prime<T: Scalar>(gamma: T, sigma_diag: &[T]) -> T {
    let d = T::c(sigma_diag.len() as f64);
    let log_det = sigma_diag.iter().fold(T::zero(), |acc, &s| acc + s.ln());
    gamma - T::c(0.5) * (d * (T::c(2.0) * T::PI()).ln() + log_det)
}

/// `1/2 (a - mu)^T Sigma^-1 (a - mu)` for diagonal `Sigma`.
pub fn constraint_value<T: Scalar>(a: &[T], mu: &[T], sigma_diag: &[T]) -> T {
    a.iter()
        .zip(mu)
        .zip(sigma_diag)
        .fold(T::zero(), |acc, ((&x, &m), &s)| {
            let r = x - m;
            acc + r * r / s
        })
        * T::c(0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionStatus {
    /// Candidate already feasible; returned unchanged.
    Inactive,
    /// Boundary solution found to tolerance.
    Converged,
    /// Non-positive budget; the mean is returned.
    Degenerate,
    /// Iteration cap reached; best iterate returned.
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionInstance<T> {
    pub candidate: Vec<T>,
    pub mask: Mask,
    pub mu: Vec<T>,
    pub sigma_diag: Vec<T>,
    pub gamma_prime: T,
}

impl<T: Scalar> ProjectionInstance<T> {
    pub fn validate(&self) -> Result<()> {
        let d = self.candidate.len();
        check_len("projection mask", d, self.mask.len())?;
        check_len("projection mean", d, self.mu.len())?;
        check_len("projection variance", d, self.sigma_diag.len())?;
        if let Some(index) = self.sigma_diag.iter().position(|&s| !(s > T::zero())) {
            return Err(Error::NonPositiveVariance { index });
        }
        Ok(())
    }

    /// Keyframe targets: the candidate's known entries.
    pub fn targets(&self) -> Vec<(usize, T)> {
        self.mask.known_indices().map(|k| (k, self.candidate[k])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub a: Vec<T>,
    /// Multiplier of the (first-stage) constraint; `None` means `+inf`.
    pub lambda: Option<T>,
    /// Multiplier of the second stage in keyframe-priority mode.
    pub lambda_residual: Option<T>,
    pub status: ProjectionStatus,
    pub iterations: usize,
    /// `|g(lambda) - gamma'|` at the returned iterate.
    pub residual: T,
}

struct DualSolution<T> {
    lambda: T,
    status: ProjectionStatus,
    iterations: usize,
    residual: T,
}

/// Scalar-dual solve of the projection restricted to `idx`.
///
/// Writes the solution into `out[idx]`.
fn solve_restricted<T: Scalar>(
    c: &[T],
    mu: &[T],
    sigma: &[T],
    idx: &[usize],
    budget: T,
    out: &mut [T],
) -> DualSolution<T> {
    let two = T::c(2.0);
    let g = |lambda: T| -> (T, T) {
        // g(lambda) and g'(lambda)
        idx.iter().fold((T::zero(), T::zero()), |(v, dv), &k| {
            let s2 = two * sigma[k];
            let r = c[k] - mu[k];
            let q = s2 + lambda;
            let t = s2 * r / q;
            (v + T::c(0.5) * t * t / sigma[k], dv - two * sigma[k] * r * r * two / (q * q * q))
        })
    };
    let write = |lambda: T, out: &mut [T]| {
        for &k in idx {
            let s2 = two * sigma[k];
            out[k] = (s2 * c[k] + lambda * mu[k]) / (s2 + lambda);
        }
    };

    if !(budget > T::zero()) {
        for &k in idx {
            out[k] = mu[k];
        }
        return DualSolution {
            lambda: T::infinity(),
            status: ProjectionStatus::Degenerate,
            iterations: 0,
            residual: T::zero(),
        };
    }
    let (g0, _) = g(T::zero());
    if g0 <= budget {
        for &k in idx {
            out[k] = c[k];
        }
        return DualSolution {
            lambda: T::zero(),
            status: ProjectionStatus::Inactive,
            iterations: 0,
            residual: T::zero(),
        };
    }

    let tol = T::c(DUAL_TOLERANCE).max(T::epsilon() * T::c(64.0) * budget);
    let mut iterations = 0;

    // Geometric expansion of the upper bracket; g decreases to 0 as lambda grows.
    let scale = idx
        .iter()
        .fold(T::zero(), |m, &k| m.max(two * sigma[k]));
    let mut lo = T::zero();
    let mut hi = scale.max(T::min_positive_value());
    while g(hi).0 > budget && iterations < MAX_DUAL_ITERATIONS {
        lo = hi;
        hi = hi * two;
        iterations += 1;
    }

    // Newton on 1/sqrt(g) - 1/sqrt(budget), which is close to linear in
    // lambda, safeguarded by bisection on [lo, hi].
    let target = budget.sqrt().recip();
    let mut lambda = hi;
    let mut best = (lambda, (g(lambda).0 - budget).abs());
    while iterations < MAX_DUAL_ITERATIONS {
        let (v, dv) = g(lambda);
        let resid = v - budget;
        if resid.abs() < best.1 {
            best = (lambda, resid.abs());
        }
        if resid.abs() <= tol {
            write(lambda, out);
            return DualSolution {
                lambda,
                status: ProjectionStatus::Converged,
                iterations,
                residual: resid.abs(),
            };
        }
        if resid > T::zero() {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let phi = v.sqrt().recip() - target;
        let dphi = -T::c(0.5) * dv / (v * v.sqrt());
        let newton = lambda - phi / dphi;
        lambda = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            lo + (hi - lo) * T::c(0.5)
        };
        iterations += 1;
    }
    write(best.0, out);
    DualSolution {
        lambda: best.0,
        status: ProjectionStatus::MaxIter,
        iterations,
        residual: best.1,
    }
}

/// Projects the candidate into the budget ellipsoid according to `mode`.
pub fn solve_projection<T: Scalar>(
    inst: &ProjectionInstance<T>,
    mode: ProjectionMode,
) -> Result<Projection<T>> {
    inst.validate()?;
    let d = inst.candidate.len();
    let mut a = inst.candidate.clone();
    let lambda_of = |s: &DualSolution<T>| (s.status != ProjectionStatus::Degenerate).then_some(s.lambda);
    match mode {
        ProjectionMode::MergedProjection => {
            let all: Vec<usize> = (0..d).collect();
            let sol = solve_restricted(
                &inst.candidate,
                &inst.mu,
                &inst.sigma_diag,
                &all,
                inst.gamma_prime,
                &mut a,
            );
            Ok(Projection {
                a,
                lambda: lambda_of(&sol),
                lambda_residual: None,
                status: sol.status,
                iterations: sol.iterations,
                residual: sol.residual,
            })
        }
        ProjectionMode::KeyframePriority => {
            let known: Vec<usize> = inst.mask.known_indices().collect();
            let unknown: Vec<usize> = (0..d).filter(|&k| !inst.mask.is_known(k)).collect();
            let first = solve_restricted(
                &inst.candidate,
                &inst.mu,
                &inst.sigma_diag,
                &known,
                inst.gamma_prime,
                &mut a,
            );
            let used = known.iter().fold(T::zero(), |acc, &k| {
                let r = a[k] - inst.mu[k];
                acc + T::c(0.5) * r * r / inst.sigma_diag[k]
            });
            let second = solve_restricted(
                &inst.candidate,
                &inst.mu,
                &inst.sigma_diag,
                &unknown,
                inst.gamma_prime - used,
                &mut a,
            );
            let status = [first.status, second.status]
                .into_iter()
                .max_by_key(|s| match s {
                    ProjectionStatus::Inactive => 0,
                    ProjectionStatus::Converged => 1,
                    ProjectionStatus::Degenerate => 2,
                    ProjectionStatus::MaxIter => 3,
                })
                .unwrap_or(ProjectionStatus::Inactive);
            Ok(Projection {
                a,
                lambda: lambda_of(&first),
                lambda_residual: lambda_of(&second),
                status,
                iterations: first.iterations + second.iterations,
                residual: first.residual.max(second.residual),
            })
        }
    }
}

/// Record of a reverse step where the merged candidate was modified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEvent {
    pub step: usize,
    pub gamma_prime: f64,
    /// `None` when the budget was non-positive (`lambda = +inf`).
    pub lambda: Option<f64>,
    pub status: ProjectionStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedStep<T> {
    pub a: Vec<T>,
    /// `Some` only when the candidate was infeasible.
    pub event: Option<ProjectionEvent>,
}

/// One constrained reverse step: draw the noised known part and the reverse
/// sample, merge them, and project the merge if it violates the budget.
///
/// Random draws happen in the same order as the vanilla step, so a feasible
/// candidate reproduces the vanilla output exactly.
#[allow(clippy::too_many_arguments)]
pub fn constrained_inpaint_step<T: Scalar, R: Rng + ?Sized>(
    rp: &ReverseStepParams<T>,
    a0_known: &[T],
    mask: &Mask,
    sched: &NoiseSchedule<T>,
    gamma: T,
    mode: ProjectionMode,
    rng: &mut R,
) -> Result<ConstrainedStep<T>> {
    check_len("known action", rp.dim(), a0_known.len())?;
    let known = sample_known(a0_known, mask, rp.step, sched, rng)?;
    let unknown = reverse_step_sample(rp, rng)?;
    let candidate = mask.merge(&known, &unknown);
    let budget = gamma_prime(gamma, &rp.sigma_diag);
    if budget > T::zero() && constraint_value(&candidate, &rp.mu, &rp.sigma_diag) <= budget {
        return Ok(ConstrainedStep {
            a: candidate,
            event: None,
        });
    }
    let inst = ProjectionInstance {
        candidate,
        mask: mask.clone(),
        mu: rp.mu.clone(),
        sigma_diag: rp.sigma_diag.clone(),
        gamma_prime: budget,
    };
    let proj = solve_projection(&inst, mode)?;
    Ok(ConstrainedStep {
        a: proj.a,
        event: Some(ProjectionEvent {
            step: rp.step,
            gamma_prime: budget.lossy_f64(),
            lambda: proj.lambda.map(Scalar::lossy_f64),
            status: proj.status,
            iterations: proj.iterations,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use crate::inpainting::vanilla_inpaint_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(c: Vec<f64>, known: Vec<bool>, mu: Vec<f64>, s: Vec<f64>, gp: f64) -> ProjectionInstance<f64> {
        ProjectionInstance {
            candidate: c,
            mask: Mask::new(known).unwrap(),
            mu,
            sigma_diag: s,
            gamma_prime: gp,
        }
    }

    #[test]
    fn gamma_prime_unit_normalizer() {
        let s = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((gamma_prime(0.3, &[s]) - 0.3).abs() < 1e-15);
        let two_pi_log = (2.0 * std::f64::consts::PI).ln();
        assert!((gamma_prime(0.3, &[1.0, 1.0]) - (0.3 - two_pi_log)).abs() < 1e-15);
    }

    #[test]
    fn gamma_prime_is_gamma_plus_log_density_at_mode() {
        let sigma = [0.3, 1.7, 0.02, 4.0];
        // log N(mu; mu, Sigma) from the density formula directly
        let dens: f64 = sigma
            .iter()
            .map(|s| 1.0 / (2.0 * std::f64::consts::PI * s).sqrt())
            .product();
        assert!((gamma_prime(1.25, &sigma) - (1.25 + dens.ln())).abs() < 1e-12);
    }

    #[test]
    fn constraint_value_cases() {
        assert_eq!(constraint_value(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 0.5]), 0.0);
        assert_eq!(constraint_value(&[2.0], &[0.0], &[1.0]), 2.0);
        let (a, m, s) = ([0.3, -1.0, 2.0, 0.0], [0.1, 0.2, -0.5, 1.0], [0.5, 2.0, 0.25, 1.5]);
        let mut brute: f64 = 0.0;
        for k in 0..4 {
            brute += (a[k] - m[k]) * (a[k] - m[k]) / s[k];
        }
        assert!((constraint_value::<f64>(&a, &m, &s) - brute / 2.0).abs() < 1e-14);
    }

    #[test]
    fn feasible_candidate_is_returned() {
        let p = solve_projection(
            &inst(vec![0.5, 0.1], vec![true, false], vec![0.0, 0.0], vec![1.0, 1.0], 1.0),
            ProjectionMode::MergedProjection,
        )
        .unwrap();
        assert_eq!(p.a, vec![0.5, 0.1]);
        assert_eq!(p.lambda, Some(0.0));
        assert_eq!(p.status, ProjectionStatus::Inactive);
    }

    #[test]
    fn interval_boundary_in_one_dimension() {
        // |a| <= 2 when 1/2 a^2 <= 2
        let mut i = inst(vec![3.0, 0.0], vec![true, false], vec![0.0, 0.0], vec![1.0, 1.0], 2.0);
        let p = solve_projection(&i, ProjectionMode::MergedProjection).unwrap();
        assert!((p.a[0] - 2.0).abs() < 1e-10);
        assert_eq!(p.a[1], 0.0);
        assert_eq!(p.status, ProjectionStatus::Converged);
        // 2 (a - c) + lambda (a - mu) = 0 -> lambda = 1
        assert!((p.lambda.unwrap() - 1.0).abs() < 1e-9);

        i.gamma_prime = 0.0;
        let p = solve_projection(&i, ProjectionMode::MergedProjection).unwrap();
        assert_eq!(p.status, ProjectionStatus::Degenerate);
        assert_eq!(p.a, vec![0.0, 0.0]);
        assert_eq!(p.lambda, None);
    }

    #[test]
    fn keyframe_priority_spends_budget_on_known_entries_first() {
        // known entry alone needs more than the whole budget
        let i = inst(vec![3.0, 5.0], vec![true, false], vec![0.0, 0.0], vec![1.0, 1.0], 2.0);
        let p = solve_projection(&i, ProjectionMode::KeyframePriority).unwrap();
        assert!((p.a[0] - 2.0).abs() < 1e-10);
        assert!(p.a[1].abs() < 1e-12, "residual budget exhausted: {}", p.a[1]);

        // known entry fits, unknown gets the remainder: 1/2 * 1 used, 1.5 left -> |a1| <= sqrt(3)
        let i = inst(vec![1.0, 5.0], vec![true, false], vec![0.0, 0.0], vec![1.0, 1.0], 2.0);
        let p = solve_projection(&i, ProjectionMode::KeyframePriority).unwrap();
        assert_eq!(p.a[0], 1.0);
        assert!((p.a[1] - 3f64.sqrt()).abs() < 1e-9);
        assert!(constraint_value(&p.a, &[0.0, 0.0], &[1.0, 1.0]) <= 2.0 + 1e-9);
    }

    #[test]
    fn anisotropic_projection_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let d = 4;
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..3.0)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-6.0..6.0)).collect();
            let gp = rng.random_range(0.05..2.0);
            let i = inst(c.clone(), vec![true, false, true, false], mu.clone(), s.clone(), gp);
            let p = solve_projection(&i, ProjectionMode::MergedProjection).unwrap();
            let l = p.lambda.unwrap();
            assert!(l >= 0.0);
            let g = constraint_value(&p.a, &mu, &s);
            assert!(g <= gp + 1e-9);
            assert!((l * (g - gp)).abs() < 1e-8);
            for k in 0..d {
                assert!((2.0 * (p.a[k] - c[k]) + l * (p.a[k] - mu[k]) / s[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn huge_gamma_reproduces_vanilla_bitwise() {
        let sched = NoiseSchedule::<f64>::build(ScheduleKind::Linear, 10, 1e-3, 0.1).unwrap();
        let rp = ReverseStepParams::isotropic(vec![0.2, -0.1, 0.4], sched.reverse_var(6), 6).unwrap();
        let mask = Mask::new(vec![false, true, true]).unwrap();
        let a0 = [0.0, 3.0, -3.0];
        let mut r1 = ChaCha8Rng::seed_from_u64(8);
        let out = constrained_inpaint_step(&rp, &a0, &mask, &sched, 1e6, ProjectionMode::MergedProjection, &mut r1)
            .unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(8);
        let known = sample_known(&a0, &mask, 6, &sched, &mut r2).unwrap();
        let vanilla = vanilla_inpaint_step(&rp, &known, &mask, &mut r2).unwrap();
        assert_eq!(out.a, vanilla);
        assert!(out.event.is_none());
    }

    #[test]
    fn non_positive_budget_returns_mean() {
        let sched = NoiseSchedule::<f64>::build(ScheduleKind::Linear, 10, 1e-3, 0.1).unwrap();
        // variance above 1/(2 pi) makes the normalizer negative, so gamma' < 0
        let rp = ReverseStepParams::isotropic(vec![0.2, -0.1], 5.0, 6).unwrap();
        let mask = Mask::new(vec![false, true]).unwrap();
        let out = constrained_inpaint_step(
            &rp,
            &[0.0, 1.0],
            &mask,
            &sched,
            0.0,
            ProjectionMode::MergedProjection,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(out.a, rp.mu);
        assert_eq!(out.event.unwrap().status, ProjectionStatus::Degenerate);
    }

    #[test]
    fn out_of_distribution_keyframe_lands_on_boundary() {
        let sched = NoiseSchedule::<f64>::build(ScheduleKind::Linear, 10, 1e-3, 0.1).unwrap();
        let rp = ReverseStepParams::isotropic(vec![0.0, 0.0], sched.reverse_var(1), 1).unwrap();
        let mask = Mask::new(vec![true, false]).unwrap();
        let key = [4.0, 0.0];
        let out = constrained_inpaint_step(
            &rp,
            &key,
            &mask,
            &sched,
            GAMMA_POSITION,
            ProjectionMode::MergedProjection,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let gp = gamma_prime(GAMMA_POSITION, &rp.sigma_diag);
        let g = constraint_value(&out.a, &rp.mu, &rp.sigma_diag);
        assert!((g - gp).abs() < 1e-9);
        assert!((out.a[0] - key[0]).abs() < (rp.mu[0] - key[0]).abs());
    }

    #[test]
    fn schedule_gamma_lookup() {
        let mut cs = ConstraintSchedule::constant(0.01);
        assert_eq!(cs.gamma_at(3, 4), 0.01);
        cs.interpretation = GammaInterpretation::PerDim;
        assert_eq!(cs.gamma_at(3, 4), 0.04);
        cs.gamma = GammaSpec::PerStep(vec![1.0, 2.0, 3.0]);
        cs.interpretation = GammaInterpretation::Total;
        assert_eq!(cs.gamma_at(2, 4), 2.0);
        assert!(cs.validate(4).is_err());
        cs.window = Some(StepWindow { lo: 1, hi: 2 });
        assert!(cs.applies_at(2) && !cs.applies_at(3));
        let text = serde_json::to_string(&ConstraintSchedule::constant(0.5)).unwrap();
        assert_eq!(serde_json::from_str::<ConstraintSchedule>(&text).unwrap(), ConstraintSchedule::constant(0.5));
    }
}
