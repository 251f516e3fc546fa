//! Receding-horizon execution of a keyframe-conditioned diffusion policy.
//!
//! Each cycle samples a `pred_len`-step action sequence from the current
//! observation window and executes prediction indices
//! `[obs_len - 1, obs_len - 1 + exec_len)`, i.e. the first action after the
//! newest observed state. Keyframes are planned once from the initial state
//! unless `refresh_keyframes` is set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constrained::{ConstraintSchedule, GAMMA_JOINT, GAMMA_POSITION, GAMMA_VELOCITY};
use crate::diffusion::{Denoiser, NoiseSchedule, Observation};
use crate::env::{dist, Environment};
use crate::error::{Error, Result};
use crate::guidance::{sample_guided, ChainTrace, Guidance, Method};
use crate::inpainting::{broadcast_keyframe, keyframe_mask, FrameKind, Keyframe, KeyframePlacement};
use crate::keyframes::{KeyframeProvider, TaskSpec};

/// Constant budget used for a keyframe kind when none is configured.
pub fn default_gamma(kind: FrameKind) -> f64 {
    match kind {
        FrameKind::Position => GAMMA_POSITION,
        FrameKind::Velocity => GAMMA_VELOCITY,
        FrameKind::Joint => GAMMA_JOINT,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub method: Method,
    #[serde(default)]
    pub placement: KeyframePlacement,
    /// Budget schedule for `Method::Disco`; `None` picks [`default_gamma`]
    /// of the active keyframe's kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSchedule>,
    /// Overrides the environment's episode step budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_budget: Option<usize>,
    /// Re-plan keyframes from the current state at every cycle.
    #[serde(default)]
    pub refresh_keyframes: bool,
}

impl RunSettings {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            placement: KeyframePlacement::default(),
            constraint: None,
            step_budget: None,
            refresh_keyframes: false,
        }
    }

    pub fn with_constraint(mut self, cs: ConstraintSchedule) -> Self {
        self.constraint = Some(cs);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// Environment step at which the cycle started.
    pub t: usize,
    pub active_keyframe: Option<usize>,
    /// Predicted sequence, one action per row.
    pub prediction: Vec<Vec<f64>>,
    pub executed: usize,
    /// Squared distance between keyframe-masked predicted entries and the
    /// keyframe (computed for every method).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_key: Option<f64>,
    pub trace: ChainTrace,
    /// Set when the active keyframe was abandoned on its step budget.
    #[serde(default)]
    pub forced_advance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compliance: Option<bool>,
    /// Smallest per-cycle `sqrt(d_key)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_keyframe_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_key_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_key_max: Option<f64>,
    pub length: usize,
    pub forced_advances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: TaskSpec,
    pub seed: u64,
    pub stream: u64,
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub keyframes: Vec<Keyframe>,
    pub cycles: Vec<CycleRecord>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub metrics: EpisodeMetrics,
}

impl EpisodeRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Outcome of the sub-task check after one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advance {
    pub index: usize,
    pub forced: bool,
}

/// Next active keyframe: moves on when `state` is within `tolerance` of the
/// active keyframe's anchor or after `budget` steps on it; the last
/// keyframe is kept for the rest of the episode.
pub fn advance_keyframe(
    state: &[f64],
    keyframes: &[Keyframe],
    active: usize,
    steps_on_active: usize,
    tolerance: f64,
    budget: usize,
) -> Advance {
    let stay = Advance {
        index: active,
        forced: false,
    };
    if active + 1 >= keyframes.len() {
        return stay;
    }
    let reached = keyframes[active]
        .anchor
        .as_ref()
        .is_some_and(|a| a.len() <= state.len() && dist(&state[..a.len()], a) <= tolerance);
    if reached {
        Advance {
            index: active + 1,
            forced: false,
        }
    } else if steps_on_active >= budget {
        Advance {
            index: active + 1,
            forced: true,
        }
    } else {
        stay
    }
}

/// Terminal metrics; a pure function of the record and the environment.
pub fn compute_metrics(
    env: &dyn Environment,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    cycles: &[CycleRecord],
    condition: Option<&str>,
) -> EpisodeMetrics {
    let d: Vec<f64> = cycles.iter().filter_map(|c| c.d_key).collect();
    let (mean, max, min) = if d.is_empty() {
        (None, None, None)
    } else {
        (
            Some(d.iter().sum::<f64>() / d.len() as f64),
            Some(d.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Some(d.iter().copied().fold(f64::INFINITY, f64::min).sqrt()),
        )
    };
    EpisodeMetrics {
        success: env.is_success(states, actions),
        compliance: condition.and_then(|c| env.compliance(states, actions, c)),
        min_keyframe_distance: min,
        d_key_mean: mean,
        d_key_max: max,
        length: actions.len(),
        forced_advances: cycles.iter().filter(|c| c.forced_advance).count(),
    }
}

/// Metrics recomputed from a stored record.
pub fn replay_metrics(env: &dyn Environment, record: &EpisodeRecord) -> EpisodeMetrics {
    compute_metrics(
        env,
        &record.states,
        &record.actions,
        &record.cycles,
        record.condition.as_deref(),
    )
}

/// Episode randomness: ChaCha8 seeded with `seed` on stream `stream`.
pub fn episode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    env: &dyn Environment,
    denoiser: &dyn Denoiser<f64>,
    provider: &dyn KeyframeProvider,
    task: &TaskSpec,
    settings: &RunSettings,
    sched: &NoiseSchedule<f64>,
    seed: u64,
    stream: u64,
) -> Result<EpisodeRecord> {
    let h = env.horizon();
    let spec = env.action_spec();
    if denoiser.action_spec() != spec {
        return Err(Error::Config(format!(
            "denoiser action spec {:?} does not match environment {:?} ({:?})",
            denoiser.action_spec(),
            env.id(),
            spec
        )));
    }
    if let Some(cs) = &settings.constraint {
        cs.validate(sched.n_steps())?;
    }
    let mut rng = episode_rng(seed, stream);
    let s0 = env.initial_state(&mut rng);
    let mut plan = provider.plan(task, &env.scene(&s0))?;
    let budget = settings.step_budget.unwrap_or_else(|| env.step_budget());
    let (ad, sd) = (spec.action_dim, env.state_dim());

    let mut states = vec![s0];
    let mut actions: Vec<Vec<f64>> = Vec::new();
    let mut cycles = Vec::new();
    let mut active = 0usize;
    let mut steps_on_active = 0usize;

    while actions.len() < budget && !env.is_terminal(&states, &actions) {
        if settings.refresh_keyframes && !cycles.is_empty() {
            plan = provider.plan(task, &env.scene(states.last().expect("non-empty")))?;
            active = active.min(plan.keyframes.len().saturating_sub(1));
        }
        let obs = Observation::padded(&states, h.obs_len, sd);
        let kf = plan.keyframes.get(active);
        let conditioning = kf
            .map(|kf| -> Result<_> {
                let mask = keyframe_mask(&h, &spec, kf, settings.placement)?;
                let known = broadcast_keyframe::<f64>(kf, &mask, &spec)?;
                Ok((mask, known))
            })
            .transpose()?;
        let default_cs;
        let schedule = match (&settings.constraint, kf) {
            (Some(cs), _) => cs,
            (None, Some(kf)) => {
                default_cs = ConstraintSchedule::constant(default_gamma(kf.kind));
                &default_cs
            }
            (None, None) => {
                default_cs = ConstraintSchedule::constant(GAMMA_POSITION);
                &default_cs
            }
        };
        let guidance = match (&conditioning, settings.method) {
            (None, _) | (_, Method::Unconditional) => Guidance::Unconditional,
            (Some((mask, known)), Method::Vanilla) => Guidance::Vanilla { a0_known: known, mask },
            (Some((mask, known)), Method::Disco) => Guidance::Constrained {
                a0_known: known,
                mask,
                schedule,
            },
        };
        let (pred, trace) = sample_guided(denoiser, &obs, sched, guidance, &mut rng)?;
        let d_key = conditioning.as_ref().map(|(mask, known)| mask.masked_sq_distance(&pred, known));

        let t = actions.len();
        let cycle_active = kf.map(|_| active);
        let mut executed = 0;
        let mut forced_advance = false;
        for j in 0..h.exec_len {
            if actions.len() >= budget || env.is_terminal(&states, &actions) {
                break;
            }
            let idx = h.exec_offset() + j;
            let a = pred[idx * ad..(idx + 1) * ad].to_vec();
            let next = env.step(states.last().expect("non-empty"), &a);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("environment state"));
            }
            actions.push(a);
            states.push(next);
            executed += 1;
            steps_on_active += 1;
            let adv = advance_keyframe(
                states.last().expect("non-empty"),
                &plan.keyframes,
                active,
                steps_on_active,
                env.keyframe_tolerance(),
                env.subtask_budget(),
            );
            if adv.index != active {
                active = adv.index;
                steps_on_active = 0;
                forced_advance |= adv.forced;
            }
        }
        cycles.push(CycleRecord {
            t,
            active_keyframe: cycle_active,
            prediction: pred.chunks(ad).map(<[f64]>::to_vec).collect(),
            executed,
            d_key,
            trace,
            forced_advance,
        });
    }

    let metrics = compute_metrics(env, &states, &actions, &cycles, plan.condition.as_deref());
    Ok(EpisodeRecord {
        task: task.clone(),
        seed,
        stream,
        provider: plan.provider,
        condition: plan.condition,
        keyframes: plan.keyframes,
        cycles,
        states,
        actions,
        metrics,
    })
}
