//! Full reverse chains with optional keyframe conditioning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constrained::{constrained_inpaint_step, ConstraintSchedule, ProjectionEvent};
use crate::diffusion::{reverse_step_sample, standard_normal_vec, Denoiser, NoiseSchedule, Observation};
use crate::error::{check_len, Result};
use crate::inpainting::{sample_known, vanilla_inpaint_step, Mask};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unconditional,
    Vanilla,
    Disco,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Unconditional => "unconditional",
            Method::Vanilla => "vanilla",
            Method::Disco => "disco",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unconditional" => Ok(Method::Unconditional),
            "vanilla" => Ok(Method::Vanilla),
            "disco" => Ok(Method::Disco),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Guidance<'a, T> {
    Unconditional,
    Vanilla {
        a0_known: &'a [T],
        mask: &'a Mask,
    },
    Constrained {
        a0_known: &'a [T],
        mask: &'a Mask,
        schedule: &'a ConstraintSchedule,
    },
}

/// Per-chain diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    /// Steps whose merged candidate was kept as is.
    pub unchanged_steps: usize,
    /// Steps where the candidate was projected.
    pub projections: Vec<ProjectionEvent>,
}

/// Samples `a_0` from `a_N ~ N(0, I)` applying the guidance rule at every step.
pub fn sample_guided<T: Scalar, R: Rng + ?Sized>(
    denoiser: &dyn Denoiser<T>,
    obs: &Observation<T>,
    sched: &NoiseSchedule<T>,
    guidance: Guidance<'_, T>,
    rng: &mut R,
) -> Result<(Vec<T>, ChainTrace)> {
    let d = denoiser.action_spec().flat_dim();
    if let Guidance::Vanilla { a0_known, mask } | Guidance::Constrained { a0_known, mask, .. } = guidance {
        check_len("known action", d, a0_known.len())?;
        check_len("mask", d, mask.len())?;
    }
    if let Guidance::Constrained { schedule, .. } = guidance {
        schedule.validate(sched.n_steps())?;
    }
    let mut trace = ChainTrace::default();
    let mut x = standard_normal_vec(d, rng);
    for step in (1..=sched.n_steps()).rev() {
        let rp = denoiser.reverse_params(&x, step, obs, sched)?;
        check_len("denoiser output", d, rp.dim())?;
        x = match guidance {
            Guidance::Unconditional => {
                trace.unchanged_steps += 1;
                reverse_step_sample(&rp, rng)?
            }
            Guidance::Constrained {
                a0_known,
                mask,
                schedule,
            } if schedule.applies_at(step) => {
                let gamma = T::c(schedule.gamma_at(step, d));
                let out = constrained_inpaint_step(&rp, a0_known, mask, sched, gamma, schedule.mode, rng)?;
                match out.event {
                    Some(event) => trace.projections.push(event),
                    None => trace.unchanged_steps += 1,
                }
                out.a
            }
            Guidance::Vanilla { a0_known, mask } | Guidance::Constrained { a0_known, mask, .. } => {
                trace.unchanged_steps += 1;
                let known = sample_known(a0_known, mask, step, sched, rng)?;
                vanilla_inpaint_step(&rp, &known, mask, rng)?
            }
        };
    }
    Ok((x, trace))
}
