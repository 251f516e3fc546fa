//! Toy environments whose demonstration law is a declared Gaussian mixture.

pub mod detour2d;
pub mod pose2d;

use std::sync::Arc;

use rand::RngCore;

use crate::diffusion::{ActionSpec, Denoiser, NoiseSchedule, Observation, ReverseStepParams};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::inpainting::HorizonConfig;
use crate::keyframes::{SceneContext, TaskSpec};

pub use detour2d::{Detour2d, Detour2dConfig};
pub use pose2d::{Pose2d, Pose2dConfig};

pub trait Environment: Send + Sync {
    fn id(&self) -> &str;

    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    fn horizon(&self) -> HorizonConfig;

    fn action_spec(&self) -> ActionSpec {
        ActionSpec::new(self.action_dim(), self.horizon().pred_len).expect("environment dimensions are positive")
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Deterministic transition.
    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64>;

    /// Demonstration law of flattened action sequences given the observation.
    fn action_prior(&self, obs: &Observation<f64>) -> Result<GmmModel<f64>>;

    fn scene(&self, state: &[f64]) -> SceneContext;

    /// Task goal reached by the trajectory `states` (initial state first).
    fn is_success(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> bool;

    /// Whether the episode must stop (success or unrecoverable failure).
    fn is_terminal(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> bool;

    /// Whether the trajectory satisfies `condition`; `None` if the
    /// environment does not know the condition.
    fn compliance(&self, states: &[Vec<f64>], actions: &[Vec<f64>], condition: &str) -> Option<bool>;

    /// Distance at which an anchored keyframe counts as reached.
    fn keyframe_tolerance(&self) -> f64;

    /// Environment steps after which the active keyframe is abandoned.
    fn subtask_budget(&self) -> usize;

    /// Environment steps per episode.
    fn step_budget(&self) -> usize;

    fn tasks(&self) -> &[TaskSpec];
}

pub const ENV_IDS: [&str; 2] = [detour2d::ID, pose2d::ID];

/// Environment with its bundled configuration.
pub fn builtin(id: &str) -> Result<Arc<dyn Environment>> {
    match id {
        detour2d::ID => Ok(Arc::new(Detour2d::new(Detour2dConfig::builtin())?)),
        pose2d::ID => Ok(Arc::new(Pose2d::new(Pose2dConfig::builtin())?)),
        other => Err(Error::Config(format!(
            "unknown environment {other:?} (expected one of {ENV_IDS:?})"
        ))),
    }
}

/// Exact denoiser of an environment's demonstration law.
#[derive(Clone)]
pub struct EnvPriorDenoiser {
    env: Arc<dyn Environment>,
}

impl EnvPriorDenoiser {
    pub fn new(env: Arc<dyn Environment>) -> Self {
        Self { env }
    }
}

impl Denoiser<f64> for EnvPriorDenoiser {
    fn action_spec(&self) -> ActionSpec {
        self.env.action_spec()
    }

    fn reverse_params(
        &self,
        x: &[f64],
        step: usize,
        obs: &Observation<f64>,
        sched: &NoiseSchedule<f64>,
    ) -> Result<ReverseStepParams<f64>> {
        self.env.action_prior(obs)?.reverse_params(x, step, sched)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_ids_resolve() {
        for id in ENV_IDS {
            assert_eq!(builtin(id).unwrap().id(), id);
        }
        assert!(matches!(builtin("kitchen"), Err(Error::Config(_))));
    }
}
