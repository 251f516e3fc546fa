//! Single-shot planar grasp pose `(x, y, theta)` on a mug-like object.
//!
//! Demonstrated grasps form a mixture with one mode per graspable region.
//! A pose succeeds when it lies within a Mahalanobis radius of some mode and
//! complies with a condition when it falls in that condition's half-plane.

use std::collections::BTreeMap;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diffusion::Observation;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::inpainting::HorizonConfig;
use crate::keyframes::{ActionMapping, SceneContext, TaskSpec};

pub const ID: &str = "pose2d";

const BUILTIN_CONFIG: &str = include_str!("../../configs/pose2d.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspMode {
    pub name: String,
    pub weight: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Points `p` with `normal . p >= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl HalfPlane {
    pub fn contains(&self, p: &[f64]) -> bool {
        self.normal[0] * p[0] + self.normal[1] * p[1] >= self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2dConfig {
    pub object_center: [f64; 2],
    pub modes: Vec<GraspMode>,
    /// Mahalanobis radius around a mode that still counts as a valid grasp.
    pub success_radius: f64,
    pub regions: BTreeMap<String, HalfPlane>,
    /// Named points offered to keyframe providers.
    pub points: BTreeMap<String, [f64; 2]>,
    pub tasks: Vec<TaskSpec>,
}

impl Pose2dConfig {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_CONFIG).expect("bundled pose2d config is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("pose2d.modes is empty".into()));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::Config("pose2d.success_radius must be positive".into()));
        }
        self.prior()?;
        for t in &self.tasks {
            t.validate()?;
        }
        Ok(())
    }

    fn prior(&self) -> Result<GmmModel<f64>> {
        GmmModel::new(
            self.modes.iter().map(|m| m.weight).collect(),
            self.modes.iter().map(|m| m.mean.to_vec()).collect(),
            self.modes.iter().map(|m| m.std.iter().map(|s| s * s).collect()).collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Pose2d {
    cfg: Pose2dConfig,
    prior: GmmModel<f64>,
}

impl Pose2d {
    pub fn new(cfg: Pose2dConfig) -> Result<Self> {
        cfg.validate()?;
        let prior = cfg.prior()?;
        Ok(Self { cfg, prior })
    }

    pub fn config(&self) -> &Pose2dConfig {
        &self.cfg
    }

    /// Mahalanobis distance of `pose` to each mode.
    pub fn mode_distances(&self, pose: &[f64]) -> Vec<f64> {
        self.cfg
            .modes
            .iter()
            .map(|m| {
                (0..3)
                    .map(|k| ((pose[k] - m.mean[k]) / m.std[k]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Index of the closest mode in Mahalanobis distance.
    pub fn nearest_mode(&self, pose: &[f64]) -> usize {
        let d = self.mode_distances(pose);
        (0..d.len()).fold(0, |best, j| if d[j] < d[best] { j } else { best })
    }

    pub fn is_valid_grasp(&self, pose: &[f64]) -> bool {
        self.mode_distances(pose).iter().any(|&d| d <= self.cfg.success_radius)
    }
}

impl Environment for Pose2d {
    fn id(&self) -> &str {
        ID
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        3
    }

    fn horizon(&self) -> HorizonConfig {
        HorizonConfig::SINGLE_SHOT
    }

    fn initial_state(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.cfg.object_center.to_vec()
    }

    fn step(&self, state: &[f64], _action: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn action_prior(&self, _obs: &Observation<f64>) -> Result<GmmModel<f64>> {
        Ok(self.prior.clone())
    }

    fn scene(&self, state: &[f64]) -> SceneContext {
        SceneContext {
            env: ID.to_string(),
            state: state.to_vec(),
            points: self.cfg.points.iter().map(|(k, v)| (k.clone(), v.to_vec())).collect(),
            mapping: ActionMapping {
                action_dim: 3,
                speed: 0.0,
                joint_table: None,
            },
            views: Vec::new(),
        }
    }

    fn is_success(&self, _states: &[Vec<f64>], actions: &[Vec<f64>]) -> bool {
        actions.last().is_some_and(|a| self.is_valid_grasp(a))
    }

    fn is_terminal(&self, _states: &[Vec<f64>], actions: &[Vec<f64>]) -> bool {
        !actions.is_empty()
    }

    fn compliance(&self, _states: &[Vec<f64>], actions: &[Vec<f64>], condition: &str) -> Option<bool> {
        let region = self.cfg.regions.get(condition)?;
        Some(actions.last().is_some_and(|a| region.contains(a)))
    }

    fn keyframe_tolerance(&self) -> f64 {
        0.0
    }

    fn subtask_budget(&self) -> usize {
        1
    }

    fn step_budget(&self) -> usize {
        1
    }

    fn tasks(&self) -> &[TaskSpec] {
        &self.cfg.tasks
    }
}
