//! Point mass that must reach a target behind a disc obstacle.
//!
//! Demonstrations pass the obstacle on either side: the action prior is a
//! two-component mixture over velocity sequences whose means roll a
//! waypoint-following controller forward from the current state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diffusion::Observation;
use crate::env::{dist, norm, Environment};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::inpainting::HorizonConfig;
use crate::keyframes::{ActionMapping, SceneContext, TaskSpec};
use crate::scalar::Scalar;

pub const ID: &str = "detour2d";

const BUILTIN_CONFIG: &str = include_str!("../../configs/detour2d.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detour2dConfig {
    pub dt: f64,
    pub speed: f64,
    pub start: [f64; 2],
    /// Standard deviation of the initial position.
    pub start_jitter: f64,
    pub target: Disc,
    pub obstacle: Disc,
    pub left_waypoint: [f64; 2],
    pub right_waypoint: [f64; 2],
    /// Per-component standard deviation of demonstrated velocities.
    pub mode_std: f64,
    /// Width of the logistic side preference around the obstacle axis.
    pub side_temperature: f64,
    /// Minimum enclosed area for a path to count as passing on a side.
    pub min_side_area: f64,
    pub horizon: HorizonConfig,
    pub keyframe_tolerance: f64,
    pub subtask_budget: usize,
    pub step_budget: usize,
    pub tasks: Vec<TaskSpec>,
}

impl Detour2dConfig {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_CONFIG).expect("bundled detour2d config is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("speed", self.speed),
            ("target.radius", self.target.radius),
            ("obstacle.radius", self.obstacle.radius),
            ("mode_std", self.mode_std),
            ("side_temperature", self.side_temperature),
            ("keyframe_tolerance", self.keyframe_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("detour2d.{name} must be positive")));
            }
        }
        if !(self.start_jitter >= 0.0) || !(self.min_side_area >= 0.0) {
            return Err(Error::Config("detour2d.start_jitter and min_side_area must be non-negative".into()));
        }
        self.horizon.validate()?;
        for t in &self.tasks {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Detour2d {
    cfg: Detour2dConfig,
}

impl Detour2d {
    pub fn new(cfg: Detour2dConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &Detour2dConfig {
        &self.cfg
    }

    /// Demonstrator velocity: head for the side waypoint until level with
    /// it, then for the target; never overshoot the current aim.
    fn demo_velocity(&self, pos: &[f64], waypoint: &[f64; 2]) -> [f64; 2] {
        let aim = if pos[1] < waypoint[1] { waypoint } else { &self.cfg.target.center };
        let delta = [aim[0] - pos[0], aim[1] - pos[1]];
        let len = norm(&delta);
        let reach = self.cfg.speed * self.cfg.dt;
        if len <= reach {
            [delta[0] / self.cfg.dt, delta[1] / self.cfg.dt]
        } else {
            [delta[0] / len * self.cfg.speed, delta[1] / len * self.cfg.speed]
        }
    }

    /// Mean prediction window for one side: the demonstrator rolled out from
    /// `pos`, with the past slots repeating its first action.
    fn mode_mean(&self, pos: &[f64], waypoint: &[f64; 2]) -> Vec<f64> {
        let h = self.cfg.horizon;
        let mut p = [pos[0], pos[1]];
        let mut rollout = Vec::with_capacity(h.pred_len - h.exec_offset());
        for _ in h.exec_offset()..h.pred_len {
            let v = self.demo_velocity(&p, waypoint);
            p = [p[0] + self.cfg.dt * v[0], p[1] + self.cfg.dt * v[1]];
            rollout.push(v);
        }
        let mut mean = Vec::with_capacity(2 * h.pred_len);
        for _ in 0..h.exec_offset() {
            mean.extend(rollout[0]);
        }
        for v in &rollout {
            mean.extend(v);
        }
        mean
    }

    /// Signed area swept around the obstacle centre; negative when the
    /// path passes on the left (clockwise for an upward path).
    pub fn swept_area(&self, states: &[Vec<f64>]) -> f64 {
        let c = self.cfg.obstacle.center;
        states
            .windows(2)
            .map(|w| {
                let (a, b) = ([w[0][0] - c[0], w[0][1] - c[1]], [w[1][0] - c[0], w[1][1] - c[1]]);
                0.5 * (a[0] * b[1] - a[1] * b[0])
            })
            .sum()
    }

    /// First state index inside the obstacle.
    fn contact_index(&self, states: &[Vec<f64>]) -> Option<usize> {
        states
            .iter()
            .position(|s| dist(s, &self.cfg.obstacle.center) < self.cfg.obstacle.radius)
    }

    fn reach_index(&self, states: &[Vec<f64>]) -> Option<usize> {
        states
            .iter()
            .position(|s| dist(s, &self.cfg.target.center) <= self.cfg.target.radius)
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Environment for Detour2d {
    fn id(&self) -> &str {
        ID
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> HorizonConfig {
        self.cfg.horizon
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.cfg
            .start
            .iter()
            .map(|&s| s + self.cfg.start_jitter * f64::standard_normal(rng))
            .collect()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        state.iter().zip(action).map(|(s, a)| s + self.cfg.dt * a).collect()
    }

    fn action_prior(&self, obs: &Observation<f64>) -> Result<GmmModel<f64>> {
        let pos = obs
            .latest()
            .ok_or_else(|| Error::Config("detour2d needs a state observation".into()))?;
        crate::error::check_len("detour2d state", 2, pos.len())?;
        let z = (pos[0] - self.cfg.obstacle.center[0]) / self.cfg.side_temperature;
        let d = 2 * self.cfg.horizon.pred_len;
        let var = vec![self.cfg.mode_std * self.cfg.mode_std; d];
        GmmModel::from_unnormalized(
            vec![logistic(-z), logistic(z)],
            vec![
                self.mode_mean(pos, &self.cfg.left_waypoint),
                self.mode_mean(pos, &self.cfg.right_waypoint),
            ],
            vec![var.clone(), var],
        )
    }

    fn scene(&self, state: &[f64]) -> SceneContext {
        SceneContext {
            env: ID.to_string(),
            state: state.to_vec(),
            points: BTreeMap::from([
                ("left_waypoint".to_string(), self.cfg.left_waypoint.to_vec()),
                ("right_waypoint".to_string(), self.cfg.right_waypoint.to_vec()),
                ("target".to_string(), self.cfg.target.center.to_vec()),
                ("obstacle".to_string(), self.cfg.obstacle.center.to_vec()),
            ]),
            mapping: ActionMapping {
                action_dim: 2,
                speed: self.cfg.speed,
                joint_table: None,
            },
            views: Vec::new(),
        }
    }

    fn is_success(&self, states: &[Vec<f64>], _actions: &[Vec<f64>]) -> bool {
        match (self.reach_index(states), self.contact_index(states)) {
            (Some(r), Some(c)) => r < c,
            (Some(_), None) => true,
            _ => false,
        }
    }

    fn is_terminal(&self, states: &[Vec<f64>], _actions: &[Vec<f64>]) -> bool {
        states.last().is_some_and(|s| {
            dist(s, &self.cfg.target.center) <= self.cfg.target.radius
                || dist(s, &self.cfg.obstacle.center) < self.cfg.obstacle.radius
        })
    }

    fn compliance(&self, states: &[Vec<f64>], _actions: &[Vec<f64>], condition: &str) -> Option<bool> {
        let area = self.swept_area(states);
        match condition {
            "left" => Some(area <= -self.cfg.min_side_area),
            "right" => Some(area >= self.cfg.min_side_area),
            _ => None,
        }
    }

    fn keyframe_tolerance(&self) -> f64 {
        self.cfg.keyframe_tolerance
    }

    fn subtask_budget(&self) -> usize {
        self.cfg.subtask_budget
    }

    fn step_budget(&self) -> usize {
        self.cfg.step_budget
    }

    fn tasks(&self) -> &[TaskSpec] {
        &self.cfg.tasks
    }
}
