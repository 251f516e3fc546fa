//! Experiment configuration: a JSON file, then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use disco_core::env::{self, Detour2d, Detour2dConfig, Environment, EnvPriorDenoiser, Pose2d, Pose2dConfig};
use disco_core::keyframes::{RuleFile, ScriptedProvider, TaskSpec};
use disco_core::mlp::{read_checkpoint, Activation, TrainConfig};
use disco_core::{
    ConstraintSchedule, Denoiser, HorizonConfig, KeyframePlacement, Method, MlpDenoiser, NoiseSchedule,
    ScheduleConfig,
};

use crate::error::{CliError, CliResult};

pub const DEFAULT_TRIALS: usize = 50;

/// Where reverse-step Gaussians come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DenoiserChoice {
    /// Exact denoiser of the environment's demonstration mixture.
    #[default]
    Gmm,
    /// Trained network loaded from a checkpoint.
    Mlp(PathBuf),
}

impl FromStr for DenoiserChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "gmm" => Ok(DenoiserChoice::Gmm),
            Some(("mlp", path)) if !path.is_empty() => Ok(DenoiserChoice::Mlp(PathBuf::from(path))),
            _ => Err(format!("expected \"gmm\" or \"mlp:<checkpoint>\", got {s:?}")),
        }
    }
}

impl TryFrom<String> for DenoiserChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for DenoiserChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserChoice::Gmm => f.write_str("gmm"),
            DenoiserChoice::Mlp(p) => write!(f, "mlp:{}", p.display()),
        }
    }
}

impl From<DenoiserChoice> for String {
    fn from(d: DenoiserChoice) -> Self {
        d.to_string()
    }
}

/// Network shape and optimiser settings for `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// Number of (observation, action) demonstrations drawn from the mixture.
    pub demos: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
    pub optimizer: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            demos: 20_000,
            embed_dim: 16,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            init_seed: 0,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    /// Replaces the environment's bundled JSON config.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env_config: Option<PathBuf>,
    pub denoiser: DenoiserChoice,
    pub method: Method,
    /// Overrides the environment's receding-horizon windows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<HorizonConfig>,
    pub schedule: ScheduleConfig,
    /// Budget schedule for `disco`; sweeps replace its `gamma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSchedule>,
    pub placement: KeyframePlacement,
    pub gamma_grid: Vec<f64>,
    pub trials: usize,
    /// Trial `i` runs with seed `seed + i`.
    pub seed: u64,
    /// Task ids to run; empty means every task of the environment.
    pub tasks: Vec<String>,
    /// Replaces the bundled keyframe rules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: env::detour2d::ID.to_string(),
            env_config: None,
            denoiser: DenoiserChoice::Gmm,
            method: Method::Disco,
            horizon: None,
            schedule: ScheduleConfig::linear(50, 1e-4, 0.2),
            constraint: None,
            placement: KeyframePlacement::TailBroadcast,
            gamma_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            trials: DEFAULT_TRIALS,
            seed: 0,
            tasks: Vec::new(),
            rules: None,
            out_dir: PathBuf::from("out"),
            train: None,
        }
    }
}

/// Which command the config is checked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Rollout,
    Sweep,
    Train,
}

/// One episode to run: a task, a seed and the rng stream shared by every
/// method and budget that runs the same trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub task: TaskSpec,
    pub seed: u64,
    pub stream: u64,
}

/// Everything a command needs, resolved and validated.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: Arc<dyn Environment>,
    pub schedule: NoiseSchedule<f64>,
    pub provider: ScriptedProvider,
    /// Selected tasks paired with their index in the environment's task list.
    pub tasks: Vec<(u64, TaskSpec)>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(if path == "." { "config" } else { &path }, e.into_inner())
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validates the config and builds the environment, schedule and provider.
    pub fn resolve(&self, purpose: Purpose) -> CliResult<Experiment> {
        if self.trials == 0 {
            return Err(CliError::config("trials", "must be at least 1"));
        }
        if purpose == Purpose::Sweep {
            if self.gamma_grid.is_empty() {
                return Err(CliError::config("gamma_grid", "must be nonempty for a sweep"));
            }
            for (k, g) in self.gamma_grid.iter().enumerate() {
                if !(g.is_finite() && *g > 0.0) {
                    return Err(CliError::config(&format!("gamma_grid[{k}]"), format!("{g} is not a positive number")));
                }
            }
        }
        if purpose == Purpose::Train && self.train.is_none() {
            return Err(CliError::config("train", "missing training settings"));
        }
        let env = self.build_env()?;
        let schedule = self
            .schedule
            .build::<f64>()
            .map_err(|e| CliError::from_core("schedule", e))?;
        if let Some(cs) = &self.constraint {
            cs.validate(schedule.n_steps())
                .map_err(|e| CliError::from_core("constraint", e))?;
        }
        let provider = match &self.rules {
            None => ScriptedProvider::builtin(),
            Some(p) => ScriptedProvider::new(RuleFile::load(p).map_err(|e| CliError::from_core("rules", e))?),
        };
        let tasks = self.select_tasks(env.as_ref())?;
        Ok(Experiment {
            config: self.clone(),
            env,
            schedule,
            provider,
            tasks,
        })
    }

    fn build_env(&self) -> CliResult<Arc<dyn Environment>> {
        let core = |e| CliError::from_core("env_config", e);
        match self.env.as_str() {
            env::detour2d::ID => {
                let mut cfg = match &self.env_config {
                    Some(p) => Detour2dConfig::load(p).map_err(core)?,
                    None => Detour2dConfig::builtin(),
                };
                if let Some(h) = self.horizon {
                    cfg.horizon = h;
                }
                let e = Detour2d::new(cfg).map_err(|e| {
                    CliError::from_core(if self.horizon.is_some() { "horizon" } else { "env_config" }, e)
                })?;
                Ok(Arc::new(e))
            }
            env::pose2d::ID => {
                if self.horizon.is_some_and(|h| !h.is_single_shot()) {
                    return Err(CliError::config("horizon", "pose2d only supports the single-shot horizon"));
                }
                let cfg = match &self.env_config {
                    Some(p) => Pose2dConfig::load(p).map_err(core)?,
                    None => Pose2dConfig::builtin(),
                };
                Ok(Arc::new(Pose2d::new(cfg).map_err(core)?))
            }
            other => Err(CliError::config(
                "env",
                format!("unknown environment {other:?} (expected one of {:?})", env::ENV_IDS),
            )),
        }
    }

    fn select_tasks(&self, env: &dyn Environment) -> CliResult<Vec<(u64, TaskSpec)>> {
        let all = env.tasks();
        if self.tasks.is_empty() {
            return Ok(all.iter().cloned().enumerate().map(|(k, t)| (k as u64, t)).collect());
        }
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, id)| {
                all.iter()
                    .position(|t| &t.id == id)
                    .map(|k| (k as u64, all[k].clone()))
                    .ok_or_else(|| CliError::config(&format!("tasks[{i}]"), format!("no task {id:?} in {}", env.id())))
            })
            .collect()
    }
}

impl Experiment {
    /// Trials of every selected task, ordered by task then seed.
    pub fn jobs(&self) -> Vec<Job> {
        self.tasks
            .iter()
            .flat_map(|(stream, task)| {
                (0..self.config.trials as u64).map(move |i| Job {
                    task: task.clone(),
                    seed: self.config.seed + i,
                    stream: *stream,
                })
            })
            .collect()
    }

    pub fn denoiser(&self) -> CliResult<Box<dyn Denoiser<f64>>> {
        match &self.config.denoiser {
            DenoiserChoice::Gmm => Ok(Box::new(EnvPriorDenoiser::new(Arc::clone(&self.env)))),
            DenoiserChoice::Mlp(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| CliError::config("denoiser", format!("{}: {e}", path.display())))?;
                let (params, _) = read_checkpoint::<f64, _>(std::io::BufReader::new(file))
                    .map_err(|e| CliError::from_core("denoiser", e))?;
                let obs_dim = self.env.horizon().obs_len * self.env.state_dim();
                if params.arch.obs_dim != 0 && params.arch.obs_dim != obs_dim {
                    return Err(CliError::config(
                        "denoiser",
                        format!("checkpoint expects {} observation values, environment gives {obs_dim}", params.arch.obs_dim),
                    ));
                }
                let d = MlpDenoiser::new(params, self.env.action_spec()).map_err(|e| CliError::from_core("denoiser", e))?;
                Ok(Box::new(d))
            }
        }
    }
}
