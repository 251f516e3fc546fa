//! Command-line surface: a JSON config file overridden by flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use disco_core::{
    ConstraintSchedule, GammaInterpretation, GammaSpec, HorizonConfig, KeyframePlacement, Method, ProjectionMode,
    ScheduleConfig, ScheduleKind,
};

use crate::config::{DenoiserChoice, ExperimentConfig, Purpose, TrainSettings};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "disco", version, about = "Keyframe-conditioned diffusion policy experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network denoiser on demonstrations from the environment's mixture.
    Train(ExperimentArgs),
    /// Run trials and write per-episode JSON-lines plus an aggregate CSV.
    Rollout(ExperimentArgs),
    /// Run DISCO at every budget of the grid on shared seeds.
    SweepGamma(ExperimentArgs),
    /// Summarise rollout CSVs as a markdown table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Rollout CSV files.
    pub inputs: Vec<PathBuf>,
    /// Also write the markdown here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    /// `gmm` or `mlp:<checkpoint>`.
    #[arg(long)]
    pub denoiser: Option<DenoiserChoice>,
    /// unconditional, vanilla or disco.
    #[arg(long)]
    pub method: Option<Method>,
    /// Receding horizon as `obs_len,exec_len,pred_len`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub horizon: Option<Vec<usize>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta_lo: Option<f64>,
    #[arg(long)]
    pub beta_hi: Option<f64>,
    /// Explicit comma-separated betas, replacing the linear schedule.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Constant DISCO budget.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Comma-separated budgets for sweep-gamma.
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    /// merged_projection or keyframe_priority.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ProjectionMode>,
    /// total or per_dim.
    #[arg(long, value_parser = parse_interpretation)]
    pub interpretation: Option<GammaInterpretation>,
    /// tail_broadcast or final_step.
    #[arg(long, value_parser = parse_placement)]
    pub placement: Option<KeyframePlacement>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated task ids.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<String>>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub demos: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

fn snake<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<ProjectionMode, String> {
    snake(s)
}

fn parse_interpretation(s: &str) -> Result<GammaInterpretation, String> {
    snake(s)
}

fn parse_placement(s: &str) -> Result<KeyframePlacement, String> {
    snake(s)
}

impl ExperimentArgs {
    /// Loads the config file (or defaults) and applies the flags.
    pub fn to_config(&self, purpose: Purpose) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.env {
            c.env = v.clone();
        }
        if let Some(v) = &self.env_config {
            c.env_config = Some(v.clone());
        }
        if let Some(v) = &self.denoiser {
            c.denoiser = v.clone();
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(h) = &self.horizon {
            c.horizon = Some(HorizonConfig::new(h[0], h[1], h[2]).map_err(|e| CliError::from_core("horizon", e))?);
        }
        if let Some(b) = &self.betas {
            c.schedule = ScheduleConfig::explicit(b.clone());
        }
        if self.steps.is_some() || self.beta_lo.is_some() || self.beta_hi.is_some() {
            if self.betas.is_some() {
                return Err(CliError::config("schedule", "--betas cannot be combined with --steps/--beta-lo/--beta-hi"));
            }
            c.schedule = ScheduleConfig {
                kind: if c.schedule.betas.is_some() { ScheduleKind::Linear } else { c.schedule.kind },
                n_steps: self.steps.unwrap_or(c.schedule.n_steps),
                beta_lo: self.beta_lo.unwrap_or(c.schedule.beta_lo),
                beta_hi: self.beta_hi.unwrap_or(c.schedule.beta_hi),
                betas: None,
            };
        }
        if self.gamma.is_some() || self.mode.is_some() || self.interpretation.is_some() {
            let mut cs = c
                .constraint
                .clone()
                .unwrap_or_else(|| ConstraintSchedule::constant(disco_core::constrained::GAMMA_POSITION));
            if let Some(g) = self.gamma {
                cs.gamma = GammaSpec::Constant(g);
            }
            if let Some(m) = self.mode {
                cs.mode = m;
            }
            if let Some(i) = self.interpretation {
                cs.interpretation = i;
            }
            c.constraint = Some(cs);
        }
        if let Some(v) = &self.gamma_grid {
            c.gamma_grid = v.clone();
        }
        if let Some(v) = self.placement {
            c.placement = v;
        }
        if let Some(v) = self.trials {
            c.trials = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.tasks {
            c.tasks = v.clone();
        }
        if let Some(v) = &self.rules {
            c.rules = Some(v.clone());
        }
        if let Some(v) = &self.out_dir {
            c.out_dir = v.clone();
        }
        let touches_train = self.demos.is_some()
            || self.epochs.is_some()
            || self.learning_rate.is_some()
            || self.batch_size.is_some()
            || self.hidden.is_some();
        if touches_train || (purpose == Purpose::Train && c.train.is_none()) {
            let t = c.train.get_or_insert_with(TrainSettings::default);
            if let Some(v) = self.demos {
                t.demos = v;
            }
            if let Some(v) = self.epochs {
                t.optimizer.epochs = v;
            }
            if let Some(v) = self.learning_rate {
                t.optimizer.learning_rate = v;
            }
            if let Some(v) = self.batch_size {
                t.optimizer.batch_size = v;
            }
            if let Some(v) = &self.hidden {
                t.hidden = v.clone();
            }
        }
        Ok(c)
    }
}

/// Runs a parsed command and returns the text to print on success.
pub fn execute(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Train(a) => {
            let x = a.to_config(Purpose::Train)?.resolve(Purpose::Train)?;
            let out = crate::train::cmd_train(&x)?;
            let last = out.log.epoch_losses.last().copied().unwrap_or(f64::NAN);
            Ok(format!(
                "trained {} parameters for {} epochs, final loss {last:.6e}; wrote {}",
                out.params.n_params(),
                out.log.epoch_losses.len(),
                x.config.out_dir.join("model.ckpt").display()
            ))
        }
        Command::Rollout(a) => {
            let x = a.to_config(Purpose::Rollout)?.resolve(Purpose::Rollout)?;
            let out = crate::runner::cmd_rollout(&x)?;
            Ok(crate::runner::rollout_csv(&out)?)
        }
        Command::SweepGamma(a) => {
            let x = a.to_config(Purpose::Sweep)?.resolve(Purpose::Sweep)?;
            let out = crate::runner::cmd_sweep(&x)?;
            Ok(crate::runner::sweep_csv(&out)?)
        }
        Command::Report(a) => crate::report::cmd_report(&a.inputs, a.out.as_deref()),
    }
}
