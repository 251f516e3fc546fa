//! Training a network denoiser on demonstrations drawn from an environment's
//! declared mixture.

use std::sync::Arc;

use rayon::prelude::*;

use disco_core::env::EnvPriorDenoiser;
use disco_core::mlp::{train, write_checkpoint, Demonstration, MlpArch, TrainLog};
use disco_core::runtime::{episode_rng, run_episode, RunSettings};
use disco_core::{Method, MlpParams, Observation};

use crate::config::{Experiment, TrainSettings};
use crate::error::{CliError, CliResult};
use crate::runner::write_file;

pub const LOSS_CSV_VERSION: &str = "# disco-train-loss v1";

/// Stream reserved for demonstration episodes, away from task streams.
pub const DEMO_STREAM: u64 = 1 << 40;

const EPISODE_BATCH: u64 = 64;

pub fn arch_for(x: &Experiment, t: &TrainSettings) -> MlpArch {
    MlpArch {
        action_dim: x.env.action_spec().flat_dim(),
        obs_dim: x.env.horizon().obs_len * x.env.state_dim(),
        embed_dim: t.embed_dim,
        hidden: t.hidden.clone(),
        activation: t.activation,
    }
}

/// Observation windows visited by unconditional rollouts of the exact
/// policy, each paired with a fresh draw from the demonstration mixture.
pub fn demonstrations(x: &Experiment, count: usize) -> CliResult<Vec<Demonstration<f64>>> {
    let denoiser = EnvPriorDenoiser::new(Arc::clone(&x.env));
    let settings = RunSettings::new(Method::Unconditional);
    let task = &x.tasks[0].1;
    let h = x.env.horizon();
    let sd = x.env.state_dim();
    let mut windows: Vec<Observation<f64>> = Vec::with_capacity(count);
    let mut next_seed = x.config.seed;
    while windows.len() < count {
        let seeds: Vec<u64> = (next_seed..next_seed + EPISODE_BATCH).collect();
        next_seed += EPISODE_BATCH;
        let records = seeds
            .par_iter()
            .map(|&seed| {
                run_episode(
                    x.env.as_ref(),
                    &denoiser,
                    &x.provider,
                    task,
                    &settings,
                    &x.schedule,
                    seed,
                    DEMO_STREAM,
                )
                .map_err(|e| CliError::from_core(&format!("demonstration seed {seed}"), e))
            })
            .collect::<CliResult<Vec<_>>>()?;
        for r in &records {
            for c in &r.cycles {
                windows.push(Observation::padded(&r.states[..=c.t], h.obs_len, sd));
            }
        }
    }
    windows.truncate(count);
    let mut rng = episode_rng(x.config.seed, DEMO_STREAM + 1);
    windows
        .into_iter()
        .map(|obs| {
            let prior = x
                .env
                .action_prior(&obs)
                .map_err(|e| CliError::from_core("env", e))?;
            Ok(Demonstration {
                x0: prior.sample(&mut rng),
                obs: obs.flatten(),
            })
        })
        .collect()
}

pub struct TrainOutput {
    pub params: MlpParams<f64>,
    pub log: TrainLog,
}

pub fn loss_csv(log: &TrainLog) -> String {
    let mut s = format!("{LOSS_CSV_VERSION}\nepoch,loss\n");
    for (k, l) in log.epoch_losses.iter().enumerate() {
        s.push_str(&format!("{},{l:.9e}\n", k + 1));
    }
    s
}

/// Writes `model.ckpt` and `loss.csv`. On divergence both files hold the
/// last finite state and the error is returned.
pub fn cmd_train(x: &Experiment) -> CliResult<TrainOutput> {
    let t = x
        .config
        .train
        .clone()
        .ok_or_else(|| CliError::config("train", "missing training settings"))?;
    if t.demos == 0 {
        return Err(CliError::config("train.demos", "must be at least 1"));
    }
    let arch = arch_for(x, &t);
    let init = MlpParams::init(arch, t.init_seed).map_err(|e| CliError::from_core("train", e))?;
    let data = demonstrations(x, t.demos)?;
    let outcome = train(init, &data, &x.schedule, &t.optimizer)
        .map_err(|e| CliError::from_core("train.optimizer", e))?;

    let dir = &x.config.out_dir;
    let mut blob = Vec::new();
    write_checkpoint(&outcome.params, Some(&t.optimizer), &mut blob)
        .map_err(|e| CliError::Runtime(format!("checkpoint: {e}")))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let ckpt = dir.join("model.ckpt");
    std::fs::write(&ckpt, blob).map_err(|e| CliError::io(&ckpt, e))?;
    write_file(&dir.join("loss.csv"), &loss_csv(&outcome.log))?;
    match outcome.diverged {
        Some(e) => Err(CliError::Runtime(e.to_string())),
        None => Ok(TrainOutput {
            params: outcome.params,
            log: outcome.log,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, Purpose};

    #[test]
    fn demonstrations_follow_the_observation_windows() {
        let x = ExperimentConfig {
            tasks: vec!["detour_left".into()],
            schedule: disco_core::ScheduleConfig::linear(10, 1e-3, 0.3),
            train: Some(TrainSettings::default()),
            ..Default::default()
        }
        .resolve(Purpose::Train)
        .unwrap();
        let demos = demonstrations(&x, 40).unwrap();
        assert_eq!(demos.len(), 40);
        let (h, sd) = (x.env.horizon(), x.env.state_dim());
        assert!(demos.iter().all(|d| d.obs.len() == h.obs_len * sd));
        assert!(demos.iter().all(|d| d.x0.len() == x.env.action_spec().flat_dim()));
        assert_eq!(demos, demonstrations(&x, 40).unwrap());
    }

    #[test]
    fn loss_csv_is_versioned() {
        let log = TrainLog {
            epoch_losses: vec![1.5, 0.25],
        };
        assert_eq!(loss_csv(&log), format!("{LOSS_CSV_VERSION}\nepoch,loss\n1,1.500000000e0\n2,2.500000000e-1\n"));
    }
}
