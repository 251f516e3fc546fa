//! Batch rollouts and budget sweeps.
//!
//! Episodes run in parallel; results are always re-ordered by task stream and
//! seed before anything is aggregated or written, so outputs do not depend on
//! scheduling.

use std::path::Path;

use rayon::prelude::*;

use disco_core::keyframes::TaskTag;
use disco_core::runtime::{run_episode, EpisodeRecord, RunSettings};
use disco_core::{ConstraintSchedule, Denoiser, GammaSpec, Method};

use crate::config::{Experiment, Job};
use crate::error::{CliError, CliResult};
use crate::stats::{cell, Mean, Rate};
use crate::svg;

pub const ROLLOUT_CSV_VERSION: &str = "# disco-rollout v1";
pub const SWEEP_CSV_VERSION: &str = "# disco-sweep v1";
pub const SWEEP_EPISODES_CSV_VERSION: &str = "# disco-sweep-episodes v1";

pub const ROLLOUT_COLUMNS: [&str; 13] = [
    "method",
    "task",
    "tag",
    "trials",
    "successes",
    "success_rate",
    "success_ci",
    "compliance_n",
    "compliant",
    "compliance_rate",
    "compliance_ci",
    "d_key_mean",
    "d_key_ci",
];

/// Per-task aggregate of a batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSummary {
    pub task: String,
    pub tag: TaskTag,
    pub stream: u64,
    pub success: Rate,
    /// Over episodes whose condition the environment can judge.
    pub compliance: Rate,
    /// Compliant and successful, over the same episodes as `compliance`.
    pub both: Rate,
    pub d_key: Option<Mean>,
    pub seed_lo: u64,
    pub seed_hi: u64,
}

impl TaskSummary {
    pub fn trials(&self) -> usize {
        self.success.n
    }
}

pub fn settings_for(x: &Experiment, method: Method, constraint: Option<ConstraintSchedule>) -> RunSettings {
    let mut s = RunSettings::new(method);
    s.placement = x.config.placement;
    s.constraint = constraint;
    s
}

/// Runs `jobs` in parallel and returns records sorted by `(stream, seed)`.
pub fn run_jobs(
    x: &Experiment,
    denoiser: &dyn Denoiser<f64>,
    settings: &RunSettings,
    jobs: &[Job],
) -> CliResult<Vec<EpisodeRecord>> {
    let mut records = jobs
        .par_iter()
        .map(|j| {
            run_episode(
                x.env.as_ref(),
                denoiser,
                &x.provider,
                &j.task,
                settings,
                &x.schedule,
                j.seed,
                j.stream,
            )
            .map_err(|e| CliError::from_core(&format!("task {} seed {}", j.task.id, j.seed), e))
        })
        .collect::<CliResult<Vec<_>>>()?;
    records.sort_by_key(|r| (r.stream, r.seed));
    Ok(records)
}

/// Groups sorted records by task stream.
pub fn summarize(records: &[EpisodeRecord]) -> Vec<TaskSummary> {
    records
        .chunk_by(|a, b| a.stream == b.stream)
        .map(|group| {
            let judged: Vec<(bool, bool)> = group
                .iter()
                .filter_map(|r| r.metrics.compliance.map(|c| (c, r.metrics.success)))
                .collect();
            let d_key: Vec<f64> = group.iter().filter_map(|r| r.metrics.d_key_mean).collect();
            TaskSummary {
                task: group[0].task.id.clone(),
                tag: group[0].task.tag,
                stream: group[0].stream,
                success: Rate::from_flags(group.iter().map(|r| r.metrics.success)),
                compliance: Rate::from_flags(judged.iter().map(|&(c, _)| c)),
                both: Rate::from_flags(judged.iter().map(|&(c, s)| c && s)),
                d_key: Mean::of(&d_key),
                seed_lo: group.iter().map(|r| r.seed).min().expect("nonempty group"),
                seed_hi: group.iter().map(|r| r.seed).max().expect("nonempty group"),
            }
        })
        .collect()
}

pub struct RolloutOutput {
    pub method: Method,
    pub records: Vec<EpisodeRecord>,
    pub summaries: Vec<TaskSummary>,
}

pub fn run_rollout(x: &Experiment) -> CliResult<RolloutOutput> {
    let denoiser = x.denoiser()?;
    let settings = settings_for(x, x.config.method, x.config.constraint.clone());
    let records = run_jobs(x, denoiser.as_ref(), &settings, &x.jobs())?;
    let summaries = summarize(&records);
    Ok(RolloutOutput {
        method: x.config.method,
        records,
        summaries,
    })
}

fn csv_text(version: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Runtime(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
    Ok(format!("{version}\n{}", String::from_utf8(body).expect("csv output is utf-8")))
}

pub fn rollout_csv(out: &RolloutOutput) -> CliResult<String> {
    let rows = out.summaries.iter().map(|s| {
        vec![
            out.method.to_string(),
            s.task.clone(),
            s.tag.to_string(),
            s.trials().to_string(),
            s.success.hits.to_string(),
            cell(s.success.value()),
            cell(s.success.half_width()),
            s.compliance.n.to_string(),
            s.compliance.hits.to_string(),
            cell(s.compliance.value()),
            cell(s.compliance.half_width()),
            cell(s.d_key.map(|m| m.mean)),
            cell(s.d_key.map(|m| m.half_width())),
        ]
    });
    csv_text(ROLLOUT_CSV_VERSION, &ROLLOUT_COLUMNS, rows)
}

pub fn episodes_jsonl(records: &[EpisodeRecord]) -> CliResult<String> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_json_line().map_err(|e| CliError::Runtime(format!("episode json: {e}")))?);
        text.push('\n');
    }
    Ok(text)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes `rollout.csv` and `episodes.jsonl` under the output directory.
pub fn cmd_rollout(x: &Experiment) -> CliResult<RolloutOutput> {
    let out = run_rollout(x)?;
    let dir = &x.config.out_dir;
    write_file(&dir.join("episodes.jsonl"), &episodes_jsonl(&out.records)?)?;
    write_file(&dir.join("rollout.csv"), &rollout_csv(&out)?)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gamma: f64,
    pub summary: TaskSummary,
}

pub struct SweepOutput {
    /// Ordered by task, then by position in the grid.
    pub points: Vec<SweepPoint>,
    /// `(gamma, record)` for every episode, in the same order.
    pub episodes: Vec<(f64, EpisodeRecord)>,
}

/// Runs the same jobs, and therefore the same rng streams, at every budget.
pub fn run_sweep(x: &Experiment) -> CliResult<SweepOutput> {
    let denoiser = x.denoiser()?;
    let base = x
        .config
        .constraint
        .clone()
        .unwrap_or_else(|| ConstraintSchedule::constant(0.0));
    let jobs = x.jobs();
    let mut per_gamma = Vec::with_capacity(x.config.gamma_grid.len());
    for &g in &x.config.gamma_grid {
        let mut cs = base.clone();
        cs.gamma = GammaSpec::Constant(g);
        let settings = settings_for(x, Method::Disco, Some(cs));
        per_gamma.push((g, run_jobs(x, denoiser.as_ref(), &settings, &jobs)?));
    }
    let mut points = Vec::new();
    let mut episodes = Vec::new();
    for (stream, _) in &x.tasks {
        for (g, records) in &per_gamma {
            let mine: Vec<EpisodeRecord> = records.iter().filter(|r| r.stream == *stream).cloned().collect();
            points.extend(summarize(&mine).into_iter().map(|summary| SweepPoint { gamma: *g, summary }));
            episodes.extend(mine.into_iter().map(|r| (*g, r)));
        }
    }
    Ok(SweepOutput { points, episodes })
}

pub fn gamma_label(g: f64) -> String {
    format!("{g:e}")
}

pub fn sweep_csv(out: &SweepOutput) -> CliResult<String> {
    let header = [
        "gamma",
        "task",
        "tag",
        "trials",
        "seed_lo",
        "seed_hi",
        "stream",
        "success_rate",
        "success_ci",
        "compliance_rate",
        "compliance_ci",
        "both_rate",
        "both_ci",
        "d_key_mean",
        "d_key_ci",
    ];
    let rows = out.points.iter().map(|p| {
        let s = &p.summary;
        vec![
            gamma_label(p.gamma),
            s.task.clone(),
            s.tag.to_string(),
            s.trials().to_string(),
            s.seed_lo.to_string(),
            s.seed_hi.to_string(),
            s.stream.to_string(),
            cell(s.success.value()),
            cell(s.success.half_width()),
            cell(s.compliance.value()),
            cell(s.compliance.half_width()),
            cell(s.both.value()),
            cell(s.both.half_width()),
            cell(s.d_key.map(|m| m.mean)),
            cell(s.d_key.map(|m| m.half_width())),
        ]
    });
    csv_text(SWEEP_CSV_VERSION, &header, rows)
}

pub fn sweep_episodes_csv(out: &SweepOutput) -> CliResult<String> {
    let header = [
        "gamma",
        "task",
        "seed",
        "stream",
        "success",
        "compliance",
        "d_key_mean",
        "min_keyframe_distance",
    ];
    let rows = out.episodes.iter().map(|(g, r)| {
        vec![
            gamma_label(*g),
            r.task.id.clone(),
            r.seed.to_string(),
            r.stream.to_string(),
            r.metrics.success.to_string(),
            r.metrics.compliance.map(|c| c.to_string()).unwrap_or_default(),
            r.metrics.d_key_mean.map(|v| format!("{v:e}")).unwrap_or_default(),
            r.metrics.min_keyframe_distance.map(|v| format!("{v:e}")).unwrap_or_default(),
        ]
    });
    csv_text(SWEEP_EPISODES_CSV_VERSION, &header, rows)
}

/// One line plot per task of compliance and success against `log10 gamma`.
pub fn sweep_plots(out: &SweepOutput) -> Vec<(String, String)> {
    let mut tasks: Vec<&str> = Vec::new();
    for p in &out.points {
        if !tasks.contains(&p.summary.task.as_str()) {
            tasks.push(&p.summary.task);
        }
    }
    tasks
        .into_iter()
        .map(|task| {
            let pts: Vec<&SweepPoint> = out.points.iter().filter(|p| p.summary.task == task).collect();
            let series = svg::Series {
                gammas: pts.iter().map(|p| p.gamma).collect(),
                compliance: pts.iter().map(|p| p.summary.compliance.value()).collect(),
                success: pts.iter().map(|p| p.summary.success.value()).collect(),
            };
            (task.to_string(), svg::sweep_plot(task, &series))
        })
        .collect()
}

/// Writes `sweep.csv`, `sweep_episodes.csv` and one `sweep_<task>.svg` per task.
pub fn cmd_sweep(x: &Experiment) -> CliResult<SweepOutput> {
    let out = run_sweep(x)?;
    let dir = &x.config.out_dir;
    write_file(&dir.join("sweep.csv"), &sweep_csv(&out)?)?;
    write_file(&dir.join("sweep_episodes.csv"), &sweep_episodes_csv(&out)?)?;
    for (task, plot) in sweep_plots(&out) {
        write_file(&dir.join(format!("sweep_{task}.svg")), &plot)?;
    }
    Ok(out)
}
