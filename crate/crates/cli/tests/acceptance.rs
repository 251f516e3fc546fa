//! End-to-end acceptance checks, one per criterion, each with its runtime
//! bound. Prints one PASS/FAIL line per criterion and exits non-zero if any
//! fails.
//!
//! Run with `cargo test --release -p disco-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use disco_cli::{run_rollout, run_sweep, ExperimentConfig, Purpose};
use disco_core::env::{self, EnvPriorDenoiser, Environment};
use disco_core::keyframes::{triangulate, CameraModel, KeyPoint, KeyframeProvider, ScriptedProvider};
use disco_core::mlp::{Activation, MlpArch, TrainingExample};
use disco_core::runtime::{episode_rng, run_episode, RunSettings};
use disco_core::{
    broadcast_keyframe, constraint_value, forward_marginal_sample, gamma_prime, keyframe_mask, reverse_step_sample,
    sample_chain, sample_guided, sample_known, solve_projection, ActionSpec, ConstraintSchedule, Denoiser,
    GmmDenoiser, GmmModel, Guidance, Mask, Method, MlpParams, NoiseSchedule, Observation, ProjectionInstance,
    ProjectionMode, ProjectionStatus, ReverseStepParams, ScheduleKind,
};

type Check = Result<String, String>;

const GAMMA_GRID: [f64; 7] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn experiment(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&repo_root().join("configs/experiments").join(name)).expect("bundled experiment config")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn moments(xs: &[Vec<f64>], k: usize) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().map(|x| x[k]).sum::<f64>() / n;
    let v = xs.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Largest |z| of sample mean and variance against a Gaussian with
/// per-coordinate `mean` and `var`.
fn max_z(xs: &[Vec<f64>], mean: &[f64], var: &[f64]) -> f64 {
    let n = xs.len() as f64;
    (0..mean.len())
        .map(|k| {
            let (m, v) = moments(xs, k);
            let zm = (m - mean[k]) / (var[k] / n).sqrt();
            let zv = (v - var[k]) / (var[k] * (2.0 / (n - 1.0)).sqrt());
            zm.abs().max(zv.abs())
        })
        .fold(0.0, f64::max)
}

fn criterion_1() -> Check {
    let sched = NoiseSchedule::<f64>::build(ScheduleKind::Linear, 100, 1e-4, 0.02).map_err(|e| e.to_string())?;
    ensure(sched.alpha_bar(0) == 1.0, || "alpha_bar(0) != 1".into())?;
    for i in 1..=sched.n_steps() {
        ensure(sched.alpha(i) == 1.0 - sched.beta(i), || format!("alpha({i}) != 1 - beta({i})"))?;
        ensure(sched.alpha_bar(i) == sched.alpha_bar(i - 1) * sched.alpha(i), || {
            format!("alpha_bar({i}) breaks the product recursion")
        })?;
    }

    let x0 = [0.7, -1.2];
    let t = 40;
    let n = 100_000;
    let ab = sched.alpha_bar(t);
    let mean: Vec<f64> = x0.iter().map(|x| ab.sqrt() * x).collect();
    let var = vec![1.0 - ab; 2];
    let mut rng = episode_rng(1, 0);
    let composed: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut x = x0.to_vec();
            for i in 1..=t {
                for v in x.iter_mut() {
                    *v = sched.alpha(i).sqrt() * *v + sched.beta(i).sqrt() * normal(&mut rng);
                }
            }
            x
        })
        .collect();
    let direct: Vec<Vec<f64>> = (0..n)
        .map(|_| forward_marginal_sample(&x0, t, &sched, &mut rng).unwrap())
        .collect();
    let (zc, zd) = (max_z(&composed, &mean, &var), max_z(&direct, &mean, &var));
    ensure(zc < 4.0 && zd < 4.0, || format!("composed |z| {zc:.2}, direct |z| {zd:.2} (limit 4)"))?;
    Ok(format!("recursion exact over 100 steps; composed |z| {zc:.2}, direct |z| {zd:.2} at 1e5 draws"))
}

fn chain_samples(den: &dyn Denoiser<f64>, sched: &NoiseSchedule<f64>, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = episode_rng(seed, 0);
    (0..n)
        .map(|_| sample_chain(den, &Observation::empty(), sched, &mut rng).unwrap())
        .collect()
}

fn criterion_2() -> Check {
    let (m, s) = ([0.5, -0.3], [0.25, 0.09]);
    let single = GmmModel::new(vec![1.0], vec![m.to_vec()], vec![s.to_vec()]).map_err(|e| e.to_string())?;
    let sched = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.1).map_err(|e| e.to_string())?;
    let xs = chain_samples(&GmmDenoiser::flat(single), &sched, 100_000, 2);
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..2 {
        let (mk, vk) = moments(&xs, k);
        worst.0 = worst.0.max((mk - m[k]).abs());
        worst.1 = worst.1.max((vk - s[k]).abs());
    }
    ensure(worst.0 < 0.02 && worst.1 < 0.03, || {
        format!("single Gaussian: mean error {:.4} (limit 0.02), variance error {:.4} (limit 0.03)", worst.0, worst.1)
    })?;

    let two = GmmModel::new(
        vec![0.7, 0.3],
        vec![vec![1.0, 1.0], vec![-1.0, -1.0]],
        vec![vec![0.04, 0.04], vec![0.04, 0.04]],
    )
    .map_err(|e| e.to_string())?;
    let mut rng = episode_rng(3, 0);
    let n = 20_000;
    let start = ReverseStepParams::isotropic(vec![0.0; 2], 1.0, sched.n_steps()).unwrap();
    let mut first = 0usize;
    for _ in 0..n {
        let mut x = reverse_step_sample(&start, &mut rng).unwrap();
        for step in (1..=sched.n_steps()).rev() {
            x = two.exact_reverse_sample(&x, step, &sched, &mut rng).unwrap();
        }
        let r = two.responsibilities(&x).unwrap();
        first += usize::from(r[0] > r[1]);
    }
    let occ = first as f64 / n as f64;
    ensure((occ - 0.7).abs() < 0.03, || format!("mode occupancy {occ:.4} vs 0.7 (limit 0.03)"))?;
    Ok(format!(
        "mean error {:.4}, variance error {:.4} at 1e5; occupancy {occ:.4} vs 0.7 at 2e4",
        worst.0, worst.1
    ))
}

fn criterion_3() -> Check {
    let g = GmmModel::new(
        vec![0.5, 0.5],
        vec![vec![-1.0, 1.2], vec![1.0, -1.2]],
        vec![vec![0.5, 0.1], vec![0.5, 0.1]],
    )
    .map_err(|e| e.to_string())?;
    let v = 0.4;
    let cond = g.conditional(&[0], &[v]).map_err(|e| e.to_string())?;
    let sched = NoiseSchedule::build(ScheduleKind::Linear, 100, 1e-4, 0.1).map_err(|e| e.to_string())?;
    let den = GmmDenoiser::new(g, ActionSpec::new(2, 1).unwrap()).map_err(|e| e.to_string())?;
    let mask = Mask::new(vec![true, false]).unwrap();
    let known = [v, 0.0];
    let mut rng = episode_rng(4, 0);
    let n = 20_000;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for _ in 0..n {
        let guidance = Guidance::Vanilla { a0_known: &known, mask: &mask };
        let (x, _) = sample_guided(&den, &Observation::empty(), &sched, guidance, &mut rng).unwrap();
        ensure(x[0] == v, || format!("pinned coordinate drifted to {}", x[0]))?;
        let r = cond.responsibilities(&x[1..]).unwrap();
        let j = usize::from(r[1] > r[0]);
        counts[j] += 1;
        sums[j] += x[1];
    }
    let mut detail = Vec::new();
    let mut ok = true;
    for j in 0..2 {
        let w = counts[j] as f64 / n as f64;
        let mean = sums[j] / counts[j].max(1) as f64;
        let (tw, tm) = (cond.weights()[j], cond.means()[j][0]);
        ok &= (w - tw).abs() < 0.05 && (mean - tm).abs() < 0.05;
        detail.push(format!("component {j}: weight {w:.3} vs {tw:.3}, mean {mean:.3} vs {tm:.3}"));
    }
    let detail = detail.join("; ");
    // Single-pass replacement lets the free coordinate commit to a mode while
    // the pinned one is still buried in noise, so this is expected to miss.
    ensure(ok, || format!("{detail} (limits 0.05)"))?;
    Ok(detail)
}

fn dual_value(c: &[f64], mu: &[f64], s: &[f64], gp: f64, lambda: f64) -> f64 {
    let a: Vec<f64> = (0..c.len())
        .map(|k| (2.0 * s[k] * c[k] + lambda * mu[k]) / (2.0 * s[k] + lambda))
        .collect();
    let obj: f64 = a.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum();
    obj + lambda * (constraint_value(&a, mu, s) - gp)
}

/// Maximises the concave dual by golden-section search over `ln lambda`.
fn dual_oracle(c: &[f64], mu: &[f64], s: &[f64], gp: f64) -> f64 {
    let f = |t: f64| dual_value(c, mu, s, gp, t.exp());
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..300 {
        let (x1, x2) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if f(x1) < f(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    f(0.5 * (lo + hi)).max(dual_value(c, mu, s, gp, 0.0))
}

fn criterion_4() -> Check {
    let mut rng = episode_rng(5, 0);
    let (mut worst_obj, mut worst_stat, mut worst_cs) = (0.0f64, 0.0f64, 0.0f64);
    let mut active = 0;
    for case in 0..1000 {
        let d = rng.random_range(1..=4);
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
        let gp = rng.random_range(0.01..3.0);
        let mut bits: Vec<bool> = (0..d).map(|_| rng.random_bool(0.5)).collect();
        bits[rng.random_range(0..d)] = false;
        let mask = Mask::new(bits).unwrap();
        let inst = ProjectionInstance {
            candidate: c.clone(),
            mask,
            mu: mu.clone(),
            sigma_diag: s.clone(),
            gamma_prime: gp,
        };
        let p = solve_projection(&inst, ProjectionMode::MergedProjection).map_err(|e| e.to_string())?;
        if constraint_value(&c, &mu, &s) <= gp {
            ensure(p.status == ProjectionStatus::Inactive && p.a == c, || format!("case {case}: feasible candidate moved"))?;
            continue;
        }
        active += 1;
        let lambda = p.lambda.ok_or_else(|| format!("case {case}: no multiplier"))?;
        let obj: f64 = p.a.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum();
        let oracle = dual_oracle(&c, &mu, &s, gp);
        worst_obj = worst_obj.max((obj - oracle).abs() / oracle.abs().max(1e-300));
        for k in 0..d {
            worst_stat = worst_stat.max((2.0 * (p.a[k] - c[k]) + lambda * (p.a[k] - mu[k]) / s[k]).abs());
        }
        worst_cs = worst_cs.max((lambda * (constraint_value(&p.a, &mu, &s) - gp)).abs());
    }
    ensure(worst_obj < 1e-6 && worst_stat < 1e-8 && worst_cs < 1e-8, || {
        format!("objective rel {worst_obj:.2e} (1e-6), stationarity {worst_stat:.2e}, slackness {worst_cs:.2e} (1e-8)")
    })?;

    let boundary = ProjectionInstance {
        candidate: vec![3.0f64],
        mask: Mask::new(vec![false]).unwrap(),
        mu: vec![0.0],
        sigma_diag: vec![1.0],
        gamma_prime: 0.5,
    };
    let p = solve_projection(&boundary, ProjectionMode::MergedProjection).map_err(|e| e.to_string())?;
    ensure((p.a[0] - 1.0).abs() < 1e-12 && (p.lambda.unwrap_or(f64::NAN) - 4.0).abs() < 1e-9, || {
        format!("interval boundary: a = {}, lambda = {:?} (expected 1, 4)", p.a[0], p.lambda)
    })?;
    let inactive = ProjectionInstance {
        candidate: vec![0.1, -0.2],
        mask: Mask::new(vec![true, false]).unwrap(),
        mu: vec![0.0, 0.0],
        sigma_diag: vec![1.0, 1.0],
        gamma_prime: 1.0,
    };
    let p = solve_projection(&inactive, ProjectionMode::MergedProjection).map_err(|e| e.to_string())?;
    ensure(p.a == inactive.candidate && p.status == ProjectionStatus::Inactive && p.lambda == Some(0.0), || {
        format!("inactive example returned {:?} with {:?}", p.a, p.status)
    })?;
    Ok(format!(
        "{active} active of 1000: objective rel {worst_obj:.1e}, stationarity {worst_stat:.1e}, slackness {worst_cs:.1e}; closed forms exact"
    ))
}

struct EnvCase {
    env: Arc<dyn Environment>,
    task: &'static str,
    sched: NoiseSchedule<f64>,
}

fn env_cases() -> Vec<EnvCase> {
    let pose = experiment("pose2d_gamma_sweep.json");
    let detour = experiment("detour2d_seen_unseen.json");
    vec![
        EnvCase {
            env: env::builtin("pose2d").unwrap(),
            task: "handle_beyond_tip",
            sched: pose.schedule.build().unwrap(),
        },
        EnvCase {
            env: env::builtin("detour2d").unwrap(),
            task: "detour_left",
            sched: detour.schedule.build().unwrap(),
        },
    ]
}

fn task_of(case: &EnvCase) -> (u64, disco_core::keyframes::TaskSpec) {
    let k = case.env.tasks().iter().position(|t| t.id == case.task).unwrap();
    (k as u64, case.env.tasks()[k].clone())
}

fn criterion_5() -> Check {
    let provider = ScriptedProvider::builtin();
    let vanilla = RunSettings::new(Method::Vanilla);
    let disco = RunSettings::new(Method::Disco).with_constraint(ConstraintSchedule::constant(1e6));
    let mut compared = 0;
    for case in env_cases() {
        let den = EnvPriorDenoiser::new(Arc::clone(&case.env));
        let (stream, task) = task_of(&case);
        for seed in 0..20 {
            let run = |s: &RunSettings| {
                run_episode(case.env.as_ref(), &den, &provider, &task, s, &case.sched, seed, stream)
                    .and_then(|r| r.to_json_line())
                    .map_err(|e| e.to_string())
            };
            let (a, b) = (run(&vanilla)?, run(&disco)?);
            ensure(a == b, || format!("{} seed {seed}: records differ", case.env.id()))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} episode records byte-identical across pose2d and detour2d"))
}

/// Per reverse step: the merged candidate is projected at every budget of the
/// grid and the masked distance to the injected known values must not grow
/// with the budget. The chain itself advances with the `reference` budget.
fn per_step_violations(case: &EnvCase, seed: u64, reference: f64) -> Result<(usize, usize), String> {
    let provider = ScriptedProvider::builtin();
    let (stream, task) = task_of(case);
    let env = case.env.as_ref();
    let den = EnvPriorDenoiser::new(Arc::clone(&case.env));
    let (h, spec) = (env.horizon(), env.action_spec());
    let mut rng = episode_rng(seed, stream);
    let s0 = env.initial_state(&mut rng);
    let plan = provider.plan(&task, &env.scene(&s0)).map_err(|e| e.to_string())?;
    let kf = &plan.keyframes[0];
    let mask = keyframe_mask(&h, &spec, kf, Default::default()).map_err(|e| e.to_string())?;
    let a0_known = broadcast_keyframe::<f64>(kf, &mask, &spec).map_err(|e| e.to_string())?;
    let obs = Observation::padded(&[s0], h.obs_len, env.state_dim());
    let n = case.sched.n_steps();
    let start = ReverseStepParams::isotropic(vec![0.0; spec.flat_dim()], 1.0, n).unwrap();
    let mut x = reverse_step_sample(&start, &mut rng).unwrap();
    let (mut checks, mut violations) = (0, 0);
    for step in (1..=n).rev() {
        let rp = den.reverse_params(&x, step, &obs, &case.sched).map_err(|e| e.to_string())?;
        let known = sample_known(&a0_known, &mask, step, &case.sched, &mut rng).map_err(|e| e.to_string())?;
        let unknown = reverse_step_sample(&rp, &mut rng).map_err(|e| e.to_string())?;
        let candidate = mask.merge(&known, &unknown);
        let project = |gamma: f64| -> Result<Vec<f64>, String> {
            let gp = gamma_prime(gamma, &rp.sigma_diag);
            if gp > 0.0 && constraint_value(&candidate, &rp.mu, &rp.sigma_diag) <= gp {
                return Ok(candidate.clone());
            }
            let inst = ProjectionInstance {
                candidate: candidate.clone(),
                mask: mask.clone(),
                mu: rp.mu.clone(),
                sigma_diag: rp.sigma_diag.clone(),
                gamma_prime: gp,
            };
            solve_projection(&inst, ProjectionMode::MergedProjection)
                .map(|p| p.a)
                .map_err(|e| e.to_string())
        };
        let d_key: Vec<f64> = GAMMA_GRID
            .iter()
            .map(|&g| project(g).map(|a| mask.masked_sq_distance(&a, &known)))
            .collect::<Result<_, _>>()?;
        for w in d_key.windows(2) {
            checks += 1;
            violations += usize::from(w[1] > w[0] + 1e-9);
        }
        x = project(reference)?;
    }
    Ok((checks, violations))
}

fn criterion_6() -> Check {
    let mut total = (0, 0);
    for case in env_cases() {
        for seed in 0..50 {
            let (c, v) = per_step_violations(&case, seed, 1e-2)?;
            total.0 += c;
            total.1 += v;
        }
    }
    ensure(total.1 == 0, || format!("{} of {} per-step comparisons increased", total.1, total.0))?;

    // Whole-episode D^key is reported for reference: different budgets can
    // send a seed to a different mode, so it is not monotone in general.
    let mut cfg = experiment("pose2d_gamma_sweep.json");
    cfg.trials = 50;
    let out = run_sweep(&cfg.resolve(Purpose::Sweep).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (_, r) in &out.episodes {
        by_seed.entry(r.seed).or_default().push(r.metrics.d_key_mean.unwrap_or(0.0));
    }
    let episode_violations = by_seed
        .values()
        .filter(|v| v.windows(2).any(|w| w[1] > w[0] + 1e-9))
        .count();
    Ok(format!(
        "0 of {} per-step comparisons increased over 50 seeds x 2 environments; whole-episode D^key non-monotone on {episode_violations} of 50 pose2d seeds (informational)",
        total.0
    ))
}

fn criterion_7() -> Check {
    let cfg = experiment("pose2d_gamma_sweep.json");
    let out = run_sweep(&cfg.resolve(Purpose::Sweep).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let comp: Vec<f64> = out.points.iter().map(|p| p.summary.compliance.value().unwrap()).collect();
    let succ: Vec<f64> = out.points.iter().map(|p| p.summary.success.value().unwrap()).collect();
    let both: Vec<f64> = out.points.iter().map(|p| p.summary.both.value().unwrap()).collect();
    let last = both.len() - 1;
    let peak = (0..both.len()).fold(0, |b, k| if both[k] > both[b] { k } else { b });
    let table = format!("compliance {comp:.3?}, success {succ:.3?}, both {both:.3?}");
    // Monte Carlo slack for 200 trials per point.
    let slack = 0.03;
    ensure(comp.windows(2).all(|w| w[1] >= w[0] - slack) && comp[last] - comp[0] > 0.5, || {
        format!("compliance does not increase with gamma: {table}")
    })?;
    ensure(peak > 0 && peak < last, || format!("compliance-and-success peaks at the grid edge: {table}"))?;
    ensure(succ[peak..].windows(2).all(|w| w[1] <= w[0] + slack) && succ[last] < succ[peak] - 0.2, || {
        format!("success does not degrade beyond the peak: {table}")
    })?;
    ensure(both[peak] > both[0] + 0.2 && both[peak] > both[last] + 0.2, || format!("peak is not pronounced: {table}"))?;
    Ok(format!("peak at gamma {:e}; {table}", GAMMA_GRID[peak]))
}

fn criterion_8() -> Check {
    let mut cfg = experiment("detour2d_seen_unseen.json");
    let mut rates = Vec::new();
    for method in [Method::Unconditional, Method::Disco] {
        cfg.method = method;
        let out = run_rollout(&cfg.resolve(Purpose::Rollout).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let c = disco_cli::stats::Rate::pooled(out.summaries.iter().map(|s| s.compliance));
        ensure(c.n == 200, || format!("{method}: {} judged episodes, expected 200", c.n))?;
        rates.push(c.value().unwrap());
    }
    ensure((rates[0] - 0.5).abs() <= 0.1 && rates[1] >= 0.9, || {
        format!("unconditional {:.3} (0.5 +- 0.1), disco {:.3} (>= 0.9)", rates[0], rates[1])
    })?;
    Ok(format!("side compliance over 200 episodes: unconditional {:.3}, disco {:.3}", rates[0], rates[1]))
}

fn criterion_9() -> Check {
    let arch = MlpArch {
        action_dim: 2,
        obs_dim: 1,
        embed_dim: 4,
        hidden: vec![5, 4],
        activation: Activation::Tanh,
    };
    let mut params = MlpParams::<f64>::init(arch, 9).map_err(|e| e.to_string())?;
    let mut rng = episode_rng(9, 0);
    let examples: Vec<TrainingExample<f64>> = (0..8)
        .map(|_| TrainingExample {
            x_noisy: vec![normal(&mut rng), normal(&mut rng)],
            step: rng.random_range(1..=20),
            obs: vec![normal(&mut rng)],
            eps: vec![normal(&mut rng), normal(&mut rng)],
        })
        .collect();
    let (_, grad) = params.loss_and_grad_on(&examples).map_err(|e| e.to_string())?;
    let grad = grad.to_flat();
    let base = params.to_flat();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let k = rng.random_range(0..base.len());
        let h = 1e-5 * base[k].abs().max(1.0);
        let mut loss_at = |v: f64| {
            let mut p = base.clone();
            p[k] = v;
            params.set_flat(&p).unwrap();
            params.loss_and_grad_on(&examples).unwrap().0
        };
        let fd = (loss_at(base[k] + h) - loss_at(base[k] - h)) / (2.0 * h);
        let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e} (limit 1e-4)"))?;
    Ok(format!("max relative error {worst:.2e} over 10 probes"))
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn camera_facing(point: [f64; 3], dir: [f64; 3], dist: f64, aim_offset: [f64; 3]) -> CameraModel {
    let eye = [point[0] + dist * dir[0], point[1] + dist * dir[1], point[2] + dist * dir[2]];
    let target = [point[0] + aim_offset[0], point[1] + aim_offset[1], point[2] + aim_offset[2]];
    let up = if dir[2].abs() > 0.9 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    CameraModel::look_at(eye, target, up, (500.0, 500.0, 320.0, 240.0), (640, 480)).unwrap()
}

fn criterion_10() -> Check {
    let mut rng = episode_rng(10, 0);
    let (mut worst_err, mut worst_res) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let views = rng.random_range(2..=4);
        let mut obs = Vec::new();
        for view in 0..views {
            let dir = unit([normal(&mut rng), normal(&mut rng), normal(&mut rng)]);
            let off = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
            let cam = camera_facing(p, dir, rng.random_range(2.0..6.0), off);
            let (u, v) = cam.project(&p).ok_or_else(|| format!("case {case}: point behind camera"))?;
            obs.push((KeyPoint { view, u, v, confidence: None }, cam));
        }
        let t = triangulate(&obs).map_err(|e| format!("case {case}: {e}"))?;
        let err = (0..3).map(|k| (t.point[k] - p[k]).abs()).fold(0.0, f64::max);
        worst_err = worst_err.max(err);
        worst_res = worst_res.max(t.residual);
    }
    ensure(worst_err < 1e-6 && worst_res < 1e-8, || {
        format!("max point error {worst_err:.2e} (1e-6), max residual {worst_res:.2e} (1e-8)")
    })?;

    let p = [0.2, -0.1, 0.3];
    let dir = unit([0.3, -0.5, 0.8]);
    let near = camera_facing(p, dir, 3.0, [0.0; 3]);
    let far = camera_facing(p, dir, 6.0, [0.0; 3]);
    let key = |view, cam: &CameraModel| {
        let (u, v) = cam.project(&p).unwrap();
        (KeyPoint { view, u, v, confidence: None }, cam.clone())
    };
    ensure(triangulate(&[key(0, &near), key(1, &far)]).is_err(), || "collinear centres accepted".into())?;
    ensure(triangulate(&[key(0, &near), key(1, &near)]).is_err(), || "duplicate camera accepted".into())?;
    ensure(triangulate(&[key(0, &near)]).is_err(), || "single view accepted".into())?;
    Ok(format!("100 instances: max error {worst_err:.1e}, max residual {worst_res:.1e}; parallel rays rejected"))
}

fn run_cli(args: &[&str], threads: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_disco"))
        .args(args)
        .current_dir(repo_root())
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("disco {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn cli_session(root: &Path, threads: &str) -> Result<Vec<Vec<u8>>, String> {
    let p = |s: &str| root.join(s).display().to_string();
    let ckpt = format!("mlp:{}", p("train/model.ckpt"));
    let sessions: Vec<Vec<String>> = vec![
        vec!["train", "--env", "pose2d", "--steps", "10", "--demos", "400", "--epochs", "2", "--hidden", "16", "--seed", "3", "--out-dir", &p("train")],
        vec!["rollout", "--config", "configs/experiments/detour2d_seen_unseen.json", "--trials", "3", "--out-dir", &p("rollout")],
        vec!["rollout", "--env", "pose2d", "--denoiser", &ckpt, "--steps", "10", "--trials", "4", "--out-dir", &p("rollout_mlp")],
        vec!["sweep-gamma", "--config", "configs/experiments/pose2d_gamma_sweep.json", "--trials", "20", "--out-dir", &p("sweep")],
        vec!["report", &p("rollout/rollout.csv"), &p("rollout_mlp/rollout.csv"), "--out", &p("report.md")],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    sessions
        .iter()
        .map(|args| run_cli(&args.iter().map(String::as_str).collect::<Vec<_>>(), threads))
        .collect()
}

fn criterion_11() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out_a = cli_session(a.path(), "4")?;
    let out_b = cli_session(b.path(), "1")?;
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    ensure(fa.keys().eq(fb.keys()), || format!("file sets differ: {:?} vs {:?}", fa.keys(), fb.keys()))?;
    for (path, bytes) in &fa {
        ensure(fb[path] == *bytes, || format!("{} differs between runs", path.display()))?;
    }
    // The report is stdout-only apart from --out; train stdout names the out dir.
    ensure(out_a[1..4] == out_b[1..4], || "rollout/sweep stdout differs between runs".into())?;
    Ok(format!(
        "train, rollout, sweep-gamma and report: {} files byte-identical across two runs (4 vs 1 worker threads)",
        fa.len()
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "schedule and forward-process identities", budget: Duration::from_secs(10), run: criterion_1 },
        Criterion { id: 2, name: "exact-denoiser fidelity", budget: Duration::from_secs(60), run: criterion_2 },
        Criterion { id: 3, name: "vanilla inpainting conditional", budget: Duration::from_secs(60), run: criterion_3 },
        Criterion { id: 4, name: "projection solver", budget: Duration::from_secs(30), run: criterion_4 },
        Criterion { id: 5, name: "large-budget reduction to vanilla", budget: Duration::from_secs(60), run: criterion_5 },
        Criterion { id: 6, name: "gamma monotonicity of D^key", budget: Duration::from_secs(120), run: criterion_6 },
        Criterion { id: 7, name: "pose2d budget sweep shape", budget: Duration::from_secs(300), run: criterion_7 },
        Criterion { id: 8, name: "detour2d unconditional vs DISCO", budget: Duration::from_secs(300), run: criterion_8 },
        Criterion { id: 9, name: "MLP gradient check", budget: Duration::from_secs(10), run: criterion_9 },
        Criterion { id: 10, name: "triangulation round trip", budget: Duration::from_secs(5), run: criterion_10 },
        Criterion { id: 11, name: "CLI determinism", budget: Duration::from_secs(300), run: criterion_11 },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("over the {:?} budget; {detail}", c.budget)),
            other => other,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {tag} [{:.2}s / {}s] {}: {detail}",
            c.id,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            c.name
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
