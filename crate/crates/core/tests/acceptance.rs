//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion's PASS or FAIL line is always printed; exits non-zero if any
//! criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfalign::alignment::{
    align_step, loss, loss_gradient, mh_fit, pref_prob, AlignConfig, AlignInput, BoltzmannModel,
    McmcConfig, PairSource, PreferenceDataset, PreferencePair, TrustRegion, UpdateKind,
};
use selfalign::envkit::{rollout, Env, TaskId, Trajectory};
use selfalign::harness::{run, summarize_runs, ExperimentConfig, Method, RunArtifacts, Summary};
use selfalign::oracle::{Oracle, ScriptedOracle};
use selfalign::replay::{
    sample_feedback_trajectories, ReplayBuffer, Relabeler, RewardHistogram, FEEDBACK_ROLLOUTS,
    HISTOGRAM_BINS,
};
use selfalign::reward::{builtin, parse_template, Feature, RewardFeatures, RewardTemplate, TemplateVariant};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, outcome: Outcome) -> Outcome {
    let outcome = outcome.map(|d| format!("{d}; {:.2}s", elapsed.as_secs_f64()));
    match outcome {
        Ok(d) if elapsed > limit => Err(format!("{d} exceeds {}s", limit.as_secs())),
        other => other,
    }
}

fn synthetic(task: TaskId, steps: Vec<RewardFeatures>) -> Trajectory {
    let mut features = vec![steps[0]];
    features.extend(steps);
    Trajectory {
        task,
        episode: None,
        observations: Vec::new(),
        actions: Vec::new(),
        features,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn criterion_1() -> Outcome {
    let model = BoltzmannModel::new(0.9).unwrap();
    let p = model.prob(1.0, 0.0);
    let want = sigmoid(0.9);
    if (p - want).abs() > 1e-9 || (p - 0.710_949_5).abs() > 1e-7 {
        return Err(format!("P = {p}, expected {want}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let template = parse_template(
        "name = \"lin\"\n[params]\nw = 1.0\n[ranges]\nw = [0.0, 10.0]\n[[terms]]\nkind = \"weighted-distance\"\nfeature = \"distance_to_target\"\nparam = \"w\"\nsign = \"+\"\n",
    )
    .unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = rng.gen_range(0.0..20.0);
        let b = rng.gen_range(0.0..20.0);
        let ta = synthetic(TaskId::Touch, vec![RewardFeatures::new().with(Feature::DistanceToTarget, a)]);
        let tb = synthetic(TaskId::Touch, vec![RewardFeatures::new().with(Feature::DistanceToTarget, b)]);
        let s = pref_prob(&model, &template, &ta, &tb) + pref_prob(&model, &template, &tb, &ta);
        worst = worst.max((s - 1.0).abs());
    }
    check(worst <= 1e-12, format!("P(ΔS=1) = {p:.12}, max |P(i,j)+P(j,i)-1| = {worst:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = BoltzmannModel::default();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..100 {
        let t = builtin(TaskId::Push, TemplateVariant::Proposed)
            .set_params([
                ("reach_weight", rng.gen_range(0.1..20.0)),
                ("push_weight", rng.gen_range(0.1..20.0)),
                ("collision_penalty", rng.gen_range(-20.0..-0.1)),
            ])
            .unwrap();
        let n = rng.gen_range(4..12);
        let trajs: Vec<Trajectory> = (0..n)
            .map(|_| {
                let steps = (0..5)
                    .map(|_| {
                        RewardFeatures::new()
                            .with(Feature::DistanceToTarget, rng.gen_range(0.0..0.3))
                            .with(Feature::DistanceToGoal, rng.gen_range(0.0..0.3))
                            .with(Feature::CollisionDetected, f64::from(rng.gen_bool(0.2)))
                    })
                    .collect();
                synthetic(TaskId::Push, steps)
            })
            .collect();
        let data = PreferenceDataset {
            pairs: (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j && rng.gen_bool(0.3))
                .map(|(better, worse)| PreferencePair {
                    better,
                    worse,
                    source: PairSource::Discrepancy,
                })
                .collect(),
        };
        if data.is_empty() {
            continue;
        }
        let names: Vec<String> = t.param_names().map(String::from).collect();
        for (k, g) in loss_gradient(&model, &t, &trajs, &data).unwrap() {
            let v = t.values()[k];
            let h = 1e-6 * v.abs().max(1.0);
            let at = |x: f64| {
                let moved = t.set_params([(names[k].as_str(), x)]).unwrap();
                loss(&model, &moved, &trajs, &data).unwrap()
            };
            let fd = (at(v + h) - at(v - h)) / (2.0 * h);
            let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    check(
        worst < 1e-5,
        format!("{checked} weight gradients, max relative error {worst:.2e}"),
    )
}

fn two_feature_template(w: [f64; 2]) -> RewardTemplate {
    parse_template(&format!(
        "name = \"two\"\n[params]\na = {:?}\nb = {:?}\n[ranges]\na = [0.0, 20.0]\nb = [0.0, 20.0]\n\
         [[terms]]\nkind = \"weighted-distance\"\nfeature = \"distance_to_target\"\nparam = \"a\"\nsign = \"+\"\n\
         [[terms]]\nkind = \"weighted-distance\"\nfeature = \"distance_to_goal\"\nparam = \"b\"\nsign = \"+\"\n",
        w[0], w[1]
    ))
    .unwrap()
}

fn xy_traj(x: f64, y: f64) -> Trajectory {
    synthetic(
        TaskId::Push,
        vec![RewardFeatures::new()
            .with(Feature::DistanceToTarget, x)
            .with(Feature::DistanceToGoal, y)],
    )
}

/// 200 pairs at fixed feature gaps. Within each gap the share of pairs
/// labeled forward is the model probability at `theta` rounded to the
/// nearest count, a stratified draw from the Boltzmann model.
fn generate_pairs(theta: [f64; 2], gaps: &[(f64, f64)]) -> (Vec<Trajectory>, PreferenceDataset) {
    let model = BoltzmannModel::default();
    let per_gap = 200 / gaps.len();
    let mut trajs = Vec::new();
    let mut pairs = Vec::new();
    for &(dx, dy) in gaps {
        let p = model.prob(theta[0] * dx + theta[1] * dy, 0.0);
        let forward = (per_gap as f64 * p).round() as usize;
        for k in 0..per_gap {
            let i = trajs.len();
            trajs.push(xy_traj(3.0 + dx, 3.0 + dy));
            trajs.push(xy_traj(3.0, 3.0));
            let (better, worse) = if k < forward { (i, i + 1) } else { (i + 1, i) };
            pairs.push(PreferencePair {
                better,
                worse,
                source: PairSource::Discrepancy,
            });
        }
    }
    (trajs, PreferenceDataset { pairs })
}

/// Posterior mean under a uniform prior on `region`, by exhaustive grid.
fn grid_posterior_mean(
    template: &RewardTemplate,
    trajs: &[Trajectory],
    data: &PreferenceDataset,
    region: &TrustRegion,
    points: usize,
) -> Vec<f64> {
    let model = BoltzmannModel::default();
    let dim = region.bounds.len();
    let axis = |d: usize, i: usize| {
        let (lo, hi) = region.bounds[d];
        lo + (hi - lo) * (i as f64 + 0.5) / points as f64
    };
    let total = points.pow(dim as u32);
    let mut cells = Vec::with_capacity(total);
    for flat in 0..total {
        let theta: Vec<f64> = (0..dim).map(|d| axis(d, flat / points.pow(d as u32) % points)).collect();
        let l = loss(&model, &template.with_values(&theta).unwrap(), trajs, data).unwrap();
        cells.push((theta, l));
    }
    let min = cells.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let mut mean = vec![0.0; dim];
    let mut z = 0.0;
    for (theta, l) in &cells {
        let w = (min - l).exp();
        z += w;
        for d in 0..dim {
            mean[d] += w * theta[d];
        }
    }
    mean.iter().map(|m| m / z).collect()
}

fn criterion_3() -> Outcome {
    let model = BoltzmannModel::default();
    let mut details = Vec::new();
    let mut ok = true;

    let theta = 2.0;
    let gaps: Vec<(f64, f64)> = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]
        .iter()
        .map(|&g| (g, 0.0))
        .collect();
    let (trajs, data) = generate_pairs([theta, 0.0], &gaps);
    let one = parse_template(
        "name = \"one\"\n[params]\na = 1.4\n[ranges]\na = [0.0, 20.0]\n[[terms]]\nkind = \"weighted-distance\"\nfeature = \"distance_to_target\"\nparam = \"a\"\nsign = \"+\"\n",
    )
    .unwrap();
    let region = TrustRegion::new(&one, 3.0);
    let fit = mh_fit(&one.compile(), &trajs, &data, &region, &one.values(), &model, &McmcConfig::default(), 31);
    let grid = grid_posterior_mean(&one, &trajs, &data, &region, 4001);
    let est = fit.estimate[0];
    ok &= (est - theta).abs() < 0.1 * theta && (est - grid[0]).abs() < 0.05 * grid[0];
    details.push(format!("1-param θ*=2: MH {est:.3}, grid {:.3}", grid[0]));

    let theta = [2.0, 1.0];
    let mut gaps = Vec::new();
    for dx in [-1.0f64, -0.5, 0.5, 1.0, 1.5] {
        for dy in [-1.0, 1.0] {
            gaps.push((dx, dy * (1.0 + dx.abs())));
        }
    }
    let (trajs, data) = generate_pairs(theta, &gaps);
    let two = two_feature_template([1.5, 1.5]);
    let region = TrustRegion::new(&two, 3.0);
    let fit = mh_fit(&two.compile(), &trajs, &data, &region, &two.values(), &model, &McmcConfig::default(), 32);
    let grid = grid_posterior_mean(&two, &trajs, &data, &region, 100);
    for d in 0..2 {
        let est = fit.estimate[d];
        ok &= (est - theta[d]).abs() < 0.1 * theta[d] && (est - grid[d]).abs() < 0.05 * grid[d];
    }
    details.push(format!(
        "2-param θ*=(2, 1): MH ({:.3}, {:.3}), grid ({:.3}, {:.3})",
        fit.estimate[0], fit.estimate[1], grid[0], grid[1]
    ));
    check(ok, details.join("; "))
}

/// Recomputes each trust region from the pre-update values and the global
/// ranges and checks every sample and accepted update against it.
fn criterion_4(runs: &[&RunArtifacts], grid: &[f64]) -> Outcome {
    let mut samples = 0;
    let mut accepted = 0;
    let mut omegas = std::collections::BTreeSet::new();
    for run in runs {
        let template = builtin(run.task, TemplateVariant::Proposed);
        let region = |old: &indexmap::IndexMap<String, f64>, omega: f64| -> Vec<(f64, f64)> {
            old.iter()
                .map(|(k, &v)| {
                    let r = template.range(k).unwrap();
                    (r.min.max(v - omega), r.max.min(v + omega))
                })
                .collect()
        };
        for u in &run.updates {
            let r = &u.report;
            for c in &r.candidates {
                let want = region(&r.old, c.omega);
                if c.region != want {
                    return Err(format!("step {}: region {:?} != {want:?}", u.step, c.region));
                }
                for (i, &(lo, hi)) in want.iter().enumerate() {
                    if c.sample_min[i] < lo || c.sample_max[i] > hi {
                        return Err(format!("step {}: ω={} sample outside [{lo}, {hi}]", u.step, c.omega));
                    }
                }
                omegas.insert(c.omega.to_bits());
                samples += 1;
            }
            if r.accepted && r.kind != UpdateKind::Init {
                let omega = r.omega.unwrap_or_else(|| grid.iter().copied().fold(0.0, f64::max));
                let bounds = region(&r.old, omega);
                let inside = r.new.values().zip(&bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi);
                if !inside {
                    return Err(format!("step {}: accepted {:?} outside ω={omega}", u.step, r.new));
                }
                accepted += 1;
            }
        }
    }
    check(
        samples > 0 && accepted > 0 && omegas.len() == grid.len(),
        format!("{samples} candidate chains and {accepted} accepted updates inside their regions, {} ω values", omegas.len()),
    )
}

fn criterion_5() -> Outcome {
    let row = |d_target: f64, d_goal: f64| {
        Trajectory {
            task: TaskId::Push,
            episode: None,
            observations: Vec::new(),
            actions: Vec::new(),
            features: vec![RewardFeatures::new()
                .with(Feature::DistanceToTarget, d_target)
                .with(Feature::DistanceToGoal, d_goal)
                .with(Feature::CollisionDetected, 0.0)],
        }
    };
    let batch = vec![
        row(0.0235, 0.1833),
        row(0.0257, 0.1401),
        row(0.0232, 0.1538),
        row(0.0266, 0.1531),
        row(0.0234, 0.1258),
    ];
    let r = ScriptedOracle::new().rank_exact(&batch, TaskId::Push).map_err(|e| e.to_string())?;
    let reps = r.representatives();
    check(
        r.successes.is_empty() && reps == vec![4, 1, 0],
        format!("successes {:?}, cluster order {:?}", r.successes, reps),
    )
}

fn random_buffer(task: TaskId, episodes: u64, seed: u64) -> ReplayBuffer {
    let mut env = Env::for_task(task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = env.config().action_bounds;
    let mut buffer = ReplayBuffer::new(100_000);
    for e in 0..episodes {
        let traj = rollout(&mut env, seed * 1000 + e, |_, _| {
            selfalign::envkit::Action::new([0, 1, 2, 3].map(|i| rng.gen_range(-1.0..=1.0) * bounds[i]))
        })
        .unwrap();
        buffer.push_episode(traj).unwrap();
    }
    buffer
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut compared = 0;
    for task in TaskId::ALL {
        let buffer = random_buffer(task, 40, 6);
        let base = builtin(task, TemplateVariant::Proposed);
        for _ in 0..10 {
            let values: Vec<f64> = base
                .params()
                .keys()
                .map(|k| {
                    let r = base.range(k).unwrap();
                    let lo = r.min.max(-50.0);
                    let hi = r.max.min(50.0);
                    rng.gen_range(lo..=hi)
                })
                .collect();
            let t = base.with_values(&values).unwrap();
            let relabeler = Relabeler::new(&t);
            for _ in 0..1000 / (TaskId::ALL.len() * 10) + 1 {
                let entry = buffer.get(rng.gen_range(0..buffer.len())).unwrap();
                let stored = buffer.relabel_with(&entry, &relabeler);
                let direct = t.evaluate(&entry.features);
                if stored.to_bits() != direct.to_bits() {
                    return Err(format!("{task}: {stored:e} != {direct:e}"));
                }
                compared += 1;
            }
        }
    }
    check(compared >= 1000, format!("{compared} entries bit-identical across 10 θ per task"))
}

fn criterion_7() -> Outcome {
    // Returns are -25 d over [-25, 0] in bins 2.5 wide: d = 1.0 and 0.995
    // fall in bin 0, 0.88 in bin 1, 0.33 in bin 6, 0.22 and 0.21 in bin 7,
    // 0.01 and 0.0 in bin 9.
    let template = builtin(TaskId::Touch, TemplateVariant::Proposed);
    let mut buffer = ReplayBuffer::new(100_000);
    let distances = [0.0, 0.01, 0.21, 0.22, 0.33, 0.88, 1.0, 0.995];
    for &d in &distances {
        let f = RewardFeatures::new()
            .with(Feature::DistanceToTarget, d)
            .with(Feature::ForceMagnitude, 0.0)
            .with(Feature::CollisionDetected, 0.0);
        let mut env = Env::for_task(TaskId::Touch);
        let mut traj = rollout(&mut env, 0, |_, _| selfalign::envkit::Action::zero()).unwrap();
        for x in traj.features.iter_mut() {
            *x = f;
        }
        buffer.push_episode(traj).unwrap();
    }
    let hist = RewardHistogram::build(&buffer, &template);
    let occupied = hist.non_empty();
    let mut env = Env::for_task(TaskId::Touch);
    let mut rollouts = 0;
    let mut fresh = |s: u64| {
        rollouts += 1;
        rollout(&mut env, s, |_, _| selfalign::envkit::Action::zero())
    };
    let batch = sample_feedback_trajectories(&buffer, &hist, Some(&mut fresh), FEEDBACK_ROLLOUTS, 7)
        .map_err(|e| e.to_string())?;
    let from_buffer: Vec<u64> = batch.iter().filter_map(|t| t.episode).collect();
    let mut per_bin = [0usize; HISTOGRAM_BINS];
    for id in &from_buffer {
        let bin = hist.bins.iter().position(|b| b.contains(id)).unwrap();
        per_bin[bin] += 1;
    }
    let one_each = per_bin
        .iter()
        .zip(&hist.bins)
        .all(|(&n, b)| n == usize::from(!b.is_empty()));
    check(
        hist.bins.len() == 10 && occupied == 5 && one_each && rollouts == FEEDBACK_ROLLOUTS
            && batch.len() == occupied + FEEDBACK_ROLLOUTS,
        format!("bins {per_bin:?}, {rollouts} fresh rollouts, batch of {}", batch.len()),
    )
}

fn criterion_8(runs: &[&RunArtifacts]) -> Outcome {
    let mut accepted = 0;
    let mut rejected = 0;
    for run in runs {
        let mut current = run.updates[0].report.new.clone();
        for u in &run.updates[1..] {
            let r = &u.report;
            if r.old != current {
                return Err(format!("step {}: update started from {:?}, not {current:?}", u.step, r.old));
            }
            if r.kind == UpdateKind::Bayesian {
                if r.accepted {
                    if r.discrepancy_after >= r.discrepancy_before {
                        return Err(format!(
                            "step {}: accepted with {} -> {}",
                            u.step, r.discrepancy_before, r.discrepancy_after
                        ));
                    }
                    accepted += 1;
                } else {
                    if r.new != r.old {
                        return Err(format!("step {}: rejected update changed θ", u.step));
                    }
                    rejected += 1;
                }
            }
            current = r.new.clone();
        }
        if current != run.final_params {
            return Err(format!("{} seed {}: final parameters differ from the log", run.task, run.seed));
        }
    }
    check(
        accepted > 0,
        format!("{accepted} accepted Bayesian updates all reduced discrepancy, {rejected} rejections left θ unchanged"),
    )
}

fn criterion_9(touch: &Summary, push: &Summary, push_runs: &[&RunArtifacts]) -> Outcome {
    let steps = |s: &Summary, m: Method| s.method(m).and_then(|x| x.median_steps);
    let sa = steps(touch, Method::SelfAlign);
    let fi = steps(touch, Method::FixedInitial);
    let sp = steps(touch, Method::Sparse);
    let fewer = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let touch_ok = fewer(sa, fi) && (sp.is_none() || (fewer(sa, sp) && !fewer(sp, fi)));
    let dist = |m: Method| push.method(m).map_or(f64::INFINITY, |x| x.median_final_distance);
    let push_ok = dist(Method::SelfAlign) < dist(Method::FixedInitial) && dist(Method::SelfAlign) < dist(Method::Sparse);
    let mut weights: Vec<f64> = push_runs.iter().map(|r| r.final_params["push_weight"]).collect();
    weights.sort_by(f64::total_cmp);
    let weight_ok = weights[weights.len() / 2] > 2.0;
    let show = |v: Option<f64>| v.map_or("censored".to_string(), |v| format!("{v:.0}"));
    check(
        touch_ok && push_ok && weight_ok,
        format!(
            "touch median steps to 95%: self-align {}, fixed-initial {}, sparse {}; push median final distance: self-align {:.4}, fixed-initial {:.4}, sparse {:.4}; push_weight medians {:.2} (from 2.0)",
            show(sa),
            show(fi),
            show(sp),
            dist(Method::SelfAlign),
            dist(Method::FixedInitial),
            dist(Method::Sparse),
            weights[weights.len() / 2]
        ),
    )
}

fn criterion_10() -> Outcome {
    let trajs: Vec<Trajectory> = (0..6)
        .map(|i| {
            synthetic(
                TaskId::Grasp,
                vec![RewardFeatures::new()
                    .with(Feature::DistanceToTarget, 0.2 + 0.05 * i as f64)
                    .with(Feature::Contacted, 0.0)
                    .with(Feature::ObjectHeight, 0.025)
                    .with(Feature::CollisionDetected, 0.0)],
            )
        })
        .collect();
    let oracle = ScriptedOracle::new();
    let t = builtin(TaskId::Grasp, TemplateVariant::Proposed);
    let hint = oracle.analyze_failure(&trajs, &t, TaskId::Grasp).map_err(|e| e.to_string())?;
    let input = AlignInput {
        iteration: 1,
        task: TaskId::Grasp,
        template: &t,
        trajs: &trajs,
        seed: 10,
    };
    let config = AlignConfig::default();
    let (next, report) = align_step(&input, &oracle, &config).map_err(|e| e.to_string())?;
    if report.kind != UpdateKind::Tune || report.hint.as_ref() != Some(&hint) {
        return Err(format!("expected one tune update, got {:?}", report.kind));
    }
    let reach = config.grid.iter().copied().fold(0.0, f64::max);
    for (name, &v) in next.params() {
        let old = t.param(name).unwrap();
        let range = t.range(name).unwrap();
        let ok = match hint.0.get(name) {
            Some(&target) => {
                let toward = (v - old) * (target - old) > 0.0;
                toward && (v - old).abs() <= reach
            }
            None => v == old,
        };
        if !ok || !range.contains(v) {
            return Err(format!("{name}: {old} -> {v} with hint {:?}", hint.0.get(name)));
        }
    }
    check(
        next != t,
        format!("one tune update, hint {:?}, new {:?}", hint.0, next.params()),
    )
}

fn experiment(task: TaskId, method: Method, budget: u64, dir: &std::path::Path) -> Vec<RunArtifacts> {
    let mut c = ExperimentConfig {
        task,
        method,
        seeds: 5,
        budget: Some(budget),
        feedback_period: 1000,
        eval_episodes: 20,
        output_dir: dir.to_path_buf(),
        save_feedback: false,
        ..ExperimentConfig::default()
    };
    c.learner.hidden = 64;
    run(&c).unwrap()
}

fn main() -> std::process::ExitCode {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let timed = |limit: u64, f: fn() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        within(start.elapsed(), Duration::from_secs(limit), outcome)
    };
    results.push((1, timed(1, criterion_1)));
    results.push((2, timed(10, criterion_2)));
    results.push((3, timed(60, criterion_3)));
    results.push((5, criterion_5()));
    results.push((6, criterion_6()));
    results.push((7, criterion_7()));
    results.push((10, criterion_10()));

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut touch = Vec::new();
    let mut push = Vec::new();
    for method in Method::ALL {
        touch.extend(experiment(TaskId::Touch, method, 15_000, dir.path()));
        push.extend(experiment(TaskId::Push, method, 30_000, dir.path()));
    }
    let elapsed = start.elapsed();
    let touch_summary = summarize_runs(&touch, 0.95).unwrap();
    let push_summary = summarize_runs(&push, 0.95).unwrap();
    println!("{touch_summary}{push_summary}");
    let aligned: Vec<&RunArtifacts> = touch
        .iter()
        .chain(&push)
        .filter(|r| r.method == Method::SelfAlign)
        .collect();
    let push_aligned: Vec<&RunArtifacts> = push.iter().filter(|r| r.method == Method::SelfAlign).collect();
    results.push((4, criterion_4(&aligned, &AlignConfig::default().grid)));
    results.push((8, criterion_8(&aligned)));
    results.push((
        9,
        within(
            elapsed,
            Duration::from_secs(15 * 60),
            criterion_9(&touch_summary, &push_summary, &push_aligned),
        ),
    ));

    results.sort_by_key(|r| r.0);
    let mut failed = Vec::new();
    for (k, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {k}: PASS ({d})"),
            Err(d) => {
                println!("criterion {k}: FAIL ({d})");
                failed.push(*k);
            }
        }
    }
    if failed.is_empty() {
        std::process::ExitCode::SUCCESS
    } else {
        eprintln!("failed criteria: {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
