use std::fs;

use super::*;

fn tiny(task: TaskId, method: Method, dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        task,
        method,
        seeds: 1,
        budget: Some(500),
        feedback_period: 250,
        eval_episodes: 2,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    c.learner.hidden = 8;
    c.learner.exploration_steps = 100;
    c.align.mcmc.chain_length = 200;
    c.align.mcmc.burn_in = 50;
    c
}

fn row(step: u64, success_rate: f64) -> MetricRow {
    MetricRow {
        step,
        episodes: step / 25,
        success_rate,
        neg_final_distance: -0.1,
        mean_return: 0.0,
    }
}

fn fake_run(task: TaskId, method: Method, seed: u64, reach_at: Option<u64>) -> RunArtifacts {
    let metrics: Vec<MetricRow> = (1..=30)
        .map(|k| k * 1000)
        .take_while(|&s| reach_at.map_or(true, |r| s <= r))
        .map(|s| row(s, if Some(s) == reach_at { 1.0 } else { 0.5 }))
        .collect();
    let template = builtin(task, TemplateVariant::Proposed);
    RunArtifacts {
        task,
        method,
        seed,
        termination: if reach_at.is_some() { Termination::Success } else { Termination::Budget },
        steps: metrics.last().unwrap().step,
        metrics,
        final_params: template.params().clone(),
        updates: vec![UpdateRecord {
            step: 0,
            report: UpdateReport::init(&template),
        }],
        dir: PathBuf::new(),
    }
}

#[test]
fn config_validation() {
    let mut c = ExperimentConfig::default();
    assert!(c.validate().is_ok());
    assert_eq!(c.budget(), 30_000);
    c.feedback_period = 30_000;
    assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
    c.feedback_period = 2000;
    c.seeds = 0;
    assert!(c.validate().is_err());
    c.seeds = 1;
    c.align.grid.clear();
    assert!(c.validate().is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let c = ExperimentConfig {
        task: TaskId::Push,
        method: Method::FixedInitial,
        budget: Some(1234),
        ..ExperimentConfig::default()
    };
    let text = toml::to_string(&c).unwrap();
    let back: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, c);
    let partial: ExperimentConfig = toml::from_str("task = \"grasp\"\nmethod = \"sparse\"\n").unwrap();
    assert_eq!(partial.task, TaskId::Grasp);
    assert_eq!(partial.method, Method::Sparse);
    assert_eq!(partial.seeds, 5);
    assert!(toml::from_str::<ExperimentConfig>("bogus = 1\n").is_err());
}

#[test]
fn shipped_configs_parse() {
    for task in TaskId::ALL {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("configs")
            .join(format!("{task}.toml"));
        let text = fs::read_to_string(&path).unwrap();
        let c: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(c.task, task);
        c.validate().unwrap();
    }
}

#[test]
fn method_names() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
    }
    assert!("dense".parse::<Method>().is_err());
}

#[test]
fn tune_label_names_moved_parameters() {
    let t = builtin(TaskId::Push, TemplateVariant::Proposed);
    let mut r = UpdateReport::init(&t);
    r.kind = UpdateKind::Tune;
    r.new.insert("reach_weight".into(), 10.5);
    assert_eq!(update_label(&r), "tune(+) reach_weight");
    r.kind = UpdateKind::Bayesian;
    assert_eq!(update_label(&r), "bayesian");
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(TaskId::Push, Method::SelfAlign, dir.path());
    let runs = run(&config).unwrap();
    assert_eq!(runs.len(), 1);
    let r = &runs[0];
    assert_eq!(r.dir, dir.path().join("push/self-align/seed-0"));
    for f in ["metrics.csv", "params.csv", "updates.jsonl", "curves.svg", "run.json"] {
        assert!(r.dir.join(f).is_file(), "{f} missing");
    }
    let metrics = fs::read_to_string(r.dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,episodes,success_rate,neg_final_distance,mean_return\n"));
    let params = fs::read_to_string(r.dir.join("params.csv")).unwrap();
    let header = params.lines().next().unwrap();
    assert_eq!(
        header,
        "iter,step,update_type,reach_weight,push_weight,maintain_weight,collision_penalty,omega,discrepancy_before,discrepancy_after,accepted"
    );
    assert!(params.lines().nth(1).unwrap().starts_with("1,0,init,0.5,2,5,-10,"));
    let svg = fs::read_to_string(r.dir.join("curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    let loaded = RunArtifacts::load(&r.dir).unwrap();
    assert_eq!(loaded.metrics, r.metrics);
    assert_eq!(loaded.updates, r.updates);
    assert_eq!(loaded.termination, r.termination);
    // The budget-limited run stops at its budget with one row per period.
    if r.termination == Termination::Budget {
        assert_eq!(r.steps, 500);
        let steps: Vec<u64> = r.metrics.iter().map(|m| m.step).collect();
        assert_eq!(steps, vec![250, 500]);
    }
    // One feedback batch per update after the initial record.
    let batches = fs::read_dir(r.dir.join("feedback")).unwrap().count();
    assert_eq!(batches, r.updates.len() - 1);
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_seed(&tiny(TaskId::Touch, Method::SelfAlign, a.path()), 3).unwrap();
    let rb = run_seed(&tiny(TaskId::Touch, Method::SelfAlign, b.path()), 3).unwrap();
    for f in ["metrics.csv", "params.csv", "updates.jsonl"] {
        assert_eq!(
            fs::read(ra.dir.join(f)).unwrap(),
            fs::read(rb.dir.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn baselines_never_update_the_reward() {
    let dir = tempfile::tempdir().unwrap();
    for method in [Method::FixedInitial, Method::Sparse] {
        let r = run_seed(&tiny(TaskId::Grasp, method, dir.path()), 0).unwrap();
        assert_eq!(r.updates.len(), 1);
        assert_eq!(r.updates[0].report.kind, UpdateKind::Init);
    }
}

#[test]
fn summary_mean_steps() {
    let runs: Vec<RunArtifacts> = [20_000, 22_000, 25_000, 27_000, 29_000]
        .iter()
        .enumerate()
        .map(|(i, &s)| fake_run(TaskId::Touch, Method::SelfAlign, i as u64, Some(s)))
        .collect();
    let s = summarize_runs(&runs, 1.0).unwrap();
    let m = s.method(Method::SelfAlign).unwrap();
    assert_eq!(m.reached, 5);
    assert_eq!(m.mean_steps, Some(24_600.0));
    assert_eq!(m.median_steps, Some(25_000.0));
}

#[test]
fn summary_handles_censored_runs() {
    let mut runs: Vec<RunArtifacts> = [20_000, 22_000, 26_000, 30_000]
        .iter()
        .enumerate()
        .map(|(i, &s)| fake_run(TaskId::Touch, Method::Sparse, i as u64, Some(s)))
        .collect();
    runs.push(fake_run(TaskId::Touch, Method::Sparse, 9, None));
    let s = summarize_runs(&runs, 1.0).unwrap();
    let m = s.method(Method::Sparse).unwrap();
    assert_eq!((m.reached, m.runs), (4, 5));
    assert_eq!(m.mean_steps, Some(24_500.0));
    assert_eq!(m.median_steps, Some(26_000.0));
    // Early-stopped runs hold their last value, so the curve spans the
    // longest run and ends at 1.0 minimum for the reached runs only.
    let last = m.curve.last().unwrap();
    assert_eq!(last.step, 30_000);
    assert_eq!(last.max, 1.0);
    assert_eq!(last.min, 0.5);

    let mostly_censored: Vec<RunArtifacts> = (0..3)
        .map(|i| fake_run(TaskId::Touch, Method::Sparse, i, if i == 0 { Some(4000) } else { None }))
        .collect();
    let s = summarize_runs(&mostly_censored, 1.0).unwrap();
    assert_eq!(s.methods[0].median_steps, None);
}

#[test]
fn summary_rejects_mixed_tasks_and_empty_input() {
    let runs = vec![
        fake_run(TaskId::Touch, Method::SelfAlign, 0, None),
        fake_run(TaskId::Push, Method::SelfAlign, 1, None),
    ];
    assert!(matches!(summarize_runs(&runs, 1.0), Err(HarnessError::MixedTasks(..))));
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        summarize(&[empty.path().to_path_buf()], 1.0),
        Err(HarnessError::NoRuns)
    ));
}

#[test]
fn summary_reads_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    for (i, reach) in [Some(4000), None].into_iter().enumerate() {
        let mut r = fake_run(TaskId::Touch, Method::FixedInitial, i as u64, reach);
        r.dir = dir.path().join(format!("touch/fixed-initial/seed-{i}"));
        write_run(&r).unwrap();
    }
    let s = summarize(&[dir.path().to_path_buf()], 1.0).unwrap();
    assert_eq!(s.methods[0].runs, 2);
    assert_eq!(s.methods[0].reached, 1);
    let out = dir.path().join("summary");
    write_summary(&s, &out).unwrap();
    for f in ["summary.csv", "curve.csv", "summary.svg"] {
        assert!(out.join(f).is_file());
    }
    assert!(s.to_string().contains("fixed-initial"));
}
