//! End-to-end runs of the `selfalign` binary.

use std::path::Path;
use std::process::{Command, Output};

fn selfalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfalign"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
budget = 500
feedback_period = 250
eval_episodes = 2

[learner]
hidden = 8

[align.mcmc]
chain_length = 200
burn_in = 50
"#;

fn tiny_run(out: &Path, method: &str) -> Output {
    let config = out.join(format!("{method}.toml"));
    std::fs::write(&config, TINY).unwrap();
    selfalign(&[
        "run",
        "--task",
        "push",
        "--method",
        method,
        "--seeds",
        "1",
        "--budget",
        "100000",
        "--output-dir",
        out.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ])
}

#[test]
fn run_summarize_and_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();

    let o = tiny_run(out, "self-align");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = out.join("push/self-align/seed-0");
    // The config file's budget wins over the flag.
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let last_step: u64 = metrics.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(last_step <= 500, "{metrics}");
    for f in ["params.csv", "updates.jsonl", "curves.svg", "run.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }

    let o = tiny_run(out, "sparse");
    assert!(o.status.success());

    let summary_dir = out.join("summary");
    let o = selfalign(&[
        "summarize",
        out.join("push").to_str().unwrap(),
        "--output",
        summary_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("self-align") && text.contains("sparse"), "{text}");
    for f in ["summary.csv", "curve.csv", "summary.svg"] {
        assert!(summary_dir.join(f).is_file(), "{f}");
    }

    let batch = run_dir.join("feedback/iter-001");
    let o = selfalign(&["rank-audit", batch.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("task push") && text.contains("clusters"), "{text}");
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = selfalign(&["summarize", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "feedback_period = 0\n").unwrap();
    let o = selfalign(&["run", "--config", config.to_str().unwrap()]);
    assert!(!o.status.success());

    std::fs::write(&config, "no_such_field = 1\n").unwrap();
    let o = selfalign(&["run", "--config", config.to_str().unwrap()]);
    assert!(!o.status.success());
}
