use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{io_error, line_chart, HarnessError, Method, RunArtifacts, Series};
use crate::envkit::TaskId;

/// Aggregated curve value at one evaluation step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryPoint {
    pub step: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    /// Runs that reached the success threshold.
    pub reached: usize,
    /// Mean steps to threshold over the runs that reached it.
    pub mean_steps: Option<f64>,
    /// Median steps to threshold with unreached runs counted as infinite;
    /// absent when the median itself is unreached.
    pub median_steps: Option<f64>,
    pub median_final_success: f64,
    pub median_final_distance: f64,
    /// Success rate, or negative final distance for push, with runs that
    /// stopped early holding their last value.
    pub curve: Vec<SummaryPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub task: TaskId,
    pub threshold: f64,
    pub methods: Vec<MethodSummary>,
}

impl Summary {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn find_runs(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    if path.join("run.json").is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let entries = fs::read_dir(path).map_err(|e| io_error(path, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        find_runs(&d, out)?;
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Summarizes every run found under `paths`, grouped by method. A path is
/// either a run directory or any directory above run directories.
pub fn summarize(paths: &[PathBuf], threshold: f64) -> Result<Summary, HarnessError> {
    let mut dirs = Vec::new();
    for p in paths {
        find_runs(p, &mut dirs)?;
    }
    let runs = dirs
        .iter()
        .map(|d| RunArtifacts::load(d))
        .collect::<Result<Vec<_>, _>>()?;
    summarize_runs(&runs, threshold)
}

pub fn summarize_runs(runs: &[RunArtifacts], threshold: f64) -> Result<Summary, HarnessError> {
    let first = runs.first().ok_or(HarnessError::NoRuns)?;
    let task = first.task;
    if let Some(other) = runs.iter().find(|r| r.task != task) {
        return Err(HarnessError::MixedTasks(task, other.task));
    }
    let mut by_method: BTreeMap<Method, Vec<&RunArtifacts>> = BTreeMap::new();
    for r in runs {
        if r.metrics.is_empty() {
            return Err(io_error(&r.dir, "run has no evaluations"));
        }
        by_method.entry(r.method).or_default().push(r);
    }
    let methods = by_method
        .into_iter()
        .map(|(method, runs)| {
            let steps: Vec<Option<u64>> = runs.iter().map(|r| r.steps_to(threshold)).collect();
            let reached: Vec<f64> = steps.iter().flatten().map(|&s| s as f64).collect();
            let mean_steps = (!reached.is_empty()).then(|| reached.iter().sum::<f64>() / reached.len() as f64);
            let censored: Vec<f64> = steps
                .iter()
                .map(|s| s.map_or(f64::INFINITY, |s| s as f64))
                .collect();
            let median_steps = Some(median(censored)).filter(|m| m.is_finite());
            MethodSummary {
                method,
                runs: runs.len(),
                reached: reached.len(),
                mean_steps,
                median_steps,
                median_final_success: median(runs.iter().map(|r| r.last().success_rate).collect()),
                median_final_distance: median(runs.iter().map(|r| -r.last().neg_final_distance).collect()),
                curve: aggregate(task, &runs),
            }
        })
        .collect();
    Ok(Summary {
        task,
        threshold,
        methods,
    })
}

fn aggregate(task: TaskId, runs: &[&RunArtifacts]) -> Vec<SummaryPoint> {
    let metric = |r: &RunArtifacts, i: usize| {
        let m = &r.metrics[i];
        match task {
            TaskId::Push => m.neg_final_distance,
            TaskId::Touch | TaskId::Grasp => m.success_rate,
        }
    };
    let mut steps: Vec<u64> = runs.iter().flat_map(|r| r.metrics.iter().map(|m| m.step)).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| {
                    let i = r.metrics.partition_point(|m| m.step <= step);
                    (i > 0).then(|| metric(r, i - 1))
                })
                .collect();
            SummaryPoint {
                step,
                mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .filter(|p| p.min.is_finite())
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.0}"))
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task {} (threshold {:.2})", self.task, self.threshold)?;
        writeln!(
            f,
            "{:<14} {:>8} {:>11} {:>13} {:>14} {:>15}",
            "method", "reached", "mean steps", "median steps", "final success", "final distance"
        )?;
        for m in &self.methods {
            writeln!(
                f,
                "{:<14} {:>8} {:>11} {:>13} {:>14.2} {:>15.4}",
                m.method.as_str(),
                format!("{}/{}", m.reached, m.runs),
                opt(m.mean_steps),
                opt(m.median_steps),
                m.median_final_success,
                m.median_final_distance
            )?;
        }
        Ok(())
    }
}

/// Writes `summary.csv`, `curve.csv` and `summary.svg` into `dir`.
pub fn write_summary(summary: &Summary, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut csv = String::from(
        "method,runs,reached,mean_steps,median_steps,median_final_success,median_final_distance\n",
    );
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for m in &summary.methods {
        csv += &format!(
            "{},{},{},{},{},{},{}\n",
            m.method,
            m.runs,
            m.reached,
            cell(m.mean_steps),
            cell(m.median_steps),
            m.median_final_success,
            m.median_final_distance
        );
    }
    let path = dir.join("summary.csv");
    fs::write(&path, csv).map_err(|e| io_error(&path, e))?;

    let mut csv = String::from("method,step,mean,min,max\n");
    for m in &summary.methods {
        for p in &m.curve {
            csv += &format!("{},{},{},{},{}\n", m.method, p.step, p.mean, p.min, p.max);
        }
    }
    let path = dir.join("curve.csv");
    fs::write(&path, csv).map_err(|e| io_error(&path, e))?;

    let series: Vec<Series> = summary
        .methods
        .iter()
        .map(|m| Series {
            name: m.method.to_string(),
            points: m.curve.iter().map(|p| (p.step as f64, p.mean)).collect(),
            band: m.curve.iter().map(|p| (p.step as f64, p.min, p.max)).collect(),
        })
        .collect();
    let metric = match summary.task {
        TaskId::Push => "negative final distance",
        TaskId::Touch | TaskId::Grasp => "success rate",
    };
    let svg = line_chart(&format!("{}: {metric}", summary.task), "environment steps", &series);
    let path = dir.join("summary.svg");
    fs::write(&path, svg).map_err(|e| io_error(&path, e))
}
