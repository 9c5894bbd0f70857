use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use selfalign::alignment::compute_discrepancy;
use selfalign::envkit::TaskId;
use selfalign::harness::{
    run, summarize, write_summary, ExperimentConfig, Method, OracleBackend,
};
use selfalign::replay::load_episodes;
use selfalign::reward::parse_template;

#[derive(Parser)]
#[command(name = "selfalign", version, about = "Self-alignment reward learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train policies for every seed and write per-run artifacts.
    Run(RunArgs),
    /// Aggregate finished runs per method.
    Summarize {
        /// Run directories or directories above them.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Success rate counted as reaching the goal.
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Where to write summary.csv, curve.csv and summary.svg.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Send a stored feedback batch to the oracle again and show its ranking.
    RankAudit {
        /// A `feedback/iter-NNN` directory from a run.
        batch: PathBuf,
        #[arg(long)]
        oracle: Option<Backend>,
        /// TOML file with an `[oracle]` table.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Backend {
    Scripted,
    Llm,
}

impl From<Backend> for OracleBackend {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Scripted => OracleBackend::Scripted,
            Backend::Llm => OracleBackend::Llm,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; its values override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskId>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    first_seed: Option<u64>,
    /// Environment steps per run.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    feedback_period: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Reward template file used instead of the built-in one.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    #[arg(long)]
    updates_per_step: Option<usize>,
    #[arg(long)]
    feedback_rollouts: Option<usize>,
    #[arg(long)]
    no_save_feedback: bool,
    #[arg(long)]
    oracle: Option<Backend>,
    /// Rationality coefficient for noisy scripted ranking.
    #[arg(long)]
    oracle_beta: Option<f64>,
    /// Hidden layer width of the learner.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Flags first, then the config file on top.
fn layered<T>(base: &T, file: Option<&Path>) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let Some(path) = file else {
        return Ok(toml::from_str(&toml::to_string(base)?)?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let over: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut value = toml::Value::try_from(base)?;
    merge(&mut value, over);
    T::deserialize(value).with_context(|| format!("invalid config {}", path.display()))
}

fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    if let Some(v) = args.task {
        c.task = v;
    }
    if let Some(v) = args.method {
        c.method = v;
    }
    if let Some(v) = args.seeds {
        c.seeds = v;
    }
    if let Some(v) = args.first_seed {
        c.first_seed = v;
    }
    c.budget = args.budget.or(c.budget);
    if let Some(v) = args.feedback_period {
        c.feedback_period = v;
    }
    if let Some(v) = args.eval_episodes {
        c.eval_episodes = v;
    }
    c.template = args.template.clone().or(c.template);
    if let Some(v) = &args.output_dir {
        c.output_dir = v.clone();
    }
    if let Some(v) = args.replay_capacity {
        c.replay_capacity = v;
    }
    if let Some(v) = args.updates_per_step {
        c.updates_per_step = v;
    }
    if let Some(v) = args.feedback_rollouts {
        c.feedback_rollouts = v;
    }
    if args.no_save_feedback {
        c.save_feedback = false;
    }
    if let Some(v) = args.oracle {
        c.oracle.backend = v.into();
    }
    c.oracle.noise_beta = args.oracle_beta.or(c.oracle.noise_beta);
    if let Some(v) = args.hidden {
        c.learner.hidden = v;
    }
    if let Some(v) = args.lr {
        c.learner.lr = v;
    }
    let c = layered(&c, args.config.as_deref())?;
    c.validate()?;
    Ok(c)
}

fn run_command(args: &RunArgs) -> Result<()> {
    let config = experiment_config(args)?;
    let runs = run(&config)?;
    for r in &runs {
        let last = r.last();
        println!(
            "{} {} seed {}: {:?} after {} steps, success {:.2}, final distance {:.4} ({})",
            r.task,
            r.method,
            r.seed,
            r.termination,
            r.steps,
            last.success_rate,
            -last.neg_final_distance,
            r.dir.display()
        );
    }
    Ok(())
}

fn rank_audit(batch: &Path, backend: Option<Backend>, config: Option<&Path>) -> Result<()> {
    let trajs = load_episodes(batch)?;
    if trajs.is_empty() {
        bail!("{} holds no episodes", batch.display());
    }
    let task = trajs[0].task;
    let path = batch.join("template.toml");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let template = parse_template(&text)?;

    let mut experiment = ExperimentConfig::default();
    if let Some(b) = backend {
        experiment.oracle.backend = b.into();
    }
    let experiment = layered(&experiment, config)?;
    let oracle = experiment.oracle.build(0)?;
    let ranking = oracle.rank(&trajs, task, &template)?;
    ranking.validate(trajs.len())?;
    let disc = compute_discrepancy(&template, &ranking, &trajs);
    println!("{} samples, task {task}", trajs.len());
    println!("successes: {:?}", ranking.successes);
    println!("clusters (best first): {:?}", ranking.clusters);
    println!("discrepancy pairs: {} {:?}", disc.neg.len(), disc.neg);
    println!("agreed pairs: {}", disc.agreed.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Summarize {
            paths,
            threshold,
            output,
        } => summarize(paths, *threshold).map_err(Into::into).and_then(|s| {
            print!("{s}");
            if let Some(dir) = output {
                write_summary(&s, dir)?;
            }
            Ok(())
        }),
        Command::RankAudit {
            batch,
            oracle,
            config,
        } => rank_audit(batch, *oracle, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
