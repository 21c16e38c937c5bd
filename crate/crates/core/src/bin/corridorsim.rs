use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use corridorsim::corridor::build_schedule;
use corridorsim::engine::{ControllerKind, StrategyMask};
use corridorsim::policy::Checkpoint;
use corridorsim::report::{
    evaluate, parse_trajectory_csv, plot_series_csv, report_metrics, trajectory_csv, EvalRun,
    EvalSettings,
};
use corridorsim::scenario::{load_scenario, Scenario};
use corridorsim::trainer::{train, TrainOutcome, TrainProgress};
use corridorsim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "corridorsim",
    version,
    about = "Bus corridor simulator: baselines, policy training, and deviation reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRun {
    /// Scenario file (TOML)
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the learned controller and write a checkpoint
    Train {
        #[command(flatten)]
        common: CommonRun,
        /// Override the scenario's episode budget
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the scenario's worker count
        #[arg(long)]
        workers: Option<usize>,
        /// Resume from an existing checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Strategy mask: all, holding, signal or speed
        #[arg(long, default_value = "all")]
        mask: String,
    },
    /// Evaluate a controller over seeded replications
    Evaluate {
        #[command(flatten)]
        common: CommonRun,
        /// Controller: none, schedule, headway or learned (default: scenario)
        #[arg(long)]
        controller: Option<String>,
        /// Checkpoint path, required when the controller is learned
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the scenario's replication count
        #[arg(long)]
        replications: Option<usize>,
        /// Sample the stochastic policy instead of its mean action
        #[arg(long)]
        stochastic: bool,
    },
    /// Evaluate one of the classical baseline controllers
    Baseline {
        #[command(flatten)]
        common: CommonRun,
        /// Controller: none, schedule or headway
        #[arg(long)]
        controller: String,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Retrain under a strategy mask and evaluate the result
    Ablate {
        #[command(flatten)]
        common: CommonRun,
        /// Strategy mask: all, holding, signal or speed
        #[arg(long)]
        mask: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Evaluate this checkpoint under the mask instead of retraining
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Recompute a deviation report from exported trajectory files
    Report {
        #[command(flatten)]
        common: CommonRun,
        /// Trajectory CSV files, one per replication
        #[arg(long, required = true, num_args = 1..)]
        trajectories: Vec<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!(
            "{}",
            serde_json::json!({ "error": { "category": e.category(), "message": e.to_string() } })
        );
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            episodes,
            workers,
            resume,
            mask,
        } => cmd_train(common, episodes, workers, resume, &mask),
        Command::Evaluate {
            common,
            controller,
            checkpoint,
            replications,
            stochastic,
        } => cmd_evaluate(common, controller, checkpoint, replications, stochastic),
        Command::Baseline {
            common,
            controller,
            replications,
        } => cmd_baseline(common, &controller, replications),
        Command::Ablate {
            common,
            mask,
            episodes,
            workers,
            checkpoint,
            replications,
        } => cmd_ablate(common, &mask, episodes, workers, checkpoint, replications),
        Command::Report { common, trajectories } => cmd_report(common, &trajectories),
    }
}

fn prepare(common: &CommonRun) -> Result<Scenario> {
    let mut scenario = load_scenario(&common.scenario)?;
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("effective-scenario.toml"), scenario.effective_toml()?)?;
    Ok(scenario)
}

fn training_log_csv(progress: &[TrainProgress]) -> String {
    let mut out = String::from("episode,mean_reward,actor_surrogate,critic_loss,wall_ms\n");
    for p in progress {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.episode, p.mean_reward, p.actor_objective, p.critic_loss, p.wall_ms
        ));
    }
    out
}

fn run_training(scenario: &Scenario, resume: Option<&Path>, out: &Path) -> Result<TrainOutcome> {
    let resume_model = match resume {
        Some(path) => Some(Checkpoint::load(path)?.into_model()?),
        None => None,
    };
    let total = scenario.trainer.episodes;
    let mut last_print = 0usize;
    let outcome = train(
        &scenario.env,
        scenario.train_geometry,
        &scenario.trainer,
        scenario.seed,
        resume_model,
        Some(out),
        |p| {
            if p.episode >= last_print + 100 || p.episode + 1 == total {
                eprintln!(
                    "episode {}/{}: mean reward {:.4}, critic loss {:.4}",
                    p.episode + 1,
                    total,
                    p.mean_reward,
                    p.critic_loss
                );
                last_print = p.episode;
            }
        },
    )?;
    std::fs::write(out.join("training-log.csv"), training_log_csv(&outcome.progress))?;
    let ckpt = Checkpoint::from_model(&outcome.model, scenario.env.mask, scenario.env.downstream_count);
    ckpt.save(&out.join("checkpoint.json"))?;
    Ok(outcome)
}

fn cmd_train(
    common: CommonRun,
    episodes: Option<usize>,
    workers: Option<usize>,
    resume: Option<PathBuf>,
    mask: &str,
) -> Result<()> {
    let mut scenario = prepare(&common)?;
    if let Some(e) = episodes {
        scenario.trainer.episodes = e;
    }
    if let Some(w) = workers {
        scenario.trainer.workers = w;
    }
    scenario.env.mask = StrategyMask::parse(mask)?;
    let outcome = run_training(&scenario, resume.as_deref(), &common.out)?;
    let last = outcome.progress.last().expect("training produced episodes");
    println!(
        "trained {} episodes; final mean reward {:.4}; checkpoint at {}",
        outcome.progress.len(),
        last.mean_reward,
        common.out.join("checkpoint.json").display()
    );
    Ok(())
}

fn write_eval_outputs(out: &Path, scenario: &Scenario, run: &EvalRun) -> Result<()> {
    for (rep, rows) in run.rows_per_replication.iter().enumerate() {
        std::fs::write(out.join(format!("trajectory-r{rep:02}.csv")), trajectory_csv(rows))?;
    }
    std::fs::write(
        out.join("plot-series.csv"),
        plot_series_csv(&run.rows_per_replication[0], &scenario.env.block_volume_cost),
    )?;
    let schedule = build_schedule(
        &scenario.env.corridor.with_fleet(scenario.fleet_size),
        scenario.loops,
    )?;
    std::fs::write(out.join("schedule.csv"), schedule.to_csv())?;
    let json = serde_json::to_string_pretty(&run.report)
        .map_err(|e| Error::Internal(format!("report serialization failed: {e}")))?;
    std::fs::write(out.join("report.json"), json)?;
    Ok(())
}

fn eval_with(
    scenario: &Scenario,
    controller: ControllerKind,
    checkpoint: Option<&Path>,
    replications: Option<usize>,
    stochastic: bool,
    out: &Path,
) -> Result<EvalRun> {
    let mut scenario = scenario.clone();
    let model = match (controller, checkpoint) {
        (ControllerKind::LearnedPolicy, Some(path)) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.downstream_count != scenario.env.downstream_count {
                return Err(Error::Checkpoint(format!(
                    "checkpoint fuses {} downstream buses, scenario expects {}",
                    ckpt.downstream_count, scenario.env.downstream_count
                )));
            }
            scenario.env.mask = ckpt.mask;
            Some(ckpt.into_model()?)
        }
        (ControllerKind::LearnedPolicy, None) => {
            return Err(Error::Config(
                "--checkpoint is required for the learned controller".into(),
            ))
        }
        (_, _) => None,
    };
    let settings = EvalSettings {
        replications: replications.unwrap_or(scenario.replications),
        seed: scenario.seed,
        warmup_fraction: scenario.warmup_fraction,
        stochastic,
    };
    let run = evaluate(
        &scenario.env,
        controller,
        model.as_ref(),
        scenario.fleet_size,
        scenario.loops,
        &settings,
        &scenario.name,
    )?;
    write_eval_outputs(out, &scenario, &run)?;
    println!(
        "{}: pooled max |e| {:.2} s, max |d| {:.2} s over {} replications; report at {}",
        controller.label(),
        run.report.pooled.schedule_dev.max_abs,
        run.report.pooled.headway_dev.max_abs,
        run.report.replications,
        out.join("report.json").display()
    );
    Ok(run)
}

fn parse_controller(text: &str) -> Result<ControllerKind> {
    ControllerKind::from_label(text).ok_or_else(|| {
        Error::Domain(format!(
            "unknown controller '{text}' (expected none|schedule|headway|learned)"
        ))
    })
}

fn cmd_evaluate(
    common: CommonRun,
    controller: Option<String>,
    checkpoint: Option<PathBuf>,
    replications: Option<usize>,
    stochastic: bool,
) -> Result<()> {
    let scenario = prepare(&common)?;
    let controller = match controller {
        Some(text) => parse_controller(&text)?,
        None => scenario.controller,
    };
    eval_with(
        &scenario,
        controller,
        checkpoint.as_deref(),
        replications,
        stochastic,
        &common.out,
    )?;
    Ok(())
}

fn cmd_baseline(common: CommonRun, controller: &str, replications: Option<usize>) -> Result<()> {
    let scenario = prepare(&common)?;
    let controller = parse_controller(controller)?;
    if controller == ControllerKind::LearnedPolicy {
        return Err(Error::Domain("baseline expects none, schedule or headway".into()));
    }
    eval_with(&scenario, controller, None, replications, false, &common.out)?;
    Ok(())
}

fn cmd_ablate(
    common: CommonRun,
    mask: &str,
    episodes: Option<usize>,
    workers: Option<usize>,
    checkpoint: Option<PathBuf>,
    replications: Option<usize>,
) -> Result<()> {
    let mut scenario = prepare(&common)?;
    scenario.env.mask = StrategyMask::parse(mask)?;
    if let Some(e) = episodes {
        scenario.trainer.episodes = e;
    }
    if let Some(w) = workers {
        scenario.trainer.workers = w;
    }
    let checkpoint_path = match checkpoint {
        Some(path) => path,
        None => {
            run_training(&scenario, None, &common.out)?;
            common.out.join("checkpoint.json")
        }
    };
    eval_with(
        &scenario,
        ControllerKind::LearnedPolicy,
        Some(&checkpoint_path),
        replications,
        false,
        &common.out,
    )?;
    Ok(())
}

fn cmd_report(common: CommonRun, trajectories: &[PathBuf]) -> Result<()> {
    let scenario = prepare(&common)?;
    let mut reps = Vec::with_capacity(trajectories.len());
    for path in trajectories {
        let text = std::fs::read_to_string(path)?;
        reps.push(parse_trajectory_csv(&text, &path.display().to_string())?);
    }
    let report = report_metrics(
        &reps,
        &scenario.env.block_volume_cost,
        scenario.warmup_fraction,
        &scenario.name,
        "replayed",
        scenario.seed,
    )?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Internal(format!("report serialization failed: {e}")))?;
    std::fs::write(common.out.join("report.json"), &json)?;
    println!(
        "report over {} replications: pooled max |e| {:.2} s, max |d| {:.2} s",
        report.replications, report.pooled.schedule_dev.max_abs, report.pooled.headway_dev.max_abs
    );
    Ok(())
}
