//! Command-line front end: training, evaluation, experiment grids, trace
//! record/replay, gradient checking, and scenario/catalog export.
//!
//! Exit codes: 0 success, 2 usage, 3 validation (bad configs, schemas, or
//! checkpoints), 4 i/o, 1 any other failure (including a failed gradient
//! check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use raiju_core::catalog::build_catalog;
use raiju_core::checkpoint::{Checkpoint, CheckpointError};
use raiju_core::env::{EnvError, Goal, RewardScheme, SimEnv};
use raiju_core::eval::{
    grid_csv, per_test_csv, report_rows, run_battery, run_experiment_grid, BatterySpec, EvalError,
    ExperimentSpec,
};
use raiju_core::gradcheck::{run_gradcheck, GradCheckConfig};
use raiju_core::loss::ValueLossForm;
use raiju_core::observation::OBS_LEN;
use raiju_core::optim::OptimizerKind;
use raiju_core::rl::{
    derive_seed, train, Agent, Algorithm, GreedyAgent, RandomAgent, SamplingAgent, TrainerConfig,
};
use raiju_core::scenario::{Scenario, ScenarioError};
use raiju_core::trace::{record, ReplayEnv, ReplayMode, ReplayTrace, TraceError};
use raiju_core::ACTION_COUNT;

#[derive(Parser)]
#[command(
    name = "raiju",
    version,
    about = "Simulated post-exploitation lab: deterministic attack scenarios, policy-gradient agents, and evaluation batteries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent online and write a checkpoint plus a per-episode log.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the random baseline) over a test battery.
    Eval(EvalArgs),
    /// Train and evaluate a grid of experiment configurations.
    Grid(GridArgs),
    /// Record agent/environment interactions to a CSV trace.
    Record(RecordArgs),
    /// Train offline against a recorded trace.
    Replay(ReplayArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Export a scenario config (TOML) or the action catalog (CSV).
    Export(ExportArgs),
}

/// Training knobs shared by `train`, `replay`, and `grid`.
#[derive(Args)]
struct HyperArgs {
    /// Discount factor.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Actor learning rate.
    #[arg(long, default_value_t = 3e-4)]
    lr_actor: f64,
    /// Critic learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr_critic: f64,
    /// Surrogate clip threshold.
    #[arg(long, default_value_t = 0.2)]
    eps_clip: f64,
    /// Entropy bonus weight.
    #[arg(long, default_value_t = 0.01)]
    entropy_coef: f64,
    /// Critic loss weight (clipped-surrogate objective only).
    #[arg(long, default_value_t = 0.5)]
    value_coef: f64,
    /// Update passes per collected episode.
    #[arg(long, default_value_t = 4)]
    ppo_epochs: u32,
    /// Per-episode step budget during training.
    #[arg(long, default_value_t = 200)]
    step_budget: u32,
    /// Training goal: pe, gh, or lm.
    #[arg(long, default_value = "lm")]
    goal: Goal,
    /// Hidden layer width.
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    /// Parameter update rule: adam or sgd.
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    /// Batch-normalize advantages before each update.
    #[arg(long)]
    normalize_advantages: bool,
    /// Update once per step from a TD(0) target instead of per episode.
    #[arg(long)]
    a2c_per_step: bool,
    /// Critic regression form: mse or halved-self-baseline.
    #[arg(long, default_value = "mse")]
    value_loss: ValueLossForm,
}

impl HyperArgs {
    fn config(&self, seed: u64, episodes: u32, reward_scheme: RewardScheme) -> TrainerConfig {
        TrainerConfig {
            gamma: self.gamma,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            eps_clip: self.eps_clip,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            ppo_epochs: self.ppo_epochs,
            episodes,
            step_budget: self.step_budget,
            reward_scheme,
            goal: self.goal,
            seed,
            hidden_dim: self.hidden,
            optimizer: self.optimizer,
            normalize_advantages: self.normalize_advantages,
            a2c_per_step: self.a2c_per_step,
            value_loss_form: self.value_loss,
        }
    }

    /// Announces the effective configuration, separating the pinned
    /// hyperparameter set from the assumed defaults.
    fn announce(&self, ppo: bool) {
        eprintln!(
            "config: gamma={} lr_actor={} lr_critic={}{} (pinned)",
            self.gamma,
            self.lr_actor,
            self.lr_critic,
            if ppo {
                format!(" eps_clip={}", self.eps_clip)
            } else {
                String::new()
            }
        );
        eprintln!(
            "config: entropy_coef={} value_coef={}{} optimizer={} activation=tanh hidden={} \
             step_budget={} goal={} (assumed defaults, override via flags)",
            self.entropy_coef,
            self.value_coef,
            if ppo {
                format!(" ppo_epochs={}", self.ppo_epochs)
            } else {
                String::new()
            },
            self.optimizer,
            self.hidden,
            self.step_budget,
            self.goal,
        );
    }
}

#[derive(Args)]
struct TrainArgs {
    /// a2c or ppo.
    #[arg(long)]
    algo: Algorithm,
    /// Builtin scenario name (env1..env4) or a TOML config path.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 2000)]
    episodes: u32,
    /// Reward scheme: rw1 or rw20.
    #[arg(long, default_value = "rw20")]
    reward: RewardScheme,
    /// Mandatory rng seed; identical seeds give identical outputs.
    #[arg(long)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long, default_value = "checkpoint.bin")]
    out: PathBuf,
    /// Per-episode training log (CSV).
    #[arg(long, default_value = "train_log.csv")]
    log: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate (greedy action selection).
    #[arg(long, conflicts_with = "algo")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a baseline instead: only `random` is valid here.
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    scenario: String,
    /// Number of tests in the battery.
    #[arg(long, default_value_t = 100)]
    tests: u32,
    /// Per-episode step cap.
    #[arg(long, default_value_t = 4000)]
    cap: u32,
    #[arg(long)]
    seed: u64,
    /// Results CSV path.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Optional per-test audit log (CSV).
    #[arg(long)]
    per_test_log: Option<PathBuf>,
    /// Sample from the policy instead of taking the argmax.
    #[arg(long)]
    sample: bool,
    /// Reward scheme used inside the battery episodes.
    #[arg(long, default_value = "rw20")]
    reward: RewardScheme,
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated: a2c,ppo,random.
    #[arg(long, value_delimiter = ',', required = true)]
    algos: Vec<Algorithm>,
    /// Comma-separated scenario names or paths.
    #[arg(long, value_delimiter = ',', required = true)]
    scenarios: Vec<String>,
    /// Comma-separated reward schemes.
    #[arg(long, value_delimiter = ',', default_value = "rw20")]
    rewards: Vec<RewardScheme>,
    /// Training episodes per trained cell.
    #[arg(long, default_value_t = 2000)]
    episodes: u32,
    #[arg(long, default_value_t = 100)]
    tests: u32,
    /// Evaluation step cap (comparison-run default).
    #[arg(long, default_value_t = 200)]
    cap: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "grid.csv")]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    episodes: u32,
    /// random, greedy, or sample (the latter two need --checkpoint).
    #[arg(long, default_value = "random")]
    agent: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "lm")]
    goal: Goal,
    /// Per-episode step cap while recording.
    #[arg(long, default_value_t = 200)]
    cap: u32,
    #[arg(long, default_value = "rw20")]
    reward: RewardScheme,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Recorded trace to train against.
    #[arg(long)]
    trace: PathBuf,
    /// a2c or ppo.
    #[arg(long)]
    algo: Algorithm,
    #[arg(long, default_value_t = 2000)]
    episodes: u32,
    #[arg(long)]
    seed: u64,
    /// lookup serves transitions by (observation, action); strict requires
    /// the exact recorded action sequence.
    #[arg(long, default_value = "lookup")]
    mode: ReplayMode,
    #[arg(long, default_value = "rw20")]
    reward: RewardScheme,
    #[arg(long, default_value = "checkpoint.bin")]
    out: PathBuf,
    #[arg(long, default_value = "train_log.csv")]
    log: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random seeds per loss family.
    #[arg(long, default_value_t = 20)]
    seeds: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 5)]
    batch: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Deliberately corrupt one gradient entry; the check must then fail.
    #[arg(long)]
    inject_bug: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Scenario to export as TOML (builtin name or config path).
    #[arg(long, conflicts_with = "catalog")]
    scenario: Option<String>,
    /// Export the 99-slot action catalog as CSV instead.
    #[arg(long)]
    catalog: bool,
    #[arg(long)]
    out: PathBuf,
}

enum AppError {
    Usage(String),
    Validation(String),
    Io(String),
    Failed(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Validation(_) => 3,
            AppError::Io(_) => 4,
            AppError::Failed(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m)
            | AppError::Validation(m)
            | AppError::Io(m)
            | AppError::Failed(m) => m,
        }
    }
}

impl From<ScenarioError> for AppError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => AppError::Io(e.to_string()),
            _ => AppError::Validation(e.to_string()),
        }
    }
}

impl From<CheckpointError> for AppError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => AppError::Io(e.to_string()),
            CheckpointError::Format(_) => AppError::Validation(e.to_string()),
        }
    }
}

impl From<TraceError> for AppError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io { .. } | TraceError::Write(_) => AppError::Io(e.to_string()),
            TraceError::Schema { .. } => AppError::Validation(e.to_string()),
            TraceError::Env(inner) => AppError::Failed(inner.to_string()),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidThreads(_) => AppError::Validation(e.to_string()),
            EvalError::Scenario(inner) => inner.into(),
            EvalError::Env(inner) => inner.into(),
            EvalError::ThreadPool(_) => AppError::Failed(e.to_string()),
        }
    }
}

impl From<EnvError> for AppError {
    fn from(e: EnvError) -> Self {
        AppError::Failed(e.to_string())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    std::fs::write(path, contents)
        .map_err(|e| AppError::Io(format!("failed to write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Record(args) => cmd_record(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Export(args) => cmd_export(args),
    }
}

fn policy_algo(
    algo: Algorithm,
    context: &str,
) -> Result<raiju_core::rl::PolicyAlgorithm, AppError> {
    algo.policy()
        .ok_or_else(|| AppError::Usage(format!("{context} requires --algo a2c or --algo ppo")))
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let policy = policy_algo(args.algo, "train")?;
    let scenario = Arc::new(Scenario::load(&args.scenario)?);
    let cfg = args.hyper.config(args.seed, args.episodes, args.reward);
    cfg.validate().map_err(AppError::Validation)?;
    args.hyper.announce(args.algo == Algorithm::Ppo);
    let mut env = SimEnv::new(
        scenario.clone(),
        cfg.goal,
        cfg.reward_scheme,
        cfg.step_budget,
    );
    let result = train(&mut env, policy, &cfg)?;
    let checkpoint = Checkpoint::from_training(
        args.algo,
        &scenario.name,
        cfg.reward_scheme,
        cfg.goal,
        cfg.episodes,
        &result,
    );
    checkpoint.save(&args.out)?;
    write_file(&args.log, &result.log.to_csv())?;
    println!(
        "trained {} on {} for {} episodes (reward {}, seed {}): final-100 success rate {:.2}; wrote {} and {}",
        args.algo,
        scenario.name,
        cfg.episodes,
        cfg.reward_scheme,
        args.seed,
        result.log.recent_success_rate(100),
        args.out.display(),
        args.log.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), AppError> {
    if args.cap == 0 {
        return Err(AppError::Validation("--cap must be positive".to_string()));
    }
    let scenario = Arc::new(Scenario::load(&args.scenario)?);
    let spec = BatterySpec {
        scenario: scenario.clone(),
        n_tests: args.tests,
        step_cap: args.cap,
        reward_scheme: args.reward,
        base_seed: args.seed,
    };
    let (label, scheme, episodes, report, rows) = match (&args.checkpoint, args.algo) {
        (Some(path), _) => {
            let cp = Checkpoint::load(path)?;
            let (in_dim, _, out_dim) = cp.actor.dims();
            if in_dim != OBS_LEN || out_dim != ACTION_COUNT {
                return Err(AppError::Validation(format!(
                    "checkpoint {} has a {in_dim}-feature/{out_dim}-action actor; \
                     this scenario needs {OBS_LEN}/{ACTION_COUNT}",
                    path.display()
                )));
            }
            let actor = cp.actor.clone();
            let sample = args.sample;
            let (report, rows) = run_battery(&spec, &move |seed| {
                if sample {
                    Box::new(SamplingAgent::new(actor.clone(), seed)) as Box<dyn Agent>
                } else {
                    Box::new(GreedyAgent::new(actor.clone())) as Box<dyn Agent>
                }
            })?;
            (
                cp.algorithm,
                cp.reward_scheme,
                cp.episodes_trained,
                report,
                rows,
            )
        }
        (None, Some(Algorithm::Random)) => {
            let (report, rows) = run_battery(&spec, &|seed| {
                Box::new(RandomAgent::new(seed)) as Box<dyn Agent>
            })?;
            (Algorithm::Random, args.reward, 0, report, rows)
        }
        (None, Some(other)) => {
            return Err(AppError::Usage(format!(
                "eval --algo {other} needs --checkpoint; only --algo random runs untrained"
            )));
        }
        (None, None) => {
            return Err(AppError::Usage(
                "eval needs --checkpoint <path> or --algo random".to_string(),
            ));
        }
    };
    let grid_rows = report_rows(label, &scenario.name, scheme, episodes, &report);
    write_file(&args.out, &grid_csv(&grid_rows))?;
    if let Some(path) = &args.per_test_log {
        write_file(path, &per_test_csv(&rows))?;
    }
    println!(
        "{} on {} ({} tests, cap {}):",
        label, scenario.name, args.tests, args.cap
    );
    println!("{}", report.summary());
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<(), AppError> {
    if args.cap == 0 {
        return Err(AppError::Validation("--cap must be positive".to_string()));
    }
    let has_trained = args.algos.iter().any(|a| a.policy().is_some());
    if has_trained {
        args.hyper.announce(args.algos.contains(&Algorithm::Ppo));
    }
    let mut specs = Vec::new();
    for &algorithm in &args.algos {
        for scenario in &args.scenarios {
            for &reward_scheme in &args.rewards {
                specs.push(ExperimentSpec {
                    algorithm,
                    scenario: scenario.clone(),
                    reward_scheme,
                    episodes: args.episodes,
                    step_cap: args.cap,
                    n_tests: args.tests,
                    seed: args.seed,
                });
            }
        }
    }
    let rows = run_experiment_grid(&specs, |spec| {
        args.hyper
            .config(spec.seed, spec.episodes, spec.reward_scheme)
    })?;
    write_file(&args.out, &grid_csv(&rows))?;
    println!(
        "grid complete: {} configurations, {} metric rows, wrote {}",
        specs.len(),
        rows.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_record(args: RecordArgs) -> Result<(), AppError> {
    if args.cap == 0 {
        return Err(AppError::Validation("--cap must be positive".to_string()));
    }
    let scenario = Arc::new(Scenario::load(&args.scenario)?);
    let mut env = SimEnv::new(scenario.clone(), args.goal, args.reward, args.cap);
    let mut agent: Box<dyn Agent> = match args.agent.as_str() {
        "random" => Box::new(RandomAgent::new(derive_seed(args.seed, 0xA6E7))),
        kind @ ("greedy" | "sample") => {
            let path = args.checkpoint.as_ref().ok_or_else(|| {
                AppError::Usage(format!("record --agent {kind} needs --checkpoint"))
            })?;
            let cp = Checkpoint::load(path)?;
            if kind == "greedy" {
                Box::new(GreedyAgent::new(cp.actor.clone()))
            } else {
                Box::new(SamplingAgent::new(
                    cp.actor.clone(),
                    derive_seed(args.seed, 0xA6E7),
                ))
            }
        }
        other => {
            return Err(AppError::Usage(format!(
                "unknown agent {other:?} (expected random, greedy, or sample)"
            )));
        }
    };
    let file = std::fs::File::create(&args.out)
        .map_err(|e| AppError::Io(format!("failed to create {}: {e}", args.out.display())))?;
    let mut writer = std::io::BufWriter::new(file);
    let stats = record(
        &mut env,
        agent.as_mut(),
        args.episodes,
        args.seed,
        &mut writer,
    )?;
    println!(
        "recorded {} episodes ({} rows) from {} on {} to {}",
        stats.episodes,
        stats.rows,
        args.agent,
        scenario.name,
        args.out.display()
    );
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), AppError> {
    let policy = policy_algo(args.algo, "replay")?;
    let cfg = args.hyper.config(args.seed, args.episodes, args.reward);
    cfg.validate().map_err(AppError::Validation)?;
    args.hyper.announce(args.algo == Algorithm::Ppo);
    let trace = Arc::new(ReplayTrace::load(&args.trace)?);
    let mut env = ReplayEnv::new(trace, args.mode, cfg.step_budget);
    let result = train(&mut env, policy, &cfg)?;
    let source = format!("trace:{}", args.trace.display());
    let checkpoint = Checkpoint::from_training(
        args.algo,
        &source,
        cfg.reward_scheme,
        cfg.goal,
        cfg.episodes,
        &result,
    );
    checkpoint.save(&args.out)?;
    write_file(&args.log, &result.log.to_csv())?;
    println!(
        "replay-trained {} for {} episodes against {}: final-100 success rate {:.2}; wrote {} and {}",
        args.algo,
        cfg.episodes,
        args.trace.display(),
        result.log.recent_success_rate(100),
        args.out.display(),
        args.log.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), AppError> {
    let report = run_gradcheck(&GradCheckConfig {
        seeds: args.seeds,
        base_seed: args.seed,
        hidden_dim: args.hidden,
        batch_size: args.batch,
        eps: args.eps,
        tolerance: args.tolerance,
        inject_bug: args.inject_bug,
    });
    for loss in ["a2c", "ppo"] {
        let worst = report
            .trials
            .iter()
            .filter(|t| t.loss == loss)
            .fold(0.0f64, |m, t| m.max(t.max_rel_err));
        println!(
            "{loss}: {} trials, max relative error {worst:.3e}",
            args.seeds
        );
    }
    println!(
        "gradcheck: {} (max relative error {:.3e}, tolerance {:.1e})",
        if report.pass { "PASS" } else { "FAIL" },
        report.max_rel_err,
        report.tolerance
    );
    if report.pass {
        Ok(())
    } else {
        Err(AppError::Failed(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_err, report.tolerance
        )))
    }
}

fn cmd_export(args: ExportArgs) -> Result<(), AppError> {
    if args.catalog {
        write_file(&args.out, &build_catalog().to_csv())?;
        println!(
            "wrote action catalog ({ACTION_COUNT} slots) to {}",
            args.out.display()
        );
        return Ok(());
    }
    match &args.scenario {
        Some(id) => {
            let scenario = Scenario::load(id)?;
            write_file(&args.out, &scenario.to_toml())?;
            println!("wrote scenario {} to {}", scenario.name, args.out.display());
            Ok(())
        }
        None => Err(AppError::Usage(
            "export needs --scenario <id-or-path> or --catalog".to_string(),
        )),
    }
}
