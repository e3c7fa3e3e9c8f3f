//! Test batteries over the three attack goals and the experiment grid. A
//! battery runs `n_tests` independent tests; each test runs one fresh
//! episode per goal and the per-goal counts aggregate into the six metrics.

use std::sync::Arc;

use rayon::prelude::*;

use crate::env::{EnvError, Environment, Goal, RewardScheme, SimEnv, StepInfo};
use crate::rl::{derive_seed, train, Agent, Algorithm, GreedyAgent, RandomAgent, TrainerConfig};
use crate::scenario::{Scenario, ScenarioError};

/// Environment variable capping battery parallelism.
pub const THREADS_ENV_VAR: &str = "RAIJU_SIM_THREADS";

/// The six battery metrics. Averages cover successful tests only and are
/// absent when a goal never succeeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub n_tests: u32,
    pub succ_pe: u32,
    pub succ_gh: u32,
    pub succ_lm: u32,
    pub fail_lm: u32,
    pub avg_pe: Option<f64>,
    pub avg_gh: Option<f64>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let avg = |v: Option<f64>| match v {
            Some(x) => format!("{x:.2}"),
            None => "-".to_string(),
        };
        format!(
            "SUCC-PE {}/{n} SUCC-GH {}/{n} SUCC-LM {}/{n} AVG-PE {} AVG-GH {} FAIL-LM {}/{n}",
            self.succ_pe,
            self.succ_gh,
            self.succ_lm,
            avg(self.avg_pe),
            avg(self.avg_gh),
            self.fail_lm,
            n = self.n_tests
        )
    }
}

/// Outcome of one goal episode inside one test.
#[derive(Debug, Clone, Copy)]
pub struct PerTestRow {
    pub test: u32,
    pub goal: Goal,
    pub success: bool,
    pub steps: u32,
    pub info: StepInfo,
}

/// Audit CSV: `test,goal,success,steps,info`.
pub fn per_test_csv(rows: &[PerTestRow]) -> String {
    let mut out = String::from("test,goal,success,steps,info\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.test,
            r.goal,
            u8::from(r.success),
            r.steps,
            r.info
        ));
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid {THREADS_ENV_VAR} value {0:?}: expected a positive integer")]
    InvalidThreads(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
}

/// Battery parameters. The base seed fans out to one seed per test.
#[derive(Debug, Clone)]
pub struct BatterySpec {
    pub scenario: Arc<Scenario>,
    pub n_tests: u32,
    pub step_cap: u32,
    pub reward_scheme: RewardScheme,
    pub base_seed: u64,
}

fn battery_pool() -> Result<rayon::ThreadPool, EvalError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV_VAR) {
        let threads: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or(EvalError::InvalidThreads(raw))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| EvalError::ThreadPool(e.to_string()))
}

/// Runs the battery. `make_agent` receives a per-(test, goal) seed and must
/// return a fresh agent; tests run in parallel over independent environment
/// instances, and the aggregation is order-deterministic.
pub fn run_battery(
    spec: &BatterySpec,
    make_agent: &(dyn Fn(u64) -> Box<dyn Agent> + Sync),
) -> Result<(EvalReport, Vec<PerTestRow>), EvalError> {
    assert!(spec.step_cap > 0, "battery step cap must be positive");
    let pool = battery_pool()?;
    let rows: Result<Vec<Vec<PerTestRow>>, EnvError> = pool.install(|| {
        (0..spec.n_tests)
            .into_par_iter()
            .map(|test| {
                let test_seed = derive_seed(spec.base_seed, 0xBA77_0000 + u64::from(test));
                let mut rows = Vec::with_capacity(Goal::ALL.len());
                for (gi, goal) in Goal::ALL.into_iter().enumerate() {
                    let mut env = SimEnv::new(
                        spec.scenario.clone(),
                        goal,
                        spec.reward_scheme,
                        spec.step_cap,
                    );
                    let mut agent = make_agent(derive_seed(test_seed, gi as u64));
                    let mut obs = env.reset(test_seed)?;
                    let mut steps = 0u32;
                    let info = loop {
                        let action = agent.act(&obs);
                        let out = env.step(action)?;
                        steps += 1;
                        obs = out.observation;
                        if out.done {
                            break out.info;
                        }
                    };
                    rows.push(PerTestRow {
                        test,
                        goal,
                        success: info == StepInfo::GoalReached,
                        steps,
                        info,
                    });
                }
                Ok(rows)
            })
            .collect()
    });
    let rows: Vec<PerTestRow> = rows?.into_iter().flatten().collect();
    Ok((aggregate(spec.n_tests, &rows), rows))
}

fn aggregate(n_tests: u32, rows: &[PerTestRow]) -> EvalReport {
    let mut report = EvalReport {
        n_tests,
        succ_pe: 0,
        succ_gh: 0,
        succ_lm: 0,
        fail_lm: 0,
        avg_pe: None,
        avg_gh: None,
    };
    let mut pe_steps = 0u64;
    let mut gh_steps = 0u64;
    for r in rows {
        match (r.goal, r.success) {
            (Goal::PrivEsc, true) => {
                report.succ_pe += 1;
                pe_steps += u64::from(r.steps);
            }
            (Goal::GatherHashdump, true) => {
                report.succ_gh += 1;
                gh_steps += u64::from(r.steps);
            }
            (Goal::LateralMovement, true) => report.succ_lm += 1,
            (Goal::LateralMovement, false) => {
                if r.info == StepInfo::BudgetExhausted {
                    report.fail_lm += 1;
                }
            }
            _ => {}
        }
    }
    if report.succ_pe > 0 {
        report.avg_pe = Some(pe_steps as f64 / f64::from(report.succ_pe));
    }
    if report.succ_gh > 0 {
        report.avg_gh = Some(gh_steps as f64 / f64::from(report.succ_gh));
    }
    report
}

/// One grid cell: algorithm, scenario, reward scheme, training length, and
/// the evaluation dimensions.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub algorithm: Algorithm,
    pub scenario: String,
    pub reward_scheme: RewardScheme,
    pub episodes: u32,
    pub step_cap: u32,
    pub n_tests: u32,
    pub seed: u64,
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub algorithm: String,
    pub scenario: String,
    pub reward_scheme: String,
    pub episodes: u32,
    pub metric: &'static str,
    pub value: String,
}

/// Results CSV: `algorithm,scenario,reward_scheme,episodes,metric,value`.
/// Absent averages contribute no row.
pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("algorithm,scenario,reward_scheme,episodes,metric,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.algorithm, r.scenario, r.reward_scheme, r.episodes, r.metric, r.value
        ));
    }
    out
}

/// Flattens a report into metric rows.
pub fn report_rows(
    algorithm: Algorithm,
    scenario: &str,
    reward_scheme: RewardScheme,
    episodes: u32,
    report: &EvalReport,
) -> Vec<GridRow> {
    let row = |metric: &'static str, value: String| GridRow {
        algorithm: algorithm.to_string(),
        scenario: scenario.to_string(),
        reward_scheme: reward_scheme.to_string(),
        episodes,
        metric,
        value,
    };
    let mut rows = vec![
        row("succ_pe", report.succ_pe.to_string()),
        row("succ_gh", report.succ_gh.to_string()),
        row("succ_lm", report.succ_lm.to_string()),
        row("fail_lm", report.fail_lm.to_string()),
    ];
    if let Some(v) = report.avg_pe {
        rows.push(row("avg_pe", v.to_string()));
    }
    if let Some(v) = report.avg_gh {
        rows.push(row("avg_gh", v.to_string()));
    }
    rows
}

/// Trains (when the algorithm calls for it) and evaluates each spec in
/// order, returning one row per (spec, metric). Deterministic per seed.
pub fn run_experiment_grid(
    specs: &[ExperimentSpec],
    train_cfg: impl Fn(&ExperimentSpec) -> TrainerConfig,
) -> Result<Vec<GridRow>, EvalError> {
    let mut rows = Vec::new();
    for spec in specs {
        let scenario = Arc::new(Scenario::load(&spec.scenario)?);
        let battery = BatterySpec {
            scenario: scenario.clone(),
            n_tests: spec.n_tests,
            step_cap: spec.step_cap,
            reward_scheme: spec.reward_scheme,
            base_seed: spec.seed,
        };
        let report = match spec.algorithm.policy() {
            Some(policy) => {
                let cfg = train_cfg(spec);
                let mut env = SimEnv::new(
                    scenario.clone(),
                    cfg.goal,
                    cfg.reward_scheme,
                    cfg.step_budget,
                );
                let trained = train(&mut env, policy, &cfg)?;
                let actor = trained.actor;
                let (report, _) = run_battery(&battery, &move |_| {
                    Box::new(GreedyAgent::new(actor.clone())) as Box<dyn Agent>
                })?;
                report
            }
            None => {
                let (report, _) = run_battery(&battery, &|seed| {
                    Box::new(RandomAgent::new(seed)) as Box<dyn Agent>
                })?;
                report
            }
        };
        rows.extend(report_rows(
            spec.algorithm,
            &scenario.name,
            spec.reward_scheme,
            spec.episodes,
            &report,
        ));
    }
    Ok(rows)
}
