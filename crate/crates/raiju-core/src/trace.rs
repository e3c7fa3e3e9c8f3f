//! CSV interaction traces: recording episodes to a fixed 28-column schema
//! and replaying them as a drop-in environment for offline training.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::catalog::ACTION_COUNT;
use crate::env::{EnvError, Environment, StepInfo, StepOutcome};
use crate::observation::{Observation, OBS_LEN};
use crate::rl::{derive_seed, Agent};

/// Column count: episode, step, 11 observation features, action, success,
/// reward, done, 11 next-observation features.
pub const TRACE_COLUMNS: usize = 2 + OBS_LEN + 4 + OBS_LEN;

/// The fixed header row.
pub fn trace_header() -> String {
    let mut h = String::from("episode,step");
    for i in 0..OBS_LEN {
        h.push_str(&format!(",o{i}"));
    }
    h.push_str(",action,success,reward,done");
    for i in 0..OBS_LEN {
        h.push_str(&format!(",n{i}"));
    }
    h
}

/// One recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub episode: u32,
    pub step: u32,
    pub obs: Observation,
    pub action: u16,
    pub success: bool,
    pub reward: f64,
    pub done: bool,
    pub next_obs: Observation,
}

impl TraceRecord {
    fn to_csv_row(&self) -> String {
        let mut row = format!("{},{}", self.episode, self.step);
        for v in self.obs.values() {
            row.push_str(&format!(",{v}"));
        }
        row.push_str(&format!(
            ",{},{},{},{}",
            self.action,
            u8::from(self.success),
            self.reward,
            u8::from(self.done)
        ));
        for v in self.next_obs.values() {
            row.push_str(&format!(",{v}"));
        }
        row
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace write failure: {0}")]
    Write(#[from] std::io::Error),
    #[error("trace schema violation at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("environment fault while recording: {0}")]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy)]
pub struct RecordStats {
    pub episodes: u32,
    pub rows: u64,
}

/// Runs `agent` in `env` for `episodes` episodes, writing one record per
/// step. Rows are buffered and flushed together at each episode end.
pub fn record(
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    episodes: u32,
    base_seed: u64,
    out: &mut dyn Write,
) -> Result<RecordStats, TraceError> {
    writeln!(out, "{}", trace_header())?;
    let mut rows = 0u64;
    for episode in 0..episodes {
        let mut obs = env.reset(derive_seed(base_seed, u64::from(episode)))?;
        let mut buffer = String::new();
        let mut step = 0u32;
        loop {
            let action = agent.act(&obs);
            let outcome = env.step(action)?;
            let record = TraceRecord {
                episode,
                step,
                obs,
                action,
                success: outcome.success,
                reward: outcome.reward,
                done: outcome.done,
                next_obs: outcome.observation,
            };
            buffer.push_str(&record.to_csv_row());
            buffer.push('\n');
            rows += 1;
            step += 1;
            obs = outcome.observation;
            if outcome.done {
                break;
            }
        }
        out.write_all(buffer.as_bytes())?;
        out.flush()?;
    }
    Ok(RecordStats { episodes, rows })
}

/// A parsed trace: records in file order, indexed by episode.
#[derive(Debug, Clone)]
pub struct ReplayTrace {
    records: Vec<TraceRecord>,
    episode_bounds: Vec<std::ops::Range<usize>>,
}

fn parse_i32(field: &str, name: &str, line: usize) -> Result<i32, TraceError> {
    field.parse().map_err(|_| TraceError::Schema {
        line,
        message: format!("{name}: expected integer, got {field:?}"),
    })
}

impl ReplayTrace {
    pub fn load(path: &Path) -> Result<ReplayTrace, TraceError> {
        let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ReplayTrace::parse(std::io::BufReader::new(file))
    }

    pub fn parse(reader: impl BufRead) -> Result<ReplayTrace, TraceError> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or(TraceError::Schema {
            line: 1,
            message: "empty file, expected header".to_string(),
        })?;
        let header = header.map_err(|e| TraceError::Schema {
            line: 1,
            message: e.to_string(),
        })?;
        if header != trace_header() {
            return Err(TraceError::Schema {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| TraceError::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != TRACE_COLUMNS {
                return Err(TraceError::Schema {
                    line: line_no,
                    message: format!("expected {TRACE_COLUMNS} columns, got {}", fields.len()),
                });
            }
            let episode = parse_i32(fields[0], "episode", line_no)? as u32;
            let step = parse_i32(fields[1], "step", line_no)? as u32;
            let mut obs = [0i32; OBS_LEN];
            for (i, slot) in obs.iter_mut().enumerate() {
                *slot = parse_i32(fields[2 + i], &format!("o{i}"), line_no)?;
            }
            let action = parse_i32(fields[2 + OBS_LEN], "action", line_no)?;
            if !(0..ACTION_COUNT as i32).contains(&action) {
                return Err(TraceError::Schema {
                    line: line_no,
                    message: format!("action {action} outside 0..{ACTION_COUNT}"),
                });
            }
            let success = match fields[3 + OBS_LEN] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(TraceError::Schema {
                        line: line_no,
                        message: format!("success: expected 0/1, got {other:?}"),
                    })
                }
            };
            let reward: f64 = fields[4 + OBS_LEN]
                .parse()
                .map_err(|_| TraceError::Schema {
                    line: line_no,
                    message: format!("reward: expected number, got {:?}", fields[4 + OBS_LEN]),
                })?;
            let done = match fields[5 + OBS_LEN] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(TraceError::Schema {
                        line: line_no,
                        message: format!("done: expected 0/1, got {other:?}"),
                    })
                }
            };
            let mut next_obs = [0i32; OBS_LEN];
            for (i, slot) in next_obs.iter_mut().enumerate() {
                *slot = parse_i32(fields[6 + OBS_LEN + i], &format!("n{i}"), line_no)?;
            }
            let obs = Observation(obs);
            let next_obs = Observation(next_obs);
            for (name, o) in [("observation", &obs), ("next observation", &next_obs)] {
                if let Err(msg) = o.validate() {
                    return Err(TraceError::Schema {
                        line: line_no,
                        message: format!("{name}: {msg}"),
                    });
                }
            }
            records.push(TraceRecord {
                episode,
                step,
                obs,
                action: action as u16,
                success,
                reward,
                done,
                next_obs,
            });
        }
        let episode_bounds = index_episodes(&records)?;
        Ok(ReplayTrace {
            records,
            episode_bounds,
        })
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn episode_count(&self) -> usize {
        self.episode_bounds.len()
    }

    pub fn episode_records(&self, episode: usize) -> &[TraceRecord] {
        &self.records[self.episode_bounds[episode].clone()]
    }

    /// Serializes back to the exact CSV byte form.
    pub fn to_csv(&self) -> String {
        let mut out = trace_header();
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_csv_row());
            out.push('\n');
        }
        out
    }
}

/// Episodes must be numbered 0.. in order with contiguous steps from 0.
fn index_episodes(records: &[TraceRecord]) -> Result<Vec<std::ops::Range<usize>>, TraceError> {
    let mut bounds = Vec::new();
    let mut start = 0usize;
    for (i, r) in records.iter().enumerate() {
        let line = i + 2;
        let expected_episode = bounds.len() as u32;
        if r.episode != expected_episode {
            return Err(TraceError::Schema {
                line,
                message: format!("expected episode {expected_episode}, got {}", r.episode),
            });
        }
        let expected_step = (i - start) as u32;
        if r.step != expected_step {
            return Err(TraceError::Schema {
                line,
                message: format!("expected step {expected_step}, got {}", r.step),
            });
        }
        if r.done {
            bounds.push(start..i + 1);
            start = i + 1;
        }
    }
    if start != records.len() {
        return Err(TraceError::Schema {
            line: records.len() + 1,
            message: "trace truncated: final episode has no done row".to_string(),
        });
    }
    Ok(bounds)
}

/// How a replay environment treats an action that differs from the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayMode {
    /// Divergence is a contract error. The default.
    #[default]
    Strict,
    /// Transitions are served from a (observation, action) table built over
    /// the whole trace; unmatched pairs yield the failure reward and leave
    /// the state unchanged.
    Lookup,
}

impl std::str::FromStr for ReplayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ReplayMode::Strict),
            "lookup" => Ok(ReplayMode::Lookup),
            other => Err(format!(
                "unknown replay mode {other:?} (expected strict or lookup)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LookupOutcome {
    reward: f64,
    success: bool,
    done: bool,
    next_obs: Observation,
}

enum ReplayState {
    Strict {
        episode: usize,
        pos: usize,
        started: bool,
    },
    Lookup {
        table: HashMap<(Observation, u16), LookupOutcome>,
        start_obs: Observation,
        current: Observation,
        steps: u32,
        budget: u32,
    },
}

/// An [`Environment`] serving recorded transitions.
pub struct ReplayEnv {
    trace: Arc<ReplayTrace>,
    state: ReplayState,
    finished: bool,
}

impl ReplayEnv {
    /// `step_budget` only applies in lookup mode, where episodes are not
    /// bounded by the recording.
    pub fn new(trace: Arc<ReplayTrace>, mode: ReplayMode, step_budget: u32) -> Self {
        assert!(
            trace.episode_count() > 0,
            "replay needs at least one episode"
        );
        let state = match mode {
            ReplayMode::Strict => ReplayState::Strict {
                episode: 0,
                pos: 0,
                started: false,
            },
            ReplayMode::Lookup => {
                let mut table = HashMap::new();
                for r in trace.records() {
                    // First occurrence wins, keeping lookups deterministic
                    // even if a trace ever carried conflicting duplicates.
                    table.entry((r.obs, r.action)).or_insert(LookupOutcome {
                        reward: r.reward,
                        success: r.success,
                        done: r.done,
                        next_obs: r.next_obs,
                    });
                }
                let start_obs = trace.records()[0].obs;
                ReplayState::Lookup {
                    table,
                    start_obs,
                    current: start_obs,
                    steps: 0,
                    budget: step_budget,
                }
            }
        };
        ReplayEnv {
            trace,
            state,
            finished: true,
        }
    }
}

fn derive_info(success: bool, done: bool) -> StepInfo {
    match (done, success) {
        (true, true) => StepInfo::GoalReached,
        (true, false) => StepInfo::BudgetExhausted,
        (false, true) => StepInfo::Progress,
        (false, false) => StepInfo::Failure,
    }
}

impl Environment for ReplayEnv {
    fn reset(&mut self, _seed: u64) -> Result<Observation, EnvError> {
        match &mut self.state {
            ReplayState::Strict {
                episode,
                pos,
                started,
            } => {
                if *started {
                    *episode += 1;
                }
                *started = true;
                if *episode >= self.trace.episode_count() {
                    return Err(EnvError::TraceExhausted);
                }
                *pos = 0;
                self.finished = false;
                Ok(self.trace.episode_records(*episode)[0].obs)
            }
            ReplayState::Lookup {
                start_obs,
                current,
                steps,
                ..
            } => {
                *current = *start_obs;
                *steps = 0;
                self.finished = false;
                Ok(*start_obs)
            }
        }
    }

    fn step(&mut self, action: u16) -> Result<StepOutcome, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeDone);
        }
        if action as usize >= ACTION_COUNT {
            return Err(EnvError::ActionOutOfRange(action));
        }
        match &mut self.state {
            ReplayState::Strict { episode, pos, .. } => {
                let records = self.trace.episode_records(*episode);
                let record = &records[*pos];
                if record.action != action {
                    let line = self.trace.episode_bounds[*episode].start + *pos + 2;
                    return Err(EnvError::ReplayDiverged {
                        line,
                        recorded: record.action,
                        got: action,
                    });
                }
                *pos += 1;
                self.finished = record.done;
                Ok(StepOutcome {
                    observation: record.next_obs,
                    reward: record.reward,
                    success: record.success,
                    done: record.done,
                    info: derive_info(record.success, record.done),
                })
            }
            ReplayState::Lookup {
                table,
                current,
                steps,
                budget,
                ..
            } => {
                *steps += 1;
                let (reward, success, recorded_done, next_obs) =
                    match table.get(&(*current, action)) {
                        Some(o) => (o.reward, o.success, o.done, o.next_obs),
                        // Unmatched pairs read as failures; the state holds.
                        None => (-1.0, false, false, *current),
                    };
                let budget_done = !recorded_done && *steps >= *budget;
                let done = recorded_done || budget_done;
                *current = next_obs;
                self.finished = done;
                Ok(StepOutcome {
                    observation: next_obs,
                    reward,
                    success,
                    done,
                    info: if budget_done {
                        StepInfo::BudgetExhausted
                    } else {
                        derive_info(success, done)
                    },
                })
            }
        }
    }

    fn observation(&self) -> Observation {
        match &self.state {
            ReplayState::Strict { episode, pos, .. } => {
                let records = self.trace.episode_records(*episode);
                if *pos == 0 {
                    records[0].obs
                } else {
                    records[*pos - 1].next_obs
                }
            }
            ReplayState::Lookup { current, .. } => *current,
        }
    }

    fn done(&self) -> bool {
        self.finished
    }
}
