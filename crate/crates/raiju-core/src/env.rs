//! Episodic post-exploitation environment: privilege escalation, hashdump
//! gathering, and SMB lateral movement over a scenario's hosts.
//!
//! Transitions are fully deterministic. An action succeeds iff its
//! preconditions hold against the current state; re-executing an effect that
//! is already in place counts as a duplicate and is rewarded like a failure.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{ActionCatalog, ActionGroup, Platform, ACTION_COUNT};
use crate::observation::{feature, Observation, OBS_LEN, UNKNOWN};
use crate::scenario::{HostSpec, Scenario};

/// Attack objective of an episode; reaching it is the stop condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Goal {
    PrivEsc,
    GatherHashdump,
    LateralMovement,
}

impl Goal {
    pub const ALL: [Goal; 3] = [Goal::PrivEsc, Goal::GatherHashdump, Goal::LateralMovement];
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::PrivEsc => write!(f, "pe"),
            Goal::GatherHashdump => write!(f, "gh"),
            Goal::LateralMovement => write!(f, "lm"),
        }
    }
}

impl FromStr for Goal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pe" => Ok(Goal::PrivEsc),
            "gh" => Ok(Goal::GatherHashdump),
            "lm" => Ok(Goal::LateralMovement),
            other => Err(format!("unknown goal {other:?} (expected pe, gh, or lm)")),
        }
    }
}

/// Reward assignment for successful vs failed/duplicate steps. The failure
/// reward is -1 in both schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardScheme {
    Rw1,
    Rw20,
}

impl RewardScheme {
    pub fn success_reward(self) -> f64 {
        match self {
            RewardScheme::Rw1 => 1.0,
            RewardScheme::Rw20 => 20.0,
        }
    }

    pub fn failure_reward(self) -> f64 {
        -1.0
    }
}

impl fmt::Display for RewardScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardScheme::Rw1 => write!(f, "rw1"),
            RewardScheme::Rw20 => write!(f, "rw20"),
        }
    }
}

impl FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rw1" => Ok(RewardScheme::Rw1),
            "rw20" => Ok(RewardScheme::Rw20),
            other => Err(format!(
                "unknown reward scheme {other:?} (expected rw1 or rw20)"
            )),
        }
    }
}

/// Classification of a step's effect on the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepInfo {
    Progress,
    DuplicateSuccess,
    Failure,
    GoalReached,
    BudgetExhausted,
}

impl fmt::Display for StepInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StepInfo::Progress => "progress",
            StepInfo::DuplicateSuccess => "duplicate_success",
            StepInfo::Failure => "failure",
            StepInfo::GoalReached => "goal_reached",
            StepInfo::BudgetExhausted => "budget_exhausted",
        };
        write!(f, "{name}")
    }
}

/// Result of one environment step. `done` is true iff `info` is
/// `GoalReached` or `BudgetExhausted`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// The exploit succeeded and was not a duplicate.
    pub success: bool,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("action id {0} outside the catalog range 0..={max}", max = ACTION_COUNT - 1)]
    ActionOutOfRange(u16),
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("replay diverged at trace line {line}: recorded action {recorded}, got {got}")]
    ReplayDiverged {
        line: usize,
        recorded: u16,
        got: u16,
    },
    #[error("replay trace exhausted: no recorded episode left")]
    TraceExhausted,
}

/// Reset/step contract shared by the simulator and trace replay.
pub trait Environment {
    fn reset(&mut self, seed: u64) -> Result<Observation, EnvError>;
    fn step(&mut self, action: u16) -> Result<StepOutcome, EnvError>;
    fn observation(&self) -> Observation;
    fn done(&self) -> bool;
}

/// Mutable per-host runtime flags. Within an episode these only ever move
/// from false to true.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HostFlags {
    pub compromised: bool,
    pub elevated: bool,
    pub hashdump_taken: bool,
    pub smb_probed: bool,
}

/// The deterministic simulator.
pub struct SimEnv {
    scenario: Arc<Scenario>,
    catalog: &'static ActionCatalog,
    goal: Goal,
    scheme: RewardScheme,
    step_budget: u32,
    /// Index 0 is the foothold, 1.. mirror `scenario.neighbors`.
    hosts: Vec<HostFlags>,
    session: usize,
    /// Peer cursor: index into `scenario.neighbors`.
    cursor: usize,
    steps: u32,
    finished: bool,
}

impl SimEnv {
    pub fn new(
        scenario: Arc<Scenario>,
        goal: Goal,
        scheme: RewardScheme,
        step_budget: u32,
    ) -> Self {
        let hosts = vec![HostFlags::default(); 1 + scenario.neighbors.len()];
        let mut env = SimEnv {
            scenario,
            catalog: ActionCatalog::shared(),
            goal,
            scheme,
            step_budget,
            hosts,
            session: 0,
            cursor: 0,
            steps: 0,
            finished: false,
        };
        env.reset_state();
        env
    }

    fn reset_state(&mut self) {
        for h in &mut self.hosts {
            *h = HostFlags::default();
        }
        self.hosts[0].compromised = true;
        self.session = 0;
        self.steps = 0;
        self.finished = false;
        self.recompute_cursor();
    }

    fn host_spec(&self, idx: usize) -> &HostSpec {
        if idx == 0 {
            &self.scenario.foothold
        } else {
            &self.scenario.neighbors[idx - 1]
        }
    }

    /// The cursor points at the lowest-index peer that is still a viable
    /// lateral-movement target: un-compromised and not known (from a probe)
    /// to have its SMB service closed. Falls back to the lowest-index
    /// un-compromised peer, then 0.
    fn recompute_cursor(&mut self) {
        let n = self.scenario.neighbors.len();
        if n == 0 {
            self.cursor = 0;
            return;
        }
        let viable = (0..n).find(|&i| {
            let flags = &self.hosts[1 + i];
            !flags.compromised && !(flags.smb_probed && !self.scenario.neighbors[i].smb_open_truth)
        });
        self.cursor = viable
            .or_else(|| (0..n).find(|&i| !self.hosts[1 + i].compromised))
            .unwrap_or(0);
    }

    /// Goal predicate over the current internal state.
    pub fn goal_reached(&self) -> bool {
        match self.goal {
            Goal::PrivEsc => self.hosts[0].elevated,
            Goal::GatherHashdump => self.hosts[0].hashdump_taken,
            Goal::LateralMovement => self
                .scenario
                .neighbors
                .iter()
                .enumerate()
                .filter(|(_, n)| n.smb_open_truth)
                .all(|(i, _)| self.hosts[1 + i].compromised),
        }
    }

    /// Pure encoding of the current (session host, peer list, cursor) state.
    pub fn encode_observation(&self) -> Observation {
        let spec = self.host_spec(self.session);
        let flags = &self.hosts[self.session];
        let mut o = [UNKNOWN; OBS_LEN];
        o[feature::PLATFORM] = spec.platform.encode();
        match spec.platform {
            Platform::Windows => {
                o[feature::WIN_UAC] = if spec.uac_enabled { 0 } else { 1 };
                let yes_no = if flags.elevated { 0 } else { 1 };
                o[feature::WIN_ADMIN_GROUP] = yes_no;
                o[feature::WIN_ADMIN_USER] = yes_no;
                o[feature::WIN_SYSTEM_USER] = yes_no;
            }
            Platform::Linux => {
                o[feature::LINUX_ROOT_USER] = if flags.elevated { 0 } else { 1 };
                o[feature::LINUX_KERNEL_VUL] = if spec.kernel_vulnerable { 1 } else { 0 };
            }
        }
        o[feature::HASHDUMP] = i32::from(flags.hashdump_taken);
        let n = self.scenario.neighbors.len();
        o[feature::NUM_PEERS] = n as i32;
        if n == 0 {
            o[feature::PEER_INDEX] = 0;
            o[feature::PEER_PLATFORM] = UNKNOWN;
        } else {
            o[feature::PEER_INDEX] = self.cursor as i32;
            let peer = &self.scenario.neighbors[self.cursor];
            let peer_flags = &self.hosts[1 + self.cursor];
            let hidden = self.scenario.peer_platform_hidden
                && !peer_flags.smb_probed
                && !peer_flags.compromised;
            o[feature::PEER_PLATFORM] = if hidden {
                UNKNOWN
            } else {
                peer.platform.encode()
            };
        }
        Observation(o)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn goal(&self) -> Goal {
        self.goal
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    pub fn session_index(&self) -> usize {
        self.session
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Snapshot of per-host runtime flags, foothold first.
    pub fn host_flags(&self) -> &[HostFlags] {
        &self.hosts
    }
}

impl Environment for SimEnv {
    /// Transitions are deterministic, so the seed does not influence the
    /// episode; it is part of the contract shared with replay environments.
    fn reset(&mut self, _seed: u64) -> Result<Observation, EnvError> {
        self.reset_state();
        Ok(self.encode_observation())
    }

    fn step(&mut self, action: u16) -> Result<StepOutcome, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeDone);
        }
        if action as usize >= ACTION_COUNT {
            return Err(EnvError::ActionOutOfRange(action));
        }
        self.steps += 1;
        let spec = &self.catalog[action];
        let (success, duplicate) = match spec.group {
            ActionGroup::WindowsPrivEsc | ActionGroup::LinuxPrivEsc => {
                let host_spec = self.host_spec(self.session);
                let feasible = spec.target_platform == host_spec.platform
                    && host_spec.vulnerable_actions.contains(&action);
                let flags = &mut self.hosts[self.session];
                if feasible && !flags.elevated {
                    flags.elevated = true;
                    (true, false)
                } else {
                    (false, feasible && flags.elevated)
                }
            }
            ActionGroup::Hashdump => {
                let platform = self.host_spec(self.session).platform;
                let flags = &mut self.hosts[self.session];
                let feasible = spec.target_platform == platform && flags.elevated;
                if feasible && !flags.hashdump_taken {
                    flags.hashdump_taken = true;
                    (true, false)
                } else {
                    (false, feasible && flags.hashdump_taken)
                }
            }
            ActionGroup::LateralSmb => {
                if self.scenario.neighbors.is_empty() {
                    (false, false)
                } else {
                    let peer_idx = self.cursor;
                    let peer_spec = &self.scenario.neighbors[peer_idx];
                    let source_has_dump = self.hosts[self.session].hashdump_taken;
                    let feasible = source_has_dump
                        && peer_spec.smb_open_truth
                        && spec.target_platform == peer_spec.platform;
                    let peer = &mut self.hosts[1 + peer_idx];
                    if feasible && !peer.compromised {
                        // New non-elevated session on the peer; focus moves.
                        peer.compromised = true;
                        self.session = 1 + peer_idx;
                        (true, false)
                    } else if feasible && peer.compromised {
                        (false, true)
                    } else {
                        // The attempt reveals the peer's port state.
                        peer.smb_probed = true;
                        (false, false)
                    }
                }
            }
        };
        self.recompute_cursor();
        let reward = if success {
            self.scheme.success_reward()
        } else {
            self.scheme.failure_reward()
        };
        let info = if self.goal_reached() {
            StepInfo::GoalReached
        } else if self.steps >= self.step_budget {
            StepInfo::BudgetExhausted
        } else if success {
            StepInfo::Progress
        } else if duplicate {
            StepInfo::DuplicateSuccess
        } else {
            StepInfo::Failure
        };
        self.finished = matches!(info, StepInfo::GoalReached | StepInfo::BudgetExhausted);
        Ok(StepOutcome {
            observation: self.encode_observation(),
            reward,
            success,
            done: self.finished,
            info,
        })
    }

    fn observation(&self) -> Observation {
        self.encode_observation()
    }

    fn done(&self) -> bool {
        self.finished
    }
}
