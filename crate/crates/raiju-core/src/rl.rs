//! Training loops over any [`Environment`]: advantage actor-critic with
//! per-episode Monte-Carlo returns (a per-step TD mode sits behind a flag),
//! the clipped-surrogate optimizer with multiple update passes per episode,
//! and the uniform-random baseline agent.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::ACTION_COUNT;
use crate::env::{EnvError, Environment, Goal, RewardScheme, StepInfo};
use crate::loss::{a2c_backward, ppo_backward, LossBatch, PpoLossConfig, ValueLossForm};
use crate::nn::{policy_stats, sample_action, ParamSet};
use crate::observation::{Observation, OBS_LEN};
use crate::optim::{OptimizerKind, OptimizerState};

const SALT_INIT: u64 = 0x494E_4954;
const SALT_ACTIONS: u64 = 0x4143_5400;
const SALT_EPISODE: u64 = 0x4550_0000;

/// Stable seed derivation (splitmix64 finalizer over `base ^ mix(salt)`), so
/// every consumer of randomness gets an independent deterministic stream.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trainable policy-gradient algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyAlgorithm {
    A2c,
    Ppo,
}

/// Algorithms an experiment can name, including the untrained baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    A2c,
    Ppo,
    Random,
}

impl Algorithm {
    pub fn policy(self) -> Option<PolicyAlgorithm> {
        match self {
            Algorithm::A2c => Some(PolicyAlgorithm::A2c),
            Algorithm::Ppo => Some(PolicyAlgorithm::Ppo),
            Algorithm::Random => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::A2c => write!(f, "a2c"),
            Algorithm::Ppo => write!(f, "ppo"),
            Algorithm::Random => write!(f, "random"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a2c" => Ok(Algorithm::A2c),
            "ppo" => Ok(Algorithm::Ppo),
            "random" => Ok(Algorithm::Random),
            other => Err(format!(
                "unknown algorithm {other:?} (expected a2c, ppo, or random)"
            )),
        }
    }
}

/// All training knobs. Discount, learning rates, and the clip threshold
/// carry the pinned defaults; the remaining values are assumed defaults and
/// stay overridable.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub eps_clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub ppo_epochs: u32,
    pub episodes: u32,
    pub step_budget: u32,
    pub reward_scheme: RewardScheme,
    pub goal: Goal,
    pub seed: u64,
    pub hidden_dim: usize,
    pub optimizer: OptimizerKind,
    pub normalize_advantages: bool,
    /// Update after every step from a TD(0) target instead of once per
    /// episode from Monte-Carlo returns.
    pub a2c_per_step: bool,
    pub value_loss_form: ValueLossForm,
}

impl TrainerConfig {
    pub fn new(seed: u64) -> Self {
        TrainerConfig {
            gamma: 0.99,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            eps_clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            ppo_epochs: 4,
            episodes: 2000,
            step_budget: 200,
            reward_scheme: RewardScheme::Rw20,
            goal: Goal::LateralMovement,
            seed,
            hidden_dim: 256,
            optimizer: OptimizerKind::Adam,
            normalize_advantages: false,
            a2c_per_step: false,
            value_loss_form: ValueLossForm::Mse,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.eps_clip <= 0.0 {
            return Err(format!("eps_clip must be positive, got {}", self.eps_clip));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err("loss coefficients must be non-negative".to_string());
        }
        if self.step_budget == 0 {
            return Err("step_budget must be positive".to_string());
        }
        if self.ppo_epochs == 0 {
            return Err("ppo_epochs must be positive".to_string());
        }
        Ok(())
    }
}

/// One recorded interaction, carrying the quantities the losses need from
/// collection time.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub action: u16,
    pub reward: f64,
    pub log_prob_old: f64,
    pub value_old: f64,
    pub done: bool,
}

/// A complete episode with its computed returns and advantages.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Rollout {
    pub fn from_episode(transitions: Vec<Transition>, gamma: f64, normalize: bool) -> Self {
        let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
        let returns = discounted_returns(&rewards, gamma);
        let values: Vec<f64> = transitions.iter().map(|t| t.value_old).collect();
        let mut adv = advantages(&returns, &values);
        if normalize {
            normalize_in_place(&mut adv);
        }
        Rollout {
            transitions,
            returns,
            advantages: adv,
        }
    }

    pub fn loss_batch(&self) -> LossBatch {
        LossBatch {
            obs: self
                .transitions
                .iter()
                .map(|t| t.obs.as_f64().to_vec())
                .collect(),
            actions: self.transitions.iter().map(|t| t.action).collect(),
            advantages: self.advantages.clone(),
            returns: self.returns.clone(),
            old_log_probs: self.transitions.iter().map(|t| t.log_prob_old).collect(),
        }
    }
}

/// Discounted suffix sums `R_t = sum_i gamma^(i-t) r_i`, computed by backward
/// recursion.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&gamma), "gamma must lie in [0, 1]");
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (slot, &r) in returns.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *slot = acc;
    }
    returns
}

/// Elementwise `returns - values`.
pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    assert_eq!(returns.len(), values.len(), "length mismatch");
    returns.iter().zip(values).map(|(r, v)| r - v).collect()
}

fn normalize_in_place(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// Per-episode training log entry.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub episode: u32,
    pub steps: u32,
    pub total_reward: f64,
    pub goal_reached: bool,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "episode,steps,total_reward,goal_reached,actor_loss,critic_loss,entropy\n",
        );
        for e in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.episode,
                e.steps,
                e.total_reward,
                u8::from(e.goal_reached),
                e.actor_loss,
                e.critic_loss,
                e.entropy
            ));
        }
        out
    }

    /// Fraction of the trailing `window` episodes that reached the goal.
    pub fn recent_success_rate(&self, window: usize) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        let tail = &self.episodes[self.episodes.len().saturating_sub(window)..];
        tail.iter().filter(|e| e.goal_reached).count() as f64 / tail.len() as f64
    }
}

/// Trained networks plus the state needed to resume or evaluate.
pub struct TrainResult {
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub action_rng: ChaCha8Rng,
    pub log: TrainLog,
}

/// Runs `cfg.episodes` episodes against `env`. A2C updates once per episode
/// from the full-episode rollout (or per step when configured); PPO collects
/// an episode and then runs `ppo_epochs` update passes over it. Fully
/// deterministic given `cfg.seed`.
pub fn train(
    env: &mut dyn Environment,
    algo: PolicyAlgorithm,
    cfg: &TrainerConfig,
) -> Result<TrainResult, EnvError> {
    if let Err(msg) = cfg.validate() {
        panic!("invalid trainer config: {msg}");
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SALT_INIT));
    let mut actor = ParamSet::init(OBS_LEN, cfg.hidden_dim, ACTION_COUNT, &mut init_rng);
    let mut critic = ParamSet::init(OBS_LEN, cfg.hidden_dim, 1, &mut init_rng);
    let mut actor_opt = OptimizerState::new(cfg.optimizer, &actor);
    let mut critic_opt = OptimizerState::new(cfg.optimizer, &critic);
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SALT_ACTIONS));
    let mut log = TrainLog::default();

    let ppo_cfg = PpoLossConfig {
        eps_clip: cfg.eps_clip,
        value_coef: cfg.value_coef,
        entropy_coef: cfg.entropy_coef,
        value_loss_form: cfg.value_loss_form,
    };

    for episode in 0..cfg.episodes {
        let mut obs = env.reset(derive_seed(cfg.seed, SALT_EPISODE + u64::from(episode)))?;
        let mut total_reward = 0.0;

        if algo == PolicyAlgorithm::A2c && cfg.a2c_per_step {
            // TD(0) mode: one single-sample update per step.
            let mut steps = 0u32;
            let mut sums = (0.0, 0.0, 0.0);
            let goal_reached = loop {
                let obs_f = obs.as_f64().to_vec();
                let logits = actor.output(&obs_f);
                let stats = policy_stats(&logits, 0);
                let action = sample_action(&stats.probs, &mut action_rng);
                let value = critic.output(&obs_f)[0];
                let out = env.step(action)?;
                let next_value = if out.done {
                    0.0
                } else {
                    critic.output(&out.observation.as_f64())[0]
                };
                let target = out.reward + cfg.gamma * next_value;
                let batch = LossBatch {
                    obs: vec![obs_f],
                    actions: vec![action],
                    advantages: vec![target - value],
                    returns: vec![target],
                    old_log_probs: vec![],
                };
                let (parts, ga, gc) = a2c_backward(&actor, &critic, &batch, cfg.entropy_coef);
                actor_opt.apply(&mut actor, &ga, cfg.lr_actor);
                critic_opt.apply(&mut critic, &gc, cfg.lr_critic);
                sums.0 += parts.actor_loss;
                sums.1 += parts.critic_loss;
                sums.2 += parts.entropy;
                steps += 1;
                total_reward += out.reward;
                obs = out.observation;
                if out.done {
                    break out.info == StepInfo::GoalReached;
                }
            };
            let n = f64::from(steps.max(1));
            log.episodes.push(EpisodeLog {
                episode,
                steps,
                total_reward,
                goal_reached,
                actor_loss: sums.0 / n,
                critic_loss: sums.1 / n,
                entropy: sums.2 / n,
            });
            continue;
        }

        let mut transitions = Vec::new();
        let goal_reached = loop {
            let obs_f = obs.as_f64().to_vec();
            let logits = actor.output(&obs_f);
            let stats = policy_stats(&logits, 0);
            let action = sample_action(&stats.probs, &mut action_rng);
            let value = critic.output(&obs_f)[0];
            let out = env.step(action)?;
            transitions.push(Transition {
                obs,
                action,
                reward: out.reward,
                log_prob_old: stats.log_probs[action as usize],
                value_old: value,
                done: out.done,
            });
            total_reward += out.reward;
            obs = out.observation;
            if out.done {
                break out.info == StepInfo::GoalReached;
            }
        };
        let steps = transitions.len() as u32;
        let rollout = Rollout::from_episode(transitions, cfg.gamma, cfg.normalize_advantages);
        let batch = rollout.loss_batch();
        let (actor_loss, critic_loss, entropy) = match algo {
            PolicyAlgorithm::A2c => {
                let (parts, ga, gc) = a2c_backward(&actor, &critic, &batch, cfg.entropy_coef);
                actor_opt.apply(&mut actor, &ga, cfg.lr_actor);
                critic_opt.apply(&mut critic, &gc, cfg.lr_critic);
                (parts.actor_loss, parts.critic_loss, parts.entropy)
            }
            PolicyAlgorithm::Ppo => {
                let mut first = None;
                for _ in 0..cfg.ppo_epochs {
                    let (parts, ga, gc) = ppo_backward(&actor, &critic, &batch, &ppo_cfg);
                    first.get_or_insert(parts);
                    actor_opt.apply(&mut actor, &ga, cfg.lr_actor);
                    critic_opt.apply(&mut critic, &gc, cfg.lr_critic);
                }
                let parts = first.expect("ppo_epochs >= 1");
                (-parts.clip_objective, parts.value_loss, parts.entropy)
            }
        };
        log.episodes.push(EpisodeLog {
            episode,
            steps,
            total_reward,
            goal_reached,
            actor_loss,
            critic_loss,
            entropy,
        });
    }

    Ok(TrainResult {
        actor,
        critic,
        actor_opt,
        critic_opt,
        action_rng,
        log,
    })
}

/// Uniform draw over `0..n_actions`.
pub fn random_agent_action(rng: &mut impl Rng, n_actions: u16) -> u16 {
    assert!(n_actions > 0, "action space must be non-empty");
    rng.gen_range(0..n_actions)
}

/// A test-time actor: maps an observation to an action.
pub trait Agent {
    fn act(&mut self, obs: &Observation) -> u16;
}

/// Argmax over the policy logits; ties break toward the lowest id.
pub struct GreedyAgent {
    actor: ParamSet,
}

impl GreedyAgent {
    pub fn new(actor: ParamSet) -> Self {
        GreedyAgent { actor }
    }
}

impl Agent for GreedyAgent {
    fn act(&mut self, obs: &Observation) -> u16 {
        let logits = self.actor.output(&obs.as_f64());
        let mut best = 0usize;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        best as u16
    }
}

/// Draws from the policy distribution.
pub struct SamplingAgent {
    actor: ParamSet,
    rng: ChaCha8Rng,
}

impl SamplingAgent {
    pub fn new(actor: ParamSet, seed: u64) -> Self {
        SamplingAgent {
            actor,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for SamplingAgent {
    fn act(&mut self, obs: &Observation) -> u16 {
        let logits = self.actor.output(&obs.as_f64());
        let stats = policy_stats(&logits, 0);
        sample_action(&stats.probs, &mut self.rng)
    }
}

/// The baseline: uniform over the catalog.
pub struct RandomAgent {
    rng: ChaCha8Rng,
    n_actions: u16,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_actions: ACTION_COUNT as u16,
        }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, _obs: &Observation) -> u16 {
        random_agent_action(&mut self.rng, self.n_actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SimEnv;
    use crate::scenario::Scenario;
    use proptest::prelude::*;
    use std::sync::Arc;

    /// Direct double-loop evaluation of the discounted suffix sum.
    fn discounted_returns_oracle(rewards: &[f64], gamma: f64) -> Vec<f64> {
        (0..rewards.len())
            .map(|t| {
                rewards[t..]
                    .iter()
                    .enumerate()
                    .map(|(k, r)| gamma.powi(k as i32) * r)
                    .sum()
            })
            .collect()
    }

    #[test]
    fn discounted_returns_worked_example() {
        let returns = discounted_returns(&[-1.0, -1.0, 20.0], 0.99);
        let expected = [17.612, 18.8, 20.0];
        for (r, e) in returns.iter().zip(expected) {
            assert!((r - e).abs() < 1e-9, "{r} vs {e}");
        }
    }

    #[test]
    fn gamma_zero_returns_rewards() {
        let rewards = [3.0, -1.0, 0.5];
        assert_eq!(discounted_returns(&rewards, 0.0), rewards.to_vec());
    }

    #[test]
    fn gamma_one_gives_suffix_sums() {
        assert_eq!(
            discounted_returns(&[1.0, 1.0, 1.0], 1.0),
            vec![3.0, 2.0, 1.0]
        );
    }

    proptest! {
        #[test]
        fn returns_match_direct_summation(
            rewards in proptest::collection::vec(-20.0f64..20.0, 0..60),
            gamma_idx in 0usize..4,
        ) {
            let gamma = [0.0, 0.5, 0.99, 1.0][gamma_idx];
            let fast = discounted_returns(&rewards, gamma);
            let slow = discounted_returns_oracle(&rewards, gamma);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantages(&[1.0, 2.0], &[1.0, 2.0]), vec![0.0, 0.0]);
        assert_eq!(advantages(&[2.0], &[0.0]), vec![2.0]);
        let r = [0.5, -1.5, 3.0];
        let v = [0.25, 0.25, -1.0];
        let adv = advantages(&r, &v);
        for i in 0..3 {
            assert_eq!(adv[i], r[i] - v[i]);
        }
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn advantage_length_mismatch_panics() {
        advantages(&[1.0], &[1.0, 2.0]);
    }

    fn tiny_cfg(seed: u64, episodes: u32) -> TrainerConfig {
        TrainerConfig {
            episodes,
            hidden_dim: 16,
            step_budget: 40,
            ..TrainerConfig::new(seed)
        }
    }

    #[test]
    fn zero_episodes_leave_initial_parameters() {
        let cfg = tiny_cfg(9, 0);
        let mut env = SimEnv::new(
            Arc::new(Scenario::builtin("env1").unwrap()),
            cfg.goal,
            cfg.reward_scheme,
            cfg.step_budget,
        );
        let result = train(&mut env, PolicyAlgorithm::A2c, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(9, SALT_INIT));
        let expect_actor = ParamSet::init(OBS_LEN, 16, ACTION_COUNT, &mut rng);
        let expect_critic = ParamSet::init(OBS_LEN, 16, 1, &mut rng);
        assert_eq!(result.actor, expect_actor);
        assert_eq!(result.critic, expect_critic);
        assert!(result.log.episodes.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let run = |algo: PolicyAlgorithm| {
            let cfg = tiny_cfg(42, 12);
            let mut env = SimEnv::new(
                Arc::new(Scenario::builtin("env2").unwrap()),
                cfg.goal,
                cfg.reward_scheme,
                cfg.step_budget,
            );
            let r = train(&mut env, algo, &cfg).unwrap();
            (r.log.to_csv(), r.actor)
        };
        for algo in [PolicyAlgorithm::A2c, PolicyAlgorithm::Ppo] {
            let (log_a, actor_a) = run(algo);
            let (log_b, actor_b) = run(algo);
            assert_eq!(log_a, log_b);
            assert_eq!(actor_a, actor_b);
        }
    }

    #[test]
    fn per_step_mode_trains_and_logs() {
        let mut cfg = tiny_cfg(5, 4);
        cfg.a2c_per_step = true;
        let mut env = SimEnv::new(
            Arc::new(Scenario::builtin("env2").unwrap()),
            cfg.goal,
            cfg.reward_scheme,
            cfg.step_budget,
        );
        let result = train(&mut env, PolicyAlgorithm::A2c, &cfg).unwrap();
        assert_eq!(result.log.episodes.len(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(5, SALT_INIT));
        let init = ParamSet::init(OBS_LEN, 16, ACTION_COUNT, &mut rng);
        assert_ne!(result.actor, init);
    }

    #[test]
    fn random_agent_single_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_agent_action(&mut rng, 1), 0);
    }

    #[test]
    fn random_agent_uniformity_chi_square() {
        // 1e5 draws over 99 actions; chi-square with 98 degrees of freedom
        // stays under the 147.1 critical value (alpha = 0.001).
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 100_000;
        let mut counts = [0u32; 99];
        for _ in 0..n {
            counts[random_agent_action(&mut rng, 99) as usize] += 1;
        }
        let expected = f64::from(n) / 99.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = f64::from(c) - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 147.1, "chi-square statistic {chi2}");
    }

    #[test]
    fn random_agent_seed_determinism() {
        let draws = |seed| {
            let mut agent = RandomAgent::new(seed);
            let obs = Observation([0; OBS_LEN]);
            (0..32).map(|_| agent.act(&obs)).collect::<Vec<_>>()
        };
        assert_eq!(draws(7), draws(7));
        assert_ne!(draws(7), draws(8));
    }

    #[test]
    fn greedy_agent_picks_argmax() {
        let mut actor = ParamSet::zeros(OBS_LEN, 4, ACTION_COUNT);
        // Bias one output unit upward.
        actor.b2[42] = 1.0;
        let mut agent = GreedyAgent::new(actor);
        assert_eq!(agent.act(&Observation([0; OBS_LEN])), 42);
    }
}
