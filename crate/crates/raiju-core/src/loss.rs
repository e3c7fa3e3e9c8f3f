//! Batch losses for the two training algorithms, with analytic gradients.
//! Every gradient here is cross-checked against the finite-difference oracle
//! (see the gradcheck module and the acceptance suite).

use std::fmt;
use std::str::FromStr;

use crate::nn::{policy_stats, GradSet, ParamSet};

/// One update batch: per-sample observations, taken actions, and the
/// quantities frozen at collection time.
#[derive(Debug, Clone, Default)]
pub struct LossBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<u16>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Log-probabilities under the collection-time policy (PPO ratios).
    pub old_log_probs: Vec<f64>,
}

impl LossBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn check(&self, need_old: bool) {
        assert!(!self.is_empty(), "loss batch must be non-empty");
        assert_eq!(self.actions.len(), self.len());
        assert_eq!(self.advantages.len(), self.len());
        assert_eq!(self.returns.len(), self.len());
        if need_old {
            assert_eq!(self.old_log_probs.len(), self.len());
        }
    }
}

/// Critic regression form. `Mse` is the default; `HalvedSelfBaseline` is the
/// alternative `0.5 * mean((V - (R - V))^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueLossForm {
    #[default]
    Mse,
    HalvedSelfBaseline,
}

impl ValueLossForm {
    fn value(self, v: f64, ret: f64) -> f64 {
        match self {
            ValueLossForm::Mse => (v - ret) * (v - ret),
            ValueLossForm::HalvedSelfBaseline => {
                let d = v - (ret - v);
                0.5 * d * d
            }
        }
    }

    fn d_value(self, v: f64, ret: f64) -> f64 {
        match self {
            ValueLossForm::Mse => 2.0 * (v - ret),
            ValueLossForm::HalvedSelfBaseline => 2.0 * (2.0 * v - ret),
        }
    }
}

impl fmt::Display for ValueLossForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueLossForm::Mse => write!(f, "mse"),
            ValueLossForm::HalvedSelfBaseline => write!(f, "halved-self-baseline"),
        }
    }
}

impl FromStr for ValueLossForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(ValueLossForm::Mse),
            "halved-self-baseline" => Ok(ValueLossForm::HalvedSelfBaseline),
            other => Err(format!(
                "unknown value loss form {other:?} (expected mse or halved-self-baseline)"
            )),
        }
    }
}

/// Entropy gradient helper: `dH/dz_k = -p_k (log p_k + H)`; this returns the
/// positive product used when the loss subtracts the entropy bonus.
#[inline]
fn entropy_term(p: f64, lp: f64, entropy: f64) -> f64 {
    p * (lp + entropy)
}

// --- A2C --------------------------------------------------------------------

/// Loss components of one actor-critic batch. `total` is
/// `actor_loss + critic_loss - entropy_coef * entropy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cLossParts {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Scalar A2C loss: mean `-log pi(a|s) * advantage` for the actor (with the
/// advantage treated as a constant), mean squared error `(V - R)^2` for the
/// critic, and the mean policy entropy bonus.
pub fn a2c_loss(
    actor: &ParamSet,
    critic: &ParamSet,
    batch: &LossBatch,
    entropy_coef: f64,
) -> A2cLossParts {
    batch.check(false);
    let t = batch.len() as f64;
    let mut actor_loss = 0.0;
    let mut critic_loss = 0.0;
    let mut entropy = 0.0;
    for i in 0..batch.len() {
        let logits = actor.output(&batch.obs[i]);
        let stats = policy_stats(&logits, batch.actions[i]);
        actor_loss += -stats.log_prob * batch.advantages[i];
        entropy += stats.entropy;
        let v = critic.output(&batch.obs[i])[0];
        critic_loss += ValueLossForm::Mse.value(v, batch.returns[i]);
    }
    actor_loss /= t;
    critic_loss /= t;
    entropy /= t;
    A2cLossParts {
        actor_loss,
        critic_loss,
        entropy,
        total: actor_loss + critic_loss - entropy_coef * entropy,
    }
}

/// Analytic gradients of the A2C total loss with respect to both networks.
pub fn a2c_backward(
    actor: &ParamSet,
    critic: &ParamSet,
    batch: &LossBatch,
    entropy_coef: f64,
) -> (A2cLossParts, GradSet, GradSet) {
    batch.check(false);
    let t = batch.len() as f64;
    let n_actions = actor.dims().2;
    let mut actor_grad = GradSet::zeros_like(actor);
    let mut critic_grad = GradSet::zeros_like(critic);
    let mut actor_loss = 0.0;
    let mut critic_loss = 0.0;
    let mut entropy = 0.0;
    let mut d_logits = vec![0.0; n_actions];
    for i in 0..batch.len() {
        let obs = &batch.obs[i];
        let action = batch.actions[i] as usize;
        let adv = batch.advantages[i];
        let cache = actor.forward(obs);
        let stats = policy_stats(&cache.output, batch.actions[i]);
        actor_loss += -stats.log_prob * adv;
        entropy += stats.entropy;
        for k in 0..n_actions {
            let one_hot = if k == action { 1.0 } else { 0.0 };
            d_logits[k] = (adv / t) * (stats.probs[k] - one_hot)
                + (entropy_coef / t)
                    * entropy_term(stats.probs[k], stats.log_probs[k], stats.entropy);
        }
        actor_grad.accumulate(actor, obs, &cache, &d_logits);

        let c_cache = critic.forward(obs);
        let v = c_cache.output[0];
        critic_loss += ValueLossForm::Mse.value(v, batch.returns[i]);
        let d_v = [ValueLossForm::Mse.d_value(v, batch.returns[i]) / t];
        critic_grad.accumulate(critic, obs, &c_cache, &d_v);
    }
    actor_loss /= t;
    critic_loss /= t;
    entropy /= t;
    let parts = A2cLossParts {
        actor_loss,
        critic_loss,
        entropy,
        total: actor_loss + critic_loss - entropy_coef * entropy,
    };
    (parts, actor_grad, critic_grad)
}

// --- PPO --------------------------------------------------------------------

/// PPO objective knobs.
#[derive(Debug, Clone, Copy)]
pub struct PpoLossConfig {
    pub eps_clip: f64,
    /// Critic weight c1.
    pub value_coef: f64,
    /// Entropy weight c2.
    pub entropy_coef: f64,
    pub value_loss_form: ValueLossForm,
}

/// Loss components of one PPO batch. `total` is the minimized scalar
/// `-clip_objective + value_coef * value_loss - entropy_coef * entropy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoLossParts {
    pub clip_objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// The clipped surrogate term for one sample:
/// `min(ratio * adv, clamp(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn ppo_clip_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    debug_assert!(ratio > 0.0, "policy ratios are positive");
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * adv).min(clipped * adv)
}

/// Scalar PPO loss over a batch carrying collection-time log-probabilities.
pub fn ppo_loss(
    actor: &ParamSet,
    critic: &ParamSet,
    batch: &LossBatch,
    cfg: &PpoLossConfig,
) -> PpoLossParts {
    batch.check(true);
    let t = batch.len() as f64;
    let mut clip_objective = 0.0;
    let mut value_loss = 0.0;
    let mut entropy = 0.0;
    for i in 0..batch.len() {
        let logits = actor.output(&batch.obs[i]);
        let stats = policy_stats(&logits, batch.actions[i]);
        let ratio = (stats.log_prob - batch.old_log_probs[i]).exp();
        clip_objective += ppo_clip_term(ratio, batch.advantages[i], cfg.eps_clip);
        entropy += stats.entropy;
        let v = critic.output(&batch.obs[i])[0];
        value_loss += cfg.value_loss_form.value(v, batch.returns[i]);
    }
    clip_objective /= t;
    value_loss /= t;
    entropy /= t;
    PpoLossParts {
        clip_objective,
        value_loss,
        entropy,
        total: -clip_objective + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
    }
}

/// Analytic gradients of the minimized PPO scalar with respect to both
/// networks. Samples where the clipped branch of the surrogate is active
/// contribute no policy gradient.
pub fn ppo_backward(
    actor: &ParamSet,
    critic: &ParamSet,
    batch: &LossBatch,
    cfg: &PpoLossConfig,
) -> (PpoLossParts, GradSet, GradSet) {
    batch.check(true);
    let t = batch.len() as f64;
    let n_actions = actor.dims().2;
    let mut actor_grad = GradSet::zeros_like(actor);
    let mut critic_grad = GradSet::zeros_like(critic);
    let mut clip_objective = 0.0;
    let mut value_loss = 0.0;
    let mut entropy = 0.0;
    let mut d_logits = vec![0.0; n_actions];
    for i in 0..batch.len() {
        let obs = &batch.obs[i];
        let action = batch.actions[i] as usize;
        let adv = batch.advantages[i];
        let cache = actor.forward(obs);
        let stats = policy_stats(&cache.output, batch.actions[i]);
        let ratio = (stats.log_prob - batch.old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip) * adv;
        clip_objective += unclipped.min(clipped);
        entropy += stats.entropy;
        // The surrogate enters the loss negated; when the min selects the
        // clipped branch the ratio is saturated and the gradient vanishes.
        let coef = if unclipped <= clipped {
            -(adv * ratio) / t
        } else {
            0.0
        };
        for k in 0..n_actions {
            let one_hot = if k == action { 1.0 } else { 0.0 };
            d_logits[k] = coef * (one_hot - stats.probs[k])
                + (cfg.entropy_coef / t)
                    * entropy_term(stats.probs[k], stats.log_probs[k], stats.entropy);
        }
        actor_grad.accumulate(actor, obs, &cache, &d_logits);

        let c_cache = critic.forward(obs);
        let v = c_cache.output[0];
        value_loss += cfg.value_loss_form.value(v, batch.returns[i]);
        let d_v = [cfg.value_coef * cfg.value_loss_form.d_value(v, batch.returns[i]) / t];
        critic_grad.accumulate(critic, obs, &c_cache, &d_v);
    }
    clip_objective /= t;
    value_loss /= t;
    entropy /= t;
    let parts = PpoLossParts {
        clip_objective,
        value_loss,
        entropy,
        total: -clip_objective + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
    };
    (parts, actor_grad, critic_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ACTION_COUNT;
    use crate::nn::finite_diff_grad;
    use crate::optim::{OptimizerKind, OptimizerState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_sample_batch() -> LossBatch {
        LossBatch {
            obs: vec![vec![0.0; 11]],
            actions: vec![0],
            advantages: vec![2.0],
            returns: vec![2.0],
            old_log_probs: vec![-(ACTION_COUNT as f64).ln()],
        }
    }

    #[test]
    fn a2c_loss_uniform_policy_example() {
        // Zero parameters give the uniform policy and V = 0.
        let actor = ParamSet::zeros(11, 4, ACTION_COUNT);
        let critic = ParamSet::zeros(11, 4, 1);
        let parts = a2c_loss(&actor, &critic, &single_sample_batch(), 0.01);
        let ln99 = (ACTION_COUNT as f64).ln();
        assert!((parts.actor_loss - 2.0 * ln99).abs() < 1e-9);
        assert!((parts.actor_loss - 9.1902).abs() < 1e-3);
        assert!((parts.critic_loss - 4.0).abs() < 1e-12);
        assert!((parts.entropy - ln99).abs() < 1e-9);
        assert!((parts.total - (2.0 * ln99 + 4.0 - 0.01 * ln99)).abs() < 1e-9);
        assert!((parts.total - 13.1442).abs() < 1e-3);
    }

    #[test]
    fn clip_term_examples() {
        assert!((ppo_clip_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((ppo_clip_term(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-12);
        for adv in [-3.0, -0.5, 0.0, 0.5, 3.0] {
            assert_eq!(ppo_clip_term(1.0, adv, 0.2), adv);
        }
    }

    #[test]
    fn first_pass_ratios_are_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = ParamSet::init(11, 8, ACTION_COUNT, &mut rng);
        let critic = ParamSet::init(11, 8, 1, &mut rng);
        let obs: Vec<f64> = vec![0.0, 0.0, 1.0, 1.0, 1.0, -1.0, -1.0, 0.0, 4.0, 0.0, 1.0];
        let stats = policy_stats(&actor.output(&obs), 5);
        let batch = LossBatch {
            obs: vec![obs],
            actions: vec![5],
            advantages: vec![1.5],
            returns: vec![2.0],
            old_log_probs: vec![stats.log_prob],
        };
        let cfg = PpoLossConfig {
            eps_clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            value_loss_form: ValueLossForm::Mse,
        };
        let parts = ppo_loss(&actor, &critic, &batch, &cfg);
        // ratio == 1 exactly, so the surrogate equals the raw advantage.
        assert_eq!(parts.clip_objective, 1.5);
    }

    #[test]
    fn zero_advantage_zeroes_the_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let actor = ParamSet::init(11, 6, ACTION_COUNT, &mut rng);
        let critic = ParamSet::init(11, 6, 1, &mut rng);
        let obs: Vec<f64> = vec![1.0; 11];
        let old = policy_stats(&actor.output(&obs), 3).log_prob;
        let batch = LossBatch {
            obs: vec![obs],
            actions: vec![3],
            advantages: vec![0.0],
            returns: vec![1.0],
            old_log_probs: vec![old],
        };
        let cfg = PpoLossConfig {
            eps_clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            value_loss_form: ValueLossForm::Mse,
        };
        let (_, actor_grad, critic_grad) = ppo_backward(&actor, &critic, &batch, &cfg);
        assert_eq!(actor_grad.max_abs(), 0.0);
        assert!(critic_grad.max_abs() > 0.0);
    }

    #[test]
    fn a2c_gradients_match_finite_differences_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let actor = ParamSet::init(4, 5, 6, &mut rng);
        let critic = ParamSet::init(4, 5, 1, &mut rng);
        let batch = LossBatch {
            obs: vec![vec![0.5, -1.0, 0.0, 1.0], vec![1.0, 1.0, -1.0, 0.0]],
            actions: vec![2, 4],
            advantages: vec![1.0, -0.5],
            returns: vec![2.0, -1.0],
            old_log_probs: vec![],
        };
        let beta = 0.01;
        let (_, ga, gc) = a2c_backward(&actor, &critic, &batch, beta);
        let fd_a = finite_diff_grad(|p| a2c_loss(p, &critic, &batch, beta).total, &actor, 1e-5);
        let fd_c = finite_diff_grad(|p| a2c_loss(&actor, p, &batch, beta).total, &critic, 1e-5);
        for (a, f) in ga.tensors().iter().zip(fd_a.tensors()) {
            for (x, y) in a.iter().zip(f.iter()) {
                assert!((x - y).abs() <= 1e-6 + 1e-4 * x.abs().max(y.abs()));
            }
        }
        for (a, f) in gc.tensors().iter().zip(fd_c.tensors()) {
            for (x, y) in a.iter().zip(f.iter()) {
                assert!((x - y).abs() <= 1e-6 + 1e-4 * x.abs().max(y.abs()));
            }
        }
    }

    #[test]
    fn a2c_update_raises_probability_of_positive_advantage_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut actor = ParamSet::init(3, 4, 2, &mut rng);
        let critic = ParamSet::init(3, 4, 1, &mut rng);
        let obs = vec![0.5, -0.3, 1.0];
        let before = policy_stats(&actor.output(&obs), 1).probs[1];
        let batch = LossBatch {
            obs: vec![obs.clone()],
            actions: vec![1],
            advantages: vec![1.0],
            returns: vec![1.0],
            old_log_probs: vec![],
        };
        let (_, ga, _) = a2c_backward(&actor, &critic, &batch, 0.0);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, &actor);
        opt.apply(&mut actor, &ga, 0.05);
        let after = policy_stats(&actor.output(&obs), 1).probs[1];
        assert!(after > before, "{after} should exceed {before}");
    }

    #[test]
    fn ppo_update_does_not_lower_positive_advantage_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut actor = ParamSet::init(3, 4, 2, &mut rng);
        let critic = ParamSet::init(3, 4, 1, &mut rng);
        let obs = vec![0.2, 0.9, -0.4];
        let stats = policy_stats(&actor.output(&obs), 0);
        let before = stats.probs[0];
        let batch = LossBatch {
            obs: vec![obs.clone()],
            actions: vec![0],
            advantages: vec![1.0],
            returns: vec![1.0],
            old_log_probs: vec![stats.log_prob],
        };
        let cfg = PpoLossConfig {
            eps_clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            value_loss_form: ValueLossForm::Mse,
        };
        let (_, ga, _) = ppo_backward(&actor, &critic, &batch, &cfg);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, &actor);
        opt.apply(&mut actor, &ga, 0.05);
        let after = policy_stats(&actor.output(&obs), 0).probs[0];
        assert!(after >= before);
    }

    #[test]
    fn larger_entropy_coefficient_raises_post_update_entropy() {
        let run = |beta: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            let mut actor = ParamSet::init(3, 4, 5, &mut rng);
            let critic = ParamSet::init(3, 4, 1, &mut rng);
            let obs = vec![0.7, -0.7, 0.1];
            let batch = LossBatch {
                obs: vec![obs.clone()],
                actions: vec![2],
                advantages: vec![1.0],
                returns: vec![0.5],
                old_log_probs: vec![],
            };
            let (_, ga, _) = a2c_backward(&actor, &critic, &batch, beta);
            let mut opt = OptimizerState::new(OptimizerKind::Sgd, &actor);
            opt.apply(&mut actor, &ga, 0.1);
            policy_stats(&actor.output(&obs), 2).entropy
        };
        assert!(run(0.5) > run(0.0));
    }

    #[test]
    fn halved_self_baseline_form_differs_from_mse() {
        assert_eq!(ValueLossForm::Mse.value(1.0, 3.0), 4.0);
        // 0.5 * (2*1 - 3)^2 = 0.5
        assert_eq!(ValueLossForm::HalvedSelfBaseline.value(1.0, 3.0), 0.5);
    }
}
