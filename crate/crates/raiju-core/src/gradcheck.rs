//! Gradient verification: compares the analytic gradients of both loss
//! families against central finite differences over freshly seeded networks
//! and batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::ACTION_COUNT;
use crate::loss::{
    a2c_backward, a2c_loss, ppo_backward, ppo_loss, LossBatch, PpoLossConfig, ValueLossForm,
};
use crate::nn::{finite_diff_grad, policy_stats, GradSet, ParamSet};
use crate::observation::OBS_LEN;
use crate::rl::derive_seed;

/// Log-ratio offsets cycled through the batch so PPO ratios land well inside
/// and well outside the clip band, away from the kinks at `1 ± eps`.
const RATIO_OFFSETS: [f64; 5] = [0.0, 0.05, -0.05, 0.5, -0.5];

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub seeds: u32,
    pub base_seed: u64,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Perturbs one analytic gradient entry; the check must then fail.
    pub inject_bug: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seeds: 20,
            base_seed: 0,
            hidden_dim: 16,
            batch_size: 5,
            eps: 1e-5,
            tolerance: 1e-4,
            inject_bug: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckTrial {
    pub seed: u64,
    pub loss: &'static str,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub trials: Vec<GradCheckTrial>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error between analytic and finite-difference gradients, skipping
/// entries where both magnitudes sit under 1e-6.
fn max_rel_err(analytic: &GradSet, fd: &GradSet) -> f64 {
    let mut worst = 0.0f64;
    for (a, f) in analytic.tensors().iter().zip(fd.tensors()) {
        for (x, y) in a.iter().zip(f.iter()) {
            let scale = x.abs().max(y.abs());
            if scale <= 1e-6 {
                continue;
            }
            worst = worst.max((x - y).abs() / scale);
        }
    }
    worst
}

fn random_obs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Observation-like integer features.
    let mut obs = Vec::with_capacity(OBS_LEN);
    for i in 0..OBS_LEN {
        let v: i32 = match i {
            8 => rng.gen_range(0..5),
            9 => rng.gen_range(0..4),
            _ => rng.gen_range(-1..2),
        };
        obs.push(f64::from(v));
    }
    obs
}

fn random_batch(rng: &mut ChaCha8Rng, actor: &ParamSet, size: usize) -> LossBatch {
    let mut batch = LossBatch::default();
    for i in 0..size {
        let obs = random_obs(rng);
        let action = rng.gen_range(0..ACTION_COUNT as u16);
        let stats = policy_stats(&actor.output(&obs), action);
        batch
            .old_log_probs
            .push(stats.log_prob - RATIO_OFFSETS[i % RATIO_OFFSETS.len()]);
        batch.obs.push(obs);
        batch.actions.push(action);
        // Kept small: the loss magnitude bounds the finite-difference
        // roundoff noise, which must stay well under the relative tolerance
        // even for gradient entries just above the 1e-6 magnitude cutoff.
        batch.advantages.push(rng.gen_range(-0.5..0.5));
        batch.returns.push(rng.gen_range(-0.5..0.5));
    }
    batch
}

/// Runs the full comparison across `cfg.seeds` seeds and both loss families.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> GradCheckReport {
    let mut trials = Vec::with_capacity(cfg.seeds as usize * 2);
    for trial in 0..cfg.seeds {
        let seed = derive_seed(cfg.base_seed, 0x6C6B_0000 + u64::from(trial));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = ParamSet::init(OBS_LEN, cfg.hidden_dim, ACTION_COUNT, &mut rng);
        let critic = ParamSet::init(OBS_LEN, cfg.hidden_dim, 1, &mut rng);
        let batch = random_batch(&mut rng, &actor, cfg.batch_size);

        let beta = 0.01;
        let (_, mut a2c_actor_grad, a2c_critic_grad) = a2c_backward(&actor, &critic, &batch, beta);
        if cfg.inject_bug {
            a2c_actor_grad.w1[0] += 1e-2;
        }
        let fd_actor = finite_diff_grad(
            |p| a2c_loss(p, &critic, &batch, beta).total,
            &actor,
            cfg.eps,
        );
        let fd_critic = finite_diff_grad(
            |p| a2c_loss(&actor, p, &batch, beta).total,
            &critic,
            cfg.eps,
        );
        trials.push(GradCheckTrial {
            seed,
            loss: "a2c",
            max_rel_err: max_rel_err(&a2c_actor_grad, &fd_actor)
                .max(max_rel_err(&a2c_critic_grad, &fd_critic)),
        });

        let ppo_cfg = PpoLossConfig {
            eps_clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            value_loss_form: ValueLossForm::Mse,
        };
        let (_, mut ppo_actor_grad, ppo_critic_grad) =
            ppo_backward(&actor, &critic, &batch, &ppo_cfg);
        if cfg.inject_bug {
            ppo_actor_grad.w1[0] += 1e-2;
        }
        let fd_actor = finite_diff_grad(
            |p| ppo_loss(p, &critic, &batch, &ppo_cfg).total,
            &actor,
            cfg.eps,
        );
        let fd_critic = finite_diff_grad(
            |p| ppo_loss(&actor, p, &batch, &ppo_cfg).total,
            &critic,
            cfg.eps,
        );
        trials.push(GradCheckTrial {
            seed,
            loss: "ppo",
            max_rel_err: max_rel_err(&ppo_actor_grad, &fd_actor)
                .max(max_rel_err(&ppo_critic_grad, &fd_critic)),
        });
    }
    let max = trials.iter().fold(0.0f64, |m, t| m.max(t.max_rel_err));
    GradCheckReport {
        trials,
        max_rel_err: max,
        tolerance: cfg.tolerance,
        pass: max <= cfg.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes() {
        let report = run_gradcheck(&GradCheckConfig {
            seeds: 3,
            ..GradCheckConfig::default()
        });
        assert!(report.pass, "max rel err {}", report.max_rel_err);
        assert_eq!(report.trials.len(), 6);
    }

    #[test]
    fn injected_bug_is_detected() {
        let report = run_gradcheck(&GradCheckConfig {
            seeds: 1,
            inject_bug: true,
            ..GradCheckConfig::default()
        });
        assert!(!report.pass);
    }
}
