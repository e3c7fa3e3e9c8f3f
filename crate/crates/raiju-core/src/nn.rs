//! Dense two-layer network kernel (tanh hidden layer) in 64-bit floats:
//! forward passes, softmax policy statistics, the backprop building block,
//! and a central-finite-difference gradient oracle.
//!
//! All functions are pure over explicit state; identical inputs give
//! bitwise-identical outputs.

use rand::Rng;

/// Parameters of one network: `output = W2 * tanh(W1 * x + b1) + b2`.
/// Shapes are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    /// `hidden_dim x in_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `out_dim x hidden_dim`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        ParamSet {
            in_dim,
            hidden_dim,
            out_dim,
            w1: vec![0.0; hidden_dim * in_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; out_dim * hidden_dim],
            b2: vec![0.0; out_dim],
        }
    }

    /// Seeded init: uniform in `±1/sqrt(fan_in)` per layer, zero biases.
    pub fn init(in_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = ParamSet::zeros(in_dim, hidden_dim, out_dim);
        let bound1 = 1.0 / (in_dim as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.gen_range(-bound1..bound1);
        }
        let bound2 = 1.0 / (hidden_dim as f64).sqrt();
        for w in &mut p.w2 {
            *w = rng.gen_range(-bound2..bound2);
        }
        p
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.in_dim, self.hidden_dim, self.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Forward pass keeping the hidden activation for backprop.
    pub fn forward(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.in_dim, "input length mismatch");
        let mut hidden = vec![0.0; self.hidden_dim];
        for (h, (row, b)) in hidden
            .iter_mut()
            .zip(self.w1.chunks_exact(self.in_dim).zip(&self.b1))
        {
            let mut z = *b;
            for (w, xi) in row.iter().zip(x) {
                z += w * xi;
            }
            *h = z.tanh();
        }
        let mut output = vec![0.0; self.out_dim];
        for (o, (row, b)) in output
            .iter_mut()
            .zip(self.w2.chunks_exact(self.hidden_dim).zip(&self.b2))
        {
            let mut z = *b;
            for (w, hi) in row.iter().zip(&hidden) {
                z += w * hi;
            }
            *o = z;
        }
        ForwardCache { hidden, output }
    }

    /// Forward pass returning the output vector only.
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).output
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// Actor network pass: logits over the action catalog.
pub fn actor_forward(params: &ParamSet, obs: &[f64]) -> Vec<f64> {
    params.output(obs)
}

/// Critic network pass: scalar state value.
pub fn critic_forward(params: &ParamSet, obs: &[f64]) -> f64 {
    let (_, _, out_dim) = params.dims();
    assert_eq!(out_dim, 1, "critic network must have a single output unit");
    params.output(obs)[0]
}

/// Softmax policy statistics for one logit vector, computed max-shifted.
#[derive(Debug, Clone)]
pub struct PolicyStats {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Log-probability of the queried action.
    pub log_prob: f64,
    pub entropy: f64,
}

pub fn policy_stats(logits: &[f64], action: u16) -> PolicyStats {
    assert!((action as usize) < logits.len(), "action outside logits");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &z in logits {
        sum += (z - max).exp();
    }
    let log_sum = sum.ln();
    let mut probs = Vec::with_capacity(logits.len());
    let mut log_probs = Vec::with_capacity(logits.len());
    let mut entropy = 0.0;
    for &z in logits {
        let lp = z - max - log_sum;
        let p = lp.exp();
        entropy -= p * lp;
        probs.push(p);
        log_probs.push(lp);
    }
    PolicyStats {
        log_prob: log_probs[action as usize],
        probs,
        log_probs,
        entropy,
    }
}

/// Categorical sample from a probability vector.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> u16 {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i as u16;
        }
    }
    (probs.len() - 1) as u16
}

/// Gradient accumulator, shape-congruent with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let (in_dim, hidden_dim, out_dim) = params.dims();
        GradSet {
            in_dim,
            hidden_dim,
            out_dim,
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.in_dim, self.hidden_dim, self.out_dim)
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Accumulates the gradient of a scalar loss given its gradient with
    /// respect to the network output for one sample.
    pub fn accumulate(
        &mut self,
        params: &ParamSet,
        x: &[f64],
        cache: &ForwardCache,
        d_output: &[f64],
    ) {
        assert_eq!(
            self.dims(),
            params.dims(),
            "gradient/parameter shape mismatch"
        );
        assert_eq!(d_output.len(), self.out_dim);
        assert_eq!(x.len(), self.in_dim);
        // Output layer.
        let mut d_hidden = vec![0.0; self.hidden_dim];
        for (o, &dz) in d_output.iter().enumerate() {
            self.b2[o] += dz;
            let base = o * self.hidden_dim;
            for h in 0..self.hidden_dim {
                self.w2[base + h] += dz * cache.hidden[h];
                d_hidden[h] += dz * params.w2[base + h];
            }
        }
        // Hidden layer through the tanh.
        for h in 0..self.hidden_dim {
            let a = cache.hidden[h];
            let dz = d_hidden[h] * (1.0 - a * a);
            self.b1[h] += dz;
            let base = h * self.in_dim;
            for (i, xi) in x.iter().enumerate() {
                self.w1[base + i] += dz * xi;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for g in t.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|g| g.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Central finite differences of `loss_fn` over every parameter:
/// `(L(p + eps) - L(p - eps)) / (2 eps)`.
pub fn finite_diff_grad(
    loss_fn: impl Fn(&ParamSet) -> f64,
    params: &ParamSet,
    eps: f64,
) -> GradSet {
    let mut grads = GradSet::zeros_like(params);
    let mut probe = params.clone();
    for t in 0..4 {
        let len = probe.tensors()[t].len();
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + eps;
            let plus = loss_fn(&probe);
            probe.tensors_mut()[t][i] = orig - eps;
            let minus = loss_fn(&probe);
            probe.tensors_mut()[t][i] = orig;
            grads.tensors_mut()[t][i] = (plus - minus) / (2.0 * eps);
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ACTION_COUNT;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_outputs() {
        let actor = ParamSet::zeros(11, 8, ACTION_COUNT);
        let logits = actor_forward(&actor, &[1.0; 11]);
        assert_eq!(logits.len(), ACTION_COUNT);
        assert!(logits.iter().all(|&z| z == 0.0));
        let critic = ParamSet::zeros(11, 8, 1);
        assert_eq!(critic_forward(&critic, &[0.5; 11]), 0.0);
    }

    #[test]
    fn forward_matches_hand_computed_toy() {
        let mut p = ParamSet::zeros(2, 2, 2);
        p.w1 = vec![0.1, 0.2, 0.3, -0.4];
        p.b1 = vec![0.05, -0.05];
        p.w2 = vec![1.0, -1.0, 0.5, 0.25];
        p.b2 = vec![0.1, -0.1];
        let x = [1.0, -1.0];
        let out = p.output(&x);
        // By hand: z1 = [0.1 - 0.2 + 0.05, 0.3 + 0.4 - 0.05]
        let h0 = (-0.05f64).tanh();
        let h1 = (0.65f64).tanh();
        assert!((out[0] - (h0 - h1 + 0.1)).abs() < 1e-12);
        assert!((out[1] - (0.5 * h0 + 0.25 * h1 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = ParamSet::init(11, 32, ACTION_COUNT, &mut rng);
        let x = [1.0, 0.0, -1.0, 1.0, 1.0, -1.0, -1.0, 0.0, 4.0, 0.0, 1.0];
        assert_eq!(p.output(&x), p.output(&x));
    }

    #[test]
    fn uniform_policy_stats() {
        let logits = vec![0.0; ACTION_COUNT];
        let stats = policy_stats(&logits, 0);
        let ln99 = (ACTION_COUNT as f64).ln();
        for &p in &stats.probs {
            assert!((p - 1.0 / 99.0).abs() < 1e-12);
        }
        assert!((stats.entropy - ln99).abs() < 1e-9);
        assert!((stats.log_prob - (-ln99)).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_collapses_distribution() {
        let mut logits = vec![0.0; ACTION_COUNT];
        logits[42] = 1000.0;
        let stats = policy_stats(&logits, 42);
        assert!((stats.probs[42] - 1.0).abs() < 1e-12);
        assert!(stats.entropy.abs() < 1e-9);
    }

    #[test]
    fn two_action_softmax_example() {
        let stats = policy_stats(&[0.0, 3.0f64.ln()], 0);
        assert!((stats.probs[0] - 0.25).abs() < 1e-12);
        assert!((stats.probs[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        use proptest::prelude::*;
        proptest!(|(logits in proptest::collection::vec(-30.0f64..30.0, 2..99), shift in -50.0f64..50.0)| {
            let base = policy_stats(&logits, 0);
            let shifted_logits: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let shifted = policy_stats(&shifted_logits, 0);
            for (a, b) in base.probs.iter().zip(&shifted.probs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let argmax = |probs: &[f64]| {
                probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
            };
            prop_assert_eq!(argmax(&base.probs), argmax(&shifted.probs));
            prop_assert!((base.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        });
    }

    #[test]
    fn sample_one_hot_is_certain() {
        let mut probs = vec![0.0; 10];
        probs[7] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_action(&probs, &mut rng), 7);
        }
    }

    #[test]
    fn sample_is_seed_deterministic() {
        let probs = vec![1.0 / 99.0; 99];
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            assert_eq!(sample_action(&probs, &mut a), sample_action(&probs, &mut b));
        }
    }

    #[test]
    fn sample_frequencies_match_uniform() {
        // 1e5 draws from the uniform 99-way distribution; every action's
        // frequency must sit within 5 binomial standard deviations.
        let probs = vec![1.0 / 99.0; 99];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000usize;
        let mut counts = vec![0u32; 99];
        for _ in 0..n {
            counts[sample_action(&probs, &mut rng) as usize] += 1;
        }
        let p = 1.0 / 99.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for &c in &counts {
            let freq = f64::from(c) / n as f64;
            assert!((freq - p).abs() < 5.0 * sigma, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let mut p = ParamSet::zeros(1, 1, 1);
        p.w1[0] = 3.0;
        let g = finite_diff_grad(|p| p.w1[0] * p.w1[0], &p, 1e-5);
        assert!((g.w1[0] - 6.0).abs() < 1e-6);
        assert_eq!(g.b1[0], 0.0);
        assert_eq!(g.w2[0], 0.0);
    }

    #[test]
    fn finite_diff_on_constant_is_zero() {
        let p = ParamSet::zeros(3, 4, 2);
        let g = finite_diff_grad(|_| 1.25, &p, 1e-5);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn critic_mse_bias_gradient_hand_case() {
        // Zero weights, V = 0, target R = 2: d mean[(V - R)^2] / db2 = static
        // 2 (V - R) = -4 for a single-sample batch.
        let p = ParamSet::zeros(2, 2, 1);
        let x = [0.3, -0.7];
        let cache = p.forward(&x);
        let mut g = GradSet::zeros_like(&p);
        let d_output = [2.0 * (cache.output[0] - 2.0)];
        g.accumulate(&p, &x, &cache, &d_output);
        assert!((g.b2[0] - (-4.0)).abs() < 1e-12);
        // Hidden activations are zero, so every weight gradient vanishes.
        assert_eq!(g.w2.iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0);
        assert_eq!(g.w1.iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0);
    }
}
