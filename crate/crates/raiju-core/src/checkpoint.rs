//! Binary checkpoints: a versioned record of named parameter arrays with
//! explicit shapes plus the optimizer and rng state needed to resume.
//! Serialization is bit-exact: write, read, write again gives identical
//! bytes.

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Goal, RewardScheme};
use crate::nn::ParamSet;
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rl::{Algorithm, TrainResult};

const MAGIC: &[u8; 8] = b"RJSIMCKP";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Everything a training run produces, ready to evaluate or resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub scenario: String,
    pub reward_scheme: RewardScheme,
    pub goal: Goal,
    pub episodes_trained: u32,
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn from_training(
        algorithm: Algorithm,
        scenario: &str,
        reward_scheme: RewardScheme,
        goal: Goal,
        episodes_trained: u32,
        result: &TrainResult,
    ) -> Self {
        Checkpoint {
            algorithm,
            scenario: scenario.to_string(),
            reward_scheme,
            goal,
            episodes_trained,
            actor: result.actor.clone(),
            critic: result.critic.clone(),
            actor_opt: result.actor_opt.clone(),
            critic_opt: result.critic_opt.clone(),
            rng_seed: result.action_rng.get_seed(),
            rng_word_pos: result.action_rng.get_word_pos(),
        }
    }

    /// Rebuilds the action rng exactly where training left it.
    pub fn action_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.string(&self.algorithm.to_string());
        w.string(&self.scenario);
        w.string(&self.reward_scheme.to_string());
        w.string(&self.goal.to_string());
        w.u32(self.episodes_trained);
        let (in_dim, hidden_dim, out_dim) = self.actor.dims();
        w.u32(in_dim as u32);
        w.u32(hidden_dim as u32);
        w.u32(out_dim as u32);
        w.bytes(&self.rng_seed);
        w.u128(self.rng_word_pos);
        write_net(&mut w, "actor", &self.actor, &self.actor_opt);
        write_net(&mut w, "critic", &self.critic, &self.critic_opt);
        w.out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".to_string()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let algorithm: Algorithm = r.string()?.parse().map_err(CheckpointError::Format)?;
        let scenario = r.string()?;
        let reward_scheme: RewardScheme = r.string()?.parse().map_err(CheckpointError::Format)?;
        let goal: Goal = r.string()?.parse().map_err(CheckpointError::Format)?;
        let episodes_trained = r.u32()?;
        let in_dim = r.u32()? as usize;
        let hidden_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(r.take(32)?);
        let rng_word_pos = r.u128()?;
        let (actor, actor_opt) = read_net(&mut r, "actor", in_dim, hidden_dim, out_dim)?;
        let (critic, critic_opt) = read_net(&mut r, "critic", in_dim, hidden_dim, 1)?;
        if r.pos != r.bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                r.bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            algorithm,
            scenario,
            reward_scheme,
            goal,
            episodes_trained,
            actor,
            critic,
            actor_opt,
            critic_opt,
            rng_seed,
            rng_word_pos,
        })
    }
}

#[derive(Default)]
struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.out.extend_from_slice(b);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    fn array(&mut self, name: &str, dims: &[usize], data: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.string(name);
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
        for &v in data {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format(
                "unexpected end of file".to_string(),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CheckpointError::Format("invalid utf-8 string".to_string()))
    }

    fn array(&mut self, name: &str, dims: &[usize]) -> Result<Vec<f64>, CheckpointError> {
        let got_name = self.string()?;
        if got_name != name {
            return Err(CheckpointError::Format(format!(
                "expected array {name:?}, found {got_name:?}"
            )));
        }
        let ndim = self.u32()? as usize;
        if ndim != dims.len() {
            return Err(CheckpointError::Format(format!(
                "array {name}: expected {} dims, found {ndim}",
                dims.len()
            )));
        }
        let mut len = 1usize;
        for &expect in dims {
            let got = self.u32()? as usize;
            if got != expect {
                return Err(CheckpointError::Format(format!(
                    "array {name}: expected dim {expect}, found {got}"
                )));
            }
            len *= expect;
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        Ok(data)
    }
}

fn tensor_dims(
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
) -> [(&'static str, Vec<usize>); 4] {
    [
        ("w1", vec![hidden_dim, in_dim]),
        ("b1", vec![hidden_dim]),
        ("w2", vec![out_dim, hidden_dim]),
        ("b2", vec![out_dim]),
    ]
}

fn write_net(w: &mut Writer, net: &str, params: &ParamSet, opt: &OptimizerState) {
    let (in_dim, hidden_dim, out_dim) = params.dims();
    let dims = tensor_dims(in_dim, hidden_dim, out_dim);
    for ((suffix, shape), data) in dims.iter().zip(params.tensors()) {
        w.array(&format!("{net}.{suffix}"), shape, data);
    }
    w.string(&opt.kind.to_string());
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.eps);
    w.u64(opt.step);
    for ((suffix, shape), data) in dims.iter().zip(opt.m.tensors()) {
        w.array(&format!("{net}.opt.m.{suffix}"), shape, data);
    }
    for ((suffix, shape), data) in dims.iter().zip(opt.v.tensors()) {
        w.array(&format!("{net}.opt.v.{suffix}"), shape, data);
    }
}

fn read_net(
    r: &mut Reader,
    net: &str,
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
) -> Result<(ParamSet, OptimizerState), CheckpointError> {
    let dims = tensor_dims(in_dim, hidden_dim, out_dim);
    let mut params = ParamSet::zeros(in_dim, hidden_dim, out_dim);
    for ((suffix, shape), slot) in dims.iter().zip(params.tensors_mut()) {
        *slot = r.array(&format!("{net}.{suffix}"), shape)?;
    }
    let kind: OptimizerKind = r.string()?.parse().map_err(CheckpointError::Format)?;
    let mut opt = OptimizerState::new(kind, &params);
    opt.beta1 = r.f64()?;
    opt.beta2 = r.f64()?;
    opt.eps = r.f64()?;
    opt.step = r.u64()?;
    for ((suffix, shape), slot) in dims.iter().zip(opt.m.tensors_mut()) {
        *slot = r.array(&format!("{net}.opt.m.{suffix}"), shape)?;
    }
    for ((suffix, shape), slot) in dims.iter().zip(opt.v.tensors_mut()) {
        *slot = r.array(&format!("{net}.opt.v.{suffix}"), shape)?;
    }
    Ok((params, opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SimEnv;
    use crate::rl::{train, PolicyAlgorithm, TrainerConfig};
    use crate::scenario::Scenario;
    use std::sync::Arc;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = TrainerConfig {
            episodes: 3,
            hidden_dim: 8,
            step_budget: 30,
            ..TrainerConfig::new(77)
        };
        let mut env = SimEnv::new(
            Arc::new(Scenario::builtin("env2").unwrap()),
            cfg.goal,
            cfg.reward_scheme,
            cfg.step_budget,
        );
        let result = train(&mut env, PolicyAlgorithm::A2c, &cfg).unwrap();
        Checkpoint::from_training(
            Algorithm::A2c,
            "env2",
            cfg.reward_scheme,
            cfg.goal,
            cfg.episodes,
            &result,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cp = sample_checkpoint();
        let bytes = cp.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, cp);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample_checkpoint().to_bytes();
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(CheckpointError::Format(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Format(_))
        ));
    }

    #[test]
    fn rng_state_round_trips_mid_stream() {
        use rand::RngCore;
        let cp = sample_checkpoint();
        let mut restored = cp.action_rng();
        let mut reference = ChaCha8Rng::from_seed(cp.rng_seed);
        reference.set_word_pos(cp.rng_word_pos);
        assert_eq!(restored.next_u64(), reference.next_u64());
    }
}
