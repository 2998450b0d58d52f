//! Versioned binary checkpoints: a magic tag, a JSON manifest (tensor
//! names, shapes, the resolved run config), then raw little-endian f64
//! parameter data in manifest order.

use crate::critic::EncoderPair;
use crate::envs::EnvSpec;
use crate::error::{IcrlError, Result};
use crate::harness::config::{Algorithm, RunConfig};
use crate::nn::{Activation, Mlp};
use crate::policy::{ActionSpace, PolicyNet};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ICRLCKP1";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    algorithm: Algorithm,
    seed: u64,
    config_toml: String,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

/// The learnable state of one run.
pub enum AgentState {
    Icrl { encoders: EncoderPair, policy: PolicyNet },
    Baseline { policy: PolicyNet, value: Mlp },
}

impl AgentState {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        fn push_all<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, params: Vec<&'a Tensor>) {
            for (i, t) in params.into_iter().enumerate() {
                out.push((format!("{prefix}.{i}"), t));
            }
        }
        match self {
            AgentState::Icrl { encoders, policy } => {
                push_all(&mut out, "phi", encoders.phi().params());
                push_all(&mut out, "psi", encoders.psi().params());
                push_all(&mut out, "policy", policy.trunk().params());
                out.push(("log_alpha.0".into(), policy.log_alpha()));
            }
            AgentState::Baseline { policy, value } => {
                push_all(&mut out, "policy", policy.trunk().params());
                push_all(&mut out, "value", value.params());
                out.push(("log_alpha.0".into(), policy.log_alpha()));
            }
        }
        out
    }
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, seed: u64, state: &AgentState) -> Result<()> {
    let tensors = state.tensors();
    let manifest = Manifest {
        version: 1,
        algorithm: config.algorithm,
        seed,
        config_toml: config.to_toml(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorMeta { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| IcrlError::parse("save_checkpoint", e.to_string()))?;

    let mut f = std::fs::File::create(path).map_err(|e| IcrlError::io("create checkpoint", e))?;
    let io = |e| IcrlError::io("write checkpoint", e);
    f.write_all(MAGIC).map_err(io)?;
    f.write_all(&(manifest_json.len() as u64).to_le_bytes()).map_err(io)?;
    f.write_all(&manifest_json).map_err(io)?;
    for (_, t) in &tensors {
        for &v in t.data() {
            f.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// A checkpoint loaded back into memory.
pub struct LoadedCheckpoint {
    pub config: RunConfig,
    pub seed: u64,
    pub state: AgentState,
}

/// Reconstruct networks with the architecture implied by the embedded
/// config, then overwrite their parameters from the checkpoint data.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut f = std::fs::File::open(path).map_err(|e| IcrlError::io("open checkpoint", e))?;
    let io = |e| IcrlError::io("read checkpoint", e);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(IcrlError::parse("load_checkpoint", "bad magic; not a checkpoint file"));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(io)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_json = vec![0u8; manifest_len];
    f.read_exact(&mut manifest_json).map_err(io)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_json)
        .map_err(|e| IcrlError::parse("load_checkpoint manifest", e.to_string()))?;
    if manifest.version != 1 {
        return Err(IcrlError::parse(
            "load_checkpoint",
            format!("unsupported checkpoint version {}", manifest.version),
        ));
    }
    let config = RunConfig::from_toml(&manifest.config_toml)?;

    let mut flat: Vec<Vec<f64>> = Vec::with_capacity(manifest.tensors.len());
    for meta in &manifest.tensors {
        let n: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; 8 * n];
        f.read_exact(&mut buf).map_err(io)?;
        flat.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }

    let state = rebuild_state(&config, &manifest, &flat)?;
    Ok(LoadedCheckpoint { config, seed: manifest.seed, state })
}

fn load_group(manifest: &Manifest, flat: &[Vec<f64>], prefix: &str, net: &mut Mlp) -> Result<()> {
    let mut values = Vec::new();
    for (meta, data) in manifest.tensors.iter().zip(flat) {
        if meta.name.starts_with(&format!("{prefix}.")) {
            values.extend_from_slice(data);
        }
    }
    net.load_flat(&values)
        .map_err(|_| IcrlError::parse("load_checkpoint", format!("tensor group `{prefix}` does not fit")))
}

fn scalar_entry(manifest: &Manifest, flat: &[Vec<f64>], name: &str) -> Result<f64> {
    manifest
        .tensors
        .iter()
        .zip(flat)
        .find(|(meta, _)| meta.name == name)
        .map(|(_, data)| data[0])
        .ok_or_else(|| IcrlError::parse("load_checkpoint", format!("missing tensor `{name}`")))
}

/// Architecture hyperparameters implied by a config and its environment.
pub struct NetDims {
    pub obs_dim: usize,
    pub action_repr_dim: usize,
    pub goal_dim: usize,
    pub space: ActionSpace,
    pub hidden: Vec<usize>,
    pub repr_dim: usize,
    pub activation: Activation,
}

pub fn net_dims(config: &RunConfig) -> Result<NetDims> {
    let spec = config.env_spec()?;
    let env = crate::envs::build_env(&spec)?;
    Ok(NetDims {
        obs_dim: env.obs_dim(),
        action_repr_dim: env.action_space().repr_dim(),
        goal_dim: env.goal_dim(),
        space: env.action_space(),
        hidden: config.hidden.clone(),
        repr_dim: config.repr_dim,
        activation: config.activation,
    })
}

pub(crate) fn target_entropy_for(config: &RunConfig, space: ActionSpace) -> f64 {
    match space {
        ActionSpace::Discrete(n) => config.target_entropy_factor * (n as f64).ln(),
        ActionSpace::Continuous(d) => -(d as f64),
    }
}

fn rebuild_state(config: &RunConfig, manifest: &Manifest, flat: &[Vec<f64>]) -> Result<AgentState> {
    let dims = net_dims(config)?;
    let mut rng = crate::harness::rngstream::stream_rng(manifest.seed, "checkpoint-rebuild");
    match manifest.algorithm {
        Algorithm::Icrl => {
            let mut encoders = EncoderPair::init(
                dims.obs_dim,
                dims.action_repr_dim,
                dims.goal_dim,
                &dims.hidden,
                dims.repr_dim,
                dims.activation,
                &mut rng,
            )?;
            let mut policy = PolicyNet::init(
                dims.obs_dim,
                dims.goal_dim,
                dims.space,
                &dims.hidden,
                dims.activation,
                target_entropy_for(config, dims.space),
                config.alpha_init,
                &mut rng,
            )?;
            load_group(manifest, flat, "phi", encoders.phi_mut())?;
            load_group(manifest, flat, "psi", encoders.psi_mut())?;
            load_group(manifest, flat, "policy", policy.trunk_mut())?;
            let la = scalar_entry(manifest, flat, "log_alpha.0")?;
            *policy.log_alpha_mut() = Tensor::scalar(la);
            Ok(AgentState::Icrl { encoders, policy })
        }
        Algorithm::Baseline => {
            let mut policy = PolicyNet::init(
                dims.obs_dim,
                dims.goal_dim,
                dims.space,
                &dims.hidden,
                dims.activation,
                0.0,
                1.0,
                &mut rng,
            )?;
            let mut value_widths = vec![dims.obs_dim + dims.goal_dim];
            value_widths.extend_from_slice(&dims.hidden);
            value_widths.push(1);
            let mut value = Mlp::init(&value_widths, dims.activation, &mut rng)?;
            load_group(manifest, flat, "policy", policy.trunk_mut())?;
            load_group(manifest, flat, "value", &mut value)?;
            let la = scalar_entry(manifest, flat, "log_alpha.0")?;
            *policy.log_alpha_mut() = Tensor::scalar(la);
            Ok(AgentState::Baseline { policy, value })
        }
    }
}

/// Environment spec embedded in a loaded checkpoint.
pub fn env_spec_of(loaded: &LoadedCheckpoint) -> Result<EnvSpec> {
    loaded.config.env_spec()
}
