//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field          | bytes                 |
//! |----------------|-----------------------|
//! | magic          | `b"BBRLCKPT"`         |
//! | version        | u32                   |
//! | manifest len   | u64                   |
//! | manifest       | JSON ([`Manifest`])   |
//! | payload count  | u64 (number of f64)   |
//! | payload        | f64 each              |
//! | digest         | SHA-256 of all above  |
//!
//! The manifest lists the tensors in payload order with their shapes, so a
//! file can be inspected without this crate.

use std::io::Write;
use std::path::Path;

use bbrl_core::erl::{ContextValueNet, ContextualPolicy, StdHead};
use bbrl_core::numkit::MlpParams;
use bbrl_core::steprl::{Normalizer, RunningStats, StepCritic, StepPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ActivationId;
use crate::error::{RunError, RunResult};

pub const MAGIC: &[u8; 8] = b"BBRLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub name: String,
    /// MLP layer widths, input first; absent for plain vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationId>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// `erl` or `ppo`.
    pub kind: String,
    pub iteration: usize,
    pub env_steps: u64,
    pub seed: u64,
    /// Free-form scalars needed to rebuild the state (e.g. the std scale).
    pub scalars: std::collections::BTreeMap<String, f64>,
    pub tensors: Vec<TensorSpec>,
}

/// Trained state that evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyState {
    Erl {
        policy: ContextualPolicy,
        value: Option<MlpParams>,
    },
    Ppo {
        policy: StepPolicy,
        critic: StepCritic,
        norm: Normalizer,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub env_steps: u64,
    pub seed: u64,
    pub state: PolicyState,
}

impl Checkpoint {
    pub fn erl(policy: &ContextualPolicy, value: Option<&ContextValueNet>, seed: u64, iteration: usize, env_steps: u64) -> Self {
        Self {
            iteration,
            env_steps,
            seed,
            state: PolicyState::Erl {
                policy: policy.clone(),
                value: value.map(|v| v.net.clone()),
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.state {
            PolicyState::Erl { .. } => "erl",
            PolicyState::Ppo { .. } => "ppo",
        }
    }
}

struct Writer {
    specs: Vec<TensorSpec>,
    payload: Vec<f64>,
}

impl Writer {
    fn mlp(&mut self, name: &str, net: &MlpParams) {
        self.specs.push(TensorSpec {
            name: name.into(),
            layers: Some(net.layer_sizes().to_vec()),
            activation: Some(net.activation().into()),
            len: net.num_params(),
        });
        self.payload.extend_from_slice(net.flat());
    }

    fn vector(&mut self, name: &str, v: &[f64]) {
        self.specs.push(TensorSpec {
            name: name.into(),
            layers: None,
            activation: None,
            len: v.len(),
        });
        self.payload.extend_from_slice(v);
    }
}

struct Reader<'a> {
    path: &'a Path,
    specs: &'a [TensorSpec],
    payload: &'a [f64],
    next: usize,
    offset: usize,
}

impl Reader<'_> {
    fn take(&mut self, name: &str) -> RunResult<(&TensorSpec, &[f64])> {
        let spec = self
            .specs
            .get(self.next)
            .ok_or_else(|| RunError::checkpoint(self.path, format!("missing tensor '{name}'")))?;
        if spec.name != name {
            return Err(RunError::checkpoint(
                self.path,
                format!("expected tensor '{name}', found '{}'", spec.name),
            ));
        }
        let data = self
            .payload
            .get(self.offset..self.offset + spec.len)
            .ok_or_else(|| RunError::checkpoint(self.path, format!("payload too short for '{name}'")))?;
        self.next += 1;
        self.offset += spec.len;
        Ok((spec, data))
    }

    fn peek(&self, name: &str) -> bool {
        self.specs.get(self.next).is_some_and(|s| s.name == name)
    }

    fn mlp(&mut self, name: &str) -> RunResult<MlpParams> {
        let path = self.path;
        let (spec, data) = self.take(name)?;
        let (Some(layers), Some(act)) = (&spec.layers, spec.activation) else {
            return Err(RunError::checkpoint(path, format!("tensor '{name}' is not a network")));
        };
        MlpParams::from_flat(layers, act.into(), data.to_vec())
            .map_err(|e| RunError::checkpoint(path, format!("tensor '{name}': {e}")))
    }

    fn vector(&mut self, name: &str) -> RunResult<Vec<f64>> {
        Ok(self.take(name)?.1.to_vec())
    }

    fn finish(&self) -> RunResult<()> {
        if self.next != self.specs.len() || self.offset != self.payload.len() {
            return Err(RunError::checkpoint(self.path, "manifest lists unused tensors"));
        }
        Ok(())
    }
}

fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer {
        specs: Vec::new(),
        payload: Vec::new(),
    };
    let mut scalars = std::collections::BTreeMap::new();
    match &ck.state {
        PolicyState::Erl { policy, value } => {
            w.mlp("mean_net", policy.mean_net());
            match policy.std_head() {
                StdHead::Free(l) => w.vector("log_std", l),
                StdHead::Contextual { net, init_std } => {
                    w.mlp("std_net", net);
                    scalars.insert("init_std".to_string(), *init_std);
                }
            }
            if let Some(v) = value {
                w.mlp("value_net", v);
            }
        }
        PolicyState::Ppo { policy, critic, norm } => {
            w.mlp("actor", &policy.net);
            w.vector("log_std", &policy.log_std);
            w.mlp("critic", &critic.net);
            w.vector("obs_mean", &norm.obs.mean);
            w.vector("obs_var", &norm.obs.var);
            w.vector("ret_mean", &norm.ret.mean);
            w.vector("ret_var", &norm.ret.var);
            scalars.insert("obs_count".to_string(), norm.obs.count);
            scalars.insert("ret_count".to_string(), norm.ret.count);
            scalars.insert("running_return".to_string(), norm.running_return());
        }
    }
    let manifest = Manifest {
        kind: ck.kind().into(),
        iteration: ck.iteration,
        env_steps: ck.env_steps,
        seed: ck.seed,
        scalars,
        tensors: w.specs,
    };
    let mjson = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(64 + mjson.len() + 8 * w.payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&mjson);
    out.extend_from_slice(&(w.payload.len() as u64).to_le_bytes());
    for x in &w.payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn u64_at(bytes: &[u8], at: usize) -> Option<u64> {
    Some(u64::from_le_bytes(bytes.get(at..at + 8)?.try_into().ok()?))
}

/// Parse and verify a checkpoint image; `path` only labels diagnostics.
pub fn decode(bytes: &[u8], path: &Path) -> RunResult<Checkpoint> {
    let bad = |r: &str| RunError::checkpoint(path, r);
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = bytes
        .get(8..12)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version} (expected {VERSION})")));
    }
    if bytes.len() < 12 + 32 {
        return Err(bad("truncated file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mlen = u64_at(body, 12).ok_or_else(|| bad("truncated header"))? as usize;
    let mend = 20usize.checked_add(mlen).filter(|e| *e + 8 <= body.len());
    let Some(mend) = mend else {
        return Err(bad("truncated manifest"));
    };
    let count = u64_at(body, mend).unwrap() as usize;
    let expected = mend + 8 + count.checked_mul(8).ok_or_else(|| bad("payload size overflows"))?;
    if body.len() != expected {
        return Err(bad(&format!(
            "payload size mismatch: header says {count} values, file holds {} bytes",
            body.len().saturating_sub(mend + 8)
        )));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file corrupted)"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[20..mend]).map_err(|e| bad(&format!("manifest: {e}")))?;
    let payload: Vec<f64> = body[mend + 8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut r = Reader {
        path,
        specs: &manifest.tensors,
        payload: &payload,
        next: 0,
        offset: 0,
    };
    let scalar = |k: &str| {
        manifest
            .scalars
            .get(k)
            .copied()
            .ok_or_else(|| RunError::checkpoint(path, format!("missing scalar '{k}'")))
    };
    let core_err = |e: bbrl_core::Error| RunError::checkpoint(path, e.to_string());
    let state = match manifest.kind.as_str() {
        "erl" => {
            let mean_net = r.mlp("mean_net")?;
            let std_head = if r.peek("log_std") {
                StdHead::Free(r.vector("log_std")?)
            } else {
                StdHead::Contextual {
                    net: r.mlp("std_net")?,
                    init_std: scalar("init_std")?,
                }
            };
            let value = if r.peek("value_net") { Some(r.mlp("value_net")?) } else { None };
            PolicyState::Erl {
                policy: ContextualPolicy::from_parts(mean_net, std_head).map_err(core_err)?,
                value,
            }
        }
        "ppo" => {
            let net = r.mlp("actor")?;
            let log_std = r.vector("log_std")?;
            if log_std.len() != net.output_dim() {
                return Err(bad("log_std length does not match the actor output"));
            }
            let critic = StepCritic { net: r.mlp("critic")? };
            let obs = RunningStats {
                mean: r.vector("obs_mean")?,
                var: r.vector("obs_var")?,
                count: scalar("obs_count")?,
            };
            let ret = RunningStats {
                mean: r.vector("ret_mean")?,
                var: r.vector("ret_var")?,
                count: scalar("ret_count")?,
            };
            let norm = Normalizer::from_parts(obs, ret, scalar("running_return")?).map_err(core_err)?;
            PolicyState::Ppo {
                policy: StepPolicy { net, log_std },
                critic,
                norm,
            }
        }
        other => return Err(bad(&format!("unknown checkpoint kind '{other}'"))),
    };
    r.finish()?;
    Ok(Checkpoint {
        iteration: manifest.iteration,
        env_steps: manifest.env_steps,
        seed: manifest.seed,
        state,
    })
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    encode(ck)
}

/// Write atomically: a temporary sibling file is renamed into place.
pub fn save(ck: &Checkpoint, path: &Path) -> RunResult<()> {
    let bytes = encode(ck);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| RunError::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| RunError::io(&tmp, e))?;
    f.sync_all().map_err(|e| RunError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

pub fn load(path: &Path) -> RunResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    decode(&bytes, path)
}
