//! Single-file training checkpoints.
//!
//! Layout: magic `ALGCDCKP`, a version byte, a length-prefixed JSON
//! manifest, the named parameter/velocity tensors in manifest order (each
//! in the standard tensor blob framing), and a trailing SHA-256 over all
//! preceding bytes.
//!
//! RNG state needs no blob of its own: every stream is derived from
//! `(seed, tags…)` with the epoch/step counters stored here, so a resumed
//! run re-derives exactly the draws the uninterrupted run would have made.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sgd::Sgd;
use super::{Stage, TrainConfig};
use crate::atcg::{AtcgModel, FusionHead};
use crate::error::TrainError;
use crate::objectives::{LossWeights, PrototypeBank};
use crate::tensor::blob::{read_tensor, write_tensor, Dtype};
use crate::tensor::Param;

pub const CKPT_MAGIC: &[u8; 8] = b"ALGCDCKP";
pub const CKPT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub dim_in: usize,
    pub hidden: usize,
    pub dim_out: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub num_classes: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub dim: usize,
    pub num_stacked: usize,
    pub projections_enabled: bool,
    pub head: Option<HeadMeta>,
    pub bank: Option<BankMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    #[serde(default)]
    pub warmup_steps: usize,
    pub step_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub stage: Stage,
    /// First epoch/round the resumed run should execute.
    pub next_epoch: usize,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub model: ModelMeta,
    pub optimizer: OptimizerMeta,
    /// On-disk tensor order; also the completeness contract.
    pub tensor_names: Vec<String>,
}

/// A checkpoint in memory: manifest plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Param>,
}

fn err(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

/// Captures the full training state: generator, optional head and bank,
/// optimizer buffers, schedule position, and configuration.
pub fn snapshot(
    next_epoch: usize,
    model: &AtcgModel,
    head: Option<&FusionHead>,
    bank: Option<&PrototypeBank>,
    opt: &Sgd,
    train: &TrainConfig,
    weights: &LossWeights,
) -> Checkpoint {
    let mut tensors = BTreeMap::new();
    let mut tensor_names = Vec::new();
    let mut put = |name: String, param: Param, names: &mut Vec<String>| {
        names.push(name.clone());
        tensors.insert(name, param);
    };
    for (name, param) in model.param_names().iter().zip(model.params()) {
        put(format!("atcg.{name}"), (*param).clone(), &mut tensor_names);
    }
    if let Some(head) = head {
        for (name, param) in head.param_names().iter().zip(head.params()) {
            put(name.clone(), (*param).clone(), &mut tensor_names);
        }
    }
    if let Some(bank) = bank {
        put("prototypes.c".into(), bank.c.clone(), &mut tensor_names);
    }
    for (name, velocity) in &opt.velocities {
        let n = velocity.len();
        put(
            format!("sgd.{name}"),
            Param::new(velocity.clone(), vec![n]),
            &mut tensor_names,
        );
    }
    Checkpoint {
        meta: CheckpointMeta {
            version: CKPT_VERSION as u32,
            stage: train.stage,
            next_epoch,
            train: train.clone(),
            weights: *weights,
            model: ModelMeta {
                dim: model.dim,
                num_stacked: model.num_stacked,
                projections_enabled: model.projections_enabled,
                head: head.map(|h| HeadMeta {
                    dim_in: h.dim_in,
                    hidden: h.hidden,
                    dim_out: h.dim_out,
                }),
                bank: bank.map(|b| BankMeta {
                    num_classes: b.num_classes,
                    dim: b.dim,
                }),
            },
            optimizer: OptimizerMeta {
                base_lr: opt.base_lr,
                momentum: opt.momentum,
                weight_decay: opt.weight_decay,
                total_steps: opt.total_steps,
                warmup_steps: opt.warmup_steps,
                step_count: opt.step_count,
            },
            tensor_names,
        },
        tensors,
    }
}

/// Everything a resumed run needs, rebuilt from a checkpoint.
pub struct Restored {
    pub meta: CheckpointMeta,
    pub model: AtcgModel,
    pub head: Option<FusionHead>,
    pub bank: Option<PrototypeBank>,
    pub opt: Sgd,
}

fn fill(param: &mut Param, name: &str, stored: &Param) -> Result<(), TrainError> {
    if stored.shape != param.shape {
        return Err(err(format!(
            "tensor {name} has shape {:?}, expected {:?}",
            stored.shape, param.shape
        )));
    }
    param.data.clone_from(&stored.data);
    Ok(())
}

/// Reconstructs models and optimizer from a checkpoint, validating shapes.
pub fn restore(ckpt: &Checkpoint) -> Result<Restored, TrainError> {
    let meta = &ckpt.meta;
    let take = |name: &str| {
        ckpt.tensors
            .get(name)
            .ok_or_else(|| err(format!("tensor {name} missing from checkpoint")))
    };

    let mut model = AtcgModel::init(
        meta.model.dim,
        meta.model.num_stacked,
        meta.model.projections_enabled,
        0.0,
        0,
    )?;
    let names = model.param_names();
    for (name, param) in names.iter().zip(model.params_mut()) {
        fill(param, name, take(&format!("atcg.{name}"))?)?;
    }

    let head = match &meta.model.head {
        Some(h) => {
            let mut head = FusionHead::init(h.dim_in, h.hidden, h.dim_out, 0)?;
            let names = head.param_names();
            for (name, param) in names.iter().zip(head.params_mut()) {
                fill(param, name, take(name)?)?;
            }
            Some(head)
        }
        None => None,
    };
    let bank = match &meta.model.bank {
        Some(b) => {
            let mut bank = PrototypeBank::init(b.num_classes, b.dim, 0)?;
            fill(&mut bank.c, "prototypes.c", take("prototypes.c")?)?;
            Some(bank)
        }
        None => None,
    };

    let o = &meta.optimizer;
    let mut opt =
        Sgd::new(o.base_lr, o.momentum, o.weight_decay, o.total_steps)?.with_warmup(o.warmup_steps);
    opt.step_count = o.step_count;
    for name in &meta.tensor_names {
        if let Some(key) = name.strip_prefix("sgd.") {
            opt.velocities
                .insert(key.to_string(), take(name)?.data.clone());
        }
    }

    Ok(Restored {
        meta: ckpt.meta.clone(),
        model,
        head,
        bank,
        opt,
    })
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.push(CKPT_VERSION);
        let json = serde_json::to_vec(&self.meta).map_err(|e| err(e.to_string()))?;
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for name in &self.meta.tensor_names {
            let p = self
                .tensors
                .get(name)
                .ok_or_else(|| err(format!("manifest lists {name} but it was not captured")))?;
            write_tensor(&mut buf, &p.data, &p.shape, Dtype::F64)
                .map_err(|e| err(format!("writing {name}: {e}")))?;
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        std::fs::write(path, &buf).map_err(|e| err(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TrainError> {
        let bytes = std::fs::read(path)
            .map_err(|e| err(format!("reading {}: {e}", path.display())))?;
        let min = CKPT_MAGIC.len() + 1 + 8 + 32;
        if bytes.len() < min {
            return Err(err("file too short to be a checkpoint"));
        }
        let (body, stored_digest) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != stored_digest {
            return Err(err("checksum mismatch: checkpoint is corrupt"));
        }
        let (magic, rest) = body.split_at(CKPT_MAGIC.len());
        if magic != CKPT_MAGIC {
            return Err(err("bad magic: not a checkpoint file"));
        }
        let (version, rest) = rest.split_first().expect("length checked");
        if *version != CKPT_VERSION {
            return Err(err(format!(
                "unsupported checkpoint version {version}, expected {CKPT_VERSION}"
            )));
        }
        if rest.len() < 8 {
            return Err(err("truncated manifest length"));
        }
        let (len_bytes, rest) = rest.split_at(8);
        let json_len = u64::from_le_bytes(len_bytes.try_into().expect("length checked")) as usize;
        if rest.len() < json_len {
            return Err(err("truncated manifest"));
        }
        let (json, mut tensor_bytes) = rest.split_at(json_len);
        let meta: CheckpointMeta =
            serde_json::from_slice(json).map_err(|e| err(format!("manifest: {e}")))?;
        if meta.version != CKPT_VERSION as u32 {
            return Err(err(format!(
                "manifest version {} disagrees with header {CKPT_VERSION}",
                meta.version
            )));
        }

        let mut tensors = BTreeMap::new();
        for name in &meta.tensor_names {
            let (data, shape) =
                read_tensor(&mut tensor_bytes).map_err(|e| err(format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), Param::new(data, shape)).is_some() {
                return Err(err(format!("duplicate tensor name {name}")));
            }
        }
        if !tensor_bytes.is_empty() {
            return Err(err(format!(
                "{} trailing bytes after the last tensor",
                tensor_bytes.len()
            )));
        }
        Ok(Checkpoint {
            meta,
            tensors,
        })
    }
}
