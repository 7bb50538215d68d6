//! Two training stages: analogical training of the generator on episodes
//! carved out of the labeled split, and GCD training of the fusion head and
//! prototypes (optionally fine-tuning the generator).
//!
//! Determinism contract: every random draw comes from a stream derived from
//! `(seed, purpose-tag, epoch/round, …)`, never from call order, so a fixed
//! seed reproduces every logged number bit-for-bit — including across a
//! checkpoint/resume boundary.

pub mod checkpoint;
pub mod sgd;

use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::atcg::{atcg_forward, fuse, fusion_head, AtcgModel, FusionHead};
use crate::error::TrainError;
use crate::kb::{self, KnowledgeBase};
use crate::objectives::{
    analogical_loss, blend, cls_sup, cls_unsup, prototype_logits, sup_contrastive, total,
    unsup_contrastive, LossWeights, PrototypeBank,
};
use crate::rng::{self, tag};
use crate::synth::GcdDataset;
use crate::tensor::Graph;
use sgd::{ParamUpdate, Sgd};

/// Generator forward passes during the frozen-precompute phase are chunked
/// to bound graph memory; all ops are row-independent so the chunk size is
/// unobservable in the results.
const PRECOMPUTE_CHUNK_ROWS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Atcg,
    Gcd,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Atcg => write!(f, "atcg"),
            Stage::Gcd => write!(f, "gcd"),
        }
    }
}

/// Knobs for one training stage. `epochs` counts episode rounds in stage 1
/// and full passes over the dataset in stage 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Visual/text fusion weight.
    pub alpha: f64,
    /// Fraction of known classes made pseudo-unknown per episode.
    pub episode_ratio: f64,
    /// Pseudo-labeled samples per episode (m); 0 means "all remaining".
    pub episode_m: usize,
    /// Pseudo-unlabeled samples per episode (n).
    pub episode_n: usize,
    pub seed: u64,
    pub freeze_atcg_in_gcd: bool,
    /// Views per sample; the pairing convention fixes this at 2.
    pub num_views: usize,
    /// Embedding-space augmentation strength (expected noise norm).
    pub sigma_aug: f64,
    /// Fraction of the step budget spent on linear lr warmup.
    pub warmup_frac: f64,
}

impl TrainConfig {
    /// Stage-1 defaults: 500 episode rounds of analogical training.
    pub fn stage1(seed: u64) -> Self {
        TrainConfig {
            stage: Stage::Atcg,
            epochs: 500,
            lr: 2.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            alpha: 0.4,
            episode_ratio: 0.5,
            episode_m: 0,
            episode_n: 64,
            seed,
            freeze_atcg_in_gcd: true,
            num_views: 2,
            sigma_aug: 0.1,
            warmup_frac: 0.0,
        }
    }

    /// Stage-2 defaults: 200 epochs of GCD training with a frozen generator.
    pub fn stage2(seed: u64) -> Self {
        TrainConfig {
            stage: Stage::Gcd,
            epochs: 200,
            lr: 0.05,
            warmup_frac: 0.05,
            ..TrainConfig::stage1(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |name, value, range| {
            Err(TrainError::Model(crate::error::ModelError::InvalidHyper {
                name,
                value,
                range,
            }))
        };
        if self.epochs == 0 {
            return bad("epochs", 0.0, "≥ 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", self.lr, "positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum, "[0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", self.weight_decay, "finite, ≥ 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size", self.batch_size as f64, "≥ 2");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", self.alpha, "[0, 1]");
        }
        if !(0.0..=0.5).contains(&self.warmup_frac) {
            return bad("warmup_frac", self.warmup_frac, "[0, 0.5]");
        }
        if !(self.episode_ratio > 0.0 && self.episode_ratio < 1.0) {
            return bad("episode_ratio", self.episode_ratio, "(0, 1)");
        }
        if self.episode_n == 0 {
            return bad("episode_n", 0.0, "≥ 1");
        }
        if self.num_views != 2 {
            return bad("num_views", self.num_views as f64, "exactly 2");
        }
        if !(self.sigma_aug >= 0.0 && self.sigma_aug.is_finite()) {
            return bad("sigma_aug", self.sigma_aug, "finite, ≥ 0");
        }
        Ok(())
    }
}

/// One pseudo-GCD episode carved out of the labeled split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub pseudo_known: Vec<usize>,
    pub pseudo_unknown: Vec<usize>,
    pub pseudo_labeled_idx: Vec<usize>,
    pub pseudo_unlabeled_idx: Vec<usize>,
}

impl Episode {
    /// Checks the construction invariants against the dataset; run every
    /// round so a sampling bug can never silently poison training.
    pub fn validate(&self, ds: &GcdDataset) -> Result<(), TrainError> {
        let known: std::collections::BTreeSet<_> = self.pseudo_known.iter().collect();
        if self.pseudo_unknown.iter().any(|c| known.contains(c)) {
            return Err(TrainError::Episode(
                "pseudo-known and pseudo-unknown classes overlap".into(),
            ));
        }
        let labeled: std::collections::BTreeSet<_> = self.pseudo_labeled_idx.iter().collect();
        if self.pseudo_unlabeled_idx.iter().any(|i| labeled.contains(i)) {
            return Err(TrainError::Episode(
                "an index appears in both episode splits".into(),
            ));
        }
        for &i in &self.pseudo_labeled_idx {
            if !known.contains(&ds.labels[i]) {
                return Err(TrainError::Episode(format!(
                    "pseudo-labeled sample {i} has pseudo-unknown class {}",
                    ds.labels[i]
                )));
            }
        }
        Ok(())
    }
}

/// Splits the known classes and the labeled samples into a fresh episode
/// for `round`. The split is a pure function of `(cfg.seed, round)`.
pub fn sample_episode(
    ds: &GcdDataset,
    cfg: &TrainConfig,
    round: usize,
) -> Result<Episode, TrainError> {
    if ds.num_known < 2 {
        return Err(TrainError::Episode(format!(
            "episodes need at least 2 known classes, dataset has {}",
            ds.num_known
        )));
    }
    let mut rng = rng::stream(cfg.seed, &[tag::EPISODE, round as u64]);
    let mut classes: Vec<usize> = (0..ds.num_known).collect();
    classes.shuffle(&mut rng);
    let num_unknown = ((cfg.episode_ratio * ds.num_known as f64).round() as usize)
        .clamp(1, ds.num_known - 1);
    let mut pseudo_unknown: Vec<usize> = classes[..num_unknown].to_vec();
    let mut pseudo_known: Vec<usize> = classes[num_unknown..].to_vec();
    pseudo_unknown.sort_unstable();
    pseudo_known.sort_unstable();

    let labeled = ds.labeled_indices();
    if cfg.episode_n > labeled.len() {
        return Err(TrainError::Episode(format!(
            "episode needs n = {} pseudo-unlabeled samples but only {} labeled samples exist",
            cfg.episode_n,
            labeled.len()
        )));
    }
    let mut pseudo_unlabeled_idx: Vec<usize> =
        rand::seq::index::sample(&mut rng, labeled.len(), cfg.episode_n)
            .iter()
            .map(|i| labeled[i])
            .collect();
    pseudo_unlabeled_idx.sort_unstable();

    let taken: std::collections::BTreeSet<usize> = pseudo_unlabeled_idx.iter().copied().collect();
    let pool: Vec<usize> = labeled
        .iter()
        .copied()
        .filter(|&i| !taken.contains(&i) && pseudo_known.binary_search(&ds.labels[i]).is_ok())
        .collect();
    let m = if cfg.episode_m == 0 {
        pool.len()
    } else {
        cfg.episode_m
    };
    if m == 0 || m > pool.len() {
        return Err(TrainError::Episode(format!(
            "episode needs m = {m} pseudo-labeled samples but only {} remain in pseudo-known classes",
            pool.len()
        )));
    }
    let mut pseudo_labeled_idx: Vec<usize> = if m == pool.len() {
        pool
    } else {
        rand::seq::index::sample(&mut rng, pool.len(), m)
            .iter()
            .map(|i| pool[i])
            .collect()
    };
    pseudo_labeled_idx.sort_unstable();

    let episode = Episode {
        pseudo_known,
        pseudo_unknown,
        pseudo_labeled_idx,
        pseudo_unlabeled_idx,
    };
    episode.validate(ds)?;
    Ok(episode)
}

/// Embedding-space augmentation: add Gaussian noise with expected norm
/// `sigma_aug` and renormalize. `sigma_aug = 0` returns the row unchanged,
/// bit-for-bit.
pub fn augment<R: rand::Rng + ?Sized>(row: &[f64], sigma_aug: f64, rng: &mut R) -> Vec<f64> {
    if sigma_aug == 0.0 {
        return row.to_vec();
    }
    let d = row.len();
    let per_dim = sigma_aug / (d as f64).sqrt();
    let noise = rng::gaussians(rng, d);
    let mut out: Vec<f64> = row
        .iter()
        .zip(&noise)
        .map(|(v, e)| v + per_dim * e)
        .collect();
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// One logged stage-1 round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtcgStepRecord {
    pub round: usize,
    pub loss: f64,
    pub lr: f64,
}

/// One logged stage-2 optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GcdStepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_rep_u: f64,
    pub l_rep_s: f64,
    pub l_cls_u: f64,
    pub l_cls_s: f64,
    pub total: f64,
    pub lr: f64,
}

pub fn write_stage1_csv(w: &mut impl Write, records: &[AtcgStepRecord]) -> std::io::Result<()> {
    writeln!(w, "step,stage,loss,lr")?;
    for r in records {
        writeln!(w, "{},atcg,{:?},{:?}", r.round, r.loss, r.lr)?;
    }
    Ok(())
}

pub fn write_stage2_csv(w: &mut impl Write, records: &[GcdStepRecord]) -> std::io::Result<()> {
    writeln!(w, "step,stage,l_rep_u,l_rep_s,l_cls_u,l_cls_s,total,lr")?;
    for r in records {
        writeln!(
            w,
            "{},gcd,{:?},{:?},{:?},{:?},{:?},{:?}",
            r.step, r.l_rep_u, r.l_rep_s, r.l_cls_u, r.l_cls_s, r.total, r.lr
        )?;
    }
    Ok(())
}

fn gather(ds: &GcdDataset, indices: &[usize], row: impl Fn(usize) -> Vec<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * ds.dim);
    for &i in indices {
        out.extend(row(i));
    }
    out
}

/// Stage 1: analogical training of the generator over episode rounds
/// `rounds` (a sub-range of `0..cfg.epochs` so interrupted runs resume on
/// the same schedule). Each round rebuilds an episode knowledge base from
/// the pseudo-labeled samples and regresses generated text embeddings onto
/// the true anchors of the pseudo-unlabeled samples.
pub fn train_atcg(
    ds: &GcdDataset,
    model: &mut AtcgModel,
    cfg: &TrainConfig,
    opt: &mut Sgd,
    rounds: Range<usize>,
) -> Result<Vec<AtcgStepRecord>, TrainError> {
    cfg.validate()?;
    if cfg.stage != Stage::Atcg {
        return Err(TrainError::Episode(format!(
            "train_atcg called with a {} config",
            cfg.stage
        )));
    }
    if !model.projections_enabled {
        return Err(TrainError::NothingToOptimize);
    }
    if rounds.end > cfg.epochs {
        return Err(TrainError::Episode(format!(
            "round range end {} exceeds configured epochs {}",
            rounds.end, cfg.epochs
        )));
    }
    let names = model.param_names();
    let mut records = Vec::with_capacity(rounds.len());
    for round in rounds {
        let episode = sample_episode(ds, cfg, round)?;
        let episode_kb = kb::build_from_indices(ds, &episode.pseudo_labeled_idx)?;

        let g = Graph::new();
        let vars = model.register(&g, true)?;
        let v_q = g.constant(
            gather(ds, &episode.pseudo_unlabeled_idx, |i| {
                ds.visual_row(i).to_vec()
            }),
            &[episode.pseudo_unlabeled_idx.len(), ds.dim],
        )?;
        let t_true = g.constant(
            gather(ds, &episode.pseudo_unlabeled_idx, |i| {
                ds.anchor_row(ds.labels[i]).to_vec()
            }),
            &[episode.pseudo_unlabeled_idx.len(), ds.dim],
        )?;
        let out = atcg_forward(&v_q, &episode_kb, &vars)?;
        let loss = analogical_loss(&out.t_final, &t_true)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(TrainError::Diverged {
                unit: "round",
                index: round,
                value,
            });
        }
        loss.backward()?;

        let grads: Vec<Option<Vec<f64>>> = vars.flat().iter().map(|t| t.grad()).collect();
        let mut updates: Vec<ParamUpdate<'_>> = names
            .iter()
            .zip(model.params_mut())
            .zip(grads)
            .map(|((name, param), grad)| ParamUpdate {
                name,
                param,
                grad,
            })
            .collect();
        let lr = opt.step(&mut updates)?;
        records.push(AtcgStepRecord {
            round,
            loss: value,
            lr,
        });
    }
    Ok(records)
}

/// Number of optimizer steps per stage-2 epoch: full batches plus a final
/// partial batch when it still holds the two samples contrastive losses
/// need.
pub fn gcd_steps_per_epoch(num_samples: usize, batch_size: usize) -> usize {
    let full = num_samples / batch_size;
    let rem = num_samples % batch_size;
    full + usize::from(rem >= 2)
}

/// Precomputes generated text embeddings for `n` rows (frozen-generator
/// path), chunked; bit-identical to a per-step forward because every op is
/// row-independent.
fn precompute_t(
    rows: &[f64],
    n: usize,
    d: usize,
    kb: &KnowledgeBase,
    model: &AtcgModel,
) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(n * d);
    let mut start = 0usize;
    while start < n {
        let take = PRECOMPUTE_CHUNK_ROWS.min(n - start);
        let g = Graph::new();
        let vars = model.register(&g, false)?;
        let v = g.constant(rows[start * d..(start + take) * d].to_vec(), &[take, d])?;
        out.extend(atcg_forward(&v, kb, &vars)?.t_final.data());
        start += take;
    }
    Ok(out)
}

/// Stage 2: GCD training of the fusion head and prototype bank over
/// `epochs` (a sub-range of `0..cfg.epochs`), with the generator frozen or
/// fine-tuned per `cfg.freeze_atcg_in_gcd`. Returns one record per
/// optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn train_gcd(
    ds: &GcdDataset,
    kb: &KnowledgeBase,
    model: &mut AtcgModel,
    head: &mut FusionHead,
    bank: &mut PrototypeBank,
    cfg: &TrainConfig,
    weights: &LossWeights,
    opt: &mut Sgd,
    epochs: Range<usize>,
) -> Result<Vec<GcdStepRecord>, TrainError> {
    cfg.validate()?;
    weights.validate()?;
    if cfg.stage != Stage::Gcd {
        return Err(TrainError::Episode(format!(
            "train_gcd called with a {} config",
            cfg.stage
        )));
    }
    if epochs.end > cfg.epochs {
        return Err(TrainError::Episode(format!(
            "epoch range end {} exceeds configured epochs {}",
            epochs.end, cfg.epochs
        )));
    }
    if head.dim_in != ds.dim || kb.dim != ds.dim {
        return Err(TrainError::Model(crate::error::ModelError::Invalid(
            format!(
                "dimension mismatch: data {}, head input {}, knowledge base {}",
                ds.dim, head.dim_in, kb.dim
            ),
        )));
    }
    if bank.dim != head.dim_out || bank.num_classes < ds.num_known {
        return Err(TrainError::Model(crate::error::ModelError::Invalid(
            format!(
                "prototype bank {}×{} incompatible with head output {} and {} known classes",
                bank.num_classes, bank.dim, head.dim_out, ds.num_known
            ),
        )));
    }

    let finetune = !cfg.freeze_atcg_in_gcd && model.projections_enabled && cfg.alpha < 1.0;
    let n = ds.num_samples();
    let d = ds.dim;
    let atcg_names = model.param_names();
    let head_names = head.param_names();
    let bank_names = bank.param_names();
    let mut records = Vec::new();

    // The augmented views and the pass order are drawn once and reused every
    // epoch (deterministic incremental gradient descent). Epoch-mean losses
    // then measure pure optimization progress instead of resampling noise,
    // and the frozen-generator t̃ precompute runs once per training run.
    let mut views: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_views);
    for view in 0..cfg.num_views {
        let mut stream = rng::stream(cfg.seed, &[tag::AUGMENT, view as u64]);
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(augment(ds.visual_row(i), cfg.sigma_aug, &mut stream));
        }
        views.push(data);
    }
    // t̃ is a per-sample quantity computed from the clean embedding ("text
    // embeddings for all samples"); both views of a sample fuse with the same
    // t̃. With the generator frozen that is one forward pass per run.
    let t_store: Option<Vec<f64>> = if cfg.alpha < 1.0 && !finetune {
        Some(precompute_t(&ds.visual, n, d, kb, model)?)
    } else {
        None
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE]));

    for epoch in epochs {
        let mut offset = 0usize;
        let mut step_in_epoch = 0usize;
        while offset < n {
            let take = cfg.batch_size.min(n - offset);
            if take < 2 {
                break; // a stray single sample cannot form contrastive pairs
            }
            let batch = &order[offset..offset + take];
            offset += take;
            let b = batch.len();

            // 2B rows: view-0 block then view-1 block, pairing i ↔ i+B.
            let mut v_data = Vec::with_capacity(2 * b * d);
            for view in &views {
                for &i in batch {
                    v_data.extend_from_slice(&view[i * d..(i + 1) * d]);
                }
            }

            let g = Graph::new();
            let v = g.constant(v_data, &[2 * b, d])?;
            let (h, atcg_vars) = if cfg.alpha == 1.0 {
                (v.clone(), None)
            } else if let Some(store) = &t_store {
                let mut t_data = Vec::with_capacity(2 * b * d);
                for _ in 0..cfg.num_views {
                    for &i in batch {
                        t_data.extend_from_slice(&store[i * d..(i + 1) * d]);
                    }
                }
                let t_tilde = g.constant(t_data, &[2 * b, d])?;
                (fuse(&v, &t_tilde, cfg.alpha)?, None)
            } else {
                // Fine-tuning: t̃ comes from the clean per-sample embeddings
                // through the live graph, then each view reuses its sample's
                // row (duplicated rows sum their gradients).
                let mut clean = Vec::with_capacity(b * d);
                for &i in batch {
                    clean.extend_from_slice(ds.visual_row(i));
                }
                let v_clean = g.constant(clean, &[b, d])?;
                let vars = model.register(&g, finetune)?;
                let t_once = atcg_forward(&v_clean, kb, &vars)?.t_final;
                let dup: Vec<usize> = (0..cfg.num_views).flat_map(|_| 0..b).collect();
                let t_tilde = t_once.gather_rows(&dup)?;
                (fuse(&v, &t_tilde, cfg.alpha)?, Some(vars))
            };
            let head_vars = head.register(&g, true)?;
            let f = fusion_head(&h, &head_vars)?;

            // Representation losses.
            let l_rep_u = unsup_contrastive(&f, weights.tau)?;
            let labeled_pos: Vec<usize> = batch
                .iter()
                .enumerate()
                .filter(|(_, &i)| ds.labeled_mask[i])
                .map(|(p, _)| p)
                .collect();
            let labeled_rows: Vec<usize> = labeled_pos
                .iter()
                .map(|&p| p)
                .chain(labeled_pos.iter().map(|&p| p + b))
                .collect();
            let labeled_labels: Vec<usize> = labeled_rows
                .iter()
                .map(|&r| ds.labels[batch[r % b]])
                .collect();
            let l_rep_s = if labeled_rows.is_empty() {
                g.scalar(0.0)
            } else {
                sup_contrastive(&f.gather_rows(&labeled_rows)?, &labeled_labels, weights.tau)?
            };
            let l_rep = blend(&l_rep_u, &l_rep_s, weights.lambda)?;

            // Classification losses over the prototype posterior.
            let bank_var = bank.register(&g, true)?;
            let z = prototype_logits(&f, &bank_var, weights.tau_s)?;
            let teacher = prototype_logits(&f, &bank_var, weights.tau_t)?
                .softmax_rows()?
                .detach();
            let swap: Vec<usize> = (0..2 * b).map(|r| (r + b) % (2 * b)).collect();
            let l_cls_u = cls_unsup(&z, &teacher.gather_rows(&swap)?, weights.epsilon)?;
            let l_cls_s = if labeled_rows.is_empty() {
                g.scalar(0.0)
            } else {
                cls_sup(&z.gather_rows(&labeled_rows)?, &labeled_labels)?
            };
            let l_cls = blend(&l_cls_u, &l_cls_s, weights.lambda)?;
            let loss = total(&l_rep, &l_cls)?;

            let loss_value = loss.item()?;
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged {
                    unit: "step",
                    index: opt.step_count,
                    value: loss_value,
                });
            }
            let record = GcdStepRecord {
                epoch,
                step: opt.step_count,
                l_rep_u: l_rep_u.item()?,
                l_rep_s: l_rep_s.item()?,
                l_cls_u: l_cls_u.item()?,
                l_cls_s: l_cls_s.item()?,
                total: loss_value,
                lr: opt.current_lr(),
            };
            loss.backward()?;

            let atcg_grads: Vec<Option<Vec<f64>>> = match &atcg_vars {
                Some(vars) if finetune => vars.flat().iter().map(|t| t.grad()).collect(),
                _ => Vec::new(),
            };
            let head_grads: Vec<Option<Vec<f64>>> =
                head_vars.flat().iter().map(|t| t.grad()).collect();
            let bank_grad = bank_var.grad();

            let mut updates: Vec<ParamUpdate<'_>> = Vec::new();
            if !atcg_grads.is_empty() {
                updates.extend(
                    atcg_names
                        .iter()
                        .zip(model.params_mut())
                        .zip(atcg_grads)
                        .map(|((name, param), grad)| ParamUpdate { name, param, grad }),
                );
            }
            updates.extend(
                head_names
                    .iter()
                    .zip(head.params_mut())
                    .zip(head_grads)
                    .map(|((name, param), grad)| ParamUpdate { name, param, grad }),
            );
            updates.push(ParamUpdate {
                name: &bank_names[0],
                param: &mut bank.c,
                grad: bank_grad,
            });
            opt.step(&mut updates)?;
            bank.renormalize();

            records.push(record);
            step_in_epoch += 1;
        }
        debug_assert_eq!(step_in_epoch, gcd_steps_per_epoch(n, cfg.batch_size));
    }
    Ok(records)
}
