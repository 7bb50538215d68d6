//! Synthetic paired visual/text embedding benchmark.
//!
//! Stands in for frozen encoder features: one unit text anchor per class,
//! visual anchors reached through a fixed random orthogonal rotation (the
//! modality gap), and per-sample visual embeddings scattered around their
//! class anchor. Classes `0..num_known` are the known ones; only they may
//! carry labels.
//!
//! Anchors are organized into super-groups: class `k` belongs to group
//! `k % fine_grained_groups`. Each group owns an orthonormal (center, axis)
//! pair, and its classes sit at evenly spaced positions along the axis,
//! `anchor = normalize(center + group_spread·x·axis)` with x ∈ [−1, 1].
//! Known classes take the outermost positions and novel classes the inner
//! ones, so a novel anchor is (up to scale) a convex combination of its
//! group's known anchors — novel concepts are interpolations of known ones,
//! which is precisely the structure an analogical generator can exploit.
//! Small spread makes classes within a group genuinely look-alike; a large
//! spread washes the group structure out.
//!
//! `intra_class_noise` is the expected *norm* of the Gaussian perturbation
//! (per-component std σ/√d), the same convention as the trainer's
//! embedding-space augmentation.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::rng::{self, tag};
use crate::tensor::blob::{self, Dtype};
use crate::tensor::kernels;

/// Norm deviation beyond which a loaded row counts as off-sphere.
pub const NORM_WARN_TOLERANCE: f64 = 1e-3;

/// Generator configuration. Unknown JSON fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Total number of classes, known plus novel.
    pub num_classes: usize,
    /// Number of known classes; these are class ids `0..num_known`.
    pub num_known: usize,
    /// Embedding dimension.
    pub dim: usize,
    pub samples_per_class: usize,
    /// Fraction of each known class that is labeled, in (0, 1].
    pub labeled_fraction: f64,
    /// Expected norm of the Gaussian noise around the visual anchor
    /// (per-component std is this over √dim).
    pub intra_class_noise: f64,
    /// Seed of the fixed orthogonal text→visual rotation.
    pub modality_rotation_seed: u64,
    /// Number of anchor super-groups (≥ 1, and 2·groups ≤ dim).
    pub fine_grained_groups: usize,
    /// Half-extent of a group's anchors along its semantic axis.
    pub group_spread: f64,
    /// Seed for everything else: anchors, sample noise, label mask.
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 20,
            num_known: 10,
            dim: 64,
            samples_per_class: 50,
            labeled_fraction: 0.5,
            intra_class_noise: 0.25,
            modality_rotation_seed: 7,
            fine_grained_groups: 5,
            group_spread: 0.15,
            rng_seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |field, reason: String| Err(DataError::InvalidConfig { field, reason });
        if self.num_classes == 0 {
            return fail("num_classes", "must be positive".into());
        }
        if self.num_known == 0 || self.num_known > self.num_classes {
            return fail(
                "num_known",
                format!("must be in 1..={} (num_classes)", self.num_classes),
            );
        }
        if self.dim < 4 {
            return fail("dim", format!("must be ≥ 4, got {}", self.dim));
        }
        if self.samples_per_class < 2 {
            return fail(
                "samples_per_class",
                format!("must be ≥ 2, got {}", self.samples_per_class),
            );
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return fail(
                "labeled_fraction",
                format!("must be in (0, 1], got {}", self.labeled_fraction),
            );
        }
        if !(self.intra_class_noise > 0.0 && self.intra_class_noise.is_finite()) {
            return fail(
                "intra_class_noise",
                format!("must be positive, got {}", self.intra_class_noise),
            );
        }
        if self.fine_grained_groups == 0 {
            return fail("fine_grained_groups", "must be ≥ 1".into());
        }
        if 2 * self.fine_grained_groups > self.dim {
            return fail(
                "fine_grained_groups",
                format!(
                    "needs an orthonormal center and axis per group: 2·{} > dim {}",
                    self.fine_grained_groups, self.dim
                ),
            );
        }
        if !(self.group_spread > 0.0 && self.group_spread.is_finite()) {
            return fail(
                "group_spread",
                format!("must be positive, got {}", self.group_spread),
            );
        }
        Ok(())
    }

    /// Labeled samples per known class under the masking rule: the rounded
    /// fraction, at least 1, and leaving at least one unlabeled sample
    /// whenever the fraction is below 1.
    pub fn labeled_per_class(&self) -> usize {
        let n = (self.labeled_fraction * self.samples_per_class as f64).round() as usize;
        let n = n.max(1);
        if self.labeled_fraction < 1.0 {
            n.min(self.samples_per_class - 1)
        } else {
            self.samples_per_class
        }
    }
}

/// A generated or loaded GCD dataset. Rows are unit-norm; `labels` is ground
/// truth held out for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct GcdDataset {
    /// N×dim visual embeddings, row-major.
    pub visual: Vec<f64>,
    /// num_classes×dim text anchors, row-major.
    pub text_anchors: Vec<f64>,
    /// Ground-truth class per sample (evaluation only).
    pub labels: Vec<usize>,
    /// True where the sample is labeled; implies a known-class label.
    pub labeled_mask: Vec<bool>,
    pub num_classes: usize,
    pub num_known: usize,
    pub dim: usize,
}

/// Exact split counts: labeled/unlabeled sizes and distinct class counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SplitSummary {
    pub labeled: usize,
    pub unlabeled: usize,
    pub labeled_classes: usize,
    pub unlabeled_classes: usize,
}

/// What `load_embeddings` had to fix up.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadReport {
    /// Rows whose norm deviated from 1 by more than [`NORM_WARN_TOLERANCE`].
    pub off_sphere_rows: usize,
    pub max_norm_deviation: f64,
}

fn l2_normalize_in_place(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in row {
        *v /= norm;
    }
}

/// `count` mutually orthonormal rows: Gram–Schmidt on Gaussian draws.
fn orthonormal_set<R: rand::Rng + ?Sized>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut cand = rng::gaussians(rng, dim);
        for prev in &rows {
            let dot: f64 = cand.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (c, p) in cand.iter_mut().zip(prev) {
                *c -= dot * p;
            }
        }
        let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A fresh Gaussian row is almost surely independent; redraw if not.
        if norm < 1e-8 {
            continue;
        }
        for c in &mut cand {
            *c /= norm;
        }
        rows.push(cand);
    }
    rows
}

/// Random orthogonal matrix: a full orthonormal set as row-major rows.
fn random_rotation(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[tag::ROTATION]);
    orthonormal_set(&mut rng, dim, dim).concat()
}

/// Position of every class on its group's semantic axis. A group's members
/// are spread evenly over [−1, 1]; known classes claim the outermost slots
/// (positive before negative), novel classes the remaining inner ones, each
/// in ascending class-id order.
fn class_positions(num_classes: usize, num_known: usize, groups: usize) -> Vec<f64> {
    let mut positions = vec![0.0; num_classes];
    for g in 0..groups {
        let members: Vec<usize> = (g..num_classes).step_by(groups).collect();
        let m = members.len();
        // Integer numerator/denominator keeps ±x pairs bit-symmetric so the
        // magnitude sort below ties exactly.
        let mut slots: Vec<f64> = (0..m)
            .map(|j| {
                if m == 1 {
                    0.0
                } else {
                    (2 * j as i64 - (m as i64 - 1)) as f64 / (m - 1) as f64
                }
            })
            .collect();
        slots.sort_by(|a, b| {
            b.abs()
                .partial_cmp(&a.abs())
                .unwrap()
                .then(b.partial_cmp(a).unwrap())
        });
        let (known, novel): (Vec<_>, Vec<_>) = members.iter().partition(|&&k| k < num_known);
        for (&k, x) in known.into_iter().chain(novel).zip(slots) {
            positions[k] = x;
        }
    }
    positions
}

/// Generates a dataset. Deterministic for fixed seeds: the rotation depends
/// only on `modality_rotation_seed`, and anchors, sample noise, and the
/// label mask draw from independent streams of `rng_seed`.
pub fn generate(cfg: &SynthConfig) -> Result<GcdDataset, DataError> {
    cfg.validate()?;
    let (k_total, d) = (cfg.num_classes, cfg.dim);

    // One orthonormal (center, axis) pair per group: centers are mutually
    // orthogonal so groups are well separated, and each axis is orthogonal
    // to everything else so within-group positions share no direction with
    // any other group.
    let mut centers_rng = rng::stream(cfg.rng_seed, &[tag::GROUP_CENTERS]);
    let frame = orthonormal_set(&mut centers_rng, 2 * cfg.fine_grained_groups, d);
    let (centers, axes) = frame.split_at(cfg.fine_grained_groups);

    // Anchor for class k: its group's center displaced along the group's
    // semantic axis, `normalize(center + group_spread·x_k·axis)`. Positions
    // are evenly spaced on [−1, 1]; known classes take the outermost slots,
    // so the inner (novel) anchors are positive combinations of the known
    // ones. Spread → 0 collapses a group onto its center.
    let mut text_anchors = Vec::with_capacity(k_total * d);
    let positions = class_positions(k_total, cfg.num_known, cfg.fine_grained_groups);
    for k in 0..k_total {
        let g = k % cfg.fine_grained_groups;
        let offset = cfg.group_spread * positions[k];
        let mut anchor: Vec<f64> = centers[g]
            .iter()
            .zip(&axes[g])
            .map(|(&c, &u)| c + offset * u)
            .collect();
        l2_normalize_in_place(&mut anchor);
        text_anchors.extend_from_slice(&anchor);
    }

    let rotation = random_rotation(cfg.modality_rotation_seed, d);
    let visual_anchors = kernels::matmul(&text_anchors, &rotation, k_total, d, d);

    let n = k_total * cfg.samples_per_class;
    let mut noise_rng = rng::stream(cfg.rng_seed, &[tag::SAMPLE_NOISE]);
    // Norm-calibrated noise: per-component std σ/√d so the perturbation's
    // expected norm is σ regardless of dimension.
    let per_dim_noise = cfg.intra_class_noise / (d as f64).sqrt();
    let mut visual = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for k in 0..k_total {
        let mu = &visual_anchors[k * d..(k + 1) * d];
        for _ in 0..cfg.samples_per_class {
            let g = rng::gaussians(&mut noise_rng, d);
            let mut v: Vec<f64> = mu
                .iter()
                .zip(&g)
                .map(|(&m, &e)| m + per_dim_noise * e)
                .collect();
            l2_normalize_in_place(&mut v);
            visual.extend_from_slice(&v);
            labels.push(k);
        }
    }

    let mut mask_rng = rng::stream(cfg.rng_seed, &[tag::LABEL_MASK]);
    let mut labeled_mask = vec![false; n];
    let per_class = cfg.labeled_per_class();
    for k in 0..cfg.num_known {
        let base = k * cfg.samples_per_class;
        let picks = rand::seq::index::sample(&mut mask_rng, cfg.samples_per_class, per_class);
        for ix in picks {
            labeled_mask[base + ix] = true;
        }
    }

    let ds = GcdDataset {
        visual,
        text_anchors,
        labels,
        labeled_mask,
        num_classes: k_total,
        num_known: cfg.num_known,
        dim: d,
    };
    ds.validate()?;
    Ok(ds)
}

impl GcdDataset {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn visual_row(&self, i: usize) -> &[f64] {
        &self.visual[i * self.dim..(i + 1) * self.dim]
    }

    pub fn anchor_row(&self, class: usize) -> &[f64] {
        &self.text_anchors[class * self.dim..(class + 1) * self.dim]
    }

    /// Indices of labeled samples, in dataset order.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.num_samples())
            .filter(|&i| self.labeled_mask[i])
            .collect()
    }

    /// Indices of unlabeled samples, in dataset order.
    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.num_samples())
            .filter(|&i| !self.labeled_mask[i])
            .collect()
    }

    /// Structural checks: consistent lengths, labels in range, and the
    /// labeling protocol (labeled ⟹ known class).
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.labels.len();
        if self.num_known == 0 || self.num_known > self.num_classes {
            return Err(DataError::InvalidData(format!(
                "num_known {} outside 1..={}",
                self.num_known, self.num_classes
            )));
        }
        if self.visual.len() != n * self.dim {
            return Err(DataError::InvalidData(format!(
                "visual has {} values, expected {} samples × {} dims",
                self.visual.len(),
                n,
                self.dim
            )));
        }
        if self.text_anchors.len() != self.num_classes * self.dim {
            return Err(DataError::InvalidData(format!(
                "text_anchors has {} values, expected {} classes × {} dims",
                self.text_anchors.len(),
                self.num_classes,
                self.dim
            )));
        }
        if self.labeled_mask.len() != n {
            return Err(DataError::InvalidData(format!(
                "mask length {} != {} samples",
                self.labeled_mask.len(),
                n
            )));
        }
        for (i, &y) in self.labels.iter().enumerate() {
            if y >= self.num_classes {
                return Err(DataError::InvalidData(format!(
                    "sample {i} has label {y}, outside {} classes",
                    self.num_classes
                )));
            }
            if self.labeled_mask[i] && y >= self.num_known {
                return Err(DataError::ProtocolViolation {
                    index: i,
                    class: y,
                    num_known: self.num_known,
                });
            }
        }
        Ok(())
    }

    pub fn split_summary(&self) -> SplitSummary {
        let mut labeled = 0;
        let mut in_labeled = vec![false; self.num_classes];
        let mut in_unlabeled = vec![false; self.num_classes];
        for (&y, &m) in self.labels.iter().zip(&self.labeled_mask) {
            if m {
                labeled += 1;
                in_labeled[y] = true;
            } else {
                in_unlabeled[y] = true;
            }
        }
        SplitSummary {
            labeled,
            unlabeled: self.labels.len() - labeled,
            labeled_classes: in_labeled.iter().filter(|&&b| b).count(),
            unlabeled_classes: in_unlabeled.iter().filter(|&&b| b).count(),
        }
    }

    /// Writes `visual.tensor`, `text_anchors.tensor`, `labels.txt`,
    /// `mask.txt`, and (when given) a `synth_config.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path, cfg: Option<&SynthConfig>) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        let wrap = |what: &'static str| move |source| DataError::Blob { what, source };
        blob::save_tensor(
            dir.join("visual.tensor"),
            &self.visual,
            &[self.num_samples(), self.dim],
            Dtype::F64,
        )
        .map_err(wrap("visual.tensor"))?;
        blob::save_tensor(
            dir.join("text_anchors.tensor"),
            &self.text_anchors,
            &[self.num_classes, self.dim],
            Dtype::F64,
        )
        .map_err(wrap("text_anchors.tensor"))?;

        let mut labels_out = fs::File::create(dir.join("labels.txt"))?;
        for &y in &self.labels {
            writeln!(labels_out, "{y}")?;
        }
        let mut mask_out = fs::File::create(dir.join("mask.txt"))?;
        for &m in &self.labeled_mask {
            writeln!(mask_out, "{}", if m { 1 } else { 0 })?;
        }
        if let Some(cfg) = cfg {
            fs::write(
                dir.join("synth_config.json"),
                serde_json::to_string_pretty(cfg)?,
            )?;
        }
        Ok(())
    }
}

fn parse_lines<T>(
    path: &Path,
    what: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, DataError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse(line).ok_or_else(|| {
            DataError::InvalidData(format!("{what} line {}: bad value {line:?}", lineno + 1))
        })?);
    }
    Ok(out)
}

/// Loads a dataset from the four artifact files. Rows are re-normalized to
/// unit norm; the report counts rows that were off the sphere by more than
/// [`NORM_WARN_TOLERANCE`]. `num_known` defines the known-class prefix and
/// is checked against the labeling protocol.
pub fn load_embeddings(
    path_visual: &Path,
    path_text_anchors: &Path,
    path_labels: &Path,
    path_mask: &Path,
    num_known: usize,
) -> Result<(GcdDataset, LoadReport), DataError> {
    let wrap = |what: &'static str| move |source| DataError::Blob { what, source };
    let (mut visual, vshape) = blob::load_tensor(path_visual).map_err(wrap("visual"))?;
    let (mut anchors, ashape) = blob::load_tensor(path_text_anchors).map_err(wrap("text anchors"))?;
    if vshape.len() != 2 || ashape.len() != 2 {
        return Err(DataError::InvalidData(format!(
            "expected rank-2 tensors, got shapes {vshape:?} and {ashape:?}"
        )));
    }
    let (n, d) = (vshape[0], vshape[1]);
    let (k_total, da) = (ashape[0], ashape[1]);
    if da != d {
        return Err(DataError::InvalidData(format!(
            "visual dim {d} != text anchor dim {da}"
        )));
    }

    let labels = parse_lines(path_labels, "labels", |s| s.parse::<usize>().ok())?;
    let mask = parse_lines(path_mask, "mask", |s| match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    })?;
    if labels.len() != n {
        return Err(DataError::InvalidData(format!(
            "labels has {} entries, visual has {n} rows",
            labels.len()
        )));
    }
    if mask.len() != n {
        return Err(DataError::InvalidData(format!(
            "mask has {} entries, visual has {n} rows",
            mask.len()
        )));
    }

    let mut report = LoadReport::default();
    for rows in [visual.chunks_mut(d), anchors.chunks_mut(d)] {
        for row in rows {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dev = (norm - 1.0).abs();
            if dev > NORM_WARN_TOLERANCE {
                report.off_sphere_rows += 1;
            }
            report.max_norm_deviation = report.max_norm_deviation.max(dev);
            if norm <= 0.0 || !norm.is_finite() {
                return Err(DataError::InvalidData(
                    "embedding row with zero or non-finite norm".into(),
                ));
            }
            for v in row {
                *v /= norm;
            }
        }
    }

    let ds = GcdDataset {
        visual,
        text_anchors: anchors,
        labels,
        labeled_mask: mask,
        num_classes: k_total,
        num_known,
        dim: d,
    };
    ds.validate()?;
    Ok((ds, report))
}

/// Loads from a directory written by [`GcdDataset::save`], reading
/// `num_known` from the `synth_config.json` sidecar.
pub fn load_dir(dir: &Path) -> Result<(GcdDataset, LoadReport, SynthConfig), DataError> {
    let sidecar = dir.join("synth_config.json");
    let cfg: SynthConfig = serde_json::from_str(&fs::read_to_string(&sidecar).map_err(|e| {
        DataError::Manifest(format!(
            "cannot read {} (needed for num_known): {e}",
            sidecar.display()
        ))
    })?)?;
    cfg.validate()?;
    let (ds, report) = load_embeddings(
        &dir.join("visual.tensor"),
        &dir.join("text_anchors.tensor"),
        &dir.join("labels.txt"),
        &dir.join("mask.txt"),
        cfg.num_known,
    )?;
    Ok((ds, report, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_classes: 10,
            num_known: 5,
            dim: 16,
            samples_per_class: 20,
            labeled_fraction: 0.5,
            ..SynthConfig::default()
        }
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn masking_rule_counts_exactly() {
        let ds = generate(&small_cfg()).unwrap();
        let s = ds.split_summary();
        assert_eq!(
            (s.labeled, s.unlabeled, s.labeled_classes, s.unlabeled_classes),
            (50, 150, 5, 10)
        );
        // Per-class labeled counts match the rule, not just the total.
        for k in 0..5 {
            let count = ds
                .labels
                .iter()
                .zip(&ds.labeled_mask)
                .filter(|&(&y, &m)| y == k && m)
                .count();
            assert_eq!(count, 10);
        }
    }

    #[test]
    fn zero_noise_limit_recovers_anchors() {
        let cfg = SynthConfig {
            intra_class_noise: 1e-12,
            labeled_fraction: 1.0,
            num_known: 10,
            num_classes: 10,
            dim: 16,
            samples_per_class: 3,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.split_summary().unlabeled, 0);
        let rotation = random_rotation(cfg.modality_rotation_seed, cfg.dim);
        let visual_anchors =
            kernels::matmul(&ds.text_anchors, &rotation, cfg.num_classes, cfg.dim, cfg.dim);
        for i in 0..ds.num_samples() {
            // Nearest visual anchor is the sample's own class.
            let (mut best, mut best_cos) = (usize::MAX, f64::NEG_INFINITY);
            for k in 0..cfg.num_classes {
                let c = cos(
                    ds.visual_row(i),
                    &visual_anchors[k * cfg.dim..(k + 1) * cfg.dim],
                );
                if c > best_cos {
                    (best, best_cos) = (k, c);
                }
            }
            assert_eq!(best, ds.labels[i]);
            assert!(best_cos > 1.0 - 1e-9);
        }
    }

    #[test]
    fn same_seeds_are_bit_identical() {
        let a = generate(&small_cfg()).unwrap();
        let b = generate(&small_cfg()).unwrap();
        assert_eq!(a, b);
        let mut other = small_cfg();
        other.rng_seed += 1;
        assert_ne!(generate(&other).unwrap().visual, a.visual);
    }

    #[test]
    fn all_rows_unit_norm() {
        let ds = generate(&small_cfg()).unwrap();
        for row in ds.visual.chunks(ds.dim).chain(ds.text_anchors.chunks(ds.dim)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
        }
    }

    #[test]
    fn tight_groups_are_look_alike() {
        let cfg = SynthConfig {
            group_spread: 1e-4,
            fine_grained_groups: 5,
            ..small_cfg()
        };
        let ds = generate(&cfg).unwrap();
        for a in 0..cfg.num_classes {
            for b in (a + 1)..cfg.num_classes {
                let c = cos(ds.anchor_row(a), ds.anchor_row(b));
                if a % 5 == b % 5 {
                    assert!(c > 0.999_999, "same group {a},{b}: cos {c}");
                } else {
                    // Distinct groups live in orthogonal planes.
                    assert!(c.abs() < 1e-9, "different groups {a},{b}: cos {c}");
                }
            }
        }
    }

    #[test]
    fn within_group_cosines_match_closed_form() {
        // cos(anchor(x1), anchor(x2)) = (1 + s²x1x2) / √((1+s²x1²)(1+s²x2²)).
        let cfg = SynthConfig::default();
        let ds = generate(&cfg).unwrap();
        let positions = class_positions(cfg.num_classes, cfg.num_known, cfg.fine_grained_groups);
        let s2 = cfg.group_spread * cfg.group_spread;
        for a in 0..cfg.num_classes {
            for b in (a + 1)..cfg.num_classes {
                if a % cfg.fine_grained_groups != b % cfg.fine_grained_groups {
                    continue;
                }
                let (x1, x2) = (positions[a], positions[b]);
                let expect =
                    (1.0 + s2 * x1 * x2) / ((1.0 + s2 * x1 * x1) * (1.0 + s2 * x2 * x2)).sqrt();
                let got = cos(ds.anchor_row(a), ds.anchor_row(b));
                assert!((got - expect).abs() < 1e-9, "{a},{b}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn class_positions_put_known_outermost() {
        // Default shape: 4 members per group, known at ±1, novel at ±1/3.
        let pos = class_positions(20, 10, 5);
        for g in 0..5 {
            assert_eq!(pos[g], 1.0);
            assert_eq!(pos[g + 5], -1.0);
            assert!((pos[g + 10] - 1.0 / 3.0).abs() < 1e-12);
            assert!((pos[g + 15] + 1.0 / 3.0).abs() < 1e-12);
        }
        // Odd group size: three members, the single novel one dead center.
        let pos = class_positions(6, 4, 2);
        assert_eq!(&pos[..], &[1.0, 1.0, -1.0, -1.0, 0.0, 0.0]);
        // One class per group sits at the origin offset.
        assert_eq!(class_positions(3, 2, 3), vec![0.0; 3]);
    }

    #[test]
    fn novel_anchors_are_convex_combinations_of_known() {
        let cfg = SynthConfig::default();
        let ds = generate(&cfg).unwrap();
        let g_of = |k: usize| k % cfg.fine_grained_groups;
        for novel in cfg.num_known..cfg.num_classes {
            let known: Vec<usize> = (0..cfg.num_known)
                .filter(|&k| g_of(k) == g_of(novel))
                .collect();
            assert_eq!(known.len(), 2);
            let (a1, a2) = (ds.anchor_row(known[0]), ds.anchor_row(known[1]));
            let t = ds.anchor_row(novel);
            // Solve the 2×2 Gram system for t ≈ β1·a1 + β2·a2.
            let (g11, g22) = (1.0, 1.0);
            let g12 = cos(a1, a2);
            let (b1, b2) = (cos(t, a1), cos(t, a2));
            let det = g11 * g22 - g12 * g12;
            let beta1 = (b1 * g22 - b2 * g12) / det;
            let beta2 = (b2 * g11 - b1 * g12) / det;
            assert!(beta1 > 0.0 && beta2 > 0.0, "{novel}: β = {beta1}, {beta2}");
            let mut residual = 0.0;
            for i in 0..cfg.dim {
                let fit = beta1 * a1[i] + beta2 * a2[i];
                residual += (t[i] - fit) * (t[i] - fit);
            }
            assert!(residual.sqrt() < 1e-9, "{novel}: residual {residual}");
        }
    }

    #[test]
    fn rotation_is_orthogonal() {
        let d = 16;
        let r = random_rotation(42, d);
        let rt = kernels::transpose(&r, d, d);
        let prod = kernels::matmul(&r, &rt, d, d, d);
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * d + j] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let ds = generate(&cfg).unwrap();
        ds.save(dir.path(), Some(&cfg)).unwrap();
        let (back, report, cfg_back) = load_dir(dir.path()).unwrap();
        assert_eq!(cfg_back, cfg);
        assert_eq!(report.off_sphere_rows, 0);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.labeled_mask, ds.labeled_mask);
        assert_eq!(back.num_known, ds.num_known);
        for (a, b) in back.visual.iter().zip(&ds.visual) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in back.text_anchors.iter().zip(&ds.text_anchors) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn loader_rejects_count_mismatch_and_protocol_violation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let ds = generate(&cfg).unwrap();
        ds.save(dir.path(), Some(&cfg)).unwrap();
        let p = |name: &str| dir.path().join(name);

        // Labels file shorter than the visual rows.
        let labels = fs::read_to_string(p("labels.txt")).unwrap();
        let truncated: Vec<&str> = labels.lines().take(ds.num_samples() - 1).collect();
        fs::write(p("short.txt"), truncated.join("\n")).unwrap();
        let err = load_embeddings(
            &p("visual.tensor"),
            &p("text_anchors.tensor"),
            &p("short.txt"),
            &p("mask.txt"),
            cfg.num_known,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::InvalidData(_)), "{err}");

        // Mask that marks an unknown-class sample as labeled.
        let mask = fs::read_to_string(p("mask.txt")).unwrap();
        let mut lines: Vec<String> = mask.lines().map(String::from).collect();
        let novel_ix = ds.labels.iter().position(|&y| y >= cfg.num_known).unwrap();
        lines[novel_ix] = "1".into();
        fs::write(p("bad_mask.txt"), lines.join("\n")).unwrap();
        let err = load_embeddings(
            &p("visual.tensor"),
            &p("text_anchors.tensor"),
            &p("labels.txt"),
            &p("bad_mask.txt"),
            cfg.num_known,
        )
        .unwrap_err();
        assert!(
            matches!(err, DataError::ProtocolViolation { class, .. } if class >= cfg.num_known),
            "{err}"
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for (mutate, field) in [
            (
                Box::new(|c: &mut SynthConfig| c.num_known = c.num_classes + 1)
                    as Box<dyn Fn(&mut SynthConfig)>,
                "num_known",
            ),
            (Box::new(|c: &mut SynthConfig| c.dim = 3), "dim"),
            (
                Box::new(|c: &mut SynthConfig| c.samples_per_class = 1),
                "samples_per_class",
            ),
            (
                Box::new(|c: &mut SynthConfig| c.labeled_fraction = 0.0),
                "labeled_fraction",
            ),
            (
                Box::new(|c: &mut SynthConfig| c.intra_class_noise = -1.0),
                "intra_class_noise",
            ),
            (
                Box::new(|c: &mut SynthConfig| c.fine_grained_groups = 0),
                "fine_grained_groups",
            ),
            (
                // dim 16 can host at most 8 orthonormal (center, axis) pairs.
                Box::new(|c: &mut SynthConfig| c.fine_grained_groups = 9),
                "fine_grained_groups",
            ),
        ] {
            let mut cfg = small_cfg();
            mutate(&mut cfg);
            match generate(&cfg).unwrap_err() {
                DataError::InvalidConfig { field: f, .. } => assert_eq!(f, field),
                other => panic!("expected InvalidConfig({field}), got {other}"),
            }
        }
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let mut v = serde_json::to_value(small_cfg()).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        let parsed: Result<SynthConfig, _> = serde_json::from_value(v);
        assert!(parsed.is_err());
    }
}
