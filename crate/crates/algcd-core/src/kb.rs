//! Visual–textual knowledge base built from labeled samples.
//!
//! Each entry pairs a labeled sample's visual embedding with its class text
//! anchor. The generator attends over these pairs; `mode` selects how much
//! of the base serves as attention context. `Full` is the faithful default;
//! `ClassPrototype` and `TopK` are compression extensions for scaling.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DataError;
use crate::synth::GcdDataset;
use crate::tensor::blob::{self, Dtype};

/// Manifest format version.
pub const KB_VERSION: u32 = 1;

/// How the base is served as attention context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbMode {
    /// Every labeled pair (the faithful setting).
    Full,
    /// One re-normalized mean pair per class.
    ClassPrototype,
    /// Per-query top-k most similar pairs (an unvalidated scaling variant).
    Topk(usize),
}

/// Immutable after build; freely shareable.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    /// L×dim visual keys, row-major, unit-norm.
    pub visual_keys: Vec<f64>,
    /// L×dim text values, row-major, unit-norm.
    pub text_values: Vec<f64>,
    /// Class of each pair.
    pub class_ids: Vec<usize>,
    pub mode: KbMode,
    pub dim: usize,
}

#[derive(Serialize, Deserialize)]
struct KbManifest {
    version: u32,
    mode: KbMode,
    dim: usize,
    class_ids: Vec<usize>,
    checksum: String,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Builds the full-mode base: one (visual, text-anchor) pair per labeled
/// sample, in dataset order.
pub fn build(ds: &GcdDataset) -> Result<KnowledgeBase, DataError> {
    ds.validate()?;
    let labeled = ds.labeled_indices();
    if labeled.is_empty() {
        return Err(DataError::InvalidData(
            "cannot build a knowledge base: dataset has no labeled samples".into(),
        ));
    }
    let d = ds.dim;
    let mut visual_keys = Vec::with_capacity(labeled.len() * d);
    let mut text_values = Vec::with_capacity(labeled.len() * d);
    let mut class_ids = Vec::with_capacity(labeled.len());
    for &i in &labeled {
        visual_keys.extend_from_slice(ds.visual_row(i));
        text_values.extend_from_slice(ds.anchor_row(ds.labels[i]));
        class_ids.push(ds.labels[i]);
    }
    Ok(KnowledgeBase {
        visual_keys,
        text_values,
        class_ids,
        mode: KbMode::Full,
        dim: d,
    })
}

/// Builds a full-mode base over an explicit subset of sample indices (the
/// per-round episode bases of analogical training). Indices must be in
/// range; their label supplies the text value whether or not the sample is
/// in the labeled split.
pub fn build_from_indices(ds: &GcdDataset, indices: &[usize]) -> Result<KnowledgeBase, DataError> {
    if indices.is_empty() {
        return Err(DataError::InvalidData(
            "cannot build a knowledge base from an empty index set".into(),
        ));
    }
    let d = ds.dim;
    let mut visual_keys = Vec::with_capacity(indices.len() * d);
    let mut text_values = Vec::with_capacity(indices.len() * d);
    let mut class_ids = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= ds.num_samples() {
            return Err(DataError::InvalidData(format!(
                "knowledge-base index {i} outside dataset of {} samples",
                ds.num_samples()
            )));
        }
        visual_keys.extend_from_slice(ds.visual_row(i));
        text_values.extend_from_slice(ds.anchor_row(ds.labels[i]));
        class_ids.push(ds.labels[i]);
    }
    Ok(KnowledgeBase {
        visual_keys,
        text_values,
        class_ids,
        mode: KbMode::Full,
        dim: d,
    })
}

impl KnowledgeBase {
    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn visual_key(&self, i: usize) -> &[f64] {
        &self.visual_keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn text_value(&self, i: usize) -> &[f64] {
        &self.text_values[i * self.dim..(i + 1) * self.dim]
    }

    /// Structural checks: matching row counts and unit-norm rows (1e-6).
    pub fn validate(&self) -> Result<(), DataError> {
        let l = self.class_ids.len();
        if self.visual_keys.len() != l * self.dim || self.text_values.len() != l * self.dim {
            return Err(DataError::InvalidData(format!(
                "knowledge base rows disagree: {} class ids, {} visual values, {} text values, dim {}",
                l,
                self.visual_keys.len(),
                self.text_values.len(),
                self.dim
            )));
        }
        for (name, rows) in [
            ("visual key", &self.visual_keys),
            ("text value", &self.text_values),
        ] {
            for (i, row) in rows.chunks(self.dim).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(DataError::InvalidData(format!(
                        "{name} row {i} has norm {norm}, expected unit"
                    )));
                }
            }
        }
        if let KbMode::Topk(k) = self.mode {
            if k == 0 || k > l {
                return Err(DataError::InvalidData(format!(
                    "topk mode with k={k} over {l} pairs"
                )));
            }
        }
        Ok(())
    }

    /// Compresses to one pair per distinct class: visual key is the
    /// re-normalized class mean, text value the (shared) class anchor.
    /// Idempotent; classes come out in ascending id order.
    pub fn as_prototypes(&self) -> Result<KnowledgeBase, DataError> {
        let d = self.dim;
        let mut classes: Vec<usize> = self.class_ids.clone();
        classes.sort_unstable();
        classes.dedup();
        let mut visual_keys = Vec::with_capacity(classes.len() * d);
        let mut text_values = Vec::with_capacity(classes.len() * d);
        for &k in &classes {
            let mut mean = vec![0.0; d];
            let mut count = 0usize;
            let mut text = None;
            for i in 0..self.len() {
                if self.class_ids[i] == k {
                    for (m, &v) in mean.iter_mut().zip(self.visual_key(i)) {
                        *m += v;
                    }
                    count += 1;
                    text.get_or_insert_with(|| self.text_value(i).to_vec());
                }
            }
            for m in &mut mean {
                *m /= count as f64;
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return Err(DataError::InvalidData(format!(
                    "class {k} visual mean has norm {norm:.3e}; cannot normalize a degenerate prototype"
                )));
            }
            for m in &mut mean {
                *m /= norm;
            }
            visual_keys.extend_from_slice(&mean);
            text_values.extend_from_slice(&text.expect("class came from class_ids"));
        }
        Ok(KnowledgeBase {
            visual_keys,
            text_values,
            class_ids: classes,
            mode: KbMode::ClassPrototype,
            dim: d,
        })
    }

    /// Row indices of the `k` visual keys most cosine-similar to `query`,
    /// most similar first; ties break toward the lower row index.
    pub fn top_k_rows(&self, query: &[f64], k: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let dot: f64 = self.visual_key(i).iter().zip(query).map(|(a, b)| a * b).sum();
                (i, dot)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored.into_iter().map(|(i, _)| i).collect()
    }

    /// Writes `visual_keys.tensor`, `text_values.tensor`, and
    /// `kb_manifest.json` (mode, class ids, payload checksum) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let wrap = |what: &'static str| move |source| DataError::Blob { what, source };
        let l = self.len();
        blob::save_tensor(
            dir.join("visual_keys.tensor"),
            &self.visual_keys,
            &[l, self.dim],
            Dtype::F64,
        )
        .map_err(wrap("visual_keys.tensor"))?;
        blob::save_tensor(
            dir.join("text_values.tensor"),
            &self.text_values,
            &[l, self.dim],
            Dtype::F64,
        )
        .map_err(wrap("text_values.tensor"))?;
        let vk = fs::read(dir.join("visual_keys.tensor"))?;
        let tv = fs::read(dir.join("text_values.tensor"))?;
        let manifest = KbManifest {
            version: KB_VERSION,
            mode: self.mode,
            dim: self.dim,
            class_ids: self.class_ids.clone(),
            checksum: sha256_hex(&[&vk, &tv]),
        };
        fs::write(
            dir.join("kb_manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    /// Loads a base saved by [`KnowledgeBase::save`], verifying the payload
    /// checksum before parsing.
    pub fn load(dir: &Path) -> Result<KnowledgeBase, DataError> {
        let manifest: KbManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("kb_manifest.json"))?)?;
        if manifest.version != KB_VERSION {
            return Err(DataError::Manifest(format!(
                "knowledge base version {} (this build reads {KB_VERSION})",
                manifest.version
            )));
        }
        let vk = fs::read(dir.join("visual_keys.tensor"))?;
        let tv = fs::read(dir.join("text_values.tensor"))?;
        let computed = sha256_hex(&[&vk, &tv]);
        if computed != manifest.checksum {
            return Err(DataError::ChecksumMismatch {
                what: "knowledge base tensors".into(),
                stored: manifest.checksum,
                computed,
            });
        }
        let wrap = |what: &'static str| move |source| DataError::Blob { what, source };
        let (visual_keys, vshape) =
            blob::read_tensor(&mut vk.as_slice()).map_err(wrap("visual_keys.tensor"))?;
        let (text_values, tshape) =
            blob::read_tensor(&mut tv.as_slice()).map_err(wrap("text_values.tensor"))?;
        let l = manifest.class_ids.len();
        if vshape != [l, manifest.dim] || tshape != [l, manifest.dim] {
            return Err(DataError::Manifest(format!(
                "manifest lists {l} pairs of dim {}, blobs have shapes {vshape:?} and {tshape:?}",
                manifest.dim
            )));
        }
        let kb = KnowledgeBase {
            visual_keys,
            text_values,
            class_ids: manifest.class_ids,
            mode: manifest.mode,
            dim: manifest.dim,
        };
        kb.validate()?;
        Ok(kb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn kb_cfg() -> SynthConfig {
        SynthConfig {
            num_classes: 20,
            num_known: 10,
            dim: 16,
            samples_per_class: 10,
            labeled_fraction: 0.5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn build_pairs_every_labeled_sample() {
        let ds = generate(&kb_cfg()).unwrap();
        let kb = build(&ds).unwrap();
        assert_eq!(kb.len(), 50);
        assert_eq!(kb.mode, KbMode::Full);
        kb.validate().unwrap();
        // Same-class entries share one text value row.
        let first_of = |class: usize| {
            (0..kb.len())
                .find(|&i| kb.class_ids[i] == class)
                .unwrap()
        };
        for i in 0..kb.len() {
            assert_eq!(kb.text_value(i), kb.text_value(first_of(kb.class_ids[i])));
        }
        assert_eq!(build(&ds).unwrap(), kb);
    }

    #[test]
    fn prototypes_compress_to_one_row_per_class() {
        let ds = generate(&kb_cfg()).unwrap();
        let kb = build(&ds).unwrap();
        let proto = kb.as_prototypes().unwrap();
        assert_eq!(proto.len(), 10);
        assert_eq!(proto.mode, KbMode::ClassPrototype);
        assert_eq!(proto.class_ids, (0..10).collect::<Vec<_>>());
        proto.validate().unwrap();
        // Idempotent.
        let again = proto.as_prototypes().unwrap();
        for (a, b) in again.visual_keys.iter().zip(&proto.visual_keys) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(again.class_ids, proto.class_ids);
    }

    #[test]
    fn singleton_class_prototype_is_the_sample() {
        let ds = generate(&SynthConfig {
            labeled_fraction: 0.1, // → 1 labeled sample per known class
            ..kb_cfg()
        })
        .unwrap();
        let kb = build(&ds).unwrap();
        assert_eq!(kb.len(), 10);
        let proto = kb.as_prototypes().unwrap();
        for (a, b) in proto.visual_keys.iter().zip(&kb.visual_keys) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn antipodal_rows_make_a_degenerate_prototype() {
        let kb = KnowledgeBase {
            visual_keys: vec![1.0, 0.0, -1.0, 0.0],
            text_values: vec![0.0, 1.0, 0.0, 1.0],
            class_ids: vec![3, 3],
            mode: KbMode::Full,
            dim: 2,
        };
        let err = kb.as_prototypes().unwrap_err();
        assert!(matches!(err, DataError::InvalidData(_)), "{err}");
    }

    #[test]
    fn top_k_orders_by_cosine() {
        let kb = KnowledgeBase {
            visual_keys: vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0],
            text_values: vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0],
            class_ids: vec![0, 1, 2],
            mode: KbMode::Full,
            dim: 2,
        };
        let q = [0.8, 0.6];
        assert_eq!(kb.top_k_rows(&q, 2), vec![0, 1]);
        assert_eq!(kb.top_k_rows(&q, 3), vec![0, 1, 2]);
    }

    #[test]
    fn save_load_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&kb_cfg()).unwrap();
        let kb = build(&ds).unwrap();
        kb.save(dir.path()).unwrap();
        let back = KnowledgeBase::load(dir.path()).unwrap();
        assert_eq!(back, kb);

        // Truncated blob → checksum mismatch before any parsing.
        let vk_path = dir.path().join("visual_keys.tensor");
        let bytes = fs::read(&vk_path).unwrap();
        fs::write(&vk_path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            KnowledgeBase::load(dir.path()).unwrap_err(),
            DataError::ChecksumMismatch { .. }
        ));
        fs::write(&vk_path, &bytes).unwrap();

        // Manifest row count disagreeing with the blobs → format error.
        let man_path = dir.path().join("kb_manifest.json");
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&man_path).unwrap()).unwrap();
        manifest["class_ids"].as_array_mut().unwrap().pop();
        fs::write(&man_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(
            KnowledgeBase::load(dir.path()).unwrap_err(),
            DataError::Manifest(_)
        ));

        // Wrong version → version error.
        manifest["class_ids"] = serde_json::to_value(&kb.class_ids).unwrap();
        manifest["version"] = serde_json::json!(99);
        fs::write(&man_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(
            KnowledgeBase::load(dir.path()).unwrap_err(),
            DataError::Manifest(_)
        ));
    }
}
