//! Evaluation protocol: Hungarian-matched clustering accuracy with
//! All/Old/New breakdown, a prototype-argmax host, a semi-supervised
//! k-means host, and ablation sweeps.
//!
//! All three accuracies are read off one global matching computed over the
//! full unlabeled set — never from per-subset matchings.

pub mod ablate;
pub mod hungarian;
pub mod kmeans;

use serde::{Deserialize, Serialize};

use crate::atcg::{atcg_forward, fuse, fusion_head, AtcgModel, FusionHead};
use crate::error::EvalError;
use crate::kb::KnowledgeBase;
use crate::objectives::{prototype_posterior, PrototypeBank};
use crate::synth::GcdDataset;
use crate::tensor::Graph;
use hungarian::hungarian;
use kmeans::{semi_supervised_kmeans, KmeansOptions};

/// Forward passes are chunked to bound graph memory; results are identical
/// to a single pass because every op is row-independent.
const EVAL_CHUNK_ROWS: usize = 512;

/// Injective map from predicted cluster ids to true class ids, chosen to
/// maximize the total matched count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    /// `mapping[c]` is the true class matched to predicted cluster c.
    pub mapping: Vec<usize>,
    /// Samples whose true class equals their cluster's matched class.
    pub matched: usize,
}

/// Which classifier produced the predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Host {
    Parametric,
    Kmeans,
}

impl std::fmt::Display for Host {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Host::Parametric => write!(f, "parametric"),
            Host::Kmeans => write!(f, "kmeans"),
        }
    }
}

/// Accuracy breakdown plus the run configuration it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub all_acc: f64,
    pub old_acc: f64,
    pub new_acc: f64,
    pub n_unlabeled: usize,
    pub n_old: usize,
    pub n_new: usize,
    pub k_used: usize,
    pub host: Host,
    pub seed: u64,
    pub alpha: f64,
    pub num_stacked: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "host,seed,alpha,num_stacked,k_used,n_unlabeled,n_old,n_new,all,old,new";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{},{},{},{},{},{:?},{:?},{:?}",
            self.host,
            self.seed,
            self.alpha,
            self.num_stacked,
            self.k_used,
            self.n_unlabeled,
            self.n_old,
            self.n_new,
            self.all_acc,
            self.old_acc,
            self.new_acc
        )
    }
}

/// Builds the contingency matrix of `pred` against `truth` and returns the
/// match-count-maximizing assignment of clusters to classes.
pub fn match_clusters(pred: &[usize], truth: &[usize]) -> Result<Assignment, EvalError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(EvalError::InvalidInput(format!(
            "match_clusters: {} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    let k = 1 + pred
        .iter()
        .chain(truth.iter())
        .copied()
        .max()
        .expect("non-empty");
    let mut counts = vec![0usize; k * k];
    for (&c, &t) in pred.iter().zip(truth) {
        counts[c * k + t] += 1;
    }
    // Maximize matches == minimize negated counts.
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..k).map(|t| -(counts[c * k + t] as f64)).collect())
        .collect();
    let (mapping, _) = hungarian(&cost)?;
    let matched = mapping
        .iter()
        .enumerate()
        .map(|(c, &t)| counts[c * k + t])
        .sum();
    Ok(Assignment { mapping, matched })
}

/// Standard GCD metric: one Hungarian matching over the full unlabeled set,
/// then All/Old/New read off that single matching. `known_classes` decides
/// which truths count as Old. Buckets with no samples report accuracy 0 and
/// expose their emptiness through the count fields.
pub fn gcd_accuracy(
    pred: &[usize],
    truth: &[usize],
    known_classes: &[usize],
) -> Result<MetricsReport, EvalError> {
    let assignment = match_clusters(pred, truth)?;
    let known: std::collections::BTreeSet<usize> = known_classes.iter().copied().collect();
    let (mut n_old, mut n_new, mut hit_old, mut hit_new) = (0usize, 0usize, 0usize, 0usize);
    for (&c, &t) in pred.iter().zip(truth) {
        let hit = assignment.mapping[c] == t;
        if known.contains(&t) {
            n_old += 1;
            hit_old += usize::from(hit);
        } else {
            n_new += 1;
            hit_new += usize::from(hit);
        }
    }
    let frac = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    Ok(MetricsReport {
        all_acc: frac(hit_old + hit_new, pred.len()),
        old_acc: frac(hit_old, n_old),
        new_acc: frac(hit_new, n_new),
        n_unlabeled: pred.len(),
        n_old,
        n_new,
        k_used: assignment.mapping.len(),
        host: Host::Parametric,
        seed: 0,
        alpha: 1.0,
        num_stacked: 0,
    })
}

/// Runs the generator + fusion + head over `n` visual rows (row-major) and
/// returns the normalized fused embeddings, row-major n×dim_out.
///
/// With α = 1 the generator is skipped entirely; `fuse` passes the visual
/// embedding through bit-exactly, so the skip is unobservable.
pub fn fused_embeddings(
    visual: &[f64],
    n: usize,
    d: usize,
    kb: &KnowledgeBase,
    atcg: &AtcgModel,
    head: &FusionHead,
    alpha: f64,
) -> Result<Vec<f64>, EvalError> {
    if visual.len() != n * d {
        return Err(EvalError::InvalidInput(format!(
            "fused_embeddings: {} values for {n}×{d}",
            visual.len()
        )));
    }
    let mut out = Vec::with_capacity(n * head.dim_out);
    let mut start = 0usize;
    while start < n {
        let rows = EVAL_CHUNK_ROWS.min(n - start);
        let g = Graph::new();
        let v = g.constant(visual[start * d..(start + rows) * d].to_vec(), &[rows, d])?;
        let h = if alpha == 1.0 {
            v
        } else {
            let vars = atcg.register(&g, false)?;
            let t_tilde = atcg_forward(&v, kb, &vars)?.t_final;
            fuse(&v, &t_tilde, alpha)?
        };
        let head_vars = head.register(&g, false)?;
        out.extend(fusion_head(&h, &head_vars)?.data());
        start += rows;
    }
    Ok(out)
}

fn argmax_rows(p: &[f64], rows: usize, k: usize) -> Vec<usize> {
    (0..rows)
        .map(|i| {
            let row = &p[i * k..(i + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn gather_rows(ds: &GcdDataset, indices: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * ds.dim);
    for &i in indices {
        out.extend_from_slice(ds.visual_row(i));
    }
    out
}

/// Parametric host: each unlabeled sample is classified by the argmax of
/// its prototype posterior on the fused embedding (ties to the lowest
/// index), then scored with one global matching.
#[allow(clippy::too_many_arguments)]
pub fn eval_parametric(
    ds: &GcdDataset,
    kb: &KnowledgeBase,
    atcg: &AtcgModel,
    head: &FusionHead,
    bank: &PrototypeBank,
    alpha: f64,
    tau_s: f64,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    let unlabeled = ds.unlabeled_indices();
    if unlabeled.is_empty() {
        return Err(EvalError::InvalidInput(
            "eval_parametric: dataset has no unlabeled samples".into(),
        ));
    }
    let visual = gather_rows(ds, &unlabeled);
    let f = fused_embeddings(&visual, unlabeled.len(), ds.dim, kb, atcg, head, alpha)?;
    let g = Graph::new();
    let f_t = g.constant(f, &[unlabeled.len(), head.dim_out])?;
    let c = bank.register(&g, false)?;
    let posterior = prototype_posterior(&f_t, &c, tau_s)?;
    let pred = argmax_rows(&posterior.data(), unlabeled.len(), bank.num_classes);
    let truth: Vec<usize> = unlabeled.iter().map(|&i| ds.labels[i]).collect();
    let known: Vec<usize> = (0..ds.num_known).collect();
    let mut report = gcd_accuracy(&pred, &truth, &known)?;
    report.k_used = bank.num_classes;
    report.host = Host::Parametric;
    report.seed = seed;
    report.alpha = alpha;
    report.num_stacked = atcg.num_stacked;
    Ok(report)
}

/// Clustering host: semi-supervised k-means over the fused embeddings of
/// the full dataset (labeled points pinned to their class's cluster), then
/// the unlabeled assignments are scored with one global matching.
#[allow(clippy::too_many_arguments)]
pub fn eval_kmeans(
    ds: &GcdDataset,
    kb: &KnowledgeBase,
    atcg: &AtcgModel,
    head: &FusionHead,
    alpha: f64,
    k: usize,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidInput(format!(
            "eval_kmeans: k must be ≥ 2, got {k}"
        )));
    }
    if k < ds.num_known {
        return Err(EvalError::InvalidInput(format!(
            "eval_kmeans: k = {k} cannot pin {} known classes",
            ds.num_known
        )));
    }
    let n = ds.num_samples();
    let visual = gather_rows(ds, &(0..n).collect::<Vec<_>>());
    let f = fused_embeddings(&visual, n, ds.dim, kb, atcg, head, alpha)?;
    let pinned: Vec<Option<usize>> = (0..n)
        .map(|i| ds.labeled_mask[i].then_some(ds.labels[i]))
        .collect();
    let fit = semi_supervised_kmeans(&f, n, head.dim_out, &pinned, KmeansOptions::new(k, seed))?;
    let unlabeled = ds.unlabeled_indices();
    let pred: Vec<usize> = unlabeled.iter().map(|&i| fit.assignments[i]).collect();
    let truth: Vec<usize> = unlabeled.iter().map(|&i| ds.labels[i]).collect();
    let known: Vec<usize> = (0..ds.num_known).collect();
    let mut report = gcd_accuracy(&pred, &truth, &known)?;
    report.k_used = k;
    report.host = Host::Kmeans;
    report.seed = seed;
    report.alpha = alpha;
    report.num_stacked = atcg.num_stacked;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synth::SynthConfig;
    use rand::Rng;

    #[test]
    fn permuted_perfect_predictions_score_one() {
        let truth = vec![0, 1, 2, 0, 1, 2, 2, 1];
        let perm = [2usize, 0, 1];
        let pred: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let report = gcd_accuracy(&pred, &truth, &[0, 1]).unwrap();
        assert_eq!(report.all_acc, 1.0);
        assert_eq!(report.old_acc, 1.0);
        assert_eq!(report.new_acc, 1.0);
    }

    #[test]
    fn four_sample_worked_example() {
        // Truth [0,0,1,1] with class 1 novel, pred [1,1,0,2]: the single
        // global matching {1→0, 0→1} scores 3/4 overall, both old samples,
        // and one of the two new samples.
        let report = gcd_accuracy(&[1, 1, 0, 2], &[0, 0, 1, 1], &[0]).unwrap();
        assert_eq!(report.all_acc, 0.75);
        assert_eq!(report.old_acc, 1.0);
        assert_eq!(report.new_acc, 0.5);
        assert_eq!((report.n_old, report.n_new), (2, 2));
    }

    #[test]
    fn weighted_identity_holds_exactly() {
        let mut rng = rng::stream(31, &[0x21]);
        for _ in 0..20 {
            let n = 40 + rng.random_range(0..60);
            let k = 3 + rng.random_range(0..4);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let known: Vec<usize> = (0..k / 2).collect();
            let r = gcd_accuracy(&pred, &truth, &known).unwrap();
            let weighted = (r.n_old as f64 * r.old_acc + r.n_new as f64 * r.new_acc)
                / r.n_unlabeled as f64;
            assert_eq!(weighted, r.all_acc, "identity must be exact");
        }
    }

    #[test]
    fn random_predictions_score_near_one_over_k() {
        let k = 5usize;
        let n = 2000usize;
        let mut rng = rng::stream(77, &[0x22]);
        let mut sum = 0.0;
        let reps = 20;
        for _ in 0..reps {
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            sum += gcd_accuracy(&pred, &truth, &[0, 1]).unwrap().all_acc;
        }
        let mean = sum / reps as f64;
        // Matching adds a small positive bias over 1/K; 3σ of the empirical
        // spread at this size is well inside ±0.05.
        assert!((mean - 1.0 / k as f64).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn relabeling_invariance_is_exact() {
        let mut rng = rng::stream(55, &[0x23]);
        let n = 200;
        let k = 6;
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let base = gcd_accuracy(&pred, &truth, &[0, 1, 2]).unwrap();
        let perm = [3usize, 5, 0, 2, 4, 1];
        let relabeled: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let re = gcd_accuracy(&relabeled, &truth, &[0, 1, 2]).unwrap();
        assert_eq!(base.all_acc, re.all_acc);
        assert_eq!(base.old_acc, re.old_acc);
        assert_eq!(base.new_acc, re.new_acc);
    }

    fn tiny_setup() -> (GcdDataset, KnowledgeBase, AtcgModel, FusionHead, PrototypeBank) {
        let cfg = SynthConfig {
            num_classes: 4,
            num_known: 2,
            dim: 8,
            samples_per_class: 6,
            labeled_fraction: 0.5,
            intra_class_noise: 0.05,
            fine_grained_groups: 2,
            rng_seed: 3,
            ..SynthConfig::default()
        };
        let ds = crate::synth::generate(&cfg).unwrap();
        let kb = crate::kb::build(&ds).unwrap();
        let atcg = AtcgModel::init(8, 2, true, 0.02, 41).unwrap();
        let head = FusionHead::init(8, 16, 8, 41).unwrap();
        let bank = PrototypeBank::init(4, 8, 41).unwrap();
        (ds, kb, atcg, head, bank)
    }

    #[test]
    fn parametric_report_is_deterministic() {
        let (ds, kb, atcg, head, bank) = tiny_setup();
        let a = eval_parametric(&ds, &kb, &atcg, &head, &bank, 0.4, 0.07, 9).unwrap();
        let b = eval_parametric(&ds, &kb, &atcg, &head, &bank, 0.4, 0.07, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.host, Host::Parametric);
        assert_eq!(a.k_used, 4);
        assert_eq!(a.n_unlabeled, ds.unlabeled_indices().len());
    }

    #[test]
    fn alpha_one_matches_untouched_baseline_bitwise() {
        let (ds, kb, atcg, head, bank) = tiny_setup();
        let disabled = AtcgModel::init(8, 0, false, 0.0, 99).unwrap();
        let with_gen = eval_parametric(&ds, &kb, &atcg, &head, &bank, 1.0, 0.07, 9).unwrap();
        let without = eval_parametric(&ds, &kb, &disabled, &head, &bank, 1.0, 0.07, 9).unwrap();
        assert_eq!(with_gen.all_acc.to_bits(), without.all_acc.to_bits());
        assert_eq!(with_gen.old_acc.to_bits(), without.old_acc.to_bits());
        assert_eq!(with_gen.new_acc.to_bits(), without.new_acc.to_bits());
    }

    #[test]
    fn perfectly_aligned_bank_scores_all_ones() {
        // Build the bank out of the actual fused class embeddings on a
        // noiseless dataset: argmax must recover every class.
        let cfg = SynthConfig {
            num_classes: 4,
            num_known: 2,
            dim: 8,
            samples_per_class: 5,
            labeled_fraction: 0.4,
            intra_class_noise: 1e-6,
            fine_grained_groups: 2,
            rng_seed: 13,
            ..SynthConfig::default()
        };
        let ds = crate::synth::generate(&cfg).unwrap();
        let kb = crate::kb::build(&ds).unwrap();
        let atcg = AtcgModel::init(8, 1, true, 0.02, 5).unwrap();
        let head = FusionHead::init(8, 16, 8, 5).unwrap();
        let n = ds.num_samples();
        let visual = gather_rows(&ds, &(0..n).collect::<Vec<_>>());
        let f = fused_embeddings(&visual, n, 8, &kb, &atcg, &head, 0.4).unwrap();
        let mut bank = PrototypeBank::init(4, 8, 5).unwrap();
        for class in 0..4 {
            let i = ds.labels.iter().position(|&l| l == class).unwrap();
            bank.c.data[class * 8..(class + 1) * 8].copy_from_slice(&f[i * 8..(i + 1) * 8]);
        }
        let report = eval_parametric(&ds, &kb, &atcg, &head, &bank, 0.4, 0.07, 1).unwrap();
        assert_eq!(report.all_acc, 1.0);
        assert_eq!(report.old_acc, 1.0);
        assert_eq!(report.new_acc, 1.0);
    }

    #[test]
    fn kmeans_host_runs_and_separates_noiseless_classes() {
        let cfg = SynthConfig {
            num_classes: 3,
            num_known: 2,
            dim: 8,
            samples_per_class: 8,
            labeled_fraction: 0.5,
            intra_class_noise: 1e-6,
            fine_grained_groups: 2,
            rng_seed: 23,
            ..SynthConfig::default()
        };
        let ds = crate::synth::generate(&cfg).unwrap();
        let kb = crate::kb::build(&ds).unwrap();
        let atcg = AtcgModel::init(8, 0, false, 0.0, 5).unwrap();
        let head = FusionHead::init(8, 16, 8, 5).unwrap();
        let report = eval_kmeans(&ds, &kb, &atcg, &head, 1.0, 3, 7).unwrap();
        // Noiseless classes are single points in embedding space;
        // pinned-seeded k-means separates them exactly.
        assert_eq!(report.all_acc, 1.0);
        assert_eq!(report.host, Host::Kmeans);
        assert!(eval_kmeans(&ds, &kb, &atcg, &head, 1.0, 1, 7).is_err());
    }

    #[test]
    fn csv_row_round_trips_shape() {
        let r = gcd_accuracy(&[0, 1], &[0, 1], &[0]).unwrap();
        let row = r.csv_row();
        assert_eq!(
            row.split(',').count(),
            MetricsReport::CSV_HEADER.split(',').count()
        );
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
