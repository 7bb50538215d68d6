//! Semi-supervised Lloyd's k-means with k-means++ initialization.
//!
//! Labeled samples are pinned: cluster index = class index for them, in
//! every assignment step. Pinned classes initialize their centroids from
//! the labeled mean; the remaining centroids are chosen by k-means++
//! (squared-distance-weighted sampling against all centers picked so far).
//!
//! Starved clusters are repaired by splitting. On unit-norm embeddings the
//! between-sample distance (≈ √2·σ for within-class noise σ) exceeds the
//! sample-to-mean distance (≈ σ), so a centroid sitting on a single sample
//! recruits nothing and dies where a cluster *mean* would thrive. Whenever a
//! cluster comes out of Lloyd's empty or as a singleton, its centroid is
//! rebuilt by bisecting the highest-inertia cluster with a small interior
//! 2-means, which yields two mean-centroids in dense regions.

use crate::error::EvalError;
use crate::rng::{self, tag};

use rand::Rng;

/// A cluster this small after convergence counts as starved and is rebuilt
/// by splitting the fattest cluster (singletons are noise outliers, never
/// real structure, on the benchmark's sample sizes).
pub const MIN_CLUSTER_SIZE: usize = 2;

#[derive(Clone, Copy, Debug)]
pub struct KmeansOptions {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl KmeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansOptions {
            k,
            max_iters: 200,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KmeansFit {
    /// Cluster index per sample (pinned samples keep their class index).
    pub assignments: Vec<usize>,
    /// k×d centroid matrix, row-major.
    pub centroids: Vec<f64>,
    /// Final within-cluster sum of squared distances.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration (non-increasing except across a
    /// cluster repair, which intentionally perturbs the solution).
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Splits one cluster's members into two by an interior 2-means with
/// deterministic farthest-pair seeding. Returns the two sub-means and
/// sizes, or None when the members admit no real split (e.g. all equal).
fn bisect(
    x: &[f64],
    d: usize,
    members: &[usize],
) -> Option<(Vec<f64>, Vec<f64>, usize, usize)> {
    let row = |i: usize| &x[i * d..(i + 1) * d];
    let mut mean = vec![0.0f64; d];
    for &i in members {
        for j in 0..d {
            mean[j] += x[i * d + j];
        }
    }
    mean.iter_mut().for_each(|v| *v /= members.len() as f64);
    let far = |from: &[f64]| {
        members
            .iter()
            .copied()
            .max_by(|&a, &b| {
                sq_dist(row(a), from)
                    .partial_cmp(&sq_dist(row(b), from))
                    .unwrap()
                    .then(b.cmp(&a)) // stable under exact ties
            })
            .unwrap()
    };
    let a = far(&mean);
    let b = far(row(a));
    let mut ca = row(a).to_vec();
    let mut cb = row(b).to_vec();
    let mut side = vec![false; members.len()];
    for _ in 0..10 {
        let mut changed = false;
        for (s, &i) in side.iter_mut().zip(members) {
            let to_b = sq_dist(row(i), &cb) < sq_dist(row(i), &ca);
            if *s != to_b {
                *s = to_b;
                changed = true;
            }
        }
        let (mut na, mut nb) = (0usize, 0usize);
        let mut sa = vec![0.0f64; d];
        let mut sb = vec![0.0f64; d];
        for (s, &i) in side.iter().zip(members) {
            let (target, count) = if *s { (&mut sb, &mut nb) } else { (&mut sa, &mut na) };
            *count += 1;
            for j in 0..d {
                target[j] += x[i * d + j];
            }
        }
        if na == 0 || nb == 0 {
            return None;
        }
        sa.iter_mut().for_each(|v| *v /= na as f64);
        sb.iter_mut().for_each(|v| *v /= nb as f64);
        ca = sa;
        cb = sb;
        if !changed {
            return Some((ca, cb, na, nb));
        }
    }
    let nb = side.iter().filter(|&&s| s).count();
    Some((ca, cb, members.len() - nb, nb))
}

/// Fits k clusters to `n` points of dimension `d` (row-major `x`), honoring
/// pins: `pinned[i] = Some(c)` forces sample i into cluster c throughout.
pub fn semi_supervised_kmeans(
    x: &[f64],
    n: usize,
    d: usize,
    pinned: &[Option<usize>],
    opts: KmeansOptions,
) -> Result<KmeansFit, EvalError> {
    let k = opts.k;
    if k < 2 {
        return Err(EvalError::InvalidInput(format!(
            "k-means needs k ≥ 2, got {k}"
        )));
    }
    if x.len() != n * d || pinned.len() != n || d == 0 {
        return Err(EvalError::InvalidInput(format!(
            "k-means: {} values for {n}×{d} points, {} pins",
            x.len(),
            pinned.len()
        )));
    }
    if n < k {
        return Err(EvalError::InvalidInput(format!(
            "k-means: {n} points cannot fill {k} clusters"
        )));
    }
    if let Some(&c) = pinned.iter().flatten().find(|&&c| c >= k) {
        return Err(EvalError::InvalidInput(format!(
            "k-means: pinned cluster {c} outside k = {k}"
        )));
    }
    let row = |i: usize| &x[i * d..(i + 1) * d];

    // Pinned classes start at their labeled means; the rest via k-means++.
    let mut centroids = vec![0.0f64; k * d];
    let mut seeded = vec![false; k];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        if let Some(c) = pinned[i] {
            counts[c] += 1;
            seeded[c] = true;
            for j in 0..d {
                centroids[c * d + j] += x[i * d + j];
            }
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..d {
                centroids[c * d + j] /= counts[c] as f64;
            }
        }
    }
    let mut rng = rng::stream(opts.seed, &[tag::KMEANS]);
    let mut min_d2: Vec<f64> = if seeded.iter().any(|&s| s) {
        (0..n)
            .map(|i| {
                (0..k)
                    .filter(|&c| seeded[c])
                    .map(|c| sq_dist(row(i), &centroids[c * d..(c + 1) * d]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    } else {
        vec![f64::INFINITY; n]
    };
    for c in 0..k {
        if seeded[c] {
            continue;
        }
        let pick = if min_d2[0].is_infinite() {
            // No center yet: uniform first choice.
            rng.random_range(0..n)
        } else {
            let total: f64 = min_d2.iter().sum();
            if total > 0.0 {
                let mut target = rng.random_range(0.0..total);
                let mut chosen = n - 1;
                for (i, &w) in min_d2.iter().enumerate() {
                    if target < w {
                        chosen = i;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.random_range(0..n)
            }
        };
        centroids[c * d..(c + 1) * d].copy_from_slice(row(pick));
        seeded[c] = true;
        for i in 0..n {
            let d2 = sq_dist(row(i), &centroids[c * d..(c + 1) * d]);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }

    // Clusters holding pinned samples keep their class identity: they are
    // never dissolved by the starvation repair.
    let mut has_pins = vec![false; k];
    for c in pinned.iter().flatten() {
        has_pins[*c] = true;
    }

    let mut assignments = vec![0usize; n];
    let mut inertia_trace = Vec::new();
    let repair_budget = 2 * k + 4;
    let mut repairs = 0usize;
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0usize;
    // True while the previous iteration perturbed the solution (repair), so
    // the next inertia may rise and convergence cannot be declared yet.
    let mut repaired = false;
    for _ in 0..opts.max_iters {
        iterations += 1;
        // Assignment step (pins honored, ties to the lowest index).
        let mut changed = false;
        for i in 0..n {
            let a = match pinned[i] {
                Some(c) => c,
                None => {
                    let mut best = 0usize;
                    let mut best_d2 = sq_dist(row(i), &centroids[0..d]);
                    for c in 1..k {
                        let d2 = sq_dist(row(i), &centroids[c * d..(c + 1) * d]);
                        if d2 < best_d2 {
                            best_d2 = d2;
                            best = c;
                        }
                    }
                    best
                }
            };
            if assignments[i] != a {
                assignments[i] = a;
                changed = true;
            }
        }

        let mut members = vec![0usize; k];
        for &a in &assignments {
            members[a] += 1;
        }

        // Update step; empty clusters keep their previous centroid until the
        // repair below replaces it.
        for c in 0..k {
            if members[c] == 0 {
                continue;
            }
            centroids[c * d..(c + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
        for i in 0..n {
            let c = assignments[i];
            if members[c] == 0 {
                continue;
            }
            for j in 0..d {
                centroids[c * d + j] += x[i * d + j];
            }
        }
        for c in 0..k {
            if members[c] == 0 {
                continue;
            }
            for j in 0..d {
                centroids[c * d + j] /= members[c] as f64;
            }
        }

        let mut cluster_inertia = vec![0.0f64; k];
        for i in 0..n {
            let c = assignments[i];
            cluster_inertia[c] += sq_dist(row(i), &centroids[c * d..(c + 1) * d]);
        }
        let inertia: f64 = cluster_inertia.iter().sum();
        // Lloyd's property: each full step cannot increase the objective
        // (a repair intentionally perturbs it, so skip that comparison).
        if !repaired {
            debug_assert!(
                inertia <= prev_inertia + 1e-9,
                "k-means objective rose: {prev_inertia} -> {inertia}"
            );
        }
        inertia_trace.push(inertia);
        prev_inertia = inertia;

        // Starvation repair: an empty cluster always, a sub-minimum unpinned
        // cluster once Lloyd's has otherwise settled. A sample-point centroid
        // recruits nothing on this data (see module docs), so the dead slot is
        // refilled by bisecting the fattest cluster into two mean-centroids.
        let converged = !changed && !repaired;
        let starved = (0..k).find(|&c| members[c] == 0).or_else(|| {
            converged
                .then(|| {
                    (0..k).find(|&c| members[c] < MIN_CLUSTER_SIZE && !has_pins[c])
                })
                .flatten()
        });
        repaired = false;
        if let Some(dead) = starved {
            if repairs >= repair_budget {
                if members[dead] == 0 {
                    return Err(EvalError::EmptyCluster {
                        cluster: dead,
                        attempts: repairs,
                    });
                }
                break; // tiny but non-empty: accept the solution as-is
            }
            repairs += 1;
            // Donor: highest-inertia cluster big enough to split in two.
            let donor = (0..k)
                .filter(|&c| c != dead && members[c] >= 2 * MIN_CLUSTER_SIZE)
                .max_by(|&a, &b| cluster_inertia[a].partial_cmp(&cluster_inertia[b]).unwrap());
            let Some(donor) = donor else {
                if members[dead] == 0 {
                    return Err(EvalError::EmptyCluster {
                        cluster: dead,
                        attempts: repairs,
                    });
                }
                break;
            };
            let donor_members: Vec<usize> =
                (0..n).filter(|&i| assignments[i] == donor).collect();
            if let Some((ca, cb, na, nb)) = bisect(x, d, &donor_members) {
                // The donor keeps the half its pins sit in (or the bigger
                // half when unpinned); the dead slot takes the other.
                let keep_a = if has_pins[donor] {
                    let mut pin_mean = vec![0.0f64; d];
                    let mut pins = 0usize;
                    for i in 0..n {
                        if pinned[i] == Some(donor) {
                            pins += 1;
                            for j in 0..d {
                                pin_mean[j] += x[i * d + j];
                            }
                        }
                    }
                    pin_mean.iter_mut().for_each(|v| *v /= pins as f64);
                    sq_dist(&pin_mean, &ca) <= sq_dist(&pin_mean, &cb)
                } else {
                    na >= nb
                };
                let (donor_c, dead_c) = if keep_a { (&ca, &cb) } else { (&cb, &ca) };
                centroids[donor * d..(donor + 1) * d].copy_from_slice(donor_c);
                centroids[dead * d..(dead + 1) * d].copy_from_slice(dead_c);
                repaired = true;
            }
            // A degenerate split (members all equal) consumed budget; the
            // next iteration retries until the budget runs out.
            continue;
        }
        if converged {
            break;
        }
    }

    let inertia = *inertia_trace.last().unwrap();
    Ok(KmeansFit {
        assignments,
        centroids,
        inertia,
        inertia_trace,
        iterations,
    })
}
