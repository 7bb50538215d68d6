//! Scratch calibration probe (run explicitly with --ignored --nocapture).

use std::time::Instant;

use algcd_core::eval::ablate::{run_discovery, train_generator, PipelineConfig};
use algcd_core::synth::{self, SynthConfig};

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}
fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

#[test]
#[ignore]
fn kmeans_diag() {
    use algcd_core::eval::kmeans::{semi_supervised_kmeans, KmeansOptions};
    let synth_cfg = SynthConfig {
        intra_class_noise: env_f64("NOISE", 0.25),
        group_spread: env_f64("SPREAD", 0.12),
        rng_seed: env_usize("DATA_SEED", 1) as u64,
        ..SynthConfig::default()
    };
    let ds = synth::generate(&synth_cfg).unwrap();
    let n = ds.num_samples();
    let pinned: Vec<Option<usize>> = (0..n)
        .map(|i| ds.labeled_mask[i].then_some(ds.labels[i]))
        .collect();
    let fit = semi_supervised_kmeans(
        &ds.visual,
        n,
        ds.dim,
        &pinned,
        KmeansOptions::new(ds.num_classes, env_usize("KM_SEED", 123) as u64),
    )
    .unwrap();
    // Per-cluster composition over unlabeled samples: which classes landed in it.
    let k = ds.num_classes;
    let mut comp = vec![vec![0usize; k]; k];
    for i in 0..n {
        if !ds.labeled_mask[i] {
            comp[fit.assignments[i]][ds.labels[i]] += 1;
        }
    }
    for c in 0..k {
        let total: usize = comp[c].iter().sum();
        let mut parts: Vec<String> = comp[c]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(cls, &v)| format!("{cls}:{v}"))
            .collect();
        parts.sort();
        println!("cluster {c:2} (n={total:3}): {}", parts.join(" "));
    }
    println!("iterations {} inertia {:.3}", fit.iterations, fit.inertia);
    let unlab = ds.unlabeled_indices();
    let truth: Vec<usize> = unlab.iter().map(|&i| ds.labels[i]).collect();
    let pred: Vec<usize> = unlab.iter().map(|&i| fit.assignments[i]).collect();
    let known: Vec<usize> = (0..ds.num_known).collect();
    let rep = algcd_core::eval::gcd_accuracy(&pred, &truth, &known).unwrap();
    let singletons = comp.iter().filter(|c| c.iter().sum::<usize>() <= 1).count();
    println!(
        "raw kmeans: all {:.3} old {:.3} new {:.3} | singleton clusters {}",
        rep.all_acc, rep.old_acc, rep.new_acc, singletons
    );
}

#[test]
#[ignore]
fn curve() {
    use algcd_core::atcg::{AtcgModel, FusionHead};
    use algcd_core::eval::kmeans::{semi_supervised_kmeans, KmeansOptions};
    use algcd_core::eval::{eval_parametric, fused_embeddings, match_clusters};
    use algcd_core::objectives::PrototypeBank;
    use algcd_core::train::sgd::Sgd;
    use algcd_core::train::{gcd_steps_per_epoch, train_gcd, TrainConfig};

    let synth_cfg = SynthConfig {
        intra_class_noise: env_f64("NOISE", 0.25),
        group_spread: env_f64("SPREAD", 0.15),
        rng_seed: env_usize("DATA_SEED", 1) as u64,
        ..SynthConfig::default()
    };
    let ds = synth::generate(&synth_cfg).unwrap();
    let base = algcd_core::kb::build(&ds).unwrap();
    let seed = env_usize("SEED", 1) as u64;
    let alpha = env_f64("ALPHA", 0.4);
    let enabled = env_usize("DISABLED", 0) == 0;

    let model = match std::env::var("S1_CACHE").ok() {
        Some(p) if std::path::Path::new(&p).exists() && enabled => {
            use algcd_core::train::checkpoint::{restore, Checkpoint};
            restore(&Checkpoint::load(&p).unwrap()).unwrap().model
        }
        _ => AtcgModel::init(ds.dim, env_usize("STACKED", 2), enabled, 0.02, seed).unwrap(),
    };
    let mut model = model;
    let mut head = FusionHead::init(ds.dim, env_usize("HIDDEN", 256), ds.dim, seed + 1).unwrap();
    let mut bank = PrototypeBank::init(ds.num_classes, ds.dim, seed + 2).unwrap();

    let mut cfg = TrainConfig::stage2(seed);
    cfg.alpha = alpha;
    cfg.lr = env_f64("LR", 0.05);
    cfg.batch_size = env_usize("S2_BATCH", 64);
    cfg.epochs = env_usize("EPOCHS", 200);
    cfg.warmup_frac = env_f64("WARMUP", 0.05);
    cfg.weight_decay = env_f64("S2_WD", 1e-4);
    cfg.sigma_aug = env_f64("SIGMA_AUG", 0.1);
    let weights = algcd_core::objectives::LossWeights::default();

    // Prototype init from pinned k-means on initial fused head embeddings.
    if env_usize("PROTO_RANDOM", 0) == 0 {
        let n = ds.num_samples();
        let f = fused_embeddings(
            &ds.visual,
            n,
            ds.dim,
            &base,
            &model,
            &head,
            if enabled { alpha } else { 1.0 },
        )
        .unwrap();
        let pinned: Vec<Option<usize>> = (0..n)
            .map(|i| ds.labeled_mask[i].then_some(ds.labels[i]))
            .collect();
        if let Ok(fit) = semi_supervised_kmeans(
            &f,
            n,
            head.dim_out,
            &pinned,
            KmeansOptions::new(bank.num_classes, seed),
        ) {
            for (k, row) in fit.centroids.chunks(head.dim_out).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    for (j, &v) in row.iter().enumerate() {
                        bank.c.data[k * bank.dim + j] = v / norm;
                    }
                }
            }
        }
    }

    let total_steps = cfg.epochs * gcd_steps_per_epoch(ds.num_samples(), cfg.batch_size);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay, total_steps)
        .unwrap()
        .with_warmup((cfg.warmup_frac * total_steps as f64).round() as usize);

    let every = env_usize("EVERY", 20);
    let eval_alpha = if enabled { alpha } else { 1.0 };
    let groups = synth_cfg.fine_grained_groups;
    let unlab = ds.unlabeled_indices();
    let truth: Vec<usize> = unlab.iter().map(|&i| ds.labels[i]).collect();

    let snapshot = |model: &AtcgModel,
                    head: &FusionHead,
                    bank: &PrototypeBank,
                    label: String| {
        let rep = eval_parametric(&ds, &base, model, head, bank, eval_alpha, 0.07, seed).unwrap();
        // error anatomy + clusters used
        let n_u = unlab.len();
        let mut vis = Vec::new();
        for &i in &unlab {
            vis.extend_from_slice(ds.visual_row(i));
        }
        let f = fused_embeddings(&vis, n_u, ds.dim, &base, model, head, eval_alpha).unwrap();
        let g = algcd_core::tensor::Graph::new();
        let f_t = g.constant(f, &[n_u, head.dim_out]).unwrap();
        let c = bank.register(&g, false).unwrap();
        let post = algcd_core::objectives::prototype_posterior(&f_t, &c, 0.07)
            .unwrap()
            .data();
        let k = bank.num_classes;
        let pred: Vec<usize> = (0..n_u)
            .map(|i| {
                let row = &post[i * k..(i + 1) * k];
                (0..k)
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap()
            })
            .collect();
        let m = match_clusters(&pred, &truth).unwrap();
        let mut stats = [[0usize; 3]; 2];
        for (p, t) in pred.iter().zip(&truth) {
            let mapped = m.mapping[*p];
            let row = if *t < ds.num_known { 0 } else { 1 };
            if mapped == *t {
                stats[row][0] += 1;
            } else if mapped % groups == *t % groups {
                stats[row][1] += 1;
            } else {
                stats[row][2] += 1;
            }
        }
        let mut used = vec![false; k];
        for &p in &pred {
            used[p] = true;
        }
        println!(
            "{label}: all {:.3} old {:.3} new {:.3} | old c/w/x {:?} new {:?} | used {}/{}",
            rep.all_acc,
            rep.old_acc,
            rep.new_acc,
            stats[0],
            stats[1],
            used.iter().filter(|&&u| u).count(),
            k
        );
    };

    snapshot(&model, &head, &bank, "epoch   0".into());
    let mut e = 0usize;
    while e < cfg.epochs {
        let to = (e + every).min(cfg.epochs);
        train_gcd(
            &ds, &base, &mut model, &mut head, &mut bank, &cfg, &weights, &mut opt,
            e..to,
        )
        .unwrap();
        e = to;
        snapshot(&model, &head, &bank, format!("epoch {e:3}"));
    }
}

#[test]
#[ignore]
fn probe() {
    let synth_cfg = SynthConfig {
        num_classes: env_usize("CLASSES", 20),
        num_known: env_usize("KNOWN", 10),
        dim: env_usize("DIM", 64),
        samples_per_class: env_usize("PER", 50),
        labeled_fraction: 0.5,
        intra_class_noise: env_f64("NOISE", 0.25),
        modality_rotation_seed: 7,
        fine_grained_groups: env_usize("GROUPS", 5),
        group_spread: env_f64("SPREAD", 0.3),
        rng_seed: env_usize("DATA_SEED", 1) as u64,
    };
    let ds = synth::generate(&synth_cfg).unwrap();

    let seed = env_usize("SEED", 1) as u64;
    let mut cfg = PipelineConfig::default().with_seed(seed);
    cfg.num_stacked = env_usize("STACKED", 2);
    cfg.projections_enabled = env_usize("DISABLED", 0) == 0;
    cfg.stage1.epochs = env_usize("S1_ROUNDS", 500);
    cfg.stage2.epochs = env_usize("S2_EPOCHS", 200);
    cfg.stage2.alpha = env_f64("ALPHA", 0.4);
    cfg.weights.epsilon = env_f64("EPSILON", 2.0);
    cfg.stage2.lr = env_f64("LR", 0.05);
    cfg.stage2.momentum = env_f64("S2_MOM", 0.9);
    cfg.stage2.batch_size = env_usize("S2_BATCH", 64);
    cfg.weights.tau_t = env_f64("TAU_T", 0.04);
    cfg.cluster_prototype_init = env_usize("PROTO_RANDOM", 0) == 0;
    cfg.stage2.warmup_frac = env_f64("WARMUP", 0.05);
    cfg.stage2.weight_decay = env_f64("S2_WD", 1e-4);
    cfg.stage1.lr = env_f64("S1_LR", 2.0);
    cfg.stage2.sigma_aug = env_f64("SIGMA_AUG", cfg.stage2.sigma_aug);
    cfg.stage1.momentum = env_f64("S1_MOM", 0.9);
    cfg.stage1.weight_decay = env_f64("S1_WD", 1e-4);
    cfg.stage1.episode_n = env_usize("S1_N", 64);

    let t0 = Instant::now();
    // Optional stage-1 model cache so stage-2 experiments iterate quickly.
    let cache = std::env::var("S1_CACHE").ok().map(std::path::PathBuf::from);
    let (model, s1_records) = match &cache {
        Some(p) if p.exists() => {
            use algcd_core::train::checkpoint::{restore, Checkpoint};
            let r = restore(&Checkpoint::load(p).unwrap()).unwrap();
            println!("stage1: loaded cache {}", p.display());
            (r.model, Vec::new())
        }
        _ => {
            let (m, recs) = train_generator(&ds, &cfg).unwrap();
            if let Some(p) = &cache {
                use algcd_core::train::checkpoint::snapshot;
                use algcd_core::train::sgd::Sgd;
                let opt = Sgd::new(cfg.stage1.lr, 0.9, 0.0, 1).unwrap();
                snapshot(cfg.stage1.epochs, &m, None, None, &opt, &cfg.stage1, &cfg.weights)
                    .save(p)
                    .unwrap();
                println!("stage1: saved cache {}", p.display());
            }
            (m, recs)
        }
    };
    let arts = run_discovery(&ds, &cfg, model, s1_records).unwrap();
    let total = t0.elapsed().as_secs_f64();

    if let (Some(first), Some(last)) = (arts.stage1_records.first(), arts.stage1_records.last()) {
        println!(
            "stage1: {} rounds, loss {:.4} -> {:.4} (ratio {:.3})",
            arts.stage1_records.len(),
            first.loss,
            last.loss,
            last.loss / first.loss
        );
    } else {
        println!("stage1: skipped");
    }
    if !arts.stage2_records.is_empty() {
        let epochs: Vec<usize> = {
            let mut e: Vec<usize> = arts.stage2_records.iter().map(|r| r.epoch).collect();
            e.dedup();
            e
        };
        let means: Vec<f64> = epochs
            .iter()
            .map(|&e| {
                let vals: Vec<f64> = arts
                    .stage2_records
                    .iter()
                    .filter(|r| r.epoch == e)
                    .map(|r| r.total)
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect();
        let pairs = means.len().saturating_sub(1);
        if pairs > 0 {
            let drops = means.windows(2).filter(|w| w[1] < w[0]).count();
            println!(
                "stage2 epoch means: {:.4} -> {:.4}, decreasing pairs {}/{} ({:.1}%)",
                means[0],
                means[means.len() - 1],
                drops,
                pairs,
                100.0 * drops as f64 / pairs as f64
            );
            // Where do the increases live? Quartile counts + sampled curve.
            let quart = pairs / 4;
            let rises: Vec<usize> = (0..pairs).filter(|&i| means[i + 1] >= means[i]).collect();
            let qcounts: Vec<usize> = (0..4)
                .map(|q| {
                    rises
                        .iter()
                        .filter(|&&i| i >= q * quart && i < if q == 3 { pairs } else { (q + 1) * quart })
                        .count()
                })
                .collect();
            println!("stage2 rises by quartile: {qcounts:?}");
            let step = (means.len() / 20).max(1);
            let curve: Vec<String> = means
                .iter()
                .step_by(step)
                .map(|m| format!("{m:.3}"))
                .collect();
            println!("stage2 mean curve (every {step}): {}", curve.join(" "));
            if std::env::var("DUMP_MEANS").is_ok() {
                for (i, w) in means.windows(2).enumerate() {
                    if w[1] >= w[0] {
                        println!("  rise at {}: {:.4} -> {:.4} (+{:.4})", i, w[0], w[1], w[1] - w[0]);
                    }
                }
            }
            // Per-component wiggle census over the same epoch means.
            for (name, get) in [
                ("rep_u", (|r: &algcd_core::train::GcdStepRecord| r.l_rep_u) as fn(&_) -> f64),
                ("rep_s", |r| r.l_rep_s),
                ("cls_u", |r| r.l_cls_u),
                ("cls_s", |r| r.l_cls_s),
            ] {
                let cm: Vec<f64> = epochs
                    .iter()
                    .map(|&e| {
                        let vals: Vec<f64> = arts
                            .stage2_records
                            .iter()
                            .filter(|r| r.epoch == e)
                            .map(get)
                            .collect();
                        vals.iter().sum::<f64>() / vals.len() as f64
                    })
                    .collect();
                let rises = cm.windows(2).filter(|w| w[1] >= w[0]).count();
                let amp: f64 = cm
                    .windows(2)
                    .filter(|w| w[1] >= w[0])
                    .map(|w| w[1] - w[0])
                    .sum();
                println!("  {name}: rises {rises}, total rise mass {amp:.3}");
            }
        }
    }
    if let (Some(first), Some(last)) = (arts.stage2_records.first(), arts.stage2_records.last()) {
        println!(
            "stage2: {} steps, total {:.4} -> {:.4} | rep_u {:.4} -> {:.4} | cls_u {:.4} -> {:.4}",
            arts.stage2_records.len(),
            first.total,
            last.total,
            first.l_rep_u,
            last.l_rep_u,
            first.l_cls_u,
            last.l_cls_u
        );
    }
    println!("report: {}", serde_json::to_string(&arts.report).unwrap());

    // How well does the trained generator's t̃ align with the true (held-out)
    // text anchor, novel classes only?
    if cfg.projections_enabled {
        use algcd_core::atcg::atcg_forward;
        use algcd_core::tensor::Graph;
        let base = algcd_core::kb::build(&ds).unwrap();
        let novel: Vec<usize> = (0..ds.num_samples())
            .filter(|&i| ds.labels[i] >= ds.num_known)
            .take(256)
            .collect();
        let mut rows = Vec::new();
        for &i in &novel {
            rows.extend_from_slice(ds.visual_row(i));
        }
        let g = Graph::new();
        let v = g.constant(rows, &[novel.len(), ds.dim]).unwrap();
        let vars = arts.model.register(&g, false).unwrap();
        let t = atcg_forward(&v, &base, &vars).unwrap().t_final.data();
        let mut mean_cos = 0.0;
        for (r, &i) in novel.iter().enumerate() {
            let anchor = ds.anchor_row(ds.labels[i]);
            let row = &t[r * ds.dim..(r + 1) * ds.dim];
            let dot: f64 = row.iter().zip(anchor).map(|(a, b)| a * b).sum();
            let nr: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            mean_cos += dot / nr;
        }
        println!("novel t-alignment: mean cos {:.4}", mean_cos / novel.len() as f64);
    }
    println!("wall: {total:.1}s");

    // Error anatomy of the parametric predictions: rerun eval to get preds.
    // Then: raw-geometry check — semi-supervised kmeans directly on visual
    // vs fused (no head), isolating representation quality from training.
    if std::env::var("ANATOMY").is_ok() {
        use algcd_core::atcg::atcg_forward;
        use algcd_core::eval::gcd_accuracy;
        use algcd_core::eval::kmeans::{semi_supervised_kmeans, KmeansOptions};
        use algcd_core::tensor::Graph;

        let base = algcd_core::kb::build(&ds).unwrap();
        let n = ds.num_samples();
        let d = ds.dim;
        let alpha = cfg.stage2.alpha;
        let groups = synth_cfg.fine_grained_groups;

        // Raw fused embeddings (no head), chunked.
        let mut fused = Vec::with_capacity(n * d);
        for chunk in (0..n).collect::<Vec<_>>().chunks(256) {
            let mut rows = Vec::new();
            for &i in chunk {
                rows.extend_from_slice(ds.visual_row(i));
            }
            let g = Graph::new();
            let v = g.constant(rows.clone(), &[chunk.len(), d]).unwrap();
            if alpha < 1.0 && cfg.projections_enabled {
                let vars = arts.model.register(&g, false).unwrap();
                let t = atcg_forward(&v, &base, &vars).unwrap().t_final;
                let h = algcd_core::atcg::fuse(&v, &t, alpha).unwrap();
                fused.extend_from_slice(&h.data());
            } else {
                fused.extend_from_slice(&rows);
            }
        }
        let pinned: Vec<Option<usize>> = (0..n)
            .map(|i| ds.labeled_mask[i].then_some(ds.labels[i]))
            .collect();
        let unlab = ds.unlabeled_indices();
        let truth: Vec<usize> = unlab.iter().map(|&i| ds.labels[i]).collect();
        let known: Vec<usize> = (0..ds.num_known).collect();

        for (name, x) in [("visual", &ds.visual), ("rawfused", &fused)] {
            let fit = semi_supervised_kmeans(
                x,
                n,
                d,
                &pinned,
                KmeansOptions::new(ds.num_classes, 123),
            )
            .unwrap();
            let pred: Vec<usize> = unlab.iter().map(|&i| fit.assignments[i]).collect();
            let rep = gcd_accuracy(&pred, &truth, &known).unwrap();
            // Error split at the group level via the matched mapping.
            let m = algcd_core::eval::match_clusters(&pred, &truth).unwrap();
            let mut cross = 0;
            let mut within = 0;
            for (p, t) in pred.iter().zip(&truth) {
                let mapped = m.mapping[*p];
                if mapped != *t {
                    if mapped % groups == *t % groups {
                        within += 1;
                    } else {
                        cross += 1;
                    }
                }
            }
            println!(
                "raw kmeans [{name}]: all {:.3} old {:.3} new {:.3} | errors cross-group {} within-group {}",
                rep.all_acc, rep.old_acc, rep.new_acc, cross, within
            );
        }

        // Parametric-head anatomy: replicate the eval path to get per-sample
        // predictions, then split errors by group and by old/new.
        {
            use algcd_core::eval::fused_embeddings;
            use algcd_core::objectives::prototype_posterior;
            let mut vis = Vec::new();
            for &i in &unlab {
                vis.extend_from_slice(ds.visual_row(i));
            }
            let f = fused_embeddings(
                &vis,
                unlab.len(),
                d,
                &base,
                &arts.model,
                &arts.head,
                if cfg.projections_enabled { alpha } else { 1.0 },
            )
            .unwrap();
            let g = Graph::new();
            let f_t = g.constant(f, &[unlab.len(), arts.head.dim_out]).unwrap();
            let c = arts.bank.register(&g, false).unwrap();
            let post = prototype_posterior(&f_t, &c, cfg.weights.tau_s).unwrap().data();
            let k = arts.bank.num_classes;
            let pred: Vec<usize> = (0..unlab.len())
                .map(|i| {
                    let row = &post[i * k..(i + 1) * k];
                    (0..k).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
                })
                .collect();
            let m = algcd_core::eval::match_clusters(&pred, &truth).unwrap();
            let mut stats = [[0usize; 3]; 2]; // [old,new] x [correct, within-err, cross-err]
            for (p, t) in pred.iter().zip(&truth) {
                let mapped = m.mapping[*p];
                let row = if *t < ds.num_known { 0 } else { 1 };
                if mapped == *t {
                    stats[row][0] += 1;
                } else if mapped % groups == *t % groups {
                    stats[row][1] += 1;
                } else {
                    stats[row][2] += 1;
                }
            }
            // How many prototypes actually won samples?
            let mut used = vec![false; k];
            for &p in &pred {
                used[p] = true;
            }
            println!(
                "parametric anatomy: old correct/within/cross {:?} | new {:?} | clusters used {}/{}",
                stats[0],
                stats[1],
                used.iter().filter(|&&u| u).count(),
                k
            );
        }
    }
}
