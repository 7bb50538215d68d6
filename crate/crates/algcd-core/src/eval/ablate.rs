//! End-to-end runs and ablation sweeps.
//!
//! [`run_pipeline`] drives one complete experiment — init, Stage 1, Stage 2,
//! evaluation — from a single [`PipelineConfig`]. [`ablate`] repeats that run
//! across one swept axis and a set of seeds and collects the reports into a
//! plottable table.
//!
//! Because every RNG stream is keyed by `(seed, purpose-tags)` rather than by
//! draw order, a sweep that shares work across settings (the α axis reuses
//! one Stage-1 generator per seed, since Stage 1 never reads α) produces
//! bit-identical results to running each setting from scratch.

use serde::{Deserialize, Serialize};

use crate::atcg::{AtcgModel, FusionHead};
use crate::error::{EvalError, PipelineError};
use crate::eval::kmeans::{semi_supervised_kmeans, KmeansOptions};
use crate::eval::{eval_kmeans, eval_parametric, fused_embeddings, Host, MetricsReport};
use crate::kb;
use crate::kb::KnowledgeBase;
use crate::objectives::{LossWeights, PrototypeBank};
use crate::synth::GcdDataset;
use crate::train::sgd::Sgd;
use crate::train::{
    gcd_steps_per_epoch, train_atcg, train_gcd, AtcgStepRecord, GcdStepRecord, Stage, TrainConfig,
};

/// Stacked-layer counts swept by the `layers` axis.
pub const LAYER_SETTINGS: [usize; 4] = [0, 2, 4, 6];

/// Number of α settings swept by the `alpha` axis (0.0 to 1.0 in 0.1 steps).
pub const ALPHA_SETTINGS: usize = 11;

/// Hyperparameters for one end-to-end run: model shape, both training
/// stages, loss weights, and the evaluation host.
///
/// The fusion weight α lives in `stage2.alpha`; evaluation reuses it so the
/// embeddings that are scored are the embeddings that were trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Number of stacked refinement layers in the generator.
    pub num_stacked: usize,
    /// When false the generator is projection-free and Stage 1 is skipped.
    pub projections_enabled: bool,
    /// Std of the N(0, std²) perturbation on identity-initialized projections.
    pub init_std: f64,
    /// Fusion-head hidden width.
    pub head_hidden: usize,
    /// Fusion-head output dimension; 0 means "same as the input dimension".
    pub head_out: usize,
    /// Prototype count; 0 means "ground-truth number of classes".
    pub num_prototypes: usize,
    /// Seed the prototype bank from semi-supervised k-means centroids of the
    /// initial head embeddings instead of random directions.
    pub cluster_prototype_init: bool,
    /// Seed for parameter initialization (generator, head, prototypes).
    pub model_seed: u64,
    /// Stage-1 (generator) training settings.
    pub stage1: TrainConfig,
    /// Stage-2 (discovery) training settings; `stage2.alpha` is the α used
    /// everywhere downstream.
    pub stage2: TrainConfig,
    /// Loss weights shared by Stage 2 and the parametric host.
    pub weights: LossWeights,
    /// Evaluation host for the final report.
    pub host: Host,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            num_stacked: 2,
            projections_enabled: true,
            init_std: 0.02,
            head_hidden: 256,
            head_out: 0,
            num_prototypes: 0,
            cluster_prototype_init: true,
            model_seed: 7,
            stage1: TrainConfig::stage1(7),
            stage2: TrainConfig::stage2(7),
            weights: LossWeights::default(),
            host: Host::Parametric,
        }
    }
}

impl PipelineConfig {
    /// Checks the config, including that each stage config really is for its
    /// stage.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.weights.validate()?;
        if self.stage1.stage != Stage::Atcg {
            return Err(PipelineError::InvalidConfig(format!(
                "stage1 must be an {} config, got {}",
                Stage::Atcg,
                self.stage1.stage
            )));
        }
        if self.stage2.stage != Stage::Gcd {
            return Err(PipelineError::InvalidConfig(format!(
                "stage2 must be a {} config, got {}",
                Stage::Gcd,
                self.stage2.stage
            )));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "init_std must be finite and ≥ 0, got {}",
                self.init_std
            )));
        }
        if self.head_hidden == 0 {
            return Err(PipelineError::InvalidConfig(
                "head_hidden must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Copy of the config with all three seeds (model, Stage 1, Stage 2)
    /// replaced, which is what "one run per seed" means in a sweep.
    pub fn with_seed(&self, seed: u64) -> PipelineConfig {
        let mut cfg = self.clone();
        cfg.model_seed = seed;
        cfg.stage1.seed = seed;
        cfg.stage2.seed = seed;
        cfg
    }

    fn resolved_head_out(&self, ds: &GcdDataset) -> usize {
        if self.head_out == 0 {
            ds.dim
        } else {
            self.head_out
        }
    }

    fn resolved_prototypes(&self, ds: &GcdDataset) -> usize {
        if self.num_prototypes == 0 {
            ds.num_classes
        } else {
            self.num_prototypes
        }
    }
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct PipelineArtifacts {
    pub model: AtcgModel,
    pub head: FusionHead,
    pub bank: PrototypeBank,
    pub stage1_records: Vec<AtcgStepRecord>,
    pub stage2_records: Vec<GcdStepRecord>,
    pub report: MetricsReport,
}

fn init_models(
    ds: &GcdDataset,
    cfg: &PipelineConfig,
) -> Result<(AtcgModel, FusionHead, PrototypeBank), PipelineError> {
    let dim_out = cfg.resolved_head_out(ds);
    let model = AtcgModel::init(
        ds.dim,
        cfg.num_stacked,
        cfg.projections_enabled,
        cfg.init_std,
        cfg.model_seed,
    )?;
    let head = FusionHead::init(ds.dim, cfg.head_hidden, dim_out, cfg.model_seed)?;
    let bank = PrototypeBank::init(cfg.resolved_prototypes(ds), dim_out, cfg.model_seed)?;
    Ok((model, head, bank))
}

/// Stage 1 only matters when the generator has trainable projections and its
/// output is actually blended in (α < 1 leaves room for the text side).
fn needs_stage1(cfg: &PipelineConfig) -> bool {
    cfg.projections_enabled && cfg.stage2.alpha < 1.0
}

fn run_stage1(
    ds: &GcdDataset,
    model: &mut AtcgModel,
    cfg: &PipelineConfig,
) -> Result<Vec<AtcgStepRecord>, PipelineError> {
    let s1 = &cfg.stage1;
    let mut opt = Sgd::new(s1.lr, s1.momentum, s1.weight_decay, s1.epochs)?
        .with_warmup((s1.warmup_frac * s1.epochs as f64).round() as usize);
    Ok(train_atcg(ds, model, s1, &mut opt, 0..s1.epochs)?)
}

/// Replaces the bank's random rows with the (normalized) centroids of a
/// semi-supervised k-means fit on the initial head embeddings, so training
/// starts from prototypes that already face the data. Clusters that end up
/// empty keep their random row.
fn seed_prototypes(
    ds: &GcdDataset,
    base: &KnowledgeBase,
    model: &AtcgModel,
    head: &FusionHead,
    bank: &mut PrototypeBank,
    cfg: &PipelineConfig,
) -> Result<(), PipelineError> {
    let n = ds.num_samples();
    let alpha = if cfg.projections_enabled {
        cfg.stage2.alpha
    } else {
        1.0
    };
    let f = fused_embeddings(&ds.visual, n, ds.dim, base, model, head, alpha)?;
    let pinned: Vec<Option<usize>> = (0..n)
        .map(|i| ds.labeled_mask[i].then_some(ds.labels[i]))
        .collect();
    // Best-effort: when the clustering cannot stabilize (tiny or degenerate
    // data), the bank simply keeps its random initialization.
    let fit = match semi_supervised_kmeans(
        &f,
        n,
        head.dim_out,
        &pinned,
        KmeansOptions::new(bank.num_classes, cfg.model_seed),
    ) {
        Ok(fit) => fit,
        Err(EvalError::EmptyCluster { .. }) => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    for (k, row) in fit.centroids.chunks(head.dim_out).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for (j, &v) in row.iter().enumerate() {
                bank.c.data[k * bank.dim + j] = v / norm;
            }
        }
    }
    Ok(())
}

fn run_stage2_and_eval(
    ds: &GcdDataset,
    model: &mut AtcgModel,
    head: &mut FusionHead,
    bank: &mut PrototypeBank,
    cfg: &PipelineConfig,
) -> Result<(Vec<GcdStepRecord>, MetricsReport), PipelineError> {
    let base = kb::build(ds)?;
    let s2 = &cfg.stage2;
    if cfg.cluster_prototype_init {
        seed_prototypes(ds, &base, model, head, bank, cfg)?;
    }
    let total_steps = s2.epochs * gcd_steps_per_epoch(ds.num_samples(), s2.batch_size);
    let mut opt = Sgd::new(s2.lr, s2.momentum, s2.weight_decay, total_steps)?
        .with_warmup((s2.warmup_frac * total_steps as f64).round() as usize);
    let records = train_gcd(
        ds,
        &base,
        model,
        head,
        bank,
        s2,
        &cfg.weights,
        &mut opt,
        0..s2.epochs,
    )?;
    let report = match cfg.host {
        Host::Parametric => eval_parametric(
            ds,
            &base,
            model,
            head,
            bank,
            s2.alpha,
            cfg.weights.tau_s,
            s2.seed,
        )?,
        Host::Kmeans => eval_kmeans(
            ds,
            &base,
            model,
            head,
            s2.alpha,
            cfg.resolved_prototypes(ds),
            s2.seed,
        )?,
    };
    Ok((records, report))
}

/// Initializes a generator and trains it when the config calls for Stage 1
/// (projections enabled and α < 1); otherwise returns it untouched with an
/// empty trace.
pub fn train_generator(
    ds: &GcdDataset,
    cfg: &PipelineConfig,
) -> Result<(AtcgModel, Vec<AtcgStepRecord>), PipelineError> {
    cfg.validate()?;
    let (mut model, _, _) = init_models(ds, cfg)?;
    let records = if needs_stage1(cfg) {
        run_stage1(ds, &mut model, cfg)?
    } else {
        Vec::new()
    };
    Ok((model, records))
}

/// Stage 2 + evaluation on top of an already-prepared generator (freshly
/// initialized, Stage-1 trained, or loaded from a checkpoint).
pub fn run_discovery(
    ds: &GcdDataset,
    cfg: &PipelineConfig,
    mut model: AtcgModel,
    stage1_records: Vec<AtcgStepRecord>,
) -> Result<PipelineArtifacts, PipelineError> {
    cfg.validate()?;
    let (_, mut head, mut bank) = init_models(ds, cfg)?;
    let (stage2_records, report) = run_stage2_and_eval(ds, &mut model, &mut head, &mut bank, cfg)?;
    Ok(PipelineArtifacts {
        model,
        head,
        bank,
        stage1_records,
        stage2_records,
        report,
    })
}

/// One complete experiment: initialize, train the generator (when it has
/// anything to learn), train discovery on top of it, evaluate.
pub fn run_pipeline(
    ds: &GcdDataset,
    cfg: &PipelineConfig,
) -> Result<PipelineArtifacts, PipelineError> {
    let (model, stage1_records) = train_generator(ds, cfg)?;
    run_discovery(ds, cfg, model, stage1_records)
}

/// Which hyperparameter an ablation sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Stacked-layer count: 0, 2, 4, 6.
    Layers,
    /// Fusion weight α: 0.0 through 1.0 in steps of 0.1.
    Alpha,
    /// Generator pieces: none / initial / initial+stacked.
    Components,
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AblationAxis::Layers => "layers",
            AblationAxis::Alpha => "alpha",
            AblationAxis::Components => "components",
        })
    }
}

/// One evaluated run inside an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    /// Human-readable setting label ("4", "0.3", "initial+stacked", …).
    pub setting: String,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Per-setting aggregate over seeds. `spread` is the sample standard
/// deviation (zero for a single seed).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SettingSummary {
    pub setting: String,
    pub runs: usize,
    pub all_mean: f64,
    pub all_spread: f64,
    pub old_mean: f64,
    pub old_spread: f64,
    pub new_mean: f64,
    pub new_spread: f64,
}

/// All runs of one ablation, setting-major (every seed of a setting before
/// the next setting).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

fn mean_and_spread(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl AblationTable {
    /// Distinct setting labels in first-appearance order.
    pub fn settings(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for row in &self.rows {
            if !out.contains(&row.setting) {
                out.push(row.setting.clone());
            }
        }
        out
    }

    /// Mean and spread of All/Old/New per setting, in table order.
    pub fn summaries(&self) -> Vec<SettingSummary> {
        self.settings()
            .into_iter()
            .map(|setting| {
                let reports: Vec<&MetricsReport> = self
                    .rows
                    .iter()
                    .filter(|r| r.setting == setting)
                    .map(|r| &r.report)
                    .collect();
                let col = |f: fn(&MetricsReport) -> f64| {
                    mean_and_spread(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                let (all_mean, all_spread) = col(|r| r.all_acc);
                let (old_mean, old_spread) = col(|r| r.old_acc);
                let (new_mean, new_spread) = col(|r| r.new_acc);
                SettingSummary {
                    setting,
                    runs: reports.len(),
                    all_mean,
                    all_spread,
                    old_mean,
                    old_spread,
                    new_mean,
                    new_spread,
                }
            })
            .collect()
    }

    /// CSV with columns `setting,seed,all,old,new`: one row per run, then a
    /// `mean` and a `spread` row per setting (those two carry the aggregate
    /// label in the seed column).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,seed,all,old,new\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                row.setting, row.seed, row.report.all_acc, row.report.old_acc, row.report.new_acc
            ));
        }
        for s in self.summaries() {
            out.push_str(&format!(
                "{},mean,{:?},{:?},{:?}\n",
                s.setting, s.all_mean, s.old_mean, s.new_mean
            ));
            out.push_str(&format!(
                "{},spread,{:?},{:?},{:?}\n",
                s.setting, s.all_spread, s.old_spread, s.new_spread
            ));
        }
        out
    }
}

fn push_runs(
    rows: &mut Vec<AblationRow>,
    ds: &GcdDataset,
    cfg: &PipelineConfig,
    setting: &str,
    seeds: &[u64],
) -> Result<(), PipelineError> {
    for &seed in seeds {
        let report = run_pipeline(ds, &cfg.with_seed(seed))?.report;
        rows.push(AblationRow {
            setting: setting.to_string(),
            seed,
            report,
        });
    }
    Ok(())
}

/// Trains and evaluates one run per setting per seed along the chosen axis.
///
/// The α axis trains Stage 1 once per seed and shares the resulting generator
/// across all eleven α settings — Stage 1 never reads α, and streams are
/// keyed by purpose, so the shortcut is bit-identical to independent runs.
pub fn ablate(
    ds: &GcdDataset,
    base: &PipelineConfig,
    axis: AblationAxis,
    seeds: &[u64],
) -> Result<AblationTable, PipelineError> {
    base.validate()?;
    if seeds.is_empty() {
        return Err(PipelineError::InvalidConfig(
            "ablate needs at least one seed".into(),
        ));
    }
    let mut rows = Vec::new();
    match axis {
        AblationAxis::Layers => {
            for n in LAYER_SETTINGS {
                let mut cfg = base.clone();
                cfg.num_stacked = n;
                cfg.projections_enabled = true;
                push_runs(&mut rows, ds, &cfg, &n.to_string(), seeds)?;
            }
        }
        AblationAxis::Alpha => {
            // Seed-major: one Stage-1 generator per seed, reused across α.
            let mut by_setting: Vec<Vec<AblationRow>> = vec![Vec::new(); ALPHA_SETTINGS];
            for &seed in seeds {
                let cfg = base.with_seed(seed);
                let (model0, head0, bank0) = init_models(ds, &cfg)?;
                let mut trained = model0.clone();
                let stage1_needed = cfg.projections_enabled;
                if stage1_needed {
                    run_stage1(ds, &mut trained, &cfg)?;
                }
                for (i, slot) in by_setting.iter_mut().enumerate() {
                    let alpha = i as f64 / 10.0;
                    let mut run_cfg = cfg.clone();
                    run_cfg.stage2.alpha = alpha;
                    // The generator only ever trains in Stage 1 here; Stage 2
                    // sees a clone so settings stay independent even with
                    // fine-tuning enabled.
                    let mut model = if needs_stage1(&run_cfg) {
                        trained.clone()
                    } else {
                        model0.clone()
                    };
                    let mut head = head0.clone();
                    let mut bank = bank0.clone();
                    let (_, report) =
                        run_stage2_and_eval(ds, &mut model, &mut head, &mut bank, &run_cfg)?;
                    slot.push(AblationRow {
                        setting: format!("{alpha:.1}"),
                        seed,
                        report,
                    });
                }
            }
            for slot in by_setting {
                rows.extend(slot);
            }
        }
        AblationAxis::Components => {
            let stacked = if base.num_stacked == 0 {
                2
            } else {
                base.num_stacked
            };

            let mut none = base.clone();
            none.projections_enabled = false;
            none.num_stacked = 0;
            none.stage2.alpha = 1.0;
            push_runs(&mut rows, ds, &none, "none", seeds)?;

            let mut initial = base.clone();
            initial.projections_enabled = true;
            initial.num_stacked = 0;
            push_runs(&mut rows, ds, &initial, "initial", seeds)?;

            let mut full = base.clone();
            full.projections_enabled = true;
            full.num_stacked = stacked;
            push_runs(&mut rows, ds, &full, "initial+stacked", seeds)?;
        }
    }
    Ok(AblationTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn tiny_ds() -> GcdDataset {
        synth::generate(&SynthConfig {
            num_classes: 8,
            num_known: 4,
            dim: 16,
            samples_per_class: 8,
            labeled_fraction: 0.5,
            intra_class_noise: 0.2,
            modality_rotation_seed: 3,
            fine_grained_groups: 2,
            group_spread: 0.3,
            rng_seed: 11,
        })
        .unwrap()
    }

    fn fast_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.head_hidden = 24;
        cfg.stage1.epochs = 3;
        cfg.stage1.episode_n = 8;
        cfg.stage2.epochs = 2;
        cfg.stage2.batch_size = 16;
        cfg
    }

    #[test]
    fn pipeline_runs_end_to_end_and_echoes_its_settings() {
        let ds = tiny_ds();
        let cfg = fast_cfg();
        let arts = run_pipeline(&ds, &cfg).unwrap();
        assert_eq!(arts.stage1_records.len(), 3);
        assert!(!arts.stage2_records.is_empty());
        let r = &arts.report;
        assert_eq!(r.k_used, ds.num_classes);
        assert_eq!(r.num_stacked, 2);
        assert_eq!(r.alpha, cfg.stage2.alpha);
        assert_eq!(r.host, Host::Parametric);
        assert_eq!(r.n_unlabeled, r.n_old + r.n_new);
        for acc in [r.all_acc, r.old_acc, r.new_acc] {
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn disabled_generator_skips_stage1() {
        let ds = tiny_ds();
        let mut cfg = fast_cfg();
        cfg.projections_enabled = false;
        cfg.stage2.alpha = 1.0;
        let arts = run_pipeline(&ds, &cfg).unwrap();
        assert!(arts.stage1_records.is_empty());
        assert!(!arts.stage2_records.is_empty());
    }

    #[test]
    fn layers_axis_emits_the_four_row_structure() {
        let ds = tiny_ds();
        let table = ablate(&ds, &fast_cfg(), AblationAxis::Layers, &[1, 2]).unwrap();
        assert_eq!(table.settings(), ["0", "2", "4", "6"]);
        assert_eq!(table.rows.len(), 8);
        for row in &table.rows {
            let n: usize = row.setting.parse().unwrap();
            assert_eq!(row.report.num_stacked, n);
            assert_eq!(row.report.seed, row.seed);
        }
        let summaries = table.summaries();
        assert_eq!(summaries.len(), 4);
        assert!(summaries.iter().all(|s| s.runs == 2));
    }

    #[test]
    fn alpha_axis_emits_eleven_settings_matching_standalone_runs() {
        let ds = tiny_ds();
        let base = fast_cfg();
        let table = ablate(&ds, &base, AblationAxis::Alpha, &[5]).unwrap();
        let labels: Vec<String> = (0..=10).map(|i| format!("{:.1}", i as f64 / 10.0)).collect();
        assert_eq!(table.settings(), labels);
        assert_eq!(table.rows.len(), 11);

        // Sharing Stage 1 across the sweep must not change any report:
        // spot-check one interior α against a from-scratch pipeline run.
        let mut standalone = base.with_seed(5);
        standalone.stage2.alpha = 0.4;
        let expect = run_pipeline(&ds, &standalone).unwrap().report;
        let row = table.rows.iter().find(|r| r.setting == "0.4").unwrap();
        assert_eq!(row.report, expect);

        // And at α = 1 the generator is unobservable, so the row equals a
        // run with the generator disabled outright.
        let mut off = base.with_seed(5);
        off.projections_enabled = false;
        off.stage2.alpha = 1.0;
        let baseline = run_pipeline(&ds, &off).unwrap().report;
        let row = table.rows.iter().find(|r| r.setting == "1.0").unwrap();
        assert_eq!(row.report, baseline);
    }

    #[test]
    fn components_axis_has_three_rows_matching_their_configs() {
        let ds = tiny_ds();
        let table = ablate(&ds, &fast_cfg(), AblationAxis::Components, &[9]).unwrap();
        assert_eq!(table.settings(), ["none", "initial", "initial+stacked"]);
        assert_eq!(table.rows.len(), 3);
        let by = |s: &str| &table.rows.iter().find(|r| r.setting == s).unwrap().report;
        assert_eq!(by("none").alpha, 1.0);
        assert_eq!(by("none").num_stacked, 0);
        assert_eq!(by("initial").alpha, 0.4);
        assert_eq!(by("initial").num_stacked, 0);
        assert_eq!(by("initial+stacked").num_stacked, 2);
    }

    #[test]
    fn csv_has_data_rows_then_mean_and_spread_rows() {
        let report = MetricsReport {
            all_acc: 0.5,
            old_acc: 0.75,
            new_acc: 0.25,
            n_unlabeled: 8,
            n_old: 4,
            n_new: 4,
            k_used: 4,
            host: Host::Parametric,
            seed: 1,
            alpha: 0.4,
            num_stacked: 2,
        };
        let mk = |setting: &str, seed: u64, all: f64| AblationRow {
            setting: setting.into(),
            seed,
            report: MetricsReport {
                all_acc: all,
                seed,
                ..report.clone()
            },
        };
        let table = AblationTable {
            axis: AblationAxis::Layers,
            rows: vec![mk("0", 1, 0.4), mk("0", 2, 0.6), mk("2", 1, 0.9)],
        };
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "setting,seed,all,old,new");
        assert_eq!(lines.len(), 1 + 3 + 2 * 2);
        assert_eq!(lines[1], "0,1,0.4,0.75,0.25");
        assert!(lines.contains(&"0,mean,0.5,0.75,0.25"));
        // Sample spread of {0.4, 0.6} is √0.02; single-seed spread is 0.
        let spread_line = lines.iter().find(|l| l.starts_with("0,spread")).unwrap();
        let spread: f64 = spread_line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((spread - 0.02_f64.sqrt()).abs() < 1e-12);
        assert!(lines.contains(&"2,spread,0.0,0.0,0.0"));
    }
}
