//! Loss functions: analogical alignment, contrastive representation
//! learning, and prototype classification with entropy regularization.
//!
//! Conventions shared by the contrastive losses: a batch of B samples is
//! presented as 2B rows with views paired `i ↔ (i+B) mod 2B`, rows unit-norm.
//! Excluded similarity entries (an anchor against itself) are masked by
//! adding [`SIM_MASK`] to the scaled logit, which drives the shifted
//! exponent to an exact zero — the masked term vanishes from the
//! log-sum-exp rather than being approximately small.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::rng::{self, tag};
use crate::tensor::{Graph, Param, Tensor};

/// Additive mask that removes an entry from a row softmax/log-sum-exp.
pub const SIM_MASK: f64 = -1e9;

/// Blend and temperature knobs. The paper states none of these; the
/// defaults are inherited from its SimGCD host and must be surfaced in
/// every report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Supervised/unsupervised blend, in [0, 1].
    pub lambda: f64,
    /// Entropy regularizer weight, ≥ 0 (2 suits fine-grained runs, 1 is the
    /// generic-classification inheritance).
    pub epsilon: f64,
    /// Representation-loss temperature (both contrastive losses).
    pub tau: f64,
    /// Student temperature for the prototype posterior.
    pub tau_s: f64,
    /// Teacher sharpening temperature.
    pub tau_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.35,
            epsilon: 2.0,
            tau: 0.07,
            tau_s: 0.07,
            tau_t: 0.04,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, value, range| Err(ModelError::InvalidHyper { name, value, range });
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", self.lambda, "[0, 1]");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", self.epsilon, "finite, ≥ 0");
        }
        for (name, t) in [("tau", self.tau), ("tau_s", self.tau_s), ("tau_t", self.tau_t)] {
            if !(t > 0.0 && t.is_finite()) {
                return bad(name, t, "positive");
            }
        }
        Ok(())
    }
}

/// Learnable class prototypes, kept unit-norm between optimizer steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    pub c: Param,
    pub num_classes: usize,
    pub dim: usize,
}

impl PrototypeBank {
    /// Random unit rows from the bank-init stream of `seed`.
    pub fn init(num_classes: usize, dim: usize, seed: u64) -> Result<Self, ModelError> {
        if num_classes == 0 || dim == 0 {
            return Err(ModelError::Invalid(
                "prototype bank needs positive class count and dim".into(),
            ));
        }
        let mut rng = rng::stream(seed, &[tag::BANK_INIT]);
        let mut data = Vec::with_capacity(num_classes * dim);
        for _ in 0..num_classes {
            let mut row = rng::gaussians(&mut rng, dim);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            data.extend(row);
        }
        Ok(PrototypeBank {
            c: Param::new(data, vec![num_classes, dim]),
            num_classes,
            dim,
        })
    }

    pub fn register(&self, g: &Graph, trainable: bool) -> Result<Tensor, ModelError> {
        Ok(self.c.register(g, trainable)?)
    }

    /// Restores unit row norms; call after every optimizer step.
    pub fn renormalize(&mut self) {
        for row in self.c.data.chunks_mut(self.dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        vec!["prototypes.c".into()]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.c]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.c]
    }
}

/// Row-wise cosine similarity of two B×D tensors, as a B×1 column.
pub fn cosine_rows(a: &Tensor, b: &Tensor) -> Result<Tensor, ModelError> {
    let shape = a.shape();
    if shape != b.shape() || shape.len() != 2 {
        return Err(ModelError::Invalid(format!(
            "cosine_rows needs equal rank-2 shapes, got {:?} and {:?}",
            shape,
            b.shape()
        )));
    }
    let g = a.graph();
    let ones = g.constant(vec![1.0; shape[1]], &[shape[1], 1])?;
    Ok(a.l2_normalize_rows()?
        .mul(&b.l2_normalize_rows()?)?
        .matmul(&ones)?)
}

/// Mean over rows of 1 − cos(t̃_j, t_j). Zero iff every pair is positively
/// collinear; 2 when every pair is antipodal.
pub fn analogical_loss(t_gen: &Tensor, t_true: &Tensor) -> Result<Tensor, ModelError> {
    let cos = cosine_rows(t_gen, t_true)?;
    let g = t_gen.graph();
    let ones = g.constant(vec![1.0; cos.numel()], &[cos.numel(), 1])?;
    Ok(ones.sub(&cos)?.mean_all()?)
}

fn check_unit_rows(f: &Tensor, what: &str) -> Result<(usize, usize), ModelError> {
    let shape = f.shape();
    if shape.len() != 2 {
        return Err(ModelError::Invalid(format!(
            "{what}: expected rank-2, got {shape:?}"
        )));
    }
    let (rows, d) = (shape[0], shape[1]);
    let data = f.data();
    for (i, row) in data.chunks(d).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ModelError::Invalid(format!(
                "{what}: row {i} has norm {norm}, expected unit"
            )));
        }
    }
    Ok((rows, d))
}

fn check_tau(name: &'static str, tau: f64) -> Result<(), ModelError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ModelError::InvalidHyper {
            name,
            value: tau,
            range: "positive",
        });
    }
    Ok(())
}

/// Scaled similarity matrix with the diagonal masked out: S = f·fᵀ/τ + mask.
fn masked_similarities(f: &Tensor, rows: usize, tau: f64) -> Result<Tensor, ModelError> {
    let g = f.graph();
    let mut diag = vec![0.0; rows * rows];
    for i in 0..rows {
        diag[i * rows + i] = SIM_MASK;
    }
    let mask = g.constant(diag, &[rows, rows])?;
    Ok(f.matmul(&f.transpose()?)?.scale(1.0 / tau)?.add(&mask)?)
}

/// InfoNCE over 2B unit-norm view rows paired `i ↔ (i+B) mod 2B`. For each
/// anchor the denominator runs over every other view row in the batch.
pub fn unsup_contrastive(f: &Tensor, tau: f64) -> Result<Tensor, ModelError> {
    check_tau("tau", tau)?;
    let (rows, _) = check_unit_rows(f, "unsup_contrastive")?;
    if rows < 4 || rows % 2 != 0 {
        return Err(ModelError::Invalid(format!(
            "unsup_contrastive needs an even row count ≥ 4 (two views of B ≥ 2 samples), got {rows}"
        )));
    }
    let b = rows / 2;
    let g = f.graph();
    let sims = masked_similarities(f, rows, tau)?;
    let lse = sims.logsumexp_rows()?;
    // Positive logit per anchor, extracted with a one-hot pairing matrix.
    let mut pair = vec![0.0; rows * rows];
    for i in 0..rows {
        pair[i * rows + (i + b) % rows] = 1.0;
    }
    let pairing = g.constant(pair, &[rows, rows])?;
    let ones = g.constant(vec![1.0; rows], &[rows, 1])?;
    let positives = sims.mul(&pairing)?.matmul(&ones)?;
    Ok(lse.sub(&positives)?.mean_all()?)
}

/// Supervised contrastive loss: anchors average −log softmax over their
/// same-label rows P(i) (excluding themselves). `labels` has one entry per
/// row; every row must have at least one positive.
pub fn sup_contrastive(f: &Tensor, labels: &[usize], tau: f64) -> Result<Tensor, ModelError> {
    check_tau("tau", tau)?;
    let (rows, _) = check_unit_rows(f, "sup_contrastive")?;
    if labels.len() != rows {
        return Err(ModelError::Invalid(format!(
            "sup_contrastive: {} labels for {rows} rows",
            labels.len()
        )));
    }
    let mut weights = vec![0.0; rows * rows];
    for i in 0..rows {
        let positives: Vec<usize> = (0..rows)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            return Err(ModelError::Invalid(format!(
                "sup_contrastive: row {i} (label {}) has no positive",
                labels[i]
            )));
        }
        for j in positives.iter() {
            weights[i * rows + j] = 1.0 / positives.len() as f64;
        }
    }
    let g = f.graph();
    let sims = masked_similarities(f, rows, tau)?;
    let lse = sims.logsumexp_rows()?;
    let weight_matrix = g.constant(weights, &[rows, rows])?;
    let ones = g.constant(vec![1.0; rows], &[rows, 1])?;
    // Σ_p w_ip (lse_i − s_ip) = lse_i − Σ_p w_ip s_ip since rows of w sum to 1.
    let positive_mean = sims.mul(&weight_matrix)?.matmul(&ones)?;
    Ok(lse.sub(&positive_mean)?.mean_all()?)
}

/// Posterior over prototypes: softmax_k of cos(f_i, c_k)/τ_s, rows B×K.
pub fn prototype_posterior(f: &Tensor, c: &Tensor, tau_s: f64) -> Result<Tensor, ModelError> {
    check_tau("tau_s", tau_s)?;
    let logits = prototype_logits(f, c, tau_s)?;
    Ok(logits.softmax_rows()?)
}

/// The pre-softmax scores cos(f_i, c_k)/τ: the stable input for the
/// classification losses.
pub fn prototype_logits(f: &Tensor, c: &Tensor, tau: f64) -> Result<Tensor, ModelError> {
    check_tau("tau", tau)?;
    Ok(f.l2_normalize_rows()?
        .matmul(&c.l2_normalize_rows()?.transpose()?)?
        .scale(1.0 / tau)?)
}

/// Row-wise log softmax via log-sum-exp: z − lse(z)·1ᵀ.
pub fn log_softmax_rows(z: &Tensor) -> Result<Tensor, ModelError> {
    let shape = z.shape();
    let g = z.graph();
    let ones = g.constant(vec![1.0; shape[1]], &[1, shape[1]])?;
    Ok(z.sub(&z.logsumexp_rows()?.matmul(&ones)?)?)
}

/// Unsupervised classification loss: mean cross-entropy of the student
/// posterior against the (stop-gradient) teacher distribution, minus ε times
/// the entropy of the batch-mean posterior. `student_logits` holds both
/// views' rows; `teacher_q` row r is the sharpened posterior of row r's
/// alternative view and must hold distributions.
pub fn cls_unsup(
    student_logits: &Tensor,
    teacher_q: &Tensor,
    epsilon: f64,
) -> Result<Tensor, ModelError> {
    let shape = student_logits.shape();
    if shape != teacher_q.shape() || shape.len() != 2 {
        return Err(ModelError::Invalid(format!(
            "cls_unsup: student shape {:?} vs teacher shape {:?}",
            shape,
            teacher_q.shape()
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(ModelError::InvalidHyper {
            name: "epsilon",
            value: epsilon,
            range: "finite, ≥ 0",
        });
    }
    let (rows, k) = (shape[0], shape[1]);
    for (i, row) in teacher_q.data().chunks(k).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(ModelError::Invalid(format!(
                "cls_unsup: teacher row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    let log_p = log_softmax_rows(student_logits)?;
    let ce = teacher_q
        .mul(&log_p)?
        .sum_all()?
        .scale(-1.0 / rows as f64)?;
    if epsilon == 0.0 {
        return Ok(ce);
    }
    let g = student_logits.graph();
    let p = student_logits.softmax_rows()?;
    let mean_weights = g.constant(vec![1.0 / rows as f64; rows], &[1, rows])?;
    let p_bar = mean_weights.matmul(&p)?;
    let entropy = p_bar.mul(&p_bar.log()?)?.sum_all()?.scale(-1.0)?;
    Ok(ce.sub(&entropy.scale(epsilon)?)?)
}

/// Supervised classification loss: mean cross-entropy of the posterior
/// against one-hot labels, over the labeled rows.
pub fn cls_sup(logits: &Tensor, labels: &[usize]) -> Result<Tensor, ModelError> {
    let shape = logits.shape();
    if shape.len() != 2 || labels.len() != shape[0] {
        return Err(ModelError::Invalid(format!(
            "cls_sup: {} labels for logits shape {shape:?}",
            labels.len()
        )));
    }
    let (rows, k) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; rows * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(ModelError::Invalid(format!(
                "cls_sup: label {y} outside {k} classes"
            )));
        }
        onehot[i * k + y] = 1.0;
    }
    let g = logits.graph();
    let targets = g.constant(onehot, &[rows, k])?;
    Ok(targets
        .mul(&log_softmax_rows(logits)?)?
        .sum_all()?
        .scale(-1.0 / rows as f64)?)
}

/// (1−λ)·L_u + λ·L_s, with exact passthrough at the endpoints.
pub fn blend(l_u: &Tensor, l_s: &Tensor, lambda: f64) -> Result<Tensor, ModelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::InvalidHyper {
            name: "lambda",
            value: lambda,
            range: "[0, 1]",
        });
    }
    if lambda == 0.0 {
        return Ok(l_u.clone());
    }
    if lambda == 1.0 {
        return Ok(l_s.clone());
    }
    Ok(l_u.scale(1.0 - lambda)?.add(&l_s.scale(lambda)?)?)
}

/// L = L_rep + L_cls.
pub fn total(l_rep: &Tensor, l_cls: &Tensor) -> Result<Tensor, ModelError> {
    Ok(l_rep.add(l_cls)?)
}
