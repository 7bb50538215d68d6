//! SGD with momentum, weight decay, and cosine learning-rate annealing with
//! optional linear warmup.
//!
//! Update rule per parameter, matching the usual deep-learning convention:
//! `g ← grad + wd·p`, `v ← momentum·v + g`, `p ← p − lr_t·v`, with
//! `lr_t = base_lr · (t+1)/W` for the first W warmup steps and then
//! `base_lr · ½(1 + cos(π·(t−W)/(T−W)))` over the rest of the step budget T.

use std::collections::BTreeMap;

use crate::error::TrainError;
use crate::tensor::Param;

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Planned total number of steps; anchors the cosine schedule.
    pub total_steps: usize,
    /// Linear-warmup steps before the cosine arc begins.
    pub warmup_steps: usize,
    /// Steps applied so far.
    pub step_count: usize,
    /// Momentum buffers keyed by parameter name (ordered for serialization).
    pub velocities: BTreeMap<String, Vec<f64>>,
}

/// One parameter's pending update: its stable name, the parameter itself,
/// and the gradient (`None` means this parameter received no gradient this
/// step — only weight decay applies).
pub struct ParamUpdate<'a> {
    pub name: &'a str,
    pub param: &'a mut Param,
    pub grad: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
        total_steps: usize,
    ) -> Result<Self, TrainError> {
        let bad = |name, value, range| {
            Err(TrainError::Model(crate::error::ModelError::InvalidHyper {
                name,
                value,
                range,
            }))
        };
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return bad("lr", base_lr, "finite, ≥ 0");
        }
        if !(0.0..1.0).contains(&momentum) {
            return bad("momentum", momentum, "[0, 1)");
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return bad("weight_decay", weight_decay, "finite, ≥ 0");
        }
        if total_steps == 0 {
            return bad("total_steps", 0.0, "≥ 1");
        }
        Ok(Sgd {
            base_lr,
            momentum,
            weight_decay,
            total_steps,
            warmup_steps: 0,
            step_count: 0,
            velocities: BTreeMap::new(),
        })
    }

    /// Prepends a linear warmup of `steps` steps (clamped below the total)
    /// to the cosine arc.
    pub fn with_warmup(mut self, steps: usize) -> Self {
        self.warmup_steps = steps.min(self.total_steps.saturating_sub(1));
        self
    }

    /// Scheduled learning rate for step index `t` (0-based): linear warmup,
    /// then the cosine arc over the remaining budget.
    pub fn lr_at(&self, t: usize) -> f64 {
        if t < self.warmup_steps {
            return self.base_lr * (t + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let t = (t - self.warmup_steps).min(self.total_steps - self.warmup_steps) as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t / span).cos())
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step_count)
    }

    /// Applies one optimizer step to every listed parameter and advances
    /// the schedule. A zero learning rate leaves parameter data untouched
    /// bit-for-bit (velocities still accumulate).
    pub fn step(&mut self, updates: &mut [ParamUpdate<'_>]) -> Result<f64, TrainError> {
        let lr = self.current_lr();
        for u in updates.iter_mut() {
            let n = u.param.data.len();
            if let Some(g) = &u.grad {
                if g.len() != n {
                    return Err(TrainError::Checkpoint(format!(
                        "gradient length {} does not match parameter {} of length {n}",
                        g.len(),
                        u.name
                    )));
                }
            }
            let velocity = self
                .velocities
                .entry(u.name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            if velocity.len() != n {
                return Err(TrainError::Checkpoint(format!(
                    "velocity length {} does not match parameter {} of length {n}",
                    velocity.len(),
                    u.name
                )));
            }
            for i in 0..n {
                let g = u.grad.as_ref().map_or(0.0, |g| g[i]) + self.weight_decay * u.param.data[i];
                velocity[i] = self.momentum * velocity[i] + g;
                if lr != 0.0 {
                    u.param.data[i] -= lr * velocity[i];
                }
            }
        }
        self.step_count += 1;
        Ok(lr)
    }
}
