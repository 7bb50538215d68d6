//! Analogical Textual Concept Generator (ATCG) and the fusion head.
//!
//! ATCG maps a visual embedding plus the knowledge base to a synthesized
//! "analogical" text embedding: an initial text & image-analogical attention
//! (TIAA) layer, then `n` stacked refinement layers, each a text
//! self-attention (TSA) followed by a TIAA whose query and keys concatenate
//! text and visual coordinates. Single head, no residuals, no layer norm.
//!
//! The printed equations are parameter-free attention over raw embeddings;
//! training requires weights, so every attention carries learnable Q/K/V and
//! output projections initialized near identity. With
//! `projections_enabled = false` the forward reproduces the equations
//! verbatim, which is what the fidelity tests pin down. With projections
//! initialized at exactly identity (`init_std = 0`) the two paths agree.
//!
//! All functions are batched: a query matrix is B×d with rows independent.

use crate::error::ModelError;
use crate::kb::{KbMode, KnowledgeBase};
use crate::rng::{self, tag};
use crate::tensor::{Graph, Param, Tensor};

/// Additive mask value that drives a softmax weight to exact zero (the
/// shifted exponent underflows).
pub const MASK_OFF: f64 = -1e9;

/// One attention block's projections (query, key, value, output).
#[derive(Clone, Debug, PartialEq)]
pub struct Projections {
    pub q: Param,
    pub k: Param,
    pub v: Param,
    pub o: Param,
}

impl Projections {
    /// Identity plus N(0, std²) noise; `qk_dim` covers the stacked TIAA
    /// whose query/key paths are 2d-wide while value/output stay d-wide.
    fn init(qk_dim: usize, vo_dim: usize, std: f64, rng: &mut impl rand::Rng) -> Self {
        let mut near_identity = |n: usize| {
            let noise = rng::gaussians(rng, n * n);
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    data[i * n + j] = if i == j { 1.0 } else { 0.0 } + std * noise[i * n + j];
                }
            }
            Param::new(data, vec![n, n])
        };
        Projections {
            q: near_identity(qk_dim),
            k: near_identity(qk_dim),
            v: near_identity(vo_dim),
            o: near_identity(vo_dim),
        }
    }
}

/// One stacked refinement layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedLayer {
    pub tsa: Projections,
    pub tiaa: Projections,
}

/// The generator's owned parameters and structure.
#[derive(Clone, Debug, PartialEq)]
pub struct AtcgModel {
    pub dim: usize,
    pub num_stacked: usize,
    pub projections_enabled: bool,
    pub initial: Projections,
    pub stacked: Vec<StackedLayer>,
}

impl AtcgModel {
    /// Builds a model with projections drawn as identity + N(0, init_std²)
    /// from the model-init stream of `seed`.
    pub fn init(
        dim: usize,
        num_stacked: usize,
        projections_enabled: bool,
        init_std: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidHyper {
                name: "dim",
                value: 0.0,
                range: "positive",
            });
        }
        if !(init_std >= 0.0 && init_std.is_finite()) {
            return Err(ModelError::InvalidHyper {
                name: "init_std",
                value: init_std,
                range: "finite, ≥ 0",
            });
        }
        let mut rng = rng::stream(seed, &[tag::ATCG_INIT]);
        let initial = Projections::init(dim, dim, init_std, &mut rng);
        let stacked = (0..num_stacked)
            .map(|_| StackedLayer {
                tsa: Projections::init(dim, dim, init_std, &mut rng),
                tiaa: Projections::init(2 * dim, dim, init_std, &mut rng),
            })
            .collect();
        Ok(AtcgModel {
            dim,
            num_stacked,
            projections_enabled,
            initial,
            stacked,
        })
    }

    /// Stable parameter names, in registration order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let block = |prefix: &str, names: &mut Vec<String>| {
            for p in ["q", "k", "v", "o"] {
                names.push(format!("{prefix}.{p}"));
            }
        };
        block("initial", &mut names);
        for i in 0..self.stacked.len() {
            block(&format!("stacked{i}.tsa"), &mut names);
            block(&format!("stacked{i}.tiaa"), &mut names);
        }
        names
    }

    /// Parameters in the same order as [`AtcgModel::param_names`].
    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![
            &self.initial.q,
            &self.initial.k,
            &self.initial.v,
            &self.initial.o,
        ];
        for layer in &self.stacked {
            out.extend([&layer.tsa.q, &layer.tsa.k, &layer.tsa.v, &layer.tsa.o]);
            out.extend([&layer.tiaa.q, &layer.tiaa.k, &layer.tiaa.v, &layer.tiaa.o]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![
            &mut self.initial.q,
            &mut self.initial.k,
            &mut self.initial.v,
            &mut self.initial.o,
        ];
        for layer in &mut self.stacked {
            let StackedLayer { tsa, tiaa } = layer;
            out.extend([&mut tsa.q, &mut tsa.k, &mut tsa.v, &mut tsa.o]);
            out.extend([&mut tiaa.q, &mut tiaa.k, &mut tiaa.v, &mut tiaa.o]);
        }
        out
    }

    /// Registers every projection into `g` and returns graph-side variables.
    /// With projections disabled nothing is registered and the forward runs
    /// over raw embeddings.
    pub fn register(&self, g: &Graph, trainable: bool) -> Result<AtcgVars, ModelError> {
        if !self.projections_enabled {
            return Ok(AtcgVars {
                dim: self.dim,
                initial: None,
                stacked: vec![None; self.num_stacked],
            });
        }
        let reg = |p: &Projections| -> Result<ProjTensors, ModelError> {
            Ok(ProjTensors {
                q: p.q.register(g, trainable)?,
                k: p.k.register(g, trainable)?,
                v: p.v.register(g, trainable)?,
                o: p.o.register(g, trainable)?,
            })
        };
        Ok(AtcgVars {
            dim: self.dim,
            initial: Some(reg(&self.initial)?),
            stacked: self
                .stacked
                .iter()
                .map(|l| Ok(Some((reg(&l.tsa)?, reg(&l.tiaa)?))))
                .collect::<Result<_, ModelError>>()?,
        })
    }
}

/// Graph-side projection tensors for one attention block.
#[derive(Clone, Debug)]
pub struct ProjTensors {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub o: Tensor,
}

/// Graph-side view of the whole generator. `None` blocks mean projections
/// are disabled and that block computes over raw embeddings.
#[derive(Clone, Debug)]
pub struct AtcgVars {
    pub dim: usize,
    pub initial: Option<ProjTensors>,
    pub stacked: Vec<Option<(ProjTensors, ProjTensors)>>,
}

impl ProjTensors {
    fn flat(&self) -> [&Tensor; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }
}

impl AtcgVars {
    /// Registered tensors in [`AtcgModel::params`] order; empty when
    /// projections are disabled.
    pub fn flat(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if let Some(p) = &self.initial {
            out.extend(p.flat());
        }
        for layer in self.stacked.iter().flatten() {
            out.extend(layer.0.flat());
            out.extend(layer.1.flat());
        }
        out
    }
}

/// Knowledge base registered into a graph as attention context: visual keys,
/// text values, and the per-row `[text, visual]` concatenations the stacked
/// layers key on.
pub struct KbContext {
    pub keys: Tensor,
    pub values: Tensor,
    pub concat_keys: Tensor,
    pub len: usize,
    pub dim: usize,
}

/// Registers `kb` as constants in `g`.
pub fn register_kb(g: &Graph, kb: &KnowledgeBase) -> Result<KbContext, ModelError> {
    let (l, d) = (kb.len(), kb.dim);
    if l == 0 {
        return Err(ModelError::Invalid("knowledge base is empty".into()));
    }
    let mut concat = Vec::with_capacity(l * 2 * d);
    for i in 0..l {
        concat.extend_from_slice(kb.text_value(i));
        concat.extend_from_slice(kb.visual_key(i));
    }
    Ok(KbContext {
        keys: g.constant(kb.visual_keys.clone(), &[l, d])?,
        values: g.constant(kb.text_values.clone(), &[l, d])?,
        concat_keys: g.constant(concat, &[l, 2 * d])?,
        len: l,
        dim: d,
    })
}

/// Attention weights of one layer, copied out for inspection.
#[derive(Clone, Debug)]
pub struct LayerAttention {
    pub layer: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major rows×cols weight matrix; each row is nonnegative, sum 1.
    pub weights: Vec<f64>,
}

fn project(x: &Tensor, p: Option<&Tensor>) -> Result<Tensor, ModelError> {
    match p {
        Some(p) => Ok(x.matmul(p)?),
        None => Ok(x.clone()),
    }
}

fn attend(
    query: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    scale_dim: usize,
    mask: Option<&Tensor>,
    out_proj: Option<&Tensor>,
    layer: &str,
) -> Result<(Tensor, LayerAttention), ModelError> {
    let logits = query
        .matmul(&keys.transpose()?)?
        .scale(1.0 / (scale_dim as f64).sqrt())?;
    let logits = match mask {
        Some(m) => logits.add(m)?,
        None => logits,
    };
    let weights = logits.softmax_rows()?;
    let out = project(&weights.matmul(values)?, out_proj)?;
    let shape = weights.shape();
    let record = LayerAttention {
        layer: layer.to_string(),
        rows: shape[0],
        cols: shape[1],
        weights: weights.data(),
    };
    Ok((out, record))
}

/// Initial TIAA: queries are visual embeddings, keys the KB's visual side,
/// values its text side. Returns the analogical text embedding and the
/// attention weights.
pub fn tiaa_initial(
    v_q: &Tensor,
    ctx: &KbContext,
    proj: Option<&ProjTensors>,
    mask: Option<&Tensor>,
) -> Result<(Tensor, LayerAttention), ModelError> {
    let q = project(v_q, proj.map(|p| &p.q))?;
    let k = project(&ctx.keys, proj.map(|p| &p.k))?;
    let v = project(&ctx.values, proj.map(|p| &p.v))?;
    attend(&q, &k, &v, ctx.dim, mask, proj.map(|p| &p.o), "tiaa_initial")
}

/// Text self-attention over a single token per row. The per-row sequence has
/// length one, so the softmax weight is exactly 1 and the map reduces to the
/// value/output projections; with projections disabled it is exactly the
/// identity. The query/key paths are kept in the graph (they receive exactly
/// zero gradient, since a one-element softmax is constant).
pub fn tsa(t_prev: &Tensor, proj: Option<&ProjTensors>) -> Result<Tensor, ModelError> {
    let d = t_prev.shape()[1];
    let q = project(t_prev, proj.map(|p| &p.q))?;
    let k = project(t_prev, proj.map(|p| &p.k))?;
    let v = project(t_prev, proj.map(|p| &p.v))?;
    let g = {
        // Row-wise q·k as a B×1 logit column: (q ∘ k) · ones.
        let graph_ones = ones(t_prev, d, 1)?;
        q.mul(&k)?.matmul(&graph_ones)?
    };
    let weights = g.scale(1.0 / (d as f64).sqrt())?.softmax_rows()?;
    // Broadcast the B×1 weight column across d columns, then gate the value.
    let spread = weights.matmul(&ones(t_prev, 1, d)?)?;
    project(&spread.mul(&v)?, proj.map(|p| &p.o))
}

fn ones(like: &Tensor, rows: usize, cols: usize) -> Result<Tensor, ModelError> {
    Ok(like.graph().constant(vec![1.0; rows * cols], &[rows, cols])?)
}

/// Stacked TIAA: queries concatenate the self-aligned text embedding with
/// the visual embedding; keys concatenate each KB pair the same way; values
/// stay textual. The wider query/key paths scale by √(2d).
pub fn tiaa_stacked(
    t_tsa: &Tensor,
    v_q: &Tensor,
    ctx: &KbContext,
    proj: Option<&ProjTensors>,
    mask: Option<&Tensor>,
    layer: &str,
) -> Result<(Tensor, LayerAttention), ModelError> {
    let q = project(&t_tsa.concat_cols(v_q)?, proj.map(|p| &p.q))?;
    let k = project(&ctx.concat_keys, proj.map(|p| &p.k))?;
    let v = project(&ctx.values, proj.map(|p| &p.v))?;
    attend(&q, &k, &v, 2 * ctx.dim, mask, proj.map(|p| &p.o), layer)
}

/// Full generator output plus per-TIAA attention records.
pub struct AtcgOutput {
    pub t_final: Tensor,
    pub attentions: Vec<LayerAttention>,
}

/// Additive top-k mask: 0 on each query's k most similar KB rows (by raw
/// visual cosine), [`MASK_OFF`] elsewhere. Selection is data-driven and not
/// differentiated through.
fn topk_mask(
    g: &Graph,
    v_q: &Tensor,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<Tensor, ModelError> {
    let shape = v_q.shape();
    let (b, d) = (shape[0], shape[1]);
    let data = v_q.data();
    let mut mask = vec![MASK_OFF; b * kb.len()];
    for row in 0..b {
        for ix in kb.top_k_rows(&data[row * d..(row + 1) * d], k) {
            mask[row * kb.len() + ix] = 0.0;
        }
    }
    Ok(g.constant(mask, &[b, kb.len()])?)
}

/// Runs the whole generator on a B×d query batch: initial TIAA, then
/// `num_stacked` rounds of TSA + stacked TIAA. Honors the KB's serving mode.
pub fn atcg_forward(
    v_q: &Tensor,
    kb: &KnowledgeBase,
    vars: &AtcgVars,
) -> Result<AtcgOutput, ModelError> {
    if kb.dim != vars.dim {
        return Err(ModelError::Invalid(format!(
            "knowledge base dim {} != model dim {}",
            kb.dim, vars.dim
        )));
    }
    let shape = v_q.shape();
    if shape.len() != 2 || shape[1] != vars.dim {
        return Err(ModelError::Invalid(format!(
            "query shape {shape:?} incompatible with model dim {}",
            vars.dim
        )));
    }
    let g = v_q.graph();
    let ctx = register_kb(&g, kb)?;
    let mask = match kb.mode {
        KbMode::Topk(k) => Some(topk_mask(&g, v_q, kb, k.min(kb.len()))?),
        KbMode::Full | KbMode::ClassPrototype => None,
    };

    let (mut t, first) = tiaa_initial(v_q, &ctx, vars.initial.as_ref(), mask.as_ref())?;
    let mut attentions = vec![first];
    for (i, layer) in vars.stacked.iter().enumerate() {
        let (tsa_proj, tiaa_proj) = match layer {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        let t_tsa = tsa(&t, tsa_proj)?;
        let (next, record) = tiaa_stacked(
            &t_tsa,
            v_q,
            &ctx,
            tiaa_proj,
            mask.as_ref(),
            &format!("tiaa_stacked_{i}"),
        )?;
        t = next;
        attentions.push(record);
    }
    Ok(AtcgOutput {
        t_final: t,
        attentions,
    })
}

/// Convex blend h = α·v + (1−α)·t̃. The endpoints pass the corresponding
/// input through untouched, which is what makes the α=1 run structurally
/// identical to a generator-free baseline.
pub fn fuse(v: &Tensor, t_tilde: &Tensor, alpha: f64) -> Result<Tensor, ModelError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::InvalidHyper {
            name: "alpha",
            value: alpha,
            range: "[0, 1]",
        });
    }
    if alpha == 1.0 {
        return Ok(v.clone());
    }
    if alpha == 0.0 {
        return Ok(t_tilde.clone());
    }
    Ok(v.scale(alpha)?.add(&t_tilde.scale(1.0 - alpha)?)?)
}

/// Two-layer GeLU MLP with an L2-normalized output.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    pub dim_in: usize,
    pub hidden: usize,
    pub dim_out: usize,
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

/// Graph-side fusion head.
#[derive(Clone, Debug)]
pub struct FusionHeadVars {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FusionHeadVars {
    /// Registered tensors in [`FusionHead::params`] order.
    pub fn flat(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

impl FusionHead {
    /// Gaussian weights at std 1/√fan_in, zero biases, drawn from the
    /// head-init stream of `seed`.
    pub fn init(dim_in: usize, hidden: usize, dim_out: usize, seed: u64) -> Result<Self, ModelError> {
        if dim_in == 0 || hidden == 0 || dim_out == 0 {
            return Err(ModelError::Invalid(
                "fusion head dimensions must be positive".into(),
            ));
        }
        let mut rng = rng::stream(seed, &[tag::HEAD_INIT]);
        let mut gaussian_matrix = |rows: usize, cols: usize| {
            let std = 1.0 / (rows as f64).sqrt();
            let data = rng::gaussians(&mut rng, rows * cols)
                .into_iter()
                .map(|g| std * g)
                .collect();
            Param::new(data, vec![rows, cols])
        };
        Ok(FusionHead {
            dim_in,
            hidden,
            dim_out,
            w1: gaussian_matrix(dim_in, hidden),
            b1: Param::zeros(&[1, hidden]),
            w2: gaussian_matrix(hidden, dim_out),
            b2: Param::zeros(&[1, dim_out]),
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        ["head.w1", "head.b1", "head.w2", "head.b2"]
            .map(String::from)
            .to_vec()
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn register(&self, g: &Graph, trainable: bool) -> Result<FusionHeadVars, ModelError> {
        Ok(FusionHeadVars {
            w1: self.w1.register(g, trainable)?,
            b1: self.b1.register(g, trainable)?,
            w2: self.w2.register(g, trainable)?,
            b2: self.b2.register(g, trainable)?,
        })
    }
}

/// f = l2_normalize(gelu(h·W1 + b1)·W2 + b2), rows independent.
pub fn fusion_head(h: &Tensor, vars: &FusionHeadVars) -> Result<Tensor, ModelError> {
    let hidden = h.matmul(&vars.w1)?.add_row(&vars.b1)?.gelu()?;
    Ok(hidden
        .matmul(&vars.w2)?
        .add_row(&vars.b2)?
        .l2_normalize_rows()?)
}
