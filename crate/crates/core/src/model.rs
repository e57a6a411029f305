//! The multi-head expert network.
//!
//! A dense backbone feeds the original head `H0` and one expert head per
//! class subset. Every head has the same body (`expert_blocks` dense ReLU
//! blocks, then a linear `d x d` layer) and emits a `d`-dimensional feature
//! vector.
//! `H0` classifies with a plain linear layer over all `n` classes; expert `k`
//! classifies with scaled cosine logits over its `|C_k|` classes plus a final
//! "other" output. The aggregation classifier reads the combination (mean by
//! default) of all head features.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subsetting::ClusterAssignment;
use crate::tensor::{Graph, ReduceKind, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Max,
    /// Inference-only.
    Median,
    Concat,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "median" => Ok(Aggregation::Median),
            "concat" => Ok(Aggregation::Concat),
            other => Err(Error::usage(format!("unknown aggregation {other:?}"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Median => "median",
            Aggregation::Concat => "concat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub backbone_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub expert_blocks: usize,
    pub cosine_scale: f64,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 16,
            backbone_hidden: vec![64],
            feature_dim: 32,
            n_classes: 20,
            expert_blocks: 1,
            cosine_scale: 10.0,
            aggregation: Aggregation::Mean,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.n_classes == 0 {
            return Err(Error::Validation(
                "input_dim, feature_dim and n_classes must be positive".into(),
            ));
        }
        if self.backbone_hidden.contains(&0) {
            return Err(Error::Validation("backbone widths must be positive".into()));
        }
        if self.expert_blocks > 2 {
            return Err(Error::Validation(format!(
                "expert_blocks must be 0, 1 or 2, got {}",
                self.expert_blocks
            )));
        }
        if !(self.cosine_scale > 0.0 && self.cosine_scale.is_finite()) {
            return Err(Error::Validation("cosine_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Named trainable array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// `x W + b` with `W: [in, out]`; indices point into the model's parameters.
#[derive(Debug, Clone, PartialEq)]
struct Linear {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadBody {
    blocks: Vec<Linear>,
    trailing: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct OriginalHead {
    body: HeadBody,
    classifier: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertHead {
    body: HeadBody,
    /// `[d, |C_k| + 1]` cosine classifier columns; the last is "other".
    normed_weights: usize,
    cluster_classes: Vec<usize>,
}

impl ExpertHead {
    pub fn cluster_classes(&self) -> &[usize] {
        &self.cluster_classes
    }

    pub fn n_outputs(&self) -> usize {
        self.cluster_classes.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElfisModel {
    config: ModelConfig,
    assignment: Option<ClusterAssignment>,
    params: Vec<Param>,
    backbone: Vec<Linear>,
    head0: OriginalHead,
    experts: Vec<ExpertHead>,
    agg_classifier: Option<Linear>,
    input_norm: Option<InputNorm>,
}

/// Per-feature input standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl InputNorm {
    /// Column means and inverse population deviations of `rows` (`[n, dim]`);
    /// constant columns are left unscaled.
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rank() != 2 {
            return Err(Error::usage("input statistics need a [rows, dim] tensor"));
        }
        let (n, dim) = (x.shape()[0] as f64, x.shape()[1]);
        let mut mean = vec![0.0; dim];
        for row in x.values().chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in x.values().chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { 1.0 / sd } else { 1.0 }
            })
            .collect();
        Ok(InputNorm { mean, inv_std })
    }
}

/// Graph handles for every model parameter, in model order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps handles already on a graph; they must follow model order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Per-head features and logits for one batch.
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    /// `f_0` (original head) followed by one entry per expert.
    pub features: Vec<Var>,
    pub logits_h0: Var,
    pub logits_experts: Vec<Var>,
    /// Absent in baseline mode.
    pub logits_aggr: Option<Var>,
}

impl ModelOutputs {
    pub fn n_logit_tensors(&self) -> usize {
        1 + self.logits_experts.len() + usize::from(self.logits_aggr.is_some())
    }
}

/// Plain-tensor view of [`ModelOutputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub features: Vec<Tensor>,
    pub logits_h0: Tensor,
    pub logits_experts: Vec<Tensor>,
    pub logits_aggr: Option<Tensor>,
}

impl Inference {
    /// Logits used for the final prediction.
    pub fn final_logits(&self) -> &Tensor {
        self.logits_aggr.as_ref().unwrap_or(&self.logits_h0)
    }
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Param>,
}

impl Builder {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) -> usize {
        let numel = shape.iter().product();
        let values = (0..numel).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.params.push(Param {
            name,
            value: Tensor::new(shape, values).expect("positive dims"),
        });
        self.params.len() - 1
    }

    /// Fan-in scaled uniform weights (He bound when followed by ReLU), zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, relu: bool) -> Linear {
        let gain = if relu { 6.0 } else { 1.0 };
        let bound = (gain / fan_in as f64).sqrt();
        let weight = self.uniform(format!("{name}.weight"), vec![fan_in, fan_out], bound);
        self.params.push(Param {
            name: format!("{name}.bias"),
            value: Tensor::zeros(vec![fan_out]),
        });
        Linear {
            weight,
            bias: self.params.len() - 1,
        }
    }

    fn body(&mut self, name: &str, d: usize, blocks: usize) -> HeadBody {
        HeadBody {
            blocks: (0..blocks)
                .map(|b| self.linear(&format!("{name}.block{b}"), d, d, true))
                .collect(),
            trailing: self.linear(&format!("{name}.trailing"), d, d, false),
        }
    }
}

/// Builds a model with freshly initialized weights; `None` gives the
/// baseline (backbone and `H0` only).
pub fn init_model(cfg: &ModelConfig, assignment: Option<&ClusterAssignment>) -> Result<ElfisModel> {
    cfg.validate()?;
    if let Some(a) = assignment {
        if a.n() != cfg.n_classes {
            return Err(Error::Validation(format!(
                "cluster assignment covers {} classes but the model has {}",
                a.n(),
                cfg.n_classes
            )));
        }
    }
    let d = cfg.feature_dim;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        params: Vec::new(),
    };
    let mut widths = vec![cfg.input_dim];
    widths.extend_from_slice(&cfg.backbone_hidden);
    widths.push(d);
    let backbone = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| b.linear(&format!("backbone.{i}"), w[0], w[1], true))
        .collect();
    let head0 = OriginalHead {
        body: b.body("head0", d, cfg.expert_blocks),
        classifier: b.linear("head0.classifier", d, cfg.n_classes, false),
    };
    let mut experts = Vec::new();
    let mut agg_classifier = None;
    if let Some(a) = assignment {
        for k in 0..a.k() {
            let name = format!("expert{k}");
            let body = b.body(&name, d, cfg.expert_blocks);
            let width = a.members(k).len() + 1;
            let bound = (1.0 / d as f64).sqrt();
            let normed_weights = b.uniform(format!("{name}.normed"), vec![d, width], bound);
            experts.push(ExpertHead {
                body,
                normed_weights,
                cluster_classes: a.members(k).to_vec(),
            });
        }
        let agg_in = match cfg.aggregation {
            Aggregation::Concat => (a.k() + 1) * d,
            _ => d,
        };
        agg_classifier = Some(b.linear("aggregation.classifier", agg_in, cfg.n_classes, false));
    }
    Ok(ElfisModel {
        config: cfg.clone(),
        assignment: assignment.cloned(),
        params: b.params,
        backbone,
        head0,
        experts,
        agg_classifier,
        input_norm: None,
    })
}

/// Scaled cosine logits `tau * f.w_i / (|f| |w_i| + eps)`.
pub fn normed_linear(g: &mut Graph, f: Var, w: Var, tau: f64) -> Result<Var> {
    g.normed_linear(f, w, tau)
}

/// Combines per-head `[batch, d]` features. Median cannot be trained through.
pub fn aggregate(g: &mut Graph, features: &[Var], method: Aggregation, training: bool) -> Result<Var> {
    match method {
        Aggregation::Concat => g.concat(features),
        Aggregation::Mean | Aggregation::Max | Aggregation::Median => {
            if method == Aggregation::Median && training {
                return Err(Error::Unsupported(
                    "median aggregation is inference-only; train with mean, max or concat".into(),
                ));
            }
            let stacked = g.stack(features)?;
            let kind = match method {
                Aggregation::Mean => ReduceKind::Mean,
                Aggregation::Max => ReduceKind::Max,
                _ => ReduceKind::Median,
            };
            g.reduce(stacked, kind, 0)
        }
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.last_dim();
    logits
        .values()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl ElfisModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn assignment(&self) -> Option<&ClusterAssignment> {
        self.assignment.as_ref()
    }

    pub fn is_baseline(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn experts(&self) -> &[ExpertHead] {
        &self.experts
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn input_norm(&self) -> Option<&InputNorm> {
        self.input_norm.as_ref()
    }

    pub fn set_input_norm(&mut self, norm: Option<InputNorm>) -> Result<()> {
        if let Some(n) = &norm {
            if n.mean.len() != self.config.input_dim || n.inv_std.len() != self.config.input_dim {
                return Err(Error::Validation(format!(
                    "input statistics have {} entries, model input is {}",
                    n.mean.len(),
                    self.config.input_dim
                )));
            }
        }
        self.input_norm = norm;
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Pushes every parameter onto `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect();
        BoundParams { vars }
    }

    fn apply_linear(&self, g: &mut Graph, p: &BoundParams, l: &Linear, x: Var, relu: bool) -> Result<Var> {
        let h = g.matmul(x, p.vars[l.weight])?;
        let h = g.add(h, p.vars[l.bias])?;
        Ok(if relu { g.relu(h) } else { h })
    }

    fn apply_body(&self, g: &mut Graph, p: &BoundParams, body: &HeadBody, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &body.blocks {
            h = self.apply_linear(g, p, block, h, true)?;
        }
        self.apply_linear(g, p, &body.trailing, h, false)
    }

    /// Forward pass over a `[batch, input_dim]` input.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var, training: bool) -> Result<ModelOutputs> {
        let xv = g.value(x);
        if xv.rank() != 2 || xv.shape()[1] != self.config.input_dim {
            return Err(Error::Dimension {
                op: "forward",
                lhs: xv.shape().to_vec(),
                rhs: vec![self.config.input_dim],
            });
        }
        let mut h = x;
        if let Some(norm) = &self.input_norm {
            let mean = g.constant(Tensor::vector(norm.mean.clone()));
            let inv_std = g.constant(Tensor::vector(norm.inv_std.clone()));
            h = g.sub(h, mean)?;
            h = g.mul(h, inv_std)?;
        }
        for layer in &self.backbone {
            h = self.apply_linear(g, p, layer, h, true)?;
        }
        let f0 = self.apply_body(g, p, &self.head0.body, h)?;
        let logits_h0 = self.apply_linear(g, p, &self.head0.classifier, f0, false)?;
        let mut features = vec![f0];
        let mut logits_experts = Vec::with_capacity(self.experts.len());
        for expert in &self.experts {
            let fk = self.apply_body(g, p, &expert.body, h)?;
            let s = normed_linear(g, fk, p.vars[expert.normed_weights], self.config.cosine_scale)?;
            features.push(fk);
            logits_experts.push(s);
        }
        let logits_aggr = match &self.agg_classifier {
            Some(cls) => {
                let fbar = aggregate(g, &features, self.config.aggregation, training)?;
                Some(self.apply_linear(g, p, cls, fbar, false)?)
            }
            None => None,
        };
        Ok(ModelOutputs {
            features,
            logits_h0,
            logits_experts,
            logits_aggr,
        })
    }

    /// Inference without gradient tracking.
    pub fn infer(&self, x: &Tensor) -> Result<Inference> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, false)?;
        Ok(Inference {
            features: out.features.iter().map(|&v| g.value(v).clone()).collect(),
            logits_h0: g.value(out.logits_h0).clone(),
            logits_experts: out.logits_experts.iter().map(|&v| g.value(v).clone()).collect(),
            logits_aggr: out.logits_aggr.map(|v| g.value(v).clone()),
        })
    }

    /// Class predictions: aggregation head, or `H0` in baseline mode.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.infer(x)?.final_logits()))
    }

    /// Overwrites parameter values, checking names and shapes.
    pub fn load_params(&mut self, params: Vec<Param>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter arrays, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (slot, p) in self.params.iter_mut().zip(params) {
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::Validation(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    p.name,
                    p.value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = p.value;
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "elfis-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    assignment: Option<ClusterAssignment>,
    #[serde(default)]
    input_norm: Option<InputNorm>,
    params: Vec<Param>,
}

/// JSON checkpoint; floats use shortest round-trip formatting.
pub fn checkpoint_to_string(model: &ElfisModel) -> Result<String> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        assignment: model.assignment.clone(),
        input_norm: model.input_norm.clone(),
        params: model.params.clone(),
    };
    Ok(serde_json::to_string_pretty(&ckpt)?)
}

pub fn checkpoint_from_str(text: &str) -> Result<ElfisModel> {
    let ckpt: Checkpoint = serde_json::from_str(text)?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    let mut model = init_model(&ckpt.config, ckpt.assignment.as_ref())?;
    model.load_params(ckpt.params)?;
    model.set_input_norm(ckpt.input_norm)?;
    Ok(model)
}

pub fn save_checkpoint(model: &ElfisModel, path: &std::path::Path) -> Result<()> {
    crate::io::write_atomic(path, checkpoint_to_string(model)?.as_bytes())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ElfisModel> {
    checkpoint_from_str(&crate::io::read_text(path)?)
}
