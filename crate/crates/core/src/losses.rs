//! Per-head cross-entropy, KL mutual learning and the weighted objective.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelOutputs;
use crate::subsetting::ClusterAssignment;
use crate::tensor::{Graph, ReduceKind, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillationMode {
    None,
    ToH0Only,
    #[default]
    TwoWay,
}

impl FromStr for DistillationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DistillationMode::None),
            "to_h0_only" => Ok(DistillationMode::ToH0Only),
            "two_way" => Ok(DistillationMode::TwoWay),
            other => Err(Error::usage(format!("unknown distillation mode {other:?}"))),
        }
    }
}

impl fmt::Display for DistillationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistillationMode::None => "none",
            DistillationMode::ToH0Only => "to_h0_only",
            DistillationMode::TwoWay => "two_way",
        })
    }
}

/// Mean over the batch of `-log_softmax(logits)[target]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = g.value(logits).shape().to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![targets.len()],
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= shape[1]) {
        return Err(Error::usage(format!("target {t} out of range for {} classes", shape[1])));
    }
    let logp = g.log_softmax(logits)?;
    let picked = g.pick(logp, targets)?;
    let mean = g.reduce_all(picked, ReduceKind::Mean)?;
    Ok(g.scale(mean, -1.0))
}

/// Mean over the batch of `KL(P || Q)` from two logit tensors.
pub fn kl_divergence(g: &mut Graph, p_logits: Var, q_logits: Var, detach_target: bool) -> Result<Var> {
    let (ps, qs) = (g.value(p_logits).shape(), g.value(q_logits).shape());
    if ps != qs || ps.len() != 2 {
        return Err(Error::Dimension {
            op: "kl_divergence",
            lhs: ps.to_vec(),
            rhs: qs.to_vec(),
        });
    }
    let q_logits = if detach_target { g.detach(q_logits) } else { q_logits };
    let p = g.softmax(p_logits)?;
    let logp = g.log_softmax(p_logits)?;
    let logq = g.log_softmax(q_logits)?;
    let diff = g.sub(logp, logq)?;
    let terms = g.mul(p, diff)?;
    let per_row = g.reduce(terms, ReduceKind::Sum, 1)?;
    g.reduce_all(per_row, ReduceKind::Mean)
}

/// `(KL(P_H0 || P_aggr), KL(P_aggr || P_H0))`; each term trains only its own
/// branch unless `live_targets` is set.
pub fn mutual_losses(
    g: &mut Graph,
    h0_logits: Var,
    aggr_logits: Var,
    mode: DistillationMode,
    live_targets: bool,
) -> Result<(Var, Var)> {
    let (hs, as_) = (g.value(h0_logits).shape(), g.value(aggr_logits).shape());
    if hs != as_ {
        return Err(Error::Dimension {
            op: "mutual_losses",
            lhs: hs.to_vec(),
            rhs: as_.to_vec(),
        });
    }
    let zero = |g: &mut Graph| g.constant(Tensor::scalar(0.0));
    let detach = !live_targets;
    Ok(match mode {
        DistillationMode::None => (zero(g), zero(g)),
        DistillationMode::ToH0Only => (kl_divergence(g, h0_logits, aggr_logits, detach)?, zero(g)),
        DistillationMode::TwoWay => (
            kl_divergence(g, h0_logits, aggr_logits, detach)?,
            kl_divergence(g, aggr_logits, h0_logits, detach)?,
        ),
    })
}

/// Global-to-local label maps for every expert; `|C_k|` is the "other" index.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetLabelMap {
    local: Vec<Vec<usize>>,
}

impl SubsetLabelMap {
    pub fn new(assignment: &ClusterAssignment) -> Self {
        let local = assignment
            .all_members()
            .iter()
            .map(|members| {
                let mut map = vec![members.len(); assignment.n()];
                for (i, &c) in members.iter().enumerate() {
                    map[c] = i;
                }
                map
            })
            .collect();
        SubsetLabelMap { local }
    }

    pub fn k(&self) -> usize {
        self.local.len()
    }

    pub fn other_index(&self, k: usize) -> usize {
        self.local[k].iter().copied().max().unwrap_or(0)
    }

    pub fn targets(&self, k: usize, global: &[usize]) -> Vec<usize> {
        global.iter().map(|&c| self.local[k][c]).collect()
    }
}

pub fn subset_target(global_class: usize, k: usize, map: &SubsetLabelMap) -> usize {
    map.local[k][global_class]
}

/// Handles to every term of the objective. `ml_*` are constant zeros when
/// distillation is off; in baseline mode only `ce_h0` is present.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub ce_h0: Var,
    pub ml_h0: Option<Var>,
    pub ce_experts: Vec<Var>,
    pub ce_aggr: Option<Var>,
    pub ml_aggr: Option<Var>,
}

impl LossTerms {
    pub fn n_terms(&self) -> usize {
        1 + self.ce_experts.len()
            + [self.ml_h0, self.ce_aggr, self.ml_aggr].iter().filter(|t| t.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub weights: LossWeights,
    pub distillation: DistillationMode,
    pub live_targets: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            weights: LossWeights::default(),
            distillation: DistillationMode::TwoWay,
            live_targets: false,
        }
    }
}

/// `λ1·(CE_H0 + ML_H0) + λ2·(Σ_k CE_Hk · 1/K) + λ3·(CE_aggr + ML_aggr)`,
/// summed left to right; reduces to `CE_H0` without experts.
pub fn total_loss(
    g: &mut Graph,
    outputs: &ModelOutputs,
    targets: &[usize],
    map: Option<&SubsetLabelMap>,
    objective: &Objective,
) -> Result<LossTerms> {
    let ce_h0 = cross_entropy(g, outputs.logits_h0, targets)?;
    let Some(aggr) = outputs.logits_aggr else {
        return Ok(LossTerms {
            total: ce_h0,
            ce_h0,
            ml_h0: None,
            ce_experts: Vec::new(),
            ce_aggr: None,
            ml_aggr: None,
        });
    };
    let map = map.ok_or_else(|| Error::usage("expert heads need a subset label map"))?;
    let k = outputs.logits_experts.len();
    if k == 0 || map.k() != k {
        return Err(Error::usage(format!(
            "{k} expert heads but a label map for {} subsets",
            map.k()
        )));
    }
    let w = objective.weights;
    let (ml_h0, ml_aggr) = mutual_losses(g, outputs.logits_h0, aggr, objective.distillation, objective.live_targets)?;
    let ce_experts = outputs
        .logits_experts
        .iter()
        .enumerate()
        .map(|(i, &logits)| cross_entropy(g, logits, &map.targets(i, targets)))
        .collect::<Result<Vec<_>>>()?;
    let ce_aggr = cross_entropy(g, aggr, targets)?;

    let first = g.add(ce_h0, ml_h0)?;
    let first = g.scale(first, w.lambda1);
    let mut sum = ce_experts[0];
    for &t in &ce_experts[1..] {
        sum = g.add(sum, t)?;
    }
    let middle = g.scale(sum, 1.0 / k as f64);
    let middle = g.scale(middle, w.lambda2);
    let last = g.add(ce_aggr, ml_aggr)?;
    let last = g.scale(last, w.lambda3);
    let total = g.add(first, middle)?;
    let total = g.add(total, last)?;
    Ok(LossTerms {
        total,
        ce_h0,
        ml_h0: Some(ml_h0),
        ce_experts,
        ce_aggr: Some(ce_aggr),
        ml_aggr: Some(ml_aggr),
    })
}
