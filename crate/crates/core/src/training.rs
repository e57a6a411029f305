//! One-cycle schedule, momentum descent, early stopping and the fit loop.

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::losses::{kl_divergence, total_loss, DistillationMode, LossWeights, Objective, SubsetLabelMap};
use crate::model::{ElfisModel, InputNorm};
use crate::subsetting::ConfusionMatrix;
use crate::tensor::{Graph, Tensor};

/// Ratio between the peak rate and the start/end of the cycle.
pub const LR_DIV: f64 = 25.0;
/// Fraction of the cycle spent rising.
pub const LR_PEAK_AT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub cycle_epochs: usize,
    pub annihilation_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub momentum: f64,
    /// Global gradient-norm ceiling per step; 0 disables clipping.
    pub grad_clip: f64,
    pub distillation: DistillationMode,
    pub weights: LossWeights,
    /// Let gradients flow into both sides of each KL term.
    pub live_targets: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 0.05,
            cycle_epochs: 40,
            annihilation_epochs: 160,
            patience: 15,
            batch_size: 32,
            max_epochs: 200,
            momentum: 0.9,
            grad_clip: 5.0,
            distillation: DistillationMode::TwoWay,
            weights: LossWeights::default(),
            live_targets: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return fail(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if self.cycle_epochs == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return fail("cycle_epochs, batch_size, max_epochs and patience must be positive".into());
        }
        if self.patience > self.max_epochs {
            return fail(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return fail(format!("grad_clip must be nonnegative, got {}", self.grad_clip));
        }
        self.weights.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.weights,
            distillation: self.distillation,
            live_targets: self.live_targets,
        }
    }
}

fn cosine_ramp(from: f64, to: f64, t: f64) -> f64 {
    to + (from - to) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

/// Learning rate for a zero-based epoch: a cosine rise from `max_lr/25` to
/// `max_lr` over the first 30% of the cycle, a cosine fall back to
/// `max_lr/25` at the end of it, then a linear decay to `max_lr/2500` over the
/// annihilation epochs. Later epochs keep the final rate.
pub fn one_cycle_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let low = cfg.max_lr / LR_DIV;
    let floor = low / 100.0;
    let cycle = cfg.cycle_epochs as f64;
    let e = epoch as f64;
    let peak = LR_PEAK_AT * cycle;
    if e <= peak {
        cosine_ramp(low, cfg.max_lr, if peak > 0.0 { e / peak } else { 1.0 })
    } else if e <= cycle {
        cosine_ramp(cfg.max_lr, low, (e - peak) / (cycle - peak))
    } else if cfg.annihilation_epochs == 0 {
        low
    } else {
        let t = ((e - cycle) / cfg.annihilation_epochs as f64).min(1.0);
        low + (floor - low) * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs fail to beat the best score.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
            epoch: 0,
        }
    }

    /// Records the next epoch's score (epochs count from 1).
    pub fn observe(&mut self, score: f64) -> StopDecision {
        self.epoch += 1;
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = self.epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Heavy-ball descent: `v = momentum·v + g`, then `p -= lr·v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl MomentumSgd {
    pub fn new(model: &ElfisModel, momentum: f64) -> Self {
        MomentumSgd {
            momentum,
            velocity: model.params().iter().map(|p| vec![0.0; p.value.numel()]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut ElfisModel, grads: &[Vec<f64>], lr: f64) {
        for ((p, v), g) in model.params_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((w, vi), gi) in p.value.values_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = self.momentum * *vi + gi;
                *w -= lr * *vi;
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Objective value and per-parameter gradients on one batch.
pub fn loss_and_grads(
    model: &ElfisModel,
    map: Option<&SubsetLabelMap>,
    objective: &Objective,
    x: &Tensor,
    targets: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let params = model.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let out = model.forward(&mut g, &params, xv, true)?;
    let terms = total_loss(&mut g, &out, targets, map, objective)?;
    let loss = g.value(terms.total).item()?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss}")));
    }
    g.backward(terms.total)?;
    let grads = params
        .vars()
        .iter()
        .zip(model.params())
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.value.numel()], <[f64]>::to_vec))
        .collect();
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    /// Mean validation `KL(P_H0 || P_aggr)`; absent for the baseline.
    pub val_kl: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_acc,lr";

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_acc, r.lr));
        }
        out
    }
}

pub fn accuracy(predictions: &[usize], truth: &[usize]) -> f64 {
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Validation accuracy and, with experts, mean `KL(P_H0 || P_aggr)`.
pub fn validation_metrics(model: &ElfisModel, val: &Dataset) -> Result<(f64, Option<f64>)> {
    let x = val.batch_features(&(0..val.len()).collect::<Vec<_>>())?;
    let inf = model.infer(&x)?;
    let acc = accuracy(&crate::model::argmax_rows(inf.final_logits()), val.labels());
    let kl = match &inf.logits_aggr {
        Some(aggr) => {
            let mut g = Graph::new();
            let p = g.constant(inf.logits_h0.clone());
            let q = g.constant(aggr.clone());
            let kl = kl_divergence(&mut g, p, q, true)?;
            Some(g.value(kl).item()?)
        }
        None => None,
    };
    Ok((acc, kl))
}

fn check_classes(model: &ElfisModel, ds: &Dataset, which: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::usage(format!("{which} split is empty")));
    }
    let cfg = model.config();
    if ds.n_classes() != cfg.n_classes || ds.input_dim() != cfg.input_dim {
        return Err(Error::Validation(format!(
            "{which} split has {} classes of dimension {}, model expects {} of dimension {}",
            ds.n_classes(),
            ds.input_dim(),
            cfg.n_classes,
            cfg.input_dim
        )));
    }
    Ok(())
}

/// Trains until early stopping or `max_epochs`; returns the parameters of the
/// epoch with the best validation accuracy. Input standardization is fitted
/// on `train` unless the model already carries it.
pub fn fit(
    mut model: ElfisModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ElfisModel, TrainingHistory)> {
    cfg.validate()?;
    check_classes(&model, train, "training")?;
    check_classes(&model, val, "validation")?;
    if model.input_norm().is_none() {
        let all = train.batch_features(&(0..train.len()).collect::<Vec<_>>())?;
        model.set_input_norm(Some(InputNorm::fit(&all)?))?;
    }
    let map = model.assignment().map(SubsetLabelMap::new);
    let objective = cfg.objective();
    let mut opt = MomentumSgd::new(&model, cfg.momentum);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainingHistory::default();
    let mut best = model.clone();

    for epoch in 0..cfg.max_epochs {
        let lr = one_cycle_lr(epoch, cfg);
        let mut loss_sum = 0.0;
        let order = batches(train.len(), cfg.batch_size, cfg.seed, epoch);
        for rows in &order {
            let x = train.batch_features(rows)?;
            let (loss, mut grads) = loss_and_grads(&model, map.as_ref(), &objective, &x, &train.batch_labels(rows))?;
            clip_grad_norm(&mut grads, cfg.grad_clip);
            opt.step(&mut model, &grads, lr);
            loss_sum += loss;
        }
        let (val_acc, val_kl) = validation_metrics(&model, val)?;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            val_acc,
            lr,
            val_kl,
        });
        match stopper.observe(val_acc) {
            StopDecision::Improved => best.clone_from(&model),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

/// Counts of (true, predicted) pairs; predictions come from the aggregation
/// head, or from `H0` for the baseline.
pub fn export_confusion(model: &ElfisModel, split: &Dataset) -> Result<ConfusionMatrix> {
    check_classes(model, split, "confusion")?;
    let x = split.batch_features(&(0..split.len()).collect::<Vec<_>>())?;
    let mut cm = ConfusionMatrix::zeros(split.n_classes());
    for (&t, p) in split.labels().iter().zip(model.predict(&x)?) {
        cm.record(t, p);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> TrainConfig {
        TrainConfig {
            max_lr: 0.4,
            cycle_epochs: 10,
            annihilation_epochs: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_fixed_points() {
        let c = cfg();
        assert_abs_diff_eq!(one_cycle_lr(0, &c), 0.4 / 25.0, epsilon = 1e-15);
        assert_abs_diff_eq!(one_cycle_lr(3, &c), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(one_cycle_lr(10, &c), 0.4 / 25.0, epsilon = 1e-15);
        assert_abs_diff_eq!(one_cycle_lr(15, &c), 0.4 / 2500.0, epsilon = 1e-12);
        assert_abs_diff_eq!(one_cycle_lr(40, &c), 0.4 / 2500.0, epsilon = 1e-12);

        let long = TrainConfig {
            max_lr: 1.0,
            ..TrainConfig::default()
        };
        assert_abs_diff_eq!(one_cycle_lr(12, &long), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(one_cycle_lr(200, &long), 1.0 / 2500.0, epsilon = 1e-12);
    }

    #[test]
    fn schedule_is_monotone_within_phases() {
        let c = cfg();
        let lrs: Vec<f64> = (0..16).map(|e| one_cycle_lr(e, &c)).collect();
        assert!(lrs[..4].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[3..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn early_stopping_plateau() {
        let mut s = EarlyStopping::new(3);
        let seq = [0.5, 0.6, 0.6, 0.55, 0.6];
        let decisions: Vec<StopDecision> = seq.iter().map(|&v| s.observe(v)).collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best(), Some(0.6));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            patience: 300,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            max_lr: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert_abs_diff_eq!(g[0][0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1][0], 0.8, epsilon = 1e-15);
        let mut g = vec![vec![3.0], vec![4.0]];
        clip_grad_norm(&mut g, 0.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0]]);
    }

    #[test]
    fn history_csv_header() {
        let h = TrainingHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_acc: 0.25,
                lr: 0.01,
                val_kl: None,
            }],
            best_epoch: 1,
            stopped_early: false,
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_acc,lr\n1,0.5,0.25,0.01\n");
    }
}
