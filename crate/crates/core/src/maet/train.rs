use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::stats::pearson;

use super::dataset::ToyDataset;
use super::loss::{LossBreakdown, Objective};
use super::model::{batch_loss, Params, Targets, ToyMaetModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    /// Multiplier on `lr` for the degradation head.
    pub deg_lr_scale: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub use_ort: bool,
    /// Linear ramp of the learning rate over the first steps.
    pub warmup_steps: usize,
    /// Cosine decay of the learning rate to zero at the last step.
    pub cosine_decay: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 2000,
            lr: 1e-2,
            deg_lr_scale: 1.0,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            use_ort: true,
            warmup_steps: 200,
            cosine_decay: true,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("steps and batch_size must be at least 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("deg_lr_scale", self.deg_lr_scale),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Learning rate at `step` (before the deg-head multiplier).
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.lr;
        if step < self.warmup_steps {
            lr *= (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.cosine_decay {
            let t = step as f64 / self.steps as f64;
            lr *= 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        }
        lr
    }
}

/// Mini-batch losses of one optimizer step, before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub total: f64,
    pub ort: f64,
    pub obj: f64,
    pub deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub options: TrainOptions,
    pub curve: Vec<CurvePoint>,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        for p in &self.curve {
            w.serialize(p).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Batch {
    clean: Array2<f64>,
    dark: Array2<f64>,
    deg: Array2<f64>,
    boxes: Array2<f64>,
    labels: Vec<usize>,
}

fn gather(data: &ToyDataset, idx: &[usize]) -> Batch {
    Batch {
        clean: data.clean.select(Axis(0), idx),
        dark: data.dark.select(Axis(0), idx),
        deg: data.targets.select(Axis(0), idx),
        boxes: data.boxes.select(Axis(0), idx),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
    }
}

pub(crate) fn loss_on(
    model: &ToyMaetModel,
    data: &ToyDataset,
    idx: &[usize],
    objective: Objective,
    grad: Option<&mut Params>,
) -> Result<LossBreakdown> {
    let Batch {
        clean,
        dark,
        deg,
        boxes,
        labels,
    } = gather(data, idx);
    let t = Targets {
        deg: deg.view(),
        boxes: boxes.view(),
        labels: &labels,
    };
    batch_loss(&model.params, &model.weights, &clean, &dark, &t, objective, grad)
}

/// SGD with momentum and weight decay on uniformly drawn mini-batches.
/// Single-threaded and fully determined by the options and the data.
pub fn train(model: &mut ToyMaetModel, data: &ToyDataset, opts: &TrainOptions) -> Result<TrainReport> {
    opts.validate()?;
    model.weights.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("cannot train on an empty dataset".into()));
    }
    let objective = Objective::with_ort(opts.use_ort);
    let rng = &mut SeededRng::with_purpose(opts.seed, 0, "maet-batches");
    let mut velocity = Params::zeros();
    let mut curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let idx: Vec<usize> = (0..opts.batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let mut grad = Params::zeros();
        let loss = loss_on(model, data, &idx, objective, Some(&mut grad))?;
        if !loss.total.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "loss total={} ort={} obj={} deg={}; lower the learning rate",
                    loss.total, loss.ort, loss.obj, loss.deg
                ),
            });
        }
        curve.push(CurvePoint {
            step,
            total: loss.total,
            ort: loss.ort,
            obj: loss.obj,
            deg: loss.deg,
        });
        let base_lr = opts.lr_at(step);
        let groups = model.params.groups_mut().into_iter();
        for (((name, p), (_, g)), (_, v)) in groups.zip(grad.groups()).zip(velocity.groups_mut()) {
            let lr = if matches!(name, "wd" | "bd") {
                base_lr * opts.deg_lr_scale
            } else {
                base_lr
            };
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = opts.momentum * *v + g + opts.weight_decay * *p;
                *p -= lr * *v;
            }
        }
    }
    if !model.params.is_finite() {
        return Err(Error::Diverged {
            step: opts.steps,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(TrainReport { options: *opts, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub loss: LossBreakdown,
    /// Pearson correlation of predicted and true normalized `k`.
    pub pearson_k: f64,
    pub mean_abs_cos: f64,
    pub class_accuracy: f64,
}

/// Loss terms averaged over the whole set plus held-out style metrics.
pub fn evaluate(model: &ToyMaetModel, data: &ToyDataset, objective: Objective) -> Result<EvalReport> {
    const CHUNK: usize = 500;
    let n = data.len();
    let mut sums = LossBreakdown::default();
    let mut k_pred = Vec::with_capacity(n);
    let mut correct = 0usize;
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let w = idx.len() as f64;
        let l = loss_on(model, data, &idx, objective, None)?;
        sums.obj += l.obj * w;
        sums.deg += l.deg * w;
        sums.ort = l.ort;
        sums.degenerate_pairs = l.degenerate_pairs;
        let Batch { clean, dark, .. } = gather(data, &idx);
        let fc = model.params.encode_batch(&clean).f;
        let fd = model.params.encode_batch(&dark).f;
        k_pred.extend(model.params.deg_batch(&fc, &fd).column(0).iter());
        let z = model.params.obj_batch(&fd);
        for (r, &i) in idx.iter().enumerate() {
            let pred = usize::from(z[[r, 5]] > z[[r, 4]]);
            correct += usize::from(pred == data.labels[i]);
        }
    }
    sums.obj /= n as f64;
    sums.deg /= n as f64;
    sums.total = super::loss::combine(sums.ort, sums.obj, sums.deg, &model.weights, objective);
    let k_true: Vec<f64> = data.targets.column(0).to_vec();
    Ok(EvalReport {
        samples: n,
        loss: sums,
        pearson_k: pearson(&k_pred, &k_true),
        mean_abs_cos: model.mean_abs_cos()?,
        class_accuracy: correct as f64 / n as f64,
    })
}
