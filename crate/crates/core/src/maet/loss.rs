use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{model::ObjPrediction, CLASSES, DEG_OUTPUTS};

/// Weights of the total objective `L_ort + omega1 * L_obj + omega2 * L_deg`
/// and of the five terms inside `L_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub omega1: f64,
    pub omega2: f64,
    /// For `(k, 1/B, 1/g_r, 1/g_b, 1/gamma)`.
    pub deg: [f64; DEG_OUTPUTS],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            omega1: 1.0,
            omega2: 10.0,
            deg: [5.0, 1.0, 1.0, 1.0, 1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.omega1, self.omega2].into_iter().chain(self.deg);
        for w in all {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Parameter(format!("loss weight {w} must be positive")));
            }
        }
        Ok(())
    }
}

/// Which terms enter the total loss. Every term is still reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub ort: bool,
    pub obj: bool,
    pub deg: bool,
}

impl Objective {
    pub const FULL: Objective = Objective {
        ort: true,
        obj: true,
        deg: true,
    };
    /// The ablation without the orthogonality penalty.
    pub const NO_ORT: Objective = Objective {
        ort: false,
        obj: true,
        deg: true,
    };
    pub const DEG_ONLY: Objective = Objective {
        ort: false,
        obj: false,
        deg: true,
    };

    pub fn with_ort(ort: bool) -> Objective {
        if ort {
            Self::FULL
        } else {
            Self::NO_ORT
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ort: f64,
    pub obj: f64,
    pub deg: f64,
    /// Tangent pairs skipped because a row had zero norm.
    pub degenerate_pairs: usize,
}

pub fn combine(ort: f64, obj: f64, deg: f64, weights: &LossWeights, objective: Objective) -> f64 {
    let mut total = 0.0;
    if objective.ort {
        total += ort;
    }
    if objective.obj {
        total += weights.omega1 * obj;
    }
    if objective.deg {
        total += weights.omega2 * deg;
    }
    total
}

/// Weighted squared error over the five normalized degradation targets.
pub fn loss_deg(pred: &[f64; DEG_OUTPUTS], target: &[f64; DEG_OUTPUTS], weights: &[f64; DEG_OUTPUTS]) -> f64 {
    (0..DEG_OUTPUTS).map(|i| weights[i] * (pred[i] - target[i]).powi(2)).sum()
}

pub(crate) fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Squared box error plus softmax cross-entropy of the class scores.
pub fn loss_obj(pred: &ObjPrediction, bbox: &[f64; 4], label: usize) -> Result<f64> {
    if label >= CLASSES {
        return Err(Error::Parameter(format!("class label {label} out of range")));
    }
    let box_term: f64 = pred.bbox.iter().zip(bbox).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(box_term - log_softmax(&pred.scores)[label])
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OrtLoss {
    pub value: f64,
    pub degenerate_pairs: usize,
}

impl OrtLoss {
    pub fn warned(&self) -> bool {
        self.degenerate_pairs > 0
    }
}

/// Sum of `|cos|` over every (deg row, obj row) pair. Pairs involving a
/// zero row have no defined angle; they add nothing and are counted.
pub fn loss_ort(deg_rows: ArrayView2<f64>, obj_rows: ArrayView2<f64>) -> Result<OrtLoss> {
    ort_impl(deg_rows, obj_rows, None)
}

/// [`loss_ort`] plus its gradient with respect to both row sets. At an
/// exactly orthogonal pair the subgradient zero is used.
pub fn loss_ort_with_grad(
    deg_rows: ArrayView2<f64>,
    obj_rows: ArrayView2<f64>,
) -> Result<(OrtLoss, Array2<f64>, Array2<f64>)> {
    let mut gd = Array2::zeros(deg_rows.raw_dim());
    let mut go = Array2::zeros(obj_rows.raw_dim());
    let loss = ort_impl(deg_rows, obj_rows, Some((&mut gd, &mut go)))?;
    Ok((loss, gd, go))
}

fn ort_impl(
    deg_rows: ArrayView2<f64>,
    obj_rows: ArrayView2<f64>,
    mut grads: Option<(&mut Array2<f64>, &mut Array2<f64>)>,
) -> Result<OrtLoss> {
    if deg_rows.ncols() != obj_rows.ncols() {
        return Err(Error::Dimension(format!(
            "tangent rows of length {} and {} cannot be compared",
            deg_rows.ncols(),
            obj_rows.ncols()
        )));
    }
    let mut out = OrtLoss::default();
    for (i, u) in deg_rows.rows().into_iter().enumerate() {
        let nu = u.dot(&u).sqrt();
        for (j, v) in obj_rows.rows().into_iter().enumerate() {
            let nv = v.dot(&v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                out.degenerate_pairs += 1;
                continue;
            }
            let c = u.dot(&v) / (nu * nv);
            out.value += c.abs();
            if let Some((gd, go)) = grads.as_mut() {
                let s = if c == 0.0 { 0.0 } else { c.signum() };
                if s != 0.0 {
                    let inv = 1.0 / (nu * nv);
                    let mut gu = gd.row_mut(i);
                    gu.scaled_add(s * inv, &v);
                    gu.scaled_add(-s * c / (nu * nu), &u);
                    let mut gv = go.row_mut(j);
                    gv.scaled_add(s * inv, &u);
                    gv.scaled_add(-s * c / (nv * nv), &v);
                }
            }
        }
    }
    if out.warned() {
        log::warn!("{} tangent pairs include a zero row; cosine undefined", out.degenerate_pairs);
    }
    Ok(out)
}
