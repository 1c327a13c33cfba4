//! Network parameters, forward and backward passes, checkpoints.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! 8 bytes   magic "LLMAET01"
//! 6 x u32   input dim, c1, c2, features, deg outputs, obj outputs
//! 7 x f64   omega1, omega2, deg weights[5]
//! f64 ...   w1, b1, w2, b2, w3, b3, wd, bd, wo, bo, each row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::loss::{combine, log_softmax, loss_ort, loss_ort_with_grad, LossBreakdown, LossWeights, Objective};
use super::{
    BOX_OUTPUTS, C1, C2, CLASSES, DEG_OUTPUTS, FEATURES, GRID1, GRID2, INPUT_DIM, INPUT_OFFSET, OBJ_OUTPUTS, PATCH,
    STRIDE1, STRIDE2,
};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LLMAET01";
const DIMS: [usize; 6] = [INPUT_DIM, C1, C2, FEATURES, DEG_OUTPUTS, OBJ_OUTPUTS];
const HEADER: usize = 8 + 4 * DIMS.len();

/// Every learnable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// First stage: one 4x4x3 input cell to `C1` channels.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// Second stage: one 2x2 block of stage-one cells to `C2` channels.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Pooled stage-two statistics to the feature vector.
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    /// Columns `..FEATURES` see the clean feature, the rest the dark one.
    pub wd: Array2<f64>,
    pub bd: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
}

fn slice(a: Option<&[f64]>) -> &[f64] {
    a.expect("standard layout")
}

fn slice_mut(a: Option<&mut [f64]>) -> &mut [f64] {
    a.expect("standard layout")
}

/// Head weights start at this fraction of the Glorot range so the first
/// steps, dominated by the weighted deg error, stay stable.
const HEAD_INIT_SCALE: f64 = 0.1;

pub const GROUP_NAMES: [&str; 10] = ["w1", "b1", "w2", "b2", "w3", "b3", "wd", "bd", "wo", "bo"];

const CELLS1: usize = GRID1 * GRID1;
const CELLS2: usize = GRID2 * GRID2;
const PATCH1: usize = 3 * STRIDE1 * STRIDE1;
const PATCH2: usize = STRIDE2 * STRIDE2 * C1;
/// Per channel: mean, x moment and y moment over the stage-two map.
const POOLED: usize = 3 * C2;

impl Params {
    pub fn zeros() -> Params {
        Params {
            w1: Array2::zeros((C1, PATCH1)),
            b1: Array1::zeros(C1),
            w2: Array2::zeros((C2, PATCH2)),
            b2: Array1::zeros(C2),
            w3: Array2::zeros((FEATURES, POOLED)),
            b3: Array1::zeros(FEATURES),
            wd: Array2::zeros((DEG_OUTPUTS, 2 * FEATURES)),
            bd: Array1::zeros(DEG_OUTPUTS),
            wo: Array2::zeros((OBJ_OUTPUTS, FEATURES)),
            bo: Array1::zeros(OBJ_OUTPUTS),
        }
    }

    /// Glorot-uniform encoder, small head weights, deg bias at the middle
    /// of the normalized target range.
    pub fn init(seed: u64) -> Params {
        let rng = &mut SeededRng::with_purpose(seed, 0, "maet-init");
        let mut p = Params::zeros();
        let heads = HEAD_INIT_SCALE;
        for (w, scale) in [(&mut p.w1, 1.0), (&mut p.w2, 1.0), (&mut p.w3, 1.0), (&mut p.wd, heads), (&mut p.wo, heads)] {
            let (rows, cols) = w.dim();
            let a = scale * (6.0 / (rows + cols) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-a..a));
        }
        p.bd.fill(0.5);
        p
    }

    /// Parameter groups in checkpoint order.
    pub fn groups(&self) -> [(&'static str, &[f64]); 10] {
        let s = slice;
        [
            (GROUP_NAMES[0], s(self.w1.as_slice())),
            (GROUP_NAMES[1], s(self.b1.as_slice())),
            (GROUP_NAMES[2], s(self.w2.as_slice())),
            (GROUP_NAMES[3], s(self.b2.as_slice())),
            (GROUP_NAMES[4], s(self.w3.as_slice())),
            (GROUP_NAMES[5], s(self.b3.as_slice())),
            (GROUP_NAMES[6], s(self.wd.as_slice())),
            (GROUP_NAMES[7], s(self.bd.as_slice())),
            (GROUP_NAMES[8], s(self.wo.as_slice())),
            (GROUP_NAMES[9], s(self.bo.as_slice())),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut [f64]); 10] {
        let s = slice_mut;
        [
            (GROUP_NAMES[0], s(self.w1.as_slice_mut())),
            (GROUP_NAMES[1], s(self.b1.as_slice_mut())),
            (GROUP_NAMES[2], s(self.w2.as_slice_mut())),
            (GROUP_NAMES[3], s(self.b2.as_slice_mut())),
            (GROUP_NAMES[4], s(self.w3.as_slice_mut())),
            (GROUP_NAMES[5], s(self.b3.as_slice_mut())),
            (GROUP_NAMES[6], s(self.wd.as_slice_mut())),
            (GROUP_NAMES[7], s(self.bd.as_slice_mut())),
            (GROUP_NAMES[8], s(self.wo.as_slice_mut())),
            (GROUP_NAMES[9], s(self.bo.as_slice_mut())),
        ]
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }

    /// Deg-head tangent rows: the weights applied to the dark feature.
    pub fn deg_tangents(&self) -> ArrayView2<'_, f64> {
        self.wd.slice(s![.., FEATURES..])
    }

    pub fn obj_tangents(&self) -> ArrayView2<'_, f64> {
        self.wo.view()
    }

    pub(crate) fn encode_batch(&self, x: &Array2<f64>) -> Encoded {
        let n = x.nrows();
        let x1 = cells1(x);
        let mut h1 = x1.dot(&self.w1.t());
        h1 += &self.b1;
        h1.mapv_inplace(f64::tanh);
        let x2 = cells2(&h1, n);
        let mut h2 = x2.dot(&self.w2.t());
        h2 += &self.b2;
        h2.mapv_inplace(f64::tanh);
        let pooled = pool(&h2, n);
        let mut f = pooled.dot(&self.w3.t());
        f += &self.b3;
        Encoded { x1, h1, x2, h2, pooled, f }
    }

    pub(crate) fn deg_batch(&self, fc: &Array2<f64>, fd: &Array2<f64>) -> Array2<f64> {
        let mut out = fc.dot(&self.wd.slice(s![.., ..FEATURES]).t()) + fd.dot(&self.wd.slice(s![.., FEATURES..]).t());
        out += &self.bd;
        out
    }

    pub(crate) fn obj_batch(&self, fd: &Array2<f64>) -> Array2<f64> {
        let mut z = fd.dot(&self.wo.t());
        z += &self.bo;
        z
    }
}

/// Splits planar patches into non-overlapping 4x4 cells, one row per cell
/// ordered `(sample, cell y, cell x)`, columns `(channel, dy, dx)`.
fn cells1(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n * CELLS1, PATCH1));
    for b in 0..n {
        let row = x.row(b);
        for cy in 0..GRID1 {
            for cx in 0..GRID1 {
                let mut cell = out.row_mut(b * CELLS1 + cy * GRID1 + cx);
                let mut k = 0;
                for c in 0..3 {
                    for dy in 0..STRIDE1 {
                        let base = c * PATCH * PATCH + (cy * STRIDE1 + dy) * PATCH + cx * STRIDE1;
                        for dx in 0..STRIDE1 {
                            cell[k] = row[base + dx] - INPUT_OFFSET;
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Centre of stage-two cell `i` along one axis, in `[-1, 1]`.
fn cell_coord(i: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / GRID2 as f64 - 1.0
}

fn pool_weights(q: usize) -> [f64; 3] {
    let inv = 1.0 / CELLS2 as f64;
    [inv, cell_coord(q % GRID2) * inv, cell_coord(q / GRID2) * inv]
}

fn pool(h2: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, POOLED));
    for b in 0..n {
        for q in 0..CELLS2 {
            let row = h2.row(b * CELLS2 + q);
            for (k, w) in pool_weights(q).into_iter().enumerate() {
                out.slice_mut(s![b, k * C2..(k + 1) * C2]).scaled_add(w, &row);
            }
        }
    }
    out
}

fn unpool(d_pooled: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n * CELLS2, C2));
    for b in 0..n {
        for q in 0..CELLS2 {
            let mut row = out.row_mut(b * CELLS2 + q);
            for (k, w) in pool_weights(q).into_iter().enumerate() {
                row.scaled_add(w, &d_pooled.slice(s![b, k * C2..(k + 1) * C2]));
            }
        }
    }
    out
}

/// Row of stage-one cell `(y1, x1)` for stage-two cell `(cy, cx)`, offset `(dy, dx)`.
fn stage1_row(b: usize, cy: usize, cx: usize, dy: usize, dx: usize) -> usize {
    b * CELLS1 + (cy * STRIDE2 + dy) * GRID1 + cx * STRIDE2 + dx
}

/// Gathers 2x2 blocks of stage-one activations, columns `(dy, dx, channel)`.
fn cells2(h1: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n * CELLS2, PATCH2));
    for b in 0..n {
        for cy in 0..GRID2 {
            for cx in 0..GRID2 {
                let mut cell = out.row_mut(b * CELLS2 + cy * GRID2 + cx);
                for dy in 0..STRIDE2 {
                    for dx in 0..STRIDE2 {
                        let off = (dy * STRIDE2 + dx) * C1;
                        cell.slice_mut(s![off..off + C1])
                            .assign(&h1.row(stage1_row(b, cy, cx, dy, dx)));
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`cells2`]: scatters block gradients back to stage-one rows.
fn uncells2(d_x2: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n * CELLS1, C1));
    for b in 0..n {
        for cy in 0..GRID2 {
            for cx in 0..GRID2 {
                let cell = d_x2.row(b * CELLS2 + cy * GRID2 + cx);
                for dy in 0..STRIDE2 {
                    for dx in 0..STRIDE2 {
                        let off = (dy * STRIDE2 + dx) * C1;
                        out.row_mut(stage1_row(b, cy, cx, dy, dx))
                            .assign(&cell.slice(s![off..off + C1]));
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct Encoded {
    x1: Array2<f64>,
    h1: Array2<f64>,
    x2: Array2<f64>,
    h2: Array2<f64>,
    pooled: Array2<f64>,
    pub f: Array2<f64>,
}

/// Supervision for a batch of samples, one row each.
pub(crate) struct Targets<'a> {
    pub deg: ArrayView2<'a, f64>,
    pub boxes: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Head losses from precomputed features. Optionally returns the gradient
/// of the total with respect to `(fc, fd)` and accumulates head gradients.
/// Loss gradients with respect to the clean and dark feature batches.
type FeatureGrads = (Array2<f64>, Array2<f64>);

pub(crate) fn head_loss(
    p: &Params,
    weights: &LossWeights,
    fc: &Array2<f64>,
    fd: &Array2<f64>,
    t: &Targets,
    objective: Objective,
    grad: Option<&mut Params>,
) -> Result<(LossBreakdown, Option<FeatureGrads>)> {
    let n = fc.nrows();
    let nf = n as f64;
    let deg = p.deg_batch(fc, fd);
    let z = p.obj_batch(fd);

    let diff = &deg - &t.deg;
    let mut l_deg = 0.0;
    let mut d_deg = Array2::zeros(diff.raw_dim());
    for ((r, i), &e) in diff.indexed_iter() {
        l_deg += weights.deg[i] * e * e;
        if objective.deg {
            d_deg[[r, i]] = weights.omega2 * 2.0 * weights.deg[i] * e / nf;
        }
    }
    l_deg /= nf;

    let mut l_obj = 0.0;
    let mut d_z = Array2::zeros(z.raw_dim());
    for r in 0..n {
        let label = t.labels[r];
        if label >= CLASSES {
            return Err(Error::Parameter(format!("class label {label} out of range")));
        }
        for c in 0..BOX_OUTPUTS {
            let b = sigmoid(z[[r, c]]);
            let e = b - t.boxes[[r, c]];
            l_obj += e * e;
            if objective.obj {
                d_z[[r, c]] = weights.omega1 * 2.0 * e * b * (1.0 - b) / nf;
            }
        }
        let scores: Vec<f64> = (0..CLASSES).map(|c| z[[r, BOX_OUTPUTS + c]]).collect();
        let ls = log_softmax(&scores);
        l_obj -= ls[label];
        if objective.obj {
            for c in 0..CLASSES {
                let onehot = if c == label { 1.0 } else { 0.0 };
                d_z[[r, BOX_OUTPUTS + c]] = weights.omega1 * (ls[c].exp() - onehot) / nf;
            }
        }
    }
    l_obj /= nf;

    let (ort, ort_grads) = if objective.ort && grad.is_some() {
        let (l, gd, go) = loss_ort_with_grad(p.deg_tangents(), p.obj_tangents())?;
        (l, Some((gd, go)))
    } else {
        (loss_ort(p.deg_tangents(), p.obj_tangents())?, None)
    };

    let breakdown = LossBreakdown {
        total: combine(ort.value, l_obj, l_deg, weights, objective),
        ort: ort.value,
        obj: l_obj,
        deg: l_deg,
        degenerate_pairs: ort.degenerate_pairs,
    };

    let Some(g) = grad else {
        return Ok((breakdown, None));
    };
    g.wd.slice_mut(s![.., ..FEATURES]).scaled_add(1.0, &d_deg.t().dot(fc));
    g.wd.slice_mut(s![.., FEATURES..]).scaled_add(1.0, &d_deg.t().dot(fd));
    g.bd += &d_deg.sum_axis(Axis(0));
    g.wo.scaled_add(1.0, &d_z.t().dot(fd));
    g.bo += &d_z.sum_axis(Axis(0));
    if let Some((gd, go)) = ort_grads {
        g.wd.slice_mut(s![.., FEATURES..]).scaled_add(1.0, &gd);
        g.wo.scaled_add(1.0, &go);
    }
    let d_fc = d_deg.dot(&p.wd.slice(s![.., ..FEATURES]));
    let d_fd = d_deg.dot(&p.wd.slice(s![.., FEATURES..])) + d_z.dot(&p.wo);
    Ok((breakdown, Some((d_fc, d_fd))))
}

fn encoder_backward(p: &Params, enc: &Encoded, d_f: &Array2<f64>, g: &mut Params) {
    let n = d_f.nrows();
    g.w3.scaled_add(1.0, &d_f.t().dot(&enc.pooled));
    g.b3 += &d_f.sum_axis(Axis(0));
    let mut d_a2 = unpool(&d_f.dot(&p.w3), n);
    d_a2.zip_mut_with(&enc.h2, |d, &h| *d *= 1.0 - h * h);
    g.w2.scaled_add(1.0, &d_a2.t().dot(&enc.x2));
    g.b2 += &d_a2.sum_axis(Axis(0));
    let mut d_a1 = uncells2(&d_a2.dot(&p.w2), n);
    d_a1.zip_mut_with(&enc.h1, |d, &h| *d *= 1.0 - h * h);
    g.w1.scaled_add(1.0, &d_a1.t().dot(&enc.x1));
    g.b1 += &d_a1.sum_axis(Axis(0));
}

/// Mean loss over a batch and, when `grad` is given, its gradient with
/// respect to every parameter (accumulated into `grad`).
pub(crate) fn batch_loss(
    p: &Params,
    weights: &LossWeights,
    clean: &Array2<f64>,
    dark: &Array2<f64>,
    t: &Targets,
    objective: Objective,
    grad: Option<&mut Params>,
) -> Result<LossBreakdown> {
    if clean.ncols() != INPUT_DIM || dark.ncols() != INPUT_DIM || clean.nrows() != dark.nrows() {
        return Err(Error::Dimension(format!(
            "batch shapes {:?} / {:?}, expected rows of {INPUT_DIM}",
            clean.dim(),
            dark.dim()
        )));
    }
    let ec = p.encode_batch(clean);
    let ed = p.encode_batch(dark);
    match grad {
        None => Ok(head_loss(p, weights, &ec.f, &ed.f, t, objective, None)?.0),
        Some(g) => {
            let (loss, d) = head_loss(p, weights, &ec.f, &ed.f, t, objective, Some(g))?;
            let (d_fc, d_fd) = d.expect("gradient requested");
            encoder_backward(p, &ec, &d_fc, g);
            encoder_backward(p, &ed, &d_fd, g);
            Ok(loss)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjPrediction {
    /// `(cx, cy, w, h)` in `(0, 1)`.
    pub bbox: [f64; BOX_OUTPUTS],
    pub scores: [f64; CLASSES],
}

/// Siamese encoder with affine degradation and object heads.
///
/// Both paths call the same [`Params`], so the clean and dark embeddings
/// can never drift apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMaetModel {
    pub params: Params,
    pub weights: LossWeights,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

impl ToyMaetModel {
    pub fn new(seed: u64) -> ToyMaetModel {
        ToyMaetModel {
            params: Params::init(seed),
            weights: LossWeights::default(),
        }
    }

    /// Feature vector of one planar 32x32x3 patch.
    pub fn encode(&self, patch: &[f64]) -> Result<Vec<f64>> {
        check_len("patch", patch.len(), INPUT_DIM)?;
        let x = Array2::from_shape_vec((1, INPUT_DIM), patch.to_vec()).expect("length checked");
        Ok(self.params.encode_batch(&x).f.into_raw_vec_and_offset().0)
    }

    pub fn decode_deg(&self, f_clean: &[f64], f_dark: &[f64]) -> Result<[f64; DEG_OUTPUTS]> {
        check_len("clean feature", f_clean.len(), FEATURES)?;
        check_len("dark feature", f_dark.len(), FEATURES)?;
        let row = |v: &[f64]| Array2::from_shape_vec((1, FEATURES), v.to_vec()).expect("length checked");
        let out = self.params.deg_batch(&row(f_clean), &row(f_dark));
        Ok(std::array::from_fn(|i| out[[0, i]]))
    }

    pub fn decode_obj(&self, f_dark: &[f64]) -> Result<ObjPrediction> {
        check_len("dark feature", f_dark.len(), FEATURES)?;
        let fd = Array2::from_shape_vec((1, FEATURES), f_dark.to_vec()).expect("length checked");
        let z = self.params.obj_batch(&fd);
        Ok(ObjPrediction {
            bbox: std::array::from_fn(|i| sigmoid(z[[0, i]])),
            scores: std::array::from_fn(|i| z[[0, BOX_OUTPUTS + i]]),
        })
    }

    /// Tangent rows of both heads with respect to the dark feature.
    pub fn tangents(&self) -> (Array2<f64>, Array2<f64>) {
        (self.params.deg_tangents().to_owned(), self.params.obj_tangents().to_owned())
    }

    /// Mean `|cos|` over all deg/obj tangent pairs.
    pub fn mean_abs_cos(&self) -> Result<f64> {
        let l = loss_ort(self.params.deg_tangents(), self.params.obj_tangents())?;
        let pairs = DEG_OUTPUTS * OBJ_OUTPUTS - l.degenerate_pairs;
        Ok(if pairs == 0 { 0.0 } else { l.value / pairs as f64 })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 8 * (7 + self.params.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for d in DIMS {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let w = &self.weights;
        for v in [w.omega1, w.omega2].into_iter().chain(w.deg) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (_, g) in self.params.groups() {
            for v in g {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ToyMaetModel> {
        let bad = |msg: String| Error::Parameter(format!("checkpoint: {msg}"));
        if bytes.len() < HEADER || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header".into()));
        }
        let dims: Vec<usize> = bytes[8..HEADER]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
                if dims != DIMS {
            return Err(bad(format!("architecture {dims:?} differs from {DIMS:?}")));
        }
        let mut params = Params::zeros();
        let floats = &bytes[HEADER..];
        if floats.len() != 8 * (7 + params.len()) {
            return Err(bad(format!("payload of {} bytes has the wrong size", floats.len())));
        }
        let mut values = floats
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut next = || values.next().expect("size checked");
        let weights = LossWeights {
            omega1: next(),
            omega2: next(),
            deg: std::array::from_fn(|_| next()),
        };
        weights.validate()?;
        for (_, g) in params.groups_mut() {
            for v in g.iter_mut() {
                *v = next();
            }
        }
        Ok(ToyMaetModel { params, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ToyMaetModel> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ToyMaetModel::from_bytes(&bytes)
    }
}
