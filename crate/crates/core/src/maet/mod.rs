//! Desk-scale multitask auto-encoding-transformation trainer.
//!
//! A siamese encoder embeds a clean patch and its low-light degradation.
//! The degradation head regresses the normalized `(k, 1/B, 1/g_r, 1/g_b,
//! 1/gamma)` tuple from both embeddings; the object head predicts a box and
//! a class from the dark embedding alone. An orthogonality penalty keeps the
//! two heads' tangent directions apart.
//!
//! Architecture (fixed):
//!
//! ```text
//! patch 32x32x3 (planar, minus 0.5)
//!   -> 4x4 cells, stride 4, 32 tanh channels   (8x8 map)
//!   -> 2x2 cells, stride 2, 64 tanh channels   (4x4 map)
//!   -> per-channel mean, x and y moments (192) -> 64 linear features
//! deg head: [f_clean | f_dark] (128) -> 5, affine
//! obj head: f_dark (64) -> 4 box logits (sigmoid) + 2 class scores, affine
//! ```
//!
//! Because both heads are affine, the Jacobian of a head output with respect
//! to the dark feature is just a weight row (for the deg head, the half that
//! multiplies `f_dark`). Those rows are the tangents fed to [`loss_ort`].

mod dataset;
mod gradcheck;
mod loss;
mod model;
mod train;

pub use dataset::{make_toy_dataset, make_toy_dataset_range, ToyDataset, ToySample, BACKGROUND, FOREGROUND};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GroupCheck};
pub use loss::{
    combine, loss_deg, loss_obj, loss_ort, loss_ort_with_grad, LossBreakdown, LossWeights, Objective, OrtLoss,
};
pub use model::{ObjPrediction, Params, ToyMaetModel, CHECKPOINT_MAGIC};
pub use train::{evaluate, train, CurvePoint, EvalReport, TrainOptions, TrainReport};

pub const PATCH: usize = 32;
pub const INPUT_DIM: usize = 3 * PATCH * PATCH;
pub const STRIDE1: usize = 4;
pub const GRID1: usize = PATCH / STRIDE1;
pub const C1: usize = 32;
pub const STRIDE2: usize = 2;
pub const GRID2: usize = GRID1 / STRIDE2;
pub const C2: usize = 64;
pub const FEATURES: usize = 64;
pub const DEG_OUTPUTS: usize = 5;
pub const BOX_OUTPUTS: usize = 4;
pub const CLASSES: usize = 2;
pub const OBJ_OUTPUTS: usize = BOX_OUTPUTS + CLASSES;
/// First stream of the held-out toy set; training sets use streams from 0.
pub const HOLDOUT_STREAM: u64 = 1_000_000;
/// Subtracted from every input sample before the first layer.
pub const INPUT_OFFSET: f64 = 0.5;
