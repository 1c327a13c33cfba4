use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;

use crate::baseline::Method;
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::image::{ColorState, PlanarImage};
use crate::rng::SeededRng;
use crate::synth::Synthesizer;

use super::{BOX_OUTPUTS, DEG_OUTPUTS, INPUT_DIM, PATCH};

/// sRGB level of the patch background.
pub const BACKGROUND: f64 = 0.2;
/// sRGB level of the shape.
pub const FOREGROUND: f64 = 0.9;
const MIN_SIZE: f64 = 8.0;
const MAX_SIZE: f64 = 20.0;

/// Clean/dark patch pairs with their supervision, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub clean: Array2<f64>,
    pub dark: Array2<f64>,
    /// Normalized degradation targets taken from the degradation records.
    pub targets: Array2<f64>,
    /// `(cx, cy, w, h)` relative to the patch side.
    pub boxes: Array2<f64>,
    /// 0 for a square, 1 for a disc.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct ToySample<'a> {
    pub clean: ArrayView1<'a, f64>,
    pub dark: ArrayView1<'a, f64>,
    pub targets: [f64; DEG_OUTPUTS],
    pub bbox: [f64; BOX_OUTPUTS],
    pub label: usize,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> ToySample<'_> {
        ToySample {
            clean: self.clean.row(i),
            dark: self.dark.row(i),
            targets: std::array::from_fn(|c| self.targets[[i, c]]),
            bbox: std::array::from_fn(|c| self.boxes[[i, c]]),
            label: self.labels[i],
        }
    }
}

struct Generated {
    clean: Vec<f64>,
    dark: Vec<f64>,
    targets: [f64; DEG_OUTPUTS],
    bbox: [f64; BOX_OUTPUTS],
    label: usize,
}

fn shape_patch(rng: &mut SeededRng) -> (PlanarImage, [f64; BOX_OUTPUTS], usize) {
    let label = rng.random_range(0..2usize);
    let size = rng.random_range(MIN_SIZE..MAX_SIZE);
    let side = PATCH as f64;
    let cx = rng.random_range(size / 2.0..side - size / 2.0);
    let cy = rng.random_range(size / 2.0..side - size / 2.0);
    let r = size / 2.0;
    let img = PlanarImage::from_fn(PATCH, PATCH, ColorState::SrgbEncoded, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let inside = if label == 0 {
            dx.abs() <= r && dy.abs() <= r
        } else {
            dx * dx + dy * dy <= r * r
        };
        [if inside { FOREGROUND } else { BACKGROUND }; 3]
    });
    (img, [cx / side, cy / side, size / side, size / side], label)
}

fn generate(synth: &Synthesizer, seed: u64, stream: u64) -> Result<Generated> {
    let (clean, bbox, label) = shape_patch(&mut SeededRng::with_purpose(seed, stream, "toy-shape"));
    let (dark, record) = synth.degrade(&clean, &format!("toy-{stream}"), Method::Ours, seed, stream)?;
    let targets = record
        .normalized_targets
        .ok_or_else(|| Error::State {
            expected: "a record with normalized targets",
            found: dark.state(),
        })?;
    Ok(Generated {
        clean: clean.into_data(),
        dark: dark.into_data(),
        targets,
        bbox,
        label,
    })
}

/// `n` samples drawn from streams `0..n` of `seed`.
pub fn make_toy_dataset(n: usize, seed: u64, config: &AppConfig) -> Result<ToyDataset> {
    make_toy_dataset_range(0, n, seed, config)
}

/// Samples from streams `start..start + n`; disjoint ranges give disjoint
/// (held-out) sets.
pub fn make_toy_dataset_range(start: u64, n: usize, seed: u64, config: &AppConfig) -> Result<ToyDataset> {
    if n == 0 {
        return Err(Error::Parameter("toy dataset needs at least one sample".into()));
    }
    let synth = Synthesizer::new(config.clone());
    let items: Vec<Generated> = (0..n as u64)
        .into_par_iter()
        .map(|i| generate(&synth, seed, start + i))
        .collect::<Result<_>>()?;
    let mut ds = ToyDataset {
        clean: Array2::zeros((n, INPUT_DIM)),
        dark: Array2::zeros((n, INPUT_DIM)),
        targets: Array2::zeros((n, DEG_OUTPUTS)),
        boxes: Array2::zeros((n, BOX_OUTPUTS)),
        labels: Vec::with_capacity(n),
    };
    for (i, g) in items.into_iter().enumerate() {
        ds.clean.row_mut(i).assign(&ArrayView1::from(&g.clean));
        ds.dark.row_mut(i).assign(&ArrayView1::from(&g.dark));
        ds.targets.row_mut(i).assign(&ArrayView1::from(&g.targets));
        ds.boxes.row_mut(i).assign(&ArrayView1::from(&g.bbox));
        ds.labels.push(g.label);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_stay_inside_and_targets_are_unit() {
        let ds = make_toy_dataset(200, 1, &AppConfig::default()).unwrap();
        for i in 0..ds.len() {
            let s = ds.sample(i);
            let [cx, cy, w, h] = s.bbox;
            assert!(cx - w / 2.0 >= 0.0 && cx + w / 2.0 <= 1.0);
            assert!(cy - h / 2.0 >= 0.0 && cy + h / 2.0 <= 1.0);
            assert!(s.label < 2);
            assert!(s.targets.iter().all(|t| (0.0..=1.0).contains(t)), "{:?}", s.targets);
            assert!(s.clean.iter().all(|&v| v == BACKGROUND || v == FOREGROUND));
            assert!(s.clean.iter().any(|&v| v == FOREGROUND));
            assert!(s.dark.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = AppConfig::default();
        let a = make_toy_dataset(20, 9, &cfg).unwrap();
        assert_eq!(a, make_toy_dataset(20, 9, &cfg).unwrap());
        assert_ne!(a, make_toy_dataset(20, 10, &cfg).unwrap());
        let tail = make_toy_dataset_range(10, 10, 9, &cfg).unwrap();
        assert_eq!(tail.dark.row(0), a.dark.row(10));
        assert!(make_toy_dataset(0, 9, &cfg).is_err());
    }

    #[test]
    fn classes_are_balanced() {
        let n = 5000;
        let ones: usize = (0..n as u64)
            .map(|i| shape_patch(&mut SeededRng::with_purpose(2, i, "toy-shape")).2)
            .sum();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }
}
