use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::SeededRng;

use super::dataset::ToyDataset;
use super::loss::Objective;
use super::model::{Params, ToyMaetModel, GROUP_NAMES};
use super::train::loss_on;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub samples: Vec<usize>,
    /// Groups larger than this are checked on a random subset of entries.
    pub max_coords_per_group: usize,
    /// Finite-difference step relative to each group's RMS magnitude.
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is zero compare on an absolute scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples: (0..10).collect(),
            max_coords_per_group: 64,
            step: 3e-3,
            floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
}

/// RMS of a group, floored so zero-initialized biases still get a usable step.
fn group_scale(values: &[f64]) -> f64 {
    let ms = values.iter().map(|v| v * v).sum::<f64>() / values.len().max(1) as f64;
    ms.sqrt().max(MIN_SCALE)
}

const MIN_SCALE: f64 = 1e-2;

fn entry(p: &mut Params, group: usize, i: usize) -> &mut f64 {
    &mut p.groups_mut()[group].1[i]
}

/// Compares analytic gradients of `objective` against fourth-order central
/// differences, one sample at a time.
pub fn grad_check(
    model: &ToyMaetModel,
    data: &ToyDataset,
    objective: Objective,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let rng = &mut SeededRng::with_purpose(opts.seed, 0, "grad-check");
    let mut groups: Vec<GroupCheck> = GROUP_NAMES
        .iter()
        .map(|n| GroupCheck {
            name: n.to_string(),
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        })
        .collect();
    let mut probe = model.clone();
    for &s in &opts.samples {
        let mut analytic = Params::zeros();
        loss_on(model, data, &[s], objective, Some(&mut analytic))?;
        let sizes: Vec<usize> = analytic.groups().iter().map(|(_, g)| g.len()).collect();
        for (gi, &len) in sizes.iter().enumerate() {
            let h = opts.step * group_scale(model.params.groups()[gi].1);
            let coords: Vec<usize> = if len <= opts.max_coords_per_group {
                (0..len).collect()
            } else {
                sample(rng, len, opts.max_coords_per_group).into_vec()
            };
            for i in coords {
                let orig = *entry(&mut probe.params, gi, i);
                let mut at = |offset: f64| -> Result<f64> {
                    *entry(&mut probe.params, gi, i) = orig + offset;
                    Ok(loss_on(&probe, data, &[s], objective, None)?.total)
                };
                let near = at(h)? - at(-h)?;
                let far = at(2.0 * h)? - at(-2.0 * h)?;
                *entry(&mut probe.params, gi, i) = orig;
                let numeric = (8.0 * near - far) / (12.0 * h);
                let a = analytic.groups()[gi].1[i];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
                let g = &mut groups[gi];
                g.checked += 1;
                g.max_abs_error = g.max_abs_error.max(abs);
                g.max_rel_error = g.max_rel_error.max(rel);
            }
        }
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { groups, max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AppConfig;
    use crate::maet::make_toy_dataset;

    #[test]
    fn gradients_match_on_a_few_samples() {
        let data = make_toy_dataset(4, 11, &AppConfig::default()).unwrap();
        let model = ToyMaetModel::new(11);
        let opts = GradCheckOptions {
            samples: vec![0, 3],
            max_coords_per_group: 16,
            ..GradCheckOptions::default()
        };
        for objective in [Objective::FULL, Objective::NO_ORT, Objective::DEG_ONLY] {
            let r = grad_check(&model, &data, objective, &opts).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
