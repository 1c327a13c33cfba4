//! Statistical and numerical conformance checks with a machine-readable
//! report.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::baseline::Method;
use crate::batch::{degrade_batch, replay_batch, BatchRequest};
use crate::color::{
    apply_ccm, gamma_correct, gamma_invert, tone_invert, tone_map, white_balance, GammaParams,
};
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::image::{ColorState, PlanarImage};
use crate::noise::{
    quantization_half_width, quantization_noise_in_place, sample_params, shot_read_noise_in_place, DegradationParams,
    ParamRanges, QuantMode, UniformRange,
};
use crate::pipeline::{reprocess, unprocess, PipelineOptions};
use crate::rng::SeededRng;
use crate::stats::{chi_square, chi_square_uniform, ks_test, mean_var};

/// Minimum p-value for every hypothesis test.
pub const ALPHA: f64 = 0.01;
pub const ROUND_TRIP_TOL: f64 = 1e-6;
pub const PIPELINE_TOL: f64 = 1e-5;
pub const VARIANCE_REL_TOL: f64 = 0.02;
pub const FREQUENCY_TOL: f64 = 0.02;
/// Absorbs summation rounding when the expected spread is zero.
const SUM_FLOOR: f64 = 1e-12;
const GRID: usize = 1000;
const BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub expected: f64,
    pub observed: f64,
    /// Allowed `|observed - expected|`; absent for hypothesis tests.
    pub tolerance: Option<f64>,
    pub p_value: Option<f64>,
    /// Smallest acceptable p-value; present for hypothesis tests.
    pub alpha: Option<f64>,
    pub pass: bool,
}

impl CheckEntry {
    pub fn within(name: impl Into<String>, expected: f64, observed: f64, tolerance: f64) -> CheckEntry {
        CheckEntry {
            name: name.into(),
            expected,
            observed,
            tolerance: Some(tolerance),
            p_value: None,
            alpha: None,
            pass: (observed - expected).abs() <= tolerance,
        }
    }

    /// A hypothesis test; `expected` is the statistic's null mean.
    pub fn test(name: impl Into<String>, expected: f64, statistic: f64, p: f64) -> CheckEntry {
        CheckEntry {
            name: name.into(),
            expected,
            observed: statistic,
            tolerance: None,
            p_value: Some(p),
            alpha: Some(ALPHA),
            pass: p > ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub environment: Environment,
    pub entries: Vec<CheckEntry>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn new(environment: Environment, entries: Vec<CheckEntry>) -> Self {
        let pass = entries.iter().all(|e| e.pass);
        VerificationReport {
            environment,
            entries,
            pass,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLawCase {
    pub k: f64,
    pub x0: f64,
    pub delta_r: f64,
    pub delta_s: f64,
}

impl NoiseLawCase {
    pub fn expected_mean(&self) -> f64 {
        self.k * self.x0
    }

    pub fn expected_variance(&self) -> f64 {
        self.delta_r * self.delta_r + self.delta_s * self.k * self.x0
    }
}

/// Mean within four standard errors and variance within 2% of the
/// Gaussian shot/read law at a constant input.
pub fn verify_noise_law(case: NoiseLawCase, n: usize, seed: u64) -> Vec<CheckEntry> {
    let rng = &mut SeededRng::with_purpose(seed, 0, "verify-noise-law");
    let mut xs = vec![case.k * case.x0; n];
    shot_read_noise_in_place(&mut xs, case.delta_s, case.delta_r, rng);
    let (mean, var) = mean_var(&xs);
    let ev = case.expected_variance();
    vec![
        CheckEntry::within("noise_law.mean", case.expected_mean(), mean, 4.0 * (ev / n as f64).sqrt() + SUM_FLOOR),
        CheckEntry::within("noise_law.variance", ev, var, VARIANCE_REL_TOL * ev + SUM_FLOOR),
    ]
}

fn grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID).map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64).collect()
}

fn image_of(values: &[f64], state: ColorState) -> PlanarImage {
    PlanarImage::from_fn(values.len(), 1, state, |x, _| [values[x]; 3])
}

fn rgb_grid(state: ColorState) -> PlanarImage {
    let g = grid(0.0, 1.0);
    PlanarImage::from_fn(GRID, 1, state, |x, _| [g[x], g[(x * 7) % GRID], g[(x * 13) % GRID]])
}

/// Forward-then-inverse identity for every color stage on 1000-point grids,
/// and the noiseless neutral pipeline end to end.
pub fn verify_roundtrips(config: &AppConfig) -> Result<Vec<CheckEntry>> {
    let mut out = Vec::new();
    let lin = image_of(&grid(1e-4, 1.0), ColorState::LinearSrgb);
    let mut worst: f64 = 0.0;
    for gamma in [2.0, 2.2, 2.8, 3.5] {
        let g = GammaParams::new(gamma)?;
        worst = worst.max(gamma_invert(&gamma_correct(&lin, g)?, g)?.max_abs_diff(&lin));
    }
    out.push(CheckEntry::within("roundtrip.gamma", 0.0, worst, ROUND_TRIP_TOL));

    let enc = image_of(&grid(0.0, 1.0), ColorState::SrgbEncoded);
    let back = tone_map(&tone_invert(&enc)?)?;
    let worst = back.max_abs_diff(&enc).max(tone_invert(&tone_map(&enc)?)?.max_abs_diff(&enc));
    out.push(CheckEntry::within("roundtrip.tone", 0.0, worst, ROUND_TRIP_TOL));

    let rgb = rgb_grid(ColorState::LinearCamera);
    let mut worst: f64 = 0.0;
    for (g_r, g_b) in [(1.9, 1.5), (2.15, 1.7), (2.4, 1.9)] {
        let there = white_balance(&rgb, g_r, g_b)?;
        worst = worst.max(white_balance(&there, 1.0 / g_r, 1.0 / g_b)?.max_abs_diff(&rgb));
    }
    out.push(CheckEntry::within("roundtrip.white_balance", 0.0, worst, ROUND_TRIP_TOL));

    let mut worst: f64 = 0.0;
    for ccm in config.ccms().entries() {
        let srgb = apply_ccm(&rgb, &ccm.matrix)?;
        worst = worst.max(apply_ccm(&srgb, &ccm.inverse)?.max_abs_diff(&rgb));
    }
    out.push(CheckEntry::within("roundtrip.ccm", 0.0, worst, ROUND_TRIP_TOL));

    let img = image_of(&grid(1e-4, 1.0), ColorState::SrgbEncoded);
    let p = DegradationParams::neutral(2.0);
    let raw = unprocess(&img, &p)?;
    let rng = &mut SeededRng::new(0, 0);
    let back = reprocess(&raw, &p, &PipelineOptions::noiseless(), rng)?;
    out.push(CheckEntry::within("roundtrip.pipeline_neutral", 0.0, back.max_abs_diff(&img), PIPELINE_TOL));
    Ok(out)
}

/// Range containment, distribution shape and discrete frequencies over `n`
/// parameter draws, plus uniformity of quantization noise.
pub fn verify_sampling(config: &AppConfig, n: usize, seed: u64) -> Result<Vec<CheckEntry>> {
    let ranges: &ParamRanges = &config.ranges;
    let rng = &mut SeededRng::with_purpose(seed, 0, "verify-sampling");
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        draws.push(sample_params(rng, ranges, config.ccms(), config.pipeline.ccm_mode)?);
    }
    let violations = draws
        .iter()
        .filter(|p| {
            !(ranges.k.min..=ranges.k.max).contains(&p.k)
                || !ranges.log10_shot.contains(p.delta_s.log10())
                || !(p.delta_r.is_finite() && p.delta_r > 0.0)
                || !ranges.bits.contains(&p.bits)
                || !ranges.g_r.contains(p.g_r)
                || !ranges.g_b.contains(p.g_b)
                || !ranges.gamma.contains(p.gamma)
                || p.validate().is_err()
        })
        .count();
    let mut out = vec![CheckEntry::within("sampling.range_violations", 0.0, violations as f64, 0.0)];

    let ks: Vec<f64> = draws.iter().map(|p| p.k).collect();
    let (d, p) = ks_test(&ks, |x| ranges.k.cdf(x));
    out.push(CheckEntry::test("sampling.k_ks", 0.0, d, p));

    let dof = (BINS - 1) as f64;
    type Getter = fn(&DegradationParams) -> f64;
    let uniform: [(&str, &UniformRange, Getter); 4] = [
        ("sampling.log10_delta_s_chi2", &ranges.log10_shot, |p| p.delta_s.log10()),
        ("sampling.g_r_chi2", &ranges.g_r, |p| p.g_r),
        ("sampling.g_b_chi2", &ranges.g_b, |p| p.g_b),
        ("sampling.gamma_chi2", &ranges.gamma, |p| p.gamma),
    ];
    for (name, range, get) in uniform {
        let xs: Vec<f64> = draws.iter().map(get).collect();
        let (stat, p) = chi_square_uniform(&xs, range.min, range.max, BINS);
        out.push(CheckEntry::test(name, dof, stat, p));
    }

    let share = 1.0 / ranges.bits.len() as f64;
    let mut counts = vec![0.0; ranges.bits.len()];
    for p in &draws {
        let i = ranges.bits.iter().position(|&b| b == p.bits).expect("range checked");
        counts[i] += 1.0;
    }
    for (b, c) in ranges.bits.iter().zip(&counts) {
        out.push(CheckEntry::within(format!("sampling.bits_{b}_frequency"), share, c / n as f64, FREQUENCY_TOL));
    }
    let (stat, p) = chi_square(&counts, &vec![n as f64 * share; counts.len()]);
    out.push(CheckEntry::test("sampling.bits_chi2", (counts.len() - 1) as f64, stat, p));

    let bits = ranges.bits[0];
    let mode: QuantMode = config.pipeline.quant_mode;
    let h = quantization_half_width(bits, mode)?;
    let mut q = vec![0.0; n];
    quantization_noise_in_place(&mut q, bits, mode, rng)?;
    let (stat, p) = chi_square_uniform(&q, -h, h, BINS);
    out.push(CheckEntry::test("sampling.quantization_chi2", dof, stat, p));
    Ok(out)
}

fn write_corpus(dir: &Path, n: usize, seed: u64) -> Result<()> {
    for i in 0..n as u32 {
        let s = (seed as u32).wrapping_mul(31).wrapping_add(i);
        let img = RgbImage::from_fn(40, 30, |x, y| {
            Rgb([
                (x * 6 + s % 50) as u8,
                (y * 8 + (s * 3) % 40) as u8,
                ((x + y) * 3 + (s * 7) % 60) as u8,
            ])
        });
        let path = dir.join(format!("img{i:03}.png"));
        img.save(&path).map_err(|source| Error::Codec { path, source })?;
    }
    Ok(())
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.push((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes));
    }
    files.sort();
    Ok(files)
}

/// A 20-image batch rendered with 1 and 8 workers must match byte for
/// byte, and every output must replay exactly from its sidecar.
pub fn verify_determinism(config: &AppConfig, seed: u64) -> Result<Vec<CheckEntry>> {
    const IMAGES: usize = 20;
    let tmp = tempfile::tempdir().map_err(|e| Error::io(Path::new("<tempdir>"), e))?;
    let input = tmp.path().join("in");
    fs::create_dir_all(&input).map_err(|e| Error::io(&input, e))?;
    write_corpus(&input, IMAGES, seed)?;
    let mut outputs = Vec::new();
    for jobs in [1, 8] {
        let out_dir = tmp.path().join(format!("out{jobs}"));
        degrade_batch(
            config,
            &BatchRequest {
                input_dir: input.clone(),
                output_dir: out_dir.clone(),
                method: Method::Ours,
                seed,
                jobs,
            },
        )?;
        outputs.push(out_dir);
    }
    let (a, b) = (dir_bytes(&outputs[0])?, dir_bytes(&outputs[1])?);
    let differing = a.len().abs_diff(b.len()) + a.iter().zip(&b).filter(|(x, y)| x != y).count();
    let replay = replay_batch(config, &input, &outputs[0])?;
    Ok(vec![
        CheckEntry::within(format!("determinism.seed_{seed}.differing_files"), 0.0, differing as f64, 0.0),
        CheckEntry::within(
            format!("determinism.seed_{seed}.replay_mismatches"),
            0.0,
            (replay.mismatches.len() + IMAGES - replay.checked) as f64,
            0.0,
        ),
    ])
}

/// Sample counts for [`run_verification`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifySizes {
    pub noise_samples: usize,
    pub parameter_draws: usize,
}

impl Default for VerifySizes {
    fn default() -> Self {
        VerifySizes {
            noise_samples: 1_000_000,
            parameter_draws: 100_000,
        }
    }
}

/// The whole suite. Deterministic in `(config, seed)`.
pub fn run_verification(config: &AppConfig, seed: u64, sizes: VerifySizes) -> Result<VerificationReport> {
    let mut entries = Vec::new();
    let reference = NoiseLawCase {
        k: 0.1,
        x0: 0.5,
        delta_r: 0.01,
        delta_s: 0.001,
    };
    entries.extend(verify_noise_law(reference, sizes.noise_samples, seed));
    let silent = NoiseLawCase {
        delta_r: 0.0,
        delta_s: 0.0,
        ..reference
    };
    entries.extend(
        verify_noise_law(silent, sizes.noise_samples.min(100_000), seed)
            .into_iter()
            .map(|mut e| {
                e.name = e.name.replace("noise_law", "noise_law_silent");
                e
            }),
    );
    entries.extend(verify_roundtrips(config)?);
    entries.extend(verify_sampling(config, sizes.parameter_draws, seed)?);
    entries.extend(verify_determinism(config, seed)?);
    Ok(VerificationReport::new(
        Environment {
            seed,
            config_hash: config.hash(),
        },
        entries,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_noise_is_exact() {
        let case = NoiseLawCase {
            k: 0.1,
            x0: 0.5,
            delta_r: 0.0,
            delta_s: 0.0,
        };
        let e = verify_noise_law(case, 1000, 1);
        assert!((e[0].observed - 0.05).abs() < 1e-12);
        assert!(e[1].observed.abs() < 1e-12);
        assert!(e.iter().all(|e| e.pass));
    }

    #[test]
    fn reference_variance_substitution() {
        let case = NoiseLawCase {
            k: 0.1,
            x0: 0.5,
            delta_r: 0.01,
            delta_s: 0.001,
        };
        assert!((case.expected_variance() - 1.5e-4).abs() < 1e-18);
    }

    #[test]
    fn small_suite_passes_and_is_deterministic() {
        let sizes = VerifySizes {
            noise_samples: 200_000,
            parameter_draws: 20_000,
        };
        let cfg = AppConfig::default();
        let a = run_verification(&cfg, 5, sizes).unwrap();
        let failures: Vec<_> = a.failures().collect();
        assert!(a.pass, "{failures:#?}");
        assert_eq!(a, run_verification(&cfg, 5, sizes).unwrap());
    }

    #[test]
    fn overall_verdict_requires_every_entry() {
        let env = Environment {
            seed: 0,
            config_hash: String::new(),
        };
        let ok = CheckEntry::within("a", 1.0, 1.0, 0.0);
        let bad = CheckEntry::test("b", 1.0, 50.0, 0.001);
        assert!(VerificationReport::new(env.clone(), vec![ok.clone()]).pass);
        assert!(!VerificationReport::new(env, vec![ok, bad]).pass);
    }
}
