//! End-to-end low-light degradation: unprocess an sRGB image to a linear
//! camera signal, darken and corrupt it, then run it back through the ISP.
//!
//! Stage order:
//!
//! ```text
//! (a) inverse tone map   (b) inverse gamma   (c) sRGB -> camera RGB   (d) inverse WB
//!     attenuate by k, add shot + read noise
//! (e) quantization noise (f) WB              (g) camera RGB -> sRGB   (h) gamma
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{demosaic, mosaic, BayerPattern};
use crate::color::{apply_ccm, gamma_correct, gamma_invert, tone_invert_counted, tone_map_counted, white_balance, CcmMode};
use crate::error::{Error, Result};
use crate::image::{ColorState, PlanarImage};
use crate::noise::{self, DegradationParams, ParamRanges, QuantMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    pub quant_mode: QuantMode,
    pub ccm_mode: CcmMode,
    /// Re-apply the tone curve after gamma so the chain is a round trip.
    pub tone_remap: bool,
    pub shot_read_noise: bool,
    pub quantization: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            quant_mode: QuantMode::Literal,
            ccm_mode: CcmMode::Pick,
            tone_remap: false,
            shot_read_noise: true,
            quantization: true,
        }
    }
}

impl PipelineOptions {
    /// No stochastic terms at all; with neutral parameters the pipeline is
    /// then an identity (up to the gamma clamp).
    pub fn noiseless() -> Self {
        PipelineOptions {
            tone_remap: true,
            shot_read_noise: false,
            quantization: false,
            ..Default::default()
        }
    }
}

/// Per-image counters reported alongside the output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradeStats {
    /// Samples clipped to `[0, 1]` at the final encode.
    pub clipped: usize,
    /// Samples clamped by a tone-curve stage.
    pub tone_clamped: usize,
}

/// One entry of the stage trace: which stage ran and the color state of
/// its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub stage: &'static str,
    pub state: ColorState,
}

struct Tracer<'a>(Option<&'a mut Vec<TraceEvent>>);

impl Tracer<'_> {
    fn push(&mut self, stage: &'static str, state: ColorState) {
        if let Some(t) = self.0.as_mut() {
            t.push(TraceEvent { stage, state });
        }
    }
}

/// Steps (a)-(d): sRGB in, linear camera RGB out.
pub fn unprocess(img: &PlanarImage, params: &DegradationParams) -> Result<PlanarImage> {
    unprocess_inner(img, params, &mut Tracer(None), &mut DegradeStats::default())
}

fn unprocess_inner(
    img: &PlanarImage,
    params: &DegradationParams,
    trace: &mut Tracer<'_>,
    stats: &mut DegradeStats,
) -> Result<PlanarImage> {
    if img.state() != ColorState::SrgbEncoded {
        return Err(Error::State {
            expected: "srgb-encoded",
            found: img.state(),
        });
    }
    trace.push("input", img.state());
    let (x, clamped) = tone_invert_counted(img)?;
    stats.tone_clamped += clamped;
    trace.push("tone_invert", x.state());
    let x = gamma_invert(&x, params.gamma_params()?)?;
    trace.push("gamma_invert", x.state());
    let x = apply_ccm(&x, &params.ccm.inverse()?)?;
    trace.push("ccm_invert", x.state());
    let x = white_balance(&x, 1.0 / params.g_r, 1.0 / params.g_b)?;
    trace.push("wb_invert", x.state());
    Ok(x)
}

/// Steps (e)-(h): linear camera RGB in, clipped sRGB out.
pub fn reprocess<R: Rng + ?Sized>(
    img: &PlanarImage,
    params: &DegradationParams,
    options: &PipelineOptions,
    rng: &mut R,
) -> Result<PlanarImage> {
    let mut stats = DegradeStats::default();
    let x = quantize_and_balance(img.clone(), params, options, rng, &mut Tracer(None))?;
    finish(x, params, options, &mut Tracer(None), &mut stats)
}

fn quantize_and_balance<R: Rng + ?Sized>(
    mut x: PlanarImage,
    params: &DegradationParams,
    options: &PipelineOptions,
    rng: &mut R,
    trace: &mut Tracer<'_>,
) -> Result<PlanarImage> {
    if x.state() != ColorState::LinearCamera {
        return Err(Error::State {
            expected: "linear-camera",
            found: x.state(),
        });
    }
    if options.quantization {
        noise::quantization_noise_in_place(x.data_mut(), params.bits, options.quant_mode, rng)?;
        trace.push("quantization", x.state());
    }
    let x = white_balance(&x, params.g_r, params.g_b)?;
    trace.push("wb", x.state());
    Ok(x)
}

/// (g), (h), optional tone remap and the final clip.
fn finish(
    x: PlanarImage,
    params: &DegradationParams,
    options: &PipelineOptions,
    trace: &mut Tracer<'_>,
    stats: &mut DegradeStats,
) -> Result<PlanarImage> {
    let x = apply_ccm(&x, &params.ccm)?;
    trace.push("ccm", x.state());
    let mut x = gamma_correct(&x, params.gamma_params()?)?;
    trace.push("gamma", x.state());
    if options.tone_remap {
        let (y, clamped) = tone_map_counted(&x)?;
        stats.tone_clamped += clamped;
        x = y;
        trace.push("tone_map", x.state());
    }
    stats.clipped += x.clip_unit();
    trace.push("clip", x.state());
    Ok(x)
}

/// The full degradation `t_ISP(k * t_unprocess(x) + noise + quantization)`.
///
/// `rng` drives only the noise terms; parameters are supplied.
pub fn degrade_full<R: Rng + ?Sized>(
    img: &PlanarImage,
    params: &DegradationParams,
    options: &PipelineOptions,
    rng: &mut R,
) -> Result<(PlanarImage, DegradeStats)> {
    run(img, params, options, false, rng, None)
}

/// Same as [`degrade_full`], also returning the sequence of stages run.
pub fn degrade_full_traced<R: Rng + ?Sized>(
    img: &PlanarImage,
    params: &DegradationParams,
    options: &PipelineOptions,
    rng: &mut R,
) -> Result<(PlanarImage, Vec<TraceEvent>)> {
    let mut trace = Vec::new();
    let (out, _) = run(img, params, options, false, rng, Some(&mut trace))?;
    Ok((out, trace))
}

pub(crate) fn run<R: Rng + ?Sized>(
    img: &PlanarImage,
    params: &DegradationParams,
    options: &PipelineOptions,
    with_mosaic: bool,
    rng: &mut R,
    trace: Option<&mut Vec<TraceEvent>>,
) -> Result<(PlanarImage, DegradeStats)> {
    params.validate()?;
    let mut trace = Tracer(trace);
    let mut stats = DegradeStats::default();
    let raw = unprocess_inner(img, params, &mut trace, &mut stats)?;

    let out = if with_mosaic {
        let mut plane = mosaic(&raw, BayerPattern::Rggb)?;
        trace.push("mosaic", ColorState::LinearCamera);
        plane.data.iter_mut().for_each(|v| *v *= params.k);
        trace.push("attenuate", ColorState::LinearCamera);
        if options.shot_read_noise {
            noise::shot_read_noise_in_place(&mut plane.data, params.delta_s, params.delta_r, rng);
            trace.push("shot_read_noise", ColorState::LinearCamera);
        }
        if options.quantization {
            noise::quantization_noise_in_place(&mut plane.data, params.bits, options.quant_mode, rng)?;
            trace.push("quantization", ColorState::LinearCamera);
        }
        plane.white_balance(params.g_r, params.g_b)?;
        trace.push("wb", ColorState::LinearCamera);
        let x = demosaic(&plane)?;
        trace.push("demosaic", x.state());
        finish(x, params, options, &mut trace, &mut stats)?
    } else {
        let mut x = noise::attenuate(&raw, params.k)?;
        trace.push("attenuate", x.state());
        if options.shot_read_noise {
            noise::shot_read_noise_in_place(x.data_mut(), params.delta_s, params.delta_r, rng);
            trace.push("shot_read_noise", x.state());
        }
        let x = quantize_and_balance(x, params, options, rng, &mut trace)?;
        finish(x, params, options, &mut trace, &mut stats)?
    };
    Ok((out, stats))
}

/// Maps the learnable tuple `(k, 1/B, 1/g_r, 1/g_b, 1/gamma)` to `[0, 1]^5`
/// by min-max scaling over each quantity's sampling range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetNormalizer {
    bounds: [(f64, f64); 5],
}

impl TargetNormalizer {
    pub fn from_ranges(ranges: &ParamRanges) -> Self {
        let bmin = *ranges.bits.iter().min().expect("validated non-empty") as f64;
        let bmax = *ranges.bits.iter().max().expect("validated non-empty") as f64;
        TargetNormalizer {
            bounds: [
                (ranges.k.min, ranges.k.max),
                (1.0 / bmax, 1.0 / bmin),
                (1.0 / ranges.g_r.max, 1.0 / ranges.g_r.min),
                (1.0 / ranges.g_b.max, 1.0 / ranges.g_b.min),
                (1.0 / ranges.gamma.max, 1.0 / ranges.gamma.min),
            ],
        }
    }

    pub fn raw_targets(params: &DegradationParams) -> [f64; 5] {
        [
            params.k,
            1.0 / params.bits as f64,
            1.0 / params.g_r,
            1.0 / params.g_b,
            1.0 / params.gamma,
        ]
    }

    pub fn normalize(&self, params: &DegradationParams) -> [f64; 5] {
        let raw = Self::raw_targets(params);
        let mut out = [0.0; 5];
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            out[i] = if hi > lo { (raw[i] - lo) / (hi - lo) } else { 0.0 };
        }
        out
    }

    /// Inverse of [`normalize`](Self::normalize), returning the raw
    /// `(k, 1/B, 1/g_r, 1/g_b, 1/gamma)` tuple.
    pub fn denormalize(&self, normalized: &[f64; 5]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            out[i] = lo + normalized[i] * (hi - lo);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{gamma_invert, tone_invert, CcmSet, GammaParams};
    use crate::noise::sample_params;
    use crate::rng::SeededRng;

    fn gray_ramp(n: usize, lo: f64, hi: f64) -> PlanarImage {
        PlanarImage::from_fn(n, 1, ColorState::SrgbEncoded, |x, _| {
            [lo + (hi - lo) * x as f64 / (n - 1) as f64; 3]
        })
    }

    fn sampled(seed: u64) -> DegradationParams {
        sample_params(
            &mut SeededRng::new(seed, 0),
            &ParamRanges::default(),
            &CcmSet::builtin(),
            CcmMode::Pick,
        )
        .unwrap()
    }

    #[test]
    fn white_survives_unprocessing_except_wb() {
        let white = PlanarImage::filled(2, 2, [1.0; 3], ColorState::SrgbEncoded);
        for seed in 0..5 {
            let p = sampled(seed);
            let raw = unprocess(&white, &p).unwrap();
            assert_eq!(raw.state(), ColorState::LinearCamera);
            let px = raw.pixel(1, 1);
            assert!((px[0] - 1.0 / p.g_r).abs() < 1e-9);
            assert!((px[1] - 1.0).abs() < 1e-9);
            assert!((px[2] - 1.0 / p.g_b).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_unprocess_is_tone_then_gamma() {
        let img = gray_ramp(50, 0.0, 1.0);
        let p = DegradationParams::neutral(2.4);
        let raw = unprocess(&img, &p).unwrap();
        let expected = gamma_invert(&tone_invert(&img).unwrap(), GammaParams::new(2.4).unwrap()).unwrap();
        assert_eq!(raw.data(), expected.data());
    }

    #[test]
    fn reprocess_of_black_hits_the_gamma_floor() {
        let black = PlanarImage::filled(3, 3, [0.0; 3], ColorState::LinearCamera);
        let mut p = sampled(3);
        p.gamma = 2.5;
        let opts = PipelineOptions {
            quantization: false,
            ..Default::default()
        };
        let out = reprocess(&black, &p, &opts, &mut SeededRng::new(0, 0)).unwrap();
        let floor = 1e-5f64.powf(1.0 / 2.5);
        assert!(out.data().iter().all(|v| (v - floor).abs() < 1e-15));
    }

    #[test]
    fn round_trip_with_tone_remap() {
        let img = gray_ramp(1000, 1e-4, 1.0);
        let p = DegradationParams::neutral(2.0);
        let raw = unprocess(&img, &p).unwrap();
        let out = reprocess(&raw, &p, &PipelineOptions::noiseless(), &mut SeededRng::new(0, 0)).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-5);
    }

    #[test]
    fn full_degenerate_identity() {
        let img = gray_ramp(1000, 1e-4, 1.0);
        let p = DegradationParams::neutral(2.0);
        let (out, stats) =
            degrade_full(&img, &p, &PipelineOptions::noiseless(), &mut SeededRng::new(0, 0)).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-5);
        assert_eq!(stats.clipped, 0);
    }

    #[test]
    fn quantization_draw_is_reproducible() {
        let img = gray_ramp(64, 0.1, 0.9);
        let p = sampled(8);
        let run = || {
            let raw = unprocess(&img, &p).unwrap();
            reprocess(&raw, &p, &PipelineOptions::default(), &mut SeededRng::new(77, 1)).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn darkening_lowers_luminance() {
        let img = PlanarImage::filled(16, 16, [0.5; 3], ColorState::SrgbEncoded);
        let mut p = sampled(4);
        p.k = 0.05;
        let (out, _) = degrade_full(&img, &p, &PipelineOptions::default(), &mut SeededRng::new(1, 1)).unwrap();
        assert!(out.mean_luminance() < img.mean_luminance());
    }

    #[test]
    fn luminance_monotone_in_k() {
        let img = PlanarImage::from_fn(32, 32, ColorState::SrgbEncoded, |x, y| {
            [0.2 + 0.6 * x as f64 / 31.0, 0.5, 0.3 + 0.4 * y as f64 / 31.0]
        });
        for seed in 0..4 {
            let mut p = sampled(seed);
            let mut last = f64::NEG_INFINITY;
            for k in [0.01, 0.05, 0.1, 0.5, 1.0] {
                p.k = k;
                let (out, _) =
                    degrade_full(&img, &p, &PipelineOptions::default(), &mut SeededRng::new(seed, 9)).unwrap();
                let lum = out.mean_luminance();
                assert!(lum >= last, "seed {seed}, k {k}: {lum} < {last}");
                last = lum;
            }
        }
    }

    #[test]
    fn stage_order_is_traced() {
        let img = gray_ramp(8, 0.2, 0.8);
        let p = sampled(5);
        let (_, trace) =
            degrade_full_traced(&img, &p, &PipelineOptions::default(), &mut SeededRng::new(0, 0)).unwrap();
        let stages: Vec<_> = trace.iter().map(|e| e.stage).collect();
        assert_eq!(
            stages,
            [
                "input", "tone_invert", "gamma_invert", "ccm_invert", "wb_invert", "attenuate",
                "shot_read_noise", "quantization", "wb", "ccm", "gamma", "clip"
            ]
        );
        let mut states: Vec<ColorState> = trace.iter().map(|e| e.state).collect();
        states.dedup();
        use ColorState::*;
        assert_eq!(states, [SrgbEncoded, LinearSrgb, LinearCamera, LinearSrgb, SrgbEncoded]);
    }

    #[test]
    fn rejects_wrong_input_state() {
        let img = PlanarImage::filled(2, 2, [0.5; 3], ColorState::LinearCamera);
        let p = sampled(0);
        assert!(matches!(unprocess(&img, &p), Err(Error::State { .. })));
    }

    #[test]
    fn targets_normalize_and_round_trip() {
        let ranges = ParamRanges::default();
        let norm = TargetNormalizer::from_ranges(&ranges);
        for seed in 0..200 {
            let p = sampled(seed);
            let t = norm.normalize(&p);
            assert!(t.iter().all(|v| (0.0..=1.0).contains(v)), "{t:?}");
            let raw = norm.denormalize(&t);
            let expect = TargetNormalizer::raw_targets(&p);
            for i in 0..5 {
                assert!((raw[i] - expect[i]).abs() < 1e-9);
            }
        }
        let mut p = sampled(0);
        p.bits = 16;
        assert_eq!(norm.normalize(&p)[1], 0.0);
        p.bits = 12;
        assert!((norm.normalize(&p)[1] - 1.0).abs() < 1e-12);
    }
}
