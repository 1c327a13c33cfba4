//! Sampling, rendering and replaying complete degradation records.

use serde::{Deserialize, Serialize};

use crate::baseline::{degrade_with_mosaic, BaselineParams, Method};
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::noise::{sample_params, DegradationParams};
use crate::pipeline::{degrade_full, DegradeStats, PipelineOptions, TargetNormalizer};
use crate::rng::SeededRng;

/// Version of the sidecar / manifest layout.
pub const SCHEMA_VERSION: u32 = 1;

const PARAMS_PURPOSE: &str = "params";
const NOISE_PURPOSE: &str = "noise";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordParams {
    Isp(DegradationParams),
    Baseline(BaselineParams),
}

/// Everything needed to reproduce one degraded image from its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationRecord {
    pub schema_version: u32,
    pub source: String,
    pub seed: u64,
    pub stream: u64,
    pub config_hash: String,
    pub method: Method,
    pub options: PipelineOptions,
    pub params: RecordParams,
    /// Min-max normalized `(k, 1/B, 1/g_r, 1/g_b, 1/gamma)`; ISP methods only.
    pub normalized_targets: Option<[f64; 5]>,
    pub stats: DegradeStats,
}

/// Draws parameters and renders degradations under one configuration.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    config: AppConfig,
    hash: String,
    normalizer: TargetNormalizer,
}

impl Synthesizer {
    pub fn new(config: AppConfig) -> Synthesizer {
        let hash = config.hash();
        let normalizer = TargetNormalizer::from_ranges(&config.ranges);
        Synthesizer {
            config,
            hash,
            normalizer,
        }
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn normalizer(&self) -> &TargetNormalizer {
        &self.normalizer
    }

    /// Parameters for image `stream` of a run seeded with `seed`.
    pub fn sample(&self, method: Method, seed: u64, stream: u64) -> Result<RecordParams> {
        let rng = &mut SeededRng::with_purpose(seed, stream, PARAMS_PURPOSE);
        let cfg = &self.config;
        let ranges = &cfg.ranges;
        Ok(match method {
            Method::Ours | Method::OursMosaic => RecordParams::Isp(sample_params(
                rng,
                ranges,
                cfg.ccms(),
                cfg.pipeline.ccm_mode,
            )?),
            Method::Retinex => RecordParams::Baseline(BaselineParams::Retinex {
                illumination: ranges.k.sample(rng),
            }),
            Method::Linear => RecordParams::Baseline(BaselineParams::Linear {
                k: ranges.k.sample(rng),
            }),
            Method::Invgamma => RecordParams::Baseline(BaselineParams::Invgamma {
                gamma: ranges.gamma.sample(rng),
            }),
            Method::InvgammaPoisson => RecordParams::Baseline(BaselineParams::InvgammaPoisson {
                gamma: ranges.gamma.sample(rng),
                photon_scale: cfg.baseline.photon_scale,
            }),
            Method::InvgammaMixed => RecordParams::Baseline(BaselineParams::InvgammaMixed {
                gamma: ranges.gamma.sample(rng),
                photon_scale: cfg.baseline.photon_scale,
                gaussian_std: cfg.baseline.gaussian_std,
            }),
        })
    }

    fn render(
        &self,
        img: &PlanarImage,
        method: Method,
        params: &RecordParams,
        options: &PipelineOptions,
        seed: u64,
        stream: u64,
    ) -> Result<(PlanarImage, DegradeStats)> {
        let rng = &mut SeededRng::with_purpose(seed, stream, NOISE_PURPOSE);
        match (method, params) {
            (Method::Ours, RecordParams::Isp(p)) => degrade_full(img, p, options, rng),
            (Method::OursMosaic, RecordParams::Isp(p)) => degrade_with_mosaic(img, p, options, rng),
            (m, RecordParams::Baseline(b)) if b.method() == m => {
                let mut out = b.apply(img, rng)?;
                let clipped = out.clip_unit();
                Ok((
                    out,
                    DegradeStats {
                        clipped,
                        tone_clamped: 0,
                    },
                ))
            }
            (m, _) => Err(Error::Parameter(format!(
                "parameters do not belong to method '{}'",
                m.name()
            ))),
        }
    }

    /// Samples, renders, and records one degradation.
    pub fn degrade(
        &self,
        img: &PlanarImage,
        source: &str,
        method: Method,
        seed: u64,
        stream: u64,
    ) -> Result<(PlanarImage, DegradationRecord)> {
        let params = self.sample(method, seed, stream)?;
        let options = self.config.pipeline;
        let (out, stats) = self.render(img, method, &params, &options, seed, stream)?;
        let normalized_targets = match &params {
            RecordParams::Isp(p) => Some(self.normalizer.normalize(p)),
            RecordParams::Baseline(_) => None,
        };
        let record = DegradationRecord {
            schema_version: SCHEMA_VERSION,
            source: source.to_string(),
            seed,
            stream,
            config_hash: self.hash.clone(),
            method,
            options,
            params,
            normalized_targets,
            stats,
        };
        Ok((out, record))
    }

    /// Re-renders a recorded degradation. The record's options are applied
    /// on top of this configuration and the resulting hash must match.
    pub fn replay(&self, img: &PlanarImage, record: &DegradationRecord) -> Result<PlanarImage> {
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Replay(format!(
                "record schema {} is not supported (expected {})",
                record.schema_version, SCHEMA_VERSION
            )));
        }
        let mut effective = self.config.clone();
        effective.pipeline = record.options;
        let hash = effective.hash();
        if hash != record.config_hash {
            return Err(Error::Replay(format!(
                "configuration hash {} does not match record {}",
                hash, record.config_hash
            )));
        }
        let (out, _) = self.render(
            img,
            record.method,
            &record.params,
            &record.options,
            record.seed,
            record.stream,
        )?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorState;

    fn scene() -> PlanarImage {
        PlanarImage::from_fn(16, 12, ColorState::SrgbEncoded, |x, y| {
            [x as f64 / 15.0, y as f64 / 11.0, 0.5]
        })
    }

    #[test]
    fn replay_matches_for_every_method() {
        let synth = Synthesizer::new(AppConfig::default());
        for method in [Method::Ours].into_iter().chain(Method::BASELINES) {
            let (out, record) = synth.degrade(&scene(), "scene", method, 42, 3).unwrap();
            assert_eq!(record.method, method);
            assert_eq!(record.normalized_targets.is_some(), method.uses_isp());
            let json = serde_json::to_string(&record).unwrap();
            let parsed: DegradationRecord = serde_json::from_str(&json).unwrap();
            assert_eq!(parsed, record);
            let again = synth.replay(&scene(), &parsed).unwrap();
            assert!(out.data().iter().zip(again.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn replay_refuses_other_config_and_schema() {
        let synth = Synthesizer::new(AppConfig::default());
        let (_, record) = synth.degrade(&scene(), "scene", Method::Ours, 1, 0).unwrap();
        let mut other = AppConfig::default();
        other.ranges.k.max = 0.5;
        let err = Synthesizer::new(other).replay(&scene(), &record).unwrap_err();
        assert!(matches!(err, Error::Replay(_)));
        let mut old = record.clone();
        old.schema_version = 0;
        assert!(matches!(synth.replay(&scene(), &old), Err(Error::Replay(_))));
    }

    #[test]
    fn record_options_drive_replay() {
        let mut cfg = AppConfig::default();
        cfg.pipeline.tone_remap = true;
        let synth = Synthesizer::new(cfg);
        let (out, record) = synth.degrade(&scene(), "scene", Method::Ours, 5, 1).unwrap();
        assert!(record.options.tone_remap);
        let plain = Synthesizer::new(AppConfig::default());
        assert_eq!(plain.replay(&scene(), &record).unwrap(), out);
    }
}
