//! Directory-level batch driver with per-image sidecars and a manifest.
//!
//! Image `i` of the name-sorted input listing always uses stream `i` of the
//! master seed, so outputs do not depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineParams, Method};
use crate::codec::{read_image, to_rgb8, write_image};
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::synth::{DegradationRecord, RecordParams, Synthesizer, SCHEMA_VERSION};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const SIDECAR_SUFFIX: &str = ".deg.json";

#[derive(Debug, Clone)]
pub struct BatchRequest {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub method: Method,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum EntryStatus {
    Ok {
        output: String,
        sidecar: String,
        clipped: usize,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: String,
    pub stream: u64,
    #[serde(flatten)]
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn new(min: f64, max: f64, bins: usize) -> Self {
        Histogram {
            min,
            max,
            counts: vec![0; bins],
        }
    }

    fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let t = if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        };
        let i = ((t * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        self.counts[i] += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub images: usize,
    pub failures: usize,
    pub clipped_samples: usize,
    pub tone_clamped_samples: usize,
    pub histograms: BTreeMap<String, Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub method: Method,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    pub summary: BatchSummary,
}

impl Manifest {
    pub fn failures(&self) -> usize {
        self.summary.failures
    }
}

/// Image files (`.png`, `.ppm`, `.pnm`) directly inside `dir`, sorted by name.
pub fn list_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn sidecar_name(stem: &str) -> String {
    format!("{stem}{SIDECAR_SUFFIX}")
}

/// Degrades every image of `req.input_dir` into `req.output_dir`.
///
/// Per-file decode failures are recorded in the manifest; failure to write
/// the output directory aborts the batch.
pub fn degrade_batch(config: &AppConfig, req: &BatchRequest) -> Result<Manifest> {
    let synth = Synthesizer::new(config.clone());
    let inputs = list_inputs(&req.input_dir)?;
    fs::create_dir_all(&req.output_dir).map_err(|e| Error::io(&req.output_dir, e))?;

    let mut seen = BTreeMap::new();
    let duplicate: Vec<bool> = inputs
        .iter()
        .map(|p| seen.insert(stem(p), ()).is_some())
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let results: Vec<Result<(ManifestEntry, Option<DegradationRecord>)>> = pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let stream = i as u64;
                let source = file_name(path);
                if duplicate[i] {
                    return Ok((
                        ManifestEntry {
                            source,
                            stream,
                            status: EntryStatus::Error {
                                message: format!("output name '{}' already used by another input", stem(path)),
                            },
                        },
                        None,
                    ));
                }
                process_one(&synth, req, path, &source, stream)
            })
            .collect()
    });

    let mut entries = Vec::with_capacity(results.len());
    let mut records = Vec::new();
    for r in results {
        let (entry, record) = r?;
        entries.push(entry);
        records.extend(record);
    }
    let summary = summarize(config, &entries, &records);
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_hash: synth.config_hash().to_string(),
        method: req.method,
        seed: req.seed,
        entries,
        summary,
    };
    let path = req.output_dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn process_one(
    synth: &Synthesizer,
    req: &BatchRequest,
    path: &Path,
    source: &str,
    stream: u64,
) -> Result<(ManifestEntry, Option<DegradationRecord>)> {
    let degraded = read_image(path).and_then(|img| synth.degrade(&img, source, req.method, req.seed, stream));
    let (img, record) = match degraded {
        Ok(v) => v,
        Err(e) => {
            log::warn!("{}: {e}", path.display());
            return Ok((
                ManifestEntry {
                    source: source.to_string(),
                    stream,
                    status: EntryStatus::Error {
                        message: e.to_string(),
                    },
                },
                None,
            ));
        }
    };
    let stem = stem(path);
    let output = format!("{stem}.png");
    let sidecar = sidecar_name(&stem);
    write_image(&img, &req.output_dir.join(&output))?;
    let sidecar_path = req.output_dir.join(&sidecar);
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    fs::write(&sidecar_path, json + "\n").map_err(|e| Error::io(&sidecar_path, e))?;
    Ok((
        ManifestEntry {
            source: source.to_string(),
            stream,
            status: EntryStatus::Ok {
                output,
                sidecar,
                clipped: record.stats.clipped,
            },
        },
        Some(record),
    ))
}

fn summarize(config: &AppConfig, entries: &[ManifestEntry], records: &[DegradationRecord]) -> BatchSummary {
    const BINS: usize = 10;
    let r = &config.ranges;
    let mut hist: BTreeMap<String, Histogram> = BTreeMap::new();
    let mut add = |name: &str, lo: f64, hi: f64, v: f64| {
        hist.entry(name.to_string())
            .or_insert_with(|| Histogram::new(lo, hi, BINS))
            .add(v)
    };
    let bits_lo = *r.bits.iter().min().unwrap_or(&1) as f64;
    let bits_hi = *r.bits.iter().max().unwrap_or(&1) as f64;
    for rec in records {
        match &rec.params {
            RecordParams::Isp(p) => {
                add("k", r.k.min, r.k.max, p.k);
                add("log10_delta_s", r.log10_shot.min, r.log10_shot.max, p.delta_s.log10());
                add("log10_delta_r", -10.0, -2.0, p.delta_r.log10());
                add("bits", bits_lo, bits_hi + 1.0, p.bits as f64);
                add("g_r", r.g_r.min, r.g_r.max, p.g_r);
                add("g_b", r.g_b.min, r.g_b.max, p.g_b);
                add("gamma", r.gamma.min, r.gamma.max, p.gamma);
            }
            RecordParams::Baseline(b) => match *b {
                BaselineParams::Retinex { illumination } => add("illumination", r.k.min, r.k.max, illumination),
                BaselineParams::Linear { k } => add("k", r.k.min, r.k.max, k),
                BaselineParams::Invgamma { gamma }
                | BaselineParams::InvgammaPoisson { gamma, .. }
                | BaselineParams::InvgammaMixed { gamma, .. } => add("gamma", r.gamma.min, r.gamma.max, gamma),
            },
        }
    }
    BatchSummary {
        images: entries.len(),
        failures: entries
            .iter()
            .filter(|e| matches!(e.status, EntryStatus::Error { .. }))
            .count(),
        clipped_samples: records.iter().map(|r| r.stats.clipped).sum(),
        tone_clamped_samples: records.iter().map(|r| r.stats.tone_clamped).sum(),
        histograms: hist,
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Re-derives one degraded image from its source and sidecar and checks
/// that it matches the stored 8-bit output exactly.
pub fn replay_one(config: &AppConfig, source: &Path, sidecar: &Path, degraded: &Path) -> Result<()> {
    let record: DegradationRecord = read_json(sidecar)?;
    let synth = Synthesizer::new(config.clone());
    let img = read_image(source)?;
    let again = to_rgb8(&synth.replay(&img, &record)?);
    let stored = image::open(degraded)
        .map_err(|source| Error::Codec {
            path: degraded.to_path_buf(),
            source,
        })?
        .to_rgb8();
    if again != stored {
        let differing = again
            .as_raw()
            .iter()
            .zip(stored.as_raw())
            .filter(|(a, b)| a != b)
            .count();
        return Err(Error::Replay(format!(
            "{}: {} of {} samples differ from the stored output",
            degraded.display(),
            differing,
            stored.as_raw().len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

/// Replays every successful entry of a batch manifest.
pub fn replay_batch(config: &AppConfig, input_dir: &Path, output_dir: &Path) -> Result<ReplaySummary> {
    let manifest: Manifest = read_json(&output_dir.join(MANIFEST_NAME))?;
    let mut summary = ReplaySummary::default();
    for entry in &manifest.entries {
        let EntryStatus::Ok { output, sidecar, .. } = &entry.status else {
            continue;
        };
        summary.checked += 1;
        if let Err(e) = replay_one(
            config,
            &input_dir.join(&entry.source),
            &output_dir.join(sidecar),
            &output_dir.join(output),
        ) {
            summary.mismatches.push(format!("{}: {e}", entry.source));
        }
    }
    Ok(summary)
}
