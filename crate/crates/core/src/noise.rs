//! Sensor-domain corruption: light attenuation, heteroscedastic shot and
//! read noise, ADC quantization noise, and the random draw of every
//! degradation parameter.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::color::{select_ccm, CcmMode, CcmSelection, CcmSet, GammaParams, Matrix3, GAMMA_EPSILON};
use crate::error::{Error, Result};
use crate::image::PlanarImage;

/// Attenuation factors the pipeline accepts.
pub const K_RANGE: (f64, f64) = (0.01, 1.0);
pub const LOG10_SHOT_RANGE: (f64, f64) = (-4.0, -2.0);
pub const RED_GAIN_RANGE: (f64, f64) = (1.9, 2.4);
pub const BLUE_GAIN_RANGE: (f64, f64) = (1.5, 1.9);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        UniformRange { min, max }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.min + (self.max - self.min) * u
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn check(&self, field: &str, envelope: (f64, f64)) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!(
                "{field}: bounds [{}, {}] are not ordered",
                self.min, self.max
            )));
        }
        if self.min < envelope.0 || self.max > envelope.1 {
            return Err(Error::Config(format!(
                "{field}: [{}, {}] leaves the admissible range [{}, {}]",
                self.min, self.max, envelope.0, envelope.1
            )));
        }
        Ok(())
    }
}

/// Normal distribution restricted to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedGaussian {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncatedGaussian {
    /// Rejection sampling from the parent normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let v = self.mean + self.std * z;
            if (self.min..=self.max).contains(&v) {
                return v;
            }
        }
    }

    /// Probability mass of the parent normal inside the bounds.
    pub fn mass(&self) -> f64 {
        crate::stats::normal_cdf((self.max - self.mean) / self.std)
            - crate::stats::normal_cdf((self.min - self.mean) / self.std)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.min {
            return 0.0;
        }
        if x >= self.max {
            return 1.0;
        }
        let lo = crate::stats::normal_cdf((self.min - self.mean) / self.std);
        (crate::stats::normal_cdf((x - self.mean) / self.std) - lo) / self.mass()
    }
}

/// `log10 delta_r ~ N(slope * log10 delta_s + intercept, std^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadNoiseLaw {
    pub slope: f64,
    pub intercept: f64,
    pub std: f64,
}

/// Sampling distribution of every degradation parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub k: TruncatedGaussian,
    pub log10_shot: UniformRange,
    pub read_noise: ReadNoiseLaw,
    pub bits: Vec<u32>,
    pub g_r: UniformRange,
    pub g_b: UniformRange,
    pub gamma: UniformRange,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            k: TruncatedGaussian {
                mean: 0.1,
                std: 0.08,
                min: K_RANGE.0,
                max: K_RANGE.1,
            },
            log10_shot: UniformRange::new(LOG10_SHOT_RANGE.0, LOG10_SHOT_RANGE.1),
            read_noise: ReadNoiseLaw {
                slope: 2.18,
                intercept: 0.12,
                std: 0.26,
            },
            bits: vec![12, 14, 16],
            g_r: UniformRange::new(RED_GAIN_RANGE.0, RED_GAIN_RANGE.1),
            g_b: UniformRange::new(BLUE_GAIN_RANGE.0, BLUE_GAIN_RANGE.1),
            gamma: UniformRange::new(crate::color::GAMMA_RANGE.0, crate::color::GAMMA_RANGE.1),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let k = &self.k;
        UniformRange::new(k.min, k.max).check("ranges.k", K_RANGE)?;
        if !(k.std > 0.0 && k.std.is_finite() && k.mean.is_finite()) {
            return Err(Error::Config(format!("ranges.k.std must be positive, got {}", k.std)));
        }
        if !(k.mass() >= 1e-4) {
            return Err(Error::Config(format!(
                "ranges.k: truncation interval holds too little mass ({:e})",
                k.mass()
            )));
        }
        self.log10_shot.check("ranges.log10_shot", LOG10_SHOT_RANGE)?;
        let law = &self.read_noise;
        if !(law.slope.is_finite() && law.intercept.is_finite() && law.std >= 0.0) {
            return Err(Error::Config("ranges.read_noise: invalid law coefficients".into()));
        }
        if self.bits.is_empty() {
            return Err(Error::Config("ranges.bits: no choices".into()));
        }
        if let Some(b) = self.bits.iter().find(|b| !(1..=62).contains(*b)) {
            return Err(Error::Config(format!("ranges.bits: {b} is not in 1..=62")));
        }
        self.g_r.check("ranges.g_r", RED_GAIN_RANGE)?;
        self.g_b.check("ranges.g_b", BLUE_GAIN_RANGE)?;
        self.gamma.check("ranges.gamma", crate::color::GAMMA_RANGE)?;
        Ok(())
    }
}

/// Ground-truth parameters of one degradation event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    /// Light attenuation.
    pub k: f64,
    /// Shot-noise gain.
    pub delta_s: f64,
    /// Read-noise standard deviation.
    pub delta_r: f64,
    /// Quantization parameter.
    pub bits: u32,
    pub g_r: f64,
    pub g_b: f64,
    pub ccm_selection: CcmSelection,
    /// The composed camera-RGB -> sRGB matrix that was applied.
    pub ccm: Matrix3,
    pub gamma: f64,
    pub epsilon: f64,
}

impl DegradationParams {
    /// Parameters under which the pipeline degenerates to its noise-free
    /// identity: no attenuation, no noise, unit gains, identity CCM.
    pub fn neutral(gamma: f64) -> DegradationParams {
        DegradationParams {
            k: 1.0,
            delta_s: 0.0,
            delta_r: 0.0,
            bits: 16,
            g_r: 1.0,
            g_b: 1.0,
            ccm_selection: CcmSelection::Mix { weights: vec![] },
            ccm: Matrix3::IDENTITY,
            gamma,
            epsilon: GAMMA_EPSILON,
        }
    }

    pub fn gamma_params(&self) -> Result<GammaParams> {
        let mut g = GammaParams::new(self.gamma)?;
        g.epsilon = self.epsilon;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        check_k(self.k)?;
        if !(self.delta_s >= 0.0 && self.delta_s.is_finite()) {
            return Err(Error::Parameter(format!("delta_s = {}", self.delta_s)));
        }
        if !(self.delta_r >= 0.0 && self.delta_r.is_finite()) {
            return Err(Error::Parameter(format!("delta_r = {}", self.delta_r)));
        }
        if self.bits == 0 {
            return Err(Error::Parameter("bits must be positive".into()));
        }
        if !(self.g_r > 0.0 && self.g_b > 0.0) {
            return Err(Error::Parameter("white-balance gains must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter("epsilon must be positive".into()));
        }
        self.ccm.inverse()?;
        self.gamma_params()?;
        Ok(())
    }
}

/// Draws one complete set of degradation parameters.
///
/// Draw order is fixed (k, shot, read, bits, g_r, g_b, gamma, CCM) so a
/// given stream always yields the same parameters.
pub fn sample_params<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &ParamRanges,
    ccms: &CcmSet,
    ccm_mode: CcmMode,
) -> Result<DegradationParams> {
    let k = ranges.k.sample(rng);
    let log_shot = ranges.log10_shot.sample(rng);
    let z: f64 = rng.sample(StandardNormal);
    let law = &ranges.read_noise;
    let log_read = law.slope * log_shot + law.intercept + law.std * z;
    let bits = ranges.bits[rng.random_range(0..ranges.bits.len())];
    let g_r = ranges.g_r.sample(rng);
    let g_b = ranges.g_b.sample(rng);
    let gamma = ranges.gamma.sample(rng);
    let (ccm, ccm_selection) = select_ccm(rng, ccms, ccm_mode)?;
    Ok(DegradationParams {
        k,
        delta_s: 10f64.powf(log_shot),
        delta_r: 10f64.powf(log_read),
        bits,
        g_r,
        g_b,
        ccm_selection,
        ccm,
        gamma,
        epsilon: GAMMA_EPSILON,
    })
}

fn check_k(k: f64) -> Result<()> {
    if !(K_RANGE.0..=K_RANGE.1).contains(&k) {
        return Err(Error::Parameter(format!(
            "attenuation {k} outside [{}, {}]",
            K_RANGE.0, K_RANGE.1
        )));
    }
    Ok(())
}

/// `k * x` for every sample.
pub fn attenuate(img: &PlanarImage, k: f64) -> Result<PlanarImage> {
    check_k(k)?;
    img.check_finite()?;
    Ok(img.map(|x| k * x))
}

/// Adds zero-mean Gaussian noise with variance `delta_r^2 + delta_s * s` to
/// every sample `s` of an already attenuated signal.
///
/// Negative signal values (possible after inverse color correction) carry
/// read noise only.
pub fn add_shot_read_noise<R: Rng + ?Sized>(
    img: &PlanarImage,
    delta_s: f64,
    delta_r: f64,
    rng: &mut R,
) -> Result<PlanarImage> {
    img.check_finite()?;
    let mut out = img.clone();
    shot_read_noise_in_place(out.data_mut(), delta_s, delta_r, rng);
    Ok(out)
}

pub(crate) fn shot_read_noise_in_place<R: Rng + ?Sized>(
    data: &mut [f64],
    delta_s: f64,
    delta_r: f64,
    rng: &mut R,
) {
    let read_var = delta_r * delta_r;
    for s in data {
        let var = read_var + delta_s * s.max(0.0);
        let z: f64 = rng.sample(StandardNormal);
        *s += var.sqrt() * z;
    }
}

/// How the quantization parameter maps to a noise width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantMode {
    /// Half-width `1 / (2B)`.
    #[default]
    Literal,
    /// Half-width `1 / 2^(B+1)`, i.e. half an LSB of a B-bit ADC.
    Bitdepth,
}

pub fn quantization_half_width(bits: u32, mode: QuantMode) -> Result<f64> {
    match mode {
        QuantMode::Literal if bits >= 1 => Ok(1.0 / (2.0 * bits as f64)),
        QuantMode::Bitdepth if (1..=62).contains(&bits) => Ok(0.5 / (1u64 << bits) as f64),
        _ => Err(Error::Parameter(format!(
            "quantization parameter {bits} invalid for {mode:?} mode"
        ))),
    }
}

/// Adds i.i.d. uniform noise on `[-h, h]` with `h` from [`quantization_half_width`].
pub fn add_quantization_noise<R: Rng + ?Sized>(
    img: &PlanarImage,
    bits: u32,
    mode: QuantMode,
    rng: &mut R,
) -> Result<PlanarImage> {
    img.check_finite()?;
    let mut out = img.clone();
    quantization_noise_in_place(out.data_mut(), bits, mode, rng)?;
    Ok(out)
}

pub(crate) fn quantization_noise_in_place<R: Rng + ?Sized>(
    data: &mut [f64],
    bits: u32,
    mode: QuantMode,
    rng: &mut R,
) -> Result<()> {
    let h = quantization_half_width(bits, mode)?;
    for v in data {
        let u: f64 = rng.random();
        *v += h * (2.0 * u - 1.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorState;
    use crate::rng::SeededRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn constant(v: f64, n: usize) -> PlanarImage {
        PlanarImage::filled(n, 1, [v; 3], ColorState::LinearCamera)
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn sampled_params_respect_table_bounds() {
        let ranges = ParamRanges::default();
        let ccms = CcmSet::builtin();
        let mut rng = SeededRng::new(1, 0);
        for _ in 0..100_000 {
            let p = sample_params(&mut rng, &ranges, &ccms, CcmMode::Pick).unwrap();
            assert!((0.01..=1.0).contains(&p.k));
            assert!((1.9..=2.4).contains(&p.g_r));
            assert!((1.5..=1.9).contains(&p.g_b));
            assert!((2.0..=3.5).contains(&p.gamma));
            assert!([12, 14, 16].contains(&p.bits));
            assert!((1e-4..=1e-2).contains(&p.delta_s));
            assert!(p.delta_r > 0.0);
        }
    }

    /// Mean of N(0.1, 0.08^2) truncated to [0.01, 1] by midpoint quadrature.
    fn truncated_mean_by_quadrature() -> f64 {
        let pdf = |x: f64| (-0.5 * ((x - 0.1) / 0.08).powi(2)).exp();
        let n = 200_000;
        let h = (1.0 - 0.01) / n as f64;
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..n {
            let x = 0.01 + (i as f64 + 0.5) * h;
            mass += pdf(x) * h;
            first += x * pdf(x) * h;
        }
        first / mass
    }

    #[test]
    fn k_mean_matches_truncated_gaussian() {
        let oracle = truncated_mean_by_quadrature();
        assert!((oracle - 0.1195).abs() < 5e-4, "oracle {oracle}");
        let ranges = ParamRanges::default();
        let mut rng = SeededRng::new(2, 0);
        let ks: Vec<f64> = (0..100_000).map(|_| ranges.k.sample(&mut rng)).collect();
        let (mean, _) = mean_var(&ks);
        assert!((mean - 0.1).abs() < 0.02, "mean {mean}");
        assert!((mean - oracle).abs() < 1e-3, "mean {mean} vs oracle {oracle}");
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let ranges = ParamRanges::default();
        let ccms = CcmSet::builtin();
        let a = sample_params(&mut SeededRng::new(9, 4), &ranges, &ccms, CcmMode::Mix).unwrap();
        let b = sample_params(&mut SeededRng::new(9, 4), &ranges, &ccms, CcmMode::Mix).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k.to_bits(), b.k.to_bits());
    }

    #[test]
    fn narrowed_k_range_is_honored() {
        let mut ranges = ParamRanges::default();
        ranges.k.max = 0.5;
        ranges.validate().unwrap();
        let mut rng = SeededRng::new(3, 0);
        assert!((0..20_000).all(|_| ranges.k.sample(&mut rng) <= 0.5));
    }

    #[test]
    fn range_validation_names_fields() {
        let ranges = ParamRanges {
            g_r: UniformRange::new(2.5, 2.0),
            ..ParamRanges::default()
        };
        assert!(ranges.validate().unwrap_err().to_string().contains("ranges.g_r"));
        let mut ranges = ParamRanges::default();
        ranges.gamma.max = 4.0;
        assert!(ranges.validate().unwrap_err().to_string().contains("ranges.gamma"));
        let mut ranges = ParamRanges::default();
        ranges.bits.clear();
        assert!(ranges.validate().is_err());
    }

    #[test]
    fn attenuate_examples() {
        let img = constant(0.5, 4);
        assert_eq!(attenuate(&img, 1.0).unwrap(), img);
        let out = attenuate(&img, 0.1).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.05).abs() < 1e-15));
        assert!(matches!(attenuate(&img, 0.001), Err(Error::Parameter(_))));
        assert!(attenuate(&img, 1.5).is_err());

        let x = PlanarImage::from_fn(5, 1, ColorState::LinearCamera, |i, _| [i as f64 * 0.1; 3]);
        let y = PlanarImage::from_fn(5, 1, ColorState::LinearCamera, |i, _| [0.3 - i as f64 * 0.05; 3]);
        let sum = PlanarImage::new(
            5,
            1,
            x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect(),
            ColorState::LinearCamera,
        )
        .unwrap();
        let lhs = attenuate(&sum, 0.37).unwrap();
        let (ax, ay) = (attenuate(&x, 0.37).unwrap(), attenuate(&y, 0.37).unwrap());
        for i in 0..15 {
            assert!((lhs.data()[i] - ax.data()[i] - ay.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_noise_is_exact() {
        let img = attenuate(&constant(0.5, 100), 0.1).unwrap();
        let out = add_shot_read_noise(&img, 0.0, 0.0, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn noise_law_statistics() {
        let (k, x, delta_r, delta_s) = (0.1, 0.5, 0.01, 0.001);
        let expected_var: f64 = delta_r * delta_r + delta_s * k * x;
        assert!((expected_var - 1.5e-4).abs() < 1e-15);
        let img = attenuate(&constant(x, 1_000_000 / 3 + 1), k).unwrap();
        let out = add_shot_read_noise(&img, delta_s, delta_r, &mut SeededRng::new(4, 0)).unwrap();
        let (mean, var) = mean_var(&out.data()[..1_000_000]);
        assert!((mean - 0.05).abs() < 4.0 * expected_var.sqrt() / 1e3, "mean {mean}");
        assert!((var / expected_var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn noise_is_independent_across_pixels() {
        let img = constant(0.3, 200_000);
        let out = add_shot_read_noise(&img, 0.01, 0.02, &mut SeededRng::new(5, 0)).unwrap();
        let d: Vec<f64> = out.plane(0).iter().map(|v| v - 0.3).collect();
        let a = &d[..100_000];
        let b = &d[1..100_001];
        let r = crate::stats::pearson(a, b);
        assert!(r.abs() < 0.01, "lag-1 correlation {r}");
    }

    #[test]
    fn quantization_bounds() {
        assert!((quantization_half_width(12, QuantMode::Literal).unwrap() - 1.0 / 24.0).abs() < 1e-18);
        assert!(quantization_half_width(30, QuantMode::Bitdepth).unwrap() < 1e-9);
        assert!(quantization_half_width(0, QuantMode::Literal).is_err());
        assert!(quantization_half_width(63, QuantMode::Bitdepth).is_err());

        let img = constant(0.0, 10_000);
        let out = add_quantization_noise(&img, 12, QuantMode::Literal, &mut SeededRng::new(6, 0)).unwrap();
        assert!(out.data().iter().all(|v| v.abs() <= 1.0 / 24.0));
        let out = add_quantization_noise(&img, 30, QuantMode::Bitdepth, &mut SeededRng::new(6, 0)).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn quantization_noise_is_uniform() {
        let img = constant(0.0, 100_000 / 3 + 1);
        let out = add_quantization_noise(&img, 14, QuantMode::Literal, &mut SeededRng::new(7, 0)).unwrap();
        let h = 1.0 / 28.0;
        let samples = &out.data()[..100_000];
        let mut counts = [0f64; 20];
        for v in samples {
            let bin = (((v + h) / (2.0 * h)) * 20.0).floor().clamp(0.0, 19.0) as usize;
            counts[bin] += 1.0;
        }
        let expected = samples.len() as f64 / 20.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn neutral_params_validate() {
        DegradationParams::neutral(2.2).validate().unwrap();
        let mut p = DegradationParams::neutral(2.2);
        p.k = 0.0;
        assert!(p.validate().is_err());
    }
}
