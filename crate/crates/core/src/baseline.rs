//! Alternative low-light synthesizers kept for ablation parity: global
//! Retinex illumination scaling, inverse gamma with optional Poisson /
//! Gaussian-Poisson noise, plain linear scaling, and the main pipeline
//! with an RGGB mosaic / bilinear demosaic inserted around the raw stages.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::color::GAMMA_RANGE;
use crate::error::{Error, Result};
use crate::image::{ColorState, PlanarImage};
use crate::noise::{attenuate, DegradationParams};
use crate::pipeline::{self, DegradeStats, PipelineOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BayerPattern {
    #[default]
    Rggb,
}

/// Single-channel sensor plane behind a color filter array.
#[derive(Debug, Clone, PartialEq)]
pub struct BayerPlane {
    pub width: usize,
    pub height: usize,
    pub pattern: BayerPattern,
    pub data: Vec<f64>,
}

impl BayerPlane {
    /// Channel (0 = R, 1 = G, 2 = B) sampled at `(x, y)`.
    #[inline]
    pub fn channel_at(&self, x: usize, y: usize) -> usize {
        match self.pattern {
            BayerPattern::Rggb => match (y % 2, x % 2) {
                (0, 0) => 0,
                (1, 1) => 2,
                _ => 1,
            },
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = reflect(x, self.width);
        let y = reflect(y, self.height);
        self.data[y * self.width + x]
    }

    /// Scales red sites by `g_r` and blue sites by `g_b`.
    pub fn white_balance(&mut self, g_r: f64, g_b: f64) -> Result<()> {
        if !(g_r > 0.0 && g_b > 0.0) {
            return Err(Error::Parameter(format!("gains must be positive, got {g_r}, {g_b}")));
        }
        for y in 0..self.height {
            for x in 0..self.width {
                let gain = match self.channel_at(x, y) {
                    0 => g_r,
                    2 => g_b,
                    _ => continue,
                };
                self.data[y * self.width + x] *= gain;
            }
        }
        Ok(())
    }
}

/// Mirror without repeating the edge sample; keeps CFA parity for even sizes.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "Bayer mosaicking needs even, non-zero dimensions, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Keeps one channel per pixel according to the CFA pattern.
pub fn mosaic(img: &PlanarImage, pattern: BayerPattern) -> Result<BayerPlane> {
    check_even(img.width(), img.height())?;
    let (w, h) = (img.width(), img.height());
    let mut plane = BayerPlane {
        width: w,
        height: h,
        pattern,
        data: vec![0.0; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let c = plane.channel_at(x, y);
            plane.data[y * w + x] = img.plane(c)[y * w + x];
        }
    }
    Ok(plane)
}

#[inline]
fn avg2(a: f64, b: f64) -> f64 {
    (a + b) / 2.0
}

#[inline]
fn avg4(a: f64, b: f64, c: f64, d: f64) -> f64 {
    avg2(avg2(a, b), avg2(c, d))
}

/// Bilinear demosaic. Averages are formed pairwise so a constant channel is
/// reproduced exactly.
pub fn demosaic(plane: &BayerPlane) -> Result<PlanarImage> {
    let (w, h) = (plane.width, plane.height);
    check_even(w, h)?;
    if plane.data.len() != w * h {
        return Err(Error::Dimension(format!(
            "{}x{} plane holds {} samples",
            w,
            h,
            plane.data.len()
        )));
    }
    let mut out = PlanarImage::filled(w, h, [0.0; 3], ColorState::LinearCamera);
    for yi in 0..h {
        for xi in 0..w {
            let (x, y) = (xi as isize, yi as isize);
            let p = |dx: isize, dy: isize| plane.at(x + dx, y + dy);
            let center = p(0, 0);
            let cross = avg4(p(-1, 0), p(1, 0), p(0, -1), p(0, 1));
            let diag = avg4(p(-1, -1), p(1, -1), p(-1, 1), p(1, 1));
            let horiz = avg2(p(-1, 0), p(1, 0));
            let vert = avg2(p(0, -1), p(0, 1));
            let rgb = match plane.channel_at(xi, yi) {
                0 => [center, cross, diag],
                2 => [diag, cross, center],
                _ if plane.channel_at(xi ^ 1, yi) == 0 => [horiz, center, vert],
                _ => [vert, center, horiz],
            };
            out.set_pixel(xi, yi, rgb);
        }
    }
    Ok(out)
}

/// Global illumination scaling `I = R * L`.
pub fn retinex_degrade(img: &PlanarImage, illumination: f64) -> Result<PlanarImage> {
    attenuate(img, illumination)
}

/// `x * k`; the same map as [`retinex_degrade`], kept as its own method.
pub fn linear_scale_degrade(img: &PlanarImage, k: f64) -> Result<PlanarImage> {
    attenuate(img, k)
}

/// Additive noise model for the inverse-gamma baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GammaNoise {
    None,
    /// `Poisson(P * v) / P`.
    Poisson { photon_scale: f64 },
    /// Poisson as above plus `N(0, gaussian_std^2)`.
    PoissonGaussian { photon_scale: f64, gaussian_std: f64 },
}

impl GammaNoise {
    fn validate(&self) -> Result<()> {
        let (p, s) = match *self {
            GammaNoise::None => return Ok(()),
            GammaNoise::Poisson { photon_scale } => (photon_scale, 0.0),
            GammaNoise::PoissonGaussian {
                photon_scale,
                gaussian_std,
            } => (photon_scale, gaussian_std),
        };
        if !(p > 0.0 && p.is_finite()) || !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Parameter(format!("invalid noise settings {self:?}")));
        }
        Ok(())
    }
}

/// `x^gamma + n`, clipped to `[0, 1]`.
pub fn gamma_noise_degrade<R: Rng + ?Sized>(
    img: &PlanarImage,
    gamma: f64,
    noise: GammaNoise,
    rng: &mut R,
) -> Result<PlanarImage> {
    if !(GAMMA_RANGE.0..=GAMMA_RANGE.1).contains(&gamma) {
        return Err(Error::Parameter(format!("gamma {gamma} outside [2, 3.5]")));
    }
    noise.validate()?;
    img.check_finite()?;
    let mut out = img.map(|x| x.max(0.0).powf(gamma));
    match noise {
        GammaNoise::None => {}
        GammaNoise::Poisson { photon_scale } => {
            for v in out.data_mut() {
                *v = poisson_scaled(*v, photon_scale, rng);
            }
        }
        GammaNoise::PoissonGaussian {
            photon_scale,
            gaussian_std,
        } => {
            for v in out.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = poisson_scaled(*v, photon_scale, rng) + gaussian_std * z;
            }
        }
    }
    out.clip_unit();
    Ok(out)
}

fn poisson_scaled<R: Rng + ?Sized>(v: f64, photon_scale: f64, rng: &mut R) -> f64 {
    let lambda = v * photon_scale;
    if lambda <= 0.0 {
        return 0.0;
    }
    let count: f64 = Poisson::new(lambda)
        .expect("positive finite rate")
        .sample(rng);
    count / photon_scale
}

/// The main pipeline with a mosaic after inverse white balance and a
/// demosaic after white balance.
pub fn degrade_with_mosaic<R: Rng + ?Sized>(
    img: &PlanarImage,
    params: &DegradationParams,
    options: &PipelineOptions,
    rng: &mut R,
) -> Result<(PlanarImage, DegradeStats)> {
    pipeline::run(img, params, options, true, rng, None)
}

/// Synthesis method, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The full unprocess / corrupt / reprocess pipeline.
    Ours,
    OursMosaic,
    Retinex,
    Invgamma,
    InvgammaPoisson,
    InvgammaMixed,
    Linear,
}

impl Method {
    pub const BASELINES: [Method; 6] = [
        Method::Retinex,
        Method::Invgamma,
        Method::InvgammaPoisson,
        Method::InvgammaMixed,
        Method::Linear,
        Method::OursMosaic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::OursMosaic => "ours-mosaic",
            Method::Retinex => "retinex",
            Method::Invgamma => "invgamma",
            Method::InvgammaPoisson => "invgamma-poisson",
            Method::InvgammaMixed => "invgamma-mixed",
            Method::Linear => "linear",
        }
    }

    /// Whether the method runs the ISP pipeline (and has learnable targets).
    pub fn uses_isp(self) -> bool {
        matches!(self, Method::Ours | Method::OursMosaic)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Ours]
            .into_iter()
            .chain(Method::BASELINES)
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method '{s}'")))
    }
}

/// Parameters of a single-formula baseline degradation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum BaselineParams {
    Retinex { illumination: f64 },
    Invgamma { gamma: f64 },
    InvgammaPoisson { gamma: f64, photon_scale: f64 },
    InvgammaMixed { gamma: f64, photon_scale: f64, gaussian_std: f64 },
    Linear { k: f64 },
}

impl BaselineParams {
    pub fn method(&self) -> Method {
        match self {
            BaselineParams::Retinex { .. } => Method::Retinex,
            BaselineParams::Invgamma { .. } => Method::Invgamma,
            BaselineParams::InvgammaPoisson { .. } => Method::InvgammaPoisson,
            BaselineParams::InvgammaMixed { .. } => Method::InvgammaMixed,
            BaselineParams::Linear { .. } => Method::Linear,
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, img: &PlanarImage, rng: &mut R) -> Result<PlanarImage> {
        match *self {
            BaselineParams::Retinex { illumination } => retinex_degrade(img, illumination),
            BaselineParams::Linear { k } => linear_scale_degrade(img, k),
            BaselineParams::Invgamma { gamma } => gamma_noise_degrade(img, gamma, GammaNoise::None, rng),
            BaselineParams::InvgammaPoisson { gamma, photon_scale } => {
                gamma_noise_degrade(img, gamma, GammaNoise::Poisson { photon_scale }, rng)
            }
            BaselineParams::InvgammaMixed {
                gamma,
                photon_scale,
                gaussian_std,
            } => gamma_noise_degrade(
                img,
                gamma,
                GammaNoise::PoissonGaussian {
                    photon_scale,
                    gaussian_std,
                },
                rng,
            ),
        }
    }
}
