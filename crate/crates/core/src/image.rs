//! Floating-point RGB images tagged with the color space they live in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which stage of the camera pipeline an image's values belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorState {
    /// Display-referred, gamma encoded.
    SrgbEncoded,
    /// Linear light in camera RGB (the "raw" domain).
    LinearCamera,
    /// Linear light in sRGB primaries.
    LinearSrgb,
}

impl ColorState {
    pub fn is_linear(self) -> bool {
        !matches!(self, ColorState::SrgbEncoded)
    }
}

/// Three-channel image stored as three contiguous planes (R, G, B).
///
/// Values are finite but not necessarily inside `[0, 1]`: linear-domain
/// stages carry out-of-range values until the final encode clips them.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    state: ColorState,
}

impl PlanarImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f64>, state: ColorState) -> Result<Self> {
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::Dimension(format!(
                "{}x{}x3 image needs {} values, got {}",
                width,
                height,
                width * height * Self::CHANNELS,
                data.len()
            )));
        }
        let img = PlanarImage {
            width,
            height,
            data,
            state,
        };
        img.check_finite()?;
        Ok(img)
    }

    /// Image with every channel of every pixel set to `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3], state: ColorState) -> Self {
        let n = width * height;
        let mut data = Vec::with_capacity(n * 3);
        for &v in &rgb {
            data.extend(std::iter::repeat_n(v, n));
        }
        PlanarImage {
            width,
            height,
            data,
            state,
        }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        state: ColorState,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut img = PlanarImage::filled(width, height, [0.0; 3], state);
        for y in 0..height {
            for x in 0..width {
                img.set_pixel(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn state(&self) -> ColorState {
        self.state
    }

    pub fn with_state(mut self, state: ColorState) -> Self {
        self.state = state;
        self
    }

    /// All samples, plane by plane.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let n = self.pixel_count();
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let n = self.pixel_count();
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[n + i] = rgb[1];
        self.data[2 * n + i] = rgb[2];
    }

    /// Applies `f` to every sample, keeping the state.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> PlanarImage {
        PlanarImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
            state: self.state,
        }
    }

    /// Clips every sample to `[0, 1]`, returning the number of samples changed.
    pub fn clip_unit(&mut self) -> usize {
        let mut clipped = 0;
        for v in &mut self.data {
            if *v < 0.0 || *v > 1.0 {
                *v = v.clamp(0.0, 1.0);
                clipped += 1;
            }
        }
        clipped
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidImage(format!(
                "non-finite value {} at sample {}",
                self.data[i], i
            ))),
        }
    }

    /// Mean over all samples of all channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Mean Rec. 709 luma over pixels.
    pub fn mean_luminance(&self) -> f64 {
        let n = self.pixel_count();
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let total: f64 = (0..n)
            .map(|i| 0.2126 * r[i] + 0.7152 * g[i] + 0.0722 * b[i])
            .sum();
        total / n.max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &PlanarImage) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "image sizes differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
