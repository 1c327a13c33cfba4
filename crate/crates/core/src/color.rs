//! Invertible per-stage color transforms of the camera ISP chain.
//!
//! Every forward stage has an exact inverse: gamma / inverse gamma,
//! smoothstep tone curve / its closed-form inverse, white-balance gains /
//! reciprocal gains, and color correction matrix / matrix inverse.

use std::fmt;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorState, PlanarImage};

/// Clamp floor applied before the power law.
pub const GAMMA_EPSILON: f64 = 1e-5;
/// Admissible gamma exponents.
pub const GAMMA_RANGE: (f64, f64) = (2.0, 3.5);

const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma: f64,
    pub epsilon: f64,
}

impl GammaParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(GAMMA_RANGE.0..=GAMMA_RANGE.1).contains(&gamma) {
            return Err(Error::Parameter(format!(
                "gamma {gamma} outside [{}, {}]",
                GAMMA_RANGE.0, GAMMA_RANGE.1
            )));
        }
        Ok(GammaParams {
            gamma,
            epsilon: GAMMA_EPSILON,
        })
    }
}

/// `max(x, eps)^(1/gamma)`; linear in, encoded out.
pub fn gamma_correct(img: &PlanarImage, g: GammaParams) -> Result<PlanarImage> {
    if !img.state().is_linear() {
        return Err(Error::State {
            expected: "linear",
            found: img.state(),
        });
    }
    img.check_finite()?;
    let inv = 1.0 / g.gamma;
    Ok(img
        .map(|x| x.max(g.epsilon).powf(inv))
        .with_state(ColorState::SrgbEncoded))
}

/// `max(x, eps)^gamma`; encoded in, linear sRGB out.
pub fn gamma_invert(img: &PlanarImage, g: GammaParams) -> Result<PlanarImage> {
    if img.state() != ColorState::SrgbEncoded {
        return Err(Error::State {
            expected: "srgb-encoded",
            found: img.state(),
        });
    }
    img.check_finite()?;
    Ok(img
        .map(|x| x.max(g.epsilon).powf(g.gamma))
        .with_state(ColorState::LinearSrgb))
}

#[inline]
pub fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

#[inline]
pub fn smoothstep_inverse(y: f64) -> f64 {
    0.5 - ((1.0 - 2.0 * y).asin() / 3.0).sin()
}

/// Applies `3x^2 - 2x^3`. Values outside `[0, 1]` are clamped first and
/// counted.
pub fn tone_map_counted(img: &PlanarImage) -> Result<(PlanarImage, usize)> {
    tone_apply(img, smoothstep)
}

pub fn tone_map(img: &PlanarImage) -> Result<PlanarImage> {
    tone_map_counted(img).map(|(out, _)| out)
}

/// Exact inverse of [`tone_map`] on `[0, 1]`.
pub fn tone_invert_counted(img: &PlanarImage) -> Result<(PlanarImage, usize)> {
    tone_apply(img, smoothstep_inverse)
}

pub fn tone_invert(img: &PlanarImage) -> Result<PlanarImage> {
    tone_invert_counted(img).map(|(out, _)| out)
}

fn tone_apply(img: &PlanarImage, f: fn(f64) -> f64) -> Result<(PlanarImage, usize)> {
    img.check_finite()?;
    let clamped = img
        .data()
        .iter()
        .filter(|x| !(0.0..=1.0).contains(*x))
        .count();
    if clamped > 0 {
        log::warn!("tone curve clamped {clamped} out-of-range samples");
    }
    Ok((img.map(|x| f(x.clamp(0.0, 1.0))), clamped))
}

/// Scales R by `g_r` and B by `g_b`; G is untouched. No clipping.
pub fn white_balance(img: &PlanarImage, g_r: f64, g_b: f64) -> Result<PlanarImage> {
    for (name, g) in [("g_r", g_r), ("g_b", g_b)] {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be positive, got {g}")));
        }
    }
    img.check_finite()?;
    let mut out = img.clone();
    out.plane_mut(0).iter_mut().for_each(|v| *v *= g_r);
    out.plane_mut(2).iter_mut().for_each(|v| *v *= g_b);
    Ok(out)
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matrix3(pub [[f64; 3]; 3]);

impl fmt::Debug for Matrix3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl Matrix3 {
    pub const IDENTITY: Matrix3 = Matrix3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(a: f64, b: f64, c: f64) -> Matrix3 {
        Matrix3([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Adjugate inverse; errors when `|det| < 1e-12`.
    pub fn inverse(&self) -> Result<Matrix3> {
        let det = self.det();
        if !(det.abs() >= SINGULAR_DET) {
            return Err(Error::Parameter(format!("singular matrix (det = {det:e})")));
        }
        let m = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for (r, row) in adj.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                inv[r][c] = v / det;
            }
        }
        Ok(Matrix3(inv))
    }

    pub fn mul(&self, other: &Matrix3) -> Matrix3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[r][k] * other.0[k][c]).sum();
            }
        }
        Matrix3(out)
    }

    #[inline]
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn max_abs_diff(&self, other: &Matrix3) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel `M * rgb`. Toggles `LinearCamera <-> LinearSrgb`.
pub fn apply_ccm(img: &PlanarImage, m: &Matrix3) -> Result<PlanarImage> {
    let det = m.det();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::Parameter(format!("singular CCM (det = {det:e})")));
    }
    let next = match img.state() {
        ColorState::LinearCamera => ColorState::LinearSrgb,
        ColorState::LinearSrgb => ColorState::LinearCamera,
        found => {
            return Err(Error::State {
                expected: "linear",
                found,
            })
        }
    };
    img.check_finite()?;
    let mut out = img.clone().with_state(next);
    let n = img.pixel_count();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = out.data_mut();
    for i in 0..n {
        let v = m.apply([r[i], g[i], b[i]]);
        data[i] = v[0];
        data[n + i] = v[1];
        data[2 * n + i] = v[2];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CcmMode {
    /// One matrix chosen uniformly per image.
    #[default]
    Pick,
    /// Convex combination with Dirichlet(1, ..., 1) weights.
    Mix,
}

/// How the per-image CCM was chosen; enough to rebuild it from the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CcmSelection {
    Pick { index: usize, name: String },
    Mix { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedCcm {
    pub name: String,
    /// Camera RGB -> linear sRGB.
    pub matrix: Matrix3,
    pub inverse: Matrix3,
}

/// The camera color correction matrices a degradation may draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct CcmSet {
    entries: Vec<NamedCcm>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CcmFile {
    #[serde(default)]
    ccm: Vec<CcmEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CcmEntry {
    name: String,
    matrix: Vec<Vec<f64>>,
}

const DEFAULT_CCMS: &str = include_str!("../data/ccms.toml");

impl CcmSet {
    /// The four bundled device matrices.
    pub fn builtin() -> CcmSet {
        CcmSet::from_toml(DEFAULT_CCMS).expect("bundled CCM file is valid")
    }

    pub fn from_toml(text: &str) -> Result<CcmSet> {
        let file: CcmFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("CCM file: {e}")))?;
        let mut entries = Vec::with_capacity(file.ccm.len());
        for entry in file.ccm {
            if entry.matrix.len() != 3 {
                return Err(Error::Config(format!(
                    "CCM '{}': expected 3 rows, found {}",
                    entry.name,
                    entry.matrix.len()
                )));
            }
            let mut m = [[0.0; 3]; 3];
            for (r, row) in entry.matrix.iter().enumerate() {
                if row.len() != 3 {
                    return Err(Error::Config(format!(
                        "CCM '{}': row {} has {} entries, expected 3",
                        entry.name,
                        r,
                        row.len()
                    )));
                }
                m[r].copy_from_slice(row);
            }
            entries.push(NamedCcm::new(entry.name, Matrix3(m))?);
        }
        CcmSet::new(entries)
    }

    pub fn new(entries: Vec<NamedCcm>) -> Result<CcmSet> {
        if entries.is_empty() {
            return Err(Error::Config("CCM set is empty".into()));
        }
        Ok(CcmSet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[NamedCcm] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&NamedCcm> {
        self.entries.get(index)
    }

    pub fn pick(&self, index: usize) -> Result<(Matrix3, CcmSelection)> {
        let entry = self.entries.get(index).ok_or_else(|| {
            Error::Parameter(format!("CCM index {index} out of range (have {})", self.len()))
        })?;
        Ok((
            entry.matrix,
            CcmSelection::Pick {
                index,
                name: entry.name.clone(),
            },
        ))
    }

    /// `sum_i w_i M_i`; weights must be non-negative and sum to one.
    pub fn mix(&self, weights: &[f64]) -> Result<(Matrix3, CcmSelection)> {
        if weights.len() != self.len() {
            return Err(Error::Parameter(format!(
                "{} mixture weights for {} CCMs",
                weights.len(),
                self.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "mixture weights must be non-negative and sum to 1, got {weights:?}"
            )));
        }
        let mut m = [[0.0; 3]; 3];
        for (w, entry) in weights.iter().zip(&self.entries) {
            for (row, src) in m.iter_mut().zip(&entry.matrix.0) {
                for (v, s) in row.iter_mut().zip(src) {
                    *v += w * s;
                }
            }
        }
        let m = Matrix3(m);
        m.inverse()?;
        Ok((
            m,
            CcmSelection::Mix {
                weights: weights.to_vec(),
            },
        ))
    }

    /// Rebuilds the matrix a selection record refers to.
    pub fn compose(&self, selection: &CcmSelection) -> Result<Matrix3> {
        match selection {
            CcmSelection::Pick { index, .. } => self.pick(*index).map(|(m, _)| m),
            CcmSelection::Mix { weights } => self.mix(weights).map(|(m, _)| m),
        }
    }
}

impl NamedCcm {
    pub fn new(name: impl Into<String>, matrix: Matrix3) -> Result<NamedCcm> {
        let name = name.into();
        let inverse = matrix
            .inverse()
            .map_err(|e| Error::Config(format!("CCM '{name}': {e}")))?;
        Ok(NamedCcm {
            name,
            matrix,
            inverse,
        })
    }
}

/// Draws the per-image color correction matrix.
pub fn select_ccm<R: Rng + ?Sized>(
    rng: &mut R,
    ccms: &CcmSet,
    mode: CcmMode,
) -> Result<(Matrix3, CcmSelection)> {
    if ccms.is_empty() {
        return Err(Error::Config("CCM set is empty".into()));
    }
    match mode {
        CcmMode::Pick => ccms.pick(rng.random_range(0..ccms.len())),
        CcmMode::Mix => {
            let mut w: Vec<f64> = (0..ccms.len()).map(|_| rng.sample(Exp1)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            ccms.mix(&w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(vals: &[f64]) -> PlanarImage {
        let n = vals.len();
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..3 {
            data.extend_from_slice(vals);
        }
        PlanarImage::new(n, 1, data, ColorState::LinearSrgb).unwrap()
    }

    fn encoded(vals: &[f64]) -> PlanarImage {
        linear(vals).with_state(ColorState::SrgbEncoded)
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn gamma_examples() {
        let g25 = GammaParams::new(2.5).unwrap();
        let g2 = GammaParams::new(2.0).unwrap();
        let out = gamma_correct(&linear(&[1.0]), g25).unwrap();
        assert_eq!(out.data()[0], 1.0);
        assert_eq!(out.state(), ColorState::SrgbEncoded);
        let out = gamma_correct(&linear(&[0.25, 0.0]), g2).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-15);
        assert!((out.data()[1] - 3.1623e-3).abs() < 1e-7);

        let back = gamma_invert(&encoded(&[0.5, 1.0]), g2).unwrap();
        assert!((back.data()[0] - 0.25).abs() < 1e-15);
        assert_eq!(back.data()[1], 1.0);
        assert_eq!(gamma_invert(&encoded(&[1.0]), g25).unwrap().data()[0], 1.0);
    }

    #[test]
    fn gamma_round_trip_grid() {
        let xs = grid(1e-4, 1.0, 1000);
        for gamma in [2.0, 2.2, 2.8, 3.5] {
            let g = GammaParams::new(gamma).unwrap();
            let back = gamma_invert(&gamma_correct(&linear(&xs), g).unwrap(), g).unwrap();
            assert!(back.max_abs_diff(&linear(&xs)) < 1e-6, "gamma {gamma}");
        }
    }

    #[test]
    fn gamma_rejects_bad_inputs() {
        assert!(GammaParams::new(1.5).is_err());
        let g = GammaParams::new(2.2).unwrap();
        assert!(matches!(
            gamma_correct(&encoded(&[0.5]), g),
            Err(Error::State { .. })
        ));
        let mut bad = linear(&[0.5]);
        bad.data_mut()[1] = f64::INFINITY;
        assert!(matches!(gamma_correct(&bad, g), Err(Error::InvalidImage(_))));
    }

    #[test]
    fn tone_examples() {
        let out = tone_map(&encoded(&[0.0, 1.0, 0.5, 0.25])).unwrap();
        assert_eq!(&out.data()[..4], &[0.0, 1.0, 0.5, 0.15625]);
        let inv = tone_invert(&encoded(&[0.5, 1.0, 0.0])).unwrap();
        assert!((inv.data()[0] - 0.5).abs() < 1e-15);
        assert!((inv.data()[1] - 1.0).abs() < 1e-15);
        assert!(inv.data()[2].abs() < 1e-15);
    }

    #[test]
    fn tone_round_trip_grid() {
        let xs = grid(0.0, 1.0, 1000);
        let img = encoded(&xs);
        let back = tone_invert(&tone_map(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-6);
        let fwd = tone_map(&tone_invert(&img).unwrap()).unwrap();
        assert!(fwd.max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn tone_clamps_and_counts() {
        let (out, clamped) = tone_map_counted(&encoded(&[-0.2, 0.5, 1.3])).unwrap();
        assert_eq!(clamped, 6);
        assert_eq!(&out.data()[..3], &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn white_balance_examples() {
        let img = PlanarImage::new(1, 1, vec![0.1, 0.2, 0.3], ColorState::LinearCamera).unwrap();
        let out = white_balance(&img, 2.0, 1.5).unwrap();
        for (a, b) in out.data().iter().zip([0.2, 0.2, 0.45]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(white_balance(&img, 1.0, 1.0).unwrap(), img);
        let back = white_balance(&out, 1.0 / 2.0, 1.0 / 1.5).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-7);
        assert!(matches!(
            white_balance(&img, 0.0, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(white_balance(&img, 1.0, -2.0).is_err());
    }

    #[test]
    fn ccm_examples() {
        let img = PlanarImage::new(1, 1, vec![0.1, 0.1, 0.1], ColorState::LinearCamera).unwrap();
        let same = apply_ccm(&img, &Matrix3::IDENTITY).unwrap();
        assert_eq!(same.data(), img.data());
        assert_eq!(same.state(), ColorState::LinearSrgb);
        let scaled = apply_ccm(&img, &Matrix3::diag(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(scaled.data(), &[0.2, 0.1, 0.1]);

        let singular = Matrix3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            apply_ccm(&img, &singular),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn builtin_ccms_are_invertible_and_preserve_white() {
        let set = CcmSet::builtin();
        assert_eq!(set.len(), 4);
        let names: Vec<_> = set.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(
            names,
            ["Sony A7R", "Olympus E-M10", "Sony RX100 IV", "Huawei Nexus 6P"]
        );
        for e in set.entries() {
            let prod = e.matrix.mul(&e.inverse);
            assert!(prod.max_abs_diff(&Matrix3::IDENTITY) < 1e-6, "{}", e.name);
            let white = e.inverse.apply([1.0, 1.0, 1.0]);
            assert!(white.iter().all(|v| (v - 1.0).abs() < 1e-9), "{}", e.name);
        }
    }

    #[test]
    fn ccm_round_trip_with_builtin() {
        let xs = grid(0.0, 1.0, 1000);
        let img = PlanarImage::from_fn(1000, 1, ColorState::LinearCamera, |x, _| {
            [xs[x], xs[999 - x], (xs[x] * 7.0).fract()]
        });
        for e in CcmSet::builtin().entries() {
            let back = apply_ccm(&apply_ccm(&img, &e.matrix).unwrap(), &e.inverse).unwrap();
            assert!(back.max_abs_diff(&img) < 1e-6);
            assert_eq!(back.state(), ColorState::LinearCamera);
        }
    }

    #[test]
    fn ccm_file_errors_name_the_matrix_and_row() {
        let text = r#"
[[ccm]]
name = "Broken"
matrix = [[1.0, 0.0, 0.0], [0.0, 1.0], [0.0, 0.0, 1.0]]
"#;
        let msg = CcmSet::from_toml(text).unwrap_err().to_string();
        assert!(msg.contains("Broken") && msg.contains("row 1"), "{msg}");
        assert!(matches!(CcmSet::from_toml(""), Err(Error::Config(_))));
        let unknown = "[[ccm]]\nname = \"x\"\nmatrix = []\nextra = 1\n";
        assert!(CcmSet::from_toml(unknown).is_err());
    }

    #[test]
    fn select_pick_and_mix() {
        let set = CcmSet::builtin();
        let (m, sel) = set.pick(0).unwrap();
        assert_eq!(m, set.entries()[0].matrix);
        assert_eq!(
            sel,
            CcmSelection::Pick {
                index: 0,
                name: "Sony A7R".into()
            }
        );
        let (mixed, _) = set.mix(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(mixed, m);
        assert!(set.mix(&[0.5, 0.5, 0.5, -0.5]).is_err());
    }

    #[test]
    fn mixture_weights_form_a_simplex() {
        let set = CcmSet::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let (m, sel) = select_ccm(&mut rng, &set, CcmMode::Mix).unwrap();
            let CcmSelection::Mix { weights } = &sel else {
                panic!("expected mixture")
            };
            assert!(weights.iter().all(|w| *w >= 0.0));
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(set.compose(&sel).unwrap(), m);
        }
    }

    #[test]
    fn pick_mode_is_uniform_enough() {
        let set = CcmSet::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            if let (_, CcmSelection::Pick { index, .. }) =
                select_ccm(&mut rng, &set, CcmMode::Pick).unwrap()
            {
                counts[index] += 1;
            }
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
    }

    proptest! {
        #[test]
        fn gamma_and_tone_are_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, gamma in 2.0f64..3.5) {
            prop_assume!(a < b);
            let g = GammaParams::new(gamma).unwrap();
            let out = gamma_correct(&linear(&[a.max(2e-5), b.max(3e-5)]), g).unwrap();
            prop_assert!(out.data()[0] < out.data()[1] || a.max(2e-5) >= b.max(3e-5));
            prop_assert!(smoothstep(a) < smoothstep(b));
        }

        #[test]
        fn ccm_is_linear(
            x in proptest::array::uniform3(-1.0f64..2.0),
            y in proptest::array::uniform3(-1.0f64..2.0),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            idx in 0usize..4,
        ) {
            let m = CcmSet::builtin().entries()[idx].matrix;
            let combo = [a * x[0] + b * y[0], a * x[1] + b * y[1], a * x[2] + b * y[2]];
            let lhs = m.apply(combo);
            let (mx, my) = (m.apply(x), m.apply(y));
            for c in 0..3 {
                prop_assert!((lhs[c] - (a * mx[c] + b * my[c])).abs() < 1e-6);
            }
        }
    }
}
