use lowlight_core::noise::sample_params;
use lowlight_core::pipeline::unprocess;
use lowlight_core::{AppConfig, ColorState, PlanarImage, SeededRng};
use rand::Rng;

/// Smooth random color field: a few blended blobs over a tinted background.
fn scene(rng: &mut SeededRng, w: usize, h: usize) -> PlanarImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)],
                rng.random_range(4.0..16.0),
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            )
        })
        .collect();
    PlanarImage::from_fn(w, h, ColorState::SrgbEncoded, |x, y| {
        let mut px = base;
        for (c, r, color) in &blobs {
            let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
            let a = (-d2 / (2.0 * r * r)).exp();
            for ch in 0..3 {
                px[ch] = px[ch] * (1.0 - a) + color[ch] * a;
            }
        }
        px.map(|v| (v * 255.0).round() / 255.0)
    })
}

#[test]
fn unprocessed_corpus_is_almost_entirely_non_negative() {
    let config = AppConfig::default();
    let rng = &mut SeededRng::new(2024, 0);
    let (mut total, mut negative) = (0usize, 0usize);
    for _ in 0..100 {
        let img = scene(rng, 32, 24);
        let params = sample_params(rng, &config.ranges, config.ccms(), config.pipeline.ccm_mode).unwrap();
        let raw = unprocess(&img, &params).unwrap();
        total += raw.data().len();
        negative += raw.data().iter().filter(|&&v| v < 0.0).count();
    }
    let share = 1.0 - negative as f64 / total as f64;
    assert!(share >= 0.999, "only {share:.5} of samples non-negative");
}
