#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmix_core::HyperspectralScene;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

/// Columns drawn uniformly and rescaled to sum to one.
pub fn fractions(rng: &mut ChaCha8Rng, p: usize, m: usize) -> Array2<f64> {
    let mut h = positive(rng, p, m, 0.01, 1.0);
    for mut col in h.columns_mut() {
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    h
}

/// `Y = W·H` plus a small nonnegative perturbation.
pub fn random_scene(seed: u64, bands: usize, pixels: usize, p: usize) -> HyperspectralScene {
    let mut r = rng(seed);
    let w = positive(&mut r, bands, p, 0.05, 1.0);
    let h = fractions(&mut r, p, pixels);
    let noise = positive(&mut r, bands, pixels, 0.0, 0.01);
    HyperspectralScene::new(w.dot(&h) + noise).unwrap()
}
