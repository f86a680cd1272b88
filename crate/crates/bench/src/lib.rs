//! Seeded fixtures for the benchmarks.

use mtac::synth::{generate_corpus, inject_label_noise};
use mtac::{DatasetManifest, GeneratorConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

pub fn alphas(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    (0..n).map(|_| rng.random_range(0.05..1.0)).collect()
}

pub fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

pub fn au_bits(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<u8> {
    Array2::from_shape_simple_fn((n, m), || u8::from(rng.random_bool(0.3)))
}

/// The standard 7-class corpus with 30% flipped labels.
pub fn noisy_corpus(per_class: usize) -> DatasetManifest {
    let mut g = GeneratorConfig::standard(7, 8, 32, 100);
    g.train_per_class = vec![per_class; 7];
    g.test_per_class = vec![per_class / 4; 7];
    let corpus = generate_corpus(&g).expect("standard config is valid");
    inject_label_noise(&corpus, 0.3, 200).expect("ratio in range").0
}
