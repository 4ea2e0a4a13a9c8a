//! Fixtures shared by the benchmarks: synthetic MNIST-sized pattern sets, so
//! benches run without the dataset on disk.

use ecm_core::dataset::{add_noise, Pattern, PatternSet, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `n` random 28x28 binary images with roughly MNIST's ink density, labels cycling over 10 classes.
pub fn synthetic_mnist(n: usize, seed: u64) -> PatternSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blank = Pattern::zeros(784);
    PatternSet {
        width: 28,
        height: 28,
        classes: 10,
        split: Split::Train,
        items: (0..n).map(|i| (add_noise(&blank, 0.134, &mut rng), i % 10)).collect(),
    }
}
