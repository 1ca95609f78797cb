//! Shared inputs for the benchmarks under `benches/`.

use stereocal::scene::{generate, SceneConfig};
use stereocal::Dataset;

/// Default synthetic scene with the given noise and image count.
pub fn fixture(noise_sigma: f64, n_images: usize) -> Dataset {
    generate(&SceneConfig {
        noise_sigma,
        n_images,
        seed: 1,
        ..SceneConfig::default()
    })
    .expect("default scene is feasible")
}
