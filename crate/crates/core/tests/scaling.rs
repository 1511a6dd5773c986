use std::time::{Duration, Instant};

use iagft::weights::{optimal_weights_with_floor, GammaMap, DEFAULT_Q_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gamma(side: usize, rng: &mut ChaCha8Rng) -> GammaMap {
    let gamma = (0..side * side).map(|_| 10f64.powf(rng.random_range(-3.0..1.5))).collect();
    GammaMap { width: side, height: side, gamma }
}

fn median_time(g: &GammaMap) -> Duration {
    let mut times: Vec<Duration> = (0..7)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(optimal_weights_with_floor(std::hint::black_box(g), DEFAULT_Q_FLOOR).unwrap());
            start.elapsed()
        })
        .collect();
    times.sort();
    times[3]
}

#[test]
fn weight_evaluation_is_linear_in_pixel_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (small, large) = (gamma(256, &mut rng), gamma(1024, &mut rng));
    median_time(&small);
    let ratio = median_time(&large).as_secs_f64() / median_time(&small).as_secs_f64();
    // 16× the pixels; linear scaling within a factor of two
    assert!((8.0..=32.0).contains(&ratio), "time ratio {ratio:.2} for 16× pixels");
}
