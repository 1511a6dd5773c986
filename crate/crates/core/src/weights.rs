//! SSIM-driven weights for the weighted MSE.
//!
//! Under uniform quantization with step Δ in a `Q`-orthonormal transform the
//! pixel error variance at `i` is `Δ²/(12 q_i)`, so the local SSIM becomes
//! `q_i / (q_i + γ_i)` with `γ_i = Δ² / (12 (2σ_i² + c₂))`. Maximizing the mean
//! of that under `Σ q_i ≤ n` has the closed form
//!
//! ```text
//! q_i = (n + Σγ) √γ_i / Σ√γ − γ_i
//! ```
//!
//! which is what [`optimal_weights`] returns whenever every `q_i` clears the
//! floor.

use crate::error::{Error, Result};
use crate::imaging::LocalStatsMap;

/// `c₁ = (0.01 · 255)²`.
pub const SSIM_C1: f64 = 6.5025;
/// `c₂ = (0.03 · 255)²`.
pub const SSIM_C2: f64 = 58.5225;
/// Smallest weight handed to the transform.
pub const DEFAULT_Q_FLOOR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct GammaMap {
    pub width: usize,
    pub height: usize,
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub width: usize,
    pub height: usize,
    pub q: Vec<f64>,
}

impl WeightMap {
    /// All-ones weights, under which the WMSE is the MSE.
    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, q: vec![1.0; width * height] }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// `γ_i = Δ² / (12 (2σ_i² + c₂))`.
pub fn gamma_map(stats: &LocalStatsMap, delta: f64, c2: f64) -> Result<GammaMap> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    if !(c2 > 0.0) {
        return Err(Error::InvalidArgument(format!("c2 must be positive, got {c2}")));
    }
    let num = delta * delta / 12.0;
    Ok(GammaMap {
        width: stats.width,
        height: stats.height,
        gamma: stats.var.iter().map(|&v| num / (2.0 * v + c2)).collect(),
    })
}

/// SSIM-optimal weights with the default floor.
pub fn optimal_weights(g: &GammaMap) -> Result<WeightMap> {
    optimal_weights_with_floor(g, DEFAULT_Q_FLOOR)
}

/// Maximizes `Σ q_i / (q_i + γ_i)` subject to `Σ q_i = n` and `q_i ≥ floor`.
///
/// Every solution has the form `q_i = max(floor, t√γ_i − γ_i)`. Without active
/// bounds `t = (n + Σγ)/Σ√γ`; otherwise the clamped set is located by
/// bisection on `t` and `t` is then solved exactly on the free set, which
/// redistributes the clamped mass over the remaining pixels.
pub fn optimal_weights_with_floor(g: &GammaMap, floor: f64) -> Result<WeightMap> {
    let gamma = &g.gamma;
    let n = gamma.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = gamma.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("gamma values must be positive, got {bad}")));
    }
    if !(floor >= 0.0) || floor * n as f64 >= n as f64 {
        return Err(Error::InvalidArgument(format!("q floor {floor} must lie in [0, 1)")));
    }
    if gamma.iter().all(|&v| v == gamma[0]) {
        return Ok(WeightMap::ones(g.width, g.height));
    }
    let nf = n as f64;
    let sqrt: Vec<f64> = gamma.iter().map(|v| v.sqrt()).collect();
    let sum_gamma: f64 = gamma.iter().sum();
    let sum_sqrt: f64 = sqrt.iter().sum();
    let t = (nf + sum_gamma) / sum_sqrt;
    let closed: Vec<f64> = gamma.iter().zip(&sqrt).map(|(g, s)| t * s - g).collect();
    if closed.iter().all(|&q| q >= floor) {
        return Ok(WeightMap { width: g.width, height: g.height, q: closed });
    }

    let total = |t: f64| -> f64 { gamma.iter().zip(&sqrt).map(|(g, s)| (t * s - g).max(floor)).sum() };
    // total(0) = n·floor < n ≤ total(t)
    let (mut lo, mut hi) = (0.0, t);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) < nf {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let free: Vec<bool> = gamma.iter().zip(&sqrt).map(|(g, s)| hi * s - g > floor).collect();
    let clamped = free.iter().filter(|f| !**f).count() as f64;
    let (free_gamma, free_sqrt) =
        gamma.iter().zip(&sqrt).zip(&free).filter(|(_, f)| **f).fold((0.0, 0.0), |(a, b), ((g, s), _)| (a + g, b + s));
    let t = (nf - clamped * floor + free_gamma) / free_sqrt;
    let q =
        gamma.iter().zip(&sqrt).zip(&free).map(|((g, s), &f)| if f { (t * s - g).max(floor) } else { floor }).collect();
    Ok(WeightMap { width: g.width, height: g.height, q })
}

/// Mean local SSIM predicted by the noise model, `(1/n) Σ q_i/(q_i + γ_i)`.
pub fn predicted_ssim(q: &[f64], gamma: &[f64]) -> f64 {
    q.iter().zip(gamma).map(|(q, g)| q / (q + g)).sum::<f64>() / q.len() as f64
}

/// Weight assigned to each variance when the image's variance histogram is
/// exactly `var_range`; sorted by variance.
pub fn weight_curve(delta: f64, var_range: &[f64]) -> Result<Vec<(f64, f64)>> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    if var_range.is_empty() {
        return Ok(Vec::new());
    }
    let stats = LocalStatsMap::from_variances(var_range.len(), 1, var_range.to_vec())?;
    let weights = optimal_weights(&gamma_map(&stats, delta, SSIM_C2)?)?;
    let mut curve: Vec<(f64, f64)> = var_range.iter().copied().zip(weights.q).collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(curve)
}

/// `variance,q` CSV.
pub fn weight_curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("variance,q\n");
    for (v, q) in curve {
        out.push_str(&format!("{v},{q}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gmap(gamma: Vec<f64>) -> GammaMap {
        GammaMap { width: gamma.len(), height: 1, gamma }
    }

    fn stats(var: Vec<f64>) -> LocalStatsMap {
        LocalStatsMap::from_variances(var.len(), 1, var).unwrap()
    }

    #[test]
    fn gamma_at_zero_variance() {
        let g = gamma_map(&stats(vec![0.0]), 8.0, SSIM_C2).unwrap();
        // independent evaluation of 64 / (12 · 58.5225)
        assert!((g.gamma[0] - 0.091_133_040_0).abs() < 1e-9);
        assert!((SSIM_C2 - (0.03f64 * 255.0).powi(2)).abs() < 1e-12);
        assert!((SSIM_C1 - (0.01f64 * 255.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn gamma_scaling_and_monotonicity() {
        let s = stats(vec![0.0, 5.0, 50.0, 500.0, 5000.0]);
        let a = gamma_map(&s, 6.0, SSIM_C2).unwrap();
        let b = gamma_map(&s, 12.0, SSIM_C2).unwrap();
        for (x, y) in a.gamma.iter().zip(&b.gamma) {
            assert!((y / x - 4.0).abs() < 1e-12);
        }
        assert!(a.gamma.windows(2).all(|w| w[0] > w[1]));
        assert!(matches!(gamma_map(&s, 0.0, SSIM_C2), Err(Error::NonPositiveDelta(_))));
        assert!(gamma_map(&s, 1.0, 0.0).is_err());
    }

    #[test]
    fn equal_gamma_gives_unit_weights() {
        for g in [0.01, 0.3, 2.0] {
            let w = optimal_weights(&gmap(vec![g; 37])).unwrap();
            assert!(w.q.iter().all(|&q| q == 1.0));
        }
    }

    #[test]
    fn two_pixel_example() {
        let w = optimal_weights(&gmap(vec![1.0, 4.0])).unwrap();
        assert!((w.q[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((w.q[1] - 2.0 / 3.0).abs() < 1e-12);
        for (q, g) in w.q.iter().zip([1.0, 4.0]) {
            assert!((g / (q + g).powi(2) - 9.0 / 49.0).abs() < 1e-12);
        }
        // grid search over the line q0 + q1 = 2
        let objective = |q0: f64| q0 / (q0 + 1.0) + (2.0 - q0) / (2.0 - q0 + 4.0);
        let best = (0..=200_000)
            .map(|i| i as f64 * 2.0 / 200_000.0)
            .max_by(|a, b| objective(*a).total_cmp(&objective(*b)))
            .unwrap();
        assert!((best - w.q[0]).abs() < 1e-4);
    }

    #[test]
    fn sums_to_n_and_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(2..500);
            let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.005..0.4)).collect();
            let w = optimal_weights(&gmap(gamma.clone())).unwrap();
            assert!((w.q.iter().sum::<f64>() - n as f64).abs() < 1e-6);
            let kkt: Vec<f64> = w.q.iter().zip(&gamma).map(|(q, g)| g / (q + g).powi(2)).collect();
            assert!(kkt.iter().all(|k| (k - kkt[0]).abs() < 1e-8));
        }
    }

    #[test]
    fn skewed_gamma_is_floored_and_renormalized() {
        // the closed form goes negative for the large-gamma pixel
        let gamma = vec![1.0, 1.0, 1.0, 100.0];
        let t = (4.0 + gamma.iter().sum::<f64>()) / gamma.iter().map(|g: &f64| g.sqrt()).sum::<f64>();
        assert!(t * 10.0 - 100.0 < 0.0);
        let w = optimal_weights(&gmap(gamma.clone())).unwrap();
        assert_eq!(w.q[3], DEFAULT_Q_FLOOR);
        assert!((w.q.iter().sum::<f64>() - 4.0).abs() < 1e-9);
        assert!(w.q.iter().all(|&q| q >= DEFAULT_Q_FLOOR));
        // free pixels still share a KKT multiplier
        let kkt: Vec<f64> = w.q[..3].iter().zip(&gamma).map(|(q, g)| g / (q + g).powi(2)).collect();
        assert!(kkt.iter().all(|k| (k - kkt[0]).abs() < 1e-10));

        let w = optimal_weights_with_floor(&gmap(gamma), 0.2).unwrap();
        assert_eq!(w.q[3], 0.2);
        assert!((w.q.iter().sum::<f64>() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn floored_solution_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gamma: Vec<f64> = (0..32).map(|i| if i % 5 == 0 { 40.0 } else { rng.random_range(0.001..0.1) }).collect();
        let w = optimal_weights(&gmap(gamma.clone())).unwrap();
        let base = predicted_ssim(&w.q, &gamma);
        for _ in 0..500 {
            let (i, j) = (rng.random_range(0..32), rng.random_range(0..32));
            let eps = rng.random_range(0.0..0.05f64).min(w.q[j] - DEFAULT_Q_FLOOR);
            let mut q = w.q.clone();
            q[i] += eps;
            q[j] -= eps;
            assert!(predicted_ssim(&q, &gamma) <= base + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(optimal_weights(&gmap(vec![])), Err(Error::EmptyInput)));
        assert!(optimal_weights(&gmap(vec![1.0, 0.0])).is_err());
        assert!(optimal_weights_with_floor(&gmap(vec![1.0]), 1.0).is_err());
    }

    #[test]
    fn curve_shapes() {
        let flat = weight_curve(8.0, &[25.0; 10]).unwrap();
        assert!(flat.iter().all(|&(_, q)| (q - 1.0).abs() < 1e-12));

        let two = weight_curve(8.0, &[1000.0, 0.0]).unwrap();
        assert_eq!(two[0].0, 0.0);
        // oracle: direct closed form on the two gammas
        let g: Vec<f64> = [0.0, 1000.0].iter().map(|v| 64.0 / (12.0 * (2.0 * v + SSIM_C2))).collect();
        let t = (2.0 + g[0] + g[1]) / (g[0].sqrt() + g[1].sqrt());
        assert!((two[0].1 - (t * g[0].sqrt() - g[0])).abs() < 1e-12);
        assert!(two[0].1 > 1.0 && two[1].1 < 1.0);

        let vars: Vec<f64> = (0..=200).map(|v| (v * 10) as f64).collect();
        let curve = weight_curve(8.0, &vars).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));

        let csv = weight_curve_csv(&two);
        assert!(csv.starts_with("variance,q\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
