//! Irregularity-aware graph Fourier transforms.
//!
//! Given a variation operator `L` and positive weights `q`, the `(L, Q)`
//! Fourier modes are the generalized eigenvectors `L u = λ Q u` normalized so
//! that `UᵀQU = I`. The forward transform is `UᵀQ` and the inverse is `U`, so
//! squared error in the coefficient domain equals `Q`-weighted squared error in
//! the signal domain.
//!
//! With `Q = I` on the 8×8 grid this is the 2-D DCT-II, provided for the
//! baseline path as [`Dct2d`].

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::Laplacian;

/// Eigenvalues closer than this are treated as one degenerate eigenspace.
pub const CLUSTER_TOLERANCE: f64 = 1e-8;

const SNAP_TOLERANCE: f64 = 1e-9;

/// Diagonal of a positive definite `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerProductWeights(Vec<f64>);

impl InnerProductWeights {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some((index, &value)) = q.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositiveWeight { index, value });
        }
        Ok(Self(q))
    }

    /// `Q = k·I`.
    pub fn uniform(n: usize, k: f64) -> Result<Self> {
        Self::new(vec![k; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `⟨x, y⟩_Q = xᵀQy`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.0.iter().zip(x).zip(y).map(|((q, a), b)| q * a * b).sum()
    }
}

/// `(L, Q)`-graph Fourier modes.
#[derive(Clone, Debug, PartialEq)]
pub struct IAGFTBasis {
    /// Column `k` is mode `u_k`.
    modes: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    weights: InnerProductWeights,
}

/// Per-mode regional `Q`-energy with the total variation `u_kᵀLu_k = λ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeProfile {
    pub energy: Vec<f64>,
    pub variation: Vec<f64>,
}

/// Solves `L u = λ Q u` through `S = Q^{-1/2} L Q^{-1/2}`.
///
/// Eigenvalues come out ascending. Each mode is signed so that its entry of
/// largest magnitude (first on ties) is positive.
pub fn compute_iagft(lap: &Laplacian, weights: &InnerProductWeights) -> Result<IAGFTBasis> {
    let n = lap.n();
    if weights.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: weights.len() });
    }
    let q = weights.as_slice();
    let inv_sqrt: Vec<f64> = q.iter().map(|v| 1.0 / v.sqrt()).collect();
    let l = lap.matrix();
    let s = DMatrix::from_fn(n, n, |i, j| l[(i, j)] * (inv_sqrt[i] * inv_sqrt[j]));
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 10_000).ok_or(Error::EigensolverFailure)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigensolverFailure);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut modes = DMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|i| inv_sqrt[i] * eig.eigenvectors[(i, src)]).collect();
        fix_sign(&mut col);
        modes.set_column(k, &nalgebra::DVector::from_vec(col));
        eigenvalues.push(eig.eigenvalues[src]);
    }
    Ok(IAGFTBasis { modes, eigenvalues, weights: weights.clone() })
}

fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

/// `out[k] = Σ_i modes[i, k] · q[i] · x[i]`.
///
/// Shared by every transform so that bases with identical entries produce
/// bit-identical coefficients.
pub(crate) fn analyze(modes: &DMatrix<f64>, q: &[f64], x: &[f64], out: &mut [f64]) {
    let n = modes.nrows();
    for (k, o) in out.iter_mut().enumerate() {
        let col = &modes.as_slice()[k * n..(k + 1) * n];
        *o = col.iter().zip(q).zip(x).map(|((u, qi), xi)| u * (qi * xi)).sum();
    }
}

/// `out[i] = Σ_k modes[i, k] · c[k]`.
pub(crate) fn synthesize(modes: &DMatrix<f64>, c: &[f64], out: &mut [f64]) {
    let n = modes.nrows();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, &ck) in c.iter().enumerate() {
        let col = &modes.as_slice()[k * n..(k + 1) * n];
        for (o, u) in out.iter_mut().zip(col) {
            *o += u * ck;
        }
    }
}

impl IAGFTBasis {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> Vec<f64> {
        self.modes.column(k).iter().copied().collect()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn weights(&self) -> &InnerProductWeights {
        &self.weights
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), actual: len });
        }
        Ok(())
    }

    /// Coefficients `UᵀQx`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = vec![0.0; self.n()];
        analyze(&self.modes, self.weights.as_slice(), x, &mut out);
        Ok(out)
    }

    /// Signal `Uc`.
    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_len(c.len())?;
        let mut out = vec![0.0; self.n()];
        synthesize(&self.modes, c, &mut out);
        Ok(out)
    }

    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        analyze(&self.modes, self.weights.as_slice(), x, out);
    }

    pub(crate) fn inverse_into(&self, c: &[f64], out: &mut [f64]) {
        synthesize(&self.modes, c, out);
    }

    /// Regional `Q`-energy `Σ_{i∈mask} q_i u_k(i)²` of every mode.
    pub fn mode_energy_profile(&self, region_mask: &[bool]) -> Result<ModeProfile> {
        self.check_len(region_mask.len())?;
        let q = self.weights.as_slice();
        let energy = (0..self.n())
            .map(|k| {
                self.modes
                    .column(k)
                    .iter()
                    .zip(q)
                    .zip(region_mask)
                    .filter(|(_, &m)| m)
                    .map(|((u, qi), _)| qi * u * u)
                    .sum()
            })
            .collect();
        Ok(ModeProfile { energy, variation: self.eigenvalues.clone() })
    }

    /// Index ranges of modes whose eigenvalues agree within [`CLUSTER_TOLERANCE`].
    pub fn eigen_clusters(&self) -> Vec<std::ops::Range<usize>> {
        self.clusters_within(0.0)
    }

    /// Chains consecutive modes whose eigenvalue gap is at most
    /// `max(CLUSTER_TOLERANCE, relative · λ_upper)`.
    pub fn clusters_within(&self, relative: f64) -> Vec<std::ops::Range<usize>> {
        let mut clusters = Vec::new();
        let mut start = 0;
        for k in 1..=self.n() {
            if k == self.n() || {
                let (lo, hi) = (self.eigenvalues[k - 1], self.eigenvalues[k]);
                hi - lo > CLUSTER_TOLERANCE.max(relative * hi)
            } {
                clusters.push(start..k);
                start = k;
            }
        }
        clusters
    }

    /// Rotates every degenerate eigenspace onto the reference vectors it
    /// overlaps most, returning the reference index matched to each mode.
    ///
    /// Reference columns are assumed orthonormal in the standard inner
    /// product (e.g. [`Dct2d::matrix`]). When an aligned mode is a scaled
    /// reference vector to within `1e-9` it is replaced by that exact scaled
    /// vector, so `Q = k·I` reproduces the reference transform bit for bit
    /// whenever `1/√k` is exact.
    pub fn align_to(&self, reference: &DMatrix<f64>) -> (IAGFTBasis, Vec<usize>) {
        self.align_clusters(reference, &self.eigen_clusters())
    }

    /// [`IAGFTBasis::align_to`] over the looser clusters of
    /// [`IAGFTBasis::clusters_within`].
    ///
    /// Nearly uniform weights split degenerate eigenspaces by tiny amounts and
    /// leave arbitrary rotations of them; aligning those keeps the modes close
    /// to the reference. The result stays `Q`-orthonormal, but a rotated mode
    /// is only an eigenvector up to the spread of its cluster, and its
    /// eigenvalue is replaced by its variation `u_kᵀ L u_k`.
    pub fn align_within(&self, reference: &DMatrix<f64>, relative: f64) -> (IAGFTBasis, Vec<usize>) {
        self.align_clusters(reference, &self.clusters_within(relative))
    }

    fn align_clusters(
        &self,
        reference: &DMatrix<f64>,
        clusters: &[std::ops::Range<usize>],
    ) -> (IAGFTBasis, Vec<usize>) {
        let n = self.n();
        assert_eq!(reference.nrows(), n, "reference basis dimension");
        let q = self.weights.as_slice();
        let qr = DMatrix::from_fn(n, reference.ncols(), |i, j| q[i] * reference[(i, j)]);
        let mut modes = self.modes.clone();
        let mut eigenvalues = self.eigenvalues.clone();
        let mut matched = vec![0usize; n];
        let mut used = vec![false; reference.ncols()];

        for cluster in clusters {
            let m = cluster.len();
            let v = self.modes.columns(cluster.start, m).into_owned();
            // projection of each reference vector onto the cluster in the Q geometry
            let proj = v.transpose() * &qr;
            let mut candidates: Vec<(usize, f64)> =
                (0..reference.ncols()).filter(|&j| !used[j]).map(|j| (j, proj.column(j).norm_squared())).collect();
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut chosen: Vec<usize> = candidates.iter().take(m).map(|c| c.0).collect();
            chosen.sort_unstable();
            for &j in &chosen {
                used[j] = true;
            }

            let p = DMatrix::from_fn(m, m, |a, b| proj[(a, chosen[b])]);
            let svd = p.svd(true, true);
            let rotation = match (svd.u, svd.v_t) {
                (Some(u), Some(v_t)) => u * v_t,
                _ => DMatrix::identity(m, m),
            };
            let aligned = &v * &rotation;
            let spread = self.eigenvalues[cluster.end - 1] - self.eigenvalues[cluster.start];
            // variation of each rotated mode, from VᵀLV = Λ
            let variation: Vec<f64> = (0..m)
                .map(|b| (0..m).map(|a| rotation[(a, b)].powi(2) * self.eigenvalues[cluster.start + a]).sum())
                .collect();
            let mut order: Vec<usize> = (0..m).collect();
            if spread > CLUSTER_TOLERANCE {
                order.sort_by(|&a, &b| variation[a].total_cmp(&variation[b]).then(a.cmp(&b)));
            }
            for (slot, &b) in order.iter().enumerate() {
                let j = chosen[b];
                let r = reference.column(j);
                // ratio form keeps the scale exact when every q_i is the same power of two
                let rr: f64 = r.iter().map(|ri| ri * ri).sum();
                let rqr: f64 = r.iter().zip(q).map(|(ri, qi)| qi * (ri * ri)).sum();
                let scale = 1.0 / (rqr / rr).sqrt();
                let close =
                    aligned.column(b).iter().zip(r.iter()).all(|(a, ri)| (a - scale * ri).abs() < SNAP_TOLERANCE);
                let col = cluster.start + slot;
                if close {
                    for i in 0..n {
                        modes[(i, col)] = scale * r[i];
                    }
                } else {
                    modes.set_column(col, &aligned.column(b));
                }
                if spread > CLUSTER_TOLERANCE {
                    eigenvalues[col] = variation[b];
                }
                matched[col] = j;
            }
        }
        (IAGFTBasis { modes, eigenvalues, weights: self.weights.clone() }, matched)
    }

    /// Cache serialization: `n` (u32), eigenvalues, then `U` column-major, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n();
        let mut out = Vec::with_capacity(4 + 8 * (n + n * n));
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for v in &self.eigenvalues {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.modes.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`IAGFTBasis::to_bytes`]; the weights are recovered from `UUᵀ = Q⁻¹`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::MalformedStream(format!("basis cache: {m}"));
        let n = u32::from_le_bytes(bytes.get(..4).ok_or_else(|| bad("truncated"))?.try_into().unwrap()) as usize;
        if n == 0 || bytes.len() != 4 + 8 * (n + n * n) {
            return Err(bad("length does not match dimension"));
        }
        let mut floats = bytes[4..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let eigenvalues: Vec<f64> = floats.by_ref().take(n).collect();
        let modes = DMatrix::from_iterator(n, n, floats);
        let q = (0..n).map(|i| 1.0 / modes.row(i).norm_squared()).collect();
        let weights = InnerProductWeights::new(q).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { modes, eigenvalues, weights })
    }
}

/// Orthonormal 8×8 2-D DCT-II.
///
/// Column `v * 8 + u` holds the basis image with horizontal frequency `u` and
/// vertical frequency `v`; pixels are in raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dct2d {
    matrix: DMatrix<f64>,
    ones: Vec<f64>,
}

impl Default for Dct2d {
    fn default() -> Self {
        Self::new()
    }
}

impl Dct2d {
    pub fn new() -> Self {
        const N: usize = 8;
        let cos = |k: usize, x: usize| {
            if k == 0 {
                1.0
            } else {
                ((2 * x + 1) as f64 * k as f64 * std::f64::consts::PI / (2 * N) as f64).cos()
            }
        };
        let scale = |k: usize| if k == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
        let matrix = DMatrix::from_fn(N * N, N * N, |pixel, freq| {
            let (x, y) = (pixel % N, pixel / N);
            let (u, v) = (freq % N, freq / N);
            let s = if u == 0 && v == 0 { 1.0 } else { scale(u) * scale(v) };
            s / N as f64 * cos(u, x) * cos(v, y)
        });
        Self { matrix, ones: vec![1.0; N * N] }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Grid-Laplacian eigenvalue of each frequency, natural order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let path = |p: usize| 2.0 - 2.0 * (p as f64 * std::f64::consts::PI / 8.0).cos();
        (0..64).map(|f| path(f % 8) + path(f / 8)).collect()
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        analyze(&self.matrix, &self.ones, x, out);
    }

    pub fn inverse_into(&self, c: &[f64], out: &mut [f64]) {
        synthesize(&self.matrix, c, out);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 64];
        self.forward_into(x, &mut out);
        out
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 64];
        self.inverse_into(c, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{grid_laplacian, line_laplacian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn q0() -> Vec<f64> {
        #[rustfmt::skip]
        let q = vec![
            1.6, 1.6, 1.6, 1.6,
            1.6, 1.6, 1.6, 0.4,
            1.6, 0.4, 0.4, 0.4,
            0.4, 0.4, 0.4, 0.4,
        ];
        q
    }

    fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> InnerProductWeights {
        InnerProductWeights::new((0..n).map(|_| rng.random_range(0.1..5.0)).collect()).unwrap()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    fn check_basis(lap: &Laplacian, basis: &IAGFTBasis) {
        let n = basis.n();
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(basis.weights().as_slice()));
        let u = basis.modes();
        assert!(max_abs(&(u.transpose() * &q * u - DMatrix::identity(n, n))) < 1e-10);
        for k in 0..n {
            let lu = lap.matrix() * u.column(k);
            let qu = &q * u.column(k) * basis.eigenvalues()[k];
            assert!((lu - qu).amax() < 1e-8, "mode {k}");
        }
        assert!(basis.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(matches!(InnerProductWeights::new(vec![1.0, 0.0]), Err(Error::NonPositiveWeight { index: 1, .. })));
        assert!(InnerProductWeights::new(vec![1.0, -2.0]).is_err());
        assert!(InnerProductWeights::new(vec![f64::NAN]).is_err());
        assert!(matches!(InnerProductWeights::new(vec![]), Err(Error::EmptyInput)));
    }

    #[test]
    fn dimension_checks() {
        let lap = grid_laplacian(2, 2);
        assert!(compute_iagft(&lap, &InnerProductWeights::ones(3)).is_err());
        let basis = compute_iagft(&lap, &InnerProductWeights::ones(4)).unwrap();
        assert!(basis.forward(&[0.0; 3]).is_err());
        assert!(basis.inverse(&[0.0; 5]).is_err());
        assert!(basis.mode_energy_profile(&[true; 2]).is_err());
    }

    #[test]
    fn identity_weights_give_grid_spectrum() {
        let lap = grid_laplacian(8, 8);
        let basis = compute_iagft(&lap, &InnerProductWeights::ones(64)).unwrap();
        check_basis(&lap, &basis);
        let mut expected = Dct2d::new().eigenvalues();
        expected.sort_by(f64::total_cmp);
        for (a, b) in basis.eigenvalues().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn first_mode_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lap = grid_laplacian(8, 8);
        for _ in 0..5 {
            let w = random_weights(&mut rng, 64);
            let basis = compute_iagft(&lap, &w).unwrap();
            let expected = 1.0 / w.total().sqrt();
            assert!(basis.eigenvalues()[0].abs() < 1e-10);
            assert!(basis.mode(0).iter().all(|v| (v - expected).abs() < 1e-10));
        }
    }

    #[test]
    fn q0_example_is_orthonormal() {
        let lap = grid_laplacian(4, 4);
        let w = InnerProductWeights::new(q0()).unwrap();
        assert!((w.total() - 16.0).abs() < 1e-12);
        let basis = compute_iagft(&lap, &w).unwrap();
        check_basis(&lap, &basis);
        assert!(basis.eigenvalues()[0].abs() < 1e-12);
        assert!(basis.mode(0).iter().all(|v| (v - 0.25).abs() < 1e-12));
        assert!(basis.eigenvalues()[1] > 1e-3);
    }

    #[test]
    fn q0_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = compute_iagft(&grid_laplacian(4, 4), &InnerProductWeights::new(q0()).unwrap()).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-128.0..128.0)).collect();
            let back = basis.inverse(&basis.forward(&x).unwrap()).unwrap();
            assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_weights(&mut rng, 64);
        let basis = compute_iagft(&grid_laplacian(8, 8), &w).unwrap();
        let c = basis.forward(&[3.0; 64]).unwrap();
        assert!((c[0] - 3.0 * w.total().sqrt()).abs() < 1e-10);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
        let mut e1 = vec![0.0; 64];
        e1[0] = 1.0;
        let x = basis.inverse(&e1).unwrap();
        assert!(x.iter().all(|v| (v - 1.0 / w.total().sqrt()).abs() < 1e-12));
    }

    #[test]
    fn inverse_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_weights(&mut rng, 64);
        let basis = compute_iagft(&grid_laplacian(8, 8), &w).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-128.0..128.0)).collect();
            let back = basis.inverse(&basis.forward(&x).unwrap()).unwrap();
            assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-10));
            let c: Vec<f64> = (0..64).map(|_| rng.random_range(-500.0..500.0)).collect();
            let again = basis.forward(&basis.inverse(&c).unwrap()).unwrap();
            assert!(c.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn scaled_identity_scales_dct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dct = Dct2d::new();
        let lap = grid_laplacian(8, 8);
        for k in [0.25, 2.0, 4.0, 9.0] {
            let basis = compute_iagft(&lap, &InnerProductWeights::uniform(64, k).unwrap()).unwrap();
            let (aligned, matched) = basis.align_to(dct.matrix());
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-128.0..128.0)).collect();
            let c = aligned.forward(&x).unwrap();
            let d = dct.forward(&x);
            for (mode, &freq) in matched.iter().enumerate() {
                assert!((c[mode] - k.sqrt() * d[freq]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn near_uniform_weights_align_to_dct() {
        let dct = Dct2d::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q: Vec<f64> = (0..64).map(|_| 1.0 + rng.random_range(-0.004..0.004)).collect();
        let lap = grid_laplacian(8, 8);
        let basis = compute_iagft(&lap, &InnerProductWeights::new(q.clone()).unwrap()).unwrap();
        assert!(basis.clusters_within(1e-2).len() < basis.eigen_clusters().len());
        let (aligned, matched) = basis.align_within(dct.matrix(), 1e-2);
        let u = aligned.modes();
        let gram = u.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(q)) * u;
        assert!((gram - DMatrix::identity(64, 64)).amax() < 1e-10);
        assert!(aligned.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        let mut seen = matched.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
        for (k, &j) in matched.iter().enumerate() {
            let overlap: f64 = aligned.mode(k).iter().zip(dct.matrix().column(j).iter()).map(|(a, b)| a * b).sum();
            assert!(overlap > 0.98, "mode {k} overlap {overlap}");
            let variation = lap.matrix().clone() * nalgebra::DVector::from_vec(aligned.mode(k));
            let rq: f64 = aligned.mode(k).iter().zip(variation.iter()).map(|(a, b)| a * b).sum();
            assert!((rq - aligned.eigenvalues()[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn alignment_snaps_identity_to_dct() {
        let dct = Dct2d::new();
        let basis = compute_iagft(&grid_laplacian(8, 8), &InnerProductWeights::ones(64)).unwrap();
        let (aligned, matched) = basis.align_to(dct.matrix());
        let mut seen = matched.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
        for (mode, &freq) in matched.iter().enumerate() {
            assert_eq!(aligned.mode(mode), dct.matrix().column(freq).iter().copied().collect::<Vec<_>>());
        }
        assert_eq!(matched[0], 0);
    }

    #[test]
    fn alignment_preserves_eigenspaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lap = grid_laplacian(8, 8);
        let basis = compute_iagft(&lap, &random_weights(&mut rng, 64)).unwrap();
        let (aligned, _) = basis.align_to(Dct2d::new().matrix());
        check_basis(&lap, &aligned);
    }

    #[test]
    fn identity_basis_spans_dct_eigenspaces() {
        // compare projectors per eigenvalue cluster, never individual vectors
        let dct = Dct2d::new();
        let freq_eig = dct.eigenvalues();
        let basis = compute_iagft(&grid_laplacian(8, 8), &InnerProductWeights::ones(64)).unwrap();
        for cluster in basis.eigen_clusters() {
            let lambda = basis.eigenvalues()[cluster.start];
            let freqs: Vec<usize> = (0..64).filter(|&f| (freq_eig[f] - lambda).abs() < 1e-8).collect();
            assert_eq!(freqs.len(), cluster.len());
            let u = basis.modes().columns(cluster.start, cluster.len()).into_owned();
            let d = DMatrix::from_fn(64, freqs.len(), |i, j| dct.matrix()[(i, freqs[j])]);
            let diff = &u * u.transpose() - &d * d.transpose();
            assert!(max_abs(&diff) < 1e-8);
        }
    }

    #[test]
    fn line_graph_gives_1d_dct() {
        let n = 8;
        let basis = compute_iagft(&line_laplacian(n), &InnerProductWeights::ones(n)).unwrap();
        for k in 0..n {
            let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let dct: Vec<f64> = (0..n)
                .map(|x| scale * ((2 * x + 1) as f64 * k as f64 * std::f64::consts::PI / (2 * n) as f64).cos())
                .collect();
            let dot: f64 = basis.mode(k).iter().zip(&dct).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-10, "mode {k}");
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let m = Dct2d::new();
        let gram = m.matrix().transpose() * m.matrix();
        assert!(max_abs(&(gram - DMatrix::identity(64, 64))) < 1e-14);
        assert_eq!(m.matrix()[(0, 0)], 0.125);
    }

    #[test]
    fn parseval_and_inverse_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lap = grid_laplacian(8, 8);
        for _ in 0..5 {
            let w = random_weights(&mut rng, 64);
            let basis = compute_iagft(&lap, &w).unwrap();
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (xh, yh) = (basis.forward(&x).unwrap(), basis.forward(&y).unwrap());
            let rhs: f64 = xh.iter().zip(&yh).map(|(a, b)| a * b).sum();
            assert!((w.inner(&x, &y) - rhs).abs() < 1e-10);
            let uut = basis.modes() * basis.modes().transpose();
            let qinv = DMatrix::from_fn(64, 64, |i, j| if i == j { 1.0 / w.as_slice()[i] } else { 0.0 });
            assert!(max_abs(&(uut - qinv)) < 1e-10);
        }
    }

    #[test]
    fn full_mask_energy_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let basis = compute_iagft(&grid_laplacian(8, 8), &random_weights(&mut rng, 64)).unwrap();
        let profile = basis.mode_energy_profile(&[true; 64]).unwrap();
        assert!(profile.energy.iter().all(|e| (e - 1.0).abs() < 1e-10));
        assert_eq!(profile.variation, basis.eigenvalues());
        let ident = compute_iagft(&grid_laplacian(8, 8), &InnerProductWeights::ones(64)).unwrap();
        let profile = ident.mode_energy_profile(&[true; 64]).unwrap();
        assert!(profile.energy.iter().all(|e| (e - 1.0).abs() < 1e-10));
    }

    #[test]
    fn q0_high_modes_live_in_low_weight_region() {
        let q = q0();
        let basis = compute_iagft(&grid_laplacian(4, 4), &InnerProductWeights::new(q.clone()).unwrap()).unwrap();
        let high: Vec<bool> = q.iter().map(|&v| v > 1.0).collect();
        let low: Vec<bool> = high.iter().map(|b| !b).collect();
        let eh = basis.mode_energy_profile(&high).unwrap().energy;
        let el = basis.mode_energy_profile(&low).unwrap().energy;
        // modes 11..=16 in one-based numbering
        let mean = |e: &[f64]| e[10..16].iter().sum::<f64>() / 6.0;
        assert!(mean(&el) > mean(&eh), "low {} high {}", mean(&el), mean(&eh));
        for k in 0..16 {
            assert!((eh[k] + el[k] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cache_round_trip() {
        let basis = compute_iagft(&grid_laplacian(4, 4), &InnerProductWeights::new(q0()).unwrap()).unwrap();
        let bytes = basis.to_bytes();
        assert_eq!(bytes.len(), 4 + 8 * (16 + 256));
        let back = IAGFTBasis::from_bytes(&bytes).unwrap();
        assert_eq!(back.modes(), basis.modes());
        assert_eq!(back.eigenvalues(), basis.eigenvalues());
        for (a, b) in back.weights().as_slice().iter().zip(basis.weights().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(IAGFTBasis::from_bytes(&bytes[..100]).is_err());
    }
}
