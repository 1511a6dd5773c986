//! Quality metrics and Bjøntegaard rate comparison.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::imaging::{gaussian_filter, ImageGray, WINDOW_SIZE};
use crate::weights::{WeightMap, SSIM_C1, SSIM_C2};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side length that survives four dyadic downsamplings with a full window.
pub const MS_SSIM_MIN_SIDE: usize = WINDOW_SIZE << 4;

fn diff_sq(z: &ImageGray, x: &ImageGray) -> Result<Vec<f64>> {
    z.check_same_shape(x)?;
    Ok(z.samples()
        .iter()
        .zip(x.samples())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .collect())
}

/// `(1/n) Σ q_i (z_i − x_i)²`.
pub fn wmse(z: &ImageGray, x: &ImageGray, q: &WeightMap) -> Result<f64> {
    let d = diff_sq(z, x)?;
    if q.len() != d.len() {
        return Err(Error::DimensionMismatch { expected: d.len(), actual: q.len() });
    }
    Ok(d.iter().zip(&q.q).map(|(e, w)| w * e).sum::<f64>() / d.len() as f64)
}

pub fn mse(z: &ImageGray, x: &ImageGray) -> Result<f64> {
    let d = diff_sq(z, x)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Peak signal-to-noise ratio against a 255 peak, capped at [`PSNR_CAP`].
pub fn psnr(z: &ImageGray, x: &ImageGray) -> Result<f64> {
    Ok(psnr_from_mse(mse(z, x)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP)
}

struct SsimMaps {
    /// Luminance term times contrast-structure term, per pixel.
    ssim: Vec<f64>,
    cs: Vec<f64>,
}

fn ssim_maps(a: &[f64], b: &[f64], width: usize, height: usize) -> SsimMaps {
    let blur = |p: &[f64]| gaussian_filter(p, width, height);
    let mu_a = blur(a);
    let mu_b = blur(b);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (e_aa, e_bb, e_ab) = (blur(&aa), blur(&bb), blur(&ab));
    let mut ssim = Vec::with_capacity(a.len());
    let mut cs = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = (e_aa[i] - ma * ma).max(0.0);
        let var_b = (e_bb[i] - mb * mb).max(0.0);
        let cov = e_ab[i] - ma * mb;
        let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        let c = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2);
        ssim.push(l * c);
        cs.push(c);
    }
    SsimMaps { ssim, cs }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean local SSIM over all pixels, 11×11 Gaussian window with σ = 1.5.
pub fn ssim(z: &ImageGray, x: &ImageGray) -> Result<f64> {
    z.check_same_shape(x)?;
    let maps = ssim_maps(&z.to_f64(), &x.to_f64(), z.width(), z.height());
    Ok(mean(&maps.ssim))
}

/// 2×2 box average, dropping a trailing odd row/column.
pub fn downsample(plane: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let (w, h) = (width / 2, height / 2);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = 2 * y * width + 2 * x;
            out.push(0.25 * (plane[p] + plane[p + 1] + plane[p + width] + plane[p + width + 1]));
        }
    }
    (out, w, h)
}

/// Per-scale terms of MS-SSIM: mean contrast-structure at the four finer
/// scales, and mean SSIM at the coarsest.
pub fn ms_ssim_components(z: &ImageGray, x: &ImageGray) -> Result<[f64; 5]> {
    z.check_same_shape(x)?;
    let (mut w, mut h) = (z.width(), z.height());
    if w.min(h) < MS_SSIM_MIN_SIDE {
        return Err(Error::ImageTooSmall { width: w, height: h, min: MS_SSIM_MIN_SIDE });
    }
    let (mut a, mut b) = (z.to_f64(), x.to_f64());
    let mut terms = [0.0; 5];
    for (scale, term) in terms.iter_mut().enumerate() {
        let maps = ssim_maps(&a, &b, w, h);
        if scale == 4 {
            *term = mean(&maps.ssim);
        } else {
            *term = mean(&maps.cs);
            let (na, nw, nh) = downsample(&a, w, h);
            let (nb, _, _) = downsample(&b, w, h);
            (a, b, w, h) = (na, nb, nw, nh);
        }
    }
    Ok(terms)
}

/// Five-scale MS-SSIM; negative per-scale terms are clamped to zero.
pub fn ms_ssim(z: &ImageGray, x: &ImageGray) -> Result<f64> {
    let terms = ms_ssim_components(z, x)?;
    Ok(terms.iter().zip(MS_SSIM_WEIGHTS).map(|(t, w)| t.max(0.0).powf(w)).product())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RDPoint {
    /// Bits per pixel.
    pub rate: f64,
    pub quality: f64,
}

impl RDPoint {
    pub fn new(rate: f64, quality: f64) -> Self {
        Self { rate, quality }
    }
}

/// Least-squares cubic of `ln(rate)` against quality, in normalized quality.
struct LogRateFit {
    coeffs: [f64; 4],
    center: f64,
    scale: f64,
    lo: f64,
    hi: f64,
}

impl LogRateFit {
    fn new(points: &[RDPoint]) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InsufficientPoints { needed: 4, got: points.len() });
        }
        if let Some(p) = points.iter().find(|p| !(p.rate > 0.0) || !p.quality.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid RD point {p:?}")));
        }
        let lo = points.iter().map(|p| p.quality).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.quality).fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let scale = 0.5 * (hi - lo);
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument("RD curve spans no quality range".into()));
        }
        let m = points.len();
        let v = DMatrix::from_fn(m, 4, |i, j| ((points[i].quality - center) / scale).powi(j as i32));
        let y = DVector::from_iterator(m, points.iter().map(|p| p.rate.ln()));
        let sol =
            v.svd(true, true).solve(&y, 1e-14).map_err(|e| Error::InvalidArgument(format!("cubic fit failed: {e}")))?;
        Ok(Self { coeffs: [sol[0], sol[1], sol[2], sol[3]], center, scale, lo, hi })
    }

    fn integral(&self, from: f64, to: f64) -> f64 {
        let anti = |q: f64| {
            let t = (q - self.center) / self.scale;
            self.coeffs.iter().enumerate().map(|(j, c)| c * t.powi(j as i32 + 1) / (j + 1) as f64).sum::<f64>()
        };
        self.scale * (anti(to) - anti(from))
    }
}

/// Bjøntegaard delta rate of `curve_b` relative to `curve_a`, in percent.
/// Negative means `curve_b` needs fewer bits for the same quality.
pub fn bd_rate(curve_a: &[RDPoint], curve_b: &[RDPoint]) -> Result<f64> {
    let fa = LogRateFit::new(curve_a)?;
    let fb = LogRateFit::new(curve_b)?;
    let lo = fa.lo.max(fb.lo);
    let hi = fa.hi.min(fb.hi);
    if !(hi > lo) {
        return Err(Error::NoQualityOverlap);
    }
    let avg = (fb.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

/// One row of an RD sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdRecord {
    pub rate_bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub msssim: f64,
}

pub const RD_CSV_HEADER: &str = "rate_bpp,psnr,ssim,msssim";

pub fn rd_csv(records: &[RdRecord]) -> String {
    let mut out = format!("{RD_CSV_HEADER}\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.rate_bpp, r.psnr, r.ssim, r.msssim));
    }
    out
}

pub fn parse_rd_csv(text: &str) -> Result<Vec<RdRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RD_CSV_HEADER) {
        return Err(Error::InvalidArgument(format!("expected header `{RD_CSV_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad RD row `{line}`: {e}")))?;
            match fields[..] {
                [rate_bpp, psnr, ssim, msssim] => Ok(RdRecord { rate_bpp, psnr, ssim, msssim }),
                _ => Err(Error::InvalidArgument(format!("bad RD row `{line}`"))),
            }
        })
        .collect()
}
