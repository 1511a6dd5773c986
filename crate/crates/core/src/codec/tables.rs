//! Fixed tables of the baseline still-image pipeline.

/// Luminance quantization table from JPEG Annex K, natural (row-major) order.
#[rustfmt::skip]
pub const ANNEX_K_LUMA: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

/// `ZIGZAG[i]` is the natural index of the `i`-th coefficient in scan order.
#[rustfmt::skip]
pub const ZIGZAG: [usize; 64] = [
     0,  1,  8, 16,  9,  2,  3, 10,
    17, 24, 32, 25, 18, 11,  4,  5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13,  6,  7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
];

/// IJG quality scaling of [`ANNEX_K_LUMA`]; `quality` is clamped to `[1, 100]`.
pub fn scaled_luma_table(quality: f64) -> [f64; 64] {
    let quality = quality.clamp(1.0, 100.0);
    let scale = if quality < 50.0 { 5000.0 / quality } else { 200.0 - 2.0 * quality };
    ANNEX_K_LUMA.map(|base| ((f64::from(base) * scale + 50.0) / 100.0).floor().max(1.0))
}
