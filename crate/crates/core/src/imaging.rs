//! Grayscale image I/O, 8×8 block tiling and Gaussian-windowed local moments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Side length of a coding block.
pub const BLOCK_SIZE: usize = 8;
/// Pixels per coding block.
pub const BLOCK_LEN: usize = BLOCK_SIZE * BLOCK_SIZE;

/// One level-shifted block in raster order.
pub type Block = [f64; BLOCK_LEN];

/// Side length of the Gaussian moment window.
pub const WINDOW_SIZE: usize = 11;
/// Standard deviation of the Gaussian moment window.
pub const WINDOW_SIGMA: f64 = 1.5;

/// Single-channel 8-bit image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::GeometryMismatch(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if samples.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, actual: samples.len() });
        }
        Ok(Self { width, height, samples })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self { width, height, samples }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }

    fn same_shape(&self, other: &ImageGray) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::GeometryMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(&self, other: &ImageGray) -> Result<()> {
        self.same_shape(other)
    }
}

/// Reads a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG.
///
/// Color inputs are rejected rather than converted.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGray> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes)?;
    decode_image_bytes(&bytes)
}

/// Decodes an in-memory PGM or PNG file.
pub fn decode_image_bytes(bytes: &[u8]) -> Result<ImageGray> {
    match bytes {
        [b'P', b'5', ..] => decode_pgm(bytes),
        [b'P', b'1'..=b'7', ..] => Err(Error::UnsupportedFormat(format!(
            "netpbm variant P{} (only binary P5 grayscale is supported)",
            bytes[1] as char
        ))),
        [0x89, b'P', b'N', b'G', ..] => decode_png(bytes),
        _ => Err(Error::UnsupportedFormat("unrecognized file signature".into())),
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<ImageGray> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::CorruptPayload("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::CorruptPayload("expected a number in PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptPayload("PGM header number out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval} (only 255 is supported)")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::CorruptPayload("missing whitespace after PGM header".into()));
    }
    pos += 1;
    let n = width.checked_mul(height).ok_or_else(|| Error::CorruptPayload("PGM dimensions overflow".into()))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::CorruptPayload(format!("PGM raster truncated: need {n} bytes")))?;
    ImageGray::new(width, height, raster.to_vec()).map_err(|e| Error::CorruptPayload(e.to_string()))
}

fn decode_png(bytes: &[u8]) -> Result<ImageGray> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "PNG {:?} at {:?} bits (only 8-bit grayscale is supported)",
            info.color_type, info.bit_depth
        )));
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::CorruptPayload("PNG dimensions overflow".into()))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    buf.truncate(frame.buffer_size());
    if frame.line_size != width {
        return Err(Error::CorruptPayload("unexpected PNG line stride".into()));
    }
    ImageGray::new(width, height, buf).map_err(|e| Error::CorruptPayload(e.to_string()))
}

/// Writes `img` as binary PGM.
pub fn save_image(img: &ImageGray, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&encode_pgm(img))?;
    out.flush()?;
    Ok(())
}

pub fn encode_pgm(img: &ImageGray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.samples);
    out
}

/// An image cut into level-shifted 8×8 blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrid {
    pub width: usize,
    pub height: usize,
    pub padded_width: usize,
    pub padded_height: usize,
    /// Blocks in raster order.
    pub blocks: Vec<Block>,
}

impl BlockGrid {
    pub fn blocks_across(&self) -> usize {
        self.padded_width / BLOCK_SIZE
    }

    pub fn blocks_down(&self) -> usize {
        self.padded_height / BLOCK_SIZE
    }

    /// Empty grid with the geometry of a `width`×`height` image.
    pub fn for_dimensions(width: usize, height: usize) -> Self {
        let padded_width = width.div_ceil(BLOCK_SIZE) * BLOCK_SIZE;
        let padded_height = height.div_ceil(BLOCK_SIZE) * BLOCK_SIZE;
        let count = (padded_width / BLOCK_SIZE) * (padded_height / BLOCK_SIZE);
        Self { width, height, padded_width, padded_height, blocks: vec![[0.0; BLOCK_LEN]; count] }
    }
}

/// Tiles `img` into 8×8 blocks, replicating the last row/column into the
/// padding and subtracting 128 from every sample.
pub fn tile_blocks(img: &ImageGray) -> BlockGrid {
    tile_plane(&img.to_f64(), img.width, img.height, -128.0)
}

/// Tiles an arbitrary per-pixel plane (e.g. a weight map) with edge replication.
pub fn tile_plane(plane: &[f64], width: usize, height: usize, offset: f64) -> BlockGrid {
    debug_assert_eq!(plane.len(), width * height);
    let mut grid = BlockGrid::for_dimensions(width, height);
    let across = grid.blocks_across();
    for (b, block) in grid.blocks.iter_mut().enumerate() {
        let (bx, by) = (b % across, b / across);
        for (i, v) in block.iter_mut().enumerate() {
            let x = (bx * BLOCK_SIZE + i % BLOCK_SIZE).min(width - 1);
            let y = (by * BLOCK_SIZE + i / BLOCK_SIZE).min(height - 1);
            *v = plane[y * width + x] + offset;
        }
    }
    grid
}

/// Inverse of [`tile_blocks`]: +128, crop, round half away from zero, clamp.
pub fn assemble(grid: &BlockGrid) -> Result<ImageGray> {
    let expect_w = grid.width.div_ceil(BLOCK_SIZE) * BLOCK_SIZE;
    let expect_h = grid.height.div_ceil(BLOCK_SIZE) * BLOCK_SIZE;
    if grid.width == 0 || grid.height == 0 || grid.padded_width != expect_w || grid.padded_height != expect_h {
        return Err(Error::GeometryMismatch(format!(
            "{}x{} image cannot have padded size {}x{}",
            grid.width, grid.height, grid.padded_width, grid.padded_height
        )));
    }
    let across = grid.blocks_across();
    if grid.blocks.len() != across * grid.blocks_down() {
        return Err(Error::GeometryMismatch(format!(
            "expected {} blocks, got {}",
            across * grid.blocks_down(),
            grid.blocks.len()
        )));
    }
    Ok(ImageGray::from_fn(grid.width, grid.height, |x, y| {
        let block = &grid.blocks[(y / BLOCK_SIZE) * across + x / BLOCK_SIZE];
        to_pixel(block[(y % BLOCK_SIZE) * BLOCK_SIZE + x % BLOCK_SIZE] + 128.0)
    }))
}

/// Rounds half away from zero and clamps to the 8-bit range.
pub fn to_pixel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Per-pixel Gaussian-windowed mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStatsMap {
    pub width: usize,
    pub height: usize,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl LocalStatsMap {
    /// Builds a map directly from variances (mean fixed at zero).
    pub fn from_variances(width: usize, height: usize, var: Vec<f64>) -> Result<Self> {
        if var.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, actual: var.len() });
        }
        Ok(Self { width, height, mu: vec![0.0; var.len()], var })
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window() -> [f64; WINDOW_SIZE] {
    let mut taps = [0.0; WINDOW_SIZE];
    let r = (WINDOW_SIZE / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Maps an out-of-range index into `0..n` by half-sample symmetric reflection
/// (`d c b a | a b c d | d c b a`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian filtering of a plane with symmetric-reflection borders.
pub fn gaussian_filter(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    let taps = gaussian_window();
    let r = (WINDOW_SIZE / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            tmp[y * width + x] =
                taps.iter().enumerate().map(|(k, t)| t * row[reflect_index(x as isize + k as isize - r, width)]).sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect_index(y as isize + k as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Gaussian-weighted local mean and variance around every pixel.
///
/// The variance is accumulated as `Σ w (x − μ)²` over the window so that flat
/// regions come out at zero rather than as a cancellation residue.
pub fn local_moments(img: &ImageGray) -> LocalStatsMap {
    let (width, height) = (img.width, img.height);
    let x = img.to_f64();
    let mu = gaussian_filter(&x, width, height);
    let taps = gaussian_window();
    let r = (WINDOW_SIZE / 2) as isize;
    let var = (0..width * height)
        .map(|p| {
            let (px, py) = ((p % width) as isize, (p / width) as isize);
            let m = mu[p];
            let mut acc = 0.0;
            for (ky, wy) in taps.iter().enumerate() {
                let row = reflect_index(py + ky as isize - r, height) * width;
                for (kx, wx) in taps.iter().enumerate() {
                    let d = x[row + reflect_index(px + kx as isize - r, width)] - m;
                    acc += wy * wx * d * d;
                }
            }
            acc.max(0.0)
        })
        .collect();
    LocalStatsMap { width, height, mu, var }
}
