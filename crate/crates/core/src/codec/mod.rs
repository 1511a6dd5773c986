//! Block codec: weight map, codeword selection, per-block transform,
//! quantization, scan and entropy coding, plus the container format.
//!
//! Stream layout, little-endian, byte aligned between sections:
//!
//! ```text
//! "IAGF" | version u8 | mode u8 | width u16 | height u16 | level f32 | codebook hash u64
//! DC table (BITS[16] + HUFFVAL) | AC table (BITS[16] + HUFFVAL)
//! side-info length u32 | side-info bits | coefficient payload (to end of file)
//! ```
//!
//! `mode` bit 0 selects the graph transform, bit 1 the non-uniform table and
//! bit 2 the unnormalized table derivation. `level` is the step Δ for uniform
//! tables and the quality factor otherwise.

pub mod arith;
pub mod bits;
pub mod entropy;
pub mod huffman;
pub mod tables;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::grid_laplacian;
use crate::imaging::{assemble, local_moments, tile_blocks, BlockGrid, ImageGray, BLOCK_LEN};
use crate::transform::{compute_iagft, Dct2d, IAGFTBasis, InnerProductWeights};
use crate::vq::{assign, side_info_bits, weight_blocks, Codebook, DEFAULT_LAMBDA};
use crate::weights::{gamma_map, optimal_weights_with_floor, WeightMap, DEFAULT_Q_FLOOR, SSIM_C2};

use arith::{arith_decode, arith_encode, FrequencyModel};
pub use entropy::{entropy_decode, entropy_encode, EntropyCoded, QuantBlock};
use huffman::HuffmanSpec;
use tables::{scaled_luma_table, ZIGZAG};

pub const STREAM_MAGIC: &[u8; 4] = b"IAGF";
pub const STREAM_VERSION: u8 = 1;
/// Fixed header, before the Huffman tables.
pub const HEADER_BYTES: usize = 22;

/// Relative eigenvalue gap below which codeword modes are aligned to the DCT.
/// Distinct 8×8 grid eigenvalues differ by at least 1.8%.
pub const NEAR_DEGENERATE_GAP: f64 = 1e-2;

const MODE_IAGFT: u8 = 1;
const MODE_NONUNIFORM: u8 = 2;
const MODE_UNNORMALIZED: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformMode {
    Dct,
    Iagft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TableMode {
    Uniform,
    NonUniform,
}

/// One quantization step per transform coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantTable {
    steps: [f64; BLOCK_LEN],
}

impl QuantTable {
    pub fn new(steps: [f64; BLOCK_LEN]) -> Result<Self> {
        if let Some(&bad) = steps.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::NonPositiveDelta(bad));
        }
        Ok(Self { steps })
    }

    pub fn uniform(delta: f64) -> Result<Self> {
        Self::new([delta; BLOCK_LEN])
    }

    pub fn steps(&self) -> &[f64; BLOCK_LEN] {
        &self.steps
    }
}

/// Steps for the modes of `basis` as a weighted mean of DCT steps.
///
/// `dct_steps` is indexed like the columns of [`Dct2d::matrix`]. The weight of
/// DCT step `i` for mode `k` is `|⟨u_k, v_i⟩|`; with `normalized = false` the
/// weighted sum is not divided by the total weight.
pub fn derive_quant_table(basis: &IAGFTBasis, dct_steps: &[f64; BLOCK_LEN], normalized: bool) -> Result<QuantTable> {
    if basis.n() != BLOCK_LEN {
        return Err(Error::DimensionMismatch { expected: BLOCK_LEN, actual: basis.n() });
    }
    let dct = Dct2d::new();
    let phi = basis.modes().transpose() * dct.matrix();
    let mut steps = [0.0; BLOCK_LEN];
    for (k, step) in steps.iter_mut().enumerate() {
        let row = phi.row(k);
        let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // round-off below this level is not a real overlap
        let w: Vec<f64> = row.iter().map(|v| if v.abs() > 1e-12 * max { v.abs() } else { 0.0 }).collect();
        let support: Vec<usize> = (0..BLOCK_LEN).filter(|&i| w[i] > 0.0).collect();
        let weighted: f64 = support.iter().map(|&i| w[i] * dct_steps[i]).sum();
        *step = if !normalized {
            weighted
        } else if support.len() == 1 {
            dct_steps[support[0]]
        } else {
            weighted / support.iter().map(|&i| w[i]).sum::<f64>()
        };
    }
    QuantTable::new(steps)
}

/// `c_k / step_k` rounded half away from zero.
pub fn quantize(c: &[f64], t: &QuantTable) -> QuantBlock {
    std::array::from_fn(|k| (c[k] / t.steps[k]).round() as i32)
}

pub fn dequantize(ints: &QuantBlock, t: &QuantTable) -> [f64; BLOCK_LEN] {
    std::array::from_fn(|k| f64::from(ints[k]) * t.steps[k])
}

/// Zigzag for the DCT, identity (ascending eigenvalue) for the graph transform.
pub fn scan_order(mode: TransformMode) -> [usize; BLOCK_LEN] {
    match mode {
        TransformMode::Dct => ZIGZAG,
        TransformMode::Iagft => std::array::from_fn(|i| i),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeParams {
    pub transform: TransformMode,
    pub table: TableMode,
    /// Step Δ (uniform) or quality factor in `(0, 100]` (non-uniform).
    pub level: f64,
    /// Rate multiplier for codeword assignment.
    pub lambda: f64,
    pub q_floor: f64,
    /// Divide the DCT-projected step sum by its total weight.
    pub normalized_table: bool,
}

impl EncodeParams {
    pub fn new(transform: TransformMode, table: TableMode, level: f64) -> Self {
        Self { transform, table, level, lambda: DEFAULT_LAMBDA, q_floor: DEFAULT_Q_FLOOR, normalized_table: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub transform: TransformMode,
    pub table: TableMode,
    pub normalized_table: bool,
    pub width: u16,
    pub height: u16,
    pub level: f32,
    /// Zero for DCT streams.
    pub codebook_hash: u64,
}

impl Header {
    fn mode_byte(&self) -> u8 {
        let mut m = 0;
        if self.transform == TransformMode::Iagft {
            m |= MODE_IAGFT;
        }
        if self.table == TableMode::NonUniform {
            m |= MODE_NONUNIFORM;
        }
        if !self.normalized_table {
            m |= MODE_UNNORMALIZED;
        }
        m
    }

    pub fn block_count(&self) -> usize {
        BlockGrid::for_dimensions(self.width.into(), self.height.into()).blocks.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedImage {
    pub header: Header,
    pub coefficients: EntropyCoded,
    /// Arithmetic-coded codeword indices; empty for DCT streams.
    pub side_info: Vec<u8>,
}

impl EncodedImage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(STREAM_MAGIC);
        out.push(STREAM_VERSION);
        out.push(h.mode_byte());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.level.to_le_bytes());
        out.extend_from_slice(&h.codebook_hash.to_le_bytes());
        out.extend_from_slice(&self.coefficients.dc_table.to_bytes());
        out.extend_from_slice(&self.coefficients.ac_table.to_bytes());
        out.extend_from_slice(&(self.side_info.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.side_info);
        out.extend_from_slice(&self.coefficients.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::MalformedStream(m.to_string());
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != STREAM_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = cur.take(1)?[0];
        if version != STREAM_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mode = cur.take(1)?[0];
        if mode & !(MODE_IAGFT | MODE_NONUNIFORM | MODE_UNNORMALIZED) != 0 {
            return Err(bad(&format!("unknown mode bits {mode:#04x}")));
        }
        let width = u16::from_le_bytes(cur.array()?);
        let height = u16::from_le_bytes(cur.array()?);
        let level = f32::from_le_bytes(cur.array()?);
        let codebook_hash = u64::from_le_bytes(cur.array()?);
        if width == 0 || height == 0 || !(level > 0.0 && level.is_finite()) {
            return Err(bad("invalid dimensions or level"));
        }
        let (dc_table, used) = HuffmanSpec::parse(&bytes[cur.pos..])?;
        cur.pos += used;
        let (ac_table, used) = HuffmanSpec::parse(&bytes[cur.pos..])?;
        cur.pos += used;
        let side_len = u32::from_le_bytes(cur.array()?) as usize;
        let side_info = cur.take(side_len)?.to_vec();
        let payload = bytes[cur.pos..].to_vec();
        let header = Header {
            transform: if mode & MODE_IAGFT != 0 { TransformMode::Iagft } else { TransformMode::Dct },
            table: if mode & MODE_NONUNIFORM != 0 { TableMode::NonUniform } else { TableMode::Uniform },
            normalized_table: mode & MODE_UNNORMALIZED == 0,
            width,
            height,
            level,
            codebook_hash,
        };
        let payload_bits = payload.len() * 8;
        Ok(Self { header, coefficients: EntropyCoded { dc_table, ac_table, payload, payload_bits }, side_info })
    }

    pub fn byte_len(&self) -> usize {
        HEADER_BYTES
            + 4
            + self.coefficients.dc_table.to_bytes().len()
            + self.coefficients.ac_table.to_bytes().len()
            + self.side_info.len()
            + self.coefficients.payload.len()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s =
            self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::MalformedStream("truncated stream".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

/// Bits spent on each part of a stream; the parts sum to the file size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateReport {
    pub pixels: usize,
    /// Fixed header and section length field.
    pub header_bits: usize,
    pub table_bits: usize,
    pub side_info_bits: usize,
    /// `Σ −log₂ p` of the chosen codewords.
    pub side_info_ideal_bits: f64,
    pub payload_bits: usize,
    pub total_bits: usize,
}

impl RateReport {
    pub fn bpp(&self) -> f64 {
        self.total_bits as f64 / self.pixels as f64
    }

    pub fn side_info_fraction(&self) -> f64 {
        self.side_info_bits as f64 / self.total_bits as f64
    }
}

/// Everything the encoder decided, for analysis.
#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub encoded: EncodedImage,
    pub rate: RateReport,
    /// Codeword per block; empty for DCT streams.
    pub indices: Vec<usize>,
    /// Quantized coefficients per block in transform order.
    pub coefficients: Vec<QuantBlock>,
    /// Pixel weight map before vector quantization.
    pub weights: Option<WeightMap>,
}

/// Encoder/decoder with the graph bases of one codebook precomputed.
#[derive(Clone, Debug)]
pub struct Codec {
    dct: Dct2d,
    codebook: Option<Codebook>,
    bases: Vec<IAGFTBasis>,
    matched: Vec<Vec<usize>>,
    side_model: Option<FrequencyModel>,
}

impl Codec {
    /// A codec that can only handle DCT streams.
    pub fn dct_only() -> Self {
        Self { dct: Dct2d::new(), codebook: None, bases: Vec::new(), matched: Vec::new(), side_model: None }
    }

    /// Computes and DCT-aligns the basis of every codeword.
    pub fn new(codebook: Codebook) -> Result<Self> {
        if codebook.dim() != BLOCK_LEN {
            return Err(Error::DimensionMismatch { expected: BLOCK_LEN, actual: codebook.dim() });
        }
        let dct = Dct2d::new();
        let lap = grid_laplacian(8, 8);
        let aligned = codebook
            .codewords()
            .par_iter()
            .map(|c| {
                let basis = compute_iagft(&lap, &InnerProductWeights::new(c.clone())?)?;
                Ok(basis.align_within(dct.matrix(), NEAR_DEGENERATE_GAP))
            })
            .collect::<Result<Vec<_>>>()?;
        let (bases, matched) = aligned.into_iter().unzip();
        let side_model = Some(FrequencyModel::from_probabilities(codebook.probabilities())?);
        Ok(Self { dct, codebook: Some(codebook), bases, matched, side_model })
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_ref()
    }

    /// Aligned basis of codeword `k`.
    pub fn basis(&self, k: usize) -> &IAGFTBasis {
        &self.bases[k]
    }

    /// DCT coefficient index matched to each mode of codeword `k`.
    pub fn matched(&self, k: usize) -> &[usize] {
        &self.matched[k]
    }

    /// Model used to code codeword indices.
    pub fn side_info_model(&self) -> Option<&FrequencyModel> {
        self.side_model.as_ref()
    }

    /// Step that sets γ: Δ itself, or the DC step of the scaled table.
    pub fn gamma_step(table: TableMode, level: f64) -> f64 {
        match table {
            TableMode::Uniform => level,
            TableMode::NonUniform => scaled_luma_table(level)[0],
        }
    }

    /// Quantization table for codeword `codeword`, or the DCT table when `None`.
    pub fn quant_table(&self, header: &Header, codeword: Option<usize>) -> Result<QuantTable> {
        let level = f64::from(header.level);
        match (header.table, codeword) {
            (TableMode::Uniform, _) => QuantTable::uniform(level),
            (TableMode::NonUniform, None) => QuantTable::new(scaled_luma_table(level)),
            (TableMode::NonUniform, Some(k)) => {
                derive_quant_table(&self.bases[k], &scaled_luma_table(level), header.normalized_table)
            }
        }
    }

    /// SSIM-optimal pixel weights for `img` at the given level.
    pub fn weight_map(img: &ImageGray, params: &EncodeParams) -> Result<WeightMap> {
        let delta = Self::gamma_step(params.table, f64::from(params.level as f32));
        let gamma = gamma_map(&local_moments(img), delta, SSIM_C2)?;
        optimal_weights_with_floor(&gamma, params.q_floor)
    }

    pub fn encode(&self, img: &ImageGray, params: &EncodeParams) -> Result<EncodeOutput> {
        let level = params.level as f32;
        let valid = match params.table {
            TableMode::Uniform => level > 0.0 && level.is_finite(),
            TableMode::NonUniform => level > 0.0 && level <= 100.0,
        };
        if !valid {
            return Err(Error::InvalidArgument(format!(
                "level {} out of range for {:?} table",
                params.level, params.table
            )));
        }
        let (width, height) = (dims(img.width())?, dims(img.height())?);
        let iagft = params.transform == TransformMode::Iagft;
        let codebook = match (iagft, &self.codebook) {
            (true, Some(cb)) => Some(cb),
            (true, None) => return Err(Error::InvalidArgument("graph transform mode needs a codebook".into())),
            (false, _) => None,
        };
        let header = Header {
            transform: params.transform,
            table: params.table,
            normalized_table: params.normalized_table,
            width,
            height,
            level,
            codebook_hash: codebook.map_or(0, Codebook::hash),
        };
        let grid = tile_blocks(img);

        let (weights, indices) = match codebook {
            Some(cb) => {
                let weights = Self::weight_map(img, params)?;
                let indices: Vec<usize> =
                    weight_blocks(&weights).par_iter().map(|b| assign(cb, b, params.lambda)).collect();
                (Some(weights), indices)
            }
            None => (None, Vec::new()),
        };

        let coefficients: Vec<QuantBlock> = if iagft {
            let tables =
                (0..self.bases.len()).map(|k| self.quant_table(&header, Some(k))).collect::<Result<Vec<_>>>()?;
            grid.blocks
                .par_iter()
                .zip(&indices)
                .map(|(block, &k)| {
                    let mut c = [0.0; BLOCK_LEN];
                    self.bases[k].forward_into(block, &mut c);
                    quantize(&c, &tables[k])
                })
                .collect()
        } else {
            let table = self.quant_table(&header, None)?;
            grid.blocks
                .par_iter()
                .map(|block| {
                    let mut c = [0.0; BLOCK_LEN];
                    self.dct.forward_into(block, &mut c);
                    quantize(&c, &table)
                })
                .collect()
        };

        let coded = entropy_encode(&coefficients, &scan_order(params.transform))?;
        let side_info = match &self.side_model {
            Some(model) if iagft => arith_encode(model, &indices)?,
            _ => Vec::new(),
        };
        let encoded = EncodedImage { header, coefficients: coded, side_info };
        let side_info_ideal_bits = match codebook {
            Some(cb) => side_info_bits(cb, &indices)?,
            None => 0.0,
        };
        let rate = RateReport {
            pixels: img.len(),
            header_bits: 8 * (HEADER_BYTES + 4),
            table_bits: encoded.coefficients.table_bits(),
            side_info_bits: 8 * encoded.side_info.len(),
            side_info_ideal_bits,
            payload_bits: 8 * encoded.coefficients.payload.len(),
            total_bits: 8 * encoded.byte_len(),
        };
        Ok(EncodeOutput { encoded, rate, indices, coefficients, weights })
    }

    /// Codeword indices and quantized coefficients carried by a stream.
    pub fn decode_coefficients(&self, enc: &EncodedImage) -> Result<(Vec<usize>, Vec<QuantBlock>)> {
        let h = &enc.header;
        let count = h.block_count();
        let indices = if h.transform == TransformMode::Iagft {
            let (cb, model) = match (&self.codebook, &self.side_model) {
                (Some(cb), Some(model)) => (cb, model),
                _ => return Err(Error::UnknownCodebook { stream: h.codebook_hash, supplied: 0 }),
            };
            if cb.hash() != h.codebook_hash {
                return Err(Error::UnknownCodebook { stream: h.codebook_hash, supplied: cb.hash() });
            }
            arith_decode(model, &enc.side_info, count)?
        } else {
            Vec::new()
        };
        let c = &enc.coefficients;
        let blocks = entropy_decode(&c.dc_table, &c.ac_table, &c.payload, count, &scan_order(h.transform))?;
        Ok((indices, blocks))
    }

    pub fn decode(&self, enc: &EncodedImage) -> Result<ImageGray> {
        let h = &enc.header;
        let (indices, blocks) = self.decode_coefficients(enc)?;
        let mut grid = BlockGrid::for_dimensions(h.width.into(), h.height.into());
        if h.transform == TransformMode::Iagft {
            let tables = (0..self.bases.len()).map(|k| self.quant_table(h, Some(k))).collect::<Result<Vec<_>>>()?;
            grid.blocks.par_iter_mut().zip(&blocks).zip(&indices).for_each(|((out, q), &k)| {
                self.bases[k].inverse_into(&dequantize(q, &tables[k]), out);
            });
        } else {
            let table = self.quant_table(h, None)?;
            grid.blocks.par_iter_mut().zip(&blocks).for_each(|(out, q)| {
                self.dct.inverse_into(&dequantize(q, &table), out);
            });
        }
        assemble(&grid)
    }
}

fn dims(v: usize) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("image side {v} exceeds 65535")))
}

/// One-shot encode; `codebook` is required for the graph transform.
pub fn encode_image(img: &ImageGray, params: &EncodeParams, codebook: Option<&Codebook>) -> Result<EncodedImage> {
    let codec = match codebook {
        Some(cb) if params.transform == TransformMode::Iagft => Codec::new(cb.clone())?,
        _ => Codec::dct_only(),
    };
    Ok(codec.encode(img, params)?.encoded)
}

/// One-shot decode.
pub fn decode_image(enc: &EncodedImage, codebook: Option<&Codebook>) -> Result<ImageGray> {
    let codec = match codebook {
        Some(cb) if enc.header.transform == TransformMode::Iagft => Codec::new(cb.clone())?,
        _ => Codec::dct_only(),
    };
    codec.decode(enc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantizer_rounding() {
        let t = QuantTable::uniform(1.0).unwrap();
        let mut c = [0.0; 64];
        c[0] = 0.4;
        c[1] = 2.5;
        c[2] = -2.5;
        let q = quantize(&c, &t);
        assert_eq!(&q[..3], &[0, 3, -3]);
        let t5 = QuantTable::uniform(5.0).unwrap();
        c[0] = -12.5;
        assert_eq!(quantize(&c, &t5)[0], -3);
    }

    #[test]
    fn quant_table_rejects_zero() {
        assert!(QuantTable::uniform(0.0).is_err());
    }

    #[test]
    fn derived_table_of_constant_steps_is_constant() {
        let q: Vec<f64> = (0..64).map(|i| if i % 8 + i / 8 < 9 { 1.6 } else { 0.4 }).collect();
        let codec = Codec::new(Codebook::new(vec![q], vec![1.0]).unwrap()).unwrap();
        let t = derive_quant_table(codec.basis(0), &[7.0; 64], true).unwrap();
        assert!(t.steps().iter().all(|s| (s - 7.0).abs() < 1e-9));
    }

    #[test]
    fn derived_table_on_dct_basis_is_the_dct_table() {
        let codec = Codec::new(Codebook::identity(64)).unwrap();
        let base = scaled_luma_table(50.0);
        let t = derive_quant_table(codec.basis(0), &base, true).unwrap();
        for (k, &j) in codec.matched(0).iter().enumerate() {
            assert_eq!(t.steps()[k], base[j]);
        }
        assert_eq!(t.steps()[0], base[0]);
    }

    #[test]
    fn header_round_trip() {
        let img = ImageGray::from_fn(19, 13, |x, y| (x * 13 + y * 7) as u8);
        let codec = Codec::dct_only();
        let mut params = EncodeParams::new(TransformMode::Dct, TableMode::NonUniform, 63.0);
        params.normalized_table = false;
        let out = codec.encode(&img, &params).unwrap();
        let bytes = out.encoded.to_bytes();
        assert_eq!(bytes.len() * 8, out.rate.total_bits);
        let parsed = EncodedImage::from_bytes(&bytes).unwrap();
        assert_eq!(parsed.header, out.encoded.header);
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn truncated_stream_is_malformed() {
        let img = ImageGray::filled(8, 8, 100);
        let bytes = encode_image(&img, &EncodeParams::new(TransformMode::Dct, TableMode::Uniform, 4.0), None)
            .unwrap()
            .to_bytes();
        for cut in [0, 3, 10, 25, 40] {
            assert!(matches!(EncodedImage::from_bytes(&bytes[..cut]), Err(Error::MalformedStream(_))));
        }
    }
}
