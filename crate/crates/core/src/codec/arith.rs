//! Static multi-symbol arithmetic coder for codeword indices.
//!
//! Classic 32-bit integer coder with pending-bit carry handling. Frequencies
//! are fixed (derived from the codebook), so nothing about the model is
//! transmitted. The decoder treats bits past the end of the stream as zero.

use super::bits::BitWriter;
use crate::error::{Error, Result};

const TOP: u64 = (1 << 32) - 1;
const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
/// Upper bound on the frequency total, keeps `range · total` within 64 bits
/// and every symbol's interval non-empty.
pub const MAX_TOTAL: u64 = 1 << 16;

/// Cumulative frequency table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyModel {
    cumulative: Vec<u64>,
}

impl FrequencyModel {
    /// Scales probabilities to integer frequencies, every symbol at least 1.
    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        if p.is_empty() || p.len() as u64 > MAX_TOTAL / 4 {
            return Err(Error::InvalidArgument(format!("cannot model {} symbols", p.len())));
        }
        let budget = (MAX_TOTAL - p.len() as u64) as f64;
        let mut cumulative = vec![0];
        for &pi in p {
            let f = 1 + (pi.max(0.0) * budget).floor() as u64;
            cumulative.push(cumulative.last().unwrap() + f);
        }
        Ok(Self { cumulative })
    }

    pub fn symbols(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn total(&self) -> u64 {
        *self.cumulative.last().unwrap()
    }

    /// Ideal code length of `symbol` under the quantized model.
    pub fn bits(&self, symbol: usize) -> f64 {
        let f = self.cumulative[symbol + 1] - self.cumulative[symbol];
        (self.total() as f64 / f as f64).log2()
    }
}

fn push_bit(w: &mut BitWriter, bit: u32, pending: &mut u32) {
    w.write(bit, 1);
    for _ in 0..*pending {
        w.write(1 - bit, 1);
    }
    *pending = 0;
}

/// Codes `symbols`; a one-symbol model needs no bits at all.
pub fn arith_encode(model: &FrequencyModel, symbols: &[usize]) -> Result<Vec<u8>> {
    if model.symbols() == 1 {
        return match symbols.iter().find(|&&s| s != 0) {
            Some(&s) => Err(Error::IndexOutOfRange { index: s, size: 1 }),
            None => Ok(Vec::new()),
        };
    }
    let total = model.total();
    let (mut low, mut high) = (0u64, TOP);
    let mut pending = 0u32;
    let mut w = BitWriter::new();
    for &s in symbols {
        if s >= model.symbols() {
            return Err(Error::IndexOutOfRange { index: s, size: model.symbols() });
        }
        let range = high - low + 1;
        high = low + range * model.cumulative[s + 1] / total - 1;
        low += range * model.cumulative[s] / total;
        loop {
            if high < HALF {
                push_bit(&mut w, 0, &mut pending);
            } else if low >= HALF {
                push_bit(&mut w, 1, &mut pending);
                low -= HALF;
                high -= HALF;
            } else if low >= QUARTER && high < HALF + QUARTER {
                pending += 1;
                low -= QUARTER;
                high -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
        }
    }
    if !symbols.is_empty() {
        pending += 1;
        push_bit(&mut w, u32::from(low >= QUARTER), &mut pending);
    }
    Ok(w.finish())
}

/// Decodes `count` symbols.
pub fn arith_decode(model: &FrequencyModel, bytes: &[u8], count: usize) -> Result<Vec<usize>> {
    if model.symbols() == 1 {
        return Ok(vec![0; count]);
    }
    let bit_at = |i: usize| -> u64 { bytes.get(i / 8).map_or(0, |b| u64::from(b >> (7 - i % 8) & 1)) };
    let total = model.total();
    let (mut low, mut high) = (0u64, TOP);
    let mut value = 0u64;
    let mut pos = 0;
    for _ in 0..32 {
        value = (value << 1) | bit_at(pos);
        pos += 1;
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let range = high - low + 1;
        let target = ((value - low + 1) * total - 1) / range;
        let s = model.cumulative.partition_point(|&c| c <= target) - 1;
        if s >= model.symbols() {
            return Err(Error::MalformedStream("arithmetic code out of range".into()));
        }
        out.push(s);
        high = low + range * model.cumulative[s + 1] / total - 1;
        low += range * model.cumulative[s] / total;
        loop {
            let offset = if high < HALF {
                0
            } else if low >= HALF {
                HALF
            } else if low >= QUARTER && high < HALF + QUARTER {
                QUARTER
            } else {
                break;
            };
            low = (low - offset) << 1;
            high = ((high - offset) << 1) | 1;
            value = ((value - offset) << 1) | bit_at(pos);
            pos += 1;
        }
    }
    Ok(out)
}
