//! Length-limited canonical Huffman codes in the JPEG `BITS`/`HUFFVAL` layout.

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

pub const MAX_CODE_LEN: usize = 16;

/// Code-length counts and symbols ordered by code length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HuffmanSpec {
    /// `bits[l]` = number of codes of length `l + 1`.
    pub bits: [u8; MAX_CODE_LEN],
    pub values: Vec<u8>,
}

impl HuffmanSpec {
    /// Optimal length-limited code for `freqs` (one entry per symbol 0..=255).
    ///
    /// With `reserve_all_ones` the all-ones codeword of the longest length is
    /// left unused, as in JPEG; this also guarantees every used symbol gets at
    /// least one bit. Without it a lone symbol gets a zero-length code.
    pub fn from_frequencies(freqs: &[u64], reserve_all_ones: bool) -> Self {
        assert!(freqs.len() <= 256);
        const SLOTS: usize = 257;
        let mut freq = [0u64; SLOTS];
        freq[..freqs.len()].copy_from_slice(freqs);
        if reserve_all_ones {
            freq[256] = 1;
        }
        let mut codesize = [0usize; SLOTS];
        let mut others = [usize::MAX; SLOTS];

        loop {
            // smallest nonzero frequency; ties go to the larger symbol value
            let mut c1 = None;
            let mut v = u64::MAX;
            for (i, &f) in freq.iter().enumerate() {
                if f > 0 && f <= v {
                    v = f;
                    c1 = Some(i);
                }
            }
            let Some(mut c1) = c1 else { break };
            let mut c2 = None;
            let mut v = u64::MAX;
            for (i, &f) in freq.iter().enumerate() {
                if f > 0 && f <= v && i != c1 {
                    v = f;
                    c2 = Some(i);
                }
            }
            let Some(mut c2) = c2 else { break };

            freq[c1] += freq[c2];
            freq[c2] = 0;
            codesize[c1] += 1;
            while others[c1] != usize::MAX {
                c1 = others[c1];
                codesize[c1] += 1;
            }
            others[c1] = c2;
            codesize[c2] += 1;
            while others[c2] != usize::MAX {
                c2 = others[c2];
                codesize[c2] += 1;
            }
        }

        let longest = codesize.iter().copied().max().unwrap_or(0).max(MAX_CODE_LEN);
        let mut bits = vec![0usize; longest + 1];
        for &size in &codesize {
            if size > 0 {
                bits[size] += 1;
            }
        }
        // fold codes longer than the limit back into the tree
        for i in (MAX_CODE_LEN + 1..=longest).rev() {
            while bits[i] > 0 {
                let mut j = i - 2;
                while bits[j] == 0 {
                    j -= 1;
                }
                bits[i] -= 2;
                bits[i - 1] += 1;
                bits[j + 1] += 2;
                bits[j] -= 1;
            }
        }
        if reserve_all_ones && codesize[256] > 0 {
            let mut i = MAX_CODE_LEN;
            while bits[i] == 0 {
                i -= 1;
            }
            bits[i] -= 1;
        }

        let mut values = Vec::new();
        if !reserve_all_ones {
            let used: Vec<usize> = (0..256).filter(|&s| freq_nonzero(freqs, s)).collect();
            if used.len() == 1 {
                values.push(used[0] as u8);
            }
        }
        for size in 1..=longest {
            for (sym, &cs) in codesize.iter().enumerate().take(256) {
                if cs == size {
                    values.push(sym as u8);
                }
            }
        }
        let mut out = [0u8; MAX_CODE_LEN];
        for l in 1..=MAX_CODE_LEN {
            out[l - 1] = bits[l] as u8;
        }
        // the folding step may have moved symbols between lengths; values stay in
        // their original order, which is still sorted by non-decreasing length
        Self { bits: out, values }
    }

    /// True when the table holds a single symbol coded with zero bits.
    pub fn is_degenerate(&self) -> bool {
        self.values.len() == 1 && self.bits.iter().all(|&b| b == 0)
    }

    pub fn lengths(&self) -> Vec<(u8, usize)> {
        let mut out = Vec::with_capacity(self.values.len());
        if self.is_degenerate() {
            return vec![(self.values[0], 0)];
        }
        let mut it = self.values.iter();
        for (l, &count) in self.bits.iter().enumerate() {
            for _ in 0..count {
                out.push((*it.next().expect("consistent spec"), l + 1));
            }
        }
        out
    }

    /// `BITS` (16 bytes) followed by `HUFFVAL`. Degenerate tables do not round-trip.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.bits.to_vec();
        out.extend_from_slice(&self.values);
        out
    }

    /// Parses a spec from the front of `bytes`, returning it and the bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let bits: [u8; MAX_CODE_LEN] = bytes
            .get(..MAX_CODE_LEN)
            .ok_or_else(|| Error::MalformedStream("truncated Huffman table".into()))?
            .try_into()
            .unwrap();
        let count: usize = bits.iter().map(|&b| b as usize).sum();
        let values = bytes
            .get(MAX_CODE_LEN..MAX_CODE_LEN + count)
            .ok_or_else(|| Error::MalformedStream("truncated Huffman symbols".into()))?
            .to_vec();
        let spec = Self { bits, values };
        spec.validate()?;
        Ok((spec, MAX_CODE_LEN + count))
    }

    fn validate(&self) -> Result<()> {
        // Kraft sum must not exceed one
        let mut kraft = 0u64;
        for (l, &c) in self.bits.iter().enumerate() {
            kraft += u64::from(c) << (MAX_CODE_LEN - 1 - l);
        }
        if kraft > 1 << MAX_CODE_LEN {
            return Err(Error::MalformedStream("over-subscribed Huffman table".into()));
        }
        let mut seen = [false; 256];
        for &v in &self.values {
            if std::mem::replace(&mut seen[v as usize], true) {
                return Err(Error::MalformedStream(format!("duplicate Huffman symbol {v}")));
            }
        }
        Ok(())
    }
}

fn freq_nonzero(freqs: &[u64], s: usize) -> bool {
    freqs.get(s).is_some_and(|&f| f > 0)
}

/// Symbol → (code, length) lookup.
pub struct HuffmanEncoder {
    codes: [(u32, u8); 256],
    present: [bool; 256],
}

impl HuffmanEncoder {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut codes = [(0u32, 0u8); 256];
        let mut present = [false; 256];
        for &v in &spec.values {
            present[v as usize] = true;
        }
        let mut code = 0u32;
        let mut k = 0;
        for (l, &count) in spec.bits.iter().enumerate() {
            for _ in 0..count {
                codes[spec.values[k] as usize] = (code, (l + 1) as u8);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Self { codes, present }
    }

    pub fn length(&self, symbol: u8) -> u8 {
        self.codes[symbol as usize].1
    }

    pub fn has(&self, symbol: u8) -> bool {
        self.present[symbol as usize]
    }

    pub fn emit(&self, w: &mut BitWriter, symbol: u8) {
        let (code, len) = self.codes[symbol as usize];
        debug_assert!(self.has(symbol), "symbol {symbol} has no code");
        w.write(code, u32::from(len));
    }
}

/// Canonical decoder (per-length first code and value offset).
pub struct HuffmanDecoder {
    max_code: [i64; MAX_CODE_LEN + 1],
    val_offset: [i64; MAX_CODE_LEN + 1],
    values: Vec<u8>,
    /// Set when the table has a single zero-length code.
    only: Option<u8>,
}

impl HuffmanDecoder {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut max_code = [-1i64; MAX_CODE_LEN + 1];
        let mut val_offset = [0i64; MAX_CODE_LEN + 1];
        let mut code = 0i64;
        let mut k = 0i64;
        for l in 1..=MAX_CODE_LEN {
            let count = i64::from(spec.bits[l - 1]);
            if count > 0 {
                val_offset[l] = k - code;
                code += count;
                k += count;
                max_code[l] = code - 1;
            }
            code <<= 1;
        }
        let only = spec.is_degenerate().then(|| spec.values[0]);
        Self { max_code, val_offset, values: spec.values.clone(), only }
    }

    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<u8> {
        if let Some(v) = self.only {
            return Ok(v);
        }
        let mut code = 0i64;
        for l in 1..=MAX_CODE_LEN {
            code = (code << 1) | i64::from(r.read_bit()?);
            if code <= self.max_code[l] {
                return Ok(self.values[(code + self.val_offset[l]) as usize]);
            }
        }
        Err(Error::MalformedStream("invalid Huffman code".into()))
    }
}
