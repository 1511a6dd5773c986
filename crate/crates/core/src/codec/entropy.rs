//! Baseline-style coefficient coding: differential DC size categories, AC
//! (run, size) symbols, and per-image Huffman tables.

use super::bits::{BitReader, BitWriter};
use super::huffman::{HuffmanDecoder, HuffmanEncoder, HuffmanSpec};
use crate::error::{Error, Result};
use crate::imaging::BLOCK_LEN;

/// Quantized coefficients of one block, in transform order.
pub type QuantBlock = [i32; BLOCK_LEN];

pub const EOB: u8 = 0x00;
pub const ZRL: u8 = 0xF0;
pub const MAX_CATEGORY: u32 = 15;

/// Entropy-coded coefficients with the tables needed to decode them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntropyCoded {
    pub dc_table: HuffmanSpec,
    pub ac_table: HuffmanSpec,
    pub payload: Vec<u8>,
    /// Payload length before byte padding.
    pub payload_bits: usize,
}

impl EntropyCoded {
    /// Serialized size of both tables in bits.
    pub fn table_bits(&self) -> usize {
        8 * (self.dc_table.to_bytes().len() + self.ac_table.to_bytes().len())
    }
}

#[derive(Clone, Copy)]
struct Token {
    symbol: u8,
    dc: bool,
    extra: u32,
    extra_len: u32,
}

/// Number of bits needed for `|v|`.
pub fn category(v: i64) -> u32 {
    64 - v.unsigned_abs().leading_zeros()
}

fn magnitude_bits(v: i64) -> Result<(u32, u32)> {
    let size = category(v);
    if size > MAX_CATEGORY {
        return Err(Error::TableOverflow(v));
    }
    let bits = if v < 0 { v + (1i64 << size) - 1 } else { v };
    Ok((size, bits as u32))
}

fn extend(bits: u32, size: u32) -> i64 {
    if size == 0 {
        0
    } else if bits < 1 << (size - 1) {
        i64::from(bits) - (1i64 << size) + 1
    } else {
        i64::from(bits)
    }
}

fn tokenize(blocks: &[QuantBlock], order: &[usize]) -> Result<Vec<Token>> {
    let mut tokens = Vec::with_capacity(blocks.len() * 4);
    let mut prev_dc = 0i64;
    for block in blocks {
        let dc = i64::from(block[order[0]]);
        let (size, extra) = magnitude_bits(dc - prev_dc)?;
        tokens.push(Token { symbol: size as u8, dc: true, extra, extra_len: size });
        prev_dc = dc;

        let mut run = 0u32;
        for &pos in &order[1..] {
            let v = i64::from(block[pos]);
            if v == 0 {
                run += 1;
                continue;
            }
            while run > 15 {
                tokens.push(Token { symbol: ZRL, dc: false, extra: 0, extra_len: 0 });
                run -= 16;
            }
            let (size, extra) = magnitude_bits(v)?;
            tokens.push(Token { symbol: ((run << 4) | size) as u8, dc: false, extra, extra_len: size });
            run = 0;
        }
        if run > 0 {
            tokens.push(Token { symbol: EOB, dc: false, extra: 0, extra_len: 0 });
        }
    }
    Ok(tokens)
}

/// Codes `blocks` scanned in `order` (a permutation of `0..64`).
pub fn entropy_encode(blocks: &[QuantBlock], order: &[usize]) -> Result<EntropyCoded> {
    check_order(order)?;
    let tokens = tokenize(blocks, order)?;
    let mut dc_freq = [0u64; 256];
    let mut ac_freq = [0u64; 256];
    for t in &tokens {
        if t.dc {
            dc_freq[t.symbol as usize] += 1;
        } else {
            ac_freq[t.symbol as usize] += 1;
        }
    }
    let dc_table = HuffmanSpec::from_frequencies(&dc_freq, true);
    let ac_table = HuffmanSpec::from_frequencies(&ac_freq, true);
    let (dc_enc, ac_enc) = (HuffmanEncoder::new(&dc_table), HuffmanEncoder::new(&ac_table));

    let mut w = BitWriter::new();
    for t in &tokens {
        let enc = if t.dc { &dc_enc } else { &ac_enc };
        enc.emit(&mut w, t.symbol);
        w.write(t.extra, t.extra_len);
    }
    let payload_bits = w.bit_len();
    Ok(EntropyCoded { dc_table, ac_table, payload: w.finish(), payload_bits })
}

/// Exact inverse of [`entropy_encode`] for `count` blocks.
pub fn entropy_decode(
    dc_table: &HuffmanSpec,
    ac_table: &HuffmanSpec,
    payload: &[u8],
    count: usize,
    order: &[usize],
) -> Result<Vec<QuantBlock>> {
    check_order(order)?;
    let (dc_dec, ac_dec) = (HuffmanDecoder::new(dc_table), HuffmanDecoder::new(ac_table));
    let mut r = BitReader::new(payload);
    let mut blocks = Vec::with_capacity(count);
    let mut prev_dc = 0i64;
    let to_i32 = |v: i64| i32::try_from(v).map_err(|_| Error::MalformedStream(format!("coefficient {v} out of range")));

    for _ in 0..count {
        let mut block = [0i32; BLOCK_LEN];
        let size = u32::from(dc_dec.decode(&mut r)?);
        if size > MAX_CATEGORY {
            return Err(Error::MalformedStream(format!("DC size category {size}")));
        }
        prev_dc += extend(r.read(size)?, size);
        block[order[0]] = to_i32(prev_dc)?;

        let mut k = 1;
        while k < BLOCK_LEN {
            let symbol = ac_dec.decode(&mut r)?;
            match symbol {
                EOB => break,
                ZRL => k += 16,
                _ => {
                    let (run, size) = (usize::from(symbol >> 4), u32::from(symbol & 0x0F));
                    if size == 0 {
                        return Err(Error::MalformedStream(format!("invalid AC symbol {symbol:#04x}")));
                    }
                    k += run;
                    if k >= BLOCK_LEN {
                        return Err(Error::MalformedStream("AC run past end of block".into()));
                    }
                    block[order[k]] = to_i32(extend(r.read(size)?, size))?;
                    k += 1;
                }
            }
        }
        if k > BLOCK_LEN {
            return Err(Error::MalformedStream("zero run past end of block".into()));
        }
        blocks.push(block);
    }
    Ok(blocks)
}

fn check_order(order: &[usize]) -> Result<()> {
    let mut seen = [false; BLOCK_LEN];
    if order.len() != BLOCK_LEN || order.iter().any(|&i| i >= BLOCK_LEN || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidArgument("scan order must be a permutation of 0..64".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::tables::ZIGZAG;

    #[test]
    fn categories_and_extra_bits() {
        assert_eq!(category(0), 0);
        assert_eq!(category(1), 1);
        assert_eq!(category(-1), 1);
        assert_eq!(category(255), 8);
        assert_eq!(category(-256), 9);
        for v in -2000i64..2000 {
            let (s, b) = magnitude_bits(v).unwrap();
            assert_eq!(extend(b, s), v);
        }
        // ones'-complement convention
        assert_eq!(magnitude_bits(-3).unwrap(), (2, 0b00));
        assert_eq!(magnitude_bits(-2).unwrap(), (2, 0b01));
    }

    #[test]
    fn overflow_is_reported() {
        let mut block = [0i32; 64];
        block[5] = 40_000;
        assert!(matches!(entropy_encode(&[block], &ZIGZAG), Err(Error::TableOverflow(40_000))));
    }

    #[test]
    fn zero_blocks_are_single_eob() {
        let blocks = vec![[0i32; 64]; 7];
        let coded = entropy_encode(&blocks, &ZIGZAG).unwrap();
        // one DC symbol and one EOB per block, each coded with one bit
        assert_eq!(coded.payload_bits, 14);
        let back = entropy_decode(&coded.dc_table, &coded.ac_table, &coded.payload, 7, &ZIGZAG).unwrap();
        assert_eq!(back, blocks);
    }

    #[test]
    fn long_zero_runs_and_full_blocks() {
        let mut a = [0i32; 64];
        a[ZIGZAG[40]] = -7;
        a[ZIGZAG[63]] = 1;
        let b: QuantBlock = std::array::from_fn(|i| i as i32 - 30);
        let blocks = vec![a, b, [0; 64], a];
        let coded = entropy_encode(&blocks, &ZIGZAG).unwrap();
        let back = entropy_decode(&coded.dc_table, &coded.ac_table, &coded.payload, 4, &ZIGZAG).unwrap();
        assert_eq!(back, blocks);
    }

    #[test]
    fn rejects_bad_order() {
        assert!(entropy_encode(&[[0; 64]], &[0; 64]).is_err());
    }
}
