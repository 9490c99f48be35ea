//! Baseline sequential Huffman coding with the standard Annex-K tables.

use crate::color::Layout;
use crate::dct::{block_grid, CoeffPlane, IntCoeffs};
use crate::error::{Error, Result};
use crate::tables::ZIGZAG;

pub const DC_LUMA_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
pub const DC_CHROMA_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
pub const DC_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

pub const AC_LUMA_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
#[rustfmt::skip]
pub const AC_LUMA_VALS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

pub const AC_CHROMA_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
#[rustfmt::skip]
pub const AC_CHROMA_VALS: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

/// A Huffman table in DHT form (code-length counts and symbols).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanSpec {
    pub bits: [u8; 16],
    pub vals: Vec<u8>,
}

impl HuffmanSpec {
    pub fn dc(chroma: bool) -> Self {
        HuffmanSpec {
            bits: if chroma { DC_CHROMA_BITS } else { DC_LUMA_BITS },
            vals: DC_VALS.to_vec(),
        }
    }

    pub fn ac(chroma: bool) -> Self {
        if chroma {
            HuffmanSpec {
                bits: AC_CHROMA_BITS,
                vals: AC_CHROMA_VALS.to_vec(),
            }
        } else {
            HuffmanSpec {
                bits: AC_LUMA_BITS,
                vals: AC_LUMA_VALS.to_vec(),
            }
        }
    }

    /// Canonical code assignment: (symbol, code, length) in DHT order.
    fn canonical(&self) -> Vec<(u8, u16, u8)> {
        let mut out = Vec::with_capacity(self.vals.len());
        let mut code: u32 = 0;
        let mut k = 0;
        for len in 1..=16u8 {
            for _ in 0..self.bits[len as usize - 1] {
                out.push((self.vals[k], code as u16, len));
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        out
    }
}

/// Encoder lookup: symbol -> (code, length).
#[derive(Debug, Clone)]
pub struct EncodeTable {
    codes: [(u16, u8); 256],
}

impl EncodeTable {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        for (sym, code, len) in spec.canonical() {
            codes[sym as usize] = (code, len);
        }
        EncodeTable { codes }
    }

    #[inline]
    fn get(&self, sym: u8) -> (u16, u8) {
        self.codes[sym as usize]
    }
}

/// Decoder in the T.81 F.16 style (maxcode / valptr per length).
#[derive(Debug, Clone)]
pub struct DecodeTable {
    mincode: [i32; 17],
    maxcode: [i32; 17],
    valptr: [usize; 17],
    vals: Vec<u8>,
}

impl DecodeTable {
    pub fn new(spec: &HuffmanSpec) -> Result<Self> {
        let total: usize = spec.bits.iter().map(|&b| b as usize).sum();
        if total != spec.vals.len() || total > 256 {
            return Err(Error::Malformed("Huffman table counts do not match symbols".into()));
        }
        let mut mincode = [0i32; 17];
        let mut maxcode = [-1i32; 17];
        let mut valptr = [0usize; 17];
        let mut code = 0i32;
        let mut k = 0usize;
        for len in 1..=16 {
            let n = spec.bits[len - 1] as usize;
            if n > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += n as i32;
                k += n;
                maxcode[len] = code - 1;
            }
            if code > (1 << len) {
                return Err(Error::Malformed("over-subscribed Huffman table".into()));
            }
            code <<= 1;
        }
        Ok(DecodeTable {
            mincode,
            maxcode,
            valptr,
            vals: spec.vals.clone(),
        })
    }

    fn decode(&self, r: &mut BitReader<'_>) -> Result<u8> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | r.bit()? as i32;
            if code <= self.maxcode[len] {
                return Ok(self.vals[self.valptr[len] + (code - self.mincode[len]) as usize]);
            }
        }
        Err(Error::Malformed("invalid Huffman code".into()))
    }
}

/// Entropy-coded segment writer with 0xFF byte stuffing.
#[derive(Debug, Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
    written: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn put(&mut self, code: u32, len: u8) {
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | (code as u64 & ((1u64 << len) - 1));
        self.nbits += len as u32;
        self.written += len as u64;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xff {
                self.out.push(0x00);
            }
            self.nbits -= 8;
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    /// Number of payload bits written so far (excluding padding and stuffing).
    pub fn bits_written(&self) -> u64 {
        self.written
    }

    /// Pads the final partial byte with 1-bits.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits as u8;
            let w = self.written;
            self.put((1u32 << pad) - 1, pad);
            self.written = w;
        }
        self.out
    }
}

/// Reads an entropy-coded segment, removing stuffed zero bytes. Stops at the
/// first marker.
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
    hit_marker: bool,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            acc: 0,
            nbits: 0,
            hit_marker: false,
        }
    }

    fn refill(&mut self) -> Result<()> {
        if self.hit_marker || self.pos >= self.data.len() {
            return Err(Error::Malformed("entropy-coded data ended early".into()));
        }
        let byte = self.data[self.pos];
        if byte == 0xff {
            match self.data.get(self.pos + 1) {
                Some(0x00) => self.pos += 2,
                _ => {
                    self.hit_marker = true;
                    return Err(Error::Malformed("marker inside entropy-coded data".into()));
                }
            }
        } else {
            self.pos += 1;
        }
        self.acc = (self.acc << 8) | byte as u32;
        self.nbits += 8;
        Ok(())
    }

    #[inline]
    fn bit(&mut self) -> Result<u32> {
        if self.nbits == 0 {
            self.refill()?;
        }
        self.nbits -= 1;
        Ok((self.acc >> self.nbits) & 1)
    }

    fn bits(&mut self, n: u8) -> Result<u32> {
        let mut v = 0;
        for _ in 0..n {
            v = (v << 1) | self.bit()?;
        }
        Ok(v)
    }

    /// Byte offset just past the consumed data.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[inline]
fn category(v: i32) -> u8 {
    (32 - v.unsigned_abs().leading_zeros()) as u8
}

#[inline]
fn magnitude_bits(v: i32, cat: u8) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v - 1) as u32 & ((1u32 << cat) - 1)
    }
}

#[inline]
fn extend(bits: u32, cat: u8) -> i32 {
    if cat == 0 {
        0
    } else if bits < (1 << (cat - 1)) {
        bits as i32 - (1 << cat) + 1
    } else {
        bits as i32
    }
}

/// Exact code-length accounting per channel (Y, Cb, Cr).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct BitStats {
    pub dc_bits: [u64; 3],
    pub ac_bits: [u64; 3],
}

impl BitStats {
    pub fn total(&self) -> u64 {
        self.dc_bits.iter().sum::<u64>() + self.ac_bits.iter().sum::<u64>()
    }
}

struct Coder {
    dc: [EncodeTable; 2],
    ac: [EncodeTable; 2],
}

const CHANNEL_NAMES: [&str; 3] = ["Y", "Cb", "Cr"];

fn encode_block(
    w: &mut BitWriter,
    coder: &Coder,
    block: &[i32; 64],
    pred: &mut i32,
    channel: usize,
    index: usize,
    stats: &mut BitStats,
) -> Result<()> {
    let t = usize::from(channel > 0);
    let start = w.bits_written();
    let diff = block[0] - *pred;
    *pred = block[0];
    let cat = category(diff);
    if cat > 11 {
        return Err(Error::CoefficientRange {
            channel: CHANNEL_NAMES[channel],
            block: index,
            value: diff,
        });
    }
    let (code, len) = coder.dc[t].get(cat);
    w.put(code as u32, len);
    w.put(magnitude_bits(diff, cat), cat);
    let mid = w.bits_written();
    stats.dc_bits[channel] += mid - start;

    let mut run = 0u8;
    for &k in &ZIGZAG[1..] {
        let v = block[k];
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            let (code, len) = coder.ac[t].get(0xf0);
            w.put(code as u32, len);
            run -= 16;
        }
        let cat = category(v);
        if cat > 10 {
            return Err(Error::CoefficientRange {
                channel: CHANNEL_NAMES[channel],
                block: index,
                value: v,
            });
        }
        let (code, len) = coder.ac[t].get((run << 4) | cat);
        w.put(code as u32, len);
        w.put(magnitude_bits(v, cat), cat);
        run = 0;
    }
    if run > 0 {
        let (code, len) = coder.ac[t].get(0x00);
        w.put(code as u32, len);
    }
    stats.ac_bits[channel] += w.bits_written() - mid;
    Ok(())
}

/// Visits blocks in interleaved MCU order as (channel, block index).
pub fn mcu_order(coeffs_layout: Layout, chroma_blocks: (usize, usize)) -> Vec<(usize, usize)> {
    let (cw, ch) = chroma_blocks;
    let mut order = Vec::new();
    match coeffs_layout {
        Layout::Yuv444 => {
            for i in 0..cw * ch {
                order.extend([(0, i), (1, i), (2, i)]);
            }
        }
        Layout::Yuv420 => {
            let lw = cw * 2;
            for my in 0..ch {
                for mx in 0..cw {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            order.push((0, (2 * my + dy) * lw + 2 * mx + dx));
                        }
                    }
                    order.push((1, my * cw + mx));
                    order.push((2, my * cw + mx));
                }
            }
        }
    }
    order
}

fn check_grid(q: &IntCoeffs) -> Result<(usize, usize)> {
    let c = &q.channels[1];
    let (cw, ch) = (c.blocks_w, c.blocks_h);
    let (lw, lh) = match q.layout {
        Layout::Yuv444 => (cw, ch),
        Layout::Yuv420 => (2 * cw, 2 * ch),
    };
    let ok = q.channels[0].blocks_w == lw
        && q.channels[0].blocks_h == lh
        && q.channels[2].blocks_w == cw
        && q.channels[2].blocks_h == ch
        && q.channels.iter().all(|p| p.blocks.len() == p.blocks_w * p.blocks_h);
    if ok {
        Ok((cw, ch))
    } else {
        Err(Error::Shape("block grids do not form whole MCUs".into()))
    }
}

/// Huffman-codes quantized coefficients into an entropy-coded segment.
pub fn entropy_encode(q: &IntCoeffs) -> Result<(Vec<u8>, BitStats)> {
    let grid = check_grid(q)?;
    let coder = Coder {
        dc: [
            EncodeTable::new(&HuffmanSpec::dc(false)),
            EncodeTable::new(&HuffmanSpec::dc(true)),
        ],
        ac: [
            EncodeTable::new(&HuffmanSpec::ac(false)),
            EncodeTable::new(&HuffmanSpec::ac(true)),
        ],
    };
    let mut w = BitWriter::new();
    let mut stats = BitStats::default();
    let mut pred = [0i32; 3];
    for (c, i) in mcu_order(q.layout, grid) {
        encode_block(
            &mut w,
            &coder,
            &q.channels[c].blocks[i],
            &mut pred[c],
            c,
            i,
            &mut stats,
        )?;
    }
    Ok((w.finish(), stats))
}

/// Tables used by each component: (dc, ac) decoder per channel.
pub struct ScanTables<'a> {
    pub dc: [&'a DecodeTable; 3],
    pub ac: [&'a DecodeTable; 3],
}

fn decode_block(r: &mut BitReader<'_>, dc: &DecodeTable, ac: &DecodeTable, pred: &mut i32) -> Result<[i32; 64]> {
    let mut block = [0i32; 64];
    let cat = dc.decode(r)?;
    if cat > 11 {
        return Err(Error::Malformed(format!("DC category {cat}")));
    }
    let diff = extend(r.bits(cat)?, cat);
    *pred += diff;
    block[0] = *pred;
    let mut k = 1;
    while k < 64 {
        let sym = ac.decode(r)?;
        let run = (sym >> 4) as usize;
        let cat = sym & 0x0f;
        if cat == 0 {
            if run == 15 {
                k += 16;
                continue;
            }
            break;
        }
        k += run;
        if k > 63 {
            return Err(Error::Malformed("AC run past end of block".into()));
        }
        block[ZIGZAG[k]] = extend(r.bits(cat)?, cat);
        k += 1;
    }
    if k > 64 {
        return Err(Error::Malformed("zero run past end of block".into()));
    }
    Ok(block)
}

/// Decodes an interleaved scan into coefficient planes. Returns the planes and
/// the number of bytes consumed.
pub fn entropy_decode(
    data: &[u8],
    layout: Layout,
    width: usize,
    height: usize,
    tables: &ScanTables<'_>,
) -> Result<(IntCoeffs, usize)> {
    let (cw, chh) = layout.chroma_dims(width, height);
    let dims = [(width, height), (cw, chh), (cw, chh)];
    let mut channels: [CoeffPlane<i32>; 3] = std::array::from_fn(|c| {
        let (bw, bh) = block_grid(layout, c, dims[c].0, dims[c].1);
        CoeffPlane {
            width: dims[c].0,
            height: dims[c].1,
            blocks_w: bw,
            blocks_h: bh,
            blocks: vec![[0; 64]; bw * bh],
        }
    });
    let grid = (channels[1].blocks_w, channels[1].blocks_h);
    let mut r = BitReader::new(data);
    let mut pred = [0i32; 3];
    for (c, i) in mcu_order(layout, grid) {
        channels[c].blocks[i] = decode_block(&mut r, tables.dc[c], tables.ac[c], &mut pred[c])?;
    }
    let used = r.position();
    Ok((
        IntCoeffs {
            layout,
            width,
            height,
            channels,
        },
        used,
    ))
}
