//! JFIF marker-stream writer and parser for baseline sequential files.

use crate::color::Layout;
use crate::dct::IntCoeffs;
use crate::error::{Error, Result};
use crate::tables::{IntQuantTablePair, ZIGZAG};

use super::huffman::{entropy_decode, entropy_encode, BitStats, DecodeTable, HuffmanSpec, ScanTables};

const SOI: u8 = 0xd8;
const EOI: u8 = 0xd9;
const APP0: u8 = 0xe0;
const DQT: u8 = 0xdb;
const SOF0: u8 = 0xc0;
const SOF1: u8 = 0xc1;
const DHT: u8 = 0xc4;
const SOS: u8 = 0xda;
const DRI: u8 = 0xdd;

/// A complete baseline JFIF file plus code-length statistics of its scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JpegBitstream {
    pub bytes: Vec<u8>,
    pub stats: BitStats,
}

impl JpegBitstream {
    pub fn total_bits(&self) -> u64 {
        8 * self.bytes.len() as u64
    }
}

/// Everything `read_jfif` recovers from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedJfif {
    pub tables: IntQuantTablePair,
    pub coeffs: IntCoeffs,
}

fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xff, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

fn dqt_payload(id: u8, table: &[u8; 64]) -> Vec<u8> {
    let mut p = Vec::with_capacity(65);
    p.push(id);
    p.extend(ZIGZAG.iter().map(|&k| table[k]));
    p
}

fn dht_payload(class: u8, id: u8, spec: &HuffmanSpec) -> Vec<u8> {
    let mut p = Vec::with_capacity(17 + spec.vals.len());
    p.push((class << 4) | id);
    p.extend_from_slice(&spec.bits);
    p.extend_from_slice(&spec.vals);
    p
}

pub fn write_jfif(tables: &IntQuantTablePair, coeffs: &IntCoeffs) -> Result<JpegBitstream> {
    if coeffs.width > 0xffff || coeffs.height > 0xffff {
        return Err(Error::Shape("image too large for SOF0".into()));
    }
    let (scan, stats) = entropy_encode(coeffs)?;
    let mut out = Vec::with_capacity(scan.len() + 700);
    out.extend_from_slice(&[0xff, SOI]);
    segment(
        &mut out,
        APP0,
        &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0],
    );
    segment(&mut out, DQT, &dqt_payload(0, &tables.luma));
    segment(&mut out, DQT, &dqt_payload(1, &tables.chroma));

    let luma_sampling = match coeffs.layout {
        Layout::Yuv444 => 0x11,
        Layout::Yuv420 => 0x22,
    };
    let mut sof = vec![8];
    sof.extend_from_slice(&(coeffs.height as u16).to_be_bytes());
    sof.extend_from_slice(&(coeffs.width as u16).to_be_bytes());
    sof.extend_from_slice(&[3, 1, luma_sampling, 0, 2, 0x11, 1, 3, 0x11, 1]);
    segment(&mut out, SOF0, &sof);

    segment(&mut out, DHT, &dht_payload(0, 0, &HuffmanSpec::dc(false)));
    segment(&mut out, DHT, &dht_payload(1, 0, &HuffmanSpec::ac(false)));
    segment(&mut out, DHT, &dht_payload(0, 1, &HuffmanSpec::dc(true)));
    segment(&mut out, DHT, &dht_payload(1, 1, &HuffmanSpec::ac(true)));

    segment(
        &mut out,
        SOS,
        &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0],
    );
    out.extend_from_slice(&scan);
    out.extend_from_slice(&[0xff, EOI]);
    Ok(JpegBitstream { bytes: out, stats })
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::Malformed("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Malformed("segment runs past end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn marker(&mut self) -> Result<u8> {
        if self.u8()? != 0xff {
            return Err(Error::Malformed(format!("expected marker at byte {}", self.pos - 1)));
        }
        let mut m = self.u8()?;
        while m == 0xff {
            m = self.u8()?;
        }
        Ok(m)
    }

    fn segment(&mut self) -> Result<&'a [u8]> {
        let len = self.u16()? as usize;
        if len < 2 {
            return Err(Error::Malformed("segment length below 2".into()));
        }
        self.take(len - 2)
    }
}

struct Frame {
    width: usize,
    height: usize,
    layout: Layout,
    /// (component id, quant table id)
    components: [(u8, u8); 3],
}

fn parse_sof(p: &[u8]) -> Result<Frame> {
    if p.len() < 6 {
        return Err(Error::Malformed("short SOF".into()));
    }
    if p[0] != 8 {
        return Err(Error::Unsupported(format!("{}-bit sample precision", p[0])));
    }
    let height = u16::from_be_bytes([p[1], p[2]]) as usize;
    let width = u16::from_be_bytes([p[3], p[4]]) as usize;
    let n = p[5] as usize;
    if n != 3 {
        return Err(Error::Unsupported(format!("{n} components")));
    }
    if p.len() != 6 + 3 * n {
        return Err(Error::Malformed("SOF length".into()));
    }
    let comp = |i: usize| (p[6 + 3 * i], p[7 + 3 * i], p[8 + 3 * i]);
    let sampling = [comp(0).1, comp(1).1, comp(2).1];
    let layout = match sampling {
        [0x11, 0x11, 0x11] => Layout::Yuv444,
        [0x22, 0x11, 0x11] => Layout::Yuv420,
        other => return Err(Error::Unsupported(format!("sampling factors {other:02x?}"))),
    };
    if width == 0 || height == 0 {
        return Err(Error::Unsupported("zero-sized or DNL-defined frame".into()));
    }
    Ok(Frame {
        width,
        height,
        layout,
        components: std::array::from_fn(|i| (comp(i).0, comp(i).2)),
    })
}

pub fn read_jfif(bytes: &[u8]) -> Result<DecodedJfif> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.marker()? != SOI {
        return Err(Error::Malformed("missing SOI".into()));
    }
    let mut qtables: [Option<[u8; 64]>; 4] = [None; 4];
    let mut dc_tables: [Option<DecodeTable>; 4] = Default::default();
    let mut ac_tables: [Option<DecodeTable>; 4] = Default::default();
    let mut frame: Option<Frame> = None;
    loop {
        let m = r.marker()?;
        match m {
            DQT => {
                let p = r.segment()?;
                let mut i = 0;
                while i < p.len() {
                    let (pq, tq) = (p[i] >> 4, (p[i] & 0x0f) as usize);
                    if pq != 0 {
                        return Err(Error::Unsupported("16-bit quantization tables".into()));
                    }
                    if tq > 3 || i + 65 > p.len() {
                        return Err(Error::Malformed("bad DQT segment".into()));
                    }
                    let mut t = [0u8; 64];
                    for (z, &k) in ZIGZAG.iter().enumerate() {
                        t[k] = p[i + 1 + z];
                    }
                    qtables[tq] = Some(t);
                    i += 65;
                }
            }
            DHT => {
                let p = r.segment()?;
                let mut i = 0;
                while i < p.len() {
                    if i + 17 > p.len() {
                        return Err(Error::Malformed("short DHT segment".into()));
                    }
                    let (tc, th) = (p[i] >> 4, (p[i] & 0x0f) as usize);
                    if tc > 1 || th > 3 {
                        return Err(Error::Malformed("bad DHT class/id".into()));
                    }
                    let mut bits = [0u8; 16];
                    bits.copy_from_slice(&p[i + 1..i + 17]);
                    let n: usize = bits.iter().map(|&b| b as usize).sum();
                    if i + 17 + n > p.len() {
                        return Err(Error::Malformed("DHT symbols run past segment".into()));
                    }
                    let spec = HuffmanSpec {
                        bits,
                        vals: p[i + 17..i + 17 + n].to_vec(),
                    };
                    let table = DecodeTable::new(&spec)?;
                    if tc == 0 {
                        dc_tables[th] = Some(table);
                    } else {
                        ac_tables[th] = Some(table);
                    }
                    i += 17 + n;
                }
            }
            SOF0 | SOF1 => frame = Some(parse_sof(r.segment()?)?),
            0xc2 | 0xc6 => return Err(Error::Unsupported("progressive JPEG".into())),
            0xc9..=0xcb | 0xcd..=0xcf => return Err(Error::Unsupported("arithmetic coding".into())),
            0xc3 | 0xc5 | 0xc7 => {
                return Err(Error::Unsupported("lossless or hierarchical JPEG".into()))
            }
            DRI => {
                let p = r.segment()?;
                if p.len() != 2 {
                    return Err(Error::Malformed("bad DRI".into()));
                }
                if p != [0, 0] {
                    return Err(Error::Unsupported("restart intervals".into()));
                }
            }
            SOS => {
                let frame = frame
                    .as_ref()
                    .ok_or_else(|| Error::Malformed("SOS before SOF".into()))?;
                let p = r.segment()?;
                if p.len() != 10 || p[0] != 3 {
                    return Err(Error::Unsupported("non-interleaved scan".into()));
                }
                if p[7] != 0 || p[8] != 63 || p[9] != 0 {
                    return Err(Error::Unsupported("spectral selection / successive approximation".into()));
                }
                let mut dc = Vec::with_capacity(3);
                let mut ac = Vec::with_capacity(3);
                for (c, &(id, _)) in frame.components.iter().enumerate() {
                    if p[1 + 2 * c] != id {
                        return Err(Error::Unsupported("scan component order".into()));
                    }
                    let sel = p[2 + 2 * c];
                    let d = dc_tables[(sel >> 4) as usize & 3]
                        .as_ref()
                        .ok_or_else(|| Error::Malformed("missing DC table".into()))?;
                    let a = ac_tables[(sel & 0x0f) as usize & 3]
                        .as_ref()
                        .ok_or_else(|| Error::Malformed("missing AC table".into()))?;
                    dc.push(d);
                    ac.push(a);
                }
                let scan_tables = ScanTables {
                    dc: [dc[0], dc[1], dc[2]],
                    ac: [ac[0], ac[1], ac[2]],
                };
                let (coeffs, used) = entropy_decode(
                    &bytes[r.pos..],
                    frame.layout,
                    frame.width,
                    frame.height,
                    &scan_tables,
                )?;
                r.pos += used;
                // Skip fill bytes up to the next marker.
                while r.pos < bytes.len() && !(bytes[r.pos] == 0xff && bytes.get(r.pos + 1).is_some_and(|&b| b != 0 && b != 0xff)) {
                    r.pos += 1;
                }
                if r.marker()? != EOI {
                    return Err(Error::Unsupported("multiple scans".into()));
                }
                let qt = |c: usize| {
                    qtables[frame.components[c].1 as usize & 3]
                        .ok_or_else(|| Error::Malformed("missing quantization table".into()))
                };
                let luma = qt(0)?;
                let chroma = qt(1)?;
                if qt(2)? != chroma {
                    return Err(Error::Unsupported("separate Cb/Cr quantization tables".into()));
                }
                return Ok(DecodedJfif {
                    tables: IntQuantTablePair { luma, chroma },
                    coeffs,
                });
            }
            EOI => return Err(Error::Malformed("EOI before any scan".into())),
            0xe0..=0xef | 0xfe => {
                r.segment()?;
            }
            other => return Err(Error::Malformed(format!("unexpected marker 0x{other:02x}"))),
        }
    }
}
