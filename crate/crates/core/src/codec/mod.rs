//! Bit-accurate baseline JPEG path: the ground truth for actual rate and
//! distortion.

pub mod huffman;
pub mod jfif;

pub use huffman::{entropy_decode, entropy_encode, BitStats};
pub use jfif::{read_jfif, write_jfif, DecodedJfif, JpegBitstream};

use crate::color::{from_layout, to_layout, Layout};
use crate::dct::{fdct_image, idct_image, IntCoeffs, RealCoeffs};
use crate::error::Result;
use crate::image::{psnr, RealImage, RgbImage};
use crate::tables::{IntQuantTablePair, QuantTableParams, Quality};

/// Rounds `d / p` half away from zero, luma table for Y and chroma for Cb/Cr.
pub fn quantize_hard(coeffs: &RealCoeffs, t: &IntQuantTablePair) -> IntCoeffs {
    let mut out = IntCoeffs::zeros_like(coeffs);
    for (c, (src, dst)) in coeffs.channels.iter().zip(out.channels.iter_mut()).enumerate() {
        let table = t.table(c > 0);
        for (sb, db) in src.blocks.iter().zip(dst.blocks.iter_mut()) {
            for k in 0..64 {
                db[k] = (sb[k] / f64::from(table[k])).round() as i32;
            }
        }
    }
    out
}

pub fn dequantize(q: &IntCoeffs, t: &IntQuantTablePair) -> RealCoeffs {
    let mut out = RealCoeffs::zeros_like(q);
    for (c, (src, dst)) in q.channels.iter().zip(out.channels.iter_mut()).enumerate() {
        let table = t.table(c > 0);
        for (sb, db) in src.blocks.iter().zip(dst.blocks.iter_mut()) {
            for k in 0..64 {
                db[k] = f64::from(sb[k]) * f64::from(table[k]);
            }
        }
    }
    out
}

/// Forward transform of an image into unquantized coefficients.
pub fn analyze(x: &RgbImage, layout: Layout) -> RealCoeffs {
    fdct_image(&to_layout(x, layout))
}

/// Decoder-side reconstruction before the final clamp and 8-bit rounding.
pub fn reconstruct_real(q: &IntCoeffs, t: &IntQuantTablePair) -> RealImage {
    from_layout(&idct_image(&dequantize(q, t)))
}

pub fn reconstruct(q: &IntCoeffs, t: &IntQuantTablePair) -> RgbImage {
    reconstruct_real(q, t).to_rgb8()
}

/// Result of one hard encode/decode pass.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub bpp: f64,
    pub psnr: f64,
    pub file: JpegBitstream,
    pub tables: IntQuantTablePair,
    pub reconstruction: RgbImage,
}

/// Encodes with integer tables and measures file-level bpp and RGB PSNR.
pub fn encode_measure_tables(x: &RgbImage, tables: &IntQuantTablePair, layout: Layout) -> Result<Measurement> {
    let q = quantize_hard(&analyze(x, layout), tables);
    let file = write_jfif(tables, &q)?;
    let reconstruction = reconstruct(&q, tables);
    Ok(Measurement {
        bpp: file.total_bits() as f64 / x.pixels() as f64,
        psnr: psnr(x, &reconstruction),
        file,
        tables: *tables,
        reconstruction,
    })
}

pub fn encode_measure(x: &RgbImage, p: &QuantTableParams, q: Quality, layout: Layout) -> Result<Measurement> {
    encode_measure_tables(x, &p.scale_table(q), layout)
}
