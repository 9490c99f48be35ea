//! Differentiable JPEG compression/decompression with exact reverse-mode
//! gradients with respect to the quantization tables.
//!
//! The forward pass mirrors the codec: color conversion, optional 4:2:0
//! pooling, level shift, DCT, division by the effective table, rounding,
//! dequantization, IDCT, bilinear upsampling and inverse color conversion.
//! In soft mode rounding is replaced by `round(u) + (u - round(u))^3`; in
//! noisy mode it is replaced by additive offsets `u + n` supplied by the
//! caller (typically uniform noise on [-0.5, 0.5)).

use crate::codec::analyze;
use crate::color::{
    upsample_plane, upsample_plane_adjoint, ycc_to_rgb_adjoint, ycc_to_rgb_pixel, Layout, Plane,
};
use crate::dct::{idct_block, idct_plane_adjoint, CoeffPlanes, RealCoeffs};
use crate::error::{Error, Result};
use crate::image::{RealImage, RgbImage};
use crate::tables::{QuantTableParams, Quality};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Soft,
    /// `u + n` with caller-supplied offsets, see [`forward_noisy`].
    Noisy,
    Hard,
}

/// Cubic rounding surrogate and its derivative. The round term is piecewise
/// constant, so the derivative comes from the cubic alone.
#[inline]
pub fn soft_round(x: f64) -> (f64, f64) {
    let r = x.round();
    let f = x - r;
    (r + f * f * f, 3.0 * f * f)
}

/// Effective (scaled, unrounded) tables plus a mask of entries that were not
/// clipped to 1 or 255 and therefore still depend on `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveTables {
    pub tables: QuantTableParams,
    /// d(effective)/d(p) per entry: `s(q)/100`, or 0 where the clip is active.
    pub jacobian: QuantTableParams,
}

pub fn effective_table(p: &QuantTableParams, q: Quality) -> EffectiveTables {
    let s = q.scale();
    EffectiveTables {
        tables: p.effective(q),
        jacobian: p.map(|v| if v * s > 1.0 && v * s < 255.0 { s } else { 0.0 }),
    }
}

impl EffectiveTables {
    /// Tables used as-is (no quality scaling).
    pub fn identity(p: &QuantTableParams) -> Self {
        EffectiveTables {
            tables: *p,
            jacobian: p.map(|_| 1.0),
        }
    }
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    mode: Mode,
    tables: EffectiveTables,
    /// Table-normalized, unrounded coefficients `d / t`.
    normalized: RealCoeffs,
    /// Offsets of a noisy-mode pass.
    noise: Option<RealCoeffs>,
    /// True where the unclamped reconstruction lies inside [0, 255].
    inside: Vec<bool>,
}

impl ForwardTape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn normalized(&self) -> &RealCoeffs {
        &self.normalized
    }

    pub fn tables(&self) -> &EffectiveTables {
        &self.tables
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Real reconstruction clamped to [0, 255], not rounded.
    pub reconstruction: RealImage,
    /// Soft- (or hard-) quantized coefficients in table units.
    pub quantized: RealCoeffs,
    pub tape: ForwardTape,
}

/// Runs the proxy on an RGB image.
pub fn forward(x: &RgbImage, p: &QuantTableParams, q: Quality, layout: Layout, mode: Mode) -> ForwardOutput {
    forward_coeffs(&analyze(x, layout), &effective_table(p, q), mode)
}

/// Runs the proxy from precomputed analysis coefficients (which do not depend
/// on the tables and can be cached across optimizer steps).
/// `Mode::Noisy` here uses zero offsets.
pub fn forward_coeffs(d: &RealCoeffs, tables: &EffectiveTables, mode: Mode) -> ForwardOutput {
    forward_impl(d, tables, mode, None)
}

/// Table-normalized coefficients `d / t`, luma table for Y and chroma for Cb/Cr.
pub fn normalize(d: &RealCoeffs, tables: &EffectiveTables) -> RealCoeffs {
    let mut out = RealCoeffs::zeros_like(d);
    for (c, (src, dst)) in d.channels.iter().zip(out.channels.iter_mut()).enumerate() {
        let t = tables.tables.table(c > 0);
        for (sb, db) in src.blocks.iter().zip(dst.blocks.iter_mut()) {
            for k in 0..64 {
                db[k] = sb[k] / t[k];
            }
        }
    }
    out
}

/// Noisy-mode forward pass: each normalized coefficient `u` is replaced by
/// `u + n` before dequantization.
pub fn forward_noisy(d: &RealCoeffs, tables: &EffectiveTables, noise: &RealCoeffs) -> Result<ForwardOutput> {
    check_same_shape(d, noise)?;
    Ok(forward_impl(d, tables, Mode::Noisy, Some(noise)))
}

fn forward_impl(d: &RealCoeffs, tables: &EffectiveTables, mode: Mode, noise: Option<&RealCoeffs>) -> ForwardOutput {
    let mut normalized = RealCoeffs::zeros_like(d);
    let mut quantized = RealCoeffs::zeros_like(d);
    let mut planes: Vec<Plane> = Vec::with_capacity(3);
    for c in 0..3 {
        let t = tables.tables.table(c > 0);
        let src = &d.channels[c];
        let (un, qn) = (&mut normalized.channels[c], &mut quantized.channels[c]);
        let mut out = Plane::new(src.width, src.height);
        for (i, block) in src.blocks.iter().enumerate() {
            let mut deq = [0.0; 64];
            for k in 0..64 {
                let u = block[k] / t[k];
                let r = match mode {
                    Mode::Soft => soft_round(u).0,
                    Mode::Hard => u.round(),
                    Mode::Noisy => u + noise.map_or(0.0, |n| n.channels[c].blocks[i][k]),
                };
                un.blocks[i][k] = u;
                qn.blocks[i][k] = r;
                deq[k] = r * t[k];
            }
            let s = idct_block(&deq);
            let (bx, by) = (i % src.blocks_w, i / src.blocks_w);
            for y in 0..8 {
                let py = by * 8 + y;
                if py >= src.height {
                    break;
                }
                for x in 0..8 {
                    let px = bx * 8 + x;
                    if px >= src.width {
                        break;
                    }
                    out.data[py * src.width + px] = s[y * 8 + x] + 128.0;
                }
            }
        }
        planes.push(out);
    }
    let (w, h) = (d.width, d.height);
    if d.layout == Layout::Yuv420 {
        for p in planes.iter_mut().skip(1) {
            *p = upsample_plane(p, w, h);
        }
    }
    let mut recon = RealImage::zeros(w, h);
    let mut inside = vec![true; w * h * 3];
    for i in 0..w * h {
        let rgb = ycc_to_rgb_pixel([planes[0].data[i], planes[1].data[i], planes[2].data[i]]);
        for c in 0..3 {
            let v = rgb[c];
            let ok = (0.0..=255.0).contains(&v);
            inside[i * 3 + c] = ok;
            recon.data[i * 3 + c] = v.clamp(0.0, 255.0);
        }
    }
    ForwardOutput {
        reconstruction: recon,
        quantized,
        tape: ForwardTape {
            mode,
            tables: *tables,
            normalized,
            noise: noise.cloned(),
            inside,
        },
    }
}

/// Reverse-mode gradient with respect to the table parameters `p`.
///
/// `grad_recon` is the upstream gradient on the (clamped) reconstruction and
/// `grad_quantized` the upstream gradient on the soft-quantized coefficients
/// (from the rate term). Either may be absent.
pub fn backward(
    tape: &ForwardTape,
    grad_recon: Option<&RealImage>,
    grad_quantized: Option<&RealCoeffs>,
) -> Result<QuantTableParams> {
    backward_full(tape, grad_recon, grad_quantized, None)
}

/// Like [`backward`], with an extra upstream gradient on the unrounded
/// normalized coefficients `d / t` (used by noise-relaxed rate terms).
pub fn backward_full(
    tape: &ForwardTape,
    grad_recon: Option<&RealImage>,
    grad_quantized: Option<&RealCoeffs>,
    grad_normalized: Option<&RealCoeffs>,
) -> Result<QuantTableParams> {
    if tape.mode == Mode::Hard {
        return Err(Error::Shape("backward requires a soft- or noisy-mode tape".into()));
    }
    let u = &tape.normalized;
    let (w, h) = (u.width, u.height);
    // Gradient w.r.t. the dequantized coefficients, per channel and block.
    let mut g_deq: Option<[Vec<[f64; 64]>; 3]> = None;
    if let Some(g) = grad_recon {
        if g.width != w || g.height != h {
            return Err(Error::Shape("reconstruction gradient has wrong size".into()));
        }
        let mut gp = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
        for i in 0..w * h {
            let mut gr = [0.0; 3];
            for c in 0..3 {
                if tape.inside[i * 3 + c] {
                    gr[c] = g.data[i * 3 + c];
                }
            }
            let gy = ycc_to_rgb_adjoint(gr);
            for c in 0..3 {
                gp[c].data[i] = gy[c];
            }
        }
        if u.layout == Layout::Yuv420 {
            for c in 1..3 {
                let ch = &u.channels[c];
                gp[c] = upsample_plane_adjoint(&gp[c], ch.width, ch.height);
            }
        }
        g_deq = Some(std::array::from_fn(|c| {
            let ch = &u.channels[c];
            idct_plane_adjoint(&gp[c], ch.blocks_w, ch.blocks_h)
        }));
    }
    for g in [grad_quantized, grad_normalized].into_iter().flatten() {
        check_same_shape(u, g)?;
    }

    let mut grad_t = QuantTableParams::zeros();
    for c in 0..3 {
        let t = tape.tables.tables.table(c > 0);
        let gt = grad_t.table_mut(c > 0);
        for (i, ub) in u.channels[c].blocks.iter().enumerate() {
            for k in 0..64 {
                let uk = ub[k];
                let (r, dr) = match tape.mode {
                    Mode::Noisy => (uk + tape.noise.as_ref().map_or(0.0, |n| n.channels[c].blocks[i][k]), 1.0),
                    _ => soft_round(uk),
                };
                let mut acc = 0.0;
                if let Some(gd) = &g_deq {
                    // deq = r(d/t) * t  =>  d deq / dt = r - r' u
                    acc += gd[c][i][k] * (r - dr * uk);
                }
                if let Some(gq) = grad_quantized {
                    // r(d/t)  =>  dr/dt = -r' u / t
                    acc -= gq.channels[c].blocks[i][k] * dr * uk / t[k];
                }
                if let Some(gn) = grad_normalized {
                    acc -= gn.channels[c].blocks[i][k] * uk / t[k];
                }
                gt[k] += acc;
            }
        }
    }
    let jac = &tape.tables.jacobian;
    let mut grad_p = QuantTableParams::zeros();
    for (g, (gt, j)) in grad_p.iter_mut().zip(grad_t.iter().zip(jac.iter())) {
        *g = gt * j;
    }
    Ok(grad_p)
}

fn check_same_shape<A, B>(a: &CoeffPlanes<A>, b: &CoeffPlanes<B>) -> Result<()> {
    let same = a
        .channels
        .iter()
        .zip(&b.channels)
        .all(|(x, y)| x.blocks_w == y.blocks_w && x.blocks_h == y.blocks_h);
    if same && a.layout == b.layout {
        Ok(())
    } else {
        Err(Error::Shape("coefficient planes differ in layout or block grid".into()))
    }
}

/// Sum of squared differences over all RGB samples, and its gradient with
/// respect to the reconstruction.
pub fn distortion_loss(x: &RealImage, recon: &RealImage) -> (f64, RealImage) {
    let mut grad = RealImage::zeros(recon.width, recon.height);
    let mut loss = 0.0;
    for ((g, &r), &v) in grad.data.iter_mut().zip(&recon.data).zip(&x.data) {
        let d = r - v;
        loss += d * d;
        *g = 2.0 * d;
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{quantize_hard, reconstruct_real};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
        // Smooth-ish content keeps most reconstructions inside [0, 255].
        let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(60.0..190.0));
        let data = (0..w * h * 3)
            .map(|i| {
                let c = i % 3;
                (base[c] + rng.gen_range(-50.0..50.0)).clamp(0.0, 255.0) as u8
            })
            .collect();
        RgbImage::new(w, h, data).unwrap()
    }

    fn q(v: u32) -> Quality {
        Quality::new(v).unwrap()
    }

    #[test]
    fn soft_round_examples() {
        assert_eq!(soft_round(2.0), (2.0, 0.0));
        let (v, d) = soft_round(0.3);
        assert!((v - 0.027).abs() < 1e-12 && (d - 0.27).abs() < 1e-12);
        let (v, d) = soft_round(-0.3);
        assert!((v + 0.027).abs() < 1e-12 && (d - 0.27).abs() < 1e-12);
    }

    #[test]
    fn soft_round_is_periodic_plus_one() {
        for i in -40..40 {
            let x = i as f64 * 0.173 + 0.01;
            let a = soft_round(x + 1.0).0;
            let b = soft_round(x).0 + 1.0;
            assert!((a - b).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn effective_table_examples() {
        let p = QuantTableParams {
            luma: [16.0; 64],
            chroma: [16.0; 64],
        };
        let e = effective_table(&p, q(50));
        assert_eq!(e.tables, p);
        let e = effective_table(&p, q(90));
        assert!((e.tables.luma[7] - 3.2).abs() < 1e-12);
        assert!((e.jacobian.luma[7] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_mid_gray_is_exact() {
        let x = RgbImage::from_fn(16, 16, |_, _| [128, 128, 128]).unwrap();
        let p = QuantTableParams::default().map(|v| v * 3.7);
        let out = forward(&x, &p, q(20), Layout::Yuv420, Mode::Soft);
        for (a, b) in out.reconstruction.data.iter().zip(x.to_real().data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hard_mode_matches_codec() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for layout in [Layout::Yuv420, Layout::Yuv444] {
            let x = random_image(&mut rng, 24, 40);
            let ints = QuantTableParams::default().scale_table(q(30));
            let out = forward(&x, &ints.to_params(), q(50), layout, Mode::Hard);
            let d = analyze(&x, layout);
            let codec = reconstruct_real(&quantize_hard(&d, &ints), &ints);
            for (a, b) in out.reconstruction.data.iter().zip(&codec.data) {
                assert!((a - b.clamp(0.0, 255.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn soft_and_hard_differ_by_at_most_an_eighth_of_a_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_image(&mut rng, 16, 16);
        let p = QuantTableParams::default();
        let soft = forward(&x, &p, q(50), Layout::Yuv444, Mode::Soft);
        let hard = forward(&x, &p, q(50), Layout::Yuv444, Mode::Hard);
        for (a, b) in soft.quantized.channels.iter().zip(&hard.quantized.channels) {
            for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
                for k in 0..64 {
                    assert!((ba[k] - bb[k]).abs() <= 0.125 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 16, 16);
        let out = forward(&x, &QuantTableParams::default(), q(50), Layout::Yuv420, Mode::Soft);
        let g = backward(&out.tape, Some(&RealImage::zeros(16, 16)), None).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let hard = forward(&x, &QuantTableParams::default(), q(50), Layout::Yuv420, Mode::Hard);
        assert!(backward(&hard.tape, None, None).is_err());
    }

    #[test]
    fn distortion_loss_examples() {
        let x = RealImage::zeros(16, 16);
        let (l, g) = distortion_loss(&x, &x);
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
        let mut r = x.clone();
        r.data[5] = 3.0;
        let (l, g) = distortion_loss(&x, &r);
        assert_eq!(l, 9.0);
        assert_eq!(g.data[5], 6.0);
    }

    fn distortion_of(x: &RgbImage, p: &QuantTableParams, quality: Quality, layout: Layout) -> f64 {
        let out = forward(x, p, quality, layout, Mode::Soft);
        distortion_loss(&x.to_real(), &out.reconstruction).0
    }

    #[test]
    fn distortion_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_image(&mut rng, 16, 16);
        let mut p = QuantTableParams::default();
        for v in p.iter_mut() {
            *v *= rng.gen_range(0.8..1.2);
        }
        for layout in [Layout::Yuv420, Layout::Yuv444] {
            let quality = q(60);
            let out = forward(&x, &p, quality, layout, Mode::Soft);
            let (_, g) = distortion_loss(&x.to_real(), &out.reconstruction);
            let grad = backward(&out.tape, Some(&g), None).unwrap();
            let h = 1e-3;
            for idx in 0..128 {
                let mut hi = p;
                let mut lo = p;
                *hi.iter_mut().nth(idx).unwrap() += h;
                *lo.iter_mut().nth(idx).unwrap() -= h;
                let fd = (distortion_of(&x, &hi, quality, layout) - distortion_of(&x, &lo, quality, layout)) / (2.0 * h);
                let an = *grad.iter().nth(idx).unwrap();
                let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-4 || (an - fd).abs() < 1e-6, "entry {idx}: analytic {an} fd {fd}");
            }
        }
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 16, 16);
        let out = forward(&x, &QuantTableParams::default(), q(50), Layout::Yuv420, Mode::Soft);
        let (_, g) = distortion_loss(&x.to_real(), &out.reconstruction);
        let mut g2 = g.clone();
        g2.scale(2.0);
        let a = backward(&out.tape, Some(&g), None).unwrap();
        let b = backward(&out.tape, Some(&g2), None).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((2.0 * x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}
