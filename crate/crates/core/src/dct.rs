//! 8x8 type-II DCT with JPEG normalization, applied blockwise to planes.

use std::sync::OnceLock;

use crate::color::{Layout, Plane, YcbcrImage};

pub type Block = [f64; 64];

/// Basis matrix `C[u][x] = c(u)/2 * cos((2x+1) u pi / 16)`, so that
/// `S = C s C^T` is the JPEG forward DCT and `s = C^T S C` its inverse.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5
                    * cu
                    * (((2 * x + 1) as f64) * (u as f64) * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

/// Forward DCT of one block (no level shift).
pub fn fdct_block(s: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; 64];
    // tmp[u][x] = sum_y C[u][y] s[y][x]
    for u in 0..8 {
        for y in 0..8 {
            let k = c[u][y];
            for x in 0..8 {
                tmp[u * 8 + x] += k * s[y * 8 + x];
            }
        }
    }
    let mut out = [0.0; 64];
    // out[u][v] = sum_x tmp[u][x] C[v][x]
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += tmp[u * 8 + x] * c[v][x];
            }
            out[u * 8 + v] = acc;
        }
    }
    out
}

/// Inverse DCT of one block (no level shift). Also the adjoint of `fdct_block`.
pub fn idct_block(d: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; 64];
    // tmp[y][v] = sum_u C[u][y] d[u][v]
    for u in 0..8 {
        for y in 0..8 {
            let k = c[u][y];
            for v in 0..8 {
                tmp[y * 8 + v] += k * d[u * 8 + v];
            }
        }
    }
    let mut out = [0.0; 64];
    // out[y][x] = sum_v tmp[y][v] C[v][x]
    for y in 0..8 {
        for v in 0..8 {
            let t = tmp[y * 8 + v];
            for x in 0..8 {
                out[y * 8 + x] += t * c[v][x];
            }
        }
    }
    out
}

/// Blocks of one channel in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPlane<T> {
    /// Dimensions of the unpadded sample plane.
    pub width: usize,
    pub height: usize,
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub blocks: Vec<[T; 64]>,
}

impl<T: Copy + Default> CoeffPlane<T> {
    pub fn zeros_like<U>(other: &CoeffPlane<U>) -> Self {
        CoeffPlane {
            width: other.width,
            height: other.height,
            blocks_w: other.blocks_w,
            blocks_h: other.blocks_h,
            blocks: vec![[T::default(); 64]; other.blocks.len()],
        }
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> CoeffPlane<U> {
        CoeffPlane {
            width: self.width,
            height: self.height,
            blocks_w: self.blocks_w,
            blocks_h: self.blocks_h,
            blocks: self.blocks.iter().map(|b| b.map(&f)).collect(),
        }
    }
}

/// Per-channel DCT coefficients (Y, Cb, Cr) of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPlanes<T> {
    pub layout: Layout,
    pub width: usize,
    pub height: usize,
    pub channels: [CoeffPlane<T>; 3],
}

pub type RealCoeffs = CoeffPlanes<f64>;
pub type IntCoeffs = CoeffPlanes<i32>;

impl<T: Copy + Default> CoeffPlanes<T> {
    pub fn zeros_like<U>(other: &CoeffPlanes<U>) -> Self {
        CoeffPlanes {
            layout: other.layout,
            width: other.width,
            height: other.height,
            channels: [
                CoeffPlane::zeros_like(&other.channels[0]),
                CoeffPlane::zeros_like(&other.channels[1]),
                CoeffPlane::zeros_like(&other.channels[2]),
            ],
        }
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U + Copy) -> CoeffPlanes<U> {
        CoeffPlanes {
            layout: self.layout,
            width: self.width,
            height: self.height,
            channels: [
                self.channels[0].map(f),
                self.channels[1].map(f),
                self.channels[2].map(f),
            ],
        }
    }

    pub fn block_count(&self) -> usize {
        self.channels.iter().map(|c| c.blocks.len()).sum()
    }
}

/// Padded block grid for a plane. Luma in 4:2:0 pads to whole 16x16 MCUs so
/// that the interleaved scan has four luma blocks per chroma block.
pub fn block_grid(layout: Layout, channel: usize, width: usize, height: usize) -> (usize, usize) {
    let unit = if channel == 0 { layout.mcu() } else { 8 };
    (width.div_ceil(unit) * unit / 8, height.div_ceil(unit) * unit / 8)
}

/// Level-shifted, edge-replicated block extraction followed by the DCT.
pub fn fdct_plane(p: &Plane, blocks_w: usize, blocks_h: usize) -> CoeffPlane<f64> {
    let mut blocks = Vec::with_capacity(blocks_w * blocks_h);
    for by in 0..blocks_h {
        for bx in 0..blocks_w {
            let mut s = [0.0; 64];
            for y in 0..8 {
                let sy = (by * 8 + y).min(p.height - 1);
                for x in 0..8 {
                    let sx = (bx * 8 + x).min(p.width - 1);
                    s[y * 8 + x] = p.at(sx, sy) - 128.0;
                }
            }
            blocks.push(fdct_block(&s));
        }
    }
    CoeffPlane {
        width: p.width,
        height: p.height,
        blocks_w,
        blocks_h,
        blocks,
    }
}

/// Inverse DCT, level shift back, and crop of the padding.
pub fn idct_plane(c: &CoeffPlane<f64>) -> Plane {
    let mut out = Plane::new(c.width, c.height);
    for by in 0..c.blocks_h {
        for bx in 0..c.blocks_w {
            let s = idct_block(&c.blocks[by * c.blocks_w + bx]);
            for y in 0..8 {
                let py = by * 8 + y;
                if py >= c.height {
                    break;
                }
                for x in 0..8 {
                    let px = bx * 8 + x;
                    if px >= c.width {
                        break;
                    }
                    out.data[py * c.width + px] = s[y * 8 + x] + 128.0;
                }
            }
        }
    }
    out
}

/// Adjoint of `idct_plane` with respect to the coefficients: padded samples
/// receive zero gradient.
pub fn idct_plane_adjoint(g: &Plane, blocks_w: usize, blocks_h: usize) -> Vec<Block> {
    let mut blocks = Vec::with_capacity(blocks_w * blocks_h);
    for by in 0..blocks_h {
        for bx in 0..blocks_w {
            let mut s = [0.0; 64];
            for y in 0..8 {
                let py = by * 8 + y;
                if py >= g.height {
                    break;
                }
                for x in 0..8 {
                    let px = bx * 8 + x;
                    if px >= g.width {
                        break;
                    }
                    s[y * 8 + x] = g.at(px, py);
                }
            }
            blocks.push(fdct_block(&s));
        }
    }
    blocks
}

pub fn fdct_image(img: &YcbcrImage) -> RealCoeffs {
    let (w, h) = (img.y.width, img.y.height);
    let planes = img.planes();
    let channels = std::array::from_fn(|c| {
        let (bw, bh) = block_grid(img.layout, c, planes[c].width, planes[c].height);
        fdct_plane(planes[c], bw, bh)
    });
    CoeffPlanes {
        layout: img.layout,
        width: w,
        height: h,
        channels,
    }
}

pub fn idct_image(coeffs: &RealCoeffs) -> YcbcrImage {
    let [y, cb, cr] = std::array::from_fn(|c| idct_plane(&coeffs.channels[c]));
    YcbcrImage {
        layout: coeffs.layout,
        y,
        cb,
        cr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double-sum definition of the JPEG forward DCT.
    fn naive_fdct(s: &Block) -> Block {
        let mut out = [0.0; 64];
        let c = |u: usize| if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
        for u in 0..8 {
            for v in 0..8 {
                let mut acc = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        acc += s[y * 8 + x]
                            * ((2 * y + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2 * x + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                out[u * 8 + v] = 0.25 * c(u) * c(v) * acc;
            }
        }
        out
    }

    fn random_block(rng: &mut ChaCha8Rng) -> Block {
        std::array::from_fn(|_| rng.gen_range(-128.0..128.0))
    }

    #[test]
    fn matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let b = random_block(&mut rng);
            let fast = fdct_block(&b);
            let slow = naive_fdct(&b);
            for k in 0..64 {
                assert!((fast[k] - slow[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_blocks() {
        let p = Plane::filled(8, 8, 128.0);
        let c = fdct_plane(&p, 1, 1);
        assert!(c.blocks[0].iter().all(|v| v.abs() < 1e-12));
        let p = Plane::filled(8, 8, 129.0);
        let c = fdct_plane(&p, 1, 1);
        assert!((c.blocks[0][0] - 8.0).abs() < 1e-12);
        assert!(c.blocks[0][1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn orthonormal_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let b = random_block(&mut rng);
            let back = idct_block(&fdct_block(&b));
            for k in 0..64 {
                assert!((back[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn plane_round_trip_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Plane {
            width: 19,
            height: 13,
            data: (0..19 * 13).map(|_| rng.gen_range(0.0..255.0)).collect(),
        };
        let (bw, bh) = block_grid(Layout::Yuv444, 1, 19, 13);
        assert_eq!((bw, bh), (3, 2));
        let back = idct_plane(&fdct_plane(&p, bw, bh));
        for (a, b) in p.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn luma_grid_pads_to_mcu_in_420() {
        assert_eq!(block_grid(Layout::Yuv420, 0, 20, 20), (4, 4));
        assert_eq!(block_grid(Layout::Yuv420, 1, 10, 10), (2, 2));
        assert_eq!(block_grid(Layout::Yuv444, 0, 20, 20), (3, 3));
    }

    #[test]
    fn idct_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs = CoeffPlane {
            width: 11,
            height: 9,
            blocks_w: 2,
            blocks_h: 2,
            blocks: (0..4).map(|_| random_block(&mut rng)).collect(),
        };
        let g = Plane {
            width: 11,
            height: 9,
            data: (0..99).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let out = idct_plane(&coeffs);
        let lhs: f64 = out
            .data
            .iter()
            .zip(&g.data)
            .map(|(a, b)| (a - 128.0) * b)
            .sum();
        let adj = idct_plane_adjoint(&g, 2, 2);
        let rhs: f64 = adj
            .iter()
            .zip(&coeffs.blocks)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y))
            .sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
