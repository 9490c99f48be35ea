//! YCbCr conversion and 4:2:0 chroma resampling, with the adjoints needed to
//! back-propagate through them.

use crate::image::{RealImage, RgbImage};

/// Chroma subsampling layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Layout {
    #[serde(rename = "444")]
    Yuv444,
    #[serde(rename = "420")]
    Yuv420,
}

impl Layout {
    pub fn chroma_dims(self, width: usize, height: usize) -> (usize, usize) {
        match self {
            Layout::Yuv444 => (width, height),
            Layout::Yuv420 => (width.div_ceil(2), height.div_ceil(2)),
        }
    }

    /// Luma MCU size in pixels.
    pub fn mcu(self) -> usize {
        match self {
            Layout::Yuv444 => 8,
            Layout::Yuv420 => 16,
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "444" => Ok(Layout::Yuv444),
            "420" => Ok(Layout::Yuv420),
            other => Err(format!("unknown layout {other:?} (expected 420 or 444)")),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Yuv444 => "444",
            Layout::Yuv420 => "420",
        })
    }
}

/// Single channel of real samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YcbcrImage {
    pub layout: Layout,
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
}

impl YcbcrImage {
    pub fn planes(&self) -> [&Plane; 3] {
        [&self.y, &self.cb, &self.cr]
    }

    pub fn planes_mut(&mut self) -> [&mut Plane; 3] {
        [&mut self.y, &mut self.cb, &mut self.cr]
    }
}

const RGB_TO_YCC: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
];

const YCC_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 1.402],
    [1.0, -0.344136, -0.714136],
    [1.0, 1.772, 0.0],
];

#[inline]
pub fn rgb_to_ycc_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let m = &RGB_TO_YCC;
    [
        m[0][0] * rgb[0] + m[0][1] * rgb[1] + m[0][2] * rgb[2],
        m[1][0] * rgb[0] + m[1][1] * rgb[1] + m[1][2] * rgb[2] + 128.0,
        m[2][0] * rgb[0] + m[2][1] * rgb[1] + m[2][2] * rgb[2] + 128.0,
    ]
}

#[inline]
pub fn ycc_to_rgb_pixel(ycc: [f64; 3]) -> [f64; 3] {
    let (y, cb, cr) = (ycc[0], ycc[1] - 128.0, ycc[2] - 128.0);
    let m = &YCC_TO_RGB;
    [
        m[0][0] * y + m[0][2] * cr,
        m[1][0] * y + m[1][1] * cb + m[1][2] * cr,
        m[2][0] * y + m[2][1] * cb,
    ]
}

/// Transpose of the linear part of `ycc_to_rgb_pixel`.
#[inline]
pub fn ycc_to_rgb_adjoint(g: [f64; 3]) -> [f64; 3] {
    let m = &YCC_TO_RGB;
    [
        m[0][0] * g[0] + m[1][0] * g[1] + m[2][0] * g[2],
        m[1][1] * g[1] + m[2][1] * g[2],
        m[0][2] * g[0] + m[1][2] * g[1],
    ]
}

/// Transpose of the linear part of `rgb_to_ycc_pixel`.
#[inline]
pub fn rgb_to_ycc_adjoint(g: [f64; 3]) -> [f64; 3] {
    let m = &RGB_TO_YCC;
    [
        m[0][0] * g[0] + m[1][0] * g[1] + m[2][0] * g[2],
        m[0][1] * g[0] + m[1][1] * g[1] + m[2][1] * g[2],
        m[0][2] * g[0] + m[1][2] * g[1] + m[2][2] * g[2],
    ]
}

pub fn rgb_to_ycbcr(img: &RgbImage) -> YcbcrImage {
    real_to_ycbcr(&img.to_real())
}

/// Full-resolution (4:4:4) conversion of a real RGB image.
pub fn real_to_ycbcr(img: &RealImage) -> YcbcrImage {
    let (w, h) = (img.width, img.height);
    let mut out = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        let ycc = rgb_to_ycc_pixel([px[0], px[1], px[2]]);
        for c in 0..3 {
            out[c].data[i] = ycc[c];
        }
    }
    let [y, cb, cr] = out;
    YcbcrImage {
        layout: Layout::Yuv444,
        y,
        cb,
        cr,
    }
}

/// Inverse conversion without clamping or rounding. Requires 4:4:4.
pub fn ycbcr_to_real(img: &YcbcrImage) -> RealImage {
    assert_eq!(img.layout, Layout::Yuv444, "upsample before color conversion");
    let (w, h) = (img.y.width, img.y.height);
    let mut out = RealImage::zeros(w, h);
    for i in 0..w * h {
        let rgb = ycc_to_rgb_pixel([img.y.data[i], img.cb.data[i], img.cr.data[i]]);
        out.data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
    }
    out
}

pub fn ycbcr_to_rgb(img: &YcbcrImage) -> RgbImage {
    ycbcr_to_real(img).to_rgb8()
}

/// 2x2 average pooling of a plane; edge windows average what is available.
pub fn downsample_plane(p: &Plane) -> Plane {
    let (w, h) = (p.width.div_ceil(2), p.height.div_ceil(2));
    let mut out = Plane::new(w, h);
    for oy in 0..h {
        for ox in 0..w {
            let mut sum = 0.0;
            let mut n = 0.0;
            for y in 2 * oy..(2 * oy + 2).min(p.height) {
                for x in 2 * ox..(2 * ox + 2).min(p.width) {
                    sum += p.at(x, y);
                    n += 1.0;
                }
            }
            out.data[oy * w + ox] = sum / n;
        }
    }
    out
}

/// Adjoint of `downsample_plane` onto a `width x height` plane.
pub fn downsample_plane_adjoint(g: &Plane, width: usize, height: usize) -> Plane {
    let mut out = Plane::new(width, height);
    for oy in 0..g.height {
        for ox in 0..g.width {
            let ys = 2 * oy..(2 * oy + 2).min(height);
            let xs = 2 * ox..(2 * ox + 2).min(width);
            let n = (ys.len() * xs.len()) as f64;
            let v = g.at(ox, oy) / n;
            for y in ys {
                for x in xs.clone() {
                    out.data[y * width + x] += v;
                }
            }
        }
    }
    out
}

/// Bilinear tap pair for each full-resolution index. Chroma sample `j` sits at
/// full-resolution position `2j + 0.5`; positions outside the grid clamp.
fn upsample_taps(full: usize, half: usize) -> Vec<(usize, usize, f64)> {
    (0..full)
        .map(|i| {
            let pos = ((i as f64 - 0.5) / 2.0).clamp(0.0, (half - 1) as f64);
            let j0 = pos.floor() as usize;
            let j1 = (j0 + 1).min(half - 1);
            (j0, j1, pos - j0 as f64)
        })
        .collect()
}

pub fn upsample_plane(p: &Plane, width: usize, height: usize) -> Plane {
    let xs = upsample_taps(width, p.width);
    let ys = upsample_taps(height, p.height);
    let mut out = Plane::new(width, height);
    for (y, &(y0, y1, wy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, wx)) in xs.iter().enumerate() {
            let top = p.at(x0, y0) * (1.0 - wx) + p.at(x1, y0) * wx;
            let bot = p.at(x0, y1) * (1.0 - wx) + p.at(x1, y1) * wx;
            out.data[y * width + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// Adjoint of `upsample_plane` back onto a `half_w x half_h` plane.
pub fn upsample_plane_adjoint(g: &Plane, half_w: usize, half_h: usize) -> Plane {
    let xs = upsample_taps(g.width, half_w);
    let ys = upsample_taps(g.height, half_h);
    let mut out = Plane::new(half_w, half_h);
    for (y, &(y0, y1, wy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, wx)) in xs.iter().enumerate() {
            let v = g.at(x, y);
            out.data[y0 * half_w + x0] += v * (1.0 - wy) * (1.0 - wx);
            out.data[y0 * half_w + x1] += v * (1.0 - wy) * wx;
            out.data[y1 * half_w + x0] += v * wy * (1.0 - wx);
            out.data[y1 * half_w + x1] += v * wy * wx;
        }
    }
    out
}

pub fn downsample_420(img: &YcbcrImage) -> YcbcrImage {
    assert_eq!(img.layout, Layout::Yuv444);
    YcbcrImage {
        layout: Layout::Yuv420,
        y: img.y.clone(),
        cb: downsample_plane(&img.cb),
        cr: downsample_plane(&img.cr),
    }
}

pub fn upsample_420(img: &YcbcrImage) -> YcbcrImage {
    assert_eq!(img.layout, Layout::Yuv420);
    let (w, h) = (img.y.width, img.y.height);
    YcbcrImage {
        layout: Layout::Yuv444,
        y: img.y.clone(),
        cb: upsample_plane(&img.cb, w, h),
        cr: upsample_plane(&img.cr, w, h),
    }
}

/// Converts to YCbCr and applies the layout's chroma subsampling.
pub fn to_layout(img: &RgbImage, layout: Layout) -> YcbcrImage {
    let full = rgb_to_ycbcr(img);
    match layout {
        Layout::Yuv444 => full,
        Layout::Yuv420 => downsample_420(&full),
    }
}

/// Upsamples (if needed) and converts back to real RGB.
pub fn from_layout(img: &YcbcrImage) -> RealImage {
    match img.layout {
        Layout::Yuv444 => ycbcr_to_real(img),
        Layout::Yuv420 => ycbcr_to_real(&upsample_420(img)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pixel(r: u8, g: u8, b: u8) -> RgbImage {
        RgbImage::from_fn(16, 16, |_, _| [r, g, b]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn forward_conversion_examples() {
        let ycc = rgb_to_ycbcr(&pixel(0, 0, 0));
        assert_eq!((ycc.y.data[0], ycc.cb.data[0], ycc.cr.data[0]), (0.0, 128.0, 128.0));
        let ycc = rgb_to_ycbcr(&pixel(255, 255, 255));
        assert!(close(ycc.y.data[0], 255.0, 1e-9));
        assert!(close(ycc.cb.data[0], 128.0, 1e-9));
        assert!(close(ycc.cr.data[0], 128.0, 1e-9));
        let ycc = rgb_to_ycbcr(&pixel(255, 0, 0));
        assert!(close(ycc.y.data[0], 76.245, 1e-9));
        assert!(close(ycc.cb.data[0], 84.97232, 1e-9));
        assert!(close(ycc.cr.data[0], 255.5, 1e-9));
    }

    #[test]
    fn inverse_conversion_examples() {
        let ycc = |y, cb, cr| YcbcrImage {
            layout: Layout::Yuv444,
            y: Plane::filled(16, 16, y),
            cb: Plane::filled(16, 16, cb),
            cr: Plane::filled(16, 16, cr),
        };
        assert_eq!(ycbcr_to_rgb(&ycc(255.0, 128.0, 128.0)).pixel(0, 0), [255, 255, 255]);
        assert_eq!(ycbcr_to_rgb(&ycc(0.0, 128.0, 128.0)).pixel(0, 0), [0, 0, 0]);
    }

    #[test]
    fn round_trip_error_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<u8> = (0..64 * 64 * 3).map(|_| rng.gen()).collect();
        let img = RgbImage::new(64, 64, data).unwrap();
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img));
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(&a, &b)| (a as i32 - b as i32).abs())
            .max()
            .unwrap();
        assert!(worst <= 1);
    }

    #[test]
    fn adjoints_are_transposes() {
        let a = [0.3, -1.2, 2.5];
        let b = [1.1, 0.7, -0.4];
        let lin = |v: [f64; 3]| ycc_to_rgb_pixel([v[0], v[1] + 128.0, v[2] + 128.0]);
        let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        assert!(close(dot(lin(a), b), dot(a, ycc_to_rgb_adjoint(b)), 1e-12));
        let fwd = |v: [f64; 3]| {
            let r = rgb_to_ycc_pixel(v);
            [r[0], r[1] - 128.0, r[2] - 128.0]
        };
        assert!(close(dot(fwd(a), b), dot(a, rgb_to_ycc_adjoint(b)), 1e-12));
    }

    #[test]
    fn downsample_examples() {
        let mut p = Plane::filled(4, 4, 0.0);
        p.data[0] = 100.0;
        p.data[1] = 100.0;
        p.data[4] = 200.0;
        p.data[5] = 200.0;
        assert_eq!(downsample_plane(&p).data[0], 150.0);
        assert!(downsample_plane(&Plane::filled(5, 7, 42.0))
            .data
            .iter()
            .all(|&v| v == 42.0));
        // 3 wide: last window covers a single column of two rows.
        let p = Plane {
            width: 3,
            height: 2,
            data: vec![0.0, 0.0, 10.0, 0.0, 0.0, 30.0],
        };
        let d = downsample_plane(&p);
        assert_eq!((d.width, d.height), (2, 1));
        assert_eq!(d.data[1], 20.0);
    }

    #[test]
    fn upsample_examples() {
        let p = Plane {
            width: 2,
            height: 1,
            data: vec![0.0, 100.0],
        };
        let u = upsample_plane(&p, 4, 1);
        assert_eq!(u.data, vec![0.0, 25.0, 75.0, 100.0]);
        assert!(upsample_plane(&Plane::filled(3, 3, 9.0), 5, 6)
            .data
            .iter()
            .all(|&v| close(v, 9.0, 1e-12)));
    }

    #[test]
    fn constant_image_survives_subsampling() {
        let img = pixel(10, 200, 90);
        let full = rgb_to_ycbcr(&img);
        let round = upsample_420(&downsample_420(&full));
        for (a, b) in full.cb.data.iter().zip(&round.cb.data) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn resampling_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (7, 5);
        let full = Plane {
            width: w,
            height: h,
            data: (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let half = Plane {
            width: 4,
            height: 3,
            data: (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let dot = |a: &Plane, b: &Plane| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
        let lhs = dot(&downsample_plane(&full), &half);
        let rhs = dot(&full, &downsample_plane_adjoint(&half, w, h));
        assert!(close(lhs, rhs, 1e-12));
        let lhs = dot(&upsample_plane(&half, w, h), &full);
        let rhs = dot(&half, &upsample_plane_adjoint(&full, 4, 3));
        assert!(close(lhs, rhs, 1e-12));
    }
}
