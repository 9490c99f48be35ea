//! 8-bit RGB images, their real-valued counterparts, PPM I/O and resizing.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < 16 || height < 16 {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} is smaller than one 16x16 MCU"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Replicates a single gray channel into R, G and B.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        let data = gray.iter().flat_map(|&g| [g, g, g]).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_real(&self) -> RealImage {
        RealImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::decode_ppm(BufReader::new(file))
    }

    /// Parses binary PPM (P6) or PGM (P5) with maxval 255.
    pub fn decode_ppm<R: BufRead>(mut r: R) -> Result<Self> {
        let magic = read_token(&mut r)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::InvalidImage(format!("unsupported magic {other:?}"))),
        };
        let width = parse_dim(&read_token(&mut r)?)?;
        let height = parse_dim(&read_token(&mut r)?)?;
        let maxval = parse_dim(&read_token(&mut r)?)?;
        if maxval != 255 {
            return Err(Error::InvalidImage(format!("maxval {maxval} unsupported")));
        }
        let mut buf = vec![0u8; width * height * channels];
        r.read_exact(&mut buf)
            .map_err(|_| Error::InvalidImage("truncated pixel data".into()))?;
        if channels == 1 {
            Self::from_gray(width, height, &buf)
        } else {
            Self::new(width, height, buf)
        }
    }

    pub fn encode_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len() + 20);
        self.encode_ppm(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    /// Same-size requests return an identical copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let xs = axis_weights(self.width, width);
        let ys = axis_weights(self.height, height);
        let mut data = Vec::with_capacity(width * height * 3);
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                for c in 0..3 {
                    let at = |x: usize, y: usize| f64::from(self.data[(y * self.width + x) * 3 + c]);
                    let top = at(x0, y0) * (1.0 - wx) + at(x1, y0) * wx;
                    let bottom = at(x0, y1) * (1.0 - wx) + at(x1, y1) * wx;
                    let v = top * (1.0 - wy) + bottom * wy;
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Self::new(width, height, data)
    }
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::InvalidImage("unexpected end of header".into()));
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            b => token.push(b),
        }
        if token.len() > 16 {
            return Err(Error::InvalidImage("header token too long".into()));
        }
    }
    String::from_utf8(token).map_err(|_| Error::InvalidImage("non-ASCII header".into()))
}

fn parse_dim(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::InvalidImage(format!("bad header field {s:?}")))
}

/// Interleaved real-valued RGB image (reconstructions, gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        RealImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    /// Clamp to [0, 255] and round half away from zero.
    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| v.clamp(0.0, 255.0).round() as u8)
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}

/// Sum of squared differences over all samples.
pub fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// PSNR between two 8-bit images over all RGB samples. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let n = a.data.len() as f64;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        / n;
    psnr_from_mse(mse)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8]).unwrap()
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(RgbImage::new(8, 8, vec![0; 192]).is_err());
        assert!(RgbImage::new(16, 16, vec![0; 10]).is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let img = gradient(17, 19);
        let mut buf = Vec::new();
        img.encode_ppm(&mut buf).unwrap();
        let back = RgbImage::decode_ppm(&buf[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_header_comments_and_gray() {
        let mut buf = b"P5\n# made by hand\n16 16\n255\n".to_vec();
        buf.extend((0..256).map(|i| i as u8));
        let img = RgbImage::decode_ppm(&buf[..]).unwrap();
        assert_eq!(img.pixel(3, 2), [35, 35, 35]);
    }

    #[test]
    fn ppm_truncated_is_error() {
        let buf = b"P6\n16 16\n255\n\x00\x01".to_vec();
        assert!(RgbImage::decode_ppm(&buf[..]).is_err());
        assert!(RgbImage::decode_ppm(&b"P3\n"[..]).is_err());
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = gradient(20, 18);
        assert_eq!(img.resize_bilinear(20, 18).unwrap(), img);
    }

    #[test]
    fn bilinear_upscale_keeps_corners() {
        // 2x2 source is below the minimum image size, so check the weights directly.
        let w = axis_weights(2, 4);
        assert_eq!(w[0], (0, 1, 0.0));
        assert_eq!(w[3], (1, 1, 0.0));
        assert_eq!(w[1], (0, 1, 0.25));
        assert_eq!(w[2], (0, 1, 0.75));
        let src = [0.0, 100.0];
        let vals: Vec<f64> = w
            .iter()
            .map(|&(a, b, t)| src[a] * (1.0 - t) + src[b] * t)
            .collect();
        assert_eq!(vals, vec![0.0, 25.0, 75.0, 100.0]);

        let img = RgbImage::from_fn(16, 16, |x, _| [if x < 8 { 0 } else { 200 }, 0, 0]).unwrap();
        let big = img.resize_bilinear(32, 32).unwrap();
        assert_eq!(big.pixel(0, 0)[0], 0);
        assert_eq!(big.pixel(31, 31)[0], 200);
        assert_eq!(big.pixel(15, 3)[0], 50);
    }

    #[test]
    fn psnr_of_unit_noise() {
        let img = gradient(32, 32);
        let mut noisy = img.clone();
        for (i, v) in noisy.data.iter_mut().enumerate() {
            *v = if i % 2 == 0 { v.saturating_add(1) } else { v.saturating_sub(1) };
        }
        // Every sample differs by exactly 1 unless it saturated at 0.
        let p = psnr(&img, &noisy);
        assert!((p - 48.13).abs() < 0.2, "{p}");
        assert_eq!(psnr(&img, &img), f64::INFINITY);
    }
}
