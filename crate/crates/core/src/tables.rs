//! Quantization tables: the Annex-K defaults, quality scaling, and the
//! plain-text grid format used for import/export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Zigzag scan position -> natural (row-major) index.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

#[rustfmt::skip]
pub const DEFAULT_LUMA: [u8; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

#[rustfmt::skip]
pub const DEFAULT_CHROMA: [u8; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Validated JPEG quality factor in `[1, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quality(u32);

impl Quality {
    pub fn new(q: u32) -> Result<Self> {
        if (1..=100).contains(&q) {
            Ok(Quality(q))
        } else {
            Err(Error::QualityOutOfRange(q))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Multiplier applied to table entries, as a fraction (s(q) / 100).
    pub fn scale(self) -> f64 {
        let q = self.0 as f64;
        let s = if self.0 < 50 { 5000.0 / q } else { 200.0 - 2.0 * q };
        s / 100.0
    }
}

/// Integer table pair as written to a JFIF file. Entries are in natural order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntQuantTablePair {
    pub luma: [u8; 64],
    pub chroma: [u8; 64],
}

impl IntQuantTablePair {
    pub fn annex_k() -> Self {
        IntQuantTablePair {
            luma: DEFAULT_LUMA,
            chroma: DEFAULT_CHROMA,
        }
    }

    pub fn table(&self, chroma: bool) -> &[u8; 64] {
        if chroma {
            &self.chroma
        } else {
            &self.luma
        }
    }

    pub fn to_params(&self) -> QuantTableParams {
        QuantTableParams {
            luma: self.luma.map(f64::from),
            chroma: self.chroma.map(f64::from),
        }
    }
}

/// Real-valued table pair: the optimization variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantTableParams {
    pub luma: [f64; 64],
    pub chroma: [f64; 64],
}

impl Default for QuantTableParams {
    fn default() -> Self {
        IntQuantTablePair::annex_k().to_params()
    }
}

impl QuantTableParams {
    pub fn table(&self, chroma: bool) -> &[f64; 64] {
        if chroma {
            &self.chroma
        } else {
            &self.luma
        }
    }

    pub fn table_mut(&mut self, chroma: bool) -> &mut [f64; 64] {
        if chroma {
            &mut self.chroma
        } else {
            &mut self.luma
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.luma.iter().chain(self.chroma.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.luma.iter_mut().chain(self.chroma.iter_mut())
    }

    pub fn zeros() -> Self {
        QuantTableParams {
            luma: [0.0; 64],
            chroma: [0.0; 64],
        }
    }

    pub fn min_entry(&self) -> f64 {
        self.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Clamp every entry to be at least 1.
    pub fn project(&mut self) {
        for v in self.iter_mut() {
            if *v < 1.0 || v.is_nan() {
                *v = 1.0;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        QuantTableParams {
            luma: self.luma.map(&f),
            chroma: self.chroma.map(&f),
        }
    }

    /// Conventional quality scaling followed by rounding (half away from
    /// zero) and clipping to `{1, ..., 255}`.
    pub fn scale_table(&self, q: Quality) -> IntQuantTablePair {
        let s = q.scale();
        let conv = |v: f64| (v * s).round().clamp(1.0, 255.0) as u8;
        IntQuantTablePair {
            luma: self.luma.map(conv),
            chroma: self.chroma.map(conv),
        }
    }

    /// Scaled tables without rounding, clipped to [1, 255].
    pub fn effective(&self, q: Quality) -> QuantTableParams {
        let s = q.scale();
        self.map(|v| (v * s).clamp(1.0, 255.0))
    }

    pub fn to_text(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        write_grid(&mut out, "luma", &self.luma, |v| format!("{v:?}"));
        write_grid(&mut out, "chroma", &self.chroma, |v| format!("{v:?}"));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let values = parse_grid_values(text)?;
        let mut p = QuantTableParams::zeros();
        p.luma.copy_from_slice(&values[..64]);
        p.chroma.copy_from_slice(&values[64..]);
        if let Some(bad) = p.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Parse {
                line: 0,
                message: format!("table entries must be positive, found {bad}"),
            });
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_text(comment)).map_err(|e| Error::file(path, e))
    }
}

impl IntQuantTablePair {
    pub fn to_text(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        write_grid(&mut out, "luma", &self.luma, |v| v.to_string());
        write_grid(&mut out, "chroma", &self.chroma, |v| v.to_string());
        out
    }
}

fn write_grid<T: Copy>(out: &mut String, name: &str, t: &[T; 64], fmt: impl Fn(T) -> String) {
    let _ = writeln!(out, "# {name}");
    for row in t.chunks(8) {
        let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
}

fn parse_grid_values(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(128);
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != 8 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 8 values per row, found {}", row.len()),
            });
        }
        values.extend(row);
        rows += 1;
    }
    if rows != 16 {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected 16 rows (two 8x8 grids), found {rows}"),
        });
    }
    Ok(values)
}
