//! Quality-factor sweeps against the real codec and curve comparisons.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_measure_tables, reconstruct_real};
use crate::diffproxy::{effective_table, forward_coeffs, Mode};
use crate::entropy::{estimate_bits, EstimatorSet, Want};
use crate::error::{Error, Result};
use crate::optimizer::Sample;
use crate::tables::{QuantTableParams, Quality};
use crate::taskloss::ToyClassifier;

/// PSNR reported for lossless reconstructions.
pub const PSNR_CAP: f64 = 99.0;

/// Codec measurement of one image at one quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub image: usize,
    pub q: u32,
    /// Whole-file bits per pixel.
    pub bpp_actual: f64,
    /// Entropy-coded scan bits per pixel (no headers).
    pub bpp_scan: f64,
    pub bpp_estimated: Option<f64>,
    pub psnr: f64,
    pub correct: Option<bool>,
}

/// Differentiable rate estimate in bits per pixel.
pub fn estimated_bpp(sample: &Sample, p: &QuantTableParams, q: Quality, set: &EstimatorSet) -> f64 {
    let out = forward_coeffs(&sample.coeffs, &effective_table(p, q), Mode::Soft);
    estimate_bits(&out.quantized, set, Want::default()).total() / sample.pixels()
}

/// Per-image, per-quality measurements. Classification runs on the decoded
/// 8-bit image.
pub fn measure_points(
    tables: &QuantTableParams,
    corpus: &[Sample],
    q_list: &[u32],
    classifier: Option<&ToyClassifier>,
    entropy: Option<&EstimatorSet>,
) -> Result<Vec<Point>> {
    if q_list.is_empty() {
        return Err(Error::Config("quality list is empty".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Config("evaluation corpus is empty".into()));
    }
    let qs: Vec<Quality> = q_list.iter().map(|&q| Quality::new(q)).collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(qs.len() * corpus.len());
    for q in qs {
        let ints = tables.scale_table(q);
        for (i, s) in corpus.iter().enumerate() {
            let m = encode_measure_tables(&s.image, &ints, s.coeffs.layout)?;
            let px = s.pixels();
            let correct = match classifier {
                Some(clf) => {
                    let y = s.label.ok_or(Error::MissingLabel(i))?;
                    let recon = reconstruct_real(&crate::codec::quantize_hard(&s.coeffs, &ints), &ints).to_rgb8();
                    Some(clf.predict(&recon)? == y)
                }
                None => None,
            };
            points.push(Point {
                image: i,
                q: q.get(),
                bpp_actual: m.bpp,
                bpp_scan: m.file.stats.total() as f64 / px,
                bpp_estimated: entropy.map(|set| estimated_bpp(s, tables, q, set)),
                psnr: m.psnr.min(PSNR_CAP),
                correct,
            });
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub q: u32,
    pub bpp_actual: f64,
    pub bpp_estimated: Option<f64>,
    pub psnr: f64,
    pub accuracy: Option<f64>,
}

/// Averages over an evaluation set, one row per quality factor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub rows: Vec<RdRow>,
}

impl RdCurve {
    /// Mean of each column per quality (PSNR averaged in dB).
    pub fn from_points(points: &[Point]) -> Self {
        let mut qs: Vec<u32> = points.iter().map(|p| p.q).collect();
        qs.sort_unstable();
        qs.dedup();
        let rows = qs
            .into_iter()
            .map(|q| {
                let sel: Vec<&Point> = points.iter().filter(|p| p.q == q).collect();
                let n = sel.len() as f64;
                let mean = |f: &dyn Fn(&Point) -> f64| sel.iter().map(|p| f(p)).sum::<f64>() / n;
                let all_est = sel.iter().all(|p| p.bpp_estimated.is_some());
                let all_cls = sel.iter().all(|p| p.correct.is_some());
                RdRow {
                    q,
                    bpp_actual: mean(&|p| p.bpp_actual),
                    bpp_estimated: all_est.then(|| mean(&|p| p.bpp_estimated.unwrap_or(0.0))),
                    psnr: mean(&|p| p.psnr),
                    accuracy: all_cls.then(|| mean(&|p| if p.correct == Some(true) { 1.0 } else { 0.0 })),
                }
            })
            .collect();
        RdCurve { rows }
    }

    /// `(bpp, psnr)` pairs sorted by bpp.
    pub fn psnr_points(&self) -> Vec<(f64, f64)> {
        sorted_pairs(self.rows.iter().map(|r| (r.bpp_actual, r.psnr)))
    }

    /// `(bpp, accuracy)` pairs sorted by bpp, if accuracy was measured.
    pub fn accuracy_points(&self) -> Option<Vec<(f64, f64)>> {
        self.rows
            .iter()
            .map(|r| r.accuracy.map(|a| (r.bpp_actual, a)))
            .collect::<Option<Vec<_>>>()
            .map(sorted_pairs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,bpp_actual,bpp_estimated,psnr,accuracy\n");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(sig6).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.q,
                sig6(r.bpp_actual),
                opt(r.bpp_estimated),
                sig6(r.psnr),
                opt(r.accuracy)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "q,bpp_actual,bpp_estimated,psnr,accuracy" => {}
            _ => return Err(Error::Parse { line: 1, message: "unexpected curve header".into() }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse { line: i + 1, message: m };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            let opt = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
            rows.push(RdRow {
                q: f[0].trim().parse().map_err(|e| err(format!("{:?}: {e}", f[0])))?,
                bpp_actual: num(f[1])?,
                bpp_estimated: opt(f[2])?,
                psnr: num(f[3])?,
                accuracy: opt(f[4])?,
            });
        }
        Ok(RdCurve { rows })
    }
}

fn sorted_pairs(it: impl IntoIterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = it.into_iter().collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

/// Formats with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..15).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    }
}

/// Sweeps quality factors: scale, round and clip the tables, run the codec
/// on every image and average.
pub fn sweep(
    tables: &QuantTableParams,
    corpus: &[Sample],
    q_list: &[u32],
    classifier: Option<&ToyClassifier>,
    entropy: Option<&EstimatorSet>,
) -> Result<RdCurve> {
    Ok(RdCurve::from_points(&measure_points(tables, corpus, q_list, classifier, entropy)?))
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Undefined("pearson needs two equal-length series of at least 2 values".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Piecewise-linear interpolation on points sorted by x. `None` outside the
/// covered range.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let (first, last) = (points.first()?, points.last()?);
    if x < first.0 || x > last.0 {
        return None;
    }
    let j = points.partition_point(|p| p.0 < x);
    if j < points.len() && points[j].0 == x {
        // Average coincident abscissas so the result is order-independent.
        let same: Vec<f64> = points.iter().filter(|p| p.0 == x).map(|p| p.1).collect();
        return Some(same.iter().sum::<f64>() / same.len() as f64);
    }
    let (a, b) = (points[j - 1], points[j]);
    Some(a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0))
}

/// Difference of two curves on a shared abscissa grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaSeries {
    pub grid: Vec<f64>,
    /// `b(x) - a(x)` (or relative percent, see the producer).
    pub delta: Vec<f64>,
}

impl DeltaSeries {
    pub fn max(&self) -> Option<f64> {
        self.delta.iter().copied().reduce(f64::max)
    }

    pub fn min(&self) -> Option<f64> {
        self.delta.iter().copied().reduce(f64::min)
    }

    /// Largest delta over grid points inside `[lo, hi]`.
    pub fn max_in(&self, lo: f64, hi: f64) -> Option<f64> {
        self.grid
            .iter()
            .zip(&self.delta)
            .filter(|(x, _)| (lo..=hi).contains(*x))
            .map(|(_, d)| *d)
            .reduce(f64::max)
    }

    /// Abscissas where the delta changes sign, by linear interpolation.
    pub fn crossovers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 1..self.grid.len() {
            let (d0, d1) = (self.delta[i - 1], self.delta[i]);
            if d0 == 0.0 {
                out.push(self.grid[i - 1]);
            } else if d0 * d1 < 0.0 {
                let (x0, x1) = (self.grid[i - 1], self.grid[i]);
                out.push(x0 + (x1 - x0) * d0 / (d0 - d1));
            }
        }
        if self.delta.last() == Some(&0.0) {
            out.push(*self.grid.last().unwrap_or(&0.0));
        }
        out.dedup();
        out
    }
}

fn union_grid(a: &[(f64, f64)], b: &[(f64, f64)]) -> Option<Vec<f64>> {
    let lo = a.first()?.0.max(b.first()?.0);
    let hi = a.last()?.0.min(b.last()?.0);
    if lo > hi {
        return None;
    }
    let mut grid: Vec<f64> = a.iter().chain(b).map(|p| p.0).filter(|x| (lo..=hi).contains(x)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Some(grid)
}

/// `b - a` on the union grid of both abscissas over their shared range.
pub fn delta_on_union(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<DeltaSeries> {
    let grid = union_grid(a, b).ok_or_else(|| Error::Undefined("curves do not overlap".into()))?;
    let delta = grid
        .iter()
        .map(|&x| interpolate(b, x).unwrap_or(f64::NAN) - interpolate(a, x).unwrap_or(f64::NAN))
        .collect();
    Ok(DeltaSeries { grid, delta })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    /// PSNR of `b` minus PSNR of `a` at matched bpp.
    pub psnr_at_bpp: DeltaSeries,
    /// Percent change of bpp from `a` to `b` at matched PSNR (negative means
    /// `b` needs fewer bits).
    pub bpp_at_psnr: DeltaSeries,
}

impl CurveComparison {
    pub fn max_psnr_gain(&self) -> Option<f64> {
        self.psnr_at_bpp.max()
    }

    /// Largest file-size saving of `b` over `a` in percent.
    pub fn max_bpp_saving(&self) -> Option<f64> {
        self.bpp_at_psnr.min().map(|v| -v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,x,delta\n");
        for (x, d) in self.psnr_at_bpp.grid.iter().zip(&self.psnr_at_bpp.delta) {
            let _ = writeln!(out, "psnr_at_bpp,{},{}", sig6(*x), sig6(*d));
        }
        for (x, d) in self.bpp_at_psnr.grid.iter().zip(&self.bpp_at_psnr.delta) {
            let _ = writeln!(out, "bpp_percent_at_psnr,{},{}", sig6(*x), sig6(*d));
        }
        out
    }
}

/// Compares `b` against the reference `a`.
pub fn compare_curves(a: &RdCurve, b: &RdCurve) -> Result<CurveComparison> {
    let (pa, pb) = (a.psnr_points(), b.psnr_points());
    let psnr_at_bpp = delta_on_union(&pa, &pb)?;
    let flip = |v: &[(f64, f64)]| sorted_pairs(v.iter().map(|&(x, y)| (y, x)));
    let (qa, qb) = (flip(&pa), flip(&pb));
    let bpp_at_psnr = match union_grid(&qa, &qb) {
        Some(grid) => {
            let delta = grid
                .iter()
                .map(|&x| {
                    let (ra, rb) = (interpolate(&qa, x).unwrap_or(f64::NAN), interpolate(&qb, x).unwrap_or(f64::NAN));
                    100.0 * (rb - ra) / ra
                })
                .collect();
            DeltaSeries { grid, delta }
        }
        None => DeltaSeries::default(),
    };
    Ok(CurveComparison { psnr_at_bpp, bpp_at_psnr })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(pts: &[(f64, f64)]) -> RdCurve {
        RdCurve {
            rows: pts
                .iter()
                .enumerate()
                .map(|(i, &(b, p))| RdRow { q: 10 * (i as u32 + 1), bpp_actual: b, bpp_estimated: None, psnr: p, accuracy: None })
                .collect(),
        }
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_curves_have_zero_delta() {
        let a = curve(&[(0.5, 30.0), (1.0, 33.0), (2.0, 37.0)]);
        let c = compare_curves(&a, &a).unwrap();
        assert!(c.psnr_at_bpp.delta.iter().all(|&d| d == 0.0));
        assert!(c.bpp_at_psnr.delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn shifted_curve_gains_one_db_and_is_antisymmetric() {
        let a = curve(&[(0.5, 30.0), (1.0, 33.0), (2.0, 37.0)]);
        let b = curve(&[(0.6, 32.0), (1.1, 35.0), (2.1, 38.0)]);
        let shifted = curve(&[(0.5, 31.0), (1.0, 34.0), (2.0, 38.0)]);
        let c = compare_curves(&a, &shifted).unwrap();
        assert!(c.psnr_at_bpp.delta.iter().all(|&d| (d - 1.0).abs() < 1e-12));
        let ab = compare_curves(&a, &b).unwrap();
        let ba = compare_curves(&b, &a).unwrap();
        assert_eq!(ab.psnr_at_bpp.grid, ba.psnr_at_bpp.grid);
        for (x, y) in ab.psnr_at_bpp.delta.iter().zip(&ba.psnr_at_bpp.delta) {
            assert!((x + y).abs() < 1e-12);
        }
    }

    #[test]
    fn crossover_of_two_lines() {
        // a: psnr = 30 + 2 bpp, b: psnr = 31 + 1 bpp, crossing at bpp = 1.
        let a = curve(&[(0.0, 30.0), (0.7, 31.4), (3.0, 36.0)]);
        let b = curve(&[(0.0, 31.0), (2.5, 33.5), (3.0, 34.0)]);
        let c = compare_curves(&a, &b).unwrap();
        let x = c.psnr_at_bpp.crossovers();
        assert_eq!(x.len(), 1);
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_curves_are_an_error() {
        let a = curve(&[(0.5, 30.0), (1.0, 33.0)]);
        let b = curve(&[(2.0, 30.0), (3.0, 33.0)]);
        assert!(compare_curves(&a, &b).is_err());
    }

    #[test]
    fn csv_round_trip_and_empty_optionals() {
        let mut c = curve(&[(1.234567891, 33.123456789)]);
        assert_eq!(c.to_csv().lines().count(), 2);
        assert!(c.to_csv().lines().nth(1).unwrap().ends_with(','));
        c.rows[0].accuracy = Some(0.75);
        c.rows.push(RdRow { q: 90, bpp_actual: 4.5, bpp_estimated: Some(4.25), psnr: 44.0, accuracy: Some(1.0) });
        let parsed = RdCurve::from_csv(&c.to_csv()).unwrap();
        for (a, b) in c.rows.iter().zip(&parsed.rows) {
            assert_eq!(a.q, b.q);
            assert!((a.bpp_actual - b.bpp_actual).abs() <= 5e-6 * a.bpp_actual);
            assert!((a.psnr - b.psnr).abs() <= 5e-6 * a.psnr);
            assert_eq!(a.bpp_estimated.is_some(), b.bpp_estimated.is_some());
        }
        assert_eq!(sig6(33.123456789), "33.1235");
        assert_eq!(sig6(0.00123456789), "0.00123457");
    }
}
