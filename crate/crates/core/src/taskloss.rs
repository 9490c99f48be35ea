//! Differentiable task loss with a small frozen classifier.
//!
//! Features are the 8x8 block means of the luma plane, centered and scaled;
//! a single linear layer maps them to class logits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{RealImage, RgbImage};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const FEATURE_SCALE: f64 = 32.0;
const CHECKPOINT_HEADER: &str = "qtune-classifier-checkpoint v1";

/// An image with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub label: usize,
}

/// Softmax cross-entropy of `logits` against class `y`, with the gradient
/// with respect to the logits.
pub fn softmax_xent(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::Config("softmax needs at least two classes".into()));
    }
    if y >= logits.len() {
        return Err(Error::LabelOutOfRange { label: y, classes: logits.len() });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[y] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[y] -= 1.0;
    Ok((loss, grad))
}

/// Linear classifier over the luma block-mean grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub classes: usize,
    /// Row-major `classes x features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(8), height.div_ceil(8))
}

/// Block-mean features of a real RGB image (values in 0..255).
pub fn features(z: &RealImage) -> Vec<f64> {
    let (bw, bh) = grid(z.width, z.height);
    let mut sum = vec![0.0; bw * bh];
    let mut count = vec![0usize; bw * bh];
    for y in 0..z.height {
        for x in 0..z.width {
            let i = (y * z.width + x) * 3;
            let luma: f64 = (0..3).map(|c| LUMA[c] * z.data[i + c]).sum();
            let b = (y / 8) * bw + x / 8;
            sum[b] += luma;
            count[b] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &n)| (s / n as f64 - 128.0) / FEATURE_SCALE)
        .collect()
}

impl ToyClassifier {
    pub fn zeros(blocks_w: usize, blocks_h: usize, classes: usize) -> Self {
        ToyClassifier {
            blocks_w,
            blocks_h,
            classes,
            weights: vec![0.0; classes * blocks_w * blocks_h],
            bias: vec![0.0; classes],
        }
    }

    pub fn feature_count(&self) -> usize {
        self.blocks_w * self.blocks_h
    }

    fn check_size(&self, width: usize, height: usize) -> Result<()> {
        if grid(width, height) != (self.blocks_w, self.blocks_h) {
            return Err(Error::Shape(format!(
                "classifier expects a {}x{} block grid, image is {width}x{height}",
                self.blocks_w, self.blocks_h
            )));
        }
        Ok(())
    }

    pub fn logits_from_features(&self, f: &[f64]) -> Vec<f64> {
        let n = self.feature_count();
        (0..self.classes)
            .map(|c| self.bias[c] + self.weights[c * n..(c + 1) * n].iter().zip(f).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn logits(&self, z: &RealImage) -> Result<Vec<f64>> {
        self.check_size(z.width, z.height)?;
        Ok(self.logits_from_features(&features(z)))
    }

    /// Most likely class; ties go to the lowest index.
    pub fn predict(&self, img: &RgbImage) -> Result<usize> {
        let logits = self.logits(&img.to_real())?;
        Ok(argmax(&logits))
    }

    pub fn accuracy(&self, corpus: &[LabeledImage]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::Config("empty corpus".into()));
        }
        let mut hits = 0;
        for item in corpus {
            if self.predict(&item.image)? == item.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / corpus.len() as f64)
    }

    /// Cross-entropy on the reconstruction `z` and its gradient with respect
    /// to every sample of `z`.
    pub fn task_loss(&self, z: &RealImage, y: usize) -> Result<(f64, RealImage)> {
        let logits = self.logits(z)?;
        let (loss, gl) = softmax_xent(&logits, y)?;
        let n = self.feature_count();
        let mut gf = vec![0.0; n];
        for (c, g) in gl.iter().enumerate() {
            for (j, w) in self.weights[c * n..(c + 1) * n].iter().enumerate() {
                gf[j] += g * w;
            }
        }
        let mut grad = RealImage::zeros(z.width, z.height);
        for y in 0..z.height {
            let bh_px = 8.min(z.height - (y / 8) * 8);
            for x in 0..z.width {
                let bw_px = 8.min(z.width - (x / 8) * 8);
                let b = (y / 8) * self.blocks_w + x / 8;
                let g = gf[b] / (FEATURE_SCALE * (bw_px * bh_px) as f64);
                let i = (y * z.width + x) * 3;
                for c in 0..3 {
                    grad.data[i + c] = g * LUMA[c];
                }
            }
        }
        Ok((loss, grad))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_HEADER}");
        let _ = writeln!(out, "grid {} {}", self.blocks_w, self.blocks_h);
        let _ = writeln!(out, "classes {}", self.classes);
        let n = self.feature_count();
        for c in 0..self.classes {
            let mut row: Vec<String> = vec![format!("{:?}", self.bias[c])];
            row.extend(self.weights[c * n..(c + 1) * n].iter().map(|w| format!("{w:?}")));
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad("missing classifier checkpoint header"));
        }
        let nums = |line: Option<&str>, key: &str| -> Result<Vec<usize>> {
            let line = line.ok_or_else(|| bad("truncated checkpoint"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(&format!("expected `{key}` line")));
            }
            it.map(|s| s.parse::<usize>().map_err(|_| bad(&format!("bad integer {s:?}")))).collect()
        };
        let g = nums(lines.next(), "grid")?;
        let c = nums(lines.next(), "classes")?;
        if g.len() != 2 || c.len() != 1 || c[0] < 2 || g[0] * g[1] == 0 {
            return Err(bad("bad grid or class count"));
        }
        let mut clf = ToyClassifier::zeros(g[0], g[1], c[0]);
        let n = clf.feature_count();
        for class in 0..clf.classes {
            let row: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad("truncated checkpoint"))?
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != n + 1 || row.iter().any(|v| !v.is_finite()) {
                return Err(bad("class row has the wrong length"));
            }
            clf.bias[class] = row[0];
            clf.weights[class * n..(class + 1) * n].copy_from_slice(&row[1..]);
        }
        Ok(clf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Settings for fitting the classifier.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierTraining {
    pub classes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights.
    pub weight_decay: f64,
    /// Training accuracy below this fraction is reported as an error.
    pub min_accuracy: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        ClassifierTraining {
            classes: 4,
            epochs: 300,
            learning_rate: 0.5,
            weight_decay: 1e-4,
            min_accuracy: 0.7,
        }
    }
}

/// Full-batch gradient descent on the mean cross-entropy, starting from
/// zero weights. Fully deterministic given the corpus order.
pub fn train_toy_classifier(corpus: &[LabeledImage], cfg: &ClassifierTraining) -> Result<ToyClassifier> {
    let first = corpus.first().ok_or_else(|| Error::Config("empty corpus".into()))?;
    let (bw, bh) = grid(first.image.width(), first.image.height());
    let mut clf = ToyClassifier::zeros(bw, bh, cfg.classes);
    let mut feats = Vec::with_capacity(corpus.len());
    for item in corpus {
        clf.check_size(item.image.width(), item.image.height())?;
        if item.label >= cfg.classes {
            return Err(Error::LabelOutOfRange { label: item.label, classes: cfg.classes });
        }
        feats.push(features(&item.image.to_real()));
    }
    let n = clf.feature_count();
    let inv = 1.0 / corpus.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; clf.weights.len()];
        let mut gb = vec![0.0; cfg.classes];
        for (f, item) in feats.iter().zip(corpus) {
            let (_, gl) = softmax_xent(&clf.logits_from_features(f), item.label)?;
            for c in 0..cfg.classes {
                gb[c] += gl[c] * inv;
                for j in 0..n {
                    gw[c * n + j] += gl[c] * f[j] * inv;
                }
            }
        }
        for (w, g) in clf.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * (g + cfg.weight_decay * *w);
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * g;
        }
    }
    let hits = feats
        .iter()
        .zip(corpus)
        .filter(|(f, item)| argmax(&clf.logits_from_features(f)) == item.label)
        .count();
    let accuracy = hits as f64 * inv;
    if accuracy < cfg.min_accuracy {
        return Err(Error::NoConvergence { accuracy, epochs: cfg.epochs });
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::labeled_corpus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xent_closed_forms() {
        let (l, g) = softmax_xent(&[0.0; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let (l, _) = softmax_xent(&[1000.0, 0.0, 0.0], 0).unwrap();
        assert!(l < 1e-12);
        assert!(softmax_xent(&[0.0, 0.0], 2).is_err());
        assert!(softmax_xent(&[0.0], 0).is_err());
    }

    fn random_classifier(rng: &mut ChaCha8Rng) -> ToyClassifier {
        let mut clf = ToyClassifier::zeros(1, 1, 3);
        for w in clf.weights.iter_mut().chain(clf.bias.iter_mut()) {
            *w = rng.gen_range(-2.0..2.0);
        }
        clf
    }

    #[test]
    fn task_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let clf = random_classifier(&mut rng);
        let mut z = RealImage::zeros(8, 8);
        for v in z.data.iter_mut() {
            *v = rng.gen_range(0.0..255.0);
        }
        let (_, g) = clf.task_loss(&z, 1).unwrap();
        let h = 1e-3;
        for i in 0..z.data.len() {
            let mut hi = z.clone();
            let mut lo = z.clone();
            hi.data[i] += h;
            lo.data[i] -= h;
            let fd = (clf.task_loss(&hi, 1).unwrap().0 - clf.task_loss(&lo, 1).unwrap().0) / (2.0 * h);
            assert!((g.data[i] - fd).abs() <= 1e-4 * g.data[i].abs().max(1e-6), "{i}: {} vs {fd}", g.data[i]);
        }
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let clf = ToyClassifier::zeros(2, 2, 5);
        let z = RealImage::zeros(16, 16);
        let (l, g) = clf.task_loss(&z, 3).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separable_corpus_is_learned_deterministically() {
        let corpus = labeled_corpus(120, 32, 4, 5);
        let cfg = ClassifierTraining::default();
        let a = train_toy_classifier(&corpus, &cfg).unwrap();
        let b = train_toy_classifier(&corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.accuracy(&corpus).unwrap() >= 0.95);
        let text = a.to_text();
        assert_eq!(ToyClassifier::from_text(&text).unwrap(), a);
    }

    #[test]
    fn single_class_corpus_predicts_that_class() {
        let corpus: Vec<_> = labeled_corpus(12, 32, 4, 6)
            .into_iter()
            .map(|mut item| {
                item.label = 2;
                item
            })
            .collect();
        let clf = train_toy_classifier(&corpus, &ClassifierTraining::default()).unwrap();
        assert_eq!(clf.accuracy(&corpus).unwrap(), 1.0);
    }

    #[test]
    fn unlearnable_labels_report_non_convergence() {
        let mut corpus = labeled_corpus(40, 32, 4, 7);
        // Identical images with alternating labels cannot exceed 50%.
        let img = corpus[0].image.clone();
        for (i, item) in corpus.iter_mut().enumerate() {
            item.image = img.clone();
            item.label = i % 2;
        }
        let err = train_toy_classifier(&corpus, &ClassifierTraining::default()).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }
}
