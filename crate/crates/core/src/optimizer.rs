//! Mini-batch Adam over the quantization tables and the entropy models.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::analyze;
use crate::color::Layout;
use crate::dct::RealCoeffs;
use crate::diffproxy::{backward_full, effective_table, forward_coeffs, forward_noisy, normalize, Mode};
use crate::entropy::{add_uniform_noise_with, estimate_bits, estimate_bits_relaxed, EstimatorSet, Want};
use crate::error::{Error, Result};
use crate::image::{RealImage, RgbImage};
use crate::tables::{QuantTableParams, Quality};
use crate::taskloss::ToyClassifier;

/// Weights of the rate, distortion and task terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rate: f64,
    pub distortion: f64,
    pub task: f64,
}

impl LossWeights {
    pub fn new(rate: f64, distortion: f64, task: f64) -> Result<Self> {
        let w = LossWeights { rate, distortion, task };
        w.validate()?;
        Ok(w)
    }

    /// Rate-distortion setting `c_r = c_d = 1`, `c_c = 0`.
    pub fn rate_distortion() -> Self {
        LossWeights { rate: 1.0, distortion: 1.0, task: 0.0 }
    }

    /// Rate-accuracy setting `c_r = 10`, `c_d = 0`, `c_c = 1`.
    pub fn rate_accuracy() -> Self {
        LossWeights { rate: 10.0, distortion: 0.0, task: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.rate, self.distortion, self.task];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// How the rounding step is relaxed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relaxation {
    /// Cubic soft rounding for the reconstruction and the rate input.
    Soft,
    /// Uniform noise in [-0.5, 0.5) added to the unrounded coefficients,
    /// shared by the reconstruction and the rate input.
    #[default]
    Noise,
}

impl std::str::FromStr for Relaxation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Relaxation::Soft),
            "noise" => Ok(Relaxation::Noise),
            _ => Err(Error::Config(format!("unknown relaxation {s:?} (expected soft or noise)"))),
        }
    }
}

impl std::fmt::Display for Relaxation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Relaxation::Soft => "soft",
            Relaxation::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Adam step size for the tables.
    pub lr: f64,
    /// Adam step size for the entropy models.
    pub entropy_lr: f64,
    /// Quality factors sampled uniformly, one per image.
    pub qualities: Vec<u32>,
    pub layout: Layout,
    pub seed: u64,
    /// Update the entropy models jointly with the tables.
    pub train_entropy: bool,
    /// Leading steps during which only the entropy models move.
    pub warmup_steps: usize,
    pub relaxation: Relaxation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 4,
            lr: 1e-4,
            entropy_lr: 1e-4,
            qualities: (10..=90).collect(),
            layout: Layout::Yuv420,
            seed: 0,
            train_entropy: true,
            warmup_steps: 0,
            relaxation: Relaxation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<Vec<Quality>> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.entropy_lr.is_finite() && self.entropy_lr >= 0.0) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.qualities.is_empty() {
            return Err(Error::Config("quality set is empty".into()));
        }
        self.qualities.iter().map(|&q| Quality::new(q)).collect()
    }
}

/// A training image with its table-independent analysis cached.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: RgbImage,
    pub label: Option<usize>,
    pub real: RealImage,
    pub coeffs: RealCoeffs,
}

impl Sample {
    pub fn new(image: RgbImage, label: Option<usize>, layout: Layout) -> Self {
        Sample {
            real: image.to_real(),
            coeffs: analyze(&image, layout),
            image,
            label,
        }
    }

    pub fn pixels(&self) -> f64 {
        self.image.pixels() as f64
    }
}

/// Loss components, each already weighted into `total`. Rate is in
/// estimated bits per pixel, distortion is squared error summed over the
/// three channels per pixel, task is cross-entropy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub rate: f64,
    pub distortion: f64,
    pub task: f64,
    /// Bits per pixel on the noise-relaxed stream (entropy-model objective).
    pub entropy_bpp: f64,
}

impl LossTerms {
    fn add_scaled(&mut self, o: &LossTerms, k: f64) {
        self.total += k * o.total;
        self.rate += k * o.rate;
        self.distortion += k * o.distortion;
        self.task += k * o.task;
        self.entropy_bpp += k * o.entropy_bpp;
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub terms: LossTerms,
    pub grad_p: QuantTableParams,
    /// Present when noise for the entropy models was supplied.
    pub grad_entropy: Option<Vec<f64>>,
}

/// Everything [`total_loss`] reads besides the image and quality.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub tables: &'a QuantTableParams,
    pub entropy: &'a EstimatorSet,
    pub weights: LossWeights,
    pub classifier: Option<&'a ToyClassifier>,
    pub relaxation: Relaxation,
}

/// One relaxed forward pass and the gradient of the weighted loss with
/// respect to the tables. With `noise_rng`, also the gradient of the relaxed
/// bits per pixel with respect to the entropy parameters. The noise
/// relaxation needs `noise_rng`.
pub fn total_loss<R: Rng>(
    sample: &Sample,
    q: Quality,
    ctx: &LossContext,
    noise_rng: Option<&mut R>,
) -> Result<LossGrad> {
    let w = ctx.weights;
    let classifier = if w.task > 0.0 {
        Some(
            ctx.classifier
                .ok_or_else(|| Error::Config("task weight is positive but no classifier was given".into()))?,
        )
    } else {
        None
    };
    let label = match (classifier, sample.label) {
        (Some(_), None) => return Err(Error::MissingLabel(0)),
        (_, l) => l,
    };
    let px = sample.pixels();
    let tables = effective_table(ctx.tables, q);
    let mut noise_rng = noise_rng;
    let (out, relaxed) = match ctx.relaxation {
        Relaxation::Soft => (forward_coeffs(&sample.coeffs, &tables, Mode::Soft), None),
        Relaxation::Noise => {
            let rng = noise_rng
                .take()
                .ok_or_else(|| Error::Config("the noise relaxation needs a noise source".into()))?;
            let relaxed = add_uniform_noise_with(&normalize(&sample.coeffs, &tables), rng);
            (forward_noisy(&sample.coeffs, &tables, &relaxed.noise)?, Some(relaxed))
        }
    };

    let mut terms = LossTerms::default();
    let mut grad_recon: Option<RealImage> = None;
    if w.distortion > 0.0 {
        let mut sse = 0.0;
        let mut g = RealImage::zeros(sample.real.width, sample.real.height);
        let k = 2.0 * w.distortion / px;
        for ((g, &r), &x) in g.data.iter_mut().zip(&out.reconstruction.data).zip(&sample.real.data) {
            let d = r - x;
            sse += d * d;
            *g = k * d;
        }
        terms.distortion = sse / px;
        grad_recon = Some(g);
    }
    if let (Some(clf), Some(y)) = (classifier, label) {
        let (loss, g) = clf.task_loss(&out.reconstruction, y)?;
        terms.task = loss;
        let acc = grad_recon.get_or_insert_with(|| RealImage::zeros(g.width, g.height));
        for (a, v) in acc.data.iter_mut().zip(&g.data) {
            *a += w.task * v;
        }
    }
    let want_rate_grad = w.rate > 0.0;
    let scale = |mut g: RealCoeffs| {
        let k = w.rate / px;
        for v in g.channels.iter_mut().flat_map(|ch| ch.blocks.iter_mut()).flat_map(|b| b.iter_mut()) {
            *v *= k;
        }
        g
    };
    let mut grad_quantized = None;
    let mut grad_normalized = None;
    let mut grad_entropy = None;
    match relaxed {
        None => {
            let est = estimate_bits(&out.quantized, ctx.entropy, Want { coeffs: want_rate_grad, params: false });
            terms.rate = est.total() / px;
            grad_quantized = est.grad_coeffs.map(scale);
            if let Some(rng) = noise_rng {
                let relaxed = add_uniform_noise_with(out.tape.normalized(), rng);
                let e = estimate_bits_relaxed(&relaxed, ctx.entropy, Want { coeffs: false, params: true });
                terms.entropy_bpp = e.total() / px;
                grad_entropy = e.grad_params.map(|g| g.into_iter().map(|v| v / px).collect());
            }
        }
        Some(relaxed) => {
            let e = estimate_bits_relaxed(&relaxed, ctx.entropy, Want { coeffs: want_rate_grad, params: true });
            terms.rate = e.total() / px;
            terms.entropy_bpp = terms.rate;
            grad_normalized = e.grad_coeffs.map(scale);
            grad_entropy = e.grad_params.map(|g| g.into_iter().map(|v| v / px).collect());
        }
    }
    terms.total = w.rate * terms.rate + w.distortion * terms.distortion + w.task * terms.task;
    let grad_p = backward_full(&out.tape, grad_recon.as_ref(), grad_quantized.as_ref(), grad_normalized.as_ref())?;

    Ok(LossGrad { terms, grad_p, grad_entropy })
}

/// Bias-corrected Adam state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let b1t = 1.0 - state.beta1.powi(state.t as i32);
    let b2t = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mhat = state.m[i] / b1t;
        let vhat = state.v[i] / b2t;
        params[i] -= lr * mhat / (vhat.sqrt() + state.eps);
    }
}

/// One row of the loss trace (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub tables: QuantTableParams,
    pub entropy: EstimatorSet,
    pub trace: Vec<TraceRow>,
}

/// Starting point for training.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainInit {
    pub tables: QuantTableParams,
    pub entropy: EstimatorSet,
}

/// Universal training over a corpus: each step draws `batch` images with
/// replacement and one quality per image, averages their gradients in a
/// fixed order and takes one Adam step on the tables (projected to >= 1)
/// and, if enabled, on the entropy models.
pub fn universal_train(
    corpus: &[Sample],
    cfg: &TrainConfig,
    weights: LossWeights,
    classifier: Option<&ToyClassifier>,
    init: TrainInit,
) -> Result<TrainOutput> {
    weights.validate()?;
    let qualities = cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if weights.task > 0.0 {
        if classifier.is_none() {
            return Err(Error::Config("task weight is positive but no classifier was given".into()));
        }
        if let Some(i) = corpus.iter().position(|s| s.label.is_none()) {
            return Err(Error::MissingLabel(i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tables = init.tables;
    tables.project();
    let mut entropy = init.entropy;
    let mut adam_p = AdamState::new(128);
    let mut adam_e = AdamState::new(entropy.flat().len());
    let mut trace = Vec::with_capacity(cfg.steps);
    let inv = 1.0 / cfg.batch as f64;

    for step in 0..cfg.steps {
        let mut terms = LossTerms::default();
        let mut gp = vec![0.0; 128];
        let mut ge = vec![0.0; adam_e.m.len()];
        let ctx = LossContext { tables: &tables, entropy: &entropy, weights, classifier, relaxation: cfg.relaxation };
        let use_noise = cfg.train_entropy || cfg.relaxation == Relaxation::Noise;
        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..corpus.len());
            let q = qualities[rng.gen_range(0..qualities.len())];
            let noise = use_noise.then_some(&mut rng);
            let lg = total_loss(&corpus[idx], q, &ctx, noise).map_err(|e| match e {
                Error::MissingLabel(_) => Error::MissingLabel(idx),
                e => e,
            })?;
            let finite = lg.terms.total.is_finite()
                && lg.terms.entropy_bpp.is_finite()
                && lg.grad_p.iter().all(|g| g.is_finite())
                && lg.grad_entropy.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::NonFiniteLoss { step, image: idx, quality: q.get() });
            }
            terms.add_scaled(&lg.terms, inv);
            for (a, g) in gp.iter_mut().zip(lg.grad_p.iter()) {
                *a += g * inv;
            }
            if let Some(g) = lg.grad_entropy {
                for (a, v) in ge.iter_mut().zip(g) {
                    *a += v * inv;
                }
            }
        }
        trace.push(TraceRow { step, terms });
        if step >= cfg.warmup_steps {
            let mut flat: Vec<f64> = tables.iter().copied().collect();
            adam_step(&mut flat, &gp, &mut adam_p, cfg.lr);
            for (t, v) in tables.iter_mut().zip(flat) {
                *t = v;
            }
            tables.project();
        }
        if cfg.train_entropy {
            let mut flat = entropy.flat();
            adam_step(&mut flat, &ge, &mut adam_e, cfg.entropy_lr);
            entropy.set_flat(&flat);
        }
    }
    Ok(TrainOutput { tables, entropy, trace })
}

/// Fits tables to a single image. The entropy models stay as given unless
/// `cfg.train_entropy` is set.
pub fn per_image_train(
    sample: &Sample,
    cfg: &TrainConfig,
    weights: LossWeights,
    classifier: Option<&ToyClassifier>,
    init: TrainInit,
) -> Result<TrainOutput> {
    if weights.task > 0.0 && sample.label.is_none() {
        return Err(Error::MissingLabel(0));
    }
    universal_train(std::slice::from_ref(sample), cfg, weights, classifier, init)
}

/// Loss trace as CSV with columns step,total,rate,distortion,task,entropy_bpp.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,total,rate,distortion,task,entropy_bpp\n");
    for r in trace {
        let t = &r.terms;
        let _ = writeln!(out, "{},{},{},{},{},{}", r.step, t.total, t.rate, t.distortion, t.task, t.entropy_bpp);
    }
    out
}

/// Mean of `total` over a window of the trace.
pub fn mean_total(trace: &[TraceRow]) -> f64 {
    trace.iter().map(|r| r.terms.total).sum::<f64>() / trace.len().max(1) as f64
}

/// Float tables in the text format, followed (when `q` is given) by the
/// scaled, rounded and clipped integer tables as comment lines.
pub fn export_tables(p: &QuantTableParams, q: Option<Quality>) -> String {
    let mut out = p.to_text(None);
    if let Some(q) = q {
        let _ = writeln!(out, "# integer tables at quality {}", q.get());
        for line in p.scale_table(q).to_text(None).lines() {
            if line.starts_with('#') {
                let _ = writeln!(out, "{line}");
            } else {
                let _ = writeln!(out, "# {line}");
            }
        }
    }
    out
}
