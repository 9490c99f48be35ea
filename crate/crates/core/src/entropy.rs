//! Learned bit-rate estimator.
//!
//! Each of the four models (luma DC, luma AC, chroma DC, chroma AC) is a
//! univariate monotone cumulative: three gated hidden layers of width 3 and a
//! scalar output squashed by a sigmoid. Matrices are made positive with a
//! softplus and gates bounded by tanh, so the cumulative is non-decreasing for
//! any parameter values. The bits for a value `v` are
//! `-log2(cdf(v + 1/2) - cdf(v - 1/2))`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dct::RealCoeffs;
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-9;

const W: usize = 3;
// Parameter layout inside the flat vector.
const H0: usize = 0; // 3x1
const H1: usize = H0 + W; // 3x3
const H2: usize = H1 + W * W; // 3x3
const H3: usize = H2 + W * W; // 1x3
const B0: usize = H3 + W;
const B1: usize = B0 + W;
const B2: usize = B1 + W;
const B3: usize = B2 + W; // scalar
const A0: usize = B3 + 1;
const A1: usize = A0 + W;
const A2: usize = A1 + W;
pub const N_PARAMS: usize = A2 + W;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters of one univariate cumulative model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityModel {
    pub params: [f64; N_PARAMS],
}

impl DensityModel {
    /// Near-linear initialization spreading the cumulative over roughly
    /// `±init_scale`: matrices set so that the composed slope is about
    /// `1 / init_scale`, zero biases and zero gates, so `cdf(0) = 1/2`.
    pub fn new(init_scale: f64) -> Self {
        let filters = [1usize, W, W, W, 1];
        let scale = init_scale.powf(1.0 / 4.0);
        let mut params = [0.0; N_PARAMS];
        let offsets = [H0, H1, H2, H3];
        for layer in 0..4 {
            let v = (1.0 / scale / filters[layer + 1] as f64).exp_m1().ln();
            let n = filters[layer] * filters[layer + 1];
            params[offsets[layer]..offsets[layer] + n].fill(v);
        }
        DensityModel { params }
    }

    fn prepare(&self) -> Prepared {
        let p = &self.params;
        let mut m = Prepared::default();
        for i in 0..W {
            m.w0[i] = softplus(p[H0 + i]);
            m.w3[i] = softplus(p[H3 + i]);
            m.b0[i] = p[B0 + i];
            m.b1[i] = p[B1 + i];
            m.b2[i] = p[B2 + i];
            m.ta[0][i] = p[A0 + i].tanh();
            m.ta[1][i] = p[A1 + i].tanh();
            m.ta[2][i] = p[A2 + i].tanh();
            for j in 0..W {
                m.w1[i][j] = softplus(p[H1 + i * W + j]);
                m.w2[i][j] = softplus(p[H2 + i * W + j]);
            }
        }
        m.b3 = p[B3];
        m
    }

    /// Cumulative distribution at `x`.
    pub fn cumulative(&self, x: f64) -> f64 {
        sigmoid(self.prepare().logit(x).0)
    }

    /// Bits for `v` and the derivative with respect to `v`.
    pub fn bits_for_value(&self, v: f64) -> (f64, f64) {
        let r = self.prepare().bits(v);
        (r.bits, r.dv)
    }

    /// Bits for `v` plus gradients with respect to `v` and the parameters.
    pub fn bits_with_grad(&self, v: f64) -> (f64, f64, [f64; N_PARAMS]) {
        let m = self.prepare();
        let r = m.bits(v);
        let mut g = ParamGrad::default();
        m.backprop_bits(&r, 1.0, &mut g);
        (r.bits, r.dv, g.finish(self))
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Prepared {
    w0: [f64; W],
    w1: [[f64; W]; W],
    w2: [[f64; W]; W],
    w3: [f64; W],
    b0: [f64; W],
    b1: [f64; W],
    b2: [f64; W],
    b3: f64,
    ta: [[f64; W]; 3],
}

/// Activations kept for the reverse pass of one logit evaluation.
#[derive(Debug, Default, Clone, Copy)]
struct Trace {
    x: f64,
    g: [[f64; W]; 3],
    t: [[f64; W]; 3],
}

struct BitsEval {
    bits: f64,
    dv: f64,
    /// dbits / dlogit at v + 1/2 and v - 1/2.
    d_upper: f64,
    d_lower: f64,
    upper: Trace,
    lower: Trace,
}

impl Prepared {
    /// Logit of the cumulative, its derivative in x, and a trace.
    #[inline]
    fn logit(&self, x: f64) -> (f64, f64, Trace) {
        let mut tr = Trace {
            x,
            ..Default::default()
        };
        let mut dx = [0.0; W];
        let mut h = [0.0; W];
        for i in 0..W {
            h[i] = self.w0[i] * x + self.b0[i];
            dx[i] = self.w0[i];
        }
        let mut g = self.gate(0, &h, &mut dx, &mut tr);
        for (layer, (wm, b)) in [(&self.w1, &self.b1), (&self.w2, &self.b2)].into_iter().enumerate() {
            let mut nd = [0.0; W];
            for i in 0..W {
                h[i] = b[i];
                for j in 0..W {
                    h[i] += wm[i][j] * g[j];
                    nd[i] += wm[i][j] * dx[j];
                }
            }
            dx = nd;
            g = self.gate(layer + 1, &h, &mut dx, &mut tr);
        }
        let mut out = self.b3;
        let mut d = 0.0;
        for i in 0..W {
            out += self.w3[i] * g[i];
            d += self.w3[i] * dx[i];
        }
        (out, d, tr)
    }

    #[inline]
    fn gate(&self, layer: usize, h: &[f64; W], dx: &mut [f64; W], tr: &mut Trace) -> [f64; W] {
        let mut g = [0.0; W];
        for i in 0..W {
            let t = h[i].tanh();
            let a = self.ta[layer][i];
            g[i] = h[i] + a * t;
            dx[i] *= 1.0 + a * (1.0 - t * t);
            tr.t[layer][i] = t;
        }
        tr.g[layer] = g;
        g
    }

    fn bits(&self, v: f64) -> BitsEval {
        let (lu, du, tu) = self.logit(v + 0.5);
        let (ll, dl, tl) = self.logit(v - 0.5);
        // Evaluate in whichever tail keeps the difference well conditioned.
        let prob = if lu + ll > 0.0 {
            sigmoid(-ll) - sigmoid(-lu)
        } else {
            sigmoid(lu) - sigmoid(ll)
        };
        let su = sigmoid(lu) * sigmoid(-lu);
        let sl = sigmoid(ll) * sigmoid(-ll);
        // At the floor the gradient passes through as if evaluated there.
        let p = prob.max(PROB_FLOOR);
        let dbits_dp = -1.0 / (p * std::f64::consts::LN_2);
        let d_upper = dbits_dp * su;
        let d_lower = -dbits_dp * sl;
        BitsEval {
            bits: -p.log2(),
            dv: d_upper * du + d_lower * dl,
            d_upper,
            d_lower,
            upper: tu,
            lower: tl,
        }
    }

    fn backprop_bits(&self, r: &BitsEval, scale: f64, g: &mut ParamGrad) {
        self.backprop_logit(&r.upper, r.d_upper * scale, g);
        self.backprop_logit(&r.lower, r.d_lower * scale, g);
    }

    /// Accumulates d(logit)/d(prepared params) * delta.
    fn backprop_logit(&self, tr: &Trace, delta: f64, g: &mut ParamGrad) {
        if delta == 0.0 {
            return;
        }
        g.b3 += delta;
        let mut dg = [0.0; W];
        for i in 0..W {
            g.w3[i] += delta * tr.g[2][i];
            dg[i] = delta * self.w3[i];
        }
        for layer in (0..3).rev() {
            let mut dh = [0.0; W];
            for i in 0..W {
                let t = tr.t[layer][i];
                let a = self.ta[layer][i];
                g.ta[layer][i] += dg[i] * t;
                dh[i] = dg[i] * (1.0 + a * (1.0 - t * t));
            }
            match layer {
                0 => {
                    for i in 0..W {
                        g.b0[i] += dh[i];
                        g.w0[i] += dh[i] * tr.x;
                    }
                }
                _ => {
                    let (wm, gw, gb) = if layer == 1 {
                        (&self.w1, &mut g.w1, &mut g.b1)
                    } else {
                        (&self.w2, &mut g.w2, &mut g.b2)
                    };
                    let prev = &tr.g[layer - 1];
                    let mut nd = [0.0; W];
                    for i in 0..W {
                        gb[i] += dh[i];
                        for j in 0..W {
                            gw[i][j] += dh[i] * prev[j];
                            nd[j] += wm[i][j] * dh[i];
                        }
                    }
                    dg = nd;
                }
            }
        }
    }
}

/// Gradient with respect to the prepared (constrained) parameters.
#[derive(Debug, Default, Clone, Copy)]
struct ParamGrad {
    w0: [f64; W],
    w1: [[f64; W]; W],
    w2: [[f64; W]; W],
    w3: [f64; W],
    b0: [f64; W],
    b1: [f64; W],
    b2: [f64; W],
    b3: f64,
    ta: [[f64; W]; 3],
}

impl ParamGrad {
    /// Chains through softplus and tanh into the raw parameter vector.
    fn finish(&self, m: &DensityModel) -> [f64; N_PARAMS] {
        let p = &m.params;
        let mut out = [0.0; N_PARAMS];
        for i in 0..W {
            out[H0 + i] = self.w0[i] * sigmoid(p[H0 + i]);
            out[H3 + i] = self.w3[i] * sigmoid(p[H3 + i]);
            out[B0 + i] = self.b0[i];
            out[B1 + i] = self.b1[i];
            out[B2 + i] = self.b2[i];
            for (layer, base) in [A0, A1, A2].into_iter().enumerate() {
                let t = p[base + i].tanh();
                out[base + i] = self.ta[layer][i] * (1.0 - t * t);
            }
            for j in 0..W {
                out[H1 + i * W + j] = self.w1[i][j] * sigmoid(p[H1 + i * W + j]);
                out[H2 + i * W + j] = self.w2[i][j] * sigmoid(p[H2 + i * W + j]);
            }
        }
        out[B3] = self.b3;
        out
    }
}

/// Index of each model within an [`EstimatorSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    LumaDc = 0,
    LumaAc = 1,
    ChromaDc = 2,
    ChromaAc = 3,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::LumaDc, ModelId::LumaAc, ModelId::ChromaDc, ModelId::ChromaAc];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::LumaDc => "luma-dc",
            ModelId::LumaAc => "luma-ac",
            ModelId::ChromaDc => "chroma-dc",
            ModelId::ChromaAc => "chroma-ac",
        }
    }

    fn for_coeff(channel: usize, k: usize) -> ModelId {
        match (channel > 0, k == 0) {
            (false, true) => ModelId::LumaDc,
            (false, false) => ModelId::LumaAc,
            (true, true) => ModelId::ChromaDc,
            (true, false) => ModelId::ChromaAc,
        }
    }
}

/// The four density models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSet {
    pub models: [DensityModel; 4],
}

const CHECKPOINT_HEADER: &str = "qtune-entropy-checkpoint v1";

impl Default for EstimatorSet {
    fn default() -> Self {
        // DC differences span a much wider range than AC values.
        EstimatorSet {
            models: [
                DensityModel::new(50.0),
                DensityModel::new(10.0),
                DensityModel::new(50.0),
                DensityModel::new(10.0),
            ],
        }
    }
}

impl EstimatorSet {
    pub fn model(&self, id: ModelId) -> &DensityModel {
        &self.models[id as usize]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.models.iter().flat_map(|m| m.params).collect()
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), 4 * N_PARAMS);
        for (m, chunk) in self.models.iter_mut().zip(v.chunks(N_PARAMS)) {
            m.params.copy_from_slice(chunk);
        }
    }

    /// Text checkpoint: a header line, then per model a `model <name>` line
    /// followed by its parameters in round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_HEADER}");
        for id in ModelId::ALL {
            let _ = writeln!(out, "model {}", id.name());
            let vals: Vec<String> = self.model(id).params.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        if lines.next().map(str::trim) != Some(CHECKPOINT_HEADER) {
            return Err(Error::Checkpoint(format!("missing header {CHECKPOINT_HEADER:?}")));
        }
        let mut set = EstimatorSet::default();
        for id in ModelId::ALL {
            let head = lines.next().unwrap_or_default().trim();
            if head != format!("model {}", id.name()) {
                return Err(Error::Checkpoint(format!("expected model {}, found {head:?}", id.name())));
            }
            let vals: Vec<f64> = lines
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Checkpoint(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != N_PARAMS || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("model {} needs {N_PARAMS} finite values", id.name())));
            }
            set.models[id as usize].params.copy_from_slice(&vals);
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }
}

/// Coefficients with additive uniform noise on every model input (the DC
/// difference and each AC value).
#[derive(Debug, Clone)]
pub struct RelaxedCoeffs {
    pub base: RealCoeffs,
    pub noise: RealCoeffs,
}

pub fn add_uniform_noise(coeffs: &RealCoeffs, seed: u64) -> RelaxedCoeffs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_uniform_noise_with(coeffs, &mut rng)
}

pub fn add_uniform_noise_with<R: Rng>(coeffs: &RealCoeffs, rng: &mut R) -> RelaxedCoeffs {
    let mut noise = RealCoeffs::zeros_like(coeffs);
    for ch in noise.channels.iter_mut() {
        for b in ch.blocks.iter_mut() {
            for v in b.iter_mut() {
                *v = uniform_open(rng);
            }
        }
    }
    RelaxedCoeffs {
        base: coeffs.clone(),
        noise,
    }
}

/// Uniform on the open interval (-1/2, 1/2).
fn uniform_open<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return u;
        }
    }
}

/// Which gradients `estimate_bits` should produce.
#[derive(Debug, Clone, Copy, Default)]
pub struct Want {
    pub coeffs: bool,
    pub params: bool,
}

#[derive(Debug, Clone)]
pub struct BitsEstimate {
    /// Estimated bits per channel (Y, Cb, Cr).
    pub channel_bits: [f64; 3],
    pub grad_coeffs: Option<RealCoeffs>,
    /// Gradient over the four models, concatenated in [`ModelId`] order.
    pub grad_params: Option<Vec<f64>>,
}

impl BitsEstimate {
    pub fn total(&self) -> f64 {
        self.channel_bits.iter().sum()
    }
}

/// Estimated bits of table-normalized coefficients: DPCM on DC in raster
/// block order per channel (Cb and Cr keep separate predictors but share the
/// chroma models), AC values coded directly.
pub fn estimate_bits(coeffs: &RealCoeffs, set: &EstimatorSet, want: Want) -> BitsEstimate {
    estimate_inner(coeffs, None, set, want)
}

/// Same estimate on noise-relaxed coefficients; gradients with respect to the
/// coefficients refer to the noiseless base values.
pub fn estimate_bits_relaxed(relaxed: &RelaxedCoeffs, set: &EstimatorSet, want: Want) -> BitsEstimate {
    estimate_inner(&relaxed.base, Some(&relaxed.noise), set, want)
}

fn estimate_inner(coeffs: &RealCoeffs, noise: Option<&RealCoeffs>, set: &EstimatorSet, want: Want) -> BitsEstimate {
    let prepared: [Prepared; 4] = std::array::from_fn(|i| set.models[i].prepare());
    let mut grads = [ParamGrad::default(); 4];
    let mut grad_coeffs = want.coeffs.then(|| RealCoeffs::zeros_like(coeffs));
    let mut channel_bits = [0.0; 3];
    for c in 0..3 {
        let plane = &coeffs.channels[c];
        let mut prev_dc = 0.0;
        let mut bits = 0.0;
        for (i, block) in plane.blocks.iter().enumerate() {
            for k in 0..64 {
                let id = ModelId::for_coeff(c, k) as usize;
                let mut v = if k == 0 { block[0] - prev_dc } else { block[k] };
                if let Some(n) = noise {
                    v += n.channels[c].blocks[i][k];
                }
                let r = prepared[id].bits(v);
                bits += r.bits;
                if want.params {
                    prepared[id].backprop_bits(&r, 1.0, &mut grads[id]);
                }
                if let Some(gc) = grad_coeffs.as_mut() {
                    let gp = &mut gc.channels[c];
                    gp.blocks[i][k] += r.dv;
                    if k == 0 && i > 0 {
                        gp.blocks[i - 1][0] -= r.dv;
                    }
                }
            }
            prev_dc = block[0];
        }
        channel_bits[c] = bits;
    }
    let grad_params = want.params.then(|| {
        grads
            .iter()
            .zip(&set.models)
            .flat_map(|(g, m)| g.finish(m))
            .collect()
    });
    BitsEstimate {
        channel_bits,
        grad_coeffs,
        grad_params,
    }
}
