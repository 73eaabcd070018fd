//! One encoder layer as a fixed 26-step schedule (see `docs/schedule.md`),
//! run either on the quantized kernels or in double precision with the same
//! weights. Each step is timed and its multiplies are read from the counter.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, GatherMode};
use super::gather::{deformable_gather, deformable_gather_fixed, GatherSpec};
use super::reorg::Reorg;
use super::trace::{OpTrace, StepKind, StepRecord};
use crate::counter;
use crate::error::{Error, Result};
use crate::kernels::{
    activation_fixed, activation_ref, layernorm_fixed_rows, layernorm_ref, softmax_fixed_rows, softmax_ref,
    ActivationConfig, ActivationKind, LayerNormConfig, SoftmaxConfig,
};
use crate::matmul::{matmul_fixed, matmul_ref, MacUnitConfig};
use crate::qcore::{div_rne, qten, shift_round, FixedTensor, QFormat, QuantParams, RealTensor};

/// Steps per layer.
pub const SCHEDULE_LEN: usize = 26;

/// Weight tensor names, also the file stems under `weights.dir`.
pub const WEIGHT_NAMES: [&str; 7] = ["wq", "wk", "wv", "wo", "w_off", "w1", "w2"];

/// Stream of the encoder input generator (weights use streams 0..7).
const INPUT_STREAM: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub wq: FixedTensor,
    pub wk: FixedTensor,
    pub wv: FixedTensor,
    pub wo: FixedTensor,
    /// Sampling offsets, `C x 2h`, laid out `[dx, dy]` per head.
    pub w_off: FixedTensor,
    pub w1: FixedTensor,
    pub w2: FixedTensor,
}

impl EncoderWeights {
    /// `(fan_in, fan_out)` of each weight, in `WEIGHT_NAMES` order.
    pub fn shapes(cfg: &EncoderConfig) -> [(usize, usize); 7] {
        let (c, h) = (cfg.encoder.channels, cfg.encoder.heads);
        [(c, c), (c, c), (c, c), (c, c), (c, 2 * h), (c, 4 * c), (4 * c, c)]
    }

    pub fn all(&self) -> [&FixedTensor; 7] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.w_off, &self.w1, &self.w2]
    }

    fn from_vec(mut v: Vec<FixedTensor>) -> Self {
        let mut next = || v.remove(0);
        Self {
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            w_off: next(),
            w1: next(),
            w2: next(),
        }
    }

    /// Seeded uniform weights, raw range `+-amplitude / sqrt(fan_in)`.
    pub fn generate(cfg: &EncoderConfig) -> Self {
        let fmt = cfg.formats.weight;
        let tensors = Self::shapes(cfg)
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.weights.seed);
                rng.set_stream(i as u64);
                let bound = (cfg.weights.amplitude / (fan_in as f64).sqrt() / fmt.lsb()).round() as i64;
                let bound = bound.clamp(0, fmt.max_raw());
                let raw = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
                FixedTensor::with_format(vec![fan_in, fan_out], fmt, raw).expect("bound within format")
            })
            .collect();
        Self::from_vec(tensors)
    }

    /// Reads `<dir>/<name>.qten` for every weight; shapes and format must match.
    pub fn load(dir: impl AsRef<Path>, cfg: &EncoderConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let mut tensors = Vec::new();
        for (name, &(fan_in, fan_out)) in WEIGHT_NAMES.iter().zip(&Self::shapes(cfg)) {
            let path = dir.join(format!("{name}.qten"));
            let key = format!("weights.{name}");
            let t = match qten::load(&path)? {
                qten::Tensor::Fixed(t) => t,
                qten::Tensor::Real(_) => return Err(Error::config(key, "expected a fixed-point tensor")),
            };
            if t.shape() != [fan_in, fan_out] {
                return Err(Error::config(key, format!("shape {:?}, expected [{fan_in}, {fan_out}]", t.shape())));
            }
            if t.format() != cfg.formats.weight {
                return Err(Error::config(key, format!("format {}, expected {}", t.format(), cfg.formats.weight)));
            }
            let t = t.with_params(QuantParams::for_format(cfg.formats.weight));
            tensors.push(t);
        }
        Ok(Self::from_vec(tensors))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        for (name, t) in WEIGHT_NAMES.iter().zip(self.all()) {
            qten::save(dir.as_ref().join(format!("{name}.qten")), &qten::Tensor::Fixed(t.clone()))?;
        }
        Ok(())
    }

    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        match &cfg.weights.dir {
            Some(dir) => Self::load(dir, cfg),
            None => Ok(Self::generate(cfg)),
        }
    }
}

/// The arithmetic behind each step kind.
trait Engine {
    type T: Reorg + Clone;

    fn layernorm(&self, x: &Self::T) -> Result<Self::T>;
    /// `x * w / div` with the result in `out`.
    fn linear(&self, x: &Self::T, w: &FixedTensor, out: QFormat, div: f64) -> Result<Self::T>;
    fn matmul(&self, a: &Self::T, b: &Self::T, out: QFormat) -> Result<Self::T>;
    fn softmax_rows(&self, x: &Self::T) -> Result<Self::T>;
    fn gelu(&self, x: &Self::T) -> Result<Self::T>;
    fn add(&self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    /// Samples `feature` (`H x W x C`) and averages over heads: `N x C`.
    fn gather(&self, feature: &Self::T, spec: &GatherSpec) -> Result<Self::T>;
    fn values(&self, x: &Self::T) -> Vec<f64>;
}

struct FixedEngine<'a> {
    cfg: &'a EncoderConfig,
    unit: MacUnitConfig,
}

impl FixedEngine<'_> {
    fn product(&self, a: &FixedTensor, b: &FixedTensor, out: QFormat, div: f64) -> Result<FixedTensor> {
        // Folding a divisor into the output scale leaves the raw result at `out`'s LSB.
        let params = QuantParams::new(out.lsb() * div, 0)?;
        Ok(matmul_fixed(a, b, &self.unit, out, params)?.with_params(QuantParams::for_format(out)))
    }
}

impl Engine for FixedEngine<'_> {
    type T = FixedTensor;

    fn layernorm(&self, x: &FixedTensor) -> Result<FixedTensor> {
        let mut ln = LayerNormConfig::scaled(x.format(), self.cfg.encoder.channels);
        ln.out_fmt = self.cfg.formats.ln_out;
        layernorm_fixed_rows(x, &ln)
    }

    fn linear(&self, x: &FixedTensor, w: &FixedTensor, out: QFormat, div: f64) -> Result<FixedTensor> {
        self.product(x, w, out, div)
    }

    fn matmul(&self, a: &FixedTensor, b: &FixedTensor, out: QFormat) -> Result<FixedTensor> {
        self.product(a, b, out, 1.0)
    }

    fn softmax_rows(&self, x: &FixedTensor) -> Result<FixedTensor> {
        let sm = SoftmaxConfig::new(x.format(), self.cfg.formats.probs).with_variant(self.cfg.encoder.softmax);
        softmax_fixed_rows(x, &sm)
    }

    fn gelu(&self, x: &FixedTensor) -> Result<FixedTensor> {
        let cfg = ActivationConfig::new(ActivationKind::Gelu, x.format(), self.cfg.formats.ffn_hidden);
        activation_fixed(x, &cfg)
    }

    fn add(&self, a: &FixedTensor, b: &FixedTensor) -> Result<FixedTensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                expected: a.shape().to_vec(),
                got: b.shape().to_vec(),
            });
        }
        let act = self.cfg.formats.act;
        let (fa, fb) = (a.format().frac_bits() as i32, b.format().frac_bits() as i32);
        let f = fa.max(fb);
        let raw = a
            .raw()
            .iter()
            .zip(b.raw())
            .map(|(&x, &y)| {
                let sum = shift_round(x as i128, f - fa) + shift_round(y as i128, f - fb);
                act.saturate_wide(shift_round(sum, act.frac_bits() as i32 - f))
            })
            .collect();
        FixedTensor::with_format(a.shape().to_vec(), act, raw)
    }

    fn gather(&self, feature: &FixedTensor, spec: &GatherSpec) -> Result<FixedTensor> {
        let g = match self.cfg.encoder.gather {
            GatherMode::Fixed => deformable_gather_fixed(feature, spec)?,
            GatherMode::Real => {
                let r = deformable_gather(&feature.dequantize(), spec)?;
                FixedTensor::quantize(&r, feature.format(), feature.params()).0
            }
        };
        let (n, h, c) = (spec.queries(), spec.heads, feature.shape()[2]);
        let raw = g.raw();
        let out = (0..n * c)
            .map(|i| {
                let (q, ch) = (i / c, i % c);
                let sum: i128 = (0..h).map(|hd| raw[(q * h + hd) * c + ch] as i128).sum();
                div_rne(sum, h as i128) as i64
            })
            .collect();
        counter::add((n * c) as u64);
        FixedTensor::new(vec![n, c], feature.format(), feature.params(), out)
    }

    fn values(&self, x: &FixedTensor) -> Vec<f64> {
        x.dequantize().into_values()
    }
}

struct RealEngine<'a> {
    cfg: &'a EncoderConfig,
}

fn map_rows(x: &RealTensor, f: impl Fn(&RealTensor) -> Result<RealTensor>) -> Result<RealTensor> {
    let n = *x.shape().last().ok_or(Error::EmptyInput)?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.values().chunks(n) {
        out.extend(f(&RealTensor::from_row(row.to_vec())?)?.into_values());
    }
    RealTensor::new(x.shape().to_vec(), out)
}

impl Engine for RealEngine<'_> {
    type T = RealTensor;

    fn layernorm(&self, x: &RealTensor) -> Result<RealTensor> {
        let c = self.cfg.encoder.channels;
        let (gamma, beta) = (vec![1.0; c], vec![0.0; c]);
        let eps = LayerNormConfig::new(self.cfg.formats.act, c).epsilon;
        map_rows(x, |row| layernorm_ref(row, &gamma, &beta, eps))
    }

    fn linear(&self, x: &RealTensor, w: &FixedTensor, out: QFormat, div: f64) -> Result<RealTensor> {
        let y = self.matmul(x, &w.dequantize(), out)?;
        RealTensor::new(y.shape().to_vec(), y.values().iter().map(|v| v / div).collect())
    }

    fn matmul(&self, a: &RealTensor, b: &RealTensor, _out: QFormat) -> Result<RealTensor> {
        let y = matmul_ref(a, b)?;
        counter::add((a.len() * b.shape()[1]) as u64);
        Ok(y)
    }

    fn softmax_rows(&self, x: &RealTensor) -> Result<RealTensor> {
        map_rows(x, softmax_ref)
    }

    fn gelu(&self, x: &RealTensor) -> Result<RealTensor> {
        let f = self.cfg.formats.ffn_hidden;
        let cfg = ActivationConfig::new(ActivationKind::Gelu, f, f);
        RealTensor::new(x.shape().to_vec(), x.values().iter().map(|&v| activation_ref(v, &cfg)).collect())
    }

    fn add(&self, a: &RealTensor, b: &RealTensor) -> Result<RealTensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                expected: a.shape().to_vec(),
                got: b.shape().to_vec(),
            });
        }
        RealTensor::new(a.shape().to_vec(), a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect())
    }

    fn gather(&self, feature: &RealTensor, spec: &GatherSpec) -> Result<RealTensor> {
        let g = deformable_gather(feature, spec)?;
        let (n, h, c) = (spec.queries(), spec.heads, feature.shape()[2]);
        let v = g.values();
        let out = (0..n * c)
            .map(|i| {
                let (q, ch) = (i / c, i % c);
                (0..h).map(|hd| v[(q * h + hd) * c + ch]).sum::<f64>() / h as f64
            })
            .collect();
        counter::add((n * c) as u64);
        RealTensor::new(vec![n, c], out)
    }

    fn values(&self, x: &RealTensor) -> Vec<f64> {
        x.values().to_vec()
    }
}

struct Recorder<'t> {
    trace: &'t mut OpTrace,
    layer: usize,
}

impl Recorder<'_> {
    fn step<T>(
        &mut self,
        step_id: usize,
        kind: StepKind,
        label: &str,
        dims: &[usize],
        f: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let (out, macs) = counter::measure(f);
        let elapsed_us = start.elapsed().as_secs_f64() * 1e6;
        let out = out.map_err(|e| e.at_step(step_id))?;
        self.trace.steps.push(StepRecord {
            layer: self.layer,
            step_id,
            kind,
            label: label.to_string(),
            dims: dims.to_vec(),
            mac_count: macs,
            elapsed_us,
        });
        Ok(out)
    }
}

/// Splits a rank-3 tensor along axis 0 into `parts` matrices.
fn unstack<T: Reorg>(x: &T, parts: usize) -> Result<Vec<T>> {
    let s = x.shape().to_vec();
    x.split(0, &vec![1; parts])?
        .into_iter()
        .map(|p| p.reshape(&s[1..]))
        .collect()
}

/// Column block `i` of `N x C` viewed as `N x h x d`, as an `N x d` matrix.
fn head<T: Reorg>(x: &T, heads: usize, d: usize, i: usize) -> Result<T> {
    let n = x.shape()[0];
    let per_head = x.reshape(&[n, heads, d])?.permute(&[1, 0, 2])?;
    unstack(&per_head, heads)?.into_iter().nth(i).ok_or(Error::EmptyInput)
}

fn layer<E: Engine>(eng: &E, cfg: &EncoderConfig, w: &EncoderWeights, x: E::T, rec: &mut Recorder) -> Result<E::T> {
    let e = &cfg.encoder;
    let f = &cfg.formats;
    let (n, c, h, d) = (e.n_tokens, e.channels, e.heads, cfg.head_dim());
    let (gh, gw) = (e.bev_height, e.bev_width);

    let ln1 = rec.step(1, StepKind::Layernorm, "layer norm 1", &[n, c], || eng.layernorm(&x))?;
    let scale = (d as f64).sqrt();
    let q = rec.step(2, StepKind::Matmul, "Q projection", &[n, c, c], || eng.linear(&ln1, &w.wq, f.qkv, scale))?;
    let k = rec.step(3, StepKind::Matmul, "K projection", &[n, c, c], || eng.linear(&ln1, &w.wk, f.qkv, 1.0))?;
    let v = rec.step(4, StepKind::Matmul, "V projection", &[n, c, c], || eng.linear(&ln1, &w.wv, f.qkv, 1.0))?;
    let scores = rec.step(5, StepKind::Matmul, "per-head Q K^T", &[h, n, n, d], || {
        let mut s = Vec::with_capacity(h);
        for i in 0..h {
            let kt = head(&k, h, d, i)?.transpose()?;
            s.push(eng.matmul(&head(&q, h, d, i)?, &kt, f.scores)?.reshape(&[1, n, n])?);
        }
        E::T::concatenate(&s, 0)
    })?;
    let probs = rec.step(6, StepKind::Softmax, "softmax", &[h, n, n], || eng.softmax_rows(&scores))?;
    let v3 = rec.step(7, StepKind::Reorg, "reshape V to heads", &[n, h, d], || v.reshape(&[n, h, d]))?;
    let vp = rec.step(8, StepKind::Reorg, "permute V head-major", &[h, n, d], || v3.permute(&[1, 0, 2]))?;
    let v_heads = rec.step(9, StepKind::Reorg, "split V by head", &[h, n, d], || unstack(&vp, h))?;
    let p_heads = rec.step(10, StepKind::Reorg, "split P by head", &[h, n, n], || unstack(&probs, h))?;
    let o_heads = rec.step(11, StepKind::Matmul, "per-head P V", &[h, n, n, d], || {
        p_heads
            .iter()
            .zip(&v_heads)
            .map(|(p, vh)| eng.matmul(p, vh, f.qkv)?.reshape(&[1, n, d]))
            .collect::<Result<Vec<_>>>()
    })?;
    let o = rec.step(12, StepKind::Reorg, "concatenate heads", &[h, n, d], || E::T::concatenate(&o_heads, 0))?;
    let o = rec.step(13, StepKind::Reorg, "permute token-major", &[n, h, d], || o.permute(&[1, 0, 2]))?;
    let o = rec.step(14, StepKind::Reorg, "reshape to tokens", &[n, c], || o.reshape(&[n, c]))?;
    let attn = rec.step(15, StepKind::Matmul, "attention output projection", &[n, c, c], || {
        eng.linear(&o, &w.wo, f.qkv, 1.0)
    })?;
    let x1 = rec.step(16, StepKind::Residual, "residual add", &[n, c], || eng.add(&x, &attn))?;
    let ln2 = rec.step(17, StepKind::Layernorm, "layer norm 2", &[n, c], || eng.layernorm(&x1))?;
    let off = rec.step(18, StepKind::Matmul, "sampling offset projection", &[n, c, 2 * h], || {
        eng.linear(&ln2, &w.w_off, f.offsets, 1.0)
    })?;
    let g = rec.step(19, StepKind::Gather, "deformable gather", &[n, h, c], || {
        let grid = ln2.reshape(&[gh, gw, c])?;
        let o = eng.values(&off);
        let spec = GatherSpec {
            heads: h,
            points: (0..n).map(|t| [(t % gw) as f64, (t / gw) as f64]).collect(),
            offsets: o.chunks(2).map(|p| [p[0], p[1]]).collect(),
        };
        eng.gather(&grid, &spec)
    })?;
    let x2 = rec.step(20, StepKind::Residual, "residual add", &[n, c], || eng.add(&x1, &g))?;
    let hid = rec.step(21, StepKind::Matmul, "FFN expand", &[n, c, 4 * c], || {
        eng.linear(&x2, &w.w1, f.ffn_hidden, 1.0)
    })?;
    let act = rec.step(22, StepKind::Activation, "GELU", &[n, 4 * c], || eng.gelu(&hid))?;
    let ffn = rec.step(23, StepKind::Matmul, "FFN output linear", &[n, 4 * c, c], || {
        eng.linear(&act, &w.w2, f.act, 1.0)
    })?;
    let x3 = rec.step(24, StepKind::Residual, "residual add", &[n, c], || eng.add(&x2, &ffn))?;
    let y = rec.step(25, StepKind::Layernorm, "layer norm 3", &[n, c], || eng.layernorm(&x3))?;
    rec.step(26, StepKind::Reorg, "reshape to BEV grid", &[gh, gw, c], || y.reshape(&[gh, gw, c]))
}

fn run<E: Engine>(eng: &E, cfg: &EncoderConfig, w: &EncoderWeights, x: E::T) -> Result<(E::T, OpTrace)> {
    let e = &cfg.encoder;
    if x.shape() != [e.n_tokens, e.channels] {
        return Err(Error::ShapeMismatch {
            expected: vec![e.n_tokens, e.channels],
            got: x.shape().to_vec(),
        });
    }
    let mut trace = OpTrace::default();
    let mut cur = x;
    for l in 0..e.n_encode {
        let mut rec = Recorder {
            trace: &mut trace,
            layer: l,
        };
        cur = layer(eng, cfg, w, cur.reshape(&[e.n_tokens, e.channels])?, &mut rec)?;
    }
    Ok((cur, trace))
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    weights: EncoderWeights,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = EncoderWeights::from_config(&cfg)?;
        Ok(Self { cfg, weights })
    }

    pub fn with_weights(cfg: EncoderConfig, weights: EncoderWeights) -> Result<Self> {
        cfg.validate()?;
        for (t, (fan_in, fan_out)) in weights.all().iter().zip(EncoderWeights::shapes(&cfg)) {
            if t.shape() != [fan_in, fan_out] {
                return Err(Error::ShapeMismatch {
                    expected: vec![fan_in, fan_out],
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(Self { cfg, weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    /// Seeded `N x C` input, uniform in `+-input_amplitude`.
    pub fn input(&self) -> RealTensor {
        let e = &self.cfg.encoder;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.weights.seed);
        rng.set_stream(INPUT_STREAM);
        let a = e.input_amplitude;
        let v = (0..e.n_tokens * e.channels).map(|_| rng.random_range(-a..a)).collect();
        RealTensor::new(vec![e.n_tokens, e.channels], v).expect("finite")
    }

    /// The input quantized to the activation format.
    pub fn input_fixed(&self) -> FixedTensor {
        let act = self.cfg.formats.act;
        FixedTensor::quantize(&self.input(), act, QuantParams::for_format(act)).0
    }

    /// Runs `n_encode` layers; the output is the last layer's `H x W x C` grid.
    pub fn forward_fixed(&self, x: &FixedTensor) -> Result<(FixedTensor, OpTrace)> {
        let eng = FixedEngine {
            cfg: &self.cfg,
            unit: MacUnitConfig::new(self.cfg.formats.mac_mode),
        };
        run(&eng, &self.cfg, &self.weights, x.clone())
    }

    /// The same schedule in double precision on the dequantized weights.
    pub fn forward_real(&self, x: &RealTensor) -> Result<(RealTensor, OpTrace)> {
        run(&RealEngine { cfg: &self.cfg }, &self.cfg, &self.weights, x.clone())
    }
}

/// Builds the encoder from `cfg` and runs the fixed path on `x`.
pub fn encoder_forward(x: &FixedTensor, cfg: &EncoderConfig) -> Result<(FixedTensor, OpTrace)> {
    Encoder::new(cfg.clone())?.forward_fixed(x)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProfileSummary {
    pub n_tokens: usize,
    pub channels: usize,
    pub heads: usize,
    pub n_encode: usize,
    pub n_decode: usize,
    pub repeats: usize,
    pub steps: usize,
    pub total_macs: u64,
    pub macs_by_kind: BTreeMap<String, u64>,
    pub matmul_share: f64,
    /// Sum of per-step median times; absent when timings are suppressed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_median_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Trace with per-step median times.
    pub trace: OpTrace,
    pub summary: ProfileSummary,
}

impl Profile {
    pub fn summary_json(&self, timings: bool) -> String {
        let mut s = self.summary.clone();
        if !timings {
            s.total_median_us = None;
        }
        serde_json::to_string_pretty(&s).expect("summary serializes")
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Runs the fixed encoder `repeats` times on its seeded input.
pub fn profile(cfg: &EncoderConfig, repeats: usize) -> Result<Profile> {
    if repeats == 0 {
        return Err(Error::InvalidParams("repeats must be at least 1".into()));
    }
    let enc = Encoder::new(cfg.clone())?;
    let x = enc.input_fixed();
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        runs.push(enc.forward_fixed(&x)?.1);
    }
    let mut trace = runs[0].clone();
    for (i, s) in trace.steps.iter_mut().enumerate() {
        let mut times: Vec<f64> = runs.iter().map(|r| r.steps[i].elapsed_us).collect();
        s.elapsed_us = median(&mut times);
        debug_assert!(runs.iter().all(|r| r.steps[i].mac_count == s.mac_count));
    }
    let e = &cfg.encoder;
    let summary = ProfileSummary {
        n_tokens: e.n_tokens,
        channels: e.channels,
        heads: e.heads,
        n_encode: e.n_encode,
        n_decode: e.n_decode,
        repeats,
        steps: trace.steps.len(),
        total_macs: trace.total_macs(),
        macs_by_kind: trace.macs_by_kind().into_iter().map(|(k, v)| (k.name().to_string(), v)).collect(),
        matmul_share: trace.matmul_share(),
        total_median_us: Some(trace.steps.iter().map(|s| s.elapsed_us).sum()),
    };
    Ok(Profile { trace, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_trace_shape() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let (y, trace) = enc.forward_fixed(&enc.input_fixed()).unwrap();
        assert_eq!(y.shape(), &[8, 8, 32]);
        assert_eq!(trace.steps.len(), SCHEDULE_LEN);
        let ids: Vec<usize> = trace.steps.iter().map(|s| s.step_id).collect();
        assert_eq!(ids, (1..=26).collect::<Vec<_>>());
        let qkv: u64 = trace.steps[1..4].iter().map(|s| s.mac_count).sum();
        assert_eq!(qkv, 3 * 64 * 32 * 32);
    }

    #[test]
    fn repeats_layers() {
        let mut cfg = EncoderConfig::default();
        cfg.encoder.n_encode = 2;
        let enc = Encoder::new(cfg).unwrap();
        let (_, trace) = enc.forward_fixed(&enc.input_fixed()).unwrap();
        assert_eq!(trace.steps.len(), 2 * SCHEDULE_LEN);
        assert_eq!(trace.steps[26].layer, 1);
        assert_eq!(trace.steps[26].step_id, 1);
    }

    #[test]
    fn rejects_wrong_input() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let x = FixedTensor::zeros(vec![64, 16], enc.config().formats.act);
        assert!(matches!(enc.forward_fixed(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn weights_round_trip_through_files() {
        let cfg = EncoderConfig::default();
        let w = EncoderWeights::generate(&cfg);
        let dir = tempfile::tempdir().unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(EncoderWeights::load(dir.path(), &cfg).unwrap(), w);
        std::fs::remove_file(dir.path().join("w2.qten")).unwrap();
        assert!(EncoderWeights::load(dir.path(), &cfg).is_err());
    }
}
