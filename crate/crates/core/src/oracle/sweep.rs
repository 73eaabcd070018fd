//! Format sweeps: run a kernel over seeded random rows for several
//! input/output format pairs and measure it against the real reference.
//!
//! Row `r` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `r`, so rows
//! are independent of scheduling and real-valued distributions feed the same
//! inputs to every format pair. Per-row statistics are merged in row order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;

use super::metrics::{relative_error, ErrorReport, ErrorStats, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::kernels::{
    activation_raw, activation_ref, layernorm_ref, ActivationConfig, ActivationKind, LayerNormConfig,
    SoftmaxConfig, SoftmaxVariant,
};
use crate::qcore::{q, quantize, QFormat, QuantParams, RealTensor};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Softmax(SoftmaxVariant),
    LayerNorm,
    Activation(ActivationKind),
}

impl Operator {
    pub fn all() -> Vec<Operator> {
        let mut ops = vec![
            Operator::Softmax(SoftmaxVariant::ThreePass),
            Operator::Softmax(SoftmaxVariant::TwoPassOnline),
            Operator::LayerNorm,
        ];
        ops.extend(ActivationKind::ALL.into_iter().map(Operator::Activation));
        ops
    }

    pub fn name(&self) -> &'static str {
        match self {
            Operator::Softmax(SoftmaxVariant::ThreePass) => "softmax",
            Operator::Softmax(SoftmaxVariant::TwoPassOnline) => "softmax_online",
            Operator::LayerNorm => "layernorm",
            Operator::Activation(kind) => kind.name(),
        }
    }

    /// The format pairs of the standard error table for this operator.
    pub fn default_pairs(&self) -> Vec<FormatPair> {
        let pairs: &[(&str, &str)] = match self {
            Operator::Softmax(_) => &[("S6.9", "U1.15"), ("S5.2", "U1.15"), ("S6.9", "U1.7")],
            Operator::LayerNorm => &[("S7", "S8.7"), ("U8", "S8.7")],
            Operator::Activation(ActivationKind::Gelu) => &[("S6.9", "S5.10"), ("S3.4", "S5.10"), ("S6.9", "S3.4")],
            // Output range equal to the input's, so the wide pair never saturates.
            Operator::Activation(_) => &[("S6.9", "S6.9"), ("S3.4", "S6.9"), ("S6.9", "S3.4")],
        };
        pairs.iter().map(|&(a, b)| FormatPair::new(q(a), q(b))).collect()
    }

    /// Standard row length: 64 for softmax and activations, 256 for layer norm.
    pub fn default_len(&self) -> usize {
        match self {
            Operator::LayerNorm => 256,
            _ => 64,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Operator::all()
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::UnknownOperator(s.to_string()))
    }
}

/// How each row's inputs are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Raw integers uniform over the input format's full range.
    UniformRaw,
    /// Reals uniform in `[lo, hi)`, quantized to the input format; the golden
    /// result sees the unquantized value.
    UniformReal { lo: f64, hi: f64 },
    /// Reals from a normal distribution, handled like `UniformReal`.
    Normal { mean: f64, std_dev: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::UniformRaw => true,
            Distribution::UniformReal { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Distribution::Normal { mean, std_dev } => mean.is_finite() && std_dev.is_finite() && std_dev > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("bad distribution {self}")))
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::UniformRaw => f.write_str("uniform_raw"),
            Distribution::UniformReal { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            Distribution::Normal { mean, std_dev } => write!(f, "normal:{mean}:{std_dev}"),
        }
    }
}

/// `uniform_raw`, `uniform:LO:HI` or `normal:MEAN:STD`.
impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("bad distribution {s:?}; expected uniform_raw, uniform:LO:HI or normal:MEAN:STD"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let d = match parts.as_slice() {
            ["uniform_raw"] => Distribution::UniformRaw,
            ["uniform", lo, hi] => Distribution::UniformReal { lo: num(lo)?, hi: num(hi)? },
            ["normal", m, sd] => Distribution::Normal {
                mean: num(m)?,
                std_dev: num(sd)?,
            },
            _ => return Err(bad()),
        };
        d.validate().map_err(|_| bad())?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FormatPair {
    pub in_fmt: QFormat,
    pub out_fmt: QFormat,
}

impl FormatPair {
    pub fn new(in_fmt: QFormat, out_fmt: QFormat) -> Self {
        Self { in_fmt, out_fmt }
    }
}

impl fmt::Display for FormatPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.in_fmt, self.out_fmt)
    }
}

/// `IN/OUT`, e.g. `S6.9/U1.15`.
impl FromStr for FormatPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| Error::InvalidFormat(format!("{s} (expected IN/OUT)")))?;
        Ok(Self::new(a.parse()?, b.parse()?))
    }
}

/// Parses a comma-separated list of format pairs.
pub fn parse_pairs(s: &str) -> Result<Vec<FormatPair>> {
    s.split(',').map(|p| p.trim().parse()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub operator: Operator,
    pub pairs: Vec<FormatPair>,
    pub distribution: Distribution,
    pub rows: usize,
    pub row_length: usize,
    pub seed: u64,
    pub epsilon_guard: f64,
}

impl SweepSpec {
    pub fn new(operator: Operator, pairs: Vec<FormatPair>, rows: usize, row_length: usize) -> Self {
        Self {
            operator,
            pairs,
            distribution: Distribution::UniformRaw,
            rows,
            row_length,
            seed: DEFAULT_SEED,
            epsilon_guard: DEFAULT_EPSILON,
        }
    }

    pub fn with_distribution(mut self, distribution: Distribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::InvalidParams("rows must be at least 1".into()));
        }
        if self.row_length == 0 {
            return Err(Error::InvalidParams("row length must be at least 1".into()));
        }
        if self.pairs.is_empty() {
            return Err(Error::InvalidParams("no format pairs".into()));
        }
        if !(self.epsilon_guard > 0.0) {
            return Err(Error::InvalidParams("epsilon guard must be positive".into()));
        }
        self.distribution.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub operator: Operator,
    pub pair: FormatPair,
    pub report: ErrorReport,
}

/// One CSV/JSON output record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepRecord {
    pub operator: String,
    pub in_fmt: String,
    pub out_fmt: String,
    pub mean_err_pct: f64,
    pub max_err_pct: f64,
    pub max_err_index: usize,
    pub seed: u64,
    pub n_samples: usize,
}

impl SweepResult {
    pub fn record(&self) -> SweepRecord {
        SweepRecord {
            operator: self.operator.name().to_string(),
            in_fmt: self.pair.in_fmt.to_string(),
            out_fmt: self.pair.out_fmt.to_string(),
            mean_err_pct: self.report.mean_rel_err_pct,
            max_err_pct: self.report.max_rel_err_pct,
            max_err_index: self.report.max_err_index,
            seed: self.report.seed,
            n_samples: self.report.n_elements,
        }
    }
}

pub const CSV_HEADER: &str = "operator,in_fmt,out_fmt,mean_err_pct,max_err_pct,max_err_index,seed,n_samples";

pub fn write_csv<W: Write + ?Sized>(w: &mut W, results: &[SweepResult]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in results.iter().map(SweepResult::record) {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{},{},{}",
            r.operator, r.in_fmt, r.out_fmt, r.mean_err_pct, r.max_err_pct, r.max_err_index, r.seed, r.n_samples
        )?;
    }
    Ok(())
}

pub fn to_json(results: &[SweepResult]) -> String {
    let records: Vec<SweepRecord> = results.iter().map(SweepResult::record).collect();
    serde_json::to_string_pretty(&records).expect("records serialize")
}

/// Runs every format pair of `spec`, one report per pair.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepResult>> {
    spec.validate()?;
    spec.pairs
        .iter()
        .map(|&pair| {
            let report = sweep_pair(spec, pair)?;
            Ok(SweepResult {
                operator: spec.operator,
                pair,
                report,
            })
        })
        .collect()
}

/// The input row `r` in raw and real form.
pub fn sweep_row(spec: &SweepSpec, fmt: QFormat, r: usize) -> (Vec<i64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(r as u64);
    let params = QuantParams::for_format(fmt);
    let n = spec.row_length;
    match spec.distribution {
        Distribution::UniformRaw => {
            let raw: Vec<i64> = (0..n).map(|_| rng.random_range(fmt.min_raw()..=fmt.max_raw())).collect();
            let real = raw.iter().map(|&v| fmt.to_real(v)).collect();
            (raw, real)
        }
        Distribution::UniformReal { lo, hi } => {
            let real: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
            (real.iter().map(|&x| quantize(x, fmt, params)).collect(), real)
        }
        Distribution::Normal { mean, std_dev } => {
            let normal = Normal::new(mean, std_dev).expect("validated");
            let real: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            (real.iter().map(|&x| quantize(x, fmt, params)).collect(), real)
        }
    }
}

enum Prepared {
    Softmax(SoftmaxConfig),
    LayerNorm(LayerNormConfig),
    Activation(ActivationConfig),
}

fn prepare(spec: &SweepSpec, pair: FormatPair) -> Result<Prepared> {
    Ok(match spec.operator {
        Operator::Softmax(variant) => {
            let cfg = SoftmaxConfig::new(pair.in_fmt, pair.out_fmt).with_variant(variant);
            cfg.validate()?;
            Prepared::Softmax(cfg)
        }
        Operator::LayerNorm => {
            let mut cfg = LayerNormConfig::new(pair.in_fmt, spec.row_length);
            cfg.out_fmt = pair.out_fmt;
            cfg.validate()?;
            Prepared::LayerNorm(cfg)
        }
        Operator::Activation(kind) => {
            let cfg = ActivationConfig::new(kind, pair.in_fmt, pair.out_fmt);
            cfg.validate()?;
            Prepared::Activation(cfg)
        }
    })
}

/// Fixed output (as reals) and golden output of one row.
fn evaluate_row(prep: &Prepared, raw: &[i64], real: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let golden_in = RealTensor::from_row(real)?;
    let (out_fmt, fixed, golden) = match prep {
        Prepared::Softmax(cfg) => (
            cfg.out_fmt,
            crate::kernels::softmax_row(raw, cfg)?,
            crate::kernels::softmax_ref(&golden_in)?.into_values(),
        ),
        Prepared::LayerNorm(cfg) => (
            cfg.out_fmt,
            crate::kernels::layernorm_row(raw, cfg),
            layernorm_ref(&golden_in, &cfg.gamma, &cfg.beta, cfg.epsilon)?.into_values(),
        ),
        Prepared::Activation(cfg) => (
            cfg.out_fmt,
            raw.iter().map(|&x| activation_raw(x, cfg)).collect(),
            golden_in.values().iter().map(|&x| activation_ref(x, cfg)).collect(),
        ),
    };
    Ok((fixed.into_iter().map(|v| out_fmt.to_real(v)).collect(), golden))
}

fn sweep_pair(spec: &SweepSpec, pair: FormatPair) -> Result<ErrorReport> {
    let prep = prepare(spec, pair)?;
    let per_row: Vec<ErrorStats> = (0..spec.rows)
        .into_par_iter()
        .map(|r| {
            let (raw, real) = sweep_row(spec, pair.in_fmt, r);
            let (fixed, golden) = evaluate_row(&prep, &raw, real)?;
            let mut stats = ErrorStats::default();
            let base = r * spec.row_length;
            for (j, (f, g)) in fixed.iter().zip(&golden).enumerate() {
                stats.push(relative_error(*f, *g, spec.epsilon_guard), base + j);
            }
            Ok(stats)
        })
        .collect::<Result<_>>()?;
    let mut total = ErrorStats::default();
    for s in &per_row {
        total.merge(s);
    }
    total.report(spec.epsilon_guard, spec.seed)
}

/// Per-row fixed and golden outputs, for analyses beyond mean/max.
pub fn sweep_outputs(spec: &SweepSpec, pair: FormatPair) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    spec.validate()?;
    let prep = prepare(spec, pair)?;
    (0..spec.rows)
        .into_par_iter()
        .map(|r| {
            let (raw, real) = sweep_row(spec, pair.in_fmt, r);
            evaluate_row(&prep, &raw, real)
        })
        .collect()
}
