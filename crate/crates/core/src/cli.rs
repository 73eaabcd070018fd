//! Command-line front end. Machine-readable output goes to stdout (or
//! `--out`), everything meant for people goes to stderr.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 band violation.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::kernels::{
    activation_fixed, activation_ref, layernorm_fixed_rows, layernorm_ref, softmax_fixed_rows, softmax_ref,
    ActivationConfig, LayerNormConfig, SoftmaxConfig,
};
use crate::matmul::{matmul_fixed, matmul_ref, MacMode, MacUnitConfig};
use crate::oracle::{
    check_bands, compare, load_bands, parse_pairs, run_sweep, to_json, write_csv, Distribution, Operator, SweepSpec,
    DEFAULT_EPSILON, DEFAULT_SEED,
};
use crate::pipeline::{profile, EncoderConfig};
use crate::qcore::{qten, FixedTensor, QFormat, QuantParams, RealTensor};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "FIXFORMER_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_BANDS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fixformer", version, about = "Fixed-point Transformer kernels: quantize, run, sweep and profile")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize a real QTEN tensor into a Q-format.
    Quantize(QuantizeArgs),
    /// Run one kernel on a QTEN tensor and report its error against the reference.
    RunOp(RunOpArgs),
    /// Error sweep of one operator over format pairs.
    Sweep(SweepArgs),
    /// Profile the encoder layer: per-step trace and summary.
    Profile(ProfileArgs),
    /// Relative error of a fixed tensor against a golden tensor.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Target format, e.g. S6.9.
    #[arg(long)]
    format: QFormat,
    #[arg(long)]
    out: PathBuf,
    /// Scale; defaults to the format's LSB.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    zero_point: i64,
}

#[derive(Debug, Args)]
struct RunOpArgs {
    /// softmax, softmax_online, layernorm, an activation name, or matmul.
    #[arg(long)]
    op: String,
    #[arg(long)]
    input: PathBuf,
    /// Right-hand matrix for matmul.
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Format real inputs are quantized to; required for real inputs.
    #[arg(long)]
    in_fmt: Option<QFormat>,
    #[arg(long)]
    out_fmt: Option<QFormat>,
    #[arg(long, default_value = "int8")]
    mac_mode: MacMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    op: Operator,
    /// Comma-separated IN/OUT pairs; defaults to the operator's standard table.
    #[arg(long)]
    formats: Option<String>,
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    /// Row length; 64 for softmax and activations, 256 for layer norm.
    #[arg(long)]
    len: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// uniform_raw, uniform:LO:HI or normal:MEAN:STD.
    #[arg(long, default_value = "uniform_raw")]
    dist: Distribution,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// TOML file of acceptance bands; any violation exits with 2.
    #[arg(long)]
    assert_bands: Option<PathBuf>,
    /// Emit a JSON array instead of CSV.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Encoder config; the built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Overrides `formats.mac_mode`.
    #[arg(long)]
    mac_mode: Option<MacMode>,
    /// Overrides `weights.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Emit `{summary, steps}` as JSON instead of the CSV trace.
    #[arg(long)]
    json: bool,
    /// Drop timings so output is reproducible.
    #[arg(long)]
    no_timings: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    golden: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    json: bool,
}

impl std::str::FromStr for MacMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MacMode::from_name(s)
    }
}

/// Sizes the global rayon pool from `FIXFORMER_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got {v:?}")))?;
    // A pool that already exists (repeated in-process runs) is left alone.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = init_threads() {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_USAGE;
    }
    let result = match cli.command {
        Command::Quantize(a) => cmd_quantize(a, stderr),
        Command::RunOp(a) => cmd_run_op(a, stderr),
        Command::Sweep(a) => cmd_sweep(a, stdout, stderr),
        Command::Profile(a) => cmd_profile(a, stdout, stderr),
        Command::Compare(a) => cmd_compare(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Writes to `--out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, stdout: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => f(stdout)?,
    }
    Ok(())
}

fn load_real(path: &Path) -> Result<RealTensor> {
    match qten::load(path)? {
        qten::Tensor::Real(t) => Ok(t),
        qten::Tensor::Fixed(t) => Ok(t.dequantize()),
    }
}

/// A fixed tensor from a QTEN file, quantizing real data to `fmt`.
fn load_fixed(path: &Path, fmt: Option<QFormat>, stderr: &mut dyn Write) -> Result<FixedTensor> {
    match qten::load(path)? {
        qten::Tensor::Fixed(t) => match fmt {
            Some(f) if f != t.format() => Err(Error::InvalidParams(format!(
                "{} holds {} data but --in-fmt is {f}",
                path.display(),
                t.format()
            ))),
            _ => Ok(t),
        },
        qten::Tensor::Real(t) => {
            let f = fmt.ok_or_else(|| Error::InvalidParams(format!("{} is real; pass --in-fmt", path.display())))?;
            let (fx, sat) = FixedTensor::quantize(&t, f, QuantParams::for_format(f));
            if sat > 0 {
                writeln!(stderr, "{}: {sat} values saturated to {f}", path.display())?;
            }
            Ok(fx)
        }
    }
}

fn cmd_quantize(a: QuantizeArgs, stderr: &mut dyn Write) -> Result<i32> {
    let real = match qten::load(&a.input)? {
        qten::Tensor::Real(t) => t,
        qten::Tensor::Fixed(_) => return Err(Error::InvalidParams(format!("{} is already fixed-point", a.input.display()))),
    };
    let params = QuantParams::new(a.scale.unwrap_or(a.format.lsb()), a.zero_point)?;
    let (fx, sat) = FixedTensor::quantize(&real, a.format, params);
    qten::save(&a.out, &qten::Tensor::Fixed(fx))?;
    writeln!(stderr, "quantized {} values to {}: {sat} saturated", real.len(), a.format)?;
    Ok(EXIT_OK)
}

/// Applies `f` to each row of the last axis.
fn ref_rows(x: &RealTensor, f: impl Fn(&RealTensor) -> Result<RealTensor>) -> Result<RealTensor> {
    let n = *x.shape().last().ok_or(Error::EmptyInput)?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.values().chunks(n) {
        out.extend(f(&RealTensor::from_row(row.to_vec())?)?.into_values());
    }
    RealTensor::new(x.shape().to_vec(), out)
}

fn cmd_run_op(a: RunOpArgs, stderr: &mut dyn Write) -> Result<i32> {
    let x = load_fixed(&a.input, a.in_fmt, stderr)?;
    let xr = x.dequantize();
    let (y, golden) = if a.op == "matmul" {
        let rhs = a.rhs.as_deref().ok_or_else(|| Error::InvalidParams("matmul needs --rhs".into()))?;
        let b = load_fixed(rhs, a.in_fmt.or(Some(x.format())), stderr)?;
        let out_fmt = a.out_fmt.unwrap_or(QFormat::signed(15, 16)?);
        let y = matmul_fixed(&x, &b, &MacUnitConfig::new(a.mac_mode), out_fmt, QuantParams::for_format(out_fmt))?;
        (y, matmul_ref(&xr, &b.dequantize())?)
    } else {
        let op: Operator = a.op.parse()?;
        let out_fmt = a.out_fmt.unwrap_or(op.default_pairs()[0].out_fmt);
        match op {
            Operator::Softmax(variant) => {
                let cfg = SoftmaxConfig::new(x.format(), out_fmt).with_variant(variant);
                (softmax_fixed_rows(&x, &cfg)?, ref_rows(&xr, softmax_ref)?)
            }
            Operator::LayerNorm => {
                let c = *x.shape().last().ok_or(Error::EmptyInput)?;
                let mut cfg = LayerNormConfig::new(x.format(), c);
                cfg.out_fmt = out_fmt;
                let golden = ref_rows(&xr, |r| layernorm_ref(r, &cfg.gamma, &cfg.beta, cfg.epsilon))?;
                (layernorm_fixed_rows(&x, &cfg)?, golden)
            }
            Operator::Activation(kind) => {
                let cfg = ActivationConfig::new(kind, x.format(), out_fmt);
                let golden = RealTensor::new(xr.shape().to_vec(), xr.values().iter().map(|&v| activation_ref(v, &cfg)).collect())?;
                (activation_fixed(&x, &cfg)?, golden)
            }
        }
    };
    let report = compare(&y, &golden, DEFAULT_EPSILON)?;
    writeln!(
        stderr,
        "{} {} -> {}: mean {:.4}% max {:.4}% over {} elements",
        a.op,
        x.format(),
        y.format(),
        report.mean_rel_err_pct,
        report.max_rel_err_pct,
        report.n_elements
    )?;
    qten::save(&a.out, &qten::Tensor::Fixed(y))?;
    Ok(EXIT_OK)
}

fn cmd_sweep(a: SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let pairs = match &a.formats {
        Some(s) => parse_pairs(s)?,
        None => a.op.default_pairs(),
    };
    let mut spec = SweepSpec::new(a.op, pairs, a.rows, a.len.unwrap_or(a.op.default_len()))
        .with_distribution(a.dist)
        .with_seed(a.seed);
    spec.epsilon_guard = a.epsilon;
    // Bands are read before the sweep so a bad file fails fast.
    let bands = a.assert_bands.as_deref().map(load_bands).transpose()?;
    let results = run_sweep(&spec)?;
    emit(a.out.as_deref(), stdout, |w| {
        if a.json {
            writeln!(w, "{}", to_json(&results))
        } else {
            write_csv(w, &results)
        }
    })?;
    for r in &results {
        writeln!(
            stderr,
            "{} {}: mean {:.4}% max {:.4}%",
            r.operator, r.pair, r.report.mean_rel_err_pct, r.report.max_rel_err_pct
        )?;
    }
    if let Some(bands) = bands {
        let violations = check_bands(&results, &bands);
        for v in &violations {
            writeln!(stderr, "band violation: {v}")?;
        }
        if !violations.is_empty() {
            return Ok(EXIT_BANDS);
        }
    }
    Ok(EXIT_OK)
}

#[derive(serde::Serialize)]
struct ProfileJson {
    summary: serde_json::Value,
    steps: Vec<serde_json::Value>,
}

fn cmd_profile(a: ProfileArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(path) => EncoderConfig::load(path)?,
        None => EncoderConfig::default(),
    };
    if let Some(m) = a.mac_mode {
        cfg.formats.mac_mode = m;
    }
    if let Some(s) = a.seed {
        cfg.weights.seed = s;
    }
    cfg.validate()?;
    let p = profile(&cfg, a.repeats)?;
    let timings = !a.no_timings;
    emit(a.out.as_deref(), stdout, |w| {
        if a.json {
            let steps = p
                .trace
                .steps
                .iter()
                .map(|s| {
                    let mut v = serde_json::to_value(s).expect("step serializes");
                    if !timings {
                        v.as_object_mut().expect("object").remove("elapsed_us");
                    }
                    v
                })
                .collect();
            let doc = ProfileJson {
                summary: serde_json::from_str(&p.summary_json(timings)).expect("valid json"),
                steps,
            };
            writeln!(w, "{}", serde_json::to_string_pretty(&doc).expect("profile serializes"))
        } else {
            p.trace.write_csv(w, timings)
        }
    })?;
    let s = &p.summary;
    write!(
        stderr,
        "{} steps, {} MACs, matmul share {:.2}%",
        s.steps,
        s.total_macs,
        100.0 * s.matmul_share
    )?;
    match s.total_median_us {
        Some(us) if timings => writeln!(stderr, ", {us:.1} us median per pass")?,
        _ => writeln!(stderr)?,
    }
    Ok(EXIT_OK)
}

fn cmd_compare(a: CompareArgs, stdout: &mut dyn Write) -> Result<i32> {
    let fixed = match qten::load(&a.fixed)? {
        qten::Tensor::Fixed(t) => t,
        qten::Tensor::Real(_) => return Err(Error::InvalidParams(format!("{} is not fixed-point", a.fixed.display()))),
    };
    let golden = load_real(&a.golden)?;
    let report = compare(&fixed, &golden, a.epsilon)?;
    if a.json {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
    } else {
        writeln!(stdout, "mean_err_pct,max_err_pct,max_err_index,n_elements")?;
        writeln!(
            stdout,
            "{:.6},{:.6},{},{}",
            report.mean_rel_err_pct, report.max_rel_err_pct, report.max_err_index, report.n_elements
        )?;
    }
    Ok(EXIT_OK)
}
