//! Encoder configuration, read from TOML with sections `[encoder]`,
//! `[formats]` and `[weights]`. Every key is optional; see `docs/config.md`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kernels::SoftmaxVariant;
use crate::matmul::MacMode;
use crate::qcore::{q, QFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatherMode {
    #[default]
    Real,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct EncoderConfig {
    pub encoder: EncoderShape,
    pub formats: StageFormats,
    pub weights: WeightsConfig,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderShape {
    pub n_tokens: usize,
    pub channels: usize,
    pub heads: usize,
    pub n_encode: usize,
    /// Accepted and reported; no separate decoder layers are executed.
    pub n_decode: usize,
    /// BEV grid the tokens tile, `bev_height * bev_width = n_tokens`.
    pub bev_height: usize,
    pub bev_width: usize,
    pub softmax: SoftmaxVariant,
    pub gather: GatherMode,
    /// Encoder inputs are uniform reals in `[-a, a)`.
    pub input_amplitude: f64,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self {
            n_tokens: 64,
            channels: 32,
            heads: 4,
            n_encode: 1,
            n_decode: 1,
            bev_height: 8,
            bev_width: 8,
            softmax: SoftmaxVariant::ThreePass,
            gather: GatherMode::Real,
            input_amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFormats {
    pub mac_mode: MacMode,
    /// Residual stream and encoder input.
    pub act: QFormat,
    pub ln_out: QFormat,
    pub weight: QFormat,
    /// Q, K, V and the per-head attention outputs.
    pub qkv: QFormat,
    pub scores: QFormat,
    pub probs: QFormat,
    /// Sampling offsets in grid cells.
    pub offsets: QFormat,
    pub ffn_hidden: QFormat,
}

impl Default for StageFormats {
    fn default() -> Self {
        Self {
            mac_mode: MacMode::Int16,
            act: q("S7.8"),
            ln_out: q("S3.12"),
            weight: q("S0.15"),
            qkv: q("S4.11"),
            scores: q("S6.9"),
            probs: q("U0.15"),
            offsets: q("S7.8"),
            ffn_hidden: q("S5.10"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub seed: u64,
    /// Generated weights are uniform in `+-amplitude / sqrt(fan_in)`.
    pub amplitude: f64,
    /// Directory of `<name>.qten` files; overrides generation when set.
    pub dir: Option<PathBuf>,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            amplitude: 1.0,
            dir: None,
        }
    }
}


impl EncoderConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: EncoderConfig = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_else(|| "config".into());
            Error::config(key, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `weights.dir` resolves against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if let (Some(dir), Some(parent)) = (&cfg.weights.dir, path.parent()) {
            if dir.is_relative() {
                cfg.weights.dir = Some(parent.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn head_dim(&self) -> usize {
        self.encoder.channels / self.encoder.heads
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        for (key, v) in [
            ("encoder.n_tokens", e.n_tokens),
            ("encoder.channels", e.channels),
            ("encoder.heads", e.heads),
            ("encoder.n_encode", e.n_encode),
            ("encoder.n_decode", e.n_decode),
            ("encoder.bev_height", e.bev_height),
            ("encoder.bev_width", e.bev_width),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !e.channels.is_multiple_of(e.heads) {
            return Err(Error::config(
                "encoder.heads",
                format!("channels ({}) must be divisible by heads ({})", e.channels, e.heads),
            ));
        }
        if e.channels < 2 {
            return Err(Error::config("encoder.channels", "layer norm needs at least 2 channels"));
        }
        if e.bev_height * e.bev_width != e.n_tokens {
            return Err(Error::config(
                "encoder.bev_width",
                format!("bev_height * bev_width = {} but n_tokens = {}", e.bev_height * e.bev_width, e.n_tokens),
            ));
        }
        if !(e.input_amplitude > 0.0 && e.input_amplitude.is_finite()) {
            return Err(Error::config("encoder.input_amplitude", "must be positive"));
        }
        let w = &self.weights;
        if !(w.amplitude >= 0.0 && w.amplitude.is_finite()) {
            return Err(Error::config("weights.amplitude", "must be finite and non-negative"));
        }
        let f = &self.formats;
        let Some(bits) = f.mac_mode.int_bits() else {
            return Err(Error::config("formats.mac_mode", "the encoder needs an integer MAC mode"));
        };
        for (key, fmt) in [
            ("formats.act", f.act),
            ("formats.ln_out", f.ln_out),
            ("formats.weight", f.weight),
            ("formats.qkv", f.qkv),
            ("formats.probs", f.probs),
            ("formats.ffn_hidden", f.ffn_hidden),
        ] {
            let fits = if fmt.is_signed() { fmt.width() <= bits } else { fmt.width() < bits };
            if !fits {
                return Err(Error::config(key, format!("{fmt} does not fit a {bits}-bit MAC operand")));
            }
        }
        if f.probs.is_signed() {
            return Err(Error::config("formats.probs", "softmax output must be unsigned"));
        }
        if e.n_tokens > (1 << 10) - 1 {
            return Err(Error::config("encoder.n_tokens", "softmax rows are limited to 1023 elements"));
        }
        Ok(())
    }
}

/// `section.key` of the line containing byte `pos`.
fn key_at(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let start = text[..pos].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    let section = text[..start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']'));
    if key.is_empty() {
        "config".into()
    } else if key.starts_with('[') {
        key.trim_matches(|c| c == '[' || c == ']').into()
    } else if let Some(sec) = section {
        format!("{sec}.{key}")
    } else {
        key.into()
    }
}
