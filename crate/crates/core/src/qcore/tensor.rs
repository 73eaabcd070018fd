use crate::error::{Error, Result};

use super::format::QFormat;
use super::quant::{dequantize, quantize_checked, QuantParams};

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major raw integers tagged with a Q-format and quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTensor {
    shape: Vec<usize>,
    format: QFormat,
    params: QuantParams,
    raw: Vec<i64>,
}

impl FixedTensor {
    pub fn new(shape: Vec<usize>, format: QFormat, params: QuantParams, raw: Vec<i64>) -> Result<Self> {
        if element_count(&shape) != raw.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: vec![raw.len()],
            });
        }
        if let Some(&bad) = raw.iter().find(|&&r| !format.contains(r)) {
            return Err(Error::OutOfRange {
                value: bad,
                format: format.to_string(),
            });
        }
        Ok(Self {
            shape,
            format,
            params,
            raw,
        })
    }

    /// Tensor with the format's natural scale (`2^-frac`, zero point 0).
    pub fn with_format(shape: Vec<usize>, format: QFormat, raw: Vec<i64>) -> Result<Self> {
        Self::new(shape, format, QuantParams::for_format(format), raw)
    }

    pub fn zeros(shape: Vec<usize>, format: QFormat) -> Self {
        let n = element_count(&shape);
        Self {
            shape,
            format,
            params: QuantParams::for_format(format),
            raw: vec![0; n],
        }
    }

    /// Quantizes every element; returns the tensor and the number of saturated elements.
    pub fn quantize(real: &RealTensor, format: QFormat, params: QuantParams) -> (Self, usize) {
        let mut saturated = 0;
        let raw = real
            .values()
            .iter()
            .map(|&x| {
                let (r, clamped) = quantize_checked(x, format, params);
                saturated += clamped as usize;
                r
            })
            .collect();
        (
            Self {
                shape: real.shape().to_vec(),
                format,
                params,
                raw,
            },
            saturated,
        )
    }

    pub fn dequantize(&self) -> RealTensor {
        RealTensor {
            shape: self.shape.clone(),
            values: self.raw.iter().map(|&r| dequantize(r, self.params)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn raw(&self) -> &[i64] {
        &self.raw
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn into_raw(self) -> Vec<i64> {
        self.raw
    }

    /// Same raw data under different quantization parameters.
    pub fn with_params(mut self, params: QuantParams) -> Self {
        self.params = params;
        self
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if element_count(&shape) != self.raw.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Row-major finite reals, the golden-reference domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if element_count(&shape) != values.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("tensor values must be finite".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn from_row(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = element_count(&shape);
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if element_count(&shape) != self.values.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }
}
