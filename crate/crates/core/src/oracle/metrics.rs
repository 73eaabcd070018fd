use crate::error::{Error, Result};
use crate::qcore::{FixedTensor, RealTensor};

/// Guard on the denominator so near-zero golden values do not dominate.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorReport {
    pub mean_rel_err_pct: f64,
    pub max_rel_err_pct: f64,
    pub max_err_index: usize,
    pub n_elements: usize,
    pub epsilon_guard: f64,
    pub seed: u64,
}

/// `|fixed - golden| / max(|golden|, epsilon)`.
#[inline]
pub fn relative_error(fixed: f64, golden: f64, epsilon: f64) -> f64 {
    (fixed - golden).abs() / golden.abs().max(epsilon)
}

/// Running mean/max accumulator; combining in a fixed order keeps results
/// independent of how the work was split.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ErrorStats {
    pub sum: f64,
    pub max: f64,
    pub max_index: usize,
    pub count: usize,
}

impl ErrorStats {
    pub fn push(&mut self, err: f64, index: usize) {
        self.sum += err;
        if err > self.max || self.count == 0 {
            self.max = err;
            self.max_index = index;
        }
        self.count += 1;
    }

    /// Appends `other`, whose indices are already global.
    pub fn merge(&mut self, other: &ErrorStats) {
        if other.count == 0 {
            return;
        }
        self.sum += other.sum;
        if other.max > self.max || self.count == 0 {
            self.max = other.max;
            self.max_index = other.max_index;
        }
        self.count += other.count;
    }

    pub fn report(&self, epsilon: f64, seed: u64) -> Result<ErrorReport> {
        if self.count == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(ErrorReport {
            mean_rel_err_pct: 100.0 * self.sum / self.count as f64,
            max_rel_err_pct: 100.0 * self.max,
            max_err_index: self.max_index,
            n_elements: self.count,
            epsilon_guard: epsilon,
            seed,
        })
    }
}

/// Elementwise relative error of a fixed-point result against a golden one.
pub fn compare(fixed: &FixedTensor, golden: &RealTensor, epsilon_guard: f64) -> Result<ErrorReport> {
    if fixed.shape() != golden.shape() {
        return Err(Error::ShapeMismatch {
            expected: golden.shape().to_vec(),
            got: fixed.shape().to_vec(),
        });
    }
    if !(epsilon_guard > 0.0) {
        return Err(Error::InvalidParams(format!("epsilon guard must be positive, got {epsilon_guard}")));
    }
    let mut stats = ErrorStats::default();
    for (i, (f, g)) in fixed.dequantize().values().iter().zip(golden.values()).enumerate() {
        stats.push(relative_error(*f, *g, epsilon_guard), i);
    }
    stats.report(epsilon_guard, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{q, QuantParams};

    #[test]
    fn identical_is_zero() {
        let f = FixedTensor::with_format(vec![3], q("S6.9"), vec![-512, 0, 768]).unwrap();
        let r = compare(&f, &f.dequantize(), DEFAULT_EPSILON).unwrap();
        assert_eq!((r.mean_rel_err_pct, r.max_rel_err_pct, r.n_elements), (0.0, 0.0, 3));
    }

    #[test]
    fn one_percent() {
        let golden = RealTensor::new(vec![4], vec![1.0, -2.0, 4.0, 0.5]).unwrap();
        let raw: Vec<i64> = golden.values().iter().map(|v| (v * 1.01 * 1e6f64).round() as i64).collect();
        let params = QuantParams::new(1e-6, 0).unwrap();
        let f = FixedTensor::new(vec![4], q("S11.20"), params, raw).unwrap();
        let r = compare(&f, &golden, DEFAULT_EPSILON).unwrap();
        assert!((r.mean_rel_err_pct - 1.0).abs() < 1e-9);
        assert!((r.max_rel_err_pct - 1.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_and_guard() {
        let golden = RealTensor::new(vec![3], vec![1.0, 1e-9, 2.0]).unwrap();
        let f = FixedTensor::with_format(vec![3], q("S6.9"), vec![512, 0, 1000]).unwrap();
        let r = compare(&f, &golden, DEFAULT_EPSILON).unwrap();
        assert_eq!(r.max_err_index, 2);
        assert!(r.max_rel_err_pct < 3.0);
    }

    #[test]
    fn rejects_mismatch() {
        let golden = RealTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let f = FixedTensor::with_format(vec![3], q("S6.9"), vec![0; 3]).unwrap();
        assert!(compare(&f, &golden, DEFAULT_EPSILON).is_err());
        let f = FixedTensor::with_format(vec![2], q("S6.9"), vec![0; 2]).unwrap();
        assert!(compare(&f, &golden, 0.0).is_err());
    }
}
