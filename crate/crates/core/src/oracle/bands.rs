//! Acceptance bands for sweep results, read from TOML:
//!
//! ```toml
//! [[band]]
//! operator = "softmax"
//! in_fmt = "S6.9"
//! out_fmt = "U1.15"
//! mean_max = 1.0
//! max_max = 3.0
//! ```
//!
//! Bounds are percentages and each is optional.

use std::path::Path;

use super::sweep::SweepResult;
use crate::error::{Error, Result};
use crate::qcore::QFormat;

#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub operator: String,
    pub in_fmt: QFormat,
    pub out_fmt: QFormat,
    pub mean_min: Option<f64>,
    pub mean_max: Option<f64>,
    pub max_min: Option<f64>,
    pub max_max: Option<f64>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BandFile {
    #[serde(default)]
    band: Vec<Band>,
}

pub fn parse_bands(text: &str) -> Result<Vec<Band>> {
    let file: BandFile = toml::from_str(text).map_err(|e| Error::config("band", e.message().to_string()))?;
    Ok(file.band)
}

pub fn load_bands(path: impl AsRef<Path>) -> Result<Vec<Band>> {
    parse_bands(&std::fs::read_to_string(path)?)
}

/// One message per violated bound. Bands naming no result are ignored.
pub fn check_bands(results: &[SweepResult], bands: &[Band]) -> Vec<String> {
    let mut violations = Vec::new();
    for r in results {
        let matching = bands.iter().filter(|b| {
            b.operator == r.operator.name() && b.in_fmt == r.pair.in_fmt && b.out_fmt == r.pair.out_fmt
        });
        for b in matching {
            let mean = r.report.mean_rel_err_pct;
            let max = r.report.max_rel_err_pct;
            let checks = [
                ("mean", mean, b.mean_min, true),
                ("mean", mean, b.mean_max, false),
                ("max", max, b.max_min, true),
                ("max", max, b.max_max, false),
            ];
            for (what, value, bound, lower) in checks {
                let Some(bound) = bound else { continue };
                if (lower && value < bound) || (!lower && value > bound) {
                    let rel = if lower { ">=" } else { "<=" };
                    violations.push(format!(
                        "{} {}: {what} error {value:.4}% violates {rel} {bound}%",
                        r.operator, r.pair
                    ));
                }
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SoftmaxVariant;
    use crate::oracle::{ErrorReport, FormatPair, Operator};

    fn result(mean: f64, max: f64) -> SweepResult {
        SweepResult {
            operator: Operator::Softmax(SoftmaxVariant::ThreePass),
            pair: "S6.9/U1.15".parse::<FormatPair>().unwrap(),
            report: ErrorReport {
                mean_rel_err_pct: mean,
                max_rel_err_pct: max,
                max_err_index: 0,
                n_elements: 1,
                epsilon_guard: 1e-6,
                seed: 7,
            },
        }
    }

    const BANDS: &str = r#"
        [[band]]
        operator = "softmax"
        in_fmt = "S6.9"
        out_fmt = "U1.15"
        mean_max = 1.0
        max_max = 3.0

        [[band]]
        operator = "gelu"
        in_fmt = "S6.9"
        out_fmt = "S5.10"
        mean_min = 9.0
    "#;

    #[test]
    fn checks_matching_bands() {
        let bands = parse_bands(BANDS).unwrap();
        assert_eq!(bands.len(), 2);
        assert!(check_bands(&[result(0.5, 2.0)], &bands).is_empty());
        let v = check_bands(&[result(1.5, 4.0)], &bands);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_bands("[[band]]\noperator = \"softmax\"").is_err());
        assert!(parse_bands("[[band]]\noperator = \"x\"\nin_fmt = \"Q1\"\nout_fmt = \"S7\"").is_err());
        assert!(parse_bands("[[band]]\noperator = \"x\"\nin_fmt = \"S7\"\nout_fmt = \"S7\"\nmean = 1").is_err());
    }
}
