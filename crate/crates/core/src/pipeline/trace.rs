use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Matmul,
    Softmax,
    Layernorm,
    Activation,
    Reorg,
    Gather,
    Residual,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Matmul => "matmul",
            StepKind::Softmax => "softmax",
            StepKind::Layernorm => "layernorm",
            StepKind::Activation => "activation",
            StepKind::Reorg => "reorg",
            StepKind::Gather => "gather",
            StepKind::Residual => "residual",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    /// Encoder layer, from 0.
    pub layer: usize,
    /// Position in the 26-step schedule, from 1.
    pub step_id: usize,
    pub kind: StepKind,
    pub label: String,
    pub dims: Vec<usize>,
    pub mac_count: u64,
    pub elapsed_us: f64,
}

impl StepRecord {
    pub fn dims_string(&self) -> String {
        self.dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OpTrace {
    pub steps: Vec<StepRecord>,
}

impl OpTrace {
    pub fn total_macs(&self) -> u64 {
        self.steps.iter().map(|s| s.mac_count).sum()
    }

    pub fn macs_by_kind(&self) -> BTreeMap<StepKind, u64> {
        let mut m = BTreeMap::new();
        for s in &self.steps {
            *m.entry(s.kind).or_insert(0) += s.mac_count;
        }
        m
    }

    /// Fraction of all counted multiplies spent in matmul steps.
    pub fn matmul_share(&self) -> f64 {
        let total = self.total_macs();
        if total == 0 {
            return 0.0;
        }
        self.macs_by_kind().get(&StepKind::Matmul).copied().unwrap_or(0) as f64 / total as f64
    }

    /// `step_id,kind,dims,mac_count,elapsed_us`; without timings the last
    /// column is dropped so output is reproducible.
    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W, timings: bool) -> std::io::Result<()> {
        if timings {
            writeln!(w, "step_id,kind,dims,mac_count,elapsed_us")?;
        } else {
            writeln!(w, "step_id,kind,dims,mac_count")?;
        }
        for s in &self.steps {
            write!(w, "{},{},{},{}", s.step_id, s.kind, s.dims_string(), s.mac_count)?;
            if timings {
                write!(w, ",{:.3}", s.elapsed_us)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step_id: usize, kind: StepKind, mac_count: u64) -> StepRecord {
        StepRecord {
            layer: 0,
            step_id,
            kind,
            label: String::new(),
            dims: vec![4, 2],
            mac_count,
            elapsed_us: 1.5,
        }
    }

    #[test]
    fn aggregates() {
        let t = OpTrace {
            steps: vec![rec(1, StepKind::Matmul, 90), rec(2, StepKind::Softmax, 10), rec(3, StepKind::Matmul, 0)],
        };
        assert_eq!(t.total_macs(), 100);
        assert_eq!(t.macs_by_kind()[&StepKind::Matmul], 90);
        assert!((t.matmul_share() - 0.9).abs() < 1e-12);
        assert_eq!(OpTrace::default().matmul_share(), 0.0);
    }

    #[test]
    fn csv_layout() {
        let t = OpTrace {
            steps: vec![rec(1, StepKind::Reorg, 0)],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf, true).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step_id,kind,dims,mac_count,elapsed_us\n1,reorg,4x2,0,1.500\n");
        let mut buf = Vec::new();
        t.write_csv(&mut buf, false).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step_id,kind,dims,mac_count\n1,reorg,4x2,0\n");
    }
}
