//! Golden-reference comparison and the format sweep engine.

mod bands;
mod metrics;
mod sweep;

pub use bands::{check_bands, load_bands, parse_bands, Band};
pub use metrics::{compare, relative_error, ErrorReport, DEFAULT_EPSILON};
pub use sweep::{
    parse_pairs, run_sweep, sweep_outputs, sweep_row, to_json, write_csv, Distribution, FormatPair, Operator,
    SweepRecord, SweepResult, SweepSpec, CSV_HEADER, DEFAULT_SEED,
};
