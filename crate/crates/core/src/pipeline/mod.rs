//! Encoder pipeline: data reorganization, the deformable gather, the
//! configuration file and the traced 26-step layer schedule.

mod config;
mod encoder;
mod gather;
mod reorg;
mod trace;

pub use config::{EncoderConfig, EncoderShape, GatherMode, StageFormats, WeightsConfig};
pub use encoder::{
    encoder_forward, profile, Encoder, EncoderWeights, Profile, ProfileSummary, SCHEDULE_LEN, WEIGHT_NAMES,
};
pub use gather::{deformable_gather, deformable_gather_fixed, GatherSpec, WEIGHT_FRAC};
pub use reorg::Reorg;
pub use trace::{OpTrace, StepKind, StepRecord};
