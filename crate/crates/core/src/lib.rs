//! Salient-positions attention (SPA) and the non-local, squeeze-excitation
//! and global-context baselines, with analytic gradients, cost accounting,
//! data I/O and a small training rig.
//!
//! All math is double precision on channel-major `[c, h*w]` matrices.

pub mod bench;
pub mod blocks;
pub mod dataio;
pub mod error;
pub mod grad;
pub mod rng;
pub mod sps;
pub mod tensor;
pub mod trainer;

pub use blocks::{
    AffinityKind, AffinityMatrix, BlockKind, BlockParams, BlockSpec, GcBlockParams,
    IntrospectionRecord, NlBlockParams, ScaleMode, SeBlockParams, SpaBlockParams,
};
pub use error::{Error, Result};
pub use rng::Rng;
pub use sps::SelectionResult;
pub use tensor::{ChannelMatrix, Conv1x1, FeatureMap};
