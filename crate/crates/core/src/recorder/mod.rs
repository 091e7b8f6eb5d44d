//! Trajectory capture and the loss-delta regression datasets built from it.

mod deltas;
mod trajectory;

pub use deltas::{build_deltas, build_momentum_deltas, build_vanilla_deltas, DeltaDataset, DeltaMode, LayerBlock};
pub use trajectory::{ProbeMode, SnapshotPrecision, StepRecord, Trajectory, TrajectoryMeta};
