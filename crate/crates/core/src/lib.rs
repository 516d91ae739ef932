//! Surrogate modeling toolkit for axisymmetric tube nosing.
//!
//! The crate stacks five layers: closed-form process models (`process`), the
//! mesh/graph scene representation (`mesh`), a kinematic synthetic-trajectory
//! generator with dataset persistence (`synth`), a message-passing surrogate
//! network trained on one-step targets (`net`, `train`), and rollout plus
//! evaluation harnesses (`rollout`).
//!
//! Conventions: persisted coordinates are in meters; CLI-facing geometry in
//! millimeters, converted at the boundary. Every stochastic component takes
//! an explicit seed, so equal inputs give bitwise-equal outputs.

pub mod error;
pub mod mesh;
pub mod net;
pub mod process;
pub mod rollout;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use mesh::{
    DieGeometry, Edge, EdgeSet, EdgeSets, GridDims, MeshState, NodeKind, ObjectRange, Point,
    Topology,
};
pub use net::{
    ColumnStats, GraphBatch, InputStats, Latents, MlpSpec, ModelParameters, NetSpec, TargetStats,
};
pub use process::{MaterialCard, ProcessParams};
pub use rollout::{
    AblationTable, CellValue, GridReportEntry, RolloutOptions, RolloutResult, ThicknessProfile,
    TimeReport, TimingRow,
};
pub use synth::{RunConfig, Split, SplitTag, TrajectoryDataset, TubeSpec};
pub use train::{NoiseModel, TrainConfig, TrainOutcome};

/// Meters per millimeter; geometry arrives in mm and lives in meters.
pub(crate) const MM: f64 = 1e-3;
