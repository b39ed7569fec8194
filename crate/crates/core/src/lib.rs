pub mod confidence;
pub mod densify;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod solver;
pub mod synth;

pub use error::{FusionError, Result};
pub use grid::{
    from_log_depth, to_log_depth, DensePrediction, FusionParams, GridIndex, ImageGrid, SolveMode,
    SparseDepthMap, ValidityMask,
};
