//! Batch front-end for `depthfuse`: the `fuse`, `eval`, `synth` and `sweep`
//! subcommands, plus the experiment helpers they share.

pub mod commands;
pub mod experiment;
pub mod report;

pub use commands::{run, Cli, Outcome};
