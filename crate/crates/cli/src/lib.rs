//! Command-line pipeline around the `semloft` library.
//!
//! Five subcommands cover the workflow: `extract` searches a map for the
//! best-scoring world, `synth` renders ground truth to noisy test maps,
//! `score` reports posterior terms and the cell prediction rate, `detect`
//! dumps proposal candidates, and `render` draws overlays. Everything is a
//! library function first so test suites can drive commands in-process.

pub mod cli;
pub mod commands;
pub mod config;
pub mod png;
pub mod render;
