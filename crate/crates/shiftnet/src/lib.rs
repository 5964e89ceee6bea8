//! File formats, the training driver and the command line around
//! `shiftnet-core`.
//!
//! - [`ppm`]: binary PPM images and masks (white = missing).
//! - [`config`]: the `key = value` run configuration.
//! - [`dataset`]: image directories and the toy corpus.
//! - [`driver`]: epochs, loss CSV and per-epoch checkpoints.
//! - [`tools`]: inpaint, evaluate, bench and visualize on files.
//! - [`cli`]: argument parsing and exit codes.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod driver;
pub mod model;
pub mod ppm;
pub mod search;
pub mod tools;
