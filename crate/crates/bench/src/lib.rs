//! Command-line driver: single trials, benchmark grids, SVG rendering and the
//! reference self-test.

pub mod cli;
pub mod render;
pub mod report;
