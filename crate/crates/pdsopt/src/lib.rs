//! Two-level structural shape optimization of piecewise developable grid
//! shells: a gradient-based lower level drives the surface toward piecewise
//! developability (tanh-filtered discrete Gauss-map error), and a simulated
//! annealing upper level searches selected point heights for minimum
//! compliance computed by a shell finite-element solver.

pub mod anneal;
pub mod config;
pub mod devmap;
pub mod fem;
pub mod grid;
pub mod io;
pub mod math;
pub mod nlp;
pub mod pipeline;
