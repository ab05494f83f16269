//! Multilevel beamforming toolkit.
//!
//! The crate covers the full pipeline of a beam-managed cellular downlink:
//!
//! * [`antenna`] — dipole-array pattern synthesis over a reflector,
//!   Gaussian tapering, peak-gain quadrature and side-lobe scans;
//! * [`optimizer`] — constrained grid-plus-descent search for array
//!   geometries that maximize gain under a side-lobe floor;
//! * [`codebook`] — hierarchical beam trees covering a cell sector, with
//!   per-level coverage rasters and the greedy beam-selection procedure;
//! * [`channel`] — distance path loss, lognormal shadowing and Nakagami-m
//!   fast fading, combined into per-slot SINR and rate;
//! * [`netsim`] — an event-driven multi-cell downlink simulator with
//!   proportional-fair scheduling and energy accounting;
//! * [`config`] — TOML-backed scenario description shared by the tools.

pub mod antenna;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod netsim;
pub mod optimizer;

pub use antenna::{ArrayDesign, Direction, SteeringAngles};
pub use optimizer::{DesignProblem, OptimizedDesign, SteeringBox};
