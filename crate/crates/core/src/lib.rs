//! Desk-scale intensity diffraction tomography.
//!
//! The crate covers the full path from an imaging configuration to a
//! reconstructed refractive-index volume:
//!
//! * [`geometry`] — k-space grids, Ewald caps, illumination wavevectors, the
//!   synthesized transfer function and bandwidth metrics;
//! * [`forward`] — single-scattering and beam-propagation forward models,
//!   built as differentiable graphs on the tape from `dptomo-autodiff`;
//! * [`objective`] — amplitude/field data terms plus total-variation and
//!   positivity regularizers, assembled into one loss;
//! * [`optim`] — Adam with a divergence guard, LED batching, spatial
//!   patching and stochastic stitching around either a raw voxel grid or the
//!   generator network;
//! * [`simkit`] — bead phantoms, camera/shot-noise models and evaluation
//!   metrics;
//! * [`container`] and [`config`] — on-disk tensor and run-configuration
//!   formats.
//!
//! Everything deterministic is bitwise reproducible for a fixed seed,
//! including under the default rayon parallelism (reductions happen in fixed
//! order). The `parallel` feature can be disabled for a sequential build.

pub mod config;
pub mod container;
pub mod forward;
pub mod geometry;
pub mod objective;
pub mod optim;
pub mod simkit;

pub use dptomo_autodiff as autodiff;
pub use dptomo_autodiff::parallel;
