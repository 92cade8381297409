//! Reverse-mode differentiation over real and complex tensors.
//!
//! The engine is a flat tape ([`tape::TapeGraph`]): every operation appends a
//! node holding its eagerly computed value, and `backward` walks the nodes in
//! reverse. Gradients of a real scalar loss with respect to complex tensors
//! use the convention
//!
//! ```text
//! g = dL/dRe{z} + i * dL/dIm{z}
//! ```
//!
//! i.e. `g` points in the direction of steepest ascent of `L` when a complex
//! tensor is treated as a pair of real ones. For a holomorphic map `w = h(z)`
//! the chain rule under this convention is `g_z = conj(h'(z)) * g_w`, which is
//! what the individual op rules implement.
//!
//! On top of the tape, [`nn`] provides the dense 3D convolution / resampling
//! kernels and [`dip`] assembles them into the untrained encoder-decoder
//! generator used as a structural prior.

pub mod dip;
pub mod fft;
pub mod gradcheck;
pub mod nn;
pub mod parallel;
pub mod tape;
pub mod value;

pub use tape::{Gradients, NodeId, SampleTaps, TapeGraph};
pub use value::Value;
