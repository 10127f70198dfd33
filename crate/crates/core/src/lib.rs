//! Motion-aware adversarial attacks on event-camera streams treated as
//! 4D point sets `(x, y, t, p)`.
//!
//! The crate bundles the event data model, a toy differentiable victim, the
//! diffusion-smoothed attack with per-sample Adam and λ bisection, gradient
//! sign baselines, distance metrics, point-removal defenses and a small
//! experiment harness.

pub mod attack;
pub mod bench;
pub mod defense;
pub mod diffusion;
pub mod error;
pub mod event;
pub mod io;
pub mod metrics;
pub mod neighbor;
pub mod synth;
pub mod victim;

pub use error::{Error, Result};
pub use event::{Event, EventStream, LabeledSample, Polarity, SensorDims};
