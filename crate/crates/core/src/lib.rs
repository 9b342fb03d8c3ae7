//! Event-camera stream synthesis, dense event representations, and
//! Pearson-correlation integrity and gating metrics.

pub mod event;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod pipeline;
pub mod repr;
pub mod scene;

pub use event::{Event, EventStream, Polarity, SensorGeometry};
