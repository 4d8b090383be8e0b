//! Simulation and evaluation toolkit for directional filtering with compact
//! microphone arrays.

pub mod dataset;
pub mod directivity;
pub mod error;
pub mod filters;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod room;
pub mod scene;
pub mod signal;

pub use directivity::{DirectivityPattern, PatternShape};
pub use error::{Error, Result};
pub use geometry::{build_array, ArrayGeometry, Doa, Point3, SPEED_OF_SOUND};
pub use room::{Enclosure, ImpulseResponse, ReflectionModel, RoomSpec};
pub use signal::{Mask, Spectrogram};

/// Sample rate of every signal in the pipeline, Hz.
pub const SAMPLE_RATE: u32 = 16_000;
