//! EventGAN: learning to simulate event-camera data from pairs of grayscale
//! frames, together with classical simulators, on-disk formats and the
//! downstream evaluation metrics.

pub mod data_io;
pub mod error;
pub mod event;
pub mod frame;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod sim;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use event::{build_volume, collapse_time, normalize_volume, CollapseMode, Event, EventStream, EventVolume, Polarity};
pub use frame::Frame;
