//! Mutual-information analysis of twin-beam photocurrent traces sent through
//! a scatterer and integrating-sphere channel.
//!
//! The chain runs simulate ([`source`]) → channel ([`channel`]) →
//! band-pass ([`dsp`]) → delay-scanned MI ([`mi`]) → average and normalize
//! → staged model fit ([`fit`], [`model`]). [`pipeline`] wires it together
//! and [`io`] / [`config`] handle files.

pub mod channel;
pub mod config;
pub mod dsp;
pub mod error;
pub mod fit;
pub mod io;
pub mod mi;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod quad;
pub mod source;
pub mod special;
pub mod trace;

pub use error::{
    ChannelError, ConfigError, DspError, FitError, IoError, MiError, SourceError, TraceError,
};
pub use params::{ChannelParams, FitResult, SourceParams};
pub use trace::{Channel, DigitizerSpec, MiCurve, Scenario, Trace, TracePair};
