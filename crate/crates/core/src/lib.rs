//! Simulation of time-bin BB84 over a plug-and-play fiber interferometer with
//! error filtration.
//!
//! The crate is layered bottom-up:
//!
//! - [`state`]: sparse mode-indexed amplitudes ([`FieldState`]).
//! - [`elements`]: couplers, PBS, delays, modulators, Faraday mirror.
//! - [`noise`]: Gaussian phase noise and the closed-form visibilities.
//! - [`apparatus`]: the full round trip, with and without filtration.
//! - [`detection`]: gated threshold detector with dark counts.
//! - [`protocol`]: BB84 sessions, sifting, error-rate estimation, security
//!   classification and the replacement attack.
//! - [`streams`]: seeded per-trial random substreams.

pub mod apparatus;
pub mod detection;
pub mod elements;
pub mod error;
pub mod noise;
pub mod protocol;
pub mod state;
pub mod streams;

pub use apparatus::{
    estimate_visibility, propagate, ApparatusConfig, OutputPort, RoundTripResult, VisibilityEstimate,
};
pub use detection::{click_probability, DetectorConfig};
pub use error::{Error, Result};
pub use noise::{NoiseModel, NoiseSample};
pub use protocol::{
    classify, estimate_ber, run_session, sift, BerEstimate, EveModel, RoundRecord, SecurityVerdict,
    SessionConfig,
};
pub use state::{FieldState, Mode, Polarization, Port, Statistics};
