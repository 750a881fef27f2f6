use crate::state::{Polarization, Port};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time bin must be non-negative, got {0}")]
    NegativeTimeBin(i64),

    #[error("delay must be non-negative, got {0} bins")]
    NegativeDelay(i64),

    #[error("mean photon number must be a finite non-negative number, got {0}")]
    InvalidMeanPhotonNumber(f64),

    #[error("single-photon amplitude magnitude {0} exceeds 1")]
    AmplitudeTooLarge(f64),

    #[error("field states carry different photon statistics")]
    StatisticsMismatch,

    #[error("coupler needs two distinct ports, got {0} twice")]
    DegeneratePorts(Port),

    #[error("{pol:?}-polarized light on port {port} cannot pass the polarizing beamsplitter")]
    PolarizationMismatch { port: Port, pol: Polarization },

    #[error("{name} must lie in {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },

    #[error("phase for bin {bin} is not finite")]
    NonFinitePhase { bin: u32 },

    #[error("noise sample has no phase for channel bin {0}")]
    MissingNoiseBin(u32),

    #[error("invalid apparatus configuration: {0}")]
    InvalidConfig(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("target raw error {target} is unreachable (achievable range {low}..={high})")]
    UnreachableTarget { target: f64, low: f64, high: f64 },
}

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            range: "[0, 1]",
            value,
        })
    }
}
