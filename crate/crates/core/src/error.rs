use thiserror::Error;

/// Errors raised by the encoding, perturbation and accounting routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {value} is not a normalized binary32 number (exponent field {exponent})")]
    NotNormalized { value: f32, exponent: u8 },

    #[error("element {index} = {value} lies outside the fixed-point range [-{limit}, {limit}]")]
    OutOfRange { index: usize, value: f32, limit: f64 },

    #[error("shared exponent overflow: nu_inf exponent field {0} leaves no room for +2")]
    ExponentOverflow(u8),

    #[error("bitstream length {0} is not a multiple of 23")]
    BitLength(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("malformed wire frame: {0}")]
    Wire(String),

    #[error("flip probability {0} outside [0, 0.5]")]
    InvalidProbability(f64),

    #[error("channel BER {0} is at or above 0.5; the channel is too noisy to budget")]
    ChannelTooNoisy(f64),

    #[error("channel BER {channel} exceeds the required end-to-end BER {target}: privacy over-satisfied, convergence at risk")]
    PrivacyOverSatisfied { target: f64, channel: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}
