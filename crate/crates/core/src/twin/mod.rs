//! The digital twin: QoT prediction, telemetry, calibration and error reporting.

pub mod ber;
pub mod calibrate;
mod lm;
pub mod qot;
pub mod report;
pub mod sim;
pub mod telemetry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amplifier::AmpError;
use crate::fiber::FiberError;
use crate::spectral::SpectralError;
use crate::topology::{NetworkState, TopologyError};

pub use ber::{ber_from_gsnr, gsnr_from_ber, BerModel};
pub use calibrate::{calibrate, CalibrationOptions, CalibrationReport, TelemetryMode};
pub use qot::{predict_all, predict_qot, predict_route, QotEstimate};
pub use report::{error_report, ErrorReport, GsnrSample};
pub use sim::{simulate_link, simulate_network, LinkTrace, SimOptions};
pub use telemetry::{Alarm, Location, Payload, Port, Source, Tap, TelemetryMonitor, TelemetryRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwinError {
    #[error("lightpath `{lightpath}` crosses failed span `{span}`")]
    FailedSpanOnRoute { lightpath: String, span: String },
    #[error("channel {channel} is not lit on link `{link}`")]
    ChannelNotLit { link: String, channel: usize },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("node `{0}` has no booster for a back-to-back estimate")]
    NoBooster(String),
    #[error("BER {0} outside (0, 0.5) or beyond the supported GSNR range")]
    BerOutOfRange(f64),
    #[error("no (lightpath, channel) pair is both predicted and measured")]
    EmptyIntersection,
    #[error("payload does not match source at `{0}`")]
    PayloadMismatch(String),
    #[error("stale record on {stream}: t={t} not after t={last}")]
    StaleTimestamp { stream: String, t: u64, last: u64 },
    #[error("no telemetry covers the calibrated parameters")]
    NoTelemetry,
    #[error("calibration diverged: objective is not finite")]
    Divergence,
    #[error("json: {0}")]
    Json(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Amp(#[from] AmpError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Twin state as persisted by the command-line tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Twin {
    pub state: NetworkState,
    #[serde(default)]
    pub ber_model: BerModel,
    #[serde(default)]
    pub monitor: TelemetryMonitor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationReport>,
}

impl Twin {
    pub fn new(state: NetworkState) -> Self {
        Self {
            state,
            ber_model: BerModel::default(),
            monitor: TelemetryMonitor::default(),
            calibration: None,
        }
    }
}

/// Functional form of [`TelemetryMonitor::ingest`]: returns the updated twin.
pub fn ingest(twin: &Twin, record: TelemetryRecord) -> Result<Twin, TwinError> {
    let mut next = twin.clone();
    next.monitor.ingest(record)?;
    Ok(next)
}
