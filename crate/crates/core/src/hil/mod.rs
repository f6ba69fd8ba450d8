//! Physical control bridge: a framed TCP request-response loop carrying
//! observations up and controls down on a fixed actuation cycle, platform
//! mappings, a simulated vehicle client, and route-completion scoring.

mod client;
mod completion;
mod platform;
mod session;
mod wire;

use thiserror::Error;

pub use client::{sim_vehicle_client, ClientFrame, ClientLog, ClientOptions, Obstacle, PhysicalRoute};
pub use completion::{completion_rate, CompletionReport, RouteCompletion, RunSummary};
pub use platform::{map_ackermann, map_differential, PlatformKind, PlatformParams};
pub use session::{serve, serve_connection, serve_session, Controller, Direction, LogEntry, ServeOptions, SessionLog};
pub use wire::{
    decode, decode_prefix, encode, read_message, write_message, ByeReason, DecodeError, ResultStatus, VehicleReport,
    WireMessage, DEFAULT_CYCLE_S, DEFAULT_MAX_FRAME, PROTOCOL_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("peer disconnected")]
    Disconnected,
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("decode: {0}")]
    Decode(DecodeError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("platform: {0}")]
    Platform(String),
    #[error("completion: {0}")]
    Completion(String),
}

impl HilError {
    pub fn from_io(e: std::io::Error) -> Self {
        use std::io::ErrorKind::*;
        match e.kind() {
            TimedOut | WouldBlock => HilError::Timeout,
            UnexpectedEof | ConnectionReset | ConnectionAborted | BrokenPipe => HilError::Disconnected,
            _ => HilError::Io(e.to_string()),
        }
    }
}
