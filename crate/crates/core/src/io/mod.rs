//! Sensor and actuator channels: wire codecs, transports, and the
//! deterministic in-process network used in virtual time.

mod binding;
mod cell;
pub mod modbus;
mod sample;
pub mod serial;
mod transport;
mod tty;
mod virtual_net;

pub use binding::{ChannelBinding, LinkImperfection};
pub use cell::{CellStats, Demux, LatestCell};
pub use sample::{
    decode_sample, encode_sample, MessageKind, SampleMessage, SAMPLE_LEN, SAMPLE_MAGIC, SAMPLE_VERSION,
};
pub use serial::{serial_frame, Deframer, SerialConfig};
pub use transport::{serve_modbus_connection, Endpoints, InprocFabric, LinkStats, Side};
pub use tty::open_serial_device;
pub use virtual_net::{NetStats, SharedNet, VirtualNet, VirtualPort};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("short read: need {needed} bytes, got {got}")]
    ShortRead { needed: usize, got: usize },
    #[error("bad magic 0x{0:08X}")]
    BadMagic(u32),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0}")]
    BadKind(u8),
    #[error("payload of {0} bytes exceeds 255")]
    PayloadTooLong(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("no fresh sample within the period")]
    Timeout,
    #[error("channel closed: {0}")]
    Closed(String),
    #[error("bind failure: {0}")]
    Bind(String),
    #[error("io: {0}")]
    Io(String),
    #[error("modbus: {0}")]
    Modbus(String),
    #[error("value {value} does not fit a register at scale {scale}")]
    Range { value: f64, scale: f64 },
}

/// Receiving end of a channel: exposes the freshest message seen so far.
pub trait SampleSource: Send {
    fn latest(&mut self) -> Result<Option<SampleMessage>, ChannelError>;
}

/// Sending end of a channel.
pub trait SampleSink: Send {
    fn send(&mut self, msg: &SampleMessage) -> Result<(), ChannelError>;
}
