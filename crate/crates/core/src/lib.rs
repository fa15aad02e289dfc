//! Networked embedded-control runtime: discrete controllers, continuous-time
//! plants, sampled-data I/O channels, and a multi-rate loop executive that
//! runs one experiment description in virtual or real time.

pub mod config;
pub mod control;
pub mod engine;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod plant;
pub mod supervisor;
pub mod time;
pub mod trace;
