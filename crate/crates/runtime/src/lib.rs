//! Runtime for the milling digital twin: broker, transport, file formats,
//! configuration, the streaming pipeline and the command-line front end.

pub mod broker;
pub mod cli;
pub mod clock;
pub mod config;
pub mod dataset;
pub mod files;
pub mod messages;
pub mod pipeline;
pub mod tcp;

pub use milltwin_core as core;
