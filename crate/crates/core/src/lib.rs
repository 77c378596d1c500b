//! Core algorithms for a closed-loop milling digital twin.
//!
//! Everything in this crate is `no_std` + `alloc`: sample ingestion and
//! windowing, acoustic-emission feature extraction, the simulated plant,
//! the contact classifier, the decision layer and the wire framing. IO,
//! threads and clocks live in the `milltwin` runtime crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod control;
pub mod features;
pub mod fft;
pub mod frame;
pub mod latency;
mod math;
pub mod model;
pub mod plant;
pub mod signal;

pub use control::{CommandKind, ControllerState, DecisionPolicy, MachineCommand};
pub use features::{FeatureConfig, FeatureVector};
pub use model::{Mlp, TrainConfig};
pub use signal::{SampleBlock, Window, WindowSpec};
