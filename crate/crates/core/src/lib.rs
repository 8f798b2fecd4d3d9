//! Closed-loop experiments between simulated worlds and a spiking surrogate
//! of a cultured neural network on a microelectrode array.
//!
//! Sensory state is encoded as stimulation on the array ([`codec`]), the
//! surrogate ([`agent`]) responds, recorded activity is decoded into an
//! action for the world ([`env`]), and outcomes come back as reward or
//! punishment ([`feedback`]). [`harness`] runs and logs whole experiments,
//! [`probe`] measures synaptic change, and [`protocol`] drives the
//! generate, validate, run and refine loop over stimulation protocols.

pub mod agent;
pub mod codec;
pub mod env;
pub mod feedback;
pub mod harness;
pub mod mea;
pub mod probe;
pub mod protocol;

pub use agent::{Agent, NetworkConfig};
pub use env::{EnvConfig, Environment};
pub use harness::{
    run_experiment, run_in_memory, ExperimentConfig, ExperimentRecord, HarnessError as Error,
};
pub use mea::MeaLayout;
pub use protocol::{meta_loop, parse_protocol, validate, MetaLoopConfig, ProtocolSpec};

pub type Result<T, E = Error> = std::result::Result<T, E>;
