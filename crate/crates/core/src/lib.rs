//! Numerical and protocol kernels for an event-driven bridge monitoring node.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`simkit`] generates oracle responses of a simply supported girder under
//!   moving vehicles.
//! * [`nodesim`] emulates the sensor node: trigger circuit, acquisition,
//!   conditioning, packetisation and the ACK-gated uplink.
//! * [`wire`] is the byte-exact packet and acknowledgement format.
//! * [`dsp`] holds the shared signal-processing kernels.
//! * [`fusion`] estimates displacement from strain and acceleration.
//! * [`fleetstats`] computes long-term statistics over analysed sessions.
//! * [`powerm`] is the battery and solar budget model.
//!
//! Interchangeable algorithm variants (spectral windows, scaling rules, mixture
//! initialisers) are registered by name in a [`registry::Registry`] so they can
//! be selected from configuration.

pub mod dsp;
pub mod fleetstats;
pub mod fusion;
pub mod nodesim;
pub mod powerm;
pub mod registry;
pub mod simkit;
pub mod wire;

pub use registry::{Named, Registry, RegistryError};
