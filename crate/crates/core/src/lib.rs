//! Joint BS beamforming and multi-RIS phase design with a bipartite
//! message-passing graph neural network, trained without labels on the
//! negative sum rate, plus the mmWave simulator and reference algorithms it is
//! compared against.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar for callers that do not care.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod numerics;
pub mod objective;
pub mod training;

pub use error::{Error, Result};
pub use numerics::Real;

pub type Model = gnn::ModelParams<f64>;
pub type Realization = channel::ChannelRealization<f64>;
pub type Solution = gnn::BeamformingSolution<f64>;
pub type Graph = graph::NetworkGraph<f64>;
pub type Report = objective::RateReport<f64>;

pub type Model32 = gnn::ModelParams<f32>;
pub type Realization32 = channel::ChannelRealization<f32>;
pub type Solution32 = gnn::BeamformingSolution<f32>;
pub type Graph32 = graph::NetworkGraph<f32>;
pub type Report32 = objective::RateReport<f32>;
