//! Power allocation for federated learning over interference-limited
//! wireless uplinks.
//!
//! The crate is organized around the pipeline it simulates:
//!
//! - [`diffcore`]: a minimal dense-tensor engine with tape-based
//!   reverse-mode differentiation, sized for the fixed architectures
//!   used here (GCN and MLP power policies, a small classifier).
//! - [`channel`]: multi-antenna uplink channel generation, the CSI
//!   matrix, and the wireless quantities derived from it (SINR, rate,
//!   delay, packet error rate, weighted success).
//! - [`policy`]: the power-allocation policies — a graph-convolutional
//!   policy, an MLP baseline, and the Rand/Orth model-based baselines —
//!   behind one allocation interface, plus checkpoint persistence.
//! - [`pdtrain`]: primal-dual constrained learning of the policy
//!   parameters against success-probability and minimum-rate
//!   constraints, with empirical expectations over channel batches.
//! - [`flsim`]: a federated-learning simulator with power-controlled
//!   lossy uplinks and success-masked aggregation.
//! - [`dataio`]: IDX ingestion, a synthetic fallback dataset, and
//!   channel dataset splits.

pub mod channel;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod flsim;
pub mod pdtrain;
pub mod policy;
pub mod seed;

pub use channel::{ChannelRealization, CsiMatrix};
pub use diffcore::{Tape, Tensor, Var};
pub use error::{CoreError, Result};
pub use policy::{GcnPolicy, MlpPolicy, Policy, PolicyKind, RandPolicy};

/// Converts a power level in dBW to linear watts.
pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

/// A worker is treated as not transmitting when its allocated power is
/// at or below this threshold (sigmoid outputs are never exactly zero).
pub fn zero_power_epsilon(p_max: f64) -> f64 {
    1e-8 * p_max
}
