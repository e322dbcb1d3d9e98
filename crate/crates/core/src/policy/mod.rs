//! Power-allocation policies behind one interface.
//!
//! Four kinds: a graph-convolutional policy (size-flexible, permutation
//! equivariant), an MLP baseline (fixed input size), a uniformly-random
//! baseline, and the orthogonal-optimal baseline transmitting at
//! maximum power. Every policy maps a CSI matrix and a power budget to
//! a per-worker power vector in `[0, P_max]`.

mod checkpoint;
mod gcn;
mod mlp;

pub use checkpoint::{load_model, load_policy, save_model, save_policy, ModelKind};
pub use gcn::{GcnPolicy, DEFAULT_GCN_DIMS};
pub use mlp::{MlpPolicy, DEFAULT_MLP_HIDDEN};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{rates_from_sinr, sinr, CsiMatrix};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{CoreError, Result};
use crate::seed::stage_rng;

/// The policy families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Gcn,
    Mlp,
    Rand,
    Orth,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolicyKind::Gcn => "gcn",
            PolicyKind::Mlp => "mlp",
            PolicyKind::Rand => "rand",
            PolicyKind::Orth => "orth",
        };
        f.write_str(s)
    }
}

impl FromStr for PolicyKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(PolicyKind::Gcn),
            "mlp" => Ok(PolicyKind::Mlp),
            "rand" => Ok(PolicyKind::Rand),
            "orth" => Ok(PolicyKind::Orth),
            other => Err(CoreError::UnsupportedPolicy(other.to_string())),
        }
    }
}

/// A policy whose parameters are trained by the primal-dual loop.
pub trait TrainablePolicy {
    fn kind(&self) -> PolicyKind;

    fn params(&self) -> &[Tensor];

    fn params_mut(&mut self) -> &mut [Tensor];

    /// Registers all parameters as trainable tape leaves, in parameter
    /// order.
    fn register_params(&self, tape: &mut Tape) -> Vec<Var>;

    /// Forward pass producing the power vector node for one CSI matrix,
    /// reusing already-registered parameter vars (so one tape can hold a
    /// whole batch of forwards).
    fn forward_with(&self, tape: &mut Tape, theta: &[Var], csi: &CsiMatrix, p_max: f64)
        -> Result<Var>;

    /// Allocates powers for one CSI matrix (inference path).
    fn allocate(&self, csi: &CsiMatrix, p_max: f64) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let theta = self.register_params(&mut tape);
        let out = self.forward_with(&mut tape, &theta, csi, p_max)?;
        Ok(tape.values(out).to_vec())
    }
}

/// Uniformly-random power policy, `p_i ~ U(0, P_max)` i.i.d.
#[derive(Debug, Clone)]
pub struct RandPolicy {
    rng: ChaCha8Rng,
}

impl RandPolicy {
    pub fn new(seed: u64) -> Self {
        RandPolicy {
            rng: stage_rng(seed, "rand-policy"),
        }
    }

    pub fn allocate(&mut self, l: usize, p_max: f64) -> Result<Vec<f64>> {
        if !(p_max > 0.0) {
            return Err(CoreError::Config(format!(
                "P_max must be positive, got {p_max}"
            )));
        }
        Ok((0..l).map(|_| self.rng.gen_range(0.0..p_max)).collect())
    }
}

/// Orthogonal-channel optimum: every worker transmits at `P_max`.
pub fn orth_policy(l: usize, p_max: f64) -> Result<Vec<f64>> {
    if !(p_max > 0.0) {
        return Err(CoreError::Config(format!(
            "P_max must be positive, got {p_max}"
        )));
    }
    Ok(vec![p_max; l])
}

/// Any policy, dispatching allocation by kind.
pub enum Policy {
    Gcn(GcnPolicy),
    Mlp(MlpPolicy),
    Rand(RandPolicy),
    Orth,
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Gcn(_) => PolicyKind::Gcn,
            Policy::Mlp(_) => PolicyKind::Mlp,
            Policy::Rand(_) => PolicyKind::Rand,
            Policy::Orth => PolicyKind::Orth,
        }
    }

    /// Allocates a power vector in `[0, P_max]^L` for the given CSI.
    pub fn allocate(&mut self, csi: &CsiMatrix, p_max: f64) -> Result<Vec<f64>> {
        match self {
            Policy::Gcn(g) => g.allocate(csi, p_max),
            Policy::Mlp(m) => m.allocate(csi, p_max),
            Policy::Rand(r) => r.allocate(csi.workers(), p_max),
            Policy::Orth => orth_policy(csi.workers(), p_max),
        }
    }
}

/// Symmetrically normalized adjacency `D^{-1/2} H D^{-1/2}` with
/// `D = diag(H 1)`.
pub fn normalized_adjacency(csi: &CsiMatrix) -> Result<Tensor> {
    normalized_adjacency_of(csi.to_tensor())
}

pub(crate) fn normalized_adjacency_of(h: Tensor) -> Result<Tensor> {
    let l = h.rows();
    let mut dinv_sqrt = vec![0.0; l];
    for i in 0..l {
        let row_sum: f64 = h.values()[i * l..(i + 1) * l].iter().sum();
        if !(row_sum > 0.0) {
            return Err(CoreError::DegenerateGraph {
                row: i,
                sum: row_sum,
            });
        }
        dinv_sqrt[i] = 1.0 / row_sum.sqrt();
    }
    let mut vals = h.values().to_vec();
    for i in 0..l {
        for j in 0..l {
            vals[i * l + j] *= dinv_sqrt[i] * dinv_sqrt[j];
        }
    }
    Tensor::new(vec![l, l], vals)
}

/// Entrywise `ln(1 + x)` preconditioning of the CSI matrix, used by the
/// optional input-conditioning mode (off by default).
pub(crate) fn log1p_entries(csi: &CsiMatrix) -> Tensor {
    let vals: Vec<f64> = csi.entries().iter().map(|x| x.ln_1p()).collect();
    Tensor::new(vec![csi.workers(), csi.workers()], vals).expect("square")
}

/// One-shot participation mask for the model-based baselines: workers
/// whose rate under the full power vector falls below their floor are
/// zeroed out; nothing is recomputed afterwards. Learned policies skip
/// this (workers they assign zero power drop out on their own).
pub fn baseline_select(
    powers: &[f64],
    csi: &CsiMatrix,
    rate_floors: &[f64],
    bandwidth_hz: f64,
) -> Result<Vec<f64>> {
    if rate_floors.len() != powers.len() {
        return Err(CoreError::ShapeMismatch {
            op: "baseline_select",
            lhs: vec![powers.len()],
            rhs: vec![rate_floors.len()],
        });
    }
    let s = sinr(powers, csi)?;
    let rates = rates_from_sinr(&s, bandwidth_hz);
    Ok(powers
        .iter()
        .zip(rates.iter().zip(rate_floors))
        .map(|(p, (r, floor))| if r < floor { 0.0 } else { *p })
        .collect())
}
