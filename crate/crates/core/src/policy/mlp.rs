//! MLP power policy baseline.
//!
//! Takes the flattened CSI matrix with `P_max` appended, propagates it
//! through dense layers with ELU activations in between, and applies
//! the same scaled-sigmoid output as the GCN. The input and output
//! widths are tied to the worker count it was built for, which is the
//! documented inflexibility contrasted with the graph policy.

use rand::Rng;

use crate::channel::CsiMatrix;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{CoreError, Result};
use crate::seed::stage_rng;

use super::{PolicyKind, TrainablePolicy};

/// Hidden widths used in the experiments.
pub const DEFAULT_MLP_HIDDEN: [usize; 5] = [128, 256, 64, 16, 8];

#[derive(Debug, Clone)]
pub struct MlpPolicy {
    /// Dense weights in layer order: `(L^2+1) x h_1, ..., h_last x L`.
    weights: Vec<Tensor>,
    l: usize,
    pub log1p_precondition: bool,
}

impl MlpPolicy {
    pub fn new(l: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if l == 0 || hidden.is_empty() || hidden.iter().any(|h| *h == 0) {
            return Err(CoreError::Config(format!(
                "MLP needs L >= 1 and nonempty hidden widths, got L={l}, {hidden:?}"
            )));
        }
        let dims = Self::dim_chain(l, hidden);
        let mut rng = stage_rng(seed, "mlp-init");
        let weights = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let vals: Vec<f64> = (0..w[0] * w[1])
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Tensor::new(vec![w[0], w[1]], vals).expect("sized")
            })
            .collect();
        Ok(MlpPolicy {
            weights,
            l,
            log1p_precondition: false,
        })
    }

    fn dim_chain(l: usize, hidden: &[usize]) -> Vec<usize> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(l * l + 1);
        dims.extend_from_slice(hidden);
        dims.push(l);
        dims
    }

    /// Rebuilds a policy from the dimension chain `[L^2+1, h..., L]` and
    /// flat weights in layer order.
    pub fn from_flat_weights(dims: &[usize], flat: &[f64]) -> Result<Self> {
        if dims.len() < 3 {
            return Err(CoreError::Config(format!(
                "MLP dimension chain too short: {dims:?}"
            )));
        }
        let l = *dims.last().unwrap();
        if dims[0] != l * l + 1 {
            return Err(CoreError::Config(format!(
                "MLP input width {} does not match L^2+1 for L={l}",
                dims[0]
            )));
        }
        let expect: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
        if flat.len() != expect {
            return Err(CoreError::ShapeMismatch {
                op: "MlpPolicy::from_flat_weights",
                lhs: vec![expect],
                rhs: vec![flat.len()],
            });
        }
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for w in dims.windows(2) {
            let n = w[0] * w[1];
            weights.push(Tensor::new(vec![w[0], w[1]], flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(MlpPolicy {
            weights,
            l,
            log1p_precondition: false,
        })
    }

    /// The worker count this policy was built for.
    pub fn trained_workers(&self) -> usize {
        self.l
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.weights[0].rows()];
        dims.extend(self.weights.iter().map(|w| w.cols()));
        dims
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    fn input_row(&self, csi: &CsiMatrix, p_max: f64) -> Tensor {
        let mut vals: Vec<f64> = if self.log1p_precondition {
            csi.entries().iter().map(|x| x.ln_1p()).collect()
        } else {
            csi.entries().to_vec()
        };
        vals.push(p_max);
        Tensor::new(vec![1, vals.len()], vals).expect("sized")
    }
}

impl TrainablePolicy for MlpPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Mlp
    }

    fn params(&self) -> &[Tensor] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    fn register_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.weights.iter().map(|w| tape.param(w.clone())).collect()
    }

    fn forward_with(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        csi: &CsiMatrix,
        p_max: f64,
    ) -> Result<Var> {
        if csi.workers() != self.l {
            return Err(CoreError::DimensionMismatch {
                expected: self.l,
                got: csi.workers(),
            });
        }
        if theta.len() != self.weights.len() {
            return Err(CoreError::InvalidState("wrong parameter var count"));
        }
        let mut h = tape.leaf(self.input_row(csi, p_max));
        for (t, &w) in theta.iter().enumerate() {
            let pre = tape.matmul(h, w)?;
            if t + 1 < theta.len() {
                h = tape.elu(pre)?;
            } else {
                h = pre;
            }
        }
        let flat = tape.reshape(h, vec![self.l])?;
        tape.sigmoid_scaled(flat, p_max)
    }
}
