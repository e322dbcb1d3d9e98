//! Graph-convolutional power policy.
//!
//! Layer `t` computes `Z^(t) = sigma_t(A_hat Z^(t-1) Theta^(t))` where
//! `A_hat = D^{-1/2} H D^{-1/2}` is the degree-normalized CSI matrix and
//! the input is `Z^(0) = P_max 1`. Weights act on feature channels only,
//! so one trained policy runs on any number of workers, and relabeling
//! the workers permutes the output powers identically.

use rand::Rng;

use crate::channel::CsiMatrix;
use crate::diffcore::{Activation, Tape, Tensor, Var};
use crate::error::{CoreError, Result};
use crate::seed::stage_rng;

use super::{log1p_entries, normalized_adjacency_of, PolicyKind, TrainablePolicy};

/// Feature-dimension chain used in the experiments:
/// scalar input, hidden widths 16/32/64/16, and a 2-channel final layer.
pub const DEFAULT_GCN_DIMS: [usize; 6] = [1, 16, 32, 64, 16, 2];

#[derive(Debug, Clone)]
pub struct GcnPolicy {
    /// `weights[t]` is `Theta^(t+1)` with shape `dims[t] x dims[t+1]`.
    weights: Vec<Tensor>,
    dims: Vec<usize>,
    /// Hidden-layer activations (the final layer feeds the scaled
    /// sigmoid readout instead).
    hidden_activations: Vec<Activation>,
    /// Optional entrywise `ln(1+x)` preconditioning of `H` before the
    /// degree normalization. Off by default.
    pub log1p_precondition: bool,
}

impl GcnPolicy {
    /// A fresh policy with fan-based uniform initialization,
    /// `U(+-sqrt(6/(d_in+d_out)))` per layer.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        Self::validate_dims(dims)?;
        let mut rng = stage_rng(seed, "gcn-init");
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
        Ok(GcnPolicy {
            weights,
            dims: dims.to_vec(),
            hidden_activations: vec![Activation::Elu; dims.len() - 2],
            log1p_precondition: false,
        })
    }

    /// Rebuilds a policy from flat weights in layer order.
    pub fn from_flat_weights(dims: &[usize], flat: &[f64]) -> Result<Self> {
        Self::validate_dims(dims)?;
        let expect: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
        if flat.len() != expect {
            return Err(CoreError::ShapeMismatch {
                op: "GcnPolicy::from_flat_weights",
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
        Ok(GcnPolicy {
            weights,
            dims: dims.to_vec(),
            hidden_activations: vec![Activation::Elu; dims.len() - 2],
            log1p_precondition: false,
        })
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims[0] != 1 || dims.iter().any(|d| *d == 0) {
            return Err(CoreError::Config(format!(
                "GCN dims must start at 1 and be positive, got {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    fn adjacency(&self, csi: &CsiMatrix) -> Result<Tensor> {
        let h = if self.log1p_precondition {
            log1p_entries(csi)
        } else {
            csi.to_tensor()
        };
        normalized_adjacency_of(h)
    }
}

impl TrainablePolicy for GcnPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Gcn
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
        if theta.len() != self.weights.len() {
            return Err(CoreError::InvalidState("wrong parameter var count"));
        }
        let l = csi.workers();
        let a_hat = tape.leaf(self.adjacency(csi)?);
        // Z^(0) = P_max 1, expressed in units of the budget (so the
        // entries are 1). Feeding raw watts starves the readout: every
        // activation scales with P_max (hundredths of a watt), leaving
        // the pre-sigmoid output insensitive to weight-sized updates.
        // The budget still sets the output scale through the readout.
        let mut z = tape.leaf(Tensor::full(vec![l, 1], 1.0));
        for (t, &w) in theta.iter().enumerate() {
            let mixed = tape.matmul(a_hat, z)?;
            let pre = tape.matmul(mixed, w)?;
            if t + 1 < theta.len() {
                z = self.hidden_activations[t].apply(tape, pre)?;
            } else {
                z = pre;
            }
        }
        // Per-node power: scaled sigmoid of the first output channel of
        // the final layer; any extra channels stay unused so the
        // published dimension chain can end at 2.
        let readout = tape.column(z, 0)?;
        tape.sigmoid_scaled(readout, p_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_csi, generate_channels};

    fn random_csi(l: usize, seed: u64) -> CsiMatrix {
        let chans = generate_channels(1, l, 10, seed, 8.0).unwrap();
        build_csi(&chans[0], 1.0).unwrap()
    }

    #[test]
    fn zero_weights_give_half_power() {
        let dims = DEFAULT_GCN_DIMS;
        let total: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
        let policy = GcnPolicy::from_flat_weights(&dims, &vec![0.0; total]).unwrap();
        let p_max = 0.01;
        let csi = random_csi(1, 2);
        let p = policy.allocate(&csi, p_max).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0] - p_max / 2.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_equivariant() {
        use rand::seq::SliceRandom;
        let policy = GcnPolicy::new(&DEFAULT_GCN_DIMS, 5).unwrap();
        let p_max = 0.01;
        let l = 6;
        let csi = random_csi(l, 8);
        let base = policy.allocate(&csi, p_max).unwrap();

        let mut perm: Vec<usize> = (0..l).collect();
        let mut rng = crate::seed::stage_rng(3, "perm");
        perm.shuffle(&mut rng);

        // H' = P H P^T, i.e. H'[i][j] = H[perm[i]][perm[j]].
        let mut permuted = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..l {
                permuted[i * l + j] = csi.at(perm[i], perm[j]);
            }
        }
        let csi_p = CsiMatrix::new(l, permuted, 1.0).unwrap();
        let out = policy.allocate(&csi_p, p_max).unwrap();
        for i in 0..l {
            assert!(
                (out[i] - base[perm[i]]).abs() < 1e-9,
                "worker {i}: {} vs {}",
                out[i],
                base[perm[i]]
            );
        }
    }

    #[test]
    fn same_weights_run_on_any_size() {
        let policy = GcnPolicy::new(&DEFAULT_GCN_DIMS, 1).unwrap();
        for l in [1usize, 8, 16] {
            let csi = random_csi(l, 40 + l as u64);
            let p = policy.allocate(&csi, 0.01).unwrap();
            assert_eq!(p.len(), l);
            for v in p {
                assert!((0.0..=0.01).contains(&v));
            }
        }
    }

    #[test]
    fn output_range_is_always_within_budget() {
        let policy = GcnPolicy::new(&DEFAULT_GCN_DIMS, 12).unwrap();
        for seed in 0..20 {
            let csi = random_csi(8, 100 + seed);
            for p_max in [1e-4, 0.01, 10.0] {
                for v in policy.allocate(&csi, p_max).unwrap() {
                    assert!(v > 0.0 && v < p_max);
                }
            }
        }
    }

    #[test]
    fn one_channel_final_layer_is_supported() {
        let dims = [1usize, 8, 1];
        let policy = GcnPolicy::new(&dims, 3).unwrap();
        let csi = random_csi(4, 9);
        assert_eq!(policy.allocate(&csi, 0.01).unwrap().len(), 4);
    }

    #[test]
    fn dims_must_start_at_one() {
        assert!(GcnPolicy::new(&[2, 8, 2], 0).is_err());
        assert!(GcnPolicy::new(&[1], 0).is_err());
    }
}
