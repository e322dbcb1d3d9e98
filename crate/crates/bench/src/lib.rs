//! Shared fixtures for the criterion benches.

use flpower_core::channel::{build_csi, generate_channels};
use flpower_core::flsim::worker_weights;
use flpower_core::pdtrain::{default_rate_floors, TrainConfig};
use flpower_core::CsiMatrix;

pub const WORKERS: usize = 8;
pub const ANTENNAS: usize = 10;

pub fn p_max() -> f64 {
    flpower_core::dbw_to_watts(-20.0)
}

/// A deterministic batch of CSI matrices at the default system size.
pub fn csi_batch(count: usize, seed: u64) -> Vec<CsiMatrix> {
    generate_channels(count, WORKERS, ANTENNAS, seed, 8.0)
        .expect("generator parameters are valid")
        .iter()
        .map(|ch| build_csi(ch, 1.0).expect("nondegenerate"))
        .collect()
}

/// Training configuration matching the shipped experiment recipe.
pub fn train_config(batch: &[CsiMatrix]) -> TrainConfig {
    let weights = worker_weights(WORKERS, 0);
    let floors = default_rate_floors(batch, p_max(), 1e6, 0.5).expect("nonempty batch");
    let mut cfg = TrainConfig::new(weights, floors);
    cfg.p_max = p_max();
    cfg.gamma_theta = 3e-3;
    cfg
}
