// Temporary tuning probe; not part of the deliverable.

use flpower_core::channel::{build_csi, generate_channels};
use flpower_core::dataio::split_channels;
use flpower_core::flsim::worker_weights;
use flpower_core::pdtrain::{
    conditional_mean_rates_with, default_rate_floors, train, TrainConfig,
};
use flpower_core::policy::{GcnPolicy, TrainablePolicy, DEFAULT_GCN_DIMS};
use flpower_core::seed::subseed;
use flpower_core::CsiMatrix;

fn csis_of(chans: &[flpower_core::ChannelRealization], scale: f64) -> Vec<CsiMatrix> {
    chans.iter().map(|c| build_csi(c, scale).unwrap()).collect()
}

fn main() {
    let l = 8;
    let p_max = flpower_core::dbw_to_watts(-20.0);
    for master in [0u64, 1] {
        let chans =
            generate_channels(256 + 128 + 256, l, 10, subseed(master, "channels"), 8.0).unwrap();
        let splits = split_channels(chans, (256, 128, 256), subseed(master, "split")).unwrap();
        let weights = worker_weights(l, subseed(master, "fl-partition"));
        let train_csi = csis_of(&splits.train, 1.0);
        let val_csi = csis_of(&splits.val, 1.0);
        let test_csi = csis_of(&splits.test, 1.0);
        let floors = default_rate_floors(&train_csi, p_max, 1e6, 0.5).unwrap();

        let mut cfg = TrainConfig::new(weights.clone(), floors.clone());
        cfg.epochs = 2500;
        cfg.gamma_theta = 3e-3;
        cfg.seed = subseed(master, "train");
        let mut gcn = GcnPolicy::new(&DEFAULT_GCN_DIMS, subseed(master, "gcn-init")).unwrap();
        gcn.log1p_precondition = true;
        train(&mut gcn, &train_csi, &val_csi, &cfg).unwrap();

        let (rates, counts) =
            conditional_mean_rates_with(|c| gcn.allocate(c, p_max), &test_csi, p_max, 1e6).unwrap();
        println!("seed {master}:");
        for i in 0..l {
            let ratio = rates[i] / floors[i];
            println!(
                "  worker {i}: floor {:10.1}  cond mean rate {:12.1}  ratio {ratio:6.3}  transmits {}/{}  ok {}",
                floors[i], rates[i], counts[i], test_csi.len(), rates[i] >= 0.95 * floors[i]
            );
        }
    }
}
