//! Shared experiment machinery: channel pools, rate floors, checkpoint
//! naming, and policy evaluation cells.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use flpower_core::channel::build_csi;
use flpower_core::dataio::{split_channels, DatasetSplits};
use flpower_core::flsim::worker_weights;
use flpower_core::pdtrain::{default_rate_floors, weighted_per, EvalOptions, RateMask};
use flpower_core::policy::{load_policy, Policy, PolicyKind, RandPolicy};
use flpower_core::seed::subseed;
use flpower_core::{ChannelRealization, CsiMatrix};

use crate::config::ExperimentConfig;

/// Everything seed-specific that experiments share: the channel splits,
/// worker weights, and rate floors of the original (factor-1) network.
pub struct SeedEnv {
    pub splits: DatasetSplits,
    pub weights: Vec<f64>,
    pub floors: Vec<f64>,
}

impl SeedEnv {
    pub fn build(cfg: &ExperimentConfig, master: u64) -> Result<Self> {
        let total = cfg.channels_train + cfg.channels_val + cfg.channels_test;
        let chans = flpower_core::channel::generate_channels(
            total,
            cfg.l,
            cfg.n_r,
            subseed(master, "channels"),
            cfg.pathloss_spread_db,
        )?;
        let splits = split_channels(
            chans,
            (cfg.channels_train, cfg.channels_val, cfg.channels_test),
            subseed(master, "split"),
        )?;
        let weights = worker_weights(cfg.l, subseed(master, "fl-partition"));
        let train_csi = csis(&splits.train, cfg.interference_scale);
        let floors = default_rate_floors(&train_csi, cfg.p_max(), cfg.bandwidth_hz, cfg.r0_rho)?;
        Ok(SeedEnv {
            splits,
            weights,
            floors,
        })
    }
}

pub fn csis(chans: &[ChannelRealization], scale: f64) -> Vec<CsiMatrix> {
    chans
        .iter()
        .map(|c| build_csi(c, scale).expect("generated channels are nondegenerate"))
        .collect()
}

/// Formats a dBW value for checkpoint file names (`-20`, `-12.5`, `0`).
pub fn fmt_dbw(dbw: f64) -> String {
    if dbw == dbw.trunc() {
        format!("{}", dbw as i64)
    } else {
        format!("{dbw}")
    }
}

/// Checkpoint naming convention shared by `train` and the sweeps.
pub fn ckpt_path(dir: &Path, kind: PolicyKind, seed: u64, p_max_dbw: f64) -> PathBuf {
    dir.join(format!("{kind}_s{seed}_pm{}.fpmdl", fmt_dbw(p_max_dbw)))
}

/// Builds a policy for evaluation: learned kinds load their checkpoint,
/// the model-based baselines are constructed directly.
pub fn policy_for(
    kind: PolicyKind,
    ckpt_dir: &Path,
    master: u64,
    p_max_dbw: f64,
) -> Result<Policy> {
    match kind {
        PolicyKind::Gcn | PolicyKind::Mlp => {
            let path = ckpt_path(ckpt_dir, kind, master, p_max_dbw);
            if !path.exists() {
                bail!(
                    "missing checkpoint for {kind} (seed {master}, P_max {p_max_dbw} dBW): \
                     expected {} — run `flpower train` first",
                    path.display()
                );
            }
            let policy = load_policy(&path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            if policy.kind() != kind {
                bail!(
                    "checkpoint {} holds a {} policy, expected {kind}",
                    path.display(),
                    policy.kind()
                );
            }
            Ok(policy)
        }
        PolicyKind::Rand => Ok(Policy::Rand(RandPolicy::new(subseed(master, "rand-eval")))),
        PolicyKind::Orth => Ok(Policy::Orth),
    }
}

/// Weighted-sum PER of one policy on a channel set; the model-based
/// baselines go through the one-shot rate-floor selection first.
pub fn evaluate_cell(
    policy: &mut Policy,
    test_csi: &[CsiMatrix],
    weights: &[f64],
    floors: &[f64],
    cfg: &ExperimentConfig,
    p_max_override: Option<f64>,
) -> Result<f64> {
    let masked = matches!(policy.kind(), PolicyKind::Rand | PolicyKind::Orth);
    let opts = EvalOptions {
        p_max: p_max_override.unwrap_or_else(|| cfg.p_max()),
        waterfall_m: cfg.waterfall_m,
        weights: weights.to_vec(),
        rate_mask: masked.then(|| RateMask {
            floors: floors.to_vec(),
            bandwidth_hz: cfg.bandwidth_hz,
        }),
    };
    Ok(weighted_per(policy, test_csi, &opts)?)
}

pub fn parse_policies(arg: &str) -> Result<Vec<PolicyKind>> {
    arg.split(',')
        .map(|s| s.trim().parse::<PolicyKind>().map_err(anyhow::Error::from))
        .collect()
}
