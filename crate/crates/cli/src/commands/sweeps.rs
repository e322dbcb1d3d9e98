//! The three transmission sweeps: interference strength, power budget,
//! and network size. One CSV row per (grid point, policy, seed), cells
//! evaluated in deterministic order.

use std::path::Path;

use anyhow::{bail, Result};

use flpower_core::channel::generate_channels;
use flpower_core::flsim::worker_weights;
use flpower_core::pdtrain::default_rate_floors;
use flpower_core::policy::PolicyKind;
use flpower_core::seed::subseed;

use crate::config::ExperimentConfig;
use crate::experiment::{csis, evaluate_cell, policy_for, SeedEnv};
use crate::output::{fmt_f64, CsvFile, RunDir};

const SWEEP_POLICIES: [PolicyKind; 4] = [
    PolicyKind::Gcn,
    PolicyKind::Mlp,
    PolicyKind::Rand,
    PolicyKind::Orth,
];

/// Weighted-sum PER against the interference scaling factors, all
/// policies evaluated on the same per-seed test channels.
pub fn interference(cfg: &ExperimentConfig, ckpt_dir: &Path, out: &Path) -> Result<()> {
    let run = RunDir::prepare(out, cfg)?;
    let path = run.root().join("interference.csv");
    let mut csv = CsvFile::create(&path, cfg, &["factor", "policy", "seed", "weighted_per"])?;

    for &factor in &cfg.factors {
        for kind in SWEEP_POLICIES {
            for &master in &cfg.seeds {
                let env = SeedEnv::build(cfg, master)?;
                let test_csi = csis(&env.splits.test, factor * cfg.interference_scale);
                let mut policy = policy_for(kind, ckpt_dir, master, cfg.p_max_dbw)?;
                let per =
                    evaluate_cell(&mut policy, &test_csi, &env.weights, &env.floors, cfg, None)?;
                csv.row(&[
                    fmt_f64(factor),
                    kind.to_string(),
                    master.to_string(),
                    fmt_f64(per),
                ])?;
            }
        }
    }
    csv.finish()?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Weighted-sum PER against the power budget. Learned policies use one
/// checkpoint per grid point (trained with that `P_max`); the rate
/// floors are recomputed per point since the achievable rates scale
/// with the budget.
pub fn pmax(cfg: &ExperimentConfig, ckpt_dir: &Path, out: &Path) -> Result<()> {
    let run = RunDir::prepare(out, cfg)?;
    let path = run.root().join("pmax.csv");
    let mut csv = CsvFile::create(&path, cfg, &["p_max_dbw", "policy", "seed", "weighted_per"])?;

    for &dbw in &cfg.pmax_grid_dbw {
        let p_max = flpower_core::dbw_to_watts(dbw);
        for kind in SWEEP_POLICIES {
            for &master in &cfg.seeds {
                let env = SeedEnv::build(cfg, master)?;
                let train_csi = csis(&env.splits.train, cfg.interference_scale);
                let floors =
                    default_rate_floors(&train_csi, p_max, cfg.bandwidth_hz, cfg.r0_rho)?;
                let test_csi = csis(&env.splits.test, cfg.interference_scale);
                let mut policy = policy_for(kind, ckpt_dir, master, dbw)?;
                let per = evaluate_cell(
                    &mut policy,
                    &test_csi,
                    &env.weights,
                    &floors,
                    cfg,
                    Some(p_max),
                )?;
                csv.row(&[
                    fmt_f64(dbw),
                    kind.to_string(),
                    master.to_string(),
                    fmt_f64(per),
                ])?;
            }
        }
    }
    csv.finish()?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Weighted-sum PER against the worker count, reusing the checkpoint
/// trained at `cfg.l` without retraining. The MLP is excluded: its
/// input and output widths are tied to the training size.
pub fn size(cfg: &ExperimentConfig, ckpt_dir: &Path, out: &Path, policies: &[PolicyKind]) -> Result<()> {
    if policies.contains(&PolicyKind::Mlp) {
        bail!(
            "the mlp policy only works at its training size (L = {}) and is not \
             eligible for the size sweep",
            cfg.l
        );
    }
    let run = RunDir::prepare(out, cfg)?;
    let path = run.root().join("size.csv");
    let mut csv = CsvFile::create(&path, cfg, &["workers", "policy", "seed", "weighted_per"])?;

    for &l in &cfg.sizes {
        for &kind in policies {
            for &master in &cfg.seeds {
                // At the trained size the sweep shares the seed's test
                // split (and floors), so its row agrees with the
                // factor-1 interference row; other sizes get fresh
                // channels.
                let (test_csi, weights, floors) = if l == cfg.l {
                    let env = SeedEnv::build(cfg, master)?;
                    (
                        csis(&env.splits.test, cfg.interference_scale),
                        env.weights,
                        env.floors,
                    )
                } else {
                    let test = generate_channels(
                        cfg.channels_test,
                        l,
                        cfg.n_r,
                        subseed(master, &format!("size-test-{l}")),
                        cfg.pathloss_spread_db,
                    )?;
                    let floor_chans = generate_channels(
                        cfg.channels_train,
                        l,
                        cfg.n_r,
                        subseed(master, &format!("size-floors-{l}")),
                        cfg.pathloss_spread_db,
                    )?;
                    let floors = default_rate_floors(
                        &csis(&floor_chans, cfg.interference_scale),
                        cfg.p_max(),
                        cfg.bandwidth_hz,
                        cfg.r0_rho,
                    )?;
                    (
                        csis(&test, cfg.interference_scale),
                        worker_weights(l, subseed(master, "fl-partition")),
                        floors,
                    )
                };
                let mut policy = policy_for(kind, ckpt_dir, master, cfg.p_max_dbw)?;
                let per = evaluate_cell(&mut policy, &test_csi, &weights, &floors, cfg, None)?;
                csv.row(&[
                    l.to_string(),
                    kind.to_string(),
                    master.to_string(),
                    fmt_f64(per),
                ])?;
            }
        }
    }
    csv.finish()?;
    println!("wrote {}", path.display());
    Ok(())
}
