//! `flpower eval`: weighted-sum PER of one policy on the test channels.

use std::path::Path;

use anyhow::Result;

use flpower_core::policy::PolicyKind;

use crate::config::ExperimentConfig;
use crate::experiment::{csis, evaluate_cell, policy_for, SeedEnv};
use crate::output::{fmt_f64, CsvFile, RunDir};

pub fn run(cfg: &ExperimentConfig, kind: PolicyKind, ckpt_dir: &Path, out: &Path) -> Result<()> {
    let run = RunDir::prepare(out, cfg)?;
    let master = cfg.seed;
    let env = SeedEnv::build(cfg, master)?;
    let test_csi = csis(&env.splits.test, cfg.interference_scale);

    let mut policy = policy_for(kind, ckpt_dir, master, cfg.p_max_dbw)?;
    let per = evaluate_cell(&mut policy, &test_csi, &env.weights, &env.floors, cfg, None)?;

    let path = run.root().join("eval.csv");
    let mut csv = CsvFile::create(&path, cfg, &["policy", "seed", "interference_scale", "weighted_per"])?;
    csv.row(&[
        kind.to_string(),
        master.to_string(),
        fmt_f64(cfg.interference_scale),
        fmt_f64(per),
    ])?;
    csv.finish()?;

    println!(
        "{kind} (seed {master}, scale {}): test weighted-sum PER {per:.6}",
        cfg.interference_scale
    );
    Ok(())
}
