//! `flpower train`: primal-dual training of one learned policy.

use std::path::Path;

use anyhow::{bail, Context, Result};

use flpower_core::pdtrain::{train, TrainConfig, TrainReport};
use flpower_core::policy::{save_policy, GcnPolicy, MlpPolicy, Policy, PolicyKind};
use flpower_core::seed::subseed;

use crate::config::ExperimentConfig;
use crate::experiment::{ckpt_path, csis, SeedEnv};
use crate::output::{fmt_f64, CsvFile, RunDir};

pub fn run(cfg: &ExperimentConfig, kind: PolicyKind, out: &Path) -> Result<()> {
    let run = RunDir::prepare(out, cfg)?;
    let master = cfg.seed;
    let env = SeedEnv::build(cfg, master)?;
    let train_csi = csis(&env.splits.train, cfg.interference_scale);
    let val_csi = csis(&env.splits.val, cfg.interference_scale);

    let mut pd = TrainConfig::new(env.weights.clone(), env.floors.clone());
    pd.epochs = cfg.epochs;
    pd.batch_size = cfg.batch_size;
    pd.p_max = cfg.p_max();
    pd.waterfall_m = cfg.waterfall_m;
    pd.bandwidth_hz = cfg.bandwidth_hz;
    pd.gamma_theta = cfg.gamma_theta;
    pd.gamma_q = cfg.gamma_q;
    pd.gamma_r = cfg.gamma_r;
    pd.gamma_lambda_q = cfg.gamma_lambda_q;
    pd.gamma_lambda_r = cfg.gamma_lambda_r;
    pd.theta_adam = cfg.theta_adam;
    pd.literal_qtilde_update = cfg.literal_qtilde_update;
    pd.seed = subseed(master, "train");

    let (policy, report) = match kind {
        PolicyKind::Gcn => {
            let mut gcn = GcnPolicy::new(&cfg.gcn_dims, subseed(master, "gcn-init"))?;
            gcn.log1p_precondition = cfg.log1p_precondition;
            let report = train(&mut gcn, &train_csi, &val_csi, &pd)
                .context("primal-dual training failed")?;
            (Policy::Gcn(gcn), report)
        }
        PolicyKind::Mlp => {
            let mut mlp = MlpPolicy::new(cfg.l, &cfg.mlp_hidden, subseed(master, "mlp-init"))?;
            mlp.log1p_precondition = cfg.log1p_precondition;
            let report = train(&mut mlp, &train_csi, &val_csi, &pd)
                .context("primal-dual training failed")?;
            (Policy::Mlp(mlp), report)
        }
        other => bail!("`train` needs a learned policy (gcn or mlp), got {other}"),
    };

    let ckpt = ckpt_path(&run.checkpoints(), kind, master, cfg.p_max_dbw);
    save_policy(&ckpt, &policy)?;
    write_training_log(&run, cfg, kind, master, &report)?;

    println!(
        "trained {kind} (seed {master}, P_max {} dBW): best epoch {} with validation \
         weighted PER {:.4}",
        cfg.p_max_dbw, report.best_epoch, report.best_val
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn write_training_log(
    run: &RunDir,
    cfg: &ExperimentConfig,
    kind: PolicyKind,
    master: u64,
    report: &TrainReport,
) -> Result<()> {
    let mut columns = vec!["epoch".to_string(), "lagrangian".into(), "g_qtilde".into()];
    for i in 0..cfg.l {
        columns.push(format!("lambda_q_{i}"));
    }
    for i in 0..cfg.l {
        columns.push(format!("lambda_r_{i}"));
    }
    columns.push("val_weighted_per".into());
    let column_refs: Vec<&str> = columns.iter().map(|c| c.as_str()).collect();

    let path = run.logs().join(format!(
        "train_{kind}_s{master}_pm{}.csv",
        crate::experiment::fmt_dbw(cfg.p_max_dbw)
    ));
    let mut csv = CsvFile::create(&path, cfg, &column_refs)?;
    for rec in &report.log {
        let mut row = vec![
            rec.epoch.to_string(),
            fmt_f64(rec.lagrangian),
            fmt_f64(rec.g_qtilde),
        ];
        row.extend(rec.lambda_q.iter().map(|v| fmt_f64(*v)));
        row.extend(rec.lambda_r.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(rec.val_weighted_per));
        csv.row(&row)?;
    }
    csv.finish()
}
