//! `flpower fl-run`: federated learning under each power policy plus
//! the no-loss reference, with per-seed curves and their means.

use std::path::Path;

use anyhow::{Context, Result};

use flpower_core::dataio::{read_idx, synth_dataset, LabeledDataset};
use flpower_core::flsim::{run_federated, FlRunConfig, LocalTrainConfig, RoundRecord};
use flpower_core::pdtrain::default_rate_floors;
use flpower_core::policy::{Policy, PolicyKind, RandPolicy};
use flpower_core::seed::subseed;

use crate::config::ExperimentConfig;
use crate::experiment::{csis, policy_for, SeedEnv};
use crate::output::{fmt_f64, CsvFile, RunDir};

const FL_POLICIES: [&str; 5] = ["ideal", "gcn", "mlp", "rand", "orth"];

pub fn run(cfg: &ExperimentConfig, ckpt_dir: &Path, out: &Path) -> Result<()> {
    let run = RunDir::prepare(out, cfg)?;
    let path = run.root().join("fl.csv");
    let mut csv = CsvFile::create(&path, cfg, &["policy", "seed", "round", "test_error"])?;

    // curves[policy][seed][round]
    let mut curves: Vec<Vec<Vec<f64>>> = vec![Vec::new(); FL_POLICIES.len()];
    for &master in &cfg.seeds {
        let (train_data, test_data) = load_fl_data(cfg, master)?;
        let env = SeedEnv::build(cfg, master)?;
        let fl_floors = default_rate_floors(
            &csis(&env.splits.train, cfg.fl_interference_scale),
            cfg.p_max(),
            cfg.bandwidth_hz,
            cfg.r0_rho,
        )?;

        for (pi, name) in FL_POLICIES.iter().enumerate() {
            let (mut policy, ideal) = match *name {
                "ideal" => (Policy::Orth, true),
                "gcn" => (policy_for(PolicyKind::Gcn, ckpt_dir, master, cfg.p_max_dbw)?, false),
                "mlp" => (policy_for(PolicyKind::Mlp, ckpt_dir, master, cfg.p_max_dbw)?, false),
                "rand" => (
                    Policy::Rand(RandPolicy::new(subseed(master, "fl-rand"))),
                    false,
                ),
                _ => (Policy::Orth, false),
            };
            let masked = matches!(*name, "rand" | "orth");

            let mut fl = FlRunConfig::new(cfg.l, master);
            fl.rounds = cfg.rounds;
            fl.n_r = cfg.n_r;
            fl.pathloss_spread_db = cfg.pathloss_spread_db;
            fl.interference_scale = cfg.fl_interference_scale;
            fl.p_max = cfg.p_max();
            fl.waterfall_m = cfg.waterfall_m;
            fl.bandwidth_hz = cfg.bandwidth_hz;
            fl.ideal = ideal;
            fl.local = LocalTrainConfig {
                epochs: cfg.local_epochs,
                batch_size: cfg.local_batch,
                lr: cfg.local_lr,
            };
            fl.test_samples = cfg.test_samples;
            fl.baseline_rate_floors = masked.then(|| fl_floors.clone());
            let ckpt_sub = run.checkpoints().join(format!("fl_{name}_s{master}"));
            std::fs::create_dir_all(&ckpt_sub)?;
            fl.checkpoint_dir = Some(ckpt_sub);

            let (records, _) = run_federated(&mut policy, &train_data, &test_data, &fl)
                .with_context(|| format!("fl run for {name}, seed {master}"))?;
            write_round_log(&run, cfg, name, master, &records)?;
            for rec in &records {
                csv.row(&[
                    name.to_string(),
                    master.to_string(),
                    rec.round.to_string(),
                    fmt_f64(rec.test_error),
                ])?;
            }
            curves[pi].push(records.iter().map(|r| r.test_error).collect());
        }
    }

    // Mean curves across seeds.
    for (pi, name) in FL_POLICIES.iter().enumerate() {
        let runs = &curves[pi];
        for round in 0..=cfg.rounds {
            let mean = runs.iter().map(|c| c[round]).sum::<f64>() / runs.len() as f64;
            csv.row(&[
                name.to_string(),
                "mean".to_string(),
                round.to_string(),
                fmt_f64(mean),
            ])?;
        }
        let final_mean = runs.iter().map(|c| c[cfg.rounds]).sum::<f64>() / runs.len() as f64;
        println!("{name:5}: mean final test error {final_mean:.4}");
    }
    csv.finish()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_fl_data(cfg: &ExperimentConfig, master: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let mnist = cfg
        .mnist_dir
        .clone()
        .or_else(flpower_core::dataio::mnist_dir_from_env);
    if let Some(dir) = mnist {
        let train = read_idx(
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )?;
        let test = read_idx(
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )?;
        return Ok((train, test));
    }
    // Offline fallback: one synthetic corpus per master seed, split into
    // training shards and held-out samples.
    let corpus = synth_dataset(cfg.synth_samples, subseed(master, "synth"))?;
    let held_out = cfg.test_samples.min(cfg.synth_samples / 4);
    let cut = cfg.synth_samples - held_out;
    let train = corpus.take(&(0..cut).collect::<Vec<_>>())?;
    let test = corpus.take(&(cut..cfg.synth_samples).collect::<Vec<_>>())?;
    Ok((train, test))
}

fn write_round_log(
    run: &RunDir,
    cfg: &ExperimentConfig,
    name: &str,
    master: u64,
    records: &[RoundRecord],
) -> Result<()> {
    let mut columns = vec!["round".to_string(), "channel_stream".into()];
    for prefix in ["power", "sinr", "per", "success"] {
        for i in 0..cfg.l {
            columns.push(format!("{prefix}_{i}"));
        }
    }
    columns.push("stall".into());
    columns.push("test_error".into());
    let refs: Vec<&str> = columns.iter().map(|c| c.as_str()).collect();

    let path = run.fl().join(format!("rounds_{name}_s{master}.csv"));
    let mut csv = CsvFile::create(&path, cfg, &refs)?;
    for rec in records {
        let mut row = vec![rec.round.to_string(), rec.channel_stream.to_string()];
        row.extend(rec.powers.iter().map(|v| fmt_f64(*v)));
        row.extend(rec.sinr.iter().map(|v| fmt_f64(*v)));
        row.extend(rec.per.iter().map(|v| fmt_f64(*v)));
        row.extend(rec.success.iter().map(|s| u8::from(*s).to_string()));
        row.push(u8::from(rec.stall).to_string());
        row.push(fmt_f64(rec.test_error));
        csv.row(&row)?;
    }
    csv.finish()
}
