//! Resolved experiment configuration.
//!
//! Resolution order: built-in defaults, then command-line flags, then a
//! `--config` TOML file (file keys take precedence over flags), then
//! `--paper-scale`, which restores the full-scale channel counts and
//! epoch budget regardless of earlier settings.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of workers the system is trained for.
    pub l: usize,
    /// Receive antennas at the base station.
    pub n_r: usize,
    /// Power budget in dBW.
    pub p_max_dbw: f64,
    /// Log-normal pathloss spread in dB.
    pub pathloss_spread_db: f64,
    /// Interference scale of the training/evaluation network.
    pub interference_scale: f64,
    /// Interference-sweep factors.
    pub factors: Vec<f64>,
    /// Power-budget sweep grid in dBW.
    pub pmax_grid_dbw: Vec<f64>,
    /// Size-sweep worker counts.
    pub sizes: Vec<usize>,
    /// Waterfall threshold of the packet error rate.
    pub waterfall_m: f64,
    pub bandwidth_hz: f64,
    pub channels_train: usize,
    pub channels_val: usize,
    pub channels_test: usize,
    /// Primal-dual training epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma_theta: f64,
    pub gamma_q: f64,
    pub gamma_r: f64,
    pub gamma_lambda_q: f64,
    pub gamma_lambda_r: f64,
    /// Apply Adam to the policy-ascent direction (plain ascent if off).
    pub theta_adam: bool,
    /// Drop the `-lambda_q` term from the auxiliary update.
    pub literal_qtilde_update: bool,
    /// Entrywise `ln(1+x)` preconditioning of the CSI input.
    pub log1p_precondition: bool,
    /// Rate floors as a fraction of the per-worker median full-power rate.
    pub r0_rho: f64,
    /// GCN feature-dimension chain (first entry must be 1).
    pub gcn_dims: Vec<usize>,
    /// MLP hidden widths.
    pub mlp_hidden: Vec<usize>,
    /// Master seeds for multi-seed experiments.
    pub seeds: Vec<u64>,
    /// Master seed for single-run commands.
    pub seed: u64,
    /// Federated rounds.
    pub rounds: usize,
    /// Interference scale of the FL wireless environment.
    pub fl_interference_scale: f64,
    pub local_epochs: usize,
    pub local_batch: usize,
    pub local_lr: f64,
    /// Held-out evaluation samples per FL run.
    pub test_samples: usize,
    /// Synthetic corpus size (training shards plus held-out samples).
    pub synth_samples: usize,
    /// Directory with the IDX corpus; synthetic data when absent.
    pub mnist_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            l: 8,
            n_r: 10,
            p_max_dbw: -20.0,
            pathloss_spread_db: 8.0,
            interference_scale: 1.0,
            factors: vec![1.0, 2.0, 4.0, 8.0],
            pmax_grid_dbw: vec![-40.0, -30.0, -20.0, -10.0, 0.0, 10.0],
            sizes: vec![6, 8, 16, 24, 32],
            waterfall_m: 0.023,
            bandwidth_hz: 1e6,
            channels_train: 1000,
            channels_val: 1000,
            channels_test: 1000,
            epochs: 1000,
            batch_size: 64,
            gamma_theta: 1e-3,
            gamma_q: 1e-4,
            gamma_r: 1e-4,
            gamma_lambda_q: 1e-4,
            gamma_lambda_r: 1e-4,
            theta_adam: true,
            literal_qtilde_update: false,
            log1p_precondition: false,
            r0_rho: 0.5,
            gcn_dims: vec![1, 16, 32, 64, 16, 2],
            mlp_hidden: vec![128, 256, 64, 16, 8],
            seeds: vec![0, 1, 2, 3, 4],
            seed: 0,
            rounds: 50,
            fl_interference_scale: 8.0,
            local_epochs: 1,
            local_batch: 16,
            local_lr: 1e-3,
            test_samples: 1000,
            synth_samples: 4000,
            mnist_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn p_max(&self) -> f64 {
        flpower_core::dbw_to_watts(self.p_max_dbw)
    }

    /// §4 workload sizes.
    pub fn apply_paper_scale(&mut self) {
        self.channels_train = 1000;
        self.channels_val = 1000;
        self.channels_test = 1000;
        self.epochs = 1000;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies a partial TOML table on top of this config; unknown keys
    /// are rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut as_value =
            toml::Value::try_from(&*self).context("serializing current config")?;
        let overrides: toml::Value =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let (toml::Value::Table(base), toml::Value::Table(over)) = (&mut as_value, overrides)
        else {
            anyhow::bail!("config file must be a TOML table");
        };
        for (key, value) in over {
            if !base.contains_key(&key) && key != "mnist_dir" {
                anyhow::bail!("unknown config key `{key}` in {}", path.display());
            }
            base.insert(key, value);
        }
        *self = as_value.try_into().context("applying config overrides")?;
        Ok(())
    }
}

/// Flag mirror of [`ExperimentConfig`]; only the flags given on the
/// command line override defaults.
#[derive(Debug, Clone, Args)]
pub struct ConfigFlags {
    /// TOML config file; its keys take precedence over flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restore full-scale channel counts and epochs (1000/1000/1000, 1000).
    #[arg(long, global = true)]
    pub paper_scale: bool,

    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub n_r: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub p_max_dbw: Option<f64>,
    #[arg(long)]
    pub pathloss_spread_db: Option<f64>,
    #[arg(long)]
    pub interference_scale: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub factors: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub pmax_grid_dbw: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub waterfall_m: Option<f64>,
    #[arg(long)]
    pub bandwidth_hz: Option<f64>,
    #[arg(long)]
    pub channels_train: Option<usize>,
    #[arg(long)]
    pub channels_val: Option<usize>,
    #[arg(long)]
    pub channels_test: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub gamma_theta: Option<f64>,
    #[arg(long)]
    pub gamma_q: Option<f64>,
    #[arg(long)]
    pub gamma_r: Option<f64>,
    #[arg(long)]
    pub gamma_lambda_q: Option<f64>,
    #[arg(long)]
    pub gamma_lambda_r: Option<f64>,
    #[arg(long)]
    pub theta_adam: Option<bool>,
    #[arg(long)]
    pub literal_qtilde_update: Option<bool>,
    #[arg(long)]
    pub log1p_precondition: Option<bool>,
    #[arg(long)]
    pub r0_rho: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gcn_dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub mlp_hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub fl_interference_scale: Option<f64>,
    #[arg(long)]
    pub local_epochs: Option<usize>,
    #[arg(long)]
    pub local_batch: Option<usize>,
    #[arg(long)]
    pub local_lr: Option<f64>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub synth_samples: Option<usize>,
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
}

impl ConfigFlags {
    /// Resolves defaults -> flags -> config file -> paper scale.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        macro_rules! take {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        take!(
            l, n_r, p_max_dbw, pathloss_spread_db, interference_scale, factors, pmax_grid_dbw,
            sizes, waterfall_m, bandwidth_hz, channels_train, channels_val, channels_test, epochs,
            batch_size, gamma_theta, gamma_q, gamma_r, gamma_lambda_q, gamma_lambda_r, theta_adam,
            literal_qtilde_update, log1p_precondition, r0_rho, gcn_dims, mlp_hidden, seeds, seed,
            rounds, fl_interference_scale, local_epochs, local_batch, local_lr, test_samples,
            synth_samples,
        );
        if let Some(dir) = &self.mnist_dir {
            cfg.mnist_dir = Some(dir.clone());
        }
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if self.paper_scale {
            cfg.apply_paper_scale();
        }
        Ok(cfg)
    }
}
