//! Federated learning over the power-controlled wireless uplink.
//!
//! Each round: a fresh channel realization is drawn, the power policy
//! allocates uplink powers, every worker runs local training from the
//! broadcast global model, uploads succeed or fail as Bernoulli draws
//! on their packet error rates (CRC is modeled as perfect error
//! detection), and the server aggregates the successfully received
//! local models weighted by their sample counts:
//!
//! ```text
//! w_gl = sum_i k_i w_i S_i / sum_i k_i S_i
//! ```
//!
//! A round in which every upload fails keeps the previous global model
//! (a logged stall). The ideal mode forces every `S_i = 1`, giving the
//! no-transmission-loss reference curve.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{build_csi, generate_channels, per_from_sinr, sinr, CsiMatrix};
use crate::dataio::{LabeledDataset, CLASSES};
use crate::diffcore::{adam_step, AdamHyper, AdamState, Tape, Tensor};
use crate::error::{CoreError, Result};
use crate::policy::{baseline_select, save_model, ModelKind, Policy, PolicyKind};
use crate::seed::{stage_rng, subseed};
use crate::zero_power_epsilon;

/// Input dimensionality of the classifier.
pub const CLASSIFIER_INPUT: usize = 784;
/// Hidden width of the classifier.
pub const CLASSIFIER_HIDDEN: usize = 50;

/// The FL task model: one hidden layer of 50 tanh units into a 10-way
/// softmax, trained with cross entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl Classifier {
    /// Serialized upload size: every parameter at 32 bits.
    pub const PAYLOAD_BITS: f64 = (Self::PARAM_COUNT * 32) as f64;

    /// 784*50 + 50 + 50*10 + 10.
    pub const PARAM_COUNT: usize = CLASSIFIER_INPUT * CLASSIFIER_HIDDEN
        + CLASSIFIER_HIDDEN
        + CLASSIFIER_HIDDEN * CLASSES
        + CLASSES;

    /// Fan-based uniform init for the weights, zero biases.
    pub fn new_seeded(seed: u64) -> Self {
        let mut rng = stage_rng(seed, "classifier-init");
        let mut layer = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let vals: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(vec![rows, cols], vals).expect("sized")
        };
        Classifier {
            w1: layer(CLASSIFIER_INPUT, CLASSIFIER_HIDDEN),
            b1: Tensor::zeros(vec![CLASSIFIER_HIDDEN]),
            w2: layer(CLASSIFIER_HIDDEN, CLASSES),
            b2: Tensor::zeros(vec![CLASSES]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn params(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_vec(&self) -> Vec<Tensor> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }

    fn set_params(&mut self, params: Vec<Tensor>) {
        let mut it = params.into_iter();
        self.w1 = it.next().expect("w1");
        self.b1 = it.next().expect("b1");
        self.w2 = it.next().expect("w2");
        self.b2 = it.next().expect("b2");
    }

    /// Plain forward pass (no tape) for evaluation.
    fn logits(&self, inputs: &[f64], n: usize) -> Vec<f64> {
        let (d, h, c) = (CLASSIFIER_INPUT, CLASSIFIER_HIDDEN, CLASSES);
        let mut hidden = vec![0.0; n * h];
        for i in 0..n {
            let x = &inputs[i * d..(i + 1) * d];
            let row = &mut hidden[i * h..(i + 1) * h];
            row.copy_from_slice(self.b1.values());
            for (k, xk) in x.iter().enumerate() {
                if *xk == 0.0 {
                    continue;
                }
                let wrow = &self.w1.values()[k * h..(k + 1) * h];
                for j in 0..h {
                    row[j] += xk * wrow[j];
                }
            }
            for v in row.iter_mut() {
                *v = v.tanh();
            }
        }
        let mut logits = vec![0.0; n * c];
        for i in 0..n {
            let hrow = &hidden[i * h..(i + 1) * h];
            let orow = &mut logits[i * c..(i + 1) * c];
            orow.copy_from_slice(self.b2.values());
            for (k, hk) in hrow.iter().enumerate() {
                let wrow = &self.w2.values()[k * c..(k + 1) * c];
                for j in 0..c {
                    orow[j] += hk * wrow[j];
                }
            }
        }
        logits
    }

    /// Mean cross-entropy loss on a sample set.
    pub fn mean_loss(&self, inputs: &[f64], labels: &[usize]) -> f64 {
        let n = labels.len();
        let logits = self.logits(inputs, n);
        let mut loss = 0.0;
        for i in 0..n {
            let row = &logits[i * CLASSES..(i + 1) * CLASSES];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss -= (row[labels[i]] - max) - denom.ln();
        }
        loss / n as f64
    }

    /// Fraction of misclassified samples.
    pub fn test_error(&self, data: &LabeledDataset) -> f64 {
        let n = data.len();
        let logits = self.logits(data.inputs(), n);
        let mut wrong = 0usize;
        for i in 0..n {
            let row = &logits[i * CLASSES..(i + 1) * CLASSES];
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (c, v) in row.iter().enumerate() {
                if *v > best.0 {
                    best = (*v, c);
                }
            }
            if best.1 != data.label(i) {
                wrong += 1;
            }
        }
        wrong as f64 / n as f64
    }

    /// One pass over the given samples in shuffled minibatches with
    /// Adam; optimizer state is fresh for the call. Returns the mean
    /// loss before and after.
    pub fn train_epochs(
        &mut self,
        inputs: &[f64],
        labels: &[usize],
        cfg: &LocalTrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<LocalStats> {
        if cfg.lr < 0.0 {
            return Err(CoreError::Config(format!(
                "local learning rate must be >= 0, got {}",
                cfg.lr
            )));
        }
        if cfg.batch_size == 0 {
            return Err(CoreError::Config("local batch size must be >= 1".into()));
        }
        let n = labels.len();
        let d = CLASSIFIER_INPUT;
        let loss_before = self.mean_loss(inputs, labels);
        if cfg.lr == 0.0 {
            return Ok(LocalStats {
                loss_before,
                loss_after: loss_before,
            });
        }

        let mut params = self.params_vec();
        let mut adam = AdamState::new(&params);
        let hyper = AdamHyper::with_lr(cfg.lr);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mut x = Vec::with_capacity(chunk.len() * d);
                let mut y = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    x.extend_from_slice(&inputs[i * d..(i + 1) * d]);
                    y.push(labels[i]);
                }
                let mut tape = Tape::new();
                let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
                let xv = tape.leaf(Tensor::new(vec![chunk.len(), d], x)?);
                let pre1 = tape.matmul(xv, vars[0])?;
                let pre1b = tape.add_row(pre1, vars[1])?;
                let hidden = tape.tanh(pre1b)?;
                let pre2 = tape.matmul(hidden, vars[2])?;
                let logits = tape.add_row(pre2, vars[3])?;
                let loss = tape.softmax_cross_entropy(logits, &y)?;
                tape.backward(loss)?;
                let grads: Vec<Vec<f64>> = vars
                    .iter()
                    .map(|v| tape.grad(*v).map(|g| g.to_vec()))
                    .collect::<Result<_>>()?;
                let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
                adam_step(&mut params, &refs, &mut adam, &hyper)?;
            }
        }
        self.set_params(params);
        Ok(LocalStats {
            loss_before,
            loss_after: self.mean_loss(inputs, labels),
        })
    }

    /// Writes the classifier in the model checkpoint format.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let dims = [CLASSIFIER_INPUT, CLASSIFIER_HIDDEN, CLASSES];
        let slices: Vec<&[f64]> = self.params().iter().map(|t| t.values()).collect();
        save_model(path, ModelKind::Classifier, &dims, &slices)
    }

    /// Reads a classifier back from the model checkpoint format.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (kind, dims, flat) = crate::policy::load_model(path)?;
        if kind != ModelKind::Classifier
            || dims != [CLASSIFIER_INPUT, CLASSIFIER_HIDDEN, CLASSES]
            || flat.len() != Self::PARAM_COUNT
        {
            return Err(CoreError::Config(format!(
                "not a classifier checkpoint (kind {kind:?}, dims {dims:?}, {} weights)",
                flat.len()
            )));
        }
        let (d, h, c) = (CLASSIFIER_INPUT, CLASSIFIER_HIDDEN, CLASSES);
        let mut off = 0;
        let mut take = |n: usize| {
            let s = flat[off..off + n].to_vec();
            off += n;
            s
        };
        Ok(Classifier {
            w1: Tensor::new(vec![d, h], take(d * h))?,
            b1: Tensor::new(vec![h], take(h))?,
            w2: Tensor::new(vec![h, c], take(h * c))?,
            b2: Tensor::new(vec![c], take(c))?,
        })
    }
}

/// Local training hyperparameters.
#[derive(Debug, Clone)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        LocalTrainConfig {
            epochs: 1,
            batch_size: 16,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LocalStats {
    pub loss_before: f64,
    pub loss_after: f64,
}

/// One FL worker: its data shard, aggregation weight, and local model.
#[derive(Debug, Clone)]
pub struct FlWorker {
    pub id: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    /// `omega_i = k_i / K`.
    pub weight: f64,
    pub model: Classifier,
}

impl FlWorker {
    /// Shard size `k_i`.
    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }
}

/// Per-worker shard sizes `k_i ~ U{20..200}`, the shared draw used by
/// both data partitioning and the objective weights of policy training.
pub fn draw_worker_counts(l: usize, seed: u64) -> Vec<usize> {
    let mut rng = stage_rng(seed, "worker-counts");
    (0..l).map(|_| rng.gen_range(20..=200)).collect()
}

/// Objective weights `omega_i = k_i / K` implied by the shard draw.
pub fn worker_weights(l: usize, seed: u64) -> Vec<f64> {
    let counts = draw_worker_counts(l, seed);
    let total: usize = counts.iter().sum();
    counts.iter().map(|k| *k as f64 / total as f64).collect()
}

/// Splits a dataset into `l` disjoint shards of `k_i ~ U{20..200}`
/// samples drawn without replacement; every worker starts from the same
/// seeded classifier.
pub fn partition_data(dataset: &LabeledDataset, l: usize, seed: u64) -> Result<Vec<FlWorker>> {
    if l == 0 {
        return Err(CoreError::Config("need at least one worker".into()));
    }
    let needed = l * 200;
    if dataset.len() < needed {
        return Err(CoreError::InsufficientData {
            needed,
            available: dataset.len(),
        });
    }
    let counts = draw_worker_counts(l, seed);
    let total: usize = counts.iter().sum();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = stage_rng(seed, "partition-shuffle");
    order.shuffle(&mut rng);

    let init = Classifier::new_seeded(subseed(seed, "fl-global-init"));
    let d = dataset.dim();
    let mut workers = Vec::with_capacity(l);
    let mut cursor = 0usize;
    for (id, k) in counts.iter().enumerate() {
        let mut inputs = Vec::with_capacity(k * d);
        let mut labels = Vec::with_capacity(*k);
        for &idx in &order[cursor..cursor + k] {
            inputs.extend_from_slice(dataset.input(idx));
            labels.push(dataset.label(idx));
        }
        cursor += k;
        workers.push(FlWorker {
            id,
            inputs,
            labels,
            weight: *k as f64 / total as f64,
            model: init.clone(),
        });
    }
    Ok(workers)
}

/// Runs one local training pass on the worker's shard.
pub fn local_train(
    worker: &mut FlWorker,
    cfg: &LocalTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LocalStats> {
    let inputs = worker.inputs.clone();
    let labels = worker.labels.clone();
    worker.model.train_epochs(&inputs, &labels, cfg, rng)
}

/// Wireless outcome of one round's uploads.
#[derive(Debug, Clone)]
pub struct TransmitOutcome {
    pub powers: Vec<f64>,
    pub sinr: Vec<f64>,
    pub per: Vec<f64>,
    /// `S_i`: transmitted with nonzero power and passed the CRC.
    pub success: Vec<bool>,
}

/// Independent Bernoulli success draws at `1 - per_i` for transmitting
/// workers; silent workers never succeed.
pub fn bernoulli_success(per: &[f64], transmitting: &[bool], rng: &mut ChaCha8Rng) -> Vec<bool> {
    per.iter()
        .zip(transmitting)
        .map(|(q, t)| {
            let u: f64 = rng.gen();
            *t && u >= *q
        })
        .collect()
}

/// Allocates powers with the policy and draws each upload's outcome.
pub fn transmit(
    policy: &mut Policy,
    csi: &CsiMatrix,
    waterfall_m: f64,
    p_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TransmitOutcome> {
    let powers = policy.allocate(csi, p_max)?;
    transmit_with_powers(&powers, csi, waterfall_m, p_max, rng)
}

/// The Bernoulli/CRC part of a round, for already-allocated powers.
pub fn transmit_with_powers(
    powers: &[f64],
    csi: &CsiMatrix,
    waterfall_m: f64,
    p_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TransmitOutcome> {
    let eps = zero_power_epsilon(p_max);
    let s = sinr(powers, csi)?;
    let per = per_from_sinr(&s, waterfall_m);
    let transmitting: Vec<bool> = powers.iter().map(|p| *p > eps).collect();
    let success = bernoulli_success(&per, &transmitting, rng);
    Ok(TransmitOutcome {
        powers: powers.to_vec(),
        sinr: s,
        per,
        success,
    })
}

/// Sample-count-weighted average of the successfully received local
/// models; `None` when every upload failed (the round stalls).
pub fn aggregate(workers: &[FlWorker], success: &[bool]) -> Option<Classifier> {
    let total: f64 = workers
        .iter()
        .zip(success)
        .filter(|(_, s)| **s)
        .map(|(w, _)| w.samples() as f64)
        .sum();
    if total == 0.0 {
        return None;
    }
    let mut acc: Option<Vec<Tensor>> = None;
    for (worker, ok) in workers.iter().zip(success) {
        if !ok {
            continue;
        }
        let scale = worker.samples() as f64 / total;
        let params = worker.model.params_vec();
        match acc.as_mut() {
            None => {
                acc = Some(
                    params
                        .into_iter()
                        .map(|mut t| {
                            t.values_mut().iter_mut().for_each(|v| *v *= scale);
                            t
                        })
                        .collect(),
                );
            }
            Some(acc) => {
                for (a, p) in acc.iter_mut().zip(&params) {
                    for (av, pv) in a.values_mut().iter_mut().zip(p.values()) {
                        *av += scale * pv;
                    }
                }
            }
        }
    }
    let mut out = workers[0].model.clone();
    out.set_params(acc.expect("at least one success"));
    Some(out)
}

/// Configuration of one federated run.
#[derive(Debug, Clone)]
pub struct FlRunConfig {
    pub rounds: usize,
    pub l: usize,
    pub n_r: usize,
    pub pathloss_spread_db: f64,
    pub interference_scale: f64,
    pub p_max: f64,
    pub waterfall_m: f64,
    pub bandwidth_hz: f64,
    /// Force every `S_i = 1` (no transmission loss).
    pub ideal: bool,
    pub master_seed: u64,
    pub local: LocalTrainConfig,
    /// Size of the held-out evaluation subsample.
    pub test_samples: usize,
    /// Rate floors for masking the model-based baselines; learned
    /// policies are never masked.
    pub baseline_rate_floors: Option<Vec<f64>>,
    /// Write `w_gl` checkpoints here every `checkpoint_every` rounds.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl FlRunConfig {
    pub fn new(l: usize, master_seed: u64) -> Self {
        FlRunConfig {
            rounds: 50,
            l,
            n_r: 10,
            pathloss_spread_db: crate::channel::DEFAULT_PATHLOSS_SPREAD_DB,
            interference_scale: 1.0,
            p_max: crate::dbw_to_watts(-20.0),
            waterfall_m: crate::channel::DEFAULT_WATERFALL_M,
            bandwidth_hz: crate::channel::DEFAULT_BANDWIDTH_HZ,
            ideal: false,
            master_seed,
            local: LocalTrainConfig::default(),
            test_samples: 1000,
            baseline_rate_floors: None,
            checkpoint_dir: None,
            checkpoint_every: 10,
        }
    }
}

/// Everything logged about one FL round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    /// Generator stream index of the round's channel draw (rounds draw
    /// from consecutive streams of the run's channel seed).
    pub channel_stream: u64,
    pub powers: Vec<f64>,
    pub sinr: Vec<f64>,
    pub per: Vec<f64>,
    pub success: Vec<bool>,
    pub participants: Vec<usize>,
    pub stall: bool,
    pub test_error: f64,
}

/// Runs federated training under the given policy. Returns the
/// per-round log (including a round-0 snapshot of the shared
/// initialization) and the final global model.
pub fn run_federated(
    policy: &mut Policy,
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
    cfg: &FlRunConfig,
) -> Result<(Vec<RoundRecord>, Classifier)> {
    if cfg.test_samples == 0 || test_data.len() < cfg.test_samples {
        return Err(CoreError::InsufficientData {
            needed: cfg.test_samples.max(1),
            available: test_data.len(),
        });
    }
    let mut workers = partition_data(train_data, cfg.l, subseed(cfg.master_seed, "fl-partition"))?;

    // Held-out evaluation subsample, fixed for this master seed.
    let mut idx: Vec<usize> = (0..test_data.len()).collect();
    idx.shuffle(&mut stage_rng(cfg.master_seed, "fl-test-subsample"));
    let test_set = test_data.take(&idx[..cfg.test_samples])?;

    let channels = generate_channels(
        cfg.rounds.max(1),
        cfg.l,
        cfg.n_r,
        subseed(cfg.master_seed, "fl-channels"),
        cfg.pathloss_spread_db,
    )?;
    let mut transmit_rng = stage_rng(cfg.master_seed, "fl-transmission");

    let mut global = workers[0].model.clone();
    let mut records = Vec::with_capacity(cfg.rounds + 1);
    records.push(RoundRecord {
        round: 0,
        channel_stream: 0,
        powers: vec![0.0; cfg.l],
        sinr: vec![0.0; cfg.l],
        per: vec![1.0; cfg.l],
        success: vec![false; cfg.l],
        participants: Vec::new(),
        stall: false,
        test_error: global.test_error(&test_set),
    });

    for round in 1..=cfg.rounds {
        let csi = build_csi(&channels[round - 1], cfg.interference_scale)?;

        // Power allocation for this round's channel.
        let mut powers = policy.allocate(&csi, cfg.p_max)?;
        if matches!(policy.kind(), PolicyKind::Rand | PolicyKind::Orth) {
            if let Some(floors) = &cfg.baseline_rate_floors {
                powers = baseline_select(&powers, &csi, floors, cfg.bandwidth_hz)?;
            }
        }

        // Broadcast, then one local pass per worker.
        for worker in workers.iter_mut() {
            worker.model = global.clone();
            let mut rng = stage_rng(
                cfg.master_seed,
                &format!("fl-local-r{round}-w{}", worker.id),
            );
            local_train(worker, &cfg.local, &mut rng)?;
        }

        // Uploads.
        let mut outcome =
            transmit_with_powers(&powers, &csi, cfg.waterfall_m, cfg.p_max, &mut transmit_rng)?;
        if cfg.ideal {
            outcome.success = vec![true; cfg.l];
        }

        // Success-masked aggregation; a fully failed round stalls.
        let stall = match aggregate(&workers, &outcome.success) {
            Some(new_global) => {
                global = new_global;
                false
            }
            None => true,
        };

        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0 {
                global.save(dir.join(format!("global_round{round:04}.fpmdl")))?;
            }
        }

        records.push(RoundRecord {
            round,
            channel_stream: (round - 1) as u64,
            participants: outcome
                .success
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.then_some(i))
                .collect(),
            powers: outcome.powers,
            sinr: outcome.sinr,
            per: outcome.per,
            success: outcome.success,
            stall,
            test_error: global.test_error(&test_set),
        });
    }
    Ok((records, global))
}
