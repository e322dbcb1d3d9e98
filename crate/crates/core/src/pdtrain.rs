//! Primal-dual constrained learning of power policies.
//!
//! The trained objective is the weighted sum of expected transmission
//! success probabilities, subject to per-worker constraints: the
//! auxiliary success probabilities must be achievable
//! (`q <= E_H[1 - PER]`), the conditional expected rate of transmitting
//! workers must reach its floor (`r_0 <= r <= E_H[rate | transmitting]`),
//! and powers stay in `[0, P_max]` by construction of the policies.
//! With nonnegative multipliers `lambda_q`, `lambda_r` the Lagrangian is
//!
//! ```text
//! L = g(q) + lambda_q' (E[f_q] - q) + lambda_r' (E[f_r] - r)
//! ```
//!
//! and one iteration applies, in order,
//!
//! ```text
//! (a) Theta    += gamma_T (grad_T E[f_q] lambda_q + grad_T E[f_r] lambda_r)
//! (b) q        <- clip_[0,1]( q + gamma_q (grad g(q) - lambda_q) )
//! (c) r        <- proj_[r0,inf)( r - gamma_r lambda_r )
//! (d) lambda_q <- [ lambda_q - gamma_lq (E[f_q] - q_new) ]+
//! (e) lambda_r <- [ lambda_r - gamma_lr (E[f_r] - r_new) ]+
//! ```
//!
//! Expectations are estimated empirically over channel minibatches. The
//! `- lambda_q` term in (b) is the full Lagrangian gradient; a literal
//! mode drops it (`literal_qtilde_update`), reproducing plain ascent on
//! `g` at the cost of `q` drifting to its clip boundary. Workers that
//! never transmit in a batch have an undefined conditional rate
//! estimate; their (e) update is skipped for that iteration.
//!
//! Step (a) is plain gradient ascent when `theta_adam` is off. The
//! default applies Adam to the ascent direction instead: the raw
//! gradient scale is proportional to the policy's input scale (`P_max`,
//! hundredths of a watt at the default budget), which makes plain
//! ascent with practical step sizes immeasurably slow at desk scale.

use rand::seq::SliceRandom;

use crate::channel::{
    per_from_sinr, rate_on_tape, rates_from_sinr, sinr, sinr_on_tape, success_prob_on_tape,
    CsiMatrix,
};
use crate::diffcore::{adam_step, AdamHyper, AdamState, Tape, Tensor, Var};
use crate::error::{CoreError, Result};
use crate::policy::{Policy, TrainablePolicy};
use crate::seed::stage_rng;
use crate::zero_power_epsilon;

/// Everything one training run needs besides the channel data.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub p_max: f64,
    pub waterfall_m: f64,
    pub bandwidth_hz: f64,
    /// Per-worker objective weights (`omega`).
    pub weights: Vec<f64>,
    /// Per-worker rate floors (`r_0`), same units as the rates.
    pub rate_floors: Vec<f64>,
    pub gamma_theta: f64,
    pub gamma_q: f64,
    pub gamma_r: f64,
    pub gamma_lambda_q: f64,
    pub gamma_lambda_r: f64,
    /// Drop the `-lambda_q` term in update (b).
    pub literal_qtilde_update: bool,
    /// Apply Adam to the step-(a) ascent direction instead of a plain
    /// gradient step.
    pub theta_adam: bool,
    /// Initial value of both multiplier vectors.
    pub init_lambda: f64,
    /// Seed for the epoch shuffles.
    pub seed: u64,
    /// Abort when validation worsens by this factor from its best...
    pub divergence_factor: f64,
    /// ...for this many consecutive epochs.
    pub divergence_patience: usize,
}

impl TrainConfig {
    /// Defaults for a system with the given weights and rate floors:
    /// 1000 epochs, batches of 64, `gamma_Theta = 1e-3`, all other step
    /// sizes `1e-4`, multipliers starting at 1.
    pub fn new(weights: Vec<f64>, rate_floors: Vec<f64>) -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 64,
            p_max: crate::dbw_to_watts(-20.0),
            waterfall_m: crate::channel::DEFAULT_WATERFALL_M,
            bandwidth_hz: crate::channel::DEFAULT_BANDWIDTH_HZ,
            weights,
            rate_floors,
            gamma_theta: 1e-3,
            gamma_q: 1e-4,
            gamma_r: 1e-4,
            gamma_lambda_q: 1e-4,
            gamma_lambda_r: 1e-4,
            literal_qtilde_update: false,
            theta_adam: true,
            init_lambda: 1.0,
            seed: 0,
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }

    fn workers(&self) -> usize {
        self.weights.len()
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.rate_floors.len() != self.weights.len() {
            return Err(CoreError::Config(format!(
                "weights ({}) and rate floors ({}) must be nonempty and agree",
                self.weights.len(),
                self.rate_floors.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be >= 1".into()));
        }
        if !(self.p_max > 0.0) || !(self.waterfall_m > 0.0) || !(self.bandwidth_hz > 0.0) {
            return Err(CoreError::Config(
                "P_max, waterfall threshold, and bandwidth must be positive".into(),
            ));
        }
        for g in [
            self.gamma_theta,
            self.gamma_q,
            self.gamma_r,
            self.gamma_lambda_q,
            self.gamma_lambda_r,
        ] {
            if g < 0.0 || !g.is_finite() {
                return Err(CoreError::Config(format!(
                    "step sizes must be >= 0, got {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Auxiliary primal variables and nonnegative multipliers.
///
/// Invariants maintained by every update: `lambda_q, lambda_r >= 0`
/// elementwise, `r >= r_0` elementwise, `q_tilde` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct PrimalDualState {
    pub q_tilde: Vec<f64>,
    pub r: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub lambda_r: Vec<f64>,
    adam: Option<AdamState>,
    steps: u64,
}

impl PrimalDualState {
    /// Fresh state: `q = 0.5`, `r = r_0`, multipliers at
    /// `cfg.init_lambda` (strictly positive multipliers activate the
    /// constraint gradients from the first step).
    pub fn new<P: TrainablePolicy + ?Sized>(cfg: &TrainConfig, policy: &P) -> Self {
        let l = cfg.workers();
        PrimalDualState {
            q_tilde: vec![0.5; l],
            r: cfg.rate_floors.clone(),
            lambda_q: vec![cfg.init_lambda; l],
            lambda_r: vec![cfg.init_lambda; l],
            adam: cfg.theta_adam.then(|| AdamState::new(policy.params())),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Empirical constraint expectations over one channel batch.
#[derive(Debug, Clone)]
pub struct BatchEstimates {
    /// Mean success probability per worker.
    pub f_q_hat: Vec<f64>,
    /// Conditional mean rate over transmitting samples; meaningful only
    /// where `transmit_counts > 0`.
    pub f_r_hat: Vec<f64>,
    /// Number of batch samples in which each worker transmitted.
    pub transmit_counts: Vec<usize>,
}

impl BatchEstimates {
    pub fn f_r_defined(&self, worker: usize) -> bool {
        self.transmit_counts[worker] > 0
    }
}

struct BatchGraph {
    tape: Tape,
    theta: Vec<Var>,
    f_q: Var,
    f_r: Var,
    estimates: BatchEstimates,
}

fn build_batch_graph<P: TrainablePolicy + ?Sized>(
    policy: &P,
    batch: &[CsiMatrix],
    cfg: &TrainConfig,
) -> Result<BatchGraph> {
    if batch.is_empty() {
        return Err(CoreError::Config("empty channel batch".into()));
    }
    let l = cfg.workers();
    let eps = zero_power_epsilon(cfg.p_max);
    let mut tape = Tape::new();
    let theta = policy.register_params(&mut tape);

    let mut counts = vec![0usize; l];
    let mut sum_q: Option<Var> = None;
    let mut sum_rate: Option<Var> = None;
    for csi in batch {
        if csi.workers() != l {
            return Err(CoreError::DimensionMismatch {
                expected: l,
                got: csi.workers(),
            });
        }
        let p = policy.forward_with(&mut tape, &theta, csi, cfg.p_max)?;
        // The transmit indicator is a constant during differentiation.
        let mask: Vec<f64> = tape
            .values(p)
            .iter()
            .map(|pi| if *pi > eps { 1.0 } else { 0.0 })
            .collect();
        for (c, m) in counts.iter_mut().zip(&mask) {
            *c += *m as usize;
        }
        let s = sinr_on_tape(&mut tape, p, csi)?;
        // Shift silent workers' SINR to 1 before the exp so the graph
        // stays finite, then mask their success back to the limit value
        // 0 (= 1 - PER at zero SINR) with zero gradient.
        let silent: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
        let silent_leaf = tape.leaf_vector(&silent);
        let s_guarded = tape.add(s, silent_leaf)?;
        let q_raw = success_prob_on_tape(&mut tape, s_guarded, cfg.waterfall_m)?;
        let mask_leaf = tape.leaf_vector(&mask);
        let q = tape.mul(mask_leaf, q_raw)?;
        let rate = rate_on_tape(&mut tape, s, cfg.bandwidth_hz)?;
        let masked_rate = tape.mul(mask_leaf, rate)?;
        sum_q = Some(match sum_q {
            Some(acc) => tape.add(acc, q)?,
            None => q,
        });
        sum_rate = Some(match sum_rate {
            Some(acc) => tape.add(acc, masked_rate)?,
            None => masked_rate,
        });
    }
    let f_q = tape.scale(sum_q.expect("nonempty batch"), 1.0 / batch.len() as f64);
    let inv_counts: Vec<f64> = counts
        .iter()
        .map(|c| if *c > 0 { 1.0 / *c as f64 } else { 0.0 })
        .collect();
    let inv_leaf = tape.leaf_vector(&inv_counts);
    let f_r = tape.mul(inv_leaf, sum_rate.expect("nonempty batch"))?;

    let estimates = BatchEstimates {
        f_q_hat: tape.values(f_q).to_vec(),
        f_r_hat: tape.values(f_r).to_vec(),
        transmit_counts: counts,
    };
    Ok(BatchGraph {
        tape,
        theta,
        f_q,
        f_r,
        estimates,
    })
}

/// Empirical expectations of the constraint quantities under the
/// current policy, over one channel batch.
pub fn estimate_expectations<P: TrainablePolicy + ?Sized>(
    policy: &P,
    batch: &[CsiMatrix],
    cfg: &TrainConfig,
) -> Result<BatchEstimates> {
    Ok(build_batch_graph(policy, batch, cfg)?.estimates)
}

/// Lagrangian value at the given state and batch estimates; undefined
/// conditional-rate terms are omitted.
pub fn lagrangian(state: &PrimalDualState, estimates: &BatchEstimates, weights: &[f64]) -> f64 {
    let g: f64 = weights
        .iter()
        .zip(&state.q_tilde)
        .map(|(w, q)| w * q)
        .sum();
    let mut value = g;
    for i in 0..weights.len() {
        value += state.lambda_q[i] * (estimates.f_q_hat[i] - state.q_tilde[i]);
        if estimates.f_r_defined(i) {
            value += state.lambda_r[i] * (estimates.f_r_hat[i] - state.r[i]);
        }
    }
    value
}

/// Outcome of one primal-dual iteration.
#[derive(Debug, Clone)]
pub struct StepStats {
    /// Lagrangian at the pre-update state under this batch.
    pub lagrangian: f64,
    /// Objective `g(q_tilde)` at the pre-update state.
    pub g_qtilde: f64,
    pub estimates: BatchEstimates,
}

/// One full (a)-(e) update on a channel minibatch.
pub fn primal_dual_step<P: TrainablePolicy + ?Sized>(
    policy: &mut P,
    state: &mut PrimalDualState,
    batch: &[CsiMatrix],
    cfg: &TrainConfig,
) -> Result<StepStats> {
    cfg.validate()?;
    let l = cfg.workers();
    let graph = build_batch_graph(policy, batch, cfg)?;
    let stats = StepStats {
        lagrangian: lagrangian(state, &graph.estimates, &cfg.weights),
        g_qtilde: cfg
            .weights
            .iter()
            .zip(&state.q_tilde)
            .map(|(w, q)| w * q)
            .sum(),
        estimates: graph.estimates.clone(),
    };

    // (a) ascend Theta along grad of lambda_q' f_q + lambda_r' f_r.
    if cfg.gamma_theta > 0.0 && !graph.theta.is_empty() {
        let mut tape = graph.tape;
        let lam_q = tape.leaf_vector(&state.lambda_q);
        let masked_lam_r: Vec<f64> = state
            .lambda_r
            .iter()
            .enumerate()
            .map(|(i, lam)| if graph.estimates.f_r_defined(i) { *lam } else { 0.0 })
            .collect();
        let lam_r = tape.leaf_vector(&masked_lam_r);
        let term_q = tape.dot(lam_q, graph.f_q)?;
        let term_r = tape.dot(lam_r, graph.f_r)?;
        let objective = tape.add(term_q, term_r)?;
        tape.backward(objective)?;
        tape.grads_finite(&graph.theta)?;

        match state.adam.as_mut() {
            Some(adam) => {
                // Adam minimizes; feed the negated ascent direction.
                let neg: Vec<Vec<f64>> = graph
                    .theta
                    .iter()
                    .map(|v| tape.grad(*v).map(|g| g.iter().map(|x| -x).collect()))
                    .collect::<Result<_>>()?;
                let neg_refs: Vec<&[f64]> = neg.iter().map(|g| g.as_slice()).collect();
                adam_step(
                    policy.params_mut(),
                    &neg_refs,
                    adam,
                    &AdamHyper::with_lr(cfg.gamma_theta),
                )?;
            }
            None => {
                for (param, var) in policy.params_mut().iter_mut().zip(&graph.theta) {
                    let g = tape.grad(*var)?;
                    for (p, gi) in param.values_mut().iter_mut().zip(g) {
                        *p += cfg.gamma_theta * gi;
                    }
                }
            }
        }
    }

    // (b) auxiliary success probabilities, clipped to [0, 1].
    for i in 0..l {
        let grad = if cfg.literal_qtilde_update {
            cfg.weights[i]
        } else {
            cfg.weights[i] - state.lambda_q[i]
        };
        state.q_tilde[i] = (state.q_tilde[i] + cfg.gamma_q * grad).clamp(0.0, 1.0);
    }

    // (c) auxiliary rates, projected onto [r_0, inf).
    for i in 0..l {
        state.r[i] = (state.r[i] - cfg.gamma_r * state.lambda_r[i]).max(cfg.rate_floors[i]);
    }

    // (d) success multipliers against the just-updated q.
    for i in 0..l {
        state.lambda_q[i] = (state.lambda_q[i]
            - cfg.gamma_lambda_q * (stats.estimates.f_q_hat[i] - state.q_tilde[i]))
            .max(0.0);
    }

    // (e) rate multipliers against the just-updated r; skipped where the
    // conditional estimate is undefined for this batch.
    for i in 0..l {
        if stats.estimates.f_r_defined(i) {
            state.lambda_r[i] = (state.lambda_r[i]
                - cfg.gamma_lambda_r * (stats.estimates.f_r_hat[i] - state.r[i]))
                .max(0.0);
        }
    }

    state.steps += 1;
    Ok(stats)
}

/// One epoch line of the training log.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean Lagrangian over the epoch's steps.
    pub lagrangian: f64,
    /// Objective `g(q_tilde)` at the end of the epoch.
    pub g_qtilde: f64,
    pub lambda_q: Vec<f64>,
    pub lambda_r: Vec<f64>,
    /// Weighted-sum PER of the policy on the validation channels.
    pub val_weighted_per: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters the policy was restored to (0 = initial).
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Trains a policy with the primal-dual loop over minibatches, keeping
/// the parameters of the epoch with the best validation weighted-sum
/// PER.
pub fn train<P: TrainablePolicy>(
    policy: &mut P,
    train_csi: &[CsiMatrix],
    val_csi: &[CsiMatrix],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_csi.is_empty() || val_csi.is_empty() {
        return Err(CoreError::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let eval_opts = EvalOptions {
        p_max: cfg.p_max,
        waterfall_m: cfg.waterfall_m,
        weights: cfg.weights.clone(),
        rate_mask: None,
    };

    let mut state = PrimalDualState::new(cfg, policy);
    let mut rng = stage_rng(cfg.seed, "pdtrain-shuffle");
    let mut order: Vec<usize> = (0..train_csi.len()).collect();

    let mut best_params: Vec<Tensor> = policy.params().to_vec();
    let mut best_epoch = 0usize;
    let mut best_val =
        weighted_per_with(|csi| policy.allocate(csi, cfg.p_max), val_csi, &eval_opts)?;
    let mut divergence_streak = 0usize;

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut lagrangian_acc = 0.0;
        let mut steps_in_epoch = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<CsiMatrix> = chunk.iter().map(|i| train_csi[*i].clone()).collect();
            let stats = primal_dual_step(policy, &mut state, &batch, cfg)?;
            lagrangian_acc += stats.lagrangian;
            steps_in_epoch += 1;
        }

        let val = weighted_per_with(|csi| policy.allocate(csi, cfg.p_max), val_csi, &eval_opts)?;
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_params = policy.params().to_vec();
        }
        if val > cfg.divergence_factor * best_val {
            divergence_streak += 1;
            if divergence_streak >= cfg.divergence_patience {
                return Err(CoreError::Divergence {
                    current: val,
                    best: best_val,
                    patience: cfg.divergence_patience,
                });
            }
        } else {
            divergence_streak = 0;
        }

        log.push(EpochRecord {
            epoch,
            lagrangian: lagrangian_acc / steps_in_epoch.max(1) as f64,
            g_qtilde: cfg
                .weights
                .iter()
                .zip(&state.q_tilde)
                .map(|(w, q)| w * q)
                .sum(),
            lambda_q: state.lambda_q.clone(),
            lambda_r: state.lambda_r.clone(),
            val_weighted_per: val,
        });
    }

    for (param, best) in policy.params_mut().iter_mut().zip(best_params) {
        *param = best;
    }
    Ok(TrainReport {
        log,
        best_epoch,
        best_val,
    })
}

// ---------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------

/// One-shot rate-floor mask applied to model-based baselines before
/// scoring (learned policies drop workers via their own powers).
#[derive(Debug, Clone)]
pub struct RateMask {
    pub floors: Vec<f64>,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub p_max: f64,
    pub waterfall_m: f64,
    pub weights: Vec<f64>,
    pub rate_mask: Option<RateMask>,
}

/// Weighted-sum PER of an allocation rule over a channel set.
///
/// Per sample this is `sum_i w_i (1 - S_i)` with `S_i` the probability
/// of a successful upload: `(1 - PER_i)` when worker `i` transmits and
/// 0 when it does not, so silent workers count as certain failures.
/// Equivalently, one minus the weighted-success objective.
pub fn weighted_per_with<F>(mut alloc: F, csis: &[CsiMatrix], opts: &EvalOptions) -> Result<f64>
where
    F: FnMut(&CsiMatrix) -> Result<Vec<f64>>,
{
    if csis.is_empty() {
        return Err(CoreError::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let eps = zero_power_epsilon(opts.p_max);
    let mut acc = 0.0;
    for csi in csis {
        let mut p = alloc(csi)?;
        if let Some(mask) = &opts.rate_mask {
            p = crate::policy::baseline_select(&p, csi, &mask.floors, mask.bandwidth_hz)?;
        }
        let s = sinr(&p, csi)?;
        let per = per_from_sinr(&s, opts.waterfall_m);
        let mut failure = 0.0;
        for i in 0..csi.workers() {
            let success = if p[i] > eps { 1.0 - per[i] } else { 0.0 };
            failure += opts.weights[i] * (1.0 - success);
        }
        acc += failure;
    }
    Ok(acc / csis.len() as f64)
}

/// Weighted-sum PER of a concrete policy.
pub fn weighted_per(policy: &mut Policy, csis: &[CsiMatrix], opts: &EvalOptions) -> Result<f64> {
    let p_max = opts.p_max;
    weighted_per_with(|csi| policy.allocate(csi, p_max), csis, opts)
}

/// Per-worker conditional mean rate over the samples where the worker
/// transmits, plus the transmit counts.
pub fn conditional_mean_rates_with<F>(
    mut alloc: F,
    csis: &[CsiMatrix],
    p_max: f64,
    bandwidth_hz: f64,
) -> Result<(Vec<f64>, Vec<usize>)>
where
    F: FnMut(&CsiMatrix) -> Result<Vec<f64>>,
{
    if csis.is_empty() {
        return Err(CoreError::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let l = csis[0].workers();
    let eps = zero_power_epsilon(p_max);
    let mut sums = vec![0.0; l];
    let mut counts = vec![0usize; l];
    for csi in csis {
        let p = alloc(csi)?;
        let rates = rates_from_sinr(&sinr(&p, csi)?, bandwidth_hz);
        for i in 0..l {
            if p[i] > eps {
                sums[i] += rates[i];
                counts[i] += 1;
            }
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
        .collect();
    Ok((means, counts))
}

/// Default rate floors: `rho` times the per-worker median rate achieved
/// by the all-at-`P_max` baseline over the given channels. Guarantees a
/// strictly feasible interior point for the rate constraints.
pub fn default_rate_floors(
    csis: &[CsiMatrix],
    p_max: f64,
    bandwidth_hz: f64,
    rho: f64,
) -> Result<Vec<f64>> {
    if csis.is_empty() {
        return Err(CoreError::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(CoreError::Config(format!(
            "rate-floor fraction must be in [0, 1), got {rho}"
        )));
    }
    let l = csis[0].workers();
    let full = vec![p_max; l];
    let mut per_worker: Vec<Vec<f64>> = vec![Vec::with_capacity(csis.len()); l];
    for csi in csis {
        let rates = rates_from_sinr(&sinr(&full, csi)?, bandwidth_hz);
        for i in 0..l {
            per_worker[i].push(rates[i]);
        }
    }
    Ok(per_worker
        .iter_mut()
        .map(|rates| {
            rates.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
            let n = rates.len();
            let median = if n % 2 == 1 {
                rates[n / 2]
            } else {
                0.5 * (rates[n / 2 - 1] + rates[n / 2])
            };
            rho * median
        })
        .collect())
}
