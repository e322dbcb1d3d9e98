//! Uplink channel generation, the CSI matrix, and the wireless
//! quantities derived from it.
//!
//! A realization holds one complex channel vector per worker (one entry
//! per receive antenna). The CSI matrix `H` condenses it into the real
//! quantities the rest of the system consumes: channel gains
//! `alpha_i = |h_i|^2 / sigma_i^2` on the diagonal and interference
//! coefficients `beta_ij = |h_i^H h_j|^2 / (sigma_i^2 |h_i|^2)` off it.
//! For a power vector `p`,
//!
//! ```text
//! sinr_i = alpha_i p_i / (1 + sum_{j != i} beta_ij p_j)
//! rate_i = B ln(1 + sinr_i)          (nats/s; B absorbs the base)
//! per_i  = 1 - exp(-m / sinr_i)      (1 when sinr_i = 0)
//! delay_i = payload_bits / rate_i    (infinite when rate_i = 0)
//! ```
//!
//! The channel generator is a documented substitute for the external
//! wideband-spatial generator used in the literature: i.i.d.
//! circularly-symmetric complex Gaussian antennas scaled by a per-worker
//! log-normal pathloss gain, noise normalized to `sigma^2 = 1`. All
//! experiments here are comparative across policies on identical draws,
//! so the substitution moves absolute numbers only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{CoreError, Result};

/// Default log-normal pathloss spread in dB.
pub const DEFAULT_PATHLOSS_SPREAD_DB: f64 = 8.0;

/// Default waterfall threshold for the packet error rate.
pub const DEFAULT_WATERFALL_M: f64 = 0.023;

/// Default uplink bandwidth in Hz.
pub const DEFAULT_BANDWIDTH_HZ: f64 = 1e6;

/// Raw per-worker channel vectors plus the receiver noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Worker-major storage: `raw[j * n_r + a]` is antenna `a` of worker `j`.
    raw: Vec<Complex64>,
    n_r: usize,
    l: usize,
    /// Per-worker noise power `sigma_i^2` in linear watts.
    noise_var: Vec<f64>,
}

impl ChannelRealization {
    pub fn from_raw(l: usize, n_r: usize, raw: Vec<Complex64>, noise_var: Vec<f64>) -> Result<Self> {
        if l == 0 || n_r == 0 || raw.len() != l * n_r || noise_var.len() != l {
            return Err(CoreError::Config(format!(
                "channel realization needs L >= 1, n_R >= 1 and {l}x{n_r} entries, got {}",
                raw.len()
            )));
        }
        if noise_var.iter().any(|s| !(*s > 0.0)) {
            return Err(CoreError::Config(
                "noise variance must be strictly positive".into(),
            ));
        }
        for j in 0..l {
            let h = &raw[j * n_r..(j + 1) * n_r];
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(CoreError::NonFinite("channel vector"));
            }
            if h.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                return Err(CoreError::DegenerateChannel { worker: j });
            }
        }
        Ok(ChannelRealization {
            raw,
            n_r,
            l,
            noise_var,
        })
    }

    pub fn workers(&self) -> usize {
        self.l
    }

    pub fn antennas(&self) -> usize {
        self.n_r
    }

    /// Channel vector of worker `j`.
    pub fn h(&self, j: usize) -> &[Complex64] {
        &self.raw[j * self.n_r..(j + 1) * self.n_r]
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }
}

/// The real `L x L` channel-state information matrix: gains on the
/// diagonal, scaled interference coefficients off it.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    entries: Vec<f64>,
    l: usize,
    interference_scale: f64,
}

impl CsiMatrix {
    pub fn new(l: usize, entries: Vec<f64>, interference_scale: f64) -> Result<Self> {
        if entries.len() != l * l {
            return Err(CoreError::ShapeMismatch {
                op: "CsiMatrix::new",
                lhs: vec![l, l],
                rhs: vec![entries.len()],
            });
        }
        for i in 0..l {
            if !(entries[i * l + i] > 0.0) {
                return Err(CoreError::Domain(format!(
                    "CSI diagonal entry {i} must be strictly positive"
                )));
            }
        }
        if entries.iter().any(|e| *e < 0.0 || !e.is_finite()) {
            return Err(CoreError::Domain("CSI entries must be finite and >= 0".into()));
        }
        Ok(CsiMatrix {
            entries,
            l,
            interference_scale,
        })
    }

    pub fn workers(&self) -> usize {
        self.l
    }

    pub fn interference_scale(&self) -> f64 {
        self.interference_scale
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.l + j]
    }

    /// Channel gain `alpha_i`.
    pub fn alpha(&self, i: usize) -> f64 {
        self.at(i, i)
    }

    /// Interference coefficient `beta_ij` (`i != j`).
    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.at(i, j)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.l, self.l], self.entries.clone()).expect("square")
    }

    /// The off-diagonal part, used as the interference mixing matrix.
    pub fn off_diagonal_tensor(&self) -> Tensor {
        let mut vals = self.entries.clone();
        for i in 0..self.l {
            vals[i * self.l + i] = 0.0;
        }
        Tensor::new(vec![self.l, self.l], vals).expect("square")
    }
}

/// Per-worker wireless quantities for one power allocation.
#[derive(Debug, Clone)]
pub struct LinkMetrics {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub per: Vec<f64>,
    pub delay: Vec<f64>,
}

/// Mean linear pathloss gain implied by a log-normal spread in dB.
///
/// With `X ~ N(0, spread_db^2)` in dB the linear gain is
/// `g = 10^(X/10)`, whose mean is `exp((spread_db ln(10)/10)^2 / 2)`.
pub fn mean_pathloss_gain(spread_db: f64) -> f64 {
    let sigma_ln = spread_db * std::f64::consts::LN_10 / 10.0;
    (sigma_ln * sigma_ln / 2.0).exp()
}

/// Draws `count` channel realizations, deterministically per
/// `(seed, index)`: realization `k` uses its own RNG stream, so parallel
/// generation partitions the index space rather than sharing a stream.
pub fn generate_channels(
    count: usize,
    l: usize,
    n_r: usize,
    seed: u64,
    pathloss_spread_db: f64,
) -> Result<Vec<ChannelRealization>> {
    if count == 0 || l == 0 || n_r == 0 {
        return Err(CoreError::Config(format!(
            "generate_channels requires count, L, n_R >= 1 (got {count}, {l}, {n_r})"
        )));
    }
    if pathloss_spread_db < 0.0 {
        return Err(CoreError::Config(
            "pathloss spread must be nonnegative dB".into(),
        ));
    }
    let shadow = Normal::new(0.0, pathloss_spread_db.max(f64::MIN_POSITIVE))
        .map_err(|e| CoreError::Config(format!("bad pathloss spread: {e}")))?;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut raw = Vec::with_capacity(l * n_r);
        for _worker in 0..l {
            let gain_db = if pathloss_spread_db == 0.0 {
                0.0
            } else {
                shadow.sample(&mut rng)
            };
            let gain = 10f64.powf(gain_db / 10.0);
            // Circularly-symmetric complex Gaussian with per-antenna
            // variance `gain`: real and imaginary parts N(0, gain/2).
            let comp = Normal::new(0.0, (gain / 2.0).sqrt()).expect("positive std");
            for _a in 0..n_r {
                raw.push(Complex64::new(comp.sample(&mut rng), comp.sample(&mut rng)));
            }
        }
        out.push(ChannelRealization::from_raw(l, n_r, raw, vec![1.0; l])?);
    }
    Ok(out)
}

/// Builds the CSI matrix of a realization, scaling the interference
/// coefficients by `interference_scale`.
pub fn build_csi(ch: &ChannelRealization, interference_scale: f64) -> Result<CsiMatrix> {
    if !(interference_scale > 0.0) {
        return Err(CoreError::Config(format!(
            "interference scale must be positive, got {interference_scale}"
        )));
    }
    let l = ch.workers();
    let norms: Vec<f64> = (0..l)
        .map(|j| ch.h(j).iter().map(|z| z.norm_sqr()).sum::<f64>())
        .collect();
    for (j, n) in norms.iter().enumerate() {
        if !(*n > 0.0) {
            return Err(CoreError::DegenerateChannel { worker: j });
        }
    }
    let mut entries = vec![0.0; l * l];
    for i in 0..l {
        let sigma2 = ch.noise_var()[i];
        entries[i * l + i] = norms[i] / sigma2;
        for j in 0..l {
            if i == j {
                continue;
            }
            let inner: Complex64 = ch
                .h(i)
                .iter()
                .zip(ch.h(j))
                .map(|(hi, hj)| hi.conj() * hj)
                .sum();
            entries[i * l + j] = interference_scale * inner.norm_sqr() / (sigma2 * norms[i]);
        }
    }
    CsiMatrix::new(l, entries, interference_scale)
}

fn check_powers(p: &[f64], csi: &CsiMatrix) -> Result<()> {
    if p.len() != csi.workers() {
        return Err(CoreError::ShapeMismatch {
            op: "sinr",
            lhs: vec![p.len()],
            rhs: vec![csi.workers()],
        });
    }
    if let Some(bad) = p.iter().find(|x| **x < 0.0 || !x.is_finite()) {
        return Err(CoreError::Domain(format!(
            "powers must be finite and nonnegative, got {bad}"
        )));
    }
    Ok(())
}

/// Per-worker SINR under the power vector `p`.
pub fn sinr(p: &[f64], csi: &CsiMatrix) -> Result<Vec<f64>> {
    check_powers(p, csi)?;
    let l = csi.workers();
    let mut out = vec![0.0; l];
    for i in 0..l {
        let mut interference = 0.0;
        for j in 0..l {
            if j != i {
                interference += csi.beta(i, j) * p[j];
            }
        }
        out[i] = csi.alpha(i) * p[i] / (1.0 + interference);
    }
    Ok(out)
}

/// Packet error rate per worker: `1 - exp(-m / sinr)`, defined as 1 at
/// `sinr = 0` (the limit value).
pub fn per(p: &[f64], csi: &CsiMatrix, m: f64) -> Result<Vec<f64>> {
    if !(m > 0.0) {
        return Err(CoreError::Config(format!(
            "waterfall threshold must be positive, got {m}"
        )));
    }
    Ok(per_from_sinr(&sinr(p, csi)?, m))
}

/// Packet error rate from precomputed SINRs.
pub fn per_from_sinr(sinr: &[f64], m: f64) -> Vec<f64> {
    sinr.iter()
        .map(|s| if *s > 0.0 { 1.0 - (-m / s).exp() } else { 1.0 })
        .collect()
}

/// Achievable rate from precomputed SINRs (nats/s convention).
pub fn rates_from_sinr(sinr: &[f64], bandwidth_hz: f64) -> Vec<f64> {
    sinr.iter().map(|s| bandwidth_hz * s.ln_1p()).collect()
}

/// Rate and transmission delay per worker; delay is `f64::INFINITY`
/// where the rate is zero.
pub fn rate_and_delay(
    p: &[f64],
    csi: &CsiMatrix,
    bandwidth_hz: f64,
    payload_bits: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(bandwidth_hz > 0.0) || !(payload_bits > 0.0) {
        return Err(CoreError::Config(format!(
            "bandwidth and payload must be positive (got {bandwidth_hz}, {payload_bits})"
        )));
    }
    let s = sinr(p, csi)?;
    let rate = rates_from_sinr(&s, bandwidth_hz);
    let delay = rate
        .iter()
        .map(|r| if *r > 0.0 { payload_bits / r } else { f64::INFINITY })
        .collect();
    Ok((rate, delay))
}

/// All link metrics for one allocation.
pub fn link_metrics(
    p: &[f64],
    csi: &CsiMatrix,
    m: f64,
    bandwidth_hz: f64,
    payload_bits: f64,
) -> Result<LinkMetrics> {
    let s = sinr(p, csi)?;
    let per = per_from_sinr(&s, m);
    let rate = rates_from_sinr(&s, bandwidth_hz);
    let delay = rate
        .iter()
        .map(|r| if *r > 0.0 { payload_bits / r } else { f64::INFINITY })
        .collect();
    Ok(LinkMetrics {
        sinr: s,
        rate,
        per,
        delay,
    })
}

/// Weighted sum of success probabilities, `g = sum_i w_i q_i`.
pub fn weighted_success(q: &[f64], weights: &[f64]) -> Result<f64> {
    if q.len() != weights.len() {
        return Err(CoreError::ShapeMismatch {
            op: "weighted_success",
            lhs: vec![q.len()],
            rhs: vec![weights.len()],
        });
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(CoreError::Domain("weights must be nonnegative".into()));
    }
    Ok(q.iter().zip(weights).map(|(qi, wi)| qi * wi).sum())
}

// ---------------------------------------------------------------------
// Differentiable route: the same formulas expressed as tape operations,
// so gradients flow from the wireless metrics back into policy weights.
// ---------------------------------------------------------------------

/// SINR of every worker as a tape node, differentiable in `p`.
pub fn sinr_on_tape(tape: &mut Tape, p: Var, csi: &CsiMatrix) -> Result<Var> {
    let alpha: Vec<f64> = (0..csi.workers()).map(|i| csi.alpha(i)).collect();
    let alpha = tape.leaf_vector(&alpha);
    let beta_off = tape.leaf(csi.off_diagonal_tensor());
    let numer = tape.mul(alpha, p)?;
    let interference = tape.matvec(beta_off, p)?;
    let denom = tape.add_scalar(interference, 1.0);
    tape.div(numer, denom)
}

/// Success probability `exp(-m / sinr)` as a tape node. Requires
/// strictly positive SINR values (policy outputs are sigmoid-scaled and
/// never exactly zero).
pub fn success_prob_on_tape(tape: &mut Tape, sinr: Var, m: f64) -> Result<Var> {
    let l = tape.value(sinr).len();
    let m_vec = tape.leaf(Tensor::full(vec![l], m));
    let ratio = tape.div(m_vec, sinr)?;
    let neg = tape.neg(ratio);
    tape.exp(neg)
}

/// Achievable rate `B ln(1 + sinr)` as a tape node.
pub fn rate_on_tape(tape: &mut Tape, sinr: Var, bandwidth_hz: f64) -> Result<Var> {
    let log_term = tape.ln1p(sinr)?;
    Ok(tape.scale(log_term, bandwidth_hz))
}

// ---------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------

const CHANNEL_MAGIC: &[u8; 8] = b"FPCHAN01";

/// Writes realizations in the `FPCHAN01` binary format: the 8-byte
/// magic, `count`/`L`/`n_R` as little-endian `u32`, then per realization
/// the raw channels worker-major with interleaved real/imag `f64`.
pub fn save_channels(path: impl AsRef<Path>, channels: &[ChannelRealization]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| CoreError::io(path.display().to_string(), e);
    if channels.is_empty() {
        return Err(CoreError::Config("no realizations to save".into()));
    }
    let (l, n_r) = (channels[0].workers(), channels[0].antennas());
    if channels.iter().any(|c| c.workers() != l || c.antennas() != n_r) {
        return Err(CoreError::Config(
            "all realizations in one file must share L and n_R".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(CHANNEL_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(channels.len() as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(l as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(n_r as u32).map_err(io_err)?;
    for ch in channels {
        for z in &ch.raw {
            w.write_f64::<LittleEndian>(z.re).map_err(io_err)?;
            w.write_f64::<LittleEndian>(z.im).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads an `FPCHAN01` file. Noise variances are the generator's
/// normalized `sigma^2 = 1` (the format does not store them).
pub fn load_channels(path: impl AsRef<Path>) -> Result<Vec<ChannelRealization>> {
    let path = path.as_ref();
    let pd = path.display().to_string();
    let io_err = |e| CoreError::io(pd.clone(), e);
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHANNEL_MAGIC {
        return Err(CoreError::BadMagic {
            path: pd,
            expected: u32::from_be_bytes(CHANNEL_MAGIC[0..4].try_into().unwrap()),
            observed: u32::from_be_bytes(magic[0..4].try_into().unwrap()),
        });
    }
    let count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let l = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let n_r = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut raw = Vec::with_capacity(l * n_r);
        for _ in 0..l * n_r {
            let re = r.read_f64::<LittleEndian>().map_err(|_| CoreError::Truncated {
                path: pd.clone(),
                expected: count * l * n_r * 16,
                got: (k * l * n_r + raw.len()) * 16,
            })?;
            let im = r.read_f64::<LittleEndian>().map_err(|_| CoreError::Truncated {
                path: pd.clone(),
                expected: count * l * n_r * 16,
                got: (k * l * n_r + raw.len()) * 16 + 8,
            })?;
            raw.push(Complex64::new(re, im));
        }
        out.push(ChannelRealization::from_raw(l, n_r, raw, vec![1.0; l])?);
    }
    Ok(out)
}

/// Exports CSI matrices as CSV for inspection: one row per realization,
/// row-major `H` entries.
pub fn export_csi_csv(
    path: impl AsRef<Path>,
    channels: &[ChannelRealization],
    interference_scale: f64,
) -> Result<()> {
    let path = path.as_ref();
    let pd = path.display().to_string();
    let io_err = |e| CoreError::io(pd.clone(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    if let Some(first) = channels.first() {
        let l = first.workers();
        writeln!(
            w,
            "# CSI export: count={}, L={}, n_R={}, interference_scale={}",
            channels.len(),
            l,
            first.antennas(),
            interference_scale
        )
        .map_err(io_err)?;
        let header: Vec<String> = (0..l)
            .flat_map(|i| (0..l).map(move |j| format!("h_{i}_{j}")))
            .collect();
        writeln!(w, "{}", header.join(",")).map_err(io_err)?;
        for ch in channels {
            let csi = build_csi(ch, interference_scale)?;
            let row: Vec<String> = csi.entries().iter().map(|e| format!("{e:.17e}")).collect();
            writeln!(w, "{}", row.join(",")).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}
