//! Compression bits, achievable rates and mission completion time.
//!
//! All rates are in bits/s, `g` values in bits per complex sample, and every
//! time in seconds.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, congruence, gram, log2_det_ratio, min_eigenvalue, scaled_identity, CMat};
use crate::scenario::{ChannelSet, SystemConfig};

/// Allocation of the sensing task: the common fraction and each UAV's
/// private fraction split between its TDMA and NOMA submessages.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSplit {
    pub alpha_0: f64,
    pub alpha_td: Vec<f64>,
    pub alpha_no: Vec<f64>,
}

impl TaskSplit {
    /// Every one of the `2K + 1` fractions equal to `1 / (2K + 1)`.
    pub fn equal(num_uavs: usize) -> Self {
        let a = 1.0 / (2 * num_uavs + 1) as f64;
        Self {
            alpha_0: a,
            alpha_td: vec![a; num_uavs],
            alpha_no: vec![a; num_uavs],
        }
    }

    pub fn num_uavs(&self) -> usize {
        self.alpha_td.len()
    }

    /// Private fraction `alpha_k = alpha_k^TD + alpha_k^NO`.
    pub fn private(&self, k: usize) -> f64 {
        self.alpha_td[k] + self.alpha_no[k]
    }

    pub fn total(&self) -> f64 {
        self.alpha_0 + self.alpha_td.iter().sum::<f64>() + self.alpha_no.iter().sum::<f64>()
    }

    pub fn sum_td(&self) -> f64 {
        self.alpha_td.iter().sum()
    }

    pub fn sum_no(&self) -> f64 {
        self.alpha_no.iter().sum()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.alpha_td.len() != self.alpha_no.len() || self.alpha_td.is_empty() {
            return Err(Error::InvalidSplit("fraction vectors must be non-empty and equally long".into()));
        }
        let all = std::iter::once(self.alpha_0).chain(self.alpha_td.iter().copied()).chain(self.alpha_no.iter().copied());
        for a in all {
            if !(a >= -tol) || !a.is_finite() {
                return Err(Error::InvalidSplit(format!("negative or non-finite fraction {a}")));
            }
        }
        if (self.total() - 1.0).abs() > tol {
            return Err(Error::InvalidSplit(format!("fractions sum to {}", self.total())));
        }
        for k in 1..self.num_uavs() {
            if self.private(k) < self.private(k - 1) - tol {
                return Err(Error::InvalidSplit(format!("private fraction of UAV {k} below UAV {}", k - 1)));
            }
        }
        Ok(())
    }
}

/// Transmit covariance factors: `S = S̃ S̃^H` per phase.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmitState {
    pub s_td: Vec<CMat>,
    pub s_no: Vec<CMat>,
    /// Square `K n_U x K n_U` factor of the joint cooperative covariance.
    pub s_co: CMat,
}

impl TransmitState {
    /// `sqrt(P_U / n_U) I` for every block, i.e. full isotropic power.
    pub fn isotropic(num_uavs: usize, n_u: usize, power: f64) -> Self {
        let a = (power / n_u as f64).sqrt();
        Self {
            s_td: vec![scaled_identity(n_u, a); num_uavs],
            s_no: vec![scaled_identity(n_u, a); num_uavs],
            s_co: scaled_identity(num_uavs * n_u, a),
        }
    }

    pub fn num_uavs(&self) -> usize {
        self.s_td.len()
    }

    pub fn uav_antennas(&self) -> usize {
        self.s_td[0].nrows()
    }

    pub fn cov_td(&self, k: usize) -> CMat {
        gram(&self.s_td[k])
    }

    pub fn cov_no(&self, k: usize) -> CMat {
        gram(&self.s_no[k])
    }

    pub fn cov_co(&self) -> CMat {
        gram(&self.s_co)
    }

    /// `tr(E_k^H S^CO E_k)`: UAV `k`'s share of the cooperative power.
    pub fn coop_power(&self, k: usize) -> f64 {
        let n = self.uav_antennas();
        self.s_co.rows(k * n, n).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_power(&self) -> f64 {
        let f = |m: &CMat| m.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let td = self.s_td.iter().map(f).fold(0.0, f64::max);
        let no = self.s_no.iter().map(f).fold(0.0, f64::max);
        let co = (0..self.num_uavs()).map(|k| self.coop_power(k)).fold(0.0, f64::max);
        td.max(no).max(co)
    }
}

/// Quantization-noise covariances, one per AP and phase (and UAV for TDMA).
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerState {
    /// `om_td[i][k]`.
    pub om_td: Vec<Vec<CMat>>,
    pub om_no: Vec<CMat>,
    pub om_co: Vec<CMat>,
}

impl QuantizerState {
    pub fn uniform(num_aps: usize, num_uavs: usize, n_a: usize, value: f64) -> Self {
        let q = scaled_identity(n_a, value);
        Self {
            om_td: vec![vec![q.clone(); num_uavs]; num_aps],
            om_no: vec![q.clone(); num_aps],
            om_co: vec![q; num_aps],
        }
    }

    /// `blkdiag_i(Omega_{i,k}^TD)`.
    pub fn stacked_td(&self, k: usize) -> CMat {
        block_diag(&self.om_td.iter().map(|row| row[k].clone()).collect::<Vec<_>>())
    }

    pub fn stacked_no(&self) -> CMat {
        block_diag(&self.om_no)
    }

    pub fn stacked_co(&self) -> CMat {
        block_diag(&self.om_co)
    }

    pub fn all(&self) -> impl Iterator<Item = &CMat> {
        self.om_td.iter().flatten().chain(self.om_no.iter()).chain(self.om_co.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateSet {
    pub r_td: Vec<f64>,
    /// Indexed by UAV, not by decoding position.
    pub r_no: Vec<f64>,
    pub r_co: f64,
}

/// `g` values in bits per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionBits {
    /// `g_td[i][k]`.
    pub g_td: Vec<Vec<f64>>,
    pub g_no: Vec<f64>,
    pub g_co: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Timeline {
    pub tau_s: Vec<f64>,
    pub tau_w_td: Vec<f64>,
    pub tau_f_td: Vec<f64>,
    pub tau_sw_td: Vec<f64>,
    pub tau_swf_td: Vec<f64>,
    pub tau_w_no: f64,
    pub tau_f_no: f64,
    pub tau_w_co: f64,
    pub tau_f_co: f64,
    pub tau_total: f64,
}

impl Timeline {
    /// Sum of the post-TDMA terms in the completion time.
    pub fn tail(&self) -> f64 {
        self.tau_w_no + self.tau_f_no.max(self.tau_w_co) + self.tau_f_co
    }
}

/// SIC decoding order: `order[p]` is the UAV decoded at position `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SicOrder(Vec<usize>);

impl SicOrder {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &k in &order {
            if k >= order.len() || seen[k] {
                return Err(Error::InvalidPermutation(format!("{order:?} is not a permutation")));
            }
            seen[k] = true;
        }
        Ok(Self(order))
    }

    pub fn identity(num_uavs: usize) -> Self {
        Self((0..num_uavs).collect())
    }

    /// Strongest channel decoded first.
    pub fn strongest_first(channels: &ChannelSet) -> Self {
        let mut order: Vec<usize> = (0..channels.num_uavs()).collect();
        order.sort_by(|&a, &b| channels.strength(b).total_cmp(&channels.strength(a)).then(b.cmp(&a)));
        Self(order)
    }

    pub fn random<R: Rng>(num_uavs: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..num_uavs).collect();
        order.shuffle(rng);
        Self(order)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// UAVs decoded after `uav` (whose signals are still interference for it).
    pub fn later(&self, uav: usize) -> &[usize] {
        let p = self.0.iter().position(|&k| k == uav).expect("uav in order");
        &self.0[p + 1..]
    }
}

pub(crate) fn check_floor(omega: &CMat, floor: f64) -> Result<()> {
    let min_eig = min_eigenvalue(omega);
    let scale = omega.diagonal().iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    if min_eig < floor * (1.0 - 1e-6) - 1e-12 * scale {
        return Err(Error::QuantizerFloor { min_eig, floor });
    }
    Ok(())
}

fn compression_bits(signal: &CMat, omega: &CMat, sigma_z2: f64) -> Result<f64> {
    check_floor(omega, 1e-8 * sigma_z2)?;
    let n = omega.nrows();
    log2_det_ratio(omega, &(scaled_identity(n, sigma_z2) + signal))
}

/// `log2 det(N + H S H^H) - log2 det(N)`, bits per sample.
pub(crate) fn mimo_spectral_efficiency(noise: &CMat, h: &CMat, cov: &CMat) -> Result<f64> {
    log2_det_ratio(noise, &congruence(h, cov))
}

fn check_stack_floor(blocks: &[&CMat], sigma_z2: f64) -> Result<()> {
    blocks.iter().try_for_each(|om| check_floor(om, 1e-8 * sigma_z2))
}

/// Fronthaul bits per sample for AP `i` while UAV `k` transmits in TDMA.
pub fn g_td(i: usize, k: usize, tx: &TransmitState, q: &QuantizerState, ch: &ChannelSet, sigma_z2: f64) -> Result<f64> {
    compression_bits(&congruence(ch.link(i, k), &tx.cov_td(k)), &q.om_td[i][k], sigma_z2)
}

/// Fronthaul bits per sample for AP `i` in the NOMA phase.
pub fn g_no(i: usize, tx: &TransmitState, q: &QuantizerState, ch: &ChannelSet, sigma_z2: f64) -> Result<f64> {
    let n_a = ch.ap_antennas();
    let signal = (0..ch.num_uavs()).fold(CMat::zeros(n_a, n_a), |acc, k| acc + congruence(ch.link(i, k), &tx.cov_no(k)));
    compression_bits(&signal, &q.om_no[i], sigma_z2)
}

/// Fronthaul bits per sample for AP `i` in the cooperative phase.
pub fn g_co(i: usize, tx: &TransmitState, q: &QuantizerState, ch: &ChannelSet, sigma_z2: f64) -> Result<f64> {
    compression_bits(&congruence(&ch.per_ap[i], &tx.cov_co()), &q.om_co[i], sigma_z2)
}

pub fn rate_td(
    k: usize,
    tx: &TransmitState,
    q: &QuantizerState,
    ch: &ChannelSet,
    sigma_z2: f64,
    bandwidth: f64,
) -> Result<f64> {
    check_stack_floor(&q.om_td.iter().map(|row| &row[k]).collect::<Vec<_>>(), sigma_z2)?;
    let noise = q.stacked_td(k) + scaled_identity(q.om_td.len() * ch.ap_antennas(), sigma_z2);
    Ok(bandwidth * mimo_spectral_efficiency(&noise, &ch.per_uav[k], &tx.cov_td(k))?)
}

/// Interference-plus-noise covariance seen when decoding `uav` in the NOMA phase.
pub fn noma_interference(
    uav: usize,
    pi: &SicOrder,
    tx: &TransmitState,
    q: &QuantizerState,
    ch: &ChannelSet,
    sigma_z2: f64,
) -> CMat {
    let n = ch.num_aps() * ch.ap_antennas();
    pi.later(uav)
        .iter()
        .fold(q.stacked_no() + scaled_identity(n, sigma_z2), |acc, &l| {
            acc + congruence(&ch.per_uav[l], &tx.cov_no(l))
        })
}

/// NOMA rates under SIC in order `pi`, indexed by UAV.
pub fn rates_no(
    pi: &SicOrder,
    tx: &TransmitState,
    q: &QuantizerState,
    ch: &ChannelSet,
    sigma_z2: f64,
    bandwidth: f64,
) -> Result<Vec<f64>> {
    let k_total = ch.num_uavs();
    if pi.len() != k_total {
        return Err(Error::InvalidPermutation(format!("order has {} entries for {k_total} UAVs", pi.len())));
    }
    check_stack_floor(&q.om_no.iter().collect::<Vec<_>>(), sigma_z2)?;
    let n = ch.num_aps() * ch.ap_antennas();
    let mut rates = vec![0.0; k_total];
    // Walk the order backwards, accumulating the not-yet-cancelled signals.
    let mut noise = q.stacked_no() + scaled_identity(n, sigma_z2);
    for &k in pi.as_slice().iter().rev() {
        let signal = congruence(&ch.per_uav[k], &tx.cov_no(k));
        rates[k] = bandwidth * log2_det_ratio(&noise, &signal)?;
        noise += signal;
    }
    Ok(rates)
}

pub fn rate_co(tx: &TransmitState, q: &QuantizerState, ch: &ChannelSet, sigma_z2: f64, bandwidth: f64) -> Result<f64> {
    check_stack_floor(&q.om_co.iter().collect::<Vec<_>>(), sigma_z2)?;
    let noise = q.stacked_co() + scaled_identity(ch.full.nrows(), sigma_z2);
    Ok(bandwidth * mimo_spectral_efficiency(&noise, &ch.full, &tx.cov_co())?)
}

pub fn all_rates(
    tx: &TransmitState,
    q: &QuantizerState,
    ch: &ChannelSet,
    pi: &SicOrder,
    cfg: &SystemConfig,
) -> Result<RateSet> {
    let (s2, b) = (cfg.noise_power, cfg.bandwidth);
    Ok(RateSet {
        r_td: (0..ch.num_uavs()).map(|k| rate_td(k, tx, q, ch, s2, b)).collect::<Result<_>>()?,
        r_no: rates_no(pi, tx, q, ch, s2, b)?,
        r_co: rate_co(tx, q, ch, s2, b)?,
    })
}

pub fn all_compression_bits(tx: &TransmitState, q: &QuantizerState, ch: &ChannelSet, cfg: &SystemConfig) -> Result<CompressionBits> {
    let s2 = cfg.noise_power;
    let (m, k) = (ch.num_aps(), ch.num_uavs());
    Ok(CompressionBits {
        g_td: (0..m)
            .map(|i| (0..k).map(|u| g_td(i, u, tx, q, ch, s2)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?,
        g_no: (0..m).map(|i| g_no(i, tx, q, ch, s2)).collect::<Result<_>>()?,
        g_co: (0..m).map(|i| g_co(i, tx, q, ch, s2)).collect::<Result<_>>()?,
    })
}

/// Wireless time `b_total * alpha / R`, exactly zero for a skipped phase.
fn wireless_time(fraction: f64, rate: f64, total_bits: f64, phase: impl FnOnce() -> String) -> Result<f64> {
    if fraction <= 0.0 {
        return Ok(0.0);
    }
    if !(rate > 0.0) {
        return Err(Error::StarvedPhase(phase()));
    }
    Ok(total_bits * fraction / rate)
}

fn fronthaul_time(wireless: f64, g: impl Iterator<Item = f64>, cfg: &SystemConfig) -> f64 {
    if wireless <= 0.0 {
        return 0.0;
    }
    g.map(|g| cfg.bandwidth * wireless * g / cfg.fronthaul_capacity).fold(0.0, f64::max)
}

/// Per-phase durations before the pipeline recursion is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDurations {
    pub tau_s: Vec<f64>,
    pub tau_w_td: Vec<f64>,
    pub tau_f_td: Vec<f64>,
    pub tau_w_no: f64,
    pub tau_f_no: f64,
    pub tau_w_co: f64,
    pub tau_f_co: f64,
}

pub fn phase_durations(split: &TaskSplit, rates: &RateSet, bits: &CompressionBits, cfg: &SystemConfig) -> Result<PhaseDurations> {
    let k_total = split.num_uavs();
    let b = cfg.total_bits;
    let tau_s = (0..k_total).map(|k| (split.alpha_0 + split.private(k)) * cfg.total_sensing_time).collect();
    let tau_w_td: Vec<f64> = (0..k_total)
        .map(|k| wireless_time(split.alpha_td[k], rates.r_td[k], b, || format!("TDMA slot of UAV {k}")))
        .collect::<Result<_>>()?;
    let tau_f_td = (0..k_total)
        .map(|k| fronthaul_time(tau_w_td[k], bits.g_td.iter().map(|row| row[k]), cfg))
        .collect();
    let tau_w_no = (0..k_total)
        .map(|k| wireless_time(split.alpha_no[k], rates.r_no[k], b, || format!("NOMA stream of UAV {k}")))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let tau_f_no = fronthaul_time(tau_w_no, bits.g_no.iter().copied(), cfg);
    let tau_w_co = wireless_time(split.alpha_0, rates.r_co, b, || "cooperative phase".into())?;
    let tau_f_co = fronthaul_time(tau_w_co, bits.g_co.iter().copied(), cfg);
    Ok(PhaseDurations {
        tau_s,
        tau_w_td,
        tau_f_td,
        tau_w_no,
        tau_f_no,
        tau_w_co,
        tau_f_co,
    })
}

/// Applies the sensing/TDMA/fronthaul pipeline recursion and the completion-time composition.
pub fn assemble_timeline(d: PhaseDurations) -> Timeline {
    let k_total = d.tau_s.len();
    let mut tau_sw_td = Vec::with_capacity(k_total);
    let mut tau_swf_td = Vec::with_capacity(k_total);
    let (mut sw_prev, mut swf_prev) = (0.0f64, 0.0f64);
    for k in 0..k_total {
        let sw = d.tau_s[k].max(sw_prev) + d.tau_w_td[k];
        let swf = sw.max(swf_prev) + d.tau_f_td[k];
        tau_sw_td.push(sw);
        tau_swf_td.push(swf);
        sw_prev = sw;
        swf_prev = swf;
    }
    let tau_total = swf_prev + d.tau_w_no + d.tau_f_no.max(d.tau_w_co) + d.tau_f_co;
    Timeline {
        tau_s: d.tau_s,
        tau_w_td: d.tau_w_td,
        tau_f_td: d.tau_f_td,
        tau_sw_td,
        tau_swf_td,
        tau_w_no: d.tau_w_no,
        tau_f_no: d.tau_f_no,
        tau_w_co: d.tau_w_co,
        tau_f_co: d.tau_f_co,
        tau_total,
    }
}

pub fn compute_timeline(split: &TaskSplit, rates: &RateSet, bits: &CompressionBits, cfg: &SystemConfig) -> Result<Timeline> {
    Ok(assemble_timeline(phase_durations(split, rates, bits, cfg)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    SensingDone(usize),
    SlotDone(usize),
    FronthaulDone(usize),
    NomaAirDone,
    NomaFronthaulDone,
    CoopAirDone,
    CoopFronthaulDone,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Event {
    time: f64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on time; ties broken by kind so the run is deterministic.
        other.time.total_cmp(&self.time).then_with(|| other.kind.cmp(&self.kind))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Discrete-event replay of the mission.
///
/// The wireless medium serves TDMA slots in UAV order, each slot waiting for
/// its UAV's sensing to finish. The fronthaul forwards each slot's quantized
/// samples in the same order once the slot is over. The NOMA phase starts
/// when the last TDMA fronthaul delivery is complete; the cooperative
/// transmission follows NOMA on the air interface while the NOMA samples are
/// still on the fronthaul, and the cooperative fronthaul transfer waits for
/// both.
pub fn event_oracle(split: &TaskSplit, rates: &RateSet, bits: &CompressionBits, cfg: &SystemConfig) -> Result<f64> {
    let d = phase_durations(split, rates, bits, cfg)?;
    let k_total = d.tau_s.len();
    let mut queue = BinaryHeap::new();
    for (k, &t) in d.tau_s.iter().enumerate() {
        queue.push(Event {
            time: t,
            kind: EventKind::SensingDone(k),
        });
    }

    let mut sensed = vec![false; k_total];
    let mut next_slot = 0usize;
    let mut air_busy = false;
    let mut next_fronthaul = 0usize;
    let mut slots_done = 0usize;
    let mut fronthaul_busy = false;
    let mut noma_fronthaul_done = false;
    let mut coop_air_done = false;
    let mut finish = 0.0;

    while let Some(ev) = queue.pop() {
        let now = ev.time;
        match ev.kind {
            EventKind::SensingDone(k) => sensed[k] = true,
            EventKind::SlotDone(_) => {
                air_busy = false;
                slots_done += 1;
            }
            EventKind::FronthaulDone(k) => {
                fronthaul_busy = false;
                if k + 1 == k_total {
                    queue.push(Event {
                        time: now + d.tau_w_no,
                        kind: EventKind::NomaAirDone,
                    });
                }
            }
            EventKind::NomaAirDone => {
                queue.push(Event {
                    time: now + d.tau_f_no,
                    kind: EventKind::NomaFronthaulDone,
                });
                queue.push(Event {
                    time: now + d.tau_w_co,
                    kind: EventKind::CoopAirDone,
                });
            }
            EventKind::NomaFronthaulDone => noma_fronthaul_done = true,
            EventKind::CoopAirDone => coop_air_done = true,
            EventKind::CoopFronthaulDone => finish = now,
        }

        if !air_busy && next_slot < k_total && sensed[next_slot] {
            queue.push(Event {
                time: now + d.tau_w_td[next_slot],
                kind: EventKind::SlotDone(next_slot),
            });
            air_busy = true;
            next_slot += 1;
        }
        if !fronthaul_busy && next_fronthaul < slots_done {
            queue.push(Event {
                time: now + d.tau_f_td[next_fronthaul],
                kind: EventKind::FronthaulDone(next_fronthaul),
            });
            fronthaul_busy = true;
            next_fronthaul += 1;
        }
        if noma_fronthaul_done && coop_air_done {
            queue.push(Event {
                time: now + d.tau_f_co,
                kind: EventKind::CoopFronthaulDone,
            });
            noma_fronthaul_done = false;
            coop_air_done = false;
        }
    }
    Ok(finish)
}

/// Everything derived from one choice of `(alpha, S̃, Omega)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalState {
    pub split: TaskSplit,
    pub tx: TransmitState,
    pub quant: QuantizerState,
    pub rates: RateSet,
    pub bits: CompressionBits,
    pub timeline: Timeline,
}

impl PrimalState {
    pub fn evaluate(
        split: TaskSplit,
        tx: TransmitState,
        quant: QuantizerState,
        ch: &ChannelSet,
        cfg: &SystemConfig,
        pi: &SicOrder,
    ) -> Result<Self> {
        let rates = all_rates(&tx, &quant, ch, pi, cfg)?;
        let bits = all_compression_bits(&tx, &quant, ch, cfg)?;
        let timeline = compute_timeline(&split, &rates, &bits, cfg)?;
        Ok(Self {
            split,
            tx,
            quant,
            rates,
            bits,
            timeline,
        })
    }

    pub fn tau_total(&self) -> f64 {
        self.timeline.tau_total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, eigenvalues_hermitian, CMat};
    use crate::scenario::{complex_gaussian, Scenario};
    use crate::rng::SeedStreams;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + b.abs())
    }

    fn scalar(v: f64) -> CMat {
        CMat::from_element(1, 1, c(v, 0.0))
    }

    fn scalar_channels(gains: &[&[f64]]) -> ChannelSet {
        ChannelSet::from_blocks(gains.iter().map(|row| row.iter().map(|&h| scalar(h)).collect()).collect())
    }

    fn scalar_tx(k: usize, s: f64) -> TransmitState {
        TransmitState {
            s_td: vec![scalar(s.sqrt()); k],
            s_no: vec![scalar(s.sqrt()); k],
            s_co: CMat::from_diagonal_element(k, k, c(s.sqrt(), 0.0)),
        }
    }

    /// log2 det via eigenvalues, independent of the Cholesky route.
    fn log2_det_eig(a: &CMat) -> f64 {
        eigenvalues_hermitian(a).iter().map(|l| l.log2()).sum()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> CMat {
        let a = complex_gaussian(rng, n, n);
        gram(&a) + scaled_identity(n, shift)
    }

    #[test]
    fn g_td_scalar_and_zero_signal() {
        let ch = scalar_channels(&[&[2f64.sqrt()]]);
        let tx = scalar_tx(1, 1.0);
        let q = QuantizerState::uniform(1, 1, 1, 1.0);
        assert!(rel(g_td(0, 0, &tx, &q, &ch, 1.0).unwrap(), 2.0) < 1e-14);
        let zero = scalar_tx(1, 0.0);
        let q = QuantizerState::uniform(1, 1, 1, 0.5);
        assert!(rel(g_td(0, 0, &zero, &q, &ch, 1.0).unwrap(), (1.5f64 / 0.5).log2()) < 1e-14);
    }

    #[test]
    fn g_rejects_floor_violation() {
        let ch = scalar_channels(&[&[1.0]]);
        let q = QuantizerState::uniform(1, 1, 1, 1e-12);
        assert!(matches!(
            g_td(0, 0, &scalar_tx(1, 1.0), &q, &ch, 1.0),
            Err(Error::QuantizerFloor { .. })
        ));
    }

    #[test]
    fn g_matches_eigen_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let blocks = vec![
                vec![complex_gaussian(&mut rng, 2, 2), complex_gaussian(&mut rng, 2, 2)],
                vec![complex_gaussian(&mut rng, 2, 2), complex_gaussian(&mut rng, 2, 2)],
            ];
            let ch = ChannelSet::from_blocks(blocks);
            let tx = TransmitState {
                s_td: (0..2).map(|_| complex_gaussian(&mut rng, 2, 2)).collect(),
                s_no: (0..2).map(|_| complex_gaussian(&mut rng, 2, 2)).collect(),
                s_co: complex_gaussian(&mut rng, 4, 4),
            };
            let q = QuantizerState {
                om_td: (0..2).map(|_| (0..2).map(|_| random_psd(&mut rng, 2, 0.1)).collect()).collect(),
                om_no: (0..2).map(|_| random_psd(&mut rng, 2, 0.1)).collect(),
                om_co: (0..2).map(|_| random_psd(&mut rng, 2, 0.1)).collect(),
            };
            let s2 = 0.7;
            let id = scaled_identity(2, s2);
            for i in 0..2 {
                for k in 0..2 {
                    let sig = ch.link(i, k) * tx.cov_td(k) * ch.link(i, k).adjoint();
                    let want = log2_det_eig(&(&q.om_td[i][k] + &id + sig)) - log2_det_eig(&q.om_td[i][k]);
                    assert!(rel(g_td(i, k, &tx, &q, &ch, s2).unwrap(), want) < 1e-10);
                }
                let sig = &ch.per_ap[i] * tx.cov_co() * ch.per_ap[i].adjoint();
                let want = log2_det_eig(&(&q.om_co[i] + &id + sig)) - log2_det_eig(&q.om_co[i]);
                assert!(rel(g_co(i, &tx, &q, &ch, s2).unwrap(), want) < 1e-10);
            }
        }
    }

    #[test]
    fn g_no_scalar_two_uavs() {
        let ch = scalar_channels(&[&[1.5, 0.5]]);
        let tx = TransmitState {
            s_td: vec![scalar(1.0); 2],
            s_no: vec![scalar(2f64.sqrt()), scalar(3f64.sqrt())],
            s_co: scaled_identity(2, 1.0),
        };
        let q = QuantizerState::uniform(1, 2, 1, 0.4);
        let want = ((0.4 + 1.0 + 2.25 * 2.0 + 0.25 * 3.0) / 0.4f64).log2();
        assert!(rel(g_no(0, &tx, &q, &ch, 1.0).unwrap(), want) < 1e-13);
    }

    #[test]
    fn single_uav_phases_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = ChannelSet::from_blocks(vec![vec![complex_gaussian(&mut rng, 2, 2)], vec![complex_gaussian(&mut rng, 2, 2)]]);
        let s = complex_gaussian(&mut rng, 2, 2);
        let tx = TransmitState {
            s_td: vec![s.clone()],
            s_no: vec![s.clone()],
            s_co: s,
        };
        let om = random_psd(&mut rng, 2, 0.2);
        let q = QuantizerState {
            om_td: vec![vec![om.clone()], vec![om.clone()]],
            om_no: vec![om.clone(), om.clone()],
            om_co: vec![om.clone(), om],
        };
        let pi = SicOrder::identity(1);
        let td = rate_td(0, &tx, &q, &ch, 1.0, 1.0).unwrap();
        let no = rates_no(&pi, &tx, &q, &ch, 1.0, 1.0).unwrap()[0];
        let co = rate_co(&tx, &q, &ch, 1.0, 1.0).unwrap();
        assert!(rel(td, no) < 1e-12 && rel(td, co) < 1e-12);
        for i in 0..2 {
            let a = g_td(i, 0, &tx, &q, &ch, 1.0).unwrap();
            assert!(rel(a, g_no(i, &tx, &q, &ch, 1.0).unwrap()) < 1e-12);
            assert!(rel(a, g_co(i, &tx, &q, &ch, 1.0).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn rate_td_scalar_and_zero() {
        let ch = scalar_channels(&[&[6f64.sqrt()]]);
        let q = QuantizerState::uniform(1, 1, 1, 1.0);
        let b = 1e8;
        assert!(rel(rate_td(0, &scalar_tx(1, 1.0), &q, &ch, 1.0, b).unwrap(), 2.0 * b) < 1e-14);
        assert_eq!(rate_td(0, &scalar_tx(1, 0.0), &q, &ch, 1.0, b).unwrap(), 0.0);
        let pi = SicOrder::identity(1);
        assert_eq!(rates_no(&pi, &scalar_tx(1, 0.0), &q, &ch, 1.0, b).unwrap(), vec![0.0]);
        assert_eq!(rate_co(&scalar_tx(1, 0.0), &q, &ch, 1.0, b).unwrap(), 0.0);
    }

    /// Determinant by cofactor expansion, for the stacked brute-force check.
    fn det_cofactor(a: &CMat) -> crate::linalg::C64 {
        let n = a.nrows();
        if n == 1 {
            return a[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = a.clone().remove_row(0).remove_column(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                a[(0, j)] * det_cofactor(&minor) * sign
            })
            .sum()
    }

    #[test]
    fn rate_td_matches_brute_force_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ch = ChannelSet::from_blocks(vec![vec![complex_gaussian(&mut rng, 2, 2)], vec![complex_gaussian(&mut rng, 2, 2)]]);
        let tx = TransmitState {
            s_td: vec![complex_gaussian(&mut rng, 2, 2)],
            s_no: vec![complex_gaussian(&mut rng, 2, 2)],
            s_co: complex_gaussian(&mut rng, 2, 2),
        };
        let q = QuantizerState {
            om_td: vec![vec![random_psd(&mut rng, 2, 0.3)], vec![random_psd(&mut rng, 2, 0.3)]],
            om_no: vec![scaled_identity(2, 1.0); 2],
            om_co: vec![scaled_identity(2, 1.0); 2],
        };
        let noise = q.stacked_td(0) + scaled_identity(4, 1.0);
        let sig = &ch.per_uav[0] * tx.cov_td(0) * ch.per_uav[0].adjoint();
        let m = CMat::identity(4, 4) + noise.clone().try_inverse().unwrap() * sig;
        let want = det_cofactor(&m).re.log2();
        assert!(rel(rate_td(0, &tx, &q, &ch, 1.0, 1.0).unwrap(), want) < 1e-10);
    }

    #[test]
    fn invalid_permutations_rejected() {
        assert!(SicOrder::new(vec![0, 0]).is_err());
        assert!(SicOrder::new(vec![0, 2]).is_err());
        assert!(SicOrder::new(vec![1, 0]).is_ok());
        let ch = scalar_channels(&[&[1.0, 1.0]]);
        let q = QuantizerState::uniform(1, 2, 1, 1.0);
        let pi = SicOrder::identity(3);
        assert!(matches!(
            rates_no(&pi, &scalar_tx(2, 1.0), &q, &ch, 1.0, 1.0),
            Err(Error::InvalidPermutation(_))
        ));
    }

    fn cfg_unit() -> SystemConfig {
        SystemConfig {
            bandwidth: 1.0,
            fronthaul_capacity: 1.0,
            total_bits: 1.0,
            total_sensing_time: 1.0,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn composition_single_uav() {
        let d = PhaseDurations {
            tau_s: vec![1.0],
            tau_w_td: vec![1.0],
            tau_f_td: vec![0.5],
            tau_w_no: 0.4,
            tau_f_no: 0.2,
            tau_w_co: 0.3,
            tau_f_co: 0.1,
        };
        let t = assemble_timeline(d);
        assert!((t.tau_total - 3.3).abs() < 1e-15);
    }

    #[test]
    fn recursion_two_uavs() {
        let d = PhaseDurations {
            tau_s: vec![1.0, 2.0],
            tau_w_td: vec![1.0, 1.0],
            tau_f_td: vec![0.5, 0.5],
            tau_w_no: 0.0,
            tau_f_no: 0.0,
            tau_w_co: 0.0,
            tau_f_co: 0.0,
        };
        let t = assemble_timeline(d);
        assert_eq!(t.tau_sw_td, vec![2.0, 3.0]);
        assert_eq!(t.tau_swf_td, vec![2.5, 3.5]);
    }

    #[test]
    fn cooperative_only_split() {
        let cfg = cfg_unit();
        let split = TaskSplit {
            alpha_0: 1.0,
            alpha_td: vec![0.0, 0.0],
            alpha_no: vec![0.0, 0.0],
        };
        // Zero rates on the skipped phases must not matter.
        let rates = RateSet {
            r_td: vec![0.0, 0.0],
            r_no: vec![0.0, 0.0],
            r_co: 4.0,
        };
        let bits = CompressionBits {
            g_td: vec![vec![1.0, 1.0]],
            g_no: vec![1.0],
            g_co: vec![2.0],
        };
        let t = compute_timeline(&split, &rates, &bits, &cfg).unwrap();
        assert_eq!(t.tau_w_no, 0.0);
        assert!(t.tau_f_td.iter().all(|&x| x == 0.0));
        assert!((t.tau_total - (1.0 + 0.25 + 0.5)).abs() < 1e-15);
        assert_eq!(event_oracle(&split, &rates, &bits, &cfg).unwrap(), t.tau_total);
    }

    #[test]
    fn starved_phase_is_an_error() {
        let cfg = cfg_unit();
        let split = TaskSplit::equal(1);
        let rates = RateSet {
            r_td: vec![0.0],
            r_no: vec![1.0],
            r_co: 1.0,
        };
        let bits = CompressionBits {
            g_td: vec![vec![1.0]],
            g_no: vec![1.0],
            g_co: vec![1.0],
        };
        assert!(matches!(compute_timeline(&split, &rates, &bits, &cfg), Err(Error::StarvedPhase(_))));
    }

    #[test]
    fn sensing_dominated_tail() {
        let cfg = SystemConfig {
            total_sensing_time: 1e6,
            ..cfg_unit()
        };
        let split = TaskSplit {
            alpha_0: 0.2,
            alpha_td: vec![0.1, 0.3],
            alpha_no: vec![0.1, 0.3],
        };
        let rates = RateSet {
            r_td: vec![1.0, 2.0],
            r_no: vec![1.0, 1.5],
            r_co: 3.0,
        };
        let bits = CompressionBits {
            g_td: vec![vec![0.5, 0.7]],
            g_no: vec![0.4],
            g_co: vec![0.9],
        };
        let t = compute_timeline(&split, &rates, &bits, &cfg).unwrap();
        let post = t.tau_w_td[1] + t.tau_f_td[1] + t.tail();
        assert!(((t.tau_total - t.tau_s[1]) - post).abs() < 1e-6);
        assert_eq!(event_oracle(&split, &rates, &bits, &cfg).unwrap(), t.tau_total);
    }

    #[test]
    fn split_validation() {
        assert!(TaskSplit::equal(4).validate(1e-12).is_ok());
        let bad = TaskSplit {
            alpha_0: 0.5,
            alpha_td: vec![0.3, 0.0],
            alpha_no: vec![0.2, 0.0],
        };
        assert!(bad.validate(1e-9).is_err());
    }

    #[test]
    fn strongest_first_order_is_descending() {
        let s = Scenario::sample(&SystemConfig::default(), 4).unwrap();
        let pi = SicOrder::strongest_first(&s.channels);
        assert_eq!(pi.as_slice(), &[3, 2, 1, 0]);
        let mut r = SeedStreams::new(1).stream(crate::rng::SIC_ORDER);
        assert!(SicOrder::new(SicOrder::random(4, &mut r).0).is_ok());
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize, m: usize) -> (TaskSplit, RateSet, CompressionBits, SystemConfig) {
        let mut privates: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        privates.sort_by(f64::total_cmp);
        let mut alpha_td = Vec::new();
        let mut alpha_no = Vec::new();
        for p in &privates {
            let u: f64 = rng.random();
            // Occasionally zero out a submessage to exercise skipped phases.
            let u = if rng.random::<f64>() < 0.15 { 0.0 } else { u };
            alpha_td.push(p * u);
            alpha_no.push(p * (1.0 - u));
        }
        let a0 = if rng.random::<f64>() < 0.15 { 0.0 } else { rng.random::<f64>() };
        let total = a0 + privates.iter().sum::<f64>();
        let split = TaskSplit {
            alpha_0: a0 / total,
            alpha_td: alpha_td.iter().map(|a| a / total).collect(),
            alpha_no: alpha_no.iter().map(|a| a / total).collect(),
        };
        let rates = RateSet {
            r_td: (0..k).map(|_| 0.1 + 5.0 * rng.random::<f64>()).collect(),
            r_no: (0..k).map(|_| 0.1 + 5.0 * rng.random::<f64>()).collect(),
            r_co: 0.1 + 5.0 * rng.random::<f64>(),
        };
        let bits = CompressionBits {
            g_td: (0..m).map(|_| (0..k).map(|_| 10.0 * rng.random::<f64>()).collect()).collect(),
            g_no: (0..m).map(|_| 10.0 * rng.random::<f64>()).collect(),
            g_co: (0..m).map(|_| 10.0 * rng.random::<f64>()).collect(),
        };
        let cfg = SystemConfig {
            total_sensing_time: 3.0 * rng.random::<f64>(),
            fronthaul_capacity: 0.5 + rng.random::<f64>(),
            ..cfg_unit()
        };
        (split, rates, bits, cfg)
    }

    #[test]
    fn event_oracle_agrees_with_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.random_range(1..=5);
            let m = rng.random_range(1..=3);
            let (split, rates, bits, cfg) = random_instance(&mut rng, k, m);
            let t = compute_timeline(&split, &rates, &bits, &cfg).unwrap();
            let o = event_oracle(&split, &rates, &bits, &cfg).unwrap();
            assert!((t.tau_total - o).abs() <= 1e-9 * t.tau_total.max(1e-300));
        }
    }

    proptest! {
        #[test]
        fn g_decreases_when_quantizer_noise_grows(h in 0.1f64..3.0, s in 0.1f64..10.0, om in 0.01f64..5.0, scale in 1.01f64..10.0) {
            let ch = scalar_channels(&[&[h]]);
            let tx = scalar_tx(1, s);
            let q1 = QuantizerState::uniform(1, 1, 1, om);
            let q2 = QuantizerState::uniform(1, 1, 1, om * scale);
            let a = g_td(0, 0, &tx, &q1, &ch, 1.0).unwrap();
            let b = g_td(0, 0, &tx, &q2, &ch, 1.0).unwrap();
            prop_assert!(a >= 0.0 && b < a);
        }

        #[test]
        fn g_decreases_with_quantizer_noise_2x2(seed in 0u64..1000, scale in 1.05f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = ChannelSet::from_blocks(vec![vec![complex_gaussian(&mut rng, 2, 2)]]);
            let tx = TransmitState { s_td: vec![complex_gaussian(&mut rng, 2, 2)], s_no: vec![complex_gaussian(&mut rng, 2, 2)], s_co: complex_gaussian(&mut rng, 2, 2) };
            let om = random_psd(&mut rng, 2, 0.05);
            let q1 = QuantizerState { om_td: vec![vec![om.clone()]], om_no: vec![om.clone()], om_co: vec![om.clone()] };
            let om2 = om.scale(scale);
            let q2 = QuantizerState { om_td: vec![vec![om2.clone()]], om_no: vec![om2.clone()], om_co: vec![om2] };
            prop_assert!(g_td(0, 0, &tx, &q2, &ch, 1.0).unwrap() < g_td(0, 0, &tx, &q1, &ch, 1.0).unwrap());
            prop_assert!(g_no(0, &tx, &q2, &ch, 1.0).unwrap() < g_no(0, &tx, &q1, &ch, 1.0).unwrap());
            prop_assert!(g_co(0, &tx, &q2, &ch, 1.0).unwrap() < g_co(0, &tx, &q1, &ch, 1.0).unwrap());
        }

        #[test]
        fn increasing_a_fraction_never_shortens_the_mission(seed in 0u64..10_000, which in 0usize..11, bump in 1e-3f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 5;
            let (mut split, rates, bits, cfg) = random_instance(&mut rng, k, 2);
            let before = compute_timeline(&split, &rates, &bits, &cfg).unwrap().tau_total;
            match which {
                0 => split.alpha_0 += bump,
                w if w <= k => split.alpha_td[w - 1] += bump,
                w => split.alpha_no[w - 1 - k] += bump,
            }
            let after = compute_timeline(&split, &rates, &bits, &cfg).unwrap().tau_total;
            prop_assert!(after >= before);
        }

        #[test]
        fn rates_and_bits_invariant_under_unitary_rotation(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (k, m, n) = (2, 2, 2);
            let ch = ChannelSet::from_blocks((0..m).map(|_| (0..k).map(|_| complex_gaussian(&mut rng, n, n)).collect()).collect());
            let tx = TransmitState {
                s_td: (0..k).map(|_| complex_gaussian(&mut rng, n, n)).collect(),
                s_no: (0..k).map(|_| complex_gaussian(&mut rng, n, n)).collect(),
                s_co: complex_gaussian(&mut rng, k * n, k * n),
            };
            let q = QuantizerState::uniform(m, k, n, 0.3);
            // Per-UAV unitaries U_k: H_{i,k} -> H_{i,k} U_k, S_k -> U_k^H S_k U_k.
            let us: Vec<CMat> = (0..k).map(|_| complex_gaussian(&mut rng, n, n).qr().q()).collect();
            let ubar = block_diag(&us);
            let rot_ch = ChannelSet::from_blocks((0..m).map(|i| (0..k).map(|u| ch.link(i, u) * &us[u]).collect()).collect());
            let rot_tx = TransmitState {
                s_td: (0..k).map(|u| us[u].adjoint() * &tx.s_td[u]).collect(),
                s_no: (0..k).map(|u| us[u].adjoint() * &tx.s_no[u]).collect(),
                s_co: ubar.adjoint() * &tx.s_co,
            };
            let cfg = SystemConfig { bandwidth: 1.0, ..SystemConfig::default() };
            let pi = SicOrder::new(vec![1, 0]).unwrap();
            let a = all_rates(&tx, &q, &ch, &pi, &cfg).unwrap();
            let b = all_rates(&rot_tx, &q, &rot_ch, &pi, &cfg).unwrap();
            for u in 0..k {
                prop_assert!(rel(a.r_td[u], b.r_td[u]) < 1e-9);
                prop_assert!(rel(a.r_no[u], b.r_no[u]) < 1e-9);
            }
            prop_assert!(rel(a.r_co, b.r_co) < 1e-9);
            let ga = all_compression_bits(&tx, &q, &ch, &cfg).unwrap();
            let gb = all_compression_bits(&rot_tx, &q, &rot_ch, &cfg).unwrap();
            for i in 0..m {
                prop_assert!(rel(ga.g_no[i], gb.g_no[i]) < 1e-9);
                prop_assert!(rel(ga.g_co[i], gb.g_co[i]) < 1e-9);
                for u in 0..k {
                    prop_assert!(rel(ga.g_td[i][u], gb.g_td[i][u]) < 1e-9);
                }
            }
        }
    }
}
