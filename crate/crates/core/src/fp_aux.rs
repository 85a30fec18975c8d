//! Auxiliary variables of the fractional-programming surrogates.
//!
//! Each surrogate lower-bounds (or upper-bounds) a non-convex term of the
//! completion-time problem and is tight when its auxiliary variables are set
//! from the current operating point.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::linalg::{congruence, frobenius_sq, inv_hpd, log2_det_hpd, scaled_identity, trace_re, CMat};
use crate::link_model::{noma_interference, PrimalState, SicOrder};
use crate::scenario::{ChannelSet, SystemConfig};

/// `(Phi, Gamma)` pair of the matrix Lagrangian-dual rate bound.
#[derive(Clone, Debug, PartialEq)]
pub struct RateAux {
    pub phi: CMat,
    pub gamma: CMat,
}

impl RateAux {
    /// Auxiliaries that make the bound tight at `(h, s_tilde, noise)`.
    pub fn tight(h: &CMat, s_tilde: &CMat, noise: &CMat) -> Result<Self> {
        let hs = h * s_tilde;
        let noise_inv = inv_hpd(noise)?;
        let gamma = crate::linalg::hermitian_part(&(hs.adjoint() * &noise_inv * &hs));
        let total = noise + &hs * hs.adjoint();
        let phi = inv_hpd(&total)? * &hs;
        Ok(Self { phi, gamma })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryState {
    /// Quadratic-transform weights for the wireless-time constraints.
    pub theta_w_td: Vec<f64>,
    /// One weight per UAV for its NOMA submessage.
    pub theta_w_no: Vec<f64>,
    pub theta_w_co: f64,
    /// Quadratic-transform weights for the fronthaul-time constraints.
    pub theta_f_td: Vec<f64>,
    pub theta_f_no: f64,
    pub theta_f_co: f64,
    /// Fenchel points `Sigma`, laid out like the quantizer covariances.
    pub sigma_td: Vec<Vec<CMat>>,
    pub sigma_no: Vec<CMat>,
    pub sigma_co: Vec<CMat>,
    pub rate_td: Vec<RateAux>,
    pub rate_no: Vec<RateAux>,
    pub rate_co: RateAux,
    /// Compression-bit values `G`, set to the exact `g` of the current point.
    pub g_td: Vec<Vec<f64>>,
    pub g_no: Vec<f64>,
    pub g_co: Vec<f64>,
}

/// Weight `sqrt(tau) / alpha`, or zero when the phase is skipped.
fn wireless_theta(tau: f64, fraction: f64) -> f64 {
    if fraction > 0.0 && tau > 0.0 {
        tau.sqrt() / fraction
    } else {
        0.0
    }
}

/// Weight `sqrt(tau_F) / tau_W`, or zero when the phase is skipped.
fn fronthaul_theta(tau_f: f64, tau_w: f64) -> f64 {
    if tau_w > 0.0 && tau_f > 0.0 {
        tau_f.sqrt() / tau_w
    } else {
        0.0
    }
}

pub fn update_auxiliaries(state: &PrimalState, ch: &ChannelSet, cfg: &SystemConfig, pi: &SicOrder) -> Result<AuxiliaryState> {
    let t = &state.timeline;
    let split = &state.split;
    let (tx, q) = (&state.tx, &state.quant);
    let (m, k_total) = (ch.num_aps(), ch.num_uavs());
    let n_a = ch.ap_antennas();
    let s2 = cfg.noise_power;
    let noise_a = scaled_identity(n_a, s2);
    let stacked = m * n_a;

    let sigma_td = (0..m)
        .map(|i| {
            (0..k_total)
                .map(|k| &q.om_td[i][k] + &noise_a + congruence(ch.link(i, k), &tx.cov_td(k)))
                .collect()
        })
        .collect();
    let sigma_no = (0..m)
        .map(|i| {
            (0..k_total).fold(&q.om_no[i] + &noise_a, |acc, k| acc + congruence(ch.link(i, k), &tx.cov_no(k)))
        })
        .collect();
    let sigma_co = (0..m).map(|i| &q.om_co[i] + &noise_a + congruence(&ch.per_ap[i], &tx.cov_co())).collect();

    let rate_td = (0..k_total)
        .map(|k| RateAux::tight(&ch.per_uav[k], &tx.s_td[k], &(q.stacked_td(k) + scaled_identity(stacked, s2))))
        .collect::<Result<_>>()?;
    let rate_no = (0..k_total)
        .map(|k| RateAux::tight(&ch.per_uav[k], &tx.s_no[k], &noma_interference(k, pi, tx, q, ch, s2)))
        .collect::<Result<_>>()?;
    let rate_co = RateAux::tight(&ch.full, &tx.s_co, &(q.stacked_co() + scaled_identity(stacked, s2)))?;

    Ok(AuxiliaryState {
        theta_w_td: (0..k_total).map(|k| wireless_theta(t.tau_w_td[k], split.alpha_td[k])).collect(),
        theta_w_no: (0..k_total).map(|k| wireless_theta(t.tau_w_no, split.alpha_no[k])).collect(),
        theta_w_co: wireless_theta(t.tau_w_co, split.alpha_0),
        theta_f_td: (0..k_total).map(|k| fronthaul_theta(t.tau_f_td[k], t.tau_w_td[k])).collect(),
        theta_f_no: fronthaul_theta(t.tau_f_no, t.tau_w_no),
        theta_f_co: fronthaul_theta(t.tau_f_co, t.tau_w_co),
        sigma_td,
        sigma_no,
        sigma_co,
        rate_td,
        rate_no,
        rate_co,
        g_td: state.bits.g_td.clone(),
        g_no: state.bits.g_no.clone(),
        g_co: state.bits.g_co.clone(),
    })
}

/// `2 theta sqrt(x) - theta^2 y`, a lower bound on `x / y` for `y > 0`.
pub fn quadratic_transform(theta: f64, x: f64, y: f64) -> f64 {
    2.0 * theta * x.max(0.0).sqrt() - theta * theta * y
}

/// Lower bound on `tau_F / tau_W`.
pub fn surrogate_fronthaul(theta: f64, tau_f: f64, tau_w: f64) -> f64 {
    quadratic_transform(theta, tau_f, tau_w)
}

/// Lower bound on `tau_W / alpha`.
pub fn surrogate_wireless(theta: f64, tau_w: f64, fraction: f64) -> f64 {
    quadratic_transform(theta, tau_w, fraction)
}

/// Upper bound on `log2 det(A) - log2 det(Omega)` for `A = Omega + sigma^2 I + signal`,
/// linearizing `log2 det A` at `Sigma`.
pub fn fenchel_bound(sigma: &CMat, a: &CMat, omega: &CMat) -> Result<f64> {
    let n = sigma.nrows() as f64;
    let sigma_inv = inv_hpd(sigma)?;
    Ok(log2_det_hpd(sigma)? + trace_re(&(sigma_inv * a)) / LN_2 - n / LN_2 - log2_det_hpd(omega)?)
}

/// Lower bound on `log2 det(I + S̃^H H^H N^{-1} H S̃)` (bits per sample).
///
/// `noise` is the full interference-plus-noise covariance the bound is
/// evaluated at, so the same expression serves every phase.
pub fn surrogate_rate(aux: &RateAux, h: &CMat, s_tilde: &CMat, noise: &CMat) -> Result<f64> {
    let d = aux.gamma.nrows();
    let ipg = CMat::identity(d, d) + &aux.gamma;
    let hs = h * s_tilde;
    let cross = hs.adjoint() * &aux.phi;
    let cross_re = crate::linalg::hermitian_part(&(&cross + cross.adjoint()));
    let quad = aux.phi.adjoint() * (noise + &hs * hs.adjoint()) * &aux.phi;
    let inner = cross_re - quad;
    Ok(log2_det_hpd(&ipg)? - trace_re(&aux.gamma) / LN_2 + trace_re(&(&ipg * inner)) / LN_2)
}

/// Exact `log2 det(I + S̃^H H^H N^{-1} H S̃)`, used to check the surrogate.
pub fn exact_rate(h: &CMat, s_tilde: &CMat, noise: &CMat) -> Result<f64> {
    let hs = h * s_tilde;
    crate::linalg::log2_det_ratio(noise, &(&hs * hs.adjoint()))
}

/// Checks that every auxiliary is finite; used before building a subproblem.
pub fn check_finite(aux: &AuxiliaryState) -> Result<()> {
    let scalars = aux
        .theta_w_td
        .iter()
        .chain(&aux.theta_w_no)
        .chain(&aux.theta_f_td)
        .chain([&aux.theta_w_co, &aux.theta_f_no, &aux.theta_f_co])
        .chain(aux.g_td.iter().flatten())
        .chain(&aux.g_no)
        .chain(&aux.g_co);
    for v in scalars {
        if !v.is_finite() {
            return Err(Error::DegeneratePhase(format!("non-finite auxiliary {v}")));
        }
    }
    let mats = aux.rate_td.iter().chain(&aux.rate_no).chain(std::iter::once(&aux.rate_co));
    for r in mats {
        if !frobenius_sq(&r.phi).is_finite() || !frobenius_sq(&r.gamma).is_finite() {
            return Err(Error::DegeneratePhase("non-finite rate auxiliary".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link_model::{QuantizerState, TaskSplit, TransmitState};
    use crate::linalg::gram;
    use crate::scenario::{complex_gaussian, Scenario};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_hpd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> CMat {
        gram(&complex_gaussian(rng, n, n)) + scaled_identity(n, shift)
    }

    #[test]
    fn quadratic_transform_is_tight_at_optimal_theta() {
        let (x, y) = (2.5f64, 0.7);
        let theta = x.sqrt() / y;
        assert!((quadratic_transform(theta, x, y) - x / y).abs() < 1e-12);
    }

    #[test]
    fn fenchel_tight_at_sigma_equal_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let om = random_hpd(&mut rng, 3, 0.1);
        let a = &om + random_hpd(&mut rng, 3, 0.5);
        let exact = log2_det_hpd(&a).unwrap() - log2_det_hpd(&om).unwrap();
        assert!((fenchel_bound(&a, &a, &om).unwrap() - exact).abs() < 1e-10);
    }

    #[test]
    fn rate_surrogate_tight_at_generating_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = complex_gaussian(&mut rng, 4, 2);
        let s = complex_gaussian(&mut rng, 2, 2);
        let n = random_hpd(&mut rng, 4, 0.3);
        let aux = RateAux::tight(&h, &s, &n).unwrap();
        let exact = exact_rate(&h, &s, &n).unwrap();
        assert!((surrogate_rate(&aux, &h, &s, &n).unwrap() - exact).abs() < 1e-9 * (1.0 + exact));
    }

    #[test]
    fn aux_update_makes_every_bound_tight() {
        let cfg = SystemConfig::default();
        let sc = Scenario::sample(&cfg, 11).unwrap();
        let ch = &sc.channels;
        let (k, m, n_a) = (cfg.num_uavs, cfg.num_aps, cfg.ap_antennas);
        let tx = TransmitState::isotropic(k, cfg.uav_antennas, cfg.uav_power);
        let q = QuantizerState::uniform(m, k, n_a, 1e-2);
        let pi = SicOrder::strongest_first(ch);
        let state = PrimalState::evaluate(TaskSplit::equal(k), tx, q, ch, &cfg, &pi).unwrap();
        let aux = update_auxiliaries(&state, ch, &cfg, &pi).unwrap();
        let t = &state.timeline;
        let b_ratio = cfg.bandwidth / cfg.fronthaul_capacity;
        let b_per = cfg.total_bits / cfg.bandwidth;

        for u in 0..k {
            let w = surrogate_wireless(aux.theta_w_td[u], t.tau_w_td[u], state.split.alpha_td[u]);
            assert!((w - t.tau_w_td[u] / state.split.alpha_td[u]).abs() < 1e-9 * w);
            // tau_W / alpha = b / r
            assert!((w - b_per * cfg.bandwidth / state.rates.r_td[u]).abs() < 1e-9 * w);
            let f = surrogate_fronthaul(aux.theta_f_td[u], t.tau_f_td[u], t.tau_w_td[u]);
            let max_g = (0..m).map(|i| aux.g_td[i][u]).fold(0.0, f64::max);
            assert!((f - b_ratio * max_g).abs() < 1e-9 * f);
        }
        let s2 = cfg.noise_power;
        let stacked = m * n_a;
        for u in 0..k {
            let noise = state.quant.stacked_td(u) + scaled_identity(stacked, s2);
            let r = surrogate_rate(&aux.rate_td[u], &ch.per_uav[u], &state.tx.s_td[u], &noise).unwrap();
            assert!((r * cfg.bandwidth - state.rates.r_td[u]).abs() < 1e-8 * state.rates.r_td[u]);
            let noise = noma_interference(u, &pi, &state.tx, &state.quant, ch, s2);
            let r = surrogate_rate(&aux.rate_no[u], &ch.per_uav[u], &state.tx.s_no[u], &noise).unwrap();
            assert!((r * cfg.bandwidth - state.rates.r_no[u]).abs() < 1e-8 * state.rates.r_no[u]);
        }
        for i in 0..m {
            let a = &aux.sigma_co[i];
            let g = fenchel_bound(a, a, &state.quant.om_co[i]).unwrap();
            assert!((g - aux.g_co[i]).abs() < 1e-9 * (1.0 + g));
        }
    }

    #[test]
    fn skipped_phase_gets_zero_weight() {
        assert_eq!(wireless_theta(0.0, 0.0), 0.0);
        assert_eq!(fronthaul_theta(0.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn quadratic_transform_lower_bounds_ratio(theta in 0.0f64..100.0, x in 0.0f64..10.0, y in 1e-3f64..10.0) {
            prop_assert!(quadratic_transform(theta, x, y) <= x / y + 1e-12 * (1.0 + x / y));
        }

        #[test]
        fn fenchel_upper_bounds(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let om = random_hpd(&mut rng, 2, 0.05);
            let a = &om + random_hpd(&mut rng, 2, 0.2);
            let sigma = random_hpd(&mut rng, 2, 0.05);
            let exact = log2_det_hpd(&a).unwrap() - log2_det_hpd(&om).unwrap();
            prop_assert!(fenchel_bound(&sigma, &a, &om).unwrap() >= exact - 1e-9);
        }

        #[test]
        fn rate_surrogate_lower_bounds(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = complex_gaussian(&mut rng, 4, 2);
            let aux = RateAux::tight(&h, &complex_gaussian(&mut rng, 2, 2), &random_hpd(&mut rng, 4, 0.2)).unwrap();
            let s = complex_gaussian(&mut rng, 2, 2);
            let n = random_hpd(&mut rng, 4, 0.2);
            let exact = exact_rate(&h, &s, &n).unwrap();
            prop_assert!(surrogate_rate(&aux, &h, &s, &n).unwrap() <= exact + 1e-9 * (1.0 + exact));
        }
    }
}
