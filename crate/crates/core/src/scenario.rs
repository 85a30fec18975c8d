//! Node geometry and Rician air-to-ground channels with ULA array responses.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hstack, vstack, CMat, CVec};
use crate::rng::{self, SeedStreams};

/// Antenna spacing in carrier wavelengths (half-wavelength ULA).
pub const HALF_WAVELENGTH: f64 = 0.5;

/// Physical and network parameters. Units: seconds, bits, Hz, metres;
/// powers are normalized so that `sigma_z2 = 1` by default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "K")]
    pub num_uavs: usize,
    #[serde(rename = "M")]
    pub num_aps: usize,
    #[serde(rename = "n_U")]
    pub uav_antennas: usize,
    #[serde(rename = "n_A")]
    pub ap_antennas: usize,
    #[serde(rename = "P_U")]
    pub uav_power: f64,
    #[serde(rename = "sigma_z2")]
    pub noise_power: f64,
    #[serde(rename = "C_F")]
    pub fronthaul_capacity: f64,
    #[serde(rename = "B")]
    pub bandwidth: f64,
    #[serde(rename = "b_total")]
    pub total_bits: f64,
    #[serde(rename = "tau_S_total")]
    pub total_sensing_time: f64,
    #[serde(rename = "f_c")]
    pub carrier_frequency: f64,
    #[serde(rename = "kappa")]
    pub rician_factor: f64,
    #[serde(rename = "beta_0")]
    pub reference_gain: f64,
    #[serde(rename = "d_0")]
    pub reference_distance: f64,
    pub altitude: f64,
    pub uav_radius: f64,
    pub ap_radius: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_uavs: 4,
            num_aps: 2,
            uav_antennas: 2,
            ap_antennas: 2,
            uav_power: db_to_linear(15.0),
            noise_power: 1.0,
            fronthaul_capacity: 1e9,
            bandwidth: 100e6,
            total_bits: 200e6,
            total_sensing_time: 0.1,
            carrier_frequency: 2.5e9,
            rician_factor: 100.0,
            reference_gain: 10.0,
            reference_distance: 30.0,
            altitude: 200.0,
            uav_radius: 50.0,
            ap_radius: 200.0,
            eps_rel: 1e-3,
            max_iters: 50,
            seed: 0,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("K", self.num_uavs),
            ("M", self.num_aps),
            ("n_U", self.uav_antennas),
            ("n_A", self.ap_antennas),
            ("max_iters", self.max_iters),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let positive = [
            ("P_U", self.uav_power),
            ("sigma_z2", self.noise_power),
            ("C_F", self.fronthaul_capacity),
            ("B", self.bandwidth),
            ("b_total", self.total_bits),
            ("tau_S_total", self.total_sensing_time),
            ("f_c", self.carrier_frequency),
            ("kappa", self.rician_factor),
            ("beta_0", self.reference_gain),
            ("d_0", self.reference_distance),
            ("altitude", self.altitude),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("uav_radius", self.uav_radius), ("ap_radius", self.ap_radius)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.eps_rel > 0.0 && self.eps_rel < 1.0) {
            return Err(Error::InvalidConfig(format!("eps_rel must lie in (0, 1), got {}", self.eps_rel)));
        }
        Ok(())
    }

    /// Sets `P_U` so that `P_U / sigma_z2` equals the given SNR.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.uav_power = self.noise_power * db_to_linear(snr_db);
        self
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.uav_power / self.noise_power).log10()
    }

    /// Quantization-noise eigenvalue floor, keeping every `log det(Omega)` finite.
    pub fn omega_floor(&self) -> f64 {
        1e-8 * self.noise_power
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub uav_positions: Vec<Vector3<f64>>,
    pub ap_positions: Vec<Vector3<f64>>,
    /// Azimuth of each UAV's array axis (rad).
    pub uav_orientations: Vec<f64>,
}

impl Geometry {
    fn permute_uavs(&self, order: &[usize]) -> Geometry {
        Geometry {
            uav_positions: order.iter().map(|&k| self.uav_positions[k]).collect(),
            ap_positions: self.ap_positions.clone(),
            uav_orientations: order.iter().map(|&k| self.uav_orientations[k]).collect(),
        }
    }
}

fn uniform_in_disk<R: Rng>(rng: &mut R, radius: f64, height: f64) -> Vector3<f64> {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    Vector3::new(r * phi.cos(), r * phi.sin(), height)
}

pub fn sample_geometry(cfg: &SystemConfig, streams: &SeedStreams) -> Geometry {
    let mut pos = streams.stream(rng::GEOMETRY);
    let uav_positions = (0..cfg.num_uavs)
        .map(|_| uniform_in_disk(&mut pos, cfg.uav_radius, cfg.altitude))
        .collect();
    let ap_positions = (0..cfg.num_aps)
        .map(|_| uniform_in_disk(&mut pos, cfg.ap_radius, 0.0))
        .collect();
    let mut orient = streams.stream(rng::ORIENTATION);
    let uav_orientations = (0..cfg.num_uavs).map(|_| 2.0 * PI * orient.random::<f64>()).collect();
    Geometry {
        uav_positions,
        ap_positions,
        uav_orientations,
    }
}

/// `beta_0 (d / d_0)^-3`.
pub fn pathloss_gain(distance: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::CoincidentNodes);
    }
    Ok(cfg.reference_gain * (distance / cfg.reference_distance).powi(-3))
}

/// Unit-norm ULA response; element `m` is `exp(-j 2 pi spacing m sin(angle)) / sqrt(n)`.
pub fn steering_vector(n: usize, angle: f64, spacing_ratio: f64) -> Result<CVec> {
    if n == 0 {
        return Err(Error::EmptyArray);
    }
    let scale = 1.0 / (n as f64).sqrt();
    let phase = -2.0 * PI * spacing_ratio * angle.sin();
    Ok(CVec::from_iterator(
        n,
        (0..n).map(|m| {
            let p = phase * m as f64;
            c(scale * p.cos(), scale * p.sin())
        }),
    ))
}

/// Rank-one LoS component `sqrt(n_U n_A) a_R(aoa) a_T(aod)^H`.
pub fn los_matrix(aoa: f64, aod: f64, n_a: usize, n_u: usize, spacing_ratio: f64) -> Result<CMat> {
    let rx = steering_vector(n_a, aoa, spacing_ratio)?;
    let tx = steering_vector(n_u, aod, spacing_ratio)?;
    Ok((rx * tx.adjoint()).scale(((n_a * n_u) as f64).sqrt()))
}

/// Arrival and departure angles for one AP/UAV pair.
///
/// AP arrays lie along the x-axis; the angle is measured from broadside so
/// that `sin(aoa)` is the x-component of the unit vector from the AP to the
/// UAV. A UAV array lies horizontally along its azimuth `orientation`, and
/// `sin(aod)` is the projection of the UAV-to-AP unit vector on that axis.
pub fn link_angles(uav: &Vector3<f64>, orientation: f64, ap: &Vector3<f64>) -> Result<(f64, f64)> {
    let d = uav - ap;
    let dist = d.norm();
    if !(dist > 0.0) {
        return Err(Error::CoincidentNodes);
    }
    let to_uav = d / dist;
    let aoa = to_uav.x.clamp(-1.0, 1.0).asin();
    let axis = Vector3::new(orientation.cos(), orientation.sin(), 0.0);
    let aod = (-to_uav).dot(&axis).clamp(-1.0, 1.0).asin();
    Ok((aoa, aod))
}

/// Weights `(sqrt(kappa/(kappa+1)), sqrt(1/(kappa+1)))`; an infinite K-factor is pure LoS.
pub fn rician_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    }
}

pub fn complex_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(s * re, s * im)
    })
}

/// One channel draw `H_{i,k}` for a UAV/AP pair.
pub fn sample_link_matrix<R: Rng>(
    cfg: &SystemConfig,
    uav: &Vector3<f64>,
    orientation: f64,
    ap: &Vector3<f64>,
    rng: &mut R,
) -> Result<CMat> {
    let beta = pathloss_gain((uav - ap).norm(), cfg)?;
    let (aoa, aod) = link_angles(uav, orientation, ap)?;
    let los = los_matrix(aoa, aod, cfg.ap_antennas, cfg.uav_antennas, HALF_WAVELENGTH)?;
    let (w_los, w_nlos) = rician_weights(cfg.rician_factor);
    let nlos = complex_gaussian(rng, cfg.ap_antennas, cfg.uav_antennas);
    Ok((los.scale(w_los) + nlos.scale(w_nlos)).scale(beta.sqrt()))
}

/// Channel blocks with their stacked views.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    /// `blocks[i][k] = H_{i,k}`, `n_A x n_U`.
    pub blocks: Vec<Vec<CMat>>,
    /// `per_uav[k] = H_k`, all APs stacked vertically (`M n_A x n_U`).
    pub per_uav: Vec<CMat>,
    /// `per_ap[i] = H̄_i`, all UAVs side by side (`n_A x K n_U`).
    pub per_ap: Vec<CMat>,
    /// `H̄`, `M n_A x K n_U`.
    pub full: CMat,
    /// `original_index[k]`: UAV index before relabelling.
    pub original_index: Vec<usize>,
}

impl ChannelSet {
    /// Builds the stacked views from per-link blocks without reordering.
    pub fn from_blocks(blocks: Vec<Vec<CMat>>) -> Self {
        let m = blocks.len();
        let k = blocks.first().map_or(0, |row| row.len());
        let per_uav = (0..k)
            .map(|u| vstack(&(0..m).map(|i| blocks[i][u].clone()).collect::<Vec<_>>()))
            .collect();
        let per_ap: Vec<CMat> = blocks.iter().map(|row| hstack(row)).collect();
        let full = vstack(&per_ap);
        Self {
            blocks,
            per_uav,
            per_ap,
            full,
            original_index: (0..k).collect(),
        }
    }

    /// Relabels UAVs so that `||H_k||_F^2` is nondecreasing in `k`.
    pub fn sorted_by_strength(self) -> Self {
        let mut order: Vec<usize> = (0..self.num_uavs()).collect();
        let norms: Vec<f64> = self.per_uav.iter().map(crate::linalg::frobenius_sq).collect();
        order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));
        let blocks = self
            .blocks
            .iter()
            .map(|row| order.iter().map(|&u| row[u].clone()).collect())
            .collect();
        let mut out = Self::from_blocks(blocks);
        out.original_index = order.iter().map(|&u| self.original_index[u]).collect();
        out
    }

    pub fn num_aps(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_uavs(&self) -> usize {
        self.per_uav.len()
    }

    pub fn ap_antennas(&self) -> usize {
        self.blocks[0][0].nrows()
    }

    pub fn uav_antennas(&self) -> usize {
        self.blocks[0][0].ncols()
    }

    pub fn link(&self, ap: usize, uav: usize) -> &CMat {
        &self.blocks[ap][uav]
    }

    pub fn strength(&self, uav: usize) -> f64 {
        crate::linalg::frobenius_sq(&self.per_uav[uav])
    }
}

/// Samples every link and relabels UAVs by channel strength.
pub fn sample_channel_set(cfg: &SystemConfig, geom: &Geometry, streams: &SeedStreams) -> Result<ChannelSet> {
    let mut nlos = streams.stream(rng::NLOS);
    let mut blocks = Vec::with_capacity(cfg.num_aps);
    for ap in &geom.ap_positions {
        let mut row = Vec::with_capacity(cfg.num_uavs);
        for (uav, &orient) in geom.uav_positions.iter().zip(&geom.uav_orientations) {
            row.push(sample_link_matrix(cfg, uav, orient, ap, &mut nlos)?);
        }
        blocks.push(row);
    }
    Ok(ChannelSet::from_blocks(blocks).sorted_by_strength())
}

/// A sampled deployment: geometry (already in channel-strength order) plus channels.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: SystemConfig,
    pub geometry: Geometry,
    pub channels: ChannelSet,
    pub seed: u64,
}

impl Scenario {
    pub fn sample(config: &SystemConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let streams = SeedStreams::new(seed);
        let geometry = sample_geometry(config, &streams);
        let channels = sample_channel_set(config, &geometry, &streams)?;
        let geometry = geometry.permute_uavs(&channels.original_index);
        Ok(Self {
            config: config.clone(),
            geometry,
            channels,
            seed,
        })
    }
}
