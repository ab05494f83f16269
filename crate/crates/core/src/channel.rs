//! Link-level channel model and network geometry.
//!
//! Received power combines the macro path-loss law 128.1 + 37.6 log10(d_km),
//! lognormal shadowing (drawn once per user-sector pair), Nakagami-m fast
//! fading (power-domain Gamma samples with unit mean, redrawn every slot) and
//! the antenna gains from [`crate::antenna`]. The network is a hexagonal grid
//! of trisector macro sites; one sector is beam-managed, all others radiate a
//! static interference floor.

use crate::antenna::Direction;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("Nakagami shape must be >= 1 or infinite, got {0}")]
    InvalidShape(f64),
    #[error("invalid radio configuration: {0}")]
    InvalidRadio(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1000.0).log10()
}

/// Macro path loss in dB at a 3-D distance in kilometers, clamped below at
/// 10 m.
pub fn pathloss_db(distance_km: f64) -> f64 {
    let d = distance_km.max(0.01);
    128.1 + 37.6 * d.log10()
}

/// One power-domain Nakagami-m fading sample: Gamma(shape = m, scale = 1/m),
/// unit mean. An infinite shape means no fading and returns exactly 1.
pub fn draw_fading<R: Rng + ?Sized>(m: f64, rng: &mut R) -> Result<f64, ChannelError> {
    if m.is_infinite() && m > 0.0 {
        return Ok(1.0);
    }
    if m.is_nan() || m < 1.0 {
        return Err(ChannelError::InvalidShape(m));
    }
    let gamma = Gamma::new(m, 1.0 / m).map_err(|_| ChannelError::InvalidShape(m))?;
    Ok(gamma.sample(rng))
}

/// One lognormal shadowing sample in dB: zero-mean normal with the given
/// standard deviation.
pub fn draw_shadowing_db<R: Rng + ?Sized>(sigma_db: f64, rng: &mut R) -> f64 {
    Normal::new(0.0, sigma_db).unwrap().sample(rng)
}

/// Carrier-level constants shared by every link.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadioConfig {
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub tx_power_w: f64,
    /// Fraction of the Shannon bound the rate map achieves.
    pub rate_efficiency: f64,
    /// Spectral-efficiency ceiling in bit/s/Hz.
    pub rate_cap_bps_hz: f64,
}

impl RadioConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let fields = [
            ("carrier_ghz", self.carrier_ghz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("tx_power_w", self.tx_power_w),
            ("rate_efficiency", self.rate_efficiency),
            ("rate_cap_bps_hz", self.rate_cap_bps_hz),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ChannelError::InvalidRadio(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.noise_density_dbm_hz.is_finite() {
            return Err(ChannelError::InvalidRadio("noise density must be finite".into()));
        }
        Ok(())
    }

    /// Thermal noise power over the full bandwidth, watts.
    pub fn noise_w(&self) -> f64 {
        dbm_to_w(self.noise_density_dbm_hz + 10.0 * self.bandwidth_hz.log10())
    }

    /// Achievable rate in bit/s for a linear SINR: a capped fraction of the
    /// Shannon bound over the full bandwidth.
    pub fn rate_bps(&self, sinr_linear: f64) -> f64 {
        let se = self.rate_efficiency * (1.0 + sinr_linear.max(0.0)).log2();
        se.min(self.rate_cap_bps_hz) * self.bandwidth_hz
    }
}

/// Linear SINR from already-combined received powers.
pub fn sinr_linear(serving_w: f64, interference_w: f64, noise_w: f64) -> f64 {
    serving_w / (interference_w + noise_w)
}

/// One antenna sector: site coordinates (meters) and boresight azimuth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Sector {
    pub site_xy: [f64; 2],
    pub azimuth_rad: f64,
}

/// The observation geometry from a sector's antenna to a ground point.
#[derive(Debug, Clone, Copy)]
pub struct SectorPath {
    /// Direction in the sector's local frame (theta from zenith, phi from
    /// boresight).
    pub direction: Direction,
    /// 3-D distance in meters including the antenna/user height difference.
    pub distance_m: f64,
}

/// Hexagonal trisector macro layout. Sector 3k + s belongs to site k with the
/// boresight azimuth s * 120 degrees; the serving (beam-managed) sector is
/// sector 0 of the center site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub sectors: Vec<Sector>,
    pub serving_sector: usize,
    pub intersite_distance_m: f64,
    pub bs_height_m: f64,
    pub user_height_m: f64,
}

impl NetworkLayout {
    /// Builds `rings` full rings of trisector sites around a center site
    /// (rings = 2 gives 19 sites, 57 sectors).
    pub fn hex_grid(
        intersite_distance_m: f64,
        rings: i32,
        bs_height_m: f64,
        user_height_m: f64,
    ) -> Result<Self, ChannelError> {
        if intersite_distance_m.is_nan()
            || intersite_distance_m <= 0.0
            || rings < 0
            || bs_height_m <= user_height_m
        {
            return Err(ChannelError::InvalidLayout(format!(
                "need positive spacing, rings >= 0 and bs height above user height; \
                 got D={intersite_distance_m}, rings={rings}, h_b={bs_height_m}, h_u={user_height_m}"
            )));
        }
        let mut sites: Vec<(i32, i32)> = Vec::new();
        for q in -rings..=rings {
            for r in -rings..=rings {
                if (q + r).abs() <= rings {
                    sites.push((q, r));
                }
            }
        }
        // center site first, then by ring and axial coordinates
        sites.sort_by_key(|&(q, r)| (q.abs().max(r.abs()).max((q + r).abs()), q, r));
        let mut sectors = Vec::with_capacity(sites.len() * 3);
        for (q, r) in sites {
            let x = intersite_distance_m * (q as f64 + r as f64 / 2.0);
            let y = intersite_distance_m * r as f64 * 3f64.sqrt() / 2.0;
            for s in 0..3 {
                sectors.push(Sector {
                    site_xy: [x, y],
                    azimuth_rad: s as f64 * 2.0 * PI / 3.0,
                });
            }
        }
        Ok(Self {
            sectors,
            serving_sector: 0,
            intersite_distance_m,
            bs_height_m,
            user_height_m,
        })
    }

    /// Antenna-to-user height difference in meters.
    pub fn height_diff_m(&self) -> f64 {
        self.bs_height_m - self.user_height_m
    }

    /// Radius of the circumscribed hexagonal cell, D / sqrt(3).
    pub fn nominal_cell_radius_m(&self) -> f64 {
        self.intersite_distance_m / 3f64.sqrt()
    }

    pub fn interferers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.sectors.len()).filter(move |&i| i != self.serving_sector)
    }

    /// Geometry from a sector's antenna to a ground point in global meters.
    pub fn geometry_to(&self, sector: usize, point_xy: [f64; 2]) -> SectorPath {
        let s = &self.sectors[sector];
        let dx = point_xy[0] - s.site_xy[0];
        let dy = point_xy[1] - s.site_xy[1];
        let ground = dx.hypot(dy);
        let dh = self.height_diff_m();
        let phi = wrap_pi(dy.atan2(dx) - s.azimuth_rad);
        let theta = PI / 2.0 + dh.atan2(ground);
        SectorPath {
            direction: Direction::new(theta, phi).expect("geometry stays on the sphere"),
            distance_m: (ground * ground + dh * dh).sqrt(),
        }
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_pi(angle: f64) -> f64 {
    let x = (-angle + PI).rem_euclid(2.0 * PI);
    PI - x
}
