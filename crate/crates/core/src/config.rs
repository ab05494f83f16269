//! TOML-backed scenario description shared by all command-line tools.
//!
//! A scenario file pins everything a run depends on — array design (fixed or
//! searched), codebook layout, network geometry, radio parameters, traffic
//! and scheduler knobs — so a (config, seed) pair fully determines the
//! output. Unknown keys are rejected to catch typos early.

use crate::antenna::{self, AntennaError};
use crate::channel::{dbm_to_w, ChannelError, NetworkLayout, RadioConfig};
use crate::codebook::{CodebookSpec, LevelSpec, SectorGeometry, SplitAxis};
use crate::netsim::{Hotspot, SimParams, TrafficModel};
use crate::optimizer::{
    self, DesignProblem, DesignSpace, OptimizedDesign, OptimizerError, SearchSettings,
    SteeringBox,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Antenna(#[from] AntennaError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub design: DesignSection,
    pub steering: SteeringSection,
    pub codebook: CodebookSection,
    pub layout: LayoutSection,
    pub sector: SectorSection,
    #[serde(default)]
    pub radio: RadioSection,
    pub traffic: TrafficSection,
    pub sim: SimSection,
}

/// Either a fixed array parameterization or a search problem; exactly one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<FixedDesign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSection>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedDesign {
    pub d_x: f64,
    pub d_z: f64,
    pub alpha_x: f64,
    pub alpha_z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// Subarray sizes (columns, rows) that must meet the side-lobe floor.
    pub constrained_sizes: Vec<(usize, usize)>,
    pub min_sidelobe_db: f64,
    pub d_x: (f64, f64),
    pub d_z: (f64, f64),
    pub alpha: (f64, f64),
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_steer_samples")]
    pub steer_samples: usize,
    #[serde(default = "default_descent_rounds")]
    pub descent_rounds: usize,
}

fn default_grid_points() -> usize {
    SearchSettings::default().grid_points
}
fn default_steer_samples() -> usize {
    SearchSettings::default().steer_samples
}
fn default_descent_rounds() -> usize {
    SearchSettings::default().descent_rounds
}

/// Steering-angle box in radians (zenith convention, azimuth from boresight).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringSection {
    pub theta: (f64, f64),
    pub phi: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    /// Wide-beam subarray size (columns, rows).
    pub level0: (usize, usize),
    pub levels: Vec<LevelEntry>,
    /// Keep descending into the locally better child even when it does not
    /// improve the running best.
    #[serde(default)]
    pub relaxed: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEntry {
    pub n_x: usize,
    pub n_z: usize,
    pub split: SplitAxis,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    pub intersite_distance_m: f64,
    #[serde(default = "default_rings")]
    pub rings: i32,
    #[serde(default = "default_bs_height")]
    pub bs_height_m: f64,
    #[serde(default = "default_user_height")]
    pub user_height_m: f64,
}

fn default_rings() -> i32 {
    2
}
fn default_bs_height() -> f64 {
    30.0
}
fn default_user_height() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSection {
    pub cell_radius_m: f64,
    #[serde(default = "default_halfspan_deg")]
    pub azimuth_halfspan_deg: f64,
    pub raster_pixel_m: f64,
    #[serde(default = "default_gap_depth")]
    pub gap_depth_db: f64,
    #[serde(default = "default_gap_fraction")]
    pub max_gap_fraction: f64,
}

fn default_halfspan_deg() -> f64 {
    60.0
}
fn default_gap_depth() -> f64 {
    40.0
}
fn default_gap_fraction() -> f64 {
    0.02
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSection {
    pub carrier_ghz: f64,
    pub bandwidth_mhz: f64,
    pub noise_density_dbm_hz: f64,
    pub tx_power_dbm: f64,
    pub rate_efficiency: f64,
    pub rate_cap_bps_hz: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            carrier_ghz: 2.6,
            bandwidth_mhz: 10.0,
            noise_density_dbm_hz: -174.0,
            tx_power_dbm: 46.0,
            rate_efficiency: 0.75,
            rate_cap_bps_hz: 4.8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub uniform_per_s_km2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hotspot: Option<HotspotSection>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HotspotSection {
    pub center_xy_m: [f64; 2],
    pub sigma_m: f64,
    pub peak_per_s_km2: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub horizon_s: f64,
    #[serde(default = "default_warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default = "default_slot_ms")]
    pub slot_ms: f64,
    #[serde(default = "default_pf_window")]
    pub pf_window_slots: f64,
    #[serde(default = "default_file_mbit")]
    pub mean_file_mbit: f64,
    /// Nakagami fading shape; `inf` disables fast fading.
    #[serde(default = "default_nakagami")]
    pub nakagami_m: f64,
    #[serde(default = "default_shadowing")]
    pub shadowing_sigma_db: f64,
    /// Deepest codebook level the beam search may use; defaults to the full
    /// tree depth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_cap: Option<usize>,
    #[serde(default = "default_max_in_system")]
    pub max_in_system: usize,
    #[serde(default = "default_p0")]
    pub p0_w: f64,
    #[serde(default = "default_pc_alpha")]
    pub pc_alpha: f64,
}

fn default_warmup_fraction() -> f64 {
    0.1
}
fn default_slot_ms() -> f64 {
    1.0
}
fn default_pf_window() -> f64 {
    100.0
}
fn default_file_mbit() -> f64 {
    4.0
}
fn default_nakagami() -> f64 {
    f64::INFINITY
}
fn default_shadowing() -> f64 {
    6.0
}
fn default_max_in_system() -> usize {
    500
}
fn default_p0() -> f64 {
    260.0
}
fn default_pc_alpha() -> f64 {
    9.4
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.design.fixed, &self.design.search) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(ConfigError::Invalid(
                    "[design] needs exactly one of `fixed` or `search`".into(),
                ))
            }
            _ => {}
        }
        if self.codebook.levels.is_empty() {
            return Err(ConfigError::Invalid("codebook needs at least one level".into()));
        }
        if self.sim.horizon_s.is_nan() || self.sim.horizon_s <= 0.0 {
            return Err(ConfigError::Invalid("sim.horizon_s must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sim.warmup_fraction) {
            return Err(ConfigError::Invalid("sim.warmup_fraction must be in [0, 1)".into()));
        }
        if let Some(cap) = self.sim.level_cap {
            if cap > self.codebook.levels.len() {
                return Err(ConfigError::Invalid(format!(
                    "sim.level_cap {cap} exceeds codebook depth {}",
                    self.codebook.levels.len()
                )));
            }
        }
        // instantiating the typed structs runs their own validations
        self.steering_box()?;
        self.radio().validate()?;
        self.sector_geometry().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn steering_box(&self) -> Result<SteeringBox, OptimizerError> {
        SteeringBox::new(
            self.steering.theta.0,
            self.steering.theta.1,
            self.steering.phi.0,
            self.steering.phi.1,
        )
    }

    pub fn design_problem(&self) -> Result<Option<DesignProblem>, ConfigError> {
        let Some(s) = &self.design.search else { return Ok(None) };
        Ok(Some(DesignProblem {
            constrained_sizes: s.constrained_sizes.clone(),
            steering_box: self.steering_box()?,
            min_sidelobe_db: s.min_sidelobe_db,
            space: DesignSpace { d_x: s.d_x, d_z: s.d_z, alpha: s.alpha },
            settings: SearchSettings {
                grid_points: s.grid_points,
                steer_samples: s.steer_samples,
                descent_rounds: s.descent_rounds,
            },
        }))
    }

    pub fn codebook_spec(&self) -> CodebookSpec {
        CodebookSpec {
            level0: self.codebook.level0,
            levels: self
                .codebook
                .levels
                .iter()
                .map(|l| LevelSpec { n_x: l.n_x, n_z: l.n_z, split: l.split })
                .collect(),
        }
    }

    pub fn sector_geometry(&self) -> SectorGeometry {
        SectorGeometry {
            cell_radius_m: self.sector.cell_radius_m,
            azimuth_halfspan_rad: self.sector.azimuth_halfspan_deg.to_radians(),
            height_diff_m: self.layout.bs_height_m - self.layout.user_height_m,
            raster_pixel_m: self.sector.raster_pixel_m,
            gap_depth_db: self.sector.gap_depth_db,
            max_gap_fraction: self.sector.max_gap_fraction,
        }
    }

    pub fn network_layout(&self) -> Result<NetworkLayout, ChannelError> {
        NetworkLayout::hex_grid(
            self.layout.intersite_distance_m,
            self.layout.rings,
            self.layout.bs_height_m,
            self.layout.user_height_m,
        )
    }

    pub fn radio(&self) -> RadioConfig {
        RadioConfig {
            carrier_ghz: self.radio.carrier_ghz,
            bandwidth_hz: self.radio.bandwidth_mhz * 1e6,
            noise_density_dbm_hz: self.radio.noise_density_dbm_hz,
            tx_power_w: dbm_to_w(self.radio.tx_power_dbm),
            rate_efficiency: self.radio.rate_efficiency,
            rate_cap_bps_hz: self.radio.rate_cap_bps_hz,
        }
    }

    pub fn traffic(&self) -> TrafficModel {
        TrafficModel {
            uniform_per_s_km2: self.traffic.uniform_per_s_km2,
            hotspot: self.traffic.hotspot.map(|h| Hotspot {
                center_xy: h.center_xy_m,
                sigma_m: h.sigma_m,
                peak_per_s_km2: h.peak_per_s_km2,
            }),
        }
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            slot_s: self.sim.slot_ms * 1e-3,
            pf_window_slots: self.sim.pf_window_slots,
            mean_file_bits: self.sim.mean_file_mbit * 1e6,
            level_cap: self.sim.level_cap.unwrap_or(self.codebook.levels.len()),
            nakagami_m: self.sim.nakagami_m,
            shadowing_sigma_db: self.sim.shadowing_sigma_db,
            max_in_system: self.sim.max_in_system,
            p0_w: self.sim.p0_w,
            pc_alpha: self.sim.pc_alpha,
        }
    }

    pub fn warmup_s(&self) -> f64 {
        self.sim.horizon_s * self.sim.warmup_fraction
    }

    /// Produces the array design this scenario runs with: either the result
    /// of the constrained search, or the fixed parameters annotated with
    /// their measured gain and side-lobe suppression.
    pub fn resolve_design(&self) -> Result<OptimizedDesign, ConfigError> {
        if let Some(problem) = self.design_problem()? {
            return Ok(optimizer::optimize(&problem)?);
        }
        let f = self.design.fixed.as_ref().unwrap();
        let bx = self.steering_box()?;
        // the largest level subarray carries the gain objective
        let (n_x, n_z) = self
            .codebook
            .levels
            .iter()
            .map(|l| (l.n_x, l.n_z))
            .max_by_key(|&(x, z)| x * z)
            .unwrap();
        let objective = antenna::ArrayDesign::new(n_x, n_z, f.d_x, f.d_z, f.alpha_x, f.alpha_z)?;
        let gain_db =
            10.0 * antenna::peak_gain(&objective, &bx.center(), 512)?.log10();
        let settings = SearchSettings::default();
        let audit = bx.sample_grid(2 * settings.steer_samples - 1);
        let mut worst = f64::INFINITY;
        for l in &self.codebook.levels {
            let d = antenna::ArrayDesign::new(l.n_x, l.n_z, f.d_x, f.d_z, f.alpha_x, f.alpha_z)?;
            let res = antenna::required_scan_resolution(&d);
            for steer in &audit {
                match antenna::sidelobe_level_db(&d, steer, res) {
                    Ok(sl) => worst = worst.min(sl),
                    Err(AntennaError::NoSidelobe) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(OptimizedDesign {
            d_x: f.d_x,
            d_z: f.d_z,
            alpha_x: f.alpha_x,
            alpha_z: f.alpha_z,
            objective_size: (n_x, n_z),
            achieved_gain_db: gain_db,
            worst_sidelobe_db: worst,
            evaluations: 0,
            audit_steer_samples: 2 * settings.steer_samples - 1,
        })
    }
}
