//! Rectangular dipole-array pattern synthesis over an infinite PEC reflector.
//!
//! The array lies in a plane a quarter wavelength in front of the reflector,
//! with elements spaced `d_x` wavelengths horizontally and `d_z` vertically.
//! Angles follow the zenith convention: `theta` is measured from the +z axis,
//! `phi` from the array boresight (+x, normal to the reflector). The reflector
//! occupies the x = 0 plane, so the pattern is identically zero for
//! |phi| > pi/2.
//!
//! A separable excitation is assumed: the normalized pattern is the product of
//! the horizontal and vertical array factors, the reflector image factor and
//! the dipole element pattern. The absolute peak gain follows from power
//! conservation over the front half-space.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

/// Hard spacing caps in wavelengths (kept at the defaults of the reference
/// deployment; `DesignSpace` narrows them further).
pub const MAX_D_X: f64 = 0.5;
pub const MAX_D_Z: f64 = 0.7;

#[derive(Debug, Error)]
pub enum AntennaError {
    #[error("invalid array design: {0}")]
    InvalidDesign(String),
    #[error("direction out of range: theta={theta}, phi={phi}")]
    InvalidDirection { theta: f64, phi: f64 },
    #[error("quadrature did not converge: refinement changed G0 by {rel_change:.4}% (> {limit:.2}%)")]
    QuadratureDiverged { rel_change: f64, limit: f64 },
    #[error("scan grid too coarse: {required} points per axis required, {given} given")]
    InsufficientResolution { required: usize, given: usize },
    #[error("no secondary lobe found (pattern has a single lobe)")]
    NoSidelobe,
}

/// One physical (sub-)array configuration: element counts, spacings in
/// wavelengths and the edge-to-center amplitude ratios of the Gaussian taper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayDesign {
    pub n_x: usize,
    pub n_z: usize,
    pub d_x: f64,
    pub d_z: f64,
    pub alpha_x: f64,
    pub alpha_z: f64,
}

impl ArrayDesign {
    pub fn new(
        n_x: usize,
        n_z: usize,
        d_x: f64,
        d_z: f64,
        alpha_x: f64,
        alpha_z: f64,
    ) -> Result<Self, AntennaError> {
        if n_x < 1 || n_z < 1 {
            return Err(AntennaError::InvalidDesign(format!(
                "element counts must be >= 1, got {n_x}x{n_z}"
            )));
        }
        if !(d_x > 0.0 && d_x <= MAX_D_X) {
            return Err(AntennaError::InvalidDesign(format!(
                "d_x must be in (0, {MAX_D_X}], got {d_x}"
            )));
        }
        if !(d_z > 0.0 && d_z <= MAX_D_Z) {
            return Err(AntennaError::InvalidDesign(format!(
                "d_z must be in (0, {MAX_D_Z}], got {d_z}"
            )));
        }
        for (name, a) in [("alpha_x", alpha_x), ("alpha_z", alpha_z)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(AntennaError::InvalidDesign(format!(
                    "{name} must be in (0, 1], got {a}"
                )));
            }
        }
        Ok(Self {
            n_x,
            n_z,
            d_x,
            d_z,
            alpha_x,
            alpha_z,
        })
    }

    /// Aperture length in the x direction, wavelengths.
    pub fn len_x(&self) -> f64 {
        (self.n_x as f64 - 1.0) * self.d_x
    }

    /// Aperture length in the z direction, wavelengths.
    pub fn len_z(&self) -> f64 {
        (self.n_z as f64 - 1.0) * self.d_z
    }

    /// Same spacings and tapers, different element counts.
    pub fn subarray(&self, n_x: usize, n_z: usize) -> Result<Self, AntennaError> {
        Self::new(n_x, n_z, self.d_x, self.d_z, self.alpha_x, self.alpha_z)
    }
}

/// Electrical steering of one beam. `theta_e` from the +z axis, `phi_e` from
/// the boresight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringAngles {
    pub theta_e: f64,
    pub phi_e: f64,
}

impl SteeringAngles {
    pub fn new(theta_e: f64, phi_e: f64) -> Self {
        Self { theta_e, phi_e }
    }
}

/// An observation direction on the sphere. The pattern itself is only nonzero
/// on the front half-space |phi| <= pi/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Result<Self, AntennaError> {
        if !(0.0..=PI).contains(&theta) || !(-PI..=PI).contains(&phi) || theta.is_nan() {
            return Err(AntennaError::InvalidDirection { theta, phi });
        }
        Ok(Self { theta, phi })
    }

    pub fn behind_reflector(&self) -> bool {
        self.phi.abs() > PI / 2.0
    }
}

/// A pattern evaluation at one direction.
#[derive(Debug, Clone, Copy)]
pub struct PatternSample {
    pub direction: Direction,
    pub normalized_gain: f64,
    pub absolute_gain_db: f64,
}

fn gaussian_weights(n: usize, d: f64, alpha: f64) -> Vec<f64> {
    if n == 1 || alpha == 1.0 {
        return vec![1.0; n];
    }
    let len = (n as f64 - 1.0) * d;
    let half = len / 2.0;
    // sigma^2 chosen so the edge-to-center amplitude ratio is exactly alpha.
    let sigma_sq = half * half / (-alpha.ln());
    let mut w: Vec<f64> = (0..n)
        .map(|m| {
            let pos = m as f64 * d;
            (-(pos - half) * (pos - half) / sigma_sq).exp()
        })
        .collect();
    let max = w.iter().cloned().fold(f64::MIN, f64::max);
    for v in &mut w {
        *v /= max;
    }
    w
}

/// Gaussian taper weights in both directions, normalized so the largest
/// element weight is 1. The edge-to-center ratio equals `alpha` in each
/// direction; `alpha = 1` degenerates to the uniform taper.
pub fn taper_weights(design: &ArrayDesign) -> (Vec<f64>, Vec<f64>) {
    (
        gaussian_weights(design.n_x, design.d_x, design.alpha_x),
        gaussian_weights(design.n_z, design.d_z, design.alpha_z),
    )
}

/// Weighted phasor sum with a constant phase increment per element,
/// normalized by the weight sum. Exactly 1 + 0i when the increment is zero.
fn weighted_array_factor(weights: &[f64], phase_step: f64) -> Complex64 {
    let rot = Complex64::from_polar(1.0, phase_step);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut phasor = Complex64::new(1.0, 0.0);
    let mut wsum = 0.0;
    for &w in weights {
        acc += w * phasor;
        wsum += w;
        phasor *= rot;
    }
    acc / wsum
}

/// Horizontal array factor; unity at the steering direction.
pub fn array_factor_x(design: &ArrayDesign, steer: &SteeringAngles, dir: &Direction) -> Complex64 {
    let (wx, _) = taper_weights(design);
    let du = dir.theta.sin() * dir.phi.sin() - steer.theta_e.sin() * steer.phi_e.sin();
    weighted_array_factor(&wx, -2.0 * PI * design.d_x * du)
}

/// Vertical array factor; unity at the steering elevation.
pub fn array_factor_z(design: &ArrayDesign, steer: &SteeringAngles, dir: &Direction) -> Complex64 {
    let (_, wz) = taper_weights(design);
    let dv = dir.theta.cos() - steer.theta_e.cos();
    weighted_array_factor(&wz, -2.0 * PI * design.d_z * dv)
}

/// Reflector image factor sin(pi/2 * sin(theta) cos(phi)); peaks at boresight,
/// vanishes along the reflector plane.
pub fn image_factor(dir: &Direction) -> f64 {
    if dir.behind_reflector() {
        return 0.0;
    }
    (PI / 2.0 * dir.theta.sin() * dir.phi.cos()).sin()
}

/// Normalized element pattern of a vertical dipole, sin^3(theta).
pub fn dipole_gain(dir: &Direction) -> f64 {
    let s = dir.theta.sin();
    s * s * s
}

/// Normalized separable pattern
/// f = |AF_x|^2 * AF_y^2 * |AF_z|^2 * sin^3(theta), zero behind the reflector.
pub fn normalized_pattern(design: &ArrayDesign, steer: &SteeringAngles, dir: &Direction) -> f64 {
    if dir.behind_reflector() {
        return 0.0;
    }
    let afx = array_factor_x(design, steer, dir).norm_sqr();
    let afz = array_factor_z(design, steer, dir).norm_sqr();
    let afy = image_factor(dir);
    afx * afy * afy * afz * dipole_gain(dir)
}

/// Steering-independent squared-magnitude array-factor tables over the phase
/// coordinates du = sin(theta)sin(phi) - sin(theta_e)sin(phi_e) and
/// dv = cos(theta) - cos(theta_e). Built once per design, reused across
/// steering angles by every scan-type operation.
#[derive(Debug)]
pub(crate) struct ScanTables {
    ax2: FactorTable,
    az2: FactorTable,
}

#[derive(Debug)]
pub(crate) struct FactorTable {
    lo: f64,
    step: f64,
    vals: Vec<f64>,
}

impl FactorTable {
    fn build(weights: &[f64], d: f64, points: usize) -> Self {
        let lo = -2.0;
        let step = 4.0 / (points as f64 - 1.0);
        let vals = (0..points)
            .map(|i| {
                let delta = lo + i as f64 * step;
                weighted_array_factor(weights, -2.0 * PI * d * delta).norm_sqr()
            })
            .collect();
        Self { lo, step, vals }
    }

    #[inline]
    pub(crate) fn lookup(&self, x: f64) -> f64 {
        let t = (x - self.lo) / self.step;
        if t <= 0.0 {
            return self.vals[0];
        }
        let i = t as usize;
        if i + 1 >= self.vals.len() {
            return *self.vals.last().unwrap();
        }
        let frac = t - i as f64;
        self.vals[i] * (1.0 - frac) + self.vals[i + 1] * frac
    }

    /// Walks outward from delta = 0 to the first local minimum on each side.
    /// Returns None when the factor is lobe-free (monotone out to the table
    /// edge), meaning the whole axis belongs to the main lobe.
    fn main_lobe_bounds(&self) -> Option<(f64, f64)> {
        let center = ((0.0 - self.lo) / self.step).round() as usize;
        let up = self.first_min_from(center, 1)?;
        let dn = self.first_min_from(center, -1)?;
        Some((self.lo + dn as f64 * self.step, self.lo + up as f64 * self.step))
    }

    fn first_min_from(&self, start: usize, dir: isize) -> Option<usize> {
        let n = self.vals.len() as isize;
        let mut i = start as isize;
        // Hill-climb to the local peak first, so a start half a step off the
        // true maximum does not masquerade as a minimum.
        while i + dir >= 0 && i + dir < n && self.vals[(i + dir) as usize] > self.vals[i as usize]
        {
            i += dir;
        }
        // Descend, treating flat plateaus as part of the descent; the first
        // strict rise marks the local minimum.
        loop {
            let j = i + dir;
            if j < 0 || j >= n {
                return None;
            }
            if self.vals[j as usize] > self.vals[i as usize] {
                return Some(i as usize);
            }
            i = j;
        }
    }

    /// Half width (in the phase coordinate) at which the factor first drops
    /// below half its center value.
    fn half_power_halfwidth(&self) -> f64 {
        let center = ((0.0 - self.lo) / self.step).round() as usize;
        let mut i = center;
        while i + 1 < self.vals.len() && self.vals[i] > 0.5 {
            i += 1;
        }
        (i - center) as f64 * self.step
    }
}

impl ScanTables {
    pub(crate) fn new(design: &ArrayDesign) -> Self {
        let (wx, wz) = taper_weights(design);
        // >= 96 samples across the narrowest lobe keeps interpolation error
        // below ~1e-4 of the lobe peak.
        let px = table_points(design.n_x, design.d_x);
        let pz = table_points(design.n_z, design.d_z);
        Self {
            ax2: FactorTable::build(&wx, design.d_x, px),
            az2: FactorTable::build(&wz, design.d_z, pz),
        }
    }

    #[inline]
    pub(crate) fn pattern(&self, steer_u: f64, steer_v: f64, theta: f64, phi: f64) -> f64 {
        if phi.abs() > PI / 2.0 {
            return 0.0;
        }
        let st = theta.sin();
        let u = st * phi.sin();
        let v = theta.cos();
        let afy = (PI / 2.0 * st * phi.cos()).sin();
        self.ax2.lookup(u - steer_u) * self.az2.lookup(v - steer_v) * afy * afy * st * st * st
    }
}

fn table_points(n: usize, d: f64) -> usize {
    let lobe = 1.0 / ((n as f64) * d).max(0.5);
    ((4.0 / lobe * 96.0).ceil() as usize).clamp(1024, 65_536)
}

/// Relative change threshold beyond which the quadrature refinement is
/// reported as non-convergent.
const QUADRATURE_DIVERGENCE_PCT: f64 = 0.5;

/// Peak gain G0 from power conservation: 4*pi divided by the pattern integral
/// over the front half-space, midpoint rule on a `resolution`^2 grid with one
/// refinement step at double resolution. Returns the refined value (linear).
pub fn peak_gain(
    design: &ArrayDesign,
    steer: &SteeringAngles,
    resolution: usize,
) -> Result<f64, AntennaError> {
    if resolution < 64 {
        return Err(AntennaError::InsufficientResolution {
            required: 64,
            given: resolution,
        });
    }
    let coarse = 4.0 * PI / pattern_integral(design, steer, resolution);
    let fine = 4.0 * PI / pattern_integral(design, steer, 2 * resolution);
    let rel_change = ((fine - coarse) / fine).abs() * 100.0;
    if rel_change > QUADRATURE_DIVERGENCE_PCT {
        return Err(AntennaError::QuadratureDiverged {
            rel_change,
            limit: QUADRATURE_DIVERGENCE_PCT,
        });
    }
    Ok(fine)
}

/// Midpoint-rule integral of f*sin(theta) over theta in [0, pi],
/// phi in [-pi/2, pi/2]. Exact per-cell evaluation, fixed summation order.
pub fn pattern_integral(design: &ArrayDesign, steer: &SteeringAngles, resolution: usize) -> f64 {
    let (wx, wz) = taper_weights(design);
    let u_e = steer.theta_e.sin() * steer.phi_e.sin();
    let v_e = steer.theta_e.cos();
    let dtheta = PI / resolution as f64;
    let dphi = PI / resolution as f64;
    let mut total = 0.0;
    for i in 0..resolution {
        let theta = (i as f64 + 0.5) * dtheta;
        let st = theta.sin();
        let v = theta.cos();
        let afz = weighted_array_factor(&wz, -2.0 * PI * design.d_z * (v - v_e)).norm_sqr();
        let row_env = afz * st * st * st * st; // includes the sin(theta) Jacobian
        let mut row = 0.0;
        for j in 0..resolution {
            let phi = -PI / 2.0 + (j as f64 + 0.5) * dphi;
            let afx = weighted_array_factor(&wx, -2.0 * PI * design.d_x * (st * phi.sin() - u_e))
                .norm_sqr();
            let afy = (PI / 2.0 * st * phi.cos()).sin();
            row += afx * afy * afy;
        }
        total += row * row_env;
    }
    total * dtheta * dphi
}

/// Result of a side-lobe scan.
#[derive(Debug, Clone, Copy)]
pub struct SidelobeScan {
    /// Peak-to-worst-side-lobe suppression in dB (positive = suppression).
    pub suppression_db: f64,
    /// Direction of the worst side lobe.
    pub worst: Direction,
}

/// Side-lobe suppression of the steered pattern: peak gain minus the largest
/// pattern value outside the main lobe, in dB. The main lobe is delimited by
/// the first local minima of the two array-factor cuts around the steering
/// direction. Errors with `NoSidelobe` for patterns with a single lobe.
pub fn sidelobe_level_db(
    design: &ArrayDesign,
    steer: &SteeringAngles,
    grid_resolution: usize,
) -> Result<f64, AntennaError> {
    sidelobe_scan(design, steer, grid_resolution).map(|s| s.suppression_db)
}

/// Like [`sidelobe_level_db`] but returns the worst-lobe direction too.
pub fn sidelobe_scan(
    design: &ArrayDesign,
    steer: &SteeringAngles,
    grid_resolution: usize,
) -> Result<SidelobeScan, AntennaError> {
    let tables = ScanTables::new(design);
    sidelobe_level_with_tables(design, &tables, steer, grid_resolution)
}

pub(crate) fn sidelobe_level_with_tables(
    design: &ArrayDesign,
    tables: &ScanTables,
    steer: &SteeringAngles,
    grid_resolution: usize,
) -> Result<SidelobeScan, AntennaError> {
    let required = required_scan_resolution(design);
    if grid_resolution < required {
        return Err(AntennaError::InsufficientResolution {
            required,
            given: grid_resolution,
        });
    }
    let u_e = steer.theta_e.sin() * steer.phi_e.sin();
    let v_e = steer.theta_e.cos();
    let u_bounds = tables.ax2.main_lobe_bounds();
    let v_bounds = tables.az2.main_lobe_bounds();
    if u_bounds.is_none() && v_bounds.is_none() {
        return Err(AntennaError::NoSidelobe);
    }
    let in_main = |du: f64, dv: f64| -> bool {
        let u_in = u_bounds.is_none_or(|(lo, hi)| du > lo && du < hi);
        let v_in = v_bounds.is_none_or(|(lo, hi)| dv > lo && dv < hi);
        u_in && v_in
    };

    let res = grid_resolution;
    let dtheta = PI / res as f64;
    let dphi = PI / res as f64;
    let mut peak = 0.0_f64;
    let mut side = 0.0_f64;
    let mut side_dir = Direction { theta: 0.0, phi: 0.0 };
    for i in 0..res {
        let theta = (i as f64 + 0.5) * dtheta;
        let st = theta.sin();
        let v = theta.cos();
        for j in 0..res {
            let phi = -PI / 2.0 + (j as f64 + 0.5) * dphi;
            let f = tables.pattern(u_e, v_e, theta, phi);
            if f > peak {
                peak = f;
            }
            if f > side && !in_main(st * phi.sin() - u_e, v - v_e) {
                side = f;
                side_dir = Direction { theta, phi };
            }
        }
    }
    if side <= 0.0 {
        return Err(AntennaError::NoSidelobe);
    }
    Ok(SidelobeScan {
        suppression_db: 10.0 * (peak / side).log10(),
        worst: side_dir,
    })
}

/// Minimum scan resolution putting >= 4 grid steps across the -3 dB width of
/// the narrowest factor lobe.
pub fn required_scan_resolution(design: &ArrayDesign) -> usize {
    let tables = ScanTables::new(design);
    let wu = 2.0 * tables.ax2.half_power_halfwidth();
    let wv = 2.0 * tables.az2.half_power_halfwidth();
    let width = wu.min(wv).max(1e-6);
    ((4.0 * PI / width).ceil() as usize).max(64)
}

/// Writes the full pattern grid as CSV: `theta_rad,phi_rad,gain_dbi`.
/// Zero-gain cells are floored at -150 dBi.
pub fn export_pattern_grid<W: Write>(
    design: &ArrayDesign,
    steer: &SteeringAngles,
    g0_linear: f64,
    resolution: usize,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "theta_rad,phi_rad,gain_dbi")?;
    let tables = ScanTables::new(design);
    let u_e = steer.theta_e.sin() * steer.phi_e.sin();
    let v_e = steer.theta_e.cos();
    for i in 0..resolution {
        let theta = (i as f64 + 0.5) * PI / resolution as f64;
        for j in 0..resolution {
            let phi = -PI / 2.0 + (j as f64 + 0.5) * PI / resolution as f64;
            let f = tables.pattern(u_e, v_e, theta, phi);
            let db = gain_dbi(g0_linear, f);
            writeln!(out, "{theta},{phi},{db}")?;
        }
    }
    Ok(())
}

/// Principal-cut axis for 1-D pattern exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutAxis {
    /// Sweep theta at the steering azimuth.
    Elevation,
    /// Sweep phi at the steering elevation.
    Azimuth,
}

/// Writes one principal cut as CSV: `angle_rad,gain_dbi`.
pub fn export_principal_cut<W: Write>(
    design: &ArrayDesign,
    steer: &SteeringAngles,
    g0_linear: f64,
    axis: CutAxis,
    resolution: usize,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "angle_rad,gain_dbi")?;
    for i in 0..resolution {
        let (angle, dir) = match axis {
            CutAxis::Elevation => {
                let theta = (i as f64 + 0.5) * PI / resolution as f64;
                (theta, Direction { theta, phi: steer.phi_e })
            }
            CutAxis::Azimuth => {
                let phi = -PI / 2.0 + (i as f64 + 0.5) * PI / resolution as f64;
                (phi, Direction { theta: steer.theta_e, phi })
            }
        };
        let f = normalized_pattern(design, steer, &dir);
        writeln!(out, "{angle},{}", gain_dbi(g0_linear, f))?;
    }
    Ok(())
}

/// Absolute gain in dBi with a -150 dBi floor for zero pattern values.
pub fn gain_dbi(g0_linear: f64, normalized: f64) -> f64 {
    let g = g0_linear * normalized;
    if g <= 1e-15 {
        -150.0
    } else {
        10.0 * g.log10()
    }
}
