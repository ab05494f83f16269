//! Hierarchical beam codebooks over a cell sector.
//!
//! A codebook is a binary tree of beams. Level 0 is a single wide beam from a
//! small subarray, downtilted so its upper −3 dB elevation contour touches
//! the cell edge. Each deeper level doubles the beam count with a larger
//! subarray: an azimuth split halves the parent's azimuth interval, an
//! elevation split halves the parent's ground-range interval into two
//! equal-area rings. Every beam is steered at the centroid of its ground
//! region (clamped into the steering box the design was optimized for).
//!
//! Coverage is rasterized on the ground plane per level as a best-server
//! partition: with relaxation off a pixel competes only among the children of
//! its parent-level owner (so child coverage nests inside the parent's);
//! with relaxation on the argmax runs over the whole level, letting deep
//! levels fill regions their parents never covered.

use crate::antenna::{
    self, AntennaError, ArrayDesign, Direction, ScanTables, SteeringAngles,
};
use crate::optimizer::{OptimizedDesign, SteeringBox};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("invalid codebook spec: {0}")]
    InvalidSpec(String),
    #[error(
        "level {level} leaves {gap_fraction:.1}% of the sector more than \
         {gap_depth_db} dB below the wide beam (limit {max_fraction:.1}%)"
    )]
    CoverageGap {
        level: usize,
        gap_fraction: f64,
        gap_depth_db: f64,
        max_fraction: f64,
    },
    #[error(transparent)]
    Antenna(#[from] AntennaError),
}

/// How a parent's ground region is halved to produce its two children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAxis {
    Azimuth,
    Elevation,
}

/// Subarray size and split axis for one level below the root.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelSpec {
    pub n_x: usize,
    pub n_z: usize,
    /// How level l-1 beams split to produce this level.
    pub split: SplitAxis,
}

/// Full level plan: the level-0 wide-beam subarray plus one spec per deeper
/// level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub level0: (usize, usize),
    pub levels: Vec<LevelSpec>,
}

/// Sector ground geometry and raster controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SectorGeometry {
    pub cell_radius_m: f64,
    /// Half of the sector's azimuth span (pi/3 for a trisector site).
    pub azimuth_halfspan_rad: f64,
    /// Antenna height above the user plane, meters.
    pub height_diff_m: f64,
    pub raster_pixel_m: f64,
    /// A pixel counts as a coverage gap when its level-l best server is more
    /// than this many dB below the wide beam's signal there. Ground the
    /// steering box cannot point at (closer than h / tan of the maximum
    /// depression angle) is exempt from the audit.
    pub gap_depth_db: f64,
    /// Largest tolerable gap fraction per level.
    pub max_gap_fraction: f64,
}

impl SectorGeometry {
    pub fn validate(&self) -> Result<(), CodebookError> {
        if !(self.cell_radius_m > 0.0
            && self.azimuth_halfspan_rad > 0.0
            && self.azimuth_halfspan_rad <= PI / 2.0
            && self.height_diff_m > 0.0
            && self.raster_pixel_m > 0.0
            && self.gap_depth_db > 0.0
            && (0.0..=1.0).contains(&self.max_gap_fraction))
        {
            return Err(CodebookError::InvalidSpec(format!("bad sector geometry: {self:?}")));
        }
        Ok(())
    }

    /// Observation direction and 3-D distance from the sector antenna (at the
    /// local origin, boresight along +x) to a ground point.
    pub fn direction_to(&self, xy: [f64; 2]) -> (Direction, f64) {
        let ground = xy[0].hypot(xy[1]);
        let phi = xy[1].atan2(xy[0]);
        let theta = PI / 2.0 + self.height_diff_m.atan2(ground);
        let dist = (ground * ground + self.height_diff_m * self.height_diff_m).sqrt();
        (Direction::new(theta, phi).expect("ground geometry stays on the sphere"), dist)
    }

    pub fn contains(&self, xy: [f64; 2]) -> bool {
        let r = xy[0].hypot(xy[1]);
        r <= self.cell_radius_m && xy[1].atan2(xy[0]).abs() <= self.azimuth_halfspan_rad
    }
}

/// One beam of the tree. Ground region bounds are kept for splitting and for
/// reading the file; coverage itself is the rasterized best-server region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Beam {
    pub id: usize,
    pub level: usize,
    /// 1-based index within the level.
    pub index: usize,
    pub subarray: (usize, usize),
    pub steer: SteeringAngles,
    pub peak_gain_db: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Azimuth interval of the beam's ground region, radians.
    pub azimuth_interval: (f64, f64),
    /// Ground-range interval of the beam's region, meters.
    pub range_interval: (f64, f64),
    /// False when the beam's best-server footprint came out empty.
    pub active: bool,
}

/// The serializable codebook: design, geometry and the beam tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    pub design: OptimizedDesign,
    pub geometry: SectorGeometry,
    pub steering_box: SteeringBox,
    /// Whether deep levels may claim ground their parents never covered.
    pub relaxed: bool,
    pub beams: Vec<Beam>,
    /// Beam ids per level.
    pub levels: Vec<Vec<usize>>,
}

/// Best-server assignments per level on a common pixel grid.
#[derive(Debug, Clone)]
pub struct CoverageRasters {
    /// Lower-left corner of pixel (0, 0) in sector-local meters.
    pub origin_xy: [f64; 2],
    pub pixel_m: f64,
    pub nx: usize,
    pub ny: usize,
    /// One assignment grid per level; -1 marks out-of-sector pixels.
    pub levels: Vec<Vec<i32>>,
    /// Fraction of in-sector pixels flagged as gaps, per level.
    pub gap_fraction: Vec<f64>,
    pub in_sector_pixels: usize,
}

impl CoverageRasters {
    fn index(&self, xy: [f64; 2]) -> Option<usize> {
        let i = ((xy[0] - self.origin_xy[0]) / self.pixel_m).floor();
        let j = ((xy[1] - self.origin_xy[1]) / self.pixel_m).floor();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return None;
        }
        Some(j as usize * self.nx + i as usize)
    }

    /// Beam owning the pixel containing `xy` at `level`, if inside the sector.
    pub fn beam_at(&self, level: usize, xy: [f64; 2]) -> Option<usize> {
        let idx = self.index(xy)?;
        match self.levels.get(level)?.get(idx) {
            Some(&b) if b >= 0 => Some(b as usize),
            _ => None,
        }
    }

    /// Pixel count of one beam's footprint at its level.
    pub fn footprint_pixels(&self, level: usize, beam: usize) -> usize {
        self.levels[level].iter().filter(|&&b| b == beam as i32).count()
    }

    /// Writes one level as long-form CSV `x_m,y_m,beam`.
    pub fn export_level_csv<W: Write>(&self, level: usize, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "x_m,y_m,beam")?;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let b = self.levels[level][j * self.nx + i];
                if b < 0 {
                    continue;
                }
                let x = self.origin_xy[0] + (i as f64 + 0.5) * self.pixel_m;
                let y = self.origin_xy[1] + (j as f64 + 0.5) * self.pixel_m;
                writeln!(out, "{x},{y},{b}")?;
            }
        }
        Ok(())
    }
}

/// Fast gain evaluation for every beam of a codebook: one squared-factor
/// table pair per level plus cached peak gains.
pub struct PatternBank {
    tables: Vec<ScanTables>,
    g0_linear: Vec<f64>,
    steer_uv: Vec<(f64, f64)>,
    beam_level: Vec<usize>,
}

impl PatternBank {
    pub fn new(cb: &Codebook) -> Result<Self, CodebookError> {
        let mut tables = Vec::with_capacity(cb.levels.len());
        for level in &cb.levels {
            let beam = &cb.beams[level[0]];
            let design = cb.design.design(beam.subarray.0, beam.subarray.1)?;
            tables.push(ScanTables::new(&design));
        }
        let mut g0_linear = Vec::with_capacity(cb.beams.len());
        let mut steer_uv = Vec::with_capacity(cb.beams.len());
        let mut beam_level = Vec::with_capacity(cb.beams.len());
        for beam in &cb.beams {
            g0_linear.push(10f64.powf(beam.peak_gain_db / 10.0));
            steer_uv.push((
                beam.steer.theta_e.sin() * beam.steer.phi_e.sin(),
                beam.steer.theta_e.cos(),
            ));
            beam_level.push(beam.level);
        }
        Ok(Self { tables, g0_linear, steer_uv, beam_level })
    }

    /// Absolute linear gain of a beam toward a direction.
    pub fn gain(&self, beam: usize, dir: &Direction) -> f64 {
        let (u_e, v_e) = self.steer_uv[beam];
        self.g0_linear[beam]
            * self.tables[self.beam_level[beam]].pattern(u_e, v_e, dir.theta, dir.phi)
    }
}

/// A standalone wide beam (used for the static interferer sectors).
#[derive(Debug)]
pub struct StaticBeam {
    pub design: ArrayDesign,
    pub steer: SteeringAngles,
    pub g0_linear: f64,
    tables: ScanTables,
}

impl StaticBeam {
    /// Wide beam downtilted for a cell of the given radius.
    pub fn for_cell(
        design: ArrayDesign,
        height_diff_m: f64,
        cell_radius_m: f64,
    ) -> Result<Self, CodebookError> {
        let steer = downtilt_for_coverage(&design, height_diff_m, cell_radius_m);
        let g0 = antenna::peak_gain(&design, &steer, 256)?;
        Ok(Self { design, steer, g0_linear: g0, tables: ScanTables::new(&design) })
    }

    pub fn gain(&self, dir: &Direction) -> f64 {
        let u_e = self.steer.theta_e.sin() * self.steer.phi_e.sin();
        let v_e = self.steer.theta_e.cos();
        self.g0_linear * self.tables.pattern(u_e, v_e, dir.theta, dir.phi)
    }
}

/// Downtilt such that the upper −3 dB elevation contour of the beam meets the
/// ground at the cell edge: solves for the steering zenith angle by bisection
/// on the boresight elevation cut.
pub fn downtilt_for_coverage(
    design: &ArrayDesign,
    height_diff_m: f64,
    cell_radius_m: f64,
) -> SteeringAngles {
    let theta_edge = PI / 2.0 + (height_diff_m / cell_radius_m).atan();
    // Upper -3 dB bound (smallest theta at half the cut's peak) for a given
    // steering zenith angle.
    let upper_3db = |theta_t: f64| -> f64 {
        let steer = SteeringAngles::new(theta_t, 0.0);
        let n = 1200;
        let lo = (theta_t - 0.6).max(0.0);
        let step = (theta_t - lo) / n as f64;
        let cut: Vec<f64> = (0..=n)
            .map(|i| {
                let theta = lo + i as f64 * step;
                antenna::normalized_pattern(design, &steer, &Direction::new(theta, 0.0).unwrap())
            })
            .collect();
        let peak = cut.iter().cloned().fold(0.0, f64::max);
        let peak_idx = cut.iter().position(|&v| v == peak).unwrap();
        let mut i = peak_idx;
        while i > 0 && cut[i] > peak / 2.0 {
            i -= 1;
        }
        lo + i as f64 * step
    };
    let (mut lo, mut hi) = (theta_edge, (theta_edge + 0.6).min(PI));
    if upper_3db(hi) < theta_edge {
        // Beam too wide to pull its upper edge down to the cell edge within
        // the bracket; use the steepest tilt considered.
        return SteeringAngles::new(hi, 0.0);
    }
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if upper_3db(mid) < theta_edge {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    SteeringAngles::new(0.5 * (lo + hi), 0.0)
}

/// Area centroid radius of the wedge ring between two ground ranges.
fn ring_centroid(r1: f64, r2: f64) -> f64 {
    if r2 - r1 < 1e-12 {
        return r2;
    }
    2.0 / 3.0 * (r2.powi(3) - r1.powi(3)) / (r2 * r2 - r1 * r1)
}

/// Ring split radius giving two sub-rings of equal wedge area.
fn equal_area_split(r1: f64, r2: f64) -> f64 {
    (0.5 * (r1 * r1 + r2 * r2)).sqrt()
}

/// Builds the beam tree, rasters every level and validates coverage.
pub fn build_codebook(
    design: &OptimizedDesign,
    geometry: SectorGeometry,
    spec: &CodebookSpec,
    steering_box: SteeringBox,
    relaxed: bool,
) -> Result<(Codebook, CoverageRasters), CodebookError> {
    geometry.validate()?;
    if spec.levels.len() > 16 {
        return Err(CodebookError::InvalidSpec(format!(
            "{} levels below the root is beyond any practical tree",
            spec.levels.len()
        )));
    }

    let mut beams: Vec<Beam> = Vec::new();
    let mut levels: Vec<Vec<usize>> = Vec::new();

    // Level 0: one wide beam over the whole sector, tilted for the cell edge.
    let root_design = design.design(spec.level0.0, spec.level0.1)?;
    let root_steer = downtilt_for_coverage(&root_design, geometry.height_diff_m, geometry.cell_radius_m);
    let root_steer = steering_box.clamp(root_steer);
    beams.push(Beam {
        id: 0,
        level: 0,
        index: 1,
        subarray: spec.level0,
        steer: root_steer,
        peak_gain_db: 10.0 * antenna::peak_gain(&root_design, &root_steer, 256)?.log10(),
        parent: None,
        children: Vec::new(),
        azimuth_interval: (-geometry.azimuth_halfspan_rad, geometry.azimuth_halfspan_rad),
        range_interval: (0.0, geometry.cell_radius_m),
        active: true,
    });
    levels.push(vec![0]);

    for (l, ls) in spec.levels.iter().enumerate() {
        let level = l + 1;
        let level_design = design.design(ls.n_x, ls.n_z)?;
        let mut ids = Vec::new();
        let parents: Vec<usize> = levels[level - 1].clone();
        for parent_id in parents {
            let (az, rr) = {
                let p = &beams[parent_id];
                (p.azimuth_interval, p.range_interval)
            };
            let halves: [((f64, f64), (f64, f64)); 2] = match ls.split {
                SplitAxis::Azimuth => {
                    let mid = 0.5 * (az.0 + az.1);
                    [((az.0, mid), rr), ((mid, az.1), rr)]
                }
                SplitAxis::Elevation => {
                    let mid = equal_area_split(rr.0, rr.1);
                    [(az, (rr.0, mid)), (az, (mid, rr.1))]
                }
            };
            for (child_az, child_rr) in halves {
                let r_bar = ring_centroid(child_rr.0, child_rr.1);
                let steer = steering_box.clamp(SteeringAngles::new(
                    PI / 2.0 + (geometry.height_diff_m / r_bar.max(1.0)).atan(),
                    0.5 * (child_az.0 + child_az.1),
                ));
                let id = beams.len();
                let index = ids.len() + 1;
                beams.push(Beam {
                    id,
                    level,
                    index,
                    subarray: (ls.n_x, ls.n_z),
                    steer,
                    peak_gain_db: 10.0 * antenna::peak_gain(&level_design, &steer, 256)?.log10(),
                    parent: Some(parent_id),
                    children: Vec::new(),
                    azimuth_interval: child_az,
                    range_interval: child_rr,
                    active: true,
                });
                beams[parent_id].children.push(id);
                ids.push(id);
            }
        }
        levels.push(ids);
    }

    let mut cb = Codebook {
        design: design.clone(),
        geometry,
        steering_box,
        relaxed,
        beams,
        levels,
    };
    let rasters = build_rasters(&cb)?;
    for beam in &mut cb.beams {
        beam.active = rasters.footprint_pixels(beam.level, beam.id) > 0;
    }
    Ok((cb, rasters))
}

/// Rasterizes best-server coverage for every level and checks the gap budget.
pub fn build_rasters(cb: &Codebook) -> Result<CoverageRasters, CodebookError> {
    let g = &cb.geometry;
    let half_y = g.cell_radius_m * g.azimuth_halfspan_rad.sin().min(1.0);
    let origin = [0.0, -half_y];
    let nx = (g.cell_radius_m / g.raster_pixel_m).ceil() as usize;
    let ny = (2.0 * half_y / g.raster_pixel_m).ceil() as usize;
    if nx == 0 || ny == 0 || nx * ny > 100_000_000 {
        return Err(CodebookError::InvalidSpec(format!(
            "raster of {nx}x{ny} pixels is degenerate or too large"
        )));
    }
    let bank = PatternBank::new(cb)?;

    // Closest ground range any beam of the steering box can point at; nearer
    // pixels still get assigned but are exempt from the gap audit.
    let max_depression = cb.steering_box.theta_max - PI / 2.0;
    let reach_m = if max_depression > 1e-9 { g.height_diff_m / max_depression.tan() } else { f64::INFINITY };

    // Per-pixel observation directions for in-sector pixels.
    let mut dirs: Vec<Option<Direction>> = Vec::with_capacity(nx * ny);
    let mut audited: Vec<bool> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let xy = [
                origin[0] + (i as f64 + 0.5) * g.raster_pixel_m,
                origin[1] + (j as f64 + 0.5) * g.raster_pixel_m,
            ];
            let inside = g.contains(xy);
            dirs.push(if inside { Some(g.direction_to(xy).0) } else { None });
            audited.push(inside && xy[0].hypot(xy[1]) >= reach_m);
        }
    }
    let in_sector = dirs.iter().flatten().count();
    if in_sector == 0 {
        return Err(CodebookError::InvalidSpec("no raster pixel falls inside the sector".into()));
    }
    let audited_total = audited.iter().filter(|&&a| a).count();
    if audited_total == 0 {
        return Err(CodebookError::InvalidSpec(
            "the steering box never points at the sector ground (cell entirely \
             closer than the box's reach)"
                .into(),
        ));
    }

    let argmax_gain = |candidates: &[usize], dir: &Direction| -> (usize, f64) {
        let mut best = candidates[0];
        let mut best_g = bank.gain(best, dir);
        for &b in &candidates[1..] {
            let gb = bank.gain(b, dir);
            if gb > best_g {
                best = b;
                best_g = gb;
            }
        }
        (best, best_g)
    };

    let mut rasters: Vec<Vec<i32>> = Vec::with_capacity(cb.levels.len());
    let mut gap_fraction = Vec::with_capacity(cb.levels.len());
    // The wide beam's signal is the coverage yardstick at every level.
    let mut root_gain: Vec<f64> = vec![0.0; nx * ny];
    for (px, dir) in dirs.iter().enumerate() {
        if let Some(d) = dir {
            root_gain[px] = bank.gain(0, d);
        }
    }

    for (level, ids) in cb.levels.iter().enumerate() {
        let mut grid = vec![-1i32; nx * ny];
        let mut gaps = 0usize;
        let gap_ratio = 10f64.powf(-g.gap_depth_db / 10.0);
        for (px, dir) in dirs.iter().enumerate() {
            let Some(d) = dir else { continue };
            let candidates: Vec<usize> = if cb.relaxed || level == 0 {
                ids.clone()
            } else {
                let parent = rasters[level - 1][px];
                debug_assert!(parent >= 0);
                cb.beams[parent as usize].children.clone()
            };
            let (best, best_g) = argmax_gain(&candidates, d);
            grid[px] = best as i32;
            if audited[px] && best_g < root_gain[px] * gap_ratio {
                gaps += 1;
            }
        }
        let frac = gaps as f64 / audited_total as f64;
        if frac > g.max_gap_fraction {
            return Err(CodebookError::CoverageGap {
                level,
                gap_fraction: frac * 100.0,
                gap_depth_db: g.gap_depth_db,
                max_fraction: g.max_gap_fraction * 100.0,
            });
        }
        gap_fraction.push(frac);
        rasters.push(grid);
    }

    Ok(CoverageRasters {
        origin_xy: origin,
        pixel_m: g.raster_pixel_m,
        nx,
        ny,
        levels: rasters,
        gap_fraction,
        in_sector_pixels: in_sector,
    })
}

impl Codebook {
    pub fn root(&self) -> usize {
        self.levels[0][0]
    }

    /// Number of levels below the root.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn write_json<W: Write>(&self, out: &mut W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }

    pub fn read_json(data: &str) -> serde_json::Result<Self> {
        serde_json::from_str(data)
    }
}

/// Greedy descent state: the running best beam and the probe cursor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionState {
    pub best: usize,
    pub best_sinr: f64,
    /// Beam whose children are probed next; None once converged.
    pub cursor: Option<usize>,
    pub probes: u32,
}

impl SelectionState {
    /// Starts a search at the wide beam; the root measurement is the first
    /// probe.
    pub fn start(cb: &Codebook, mut sinr_of: impl FnMut(usize) -> f64) -> Self {
        let root = cb.root();
        Self { best: root, best_sinr: sinr_of(root), cursor: Some(root), probes: 1 }
    }

    /// One selection step: probe the cursor's two children, keep the argmax
    /// of {best, children}. Without relaxation the search stops as soon as no
    /// child improves; with relaxation it descends into the locally better
    /// child all the way to the last level. Returns true when converged.
    pub fn step(
        &mut self,
        cb: &Codebook,
        level_cap: usize,
        mut sinr_of: impl FnMut(usize) -> f64,
    ) -> bool {
        let Some(cursor) = self.cursor else { return true };
        let children: Vec<usize> = cb.beams[cursor]
            .children
            .iter()
            .copied()
            .filter(|&c| cb.beams[c].level <= level_cap)
            .collect();
        if children.is_empty() {
            self.cursor = None;
            return true;
        }
        self.probes += children.len() as u32;
        let mut kid = children[0];
        let mut kid_sinr = sinr_of(kid);
        for &c in &children[1..] {
            let s = sinr_of(c);
            if s > kid_sinr {
                kid = c;
                kid_sinr = s;
            }
        }
        let improved = kid_sinr > self.best_sinr;
        if improved {
            self.best = kid;
            self.best_sinr = kid_sinr;
        }
        if cb.relaxed || improved {
            self.cursor = Some(kid);
            false
        } else {
            self.cursor = None;
            true
        }
    }

    pub fn converged(&self) -> bool {
        self.cursor.is_none()
    }
}

/// Runs a whole search; returns the selected beam, probe count and the
/// running-best SINR trace.
pub fn select_beam(
    cb: &Codebook,
    level_cap: usize,
    mut sinr_of: impl FnMut(usize) -> f64,
) -> (usize, u32, Vec<f64>) {
    let mut state = SelectionState::start(cb, &mut sinr_of);
    let mut trace = vec![state.best_sinr];
    for _ in 0..cb.depth() {
        if state.step(cb, level_cap, &mut sinr_of) {
            break;
        }
        trace.push(state.best_sinr);
    }
    (state.best, state.probes, trace)
}

/// Fraction of uniformly sampled in-sector positions where the greedy search
/// lands on the same beam as an exhaustive argmax over the last level
/// (diagnostic only; the greedy search carries no matching guarantee).
pub fn hierarchical_match_fraction(
    cb: &Codebook,
    bank: &PatternBank,
    samples: usize,
    seed: u64,
) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = &cb.geometry;
    let mut matches = 0usize;
    let mut n = 0usize;
    while n < samples {
        let xy = [
            rng.gen_range(-g.cell_radius_m..g.cell_radius_m),
            rng.gen_range(-g.cell_radius_m..g.cell_radius_m),
        ];
        if !g.contains(xy) {
            continue;
        }
        n += 1;
        let (dir, _) = g.direction_to(xy);
        // Common interference and noise cancel in the argmax, so plain gain
        // stands in for SINR here.
        let (picked, _, _) = select_beam(cb, cb.depth(), |b| bank.gain(b, &dir));
        let leaf = cb.levels[cb.depth()]
            .iter()
            .copied()
            .max_by(|&a, &b| bank.gain(a, &dir).partial_cmp(&bank.gain(b, &dir)).unwrap())
            .unwrap();
        if picked == leaf {
            matches += 1;
        }
    }
    matches as f64 / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::SteeringBox;
    use approx::assert_abs_diff_eq;

    // near the feasible optimum of the mass-event design problem
    fn test_design() -> OptimizedDesign {
        OptimizedDesign {
            d_x: 0.35,
            d_z: 0.7,
            alpha_x: 0.17,
            alpha_z: 0.17,
            objective_size: (12, 32),
            achieved_gain_db: 29.0,
            worst_sidelobe_db: 30.2,
            evaluations: 0,
            audit_steer_samples: 9,
        }
    }

    fn mass_event_geometry() -> SectorGeometry {
        SectorGeometry {
            cell_radius_m: 350.0,
            azimuth_halfspan_rad: PI / 3.0,
            height_diff_m: 28.5,
            raster_pixel_m: 5.0,
            gap_depth_db: 40.0,
            max_gap_fraction: 0.02,
        }
    }

    fn mass_event_spec() -> CodebookSpec {
        CodebookSpec {
            level0: (2, 4),
            levels: vec![
                LevelSpec { n_x: 6, n_z: 16, split: SplitAxis::Azimuth },
                LevelSpec { n_x: 12, n_z: 16, split: SplitAxis::Azimuth },
                LevelSpec { n_x: 12, n_z: 32, split: SplitAxis::Elevation },
            ],
        }
    }

    fn wide_box() -> SteeringBox {
        SteeringBox::new(1.60, 1.885, -0.96, 0.96).unwrap()
    }

    fn build_mass_event(relaxed: bool) -> (Codebook, CoverageRasters) {
        build_codebook(&test_design(), mass_event_geometry(), &mass_event_spec(), wide_box(), relaxed)
            .unwrap()
    }

    #[test]
    fn downtilt_puts_half_power_on_cell_edge() {
        let design = ArrayDesign::new(2, 4, 0.35, 0.7, 0.17, 0.17).unwrap();
        let h = 28.5;
        let r = 350.0;
        let steer = downtilt_for_coverage(&design, h, r);
        let theta_edge = PI / 2.0 + (h / r).atan();
        assert!(steer.theta_e > theta_edge, "beam must point below the cell edge");
        // Independent check of the -3 dB point on the elevation cut.
        let peak = (0..=4000)
            .map(|i| {
                let theta = steer.theta_e - 0.5 + i as f64 * 0.5 / 4000.0;
                antenna::normalized_pattern(&design, &steer, &Direction::new(theta, 0.0).unwrap())
            })
            .fold(0.0, f64::max);
        let at_edge =
            antenna::normalized_pattern(&design, &steer, &Direction::new(theta_edge, 0.0).unwrap());
        assert_abs_diff_eq!(at_edge / peak, 0.5, epsilon = 0.01);
    }

    #[test]
    fn tree_shape_doubles_per_level() {
        let (cb, _) = build_mass_event(true);
        let counts: Vec<usize> = cb.levels.iter().map(Vec::len).collect();
        assert_eq!(counts, vec![1, 2, 4, 8]);
        assert_eq!(cb.beams.len(), 15);
        assert_eq!(cb.depth(), 3);
        for level in &cb.levels {
            let size = cb.beams[level[0]].subarray;
            assert!(level.iter().all(|&b| cb.beams[b].subarray == size));
        }
        // every non-leaf has exactly two children pointing back at it
        for b in &cb.beams {
            if b.level < cb.depth() {
                assert_eq!(b.children.len(), 2);
                for &c in &b.children {
                    assert_eq!(cb.beams[c].parent, Some(b.id));
                    assert_eq!(cb.beams[c].level, b.level + 1);
                }
            } else {
                assert!(b.children.is_empty());
            }
        }
        assert_eq!(cb.beams[cb.root()].parent, None);
    }

    #[test]
    fn azimuth_split_halves_intervals_and_keeps_elevation() {
        let (cb, _) = build_mass_event(true);
        let root = &cb.beams[cb.root()];
        let kids: Vec<&Beam> = root.children.iter().map(|&c| &cb.beams[c]).collect();
        let mid = 0.5 * (root.azimuth_interval.0 + root.azimuth_interval.1);
        assert_eq!(kids[0].azimuth_interval, (root.azimuth_interval.0, mid));
        assert_eq!(kids[1].azimuth_interval, (mid, root.azimuth_interval.1));
        assert_eq!(kids[0].range_interval, root.range_interval);
        // steering azimuth at the half-interval midpoints
        assert_abs_diff_eq!(kids[0].steer.phi_e, -PI / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kids[1].steer.phi_e, PI / 6.0, epsilon = 1e-12);
        // both azimuth-split children share one elevation
        assert_eq!(kids[0].steer.theta_e, kids[1].steer.theta_e);
    }

    #[test]
    fn elevation_split_balances_ring_areas() {
        let (cb, _) = build_mass_event(true);
        // level 3 split level-2 beams in elevation
        for &l2 in &cb.levels[2] {
            let parent = &cb.beams[l2];
            let (r1, r2) = parent.range_interval;
            let kids: Vec<&Beam> = parent.children.iter().map(|&c| &cb.beams[c]).collect();
            let mid = kids[0].range_interval.1;
            assert_eq!(kids[1].range_interval.0, mid);
            let a_inner = mid * mid - r1 * r1;
            let a_outer = r2 * r2 - mid * mid;
            assert_abs_diff_eq!(a_inner, a_outer, epsilon = 1e-6);
            // inner ring steers lower (larger zenith angle) than outer
            assert!(kids[0].steer.theta_e > kids[1].steer.theta_e);
            assert_eq!(kids[0].steer.phi_e, kids[1].steer.phi_e);
        }
    }

    #[test]
    fn steering_respects_the_box() {
        let (cb, _) = build_mass_event(true);
        let b = &cb.steering_box;
        for beam in &cb.beams {
            assert!(beam.steer.theta_e >= b.theta_min && beam.steer.theta_e <= b.theta_max);
            assert!(beam.steer.phi_e >= b.phi_min && beam.steer.phi_e <= b.phi_max);
        }
    }

    #[test]
    fn rasters_partition_every_level() {
        let (cb, rasters) = build_mass_event(true);
        for (level, ids) in cb.levels.iter().enumerate() {
            let total: usize = ids.iter().map(|&b| rasters.footprint_pixels(level, b)).sum();
            assert_eq!(total, rasters.in_sector_pixels, "level {level} must partition the sector");
        }
        // level 0: the single wide beam owns everything
        assert_eq!(rasters.footprint_pixels(0, cb.root()), rasters.in_sector_pixels);
    }

    #[test]
    fn hierarchy_nests_without_relaxation() {
        let (cb, rasters) = build_mass_event(false);
        for level in 1..=cb.depth() {
            for px in 0..rasters.levels[level].len() {
                let child = rasters.levels[level][px];
                let owner = rasters.levels[level - 1][px];
                if child < 0 {
                    assert_eq!(owner, -1);
                    continue;
                }
                assert_eq!(
                    cb.beams[child as usize].parent,
                    Some(owner as usize),
                    "pixel {px} at level {level} escaped its parent"
                );
            }
        }
    }

    #[test]
    fn relaxation_changes_deep_level_ownership() {
        let (_, nested) = build_mass_event(false);
        let (_, relaxed) = build_mass_event(true);
        let diff = nested.levels[3]
            .iter()
            .zip(&relaxed.levels[3])
            .filter(|(a, b)| a != b)
            .count();
        assert!(diff > 0, "relaxation should re-assign some deep pixels");
    }

    #[test]
    fn pattern_bank_matches_direct_evaluation() {
        let (cb, _) = build_mass_event(true);
        let bank = PatternBank::new(&cb).unwrap();
        let (dir, _) = cb.geometry.direction_to([250.0, 40.0]);
        for beam in &cb.beams {
            let d = cb.design.design(beam.subarray.0, beam.subarray.1).unwrap();
            let exact = 10f64.powf(beam.peak_gain_db / 10.0)
                * antenna::normalized_pattern(&d, &beam.steer, &dir);
            let fast = bank.gain(beam.id, &dir);
            assert!((fast - exact).abs() <= 2e-4 * 10f64.powf(beam.peak_gain_db / 10.0));
        }
    }

    #[test]
    fn selection_descends_and_respects_probe_budget() {
        let (cb, _) = build_mass_event(true);
        let bank = PatternBank::new(&cb).unwrap();
        let (dir, _) = cb.geometry.direction_to([290.0, 77.0]);
        let (best, probes, trace) = select_beam(&cb, cb.depth(), |b| bank.gain(b, &dir));
        assert!(probes <= 2 * cb.depth() as u32 + 1);
        assert_eq!(cb.beams[best].level, cb.depth(), "relaxed search descends to the last level");
        for w in trace.windows(2) {
            assert!(w[1] >= w[0], "running best must never degrade");
        }
    }

    #[test]
    fn unrelaxed_selection_stops_when_children_stop_helping() {
        let (cb, _) = build_mass_event(false);
        // A synthetic SINR that penalizes every beam below level 1 forces an
        // early stop.
        let scores: Vec<f64> =
            cb.beams.iter().map(|b| if b.level <= 1 { b.level as f64 + 1.0 } else { 0.1 }).collect();
        let (best, probes, _) = select_beam(&cb, cb.depth(), |b| scores[b]);
        assert_eq!(cb.beams[best].level, 1);
        // 1 root probe + level-1 pair + the level-2 pair that failed to improve
        assert_eq!(probes, 5);
    }

    #[test]
    fn level_cap_limits_descent() {
        let (cb, _) = build_mass_event(true);
        let bank = PatternBank::new(&cb).unwrap();
        let (dir, _) = cb.geometry.direction_to([200.0, -30.0]);
        for cap in 0..=cb.depth() {
            let (best, probes, _) = select_beam(&cb, cap, |b| bank.gain(b, &dir));
            assert!(cb.beams[best].level <= cap);
            assert!(probes <= 2 * cap as u32 + 1);
        }
        let (best0, probes0, _) = select_beam(&cb, 0, |b| bank.gain(b, &dir));
        assert_eq!(best0, cb.root());
        assert_eq!(probes0, 1);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (cb, _) = build_mass_event(true);
        let mut buf = Vec::new();
        cb.write_json(&mut buf).unwrap();
        let reread = Codebook::read_json(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(cb.beams.len(), reread.beams.len());
        for (a, b) in cb.beams.iter().zip(&reread.beams) {
            assert_eq!(a.steer.theta_e.to_bits(), b.steer.theta_e.to_bits());
            assert_eq!(a.steer.phi_e.to_bits(), b.steer.phi_e.to_bits());
            assert_eq!(a.peak_gain_db.to_bits(), b.peak_gain_db.to_bits());
            assert_eq!(a.parent, b.parent);
            assert_eq!(a.children, b.children);
        }
    }

    #[test]
    fn gap_budget_catches_uncoverable_sectors() {
        // A steering box pinned far below the horizon cannot serve a 2 km
        // cell: distant ground stays outside every beam.
        let mut geometry = mass_event_geometry();
        geometry.cell_radius_m = 2000.0;
        geometry.raster_pixel_m = 20.0;
        let box_too_steep = SteeringBox::new(1.83, 1.885, -0.96, 0.96).unwrap();
        let err = build_codebook(&test_design(), geometry, &mass_event_spec(), box_too_steep, true);
        assert!(
            matches!(err, Err(CodebookError::CoverageGap { .. })),
            "expected CoverageGap, got {err:?}"
        );
    }

    #[test]
    fn single_level_codebook_is_valid() {
        let spec = CodebookSpec { level0: (2, 4), levels: vec![] };
        let (cb, rasters) =
            build_codebook(&test_design(), mass_event_geometry(), &spec, wide_box(), false).unwrap();
        assert_eq!(cb.beams.len(), 1);
        assert_eq!(cb.depth(), 0);
        assert_eq!(rasters.footprint_pixels(0, 0), rasters.in_sector_pixels);
        let bank = PatternBank::new(&cb).unwrap();
        let (dir, _) = cb.geometry.direction_to([100.0, 0.0]);
        let (best, probes, _) = select_beam(&cb, 5, |b| bank.gain(b, &dir));
        assert_eq!((best, probes), (0, 1));
    }

    #[test]
    fn raster_lookup_maps_coordinates() {
        let (cb, rasters) = build_mass_event(true);
        assert_eq!(rasters.beam_at(0, [100.0, 0.0]), Some(cb.root()));
        assert_eq!(rasters.beam_at(0, [-50.0, 0.0]), None, "behind the site");
        assert_eq!(rasters.beam_at(0, [400.0, 0.0]), None, "beyond the cell edge");
        // hotspot-side position lands in a level-3 beam whose region holds it
        let xy = [290.0, 77.0];
        let leaf = rasters.beam_at(3, xy).unwrap();
        assert_eq!(cb.beams[leaf].level, 3);
    }

    #[test]
    fn match_fraction_is_high_for_relaxed_tree() {
        let (cb, _) = build_mass_event(true);
        let bank = PatternBank::new(&cb).unwrap();
        let frac = hierarchical_match_fraction(&cb, &bank, 400, 9);
        assert!(frac > 0.5, "greedy search should usually agree with exhaustive, got {frac}");
    }
}
