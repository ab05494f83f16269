//! Constrained search for array geometries.
//!
//! The search space is the shared geometry (d_x, d_z, alpha_x, alpha_z) of a
//! family of subarray sizes. A candidate is feasible when every constrained
//! size keeps its side-lobe suppression at or above a floor for every steering
//! angle sampled from a steering box. Among feasible candidates the one with
//! the highest peak gain of the largest size, steered at the box center, wins;
//! exact gain ties fall back to smaller d_z, then d_x, then the taper ratios.
//!
//! The search is a full-factorial grid pass followed by rounds of halving
//! coordinate descent, and ends with an audit of the winner on a steering grid
//! twice as dense. An audit failure falls back to the next-best feasible grid
//! candidate.

use crate::antenna::{
    self, AntennaError, ArrayDesign, ScanTables, SteeringAngles,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid optimization problem: {0}")]
    InvalidProblem(String),
    #[error("no feasible design in the search space (floor {min_sidelobe_db} dB)")]
    Infeasible { min_sidelobe_db: f64 },
    #[error("all feasible candidates failed the dense steering audit")]
    AuditExhausted,
    #[error(transparent)]
    Antenna(#[from] AntennaError),
}

/// Rectangular box of steering angles (radians, zenith convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringBox {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
}

impl SteeringBox {
    pub fn new(theta_min: f64, theta_max: f64, phi_min: f64, phi_max: f64) -> Result<Self, OptimizerError> {
        if !(theta_min <= theta_max && phi_min <= phi_max) {
            return Err(OptimizerError::InvalidProblem(format!(
                "degenerate steering box: theta [{theta_min}, {theta_max}], phi [{phi_min}, {phi_max}]"
            )));
        }
        Ok(Self { theta_min, theta_max, phi_min, phi_max })
    }

    pub fn center(&self) -> SteeringAngles {
        SteeringAngles::new(
            0.5 * (self.theta_min + self.theta_max),
            0.5 * (self.phi_min + self.phi_max),
        )
    }

    pub fn clamp(&self, steer: SteeringAngles) -> SteeringAngles {
        SteeringAngles::new(
            steer.theta_e.clamp(self.theta_min, self.theta_max),
            steer.phi_e.clamp(self.phi_min, self.phi_max),
        )
    }

    /// `samples` x `samples` grid including the box edges. For a box symmetric
    /// about phi = 0 the pattern is mirror-symmetric in the steering azimuth,
    /// so only the phi >= 0 half is returned. Samples are ordered
    /// hardest-first (largest |phi|, then largest theta) so infeasible
    /// candidates fail fast.
    pub fn sample_grid(&self, samples: usize) -> Vec<SteeringAngles> {
        let thetas = linspace(self.theta_min, self.theta_max, samples);
        let phis = linspace(self.phi_min, self.phi_max, samples);
        let symmetric = (self.phi_min + self.phi_max).abs() < 1e-12;
        let mut out = Vec::new();
        for &phi in &phis {
            if symmetric && phi < 0.0 {
                continue;
            }
            for &theta in &thetas {
                out.push(SteeringAngles::new(theta, phi));
            }
        }
        out.sort_by(|a, b| {
            b.phi_e
                .abs()
                .partial_cmp(&a.phi_e.abs())
                .unwrap()
                .then(b.theta_e.partial_cmp(&a.theta_e).unwrap())
        });
        out
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n as f64 - 1.0))
        .collect()
}

/// Inclusive parameter ranges searched by the optimizer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DesignSpace {
    pub d_x: (f64, f64),
    pub d_z: (f64, f64),
    pub alpha: (f64, f64),
}

impl DesignSpace {
    fn validate(&self) -> Result<(), OptimizerError> {
        let ranges = [
            ("d_x", self.d_x, 0.0, antenna::MAX_D_X),
            ("d_z", self.d_z, 0.0, antenna::MAX_D_Z),
            ("alpha", self.alpha, 0.0, 1.0),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo <= hi && lo > min && hi <= max) {
                return Err(OptimizerError::InvalidProblem(format!(
                    "{name} range ({lo}, {hi}) outside ({min}, {max}]"
                )));
            }
        }
        Ok(())
    }
}

/// Search controls. `grid_points` is the full-factorial density per axis,
/// `steer_samples` the steering-grid density per axis during the search (the
/// audit doubles it), `descent_rounds` the number of halving refinement
/// rounds after the grid pass.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchSettings {
    pub grid_points: usize,
    pub steer_samples: usize,
    pub descent_rounds: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self { grid_points: 8, steer_samples: 5, descent_rounds: 3 }
    }
}

/// A complete constrained design problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignProblem {
    /// Subarray sizes (n_x, n_z) that must all satisfy the side-lobe floor.
    pub constrained_sizes: Vec<(usize, usize)>,
    pub steering_box: SteeringBox,
    /// Side-lobe suppression floor in dB (positive).
    pub min_sidelobe_db: f64,
    pub space: DesignSpace,
    #[serde(default)]
    pub settings: SearchSettings,
}

impl DesignProblem {
    /// Size whose gain is maximized: the largest constrained size.
    pub fn objective_size(&self) -> Result<(usize, usize), OptimizerError> {
        self.constrained_sizes
            .iter()
            .copied()
            .max_by_key(|&(nx, nz)| nx * nz)
            .ok_or_else(|| OptimizerError::InvalidProblem("no constrained sizes".into()))
    }
}

/// Winning geometry plus audit evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizedDesign {
    pub d_x: f64,
    pub d_z: f64,
    pub alpha_x: f64,
    pub alpha_z: f64,
    pub objective_size: (usize, usize),
    /// Peak gain of the objective size at the box center, dB, refined
    /// quadrature.
    pub achieved_gain_db: f64,
    /// Worst side-lobe suppression over all sizes and audited steerings, dB.
    pub worst_sidelobe_db: f64,
    /// Number of pattern scans and gain integrals spent.
    pub evaluations: u64,
    /// Steering samples per axis used by the audit.
    pub audit_steer_samples: usize,
}

impl OptimizedDesign {
    pub fn design(&self, n_x: usize, n_z: usize) -> Result<ArrayDesign, AntennaError> {
        ArrayDesign::new(n_x, n_z, self.d_x, self.d_z, self.alpha_x, self.alpha_z)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    params: [f64; 4], // d_x, d_z, alpha_x, alpha_z
    gain: f64,
    worst_sl: f64,
    evals: u64,
}

/// Lexicographic preference for exact gain ties: smaller d_z, then d_x, then
/// alpha_z, then alpha_x.
fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.gain != b.gain {
        return a.gain > b.gain;
    }
    let key = |c: &Candidate| [c.params[1], c.params[0], c.params[3], c.params[2]];
    key(a) < key(b)
}

struct Evaluator<'p> {
    problem: &'p DesignProblem,
    /// Constrained sizes sorted largest-first so the binding constraint is
    /// checked early.
    sizes: Vec<(usize, usize)>,
    objective: (usize, usize),
    steers: Vec<SteeringAngles>,
    center: SteeringAngles,
}

/// Gain-integral grid resolution used while ranking candidates. The final
/// reported gain is recomputed with the refined quadrature.
const SEARCH_GAIN_RESOLUTION: usize = 256;

impl<'p> Evaluator<'p> {
    fn new(problem: &'p DesignProblem, steer_samples: usize) -> Result<Self, OptimizerError> {
        let objective = problem.objective_size()?;
        let mut sizes = problem.constrained_sizes.clone();
        sizes.sort_by_key(|&(nx, nz)| std::cmp::Reverse(nx * nz));
        sizes.dedup();
        Ok(Self {
            problem,
            sizes,
            objective,
            steers: problem.steering_box.sample_grid(steer_samples),
            center: problem.steering_box.center(),
        })
    }

    fn design(&self, size: (usize, usize), p: &[f64; 4]) -> Result<ArrayDesign, AntennaError> {
        ArrayDesign::new(size.0, size.1, p[0], p[1], p[2], p[3])
    }

    /// Feasibility plus objective. Returns None when any size violates the
    /// side-lobe floor at any sampled steering; a pattern without secondary
    /// lobes counts as infinitely suppressed.
    fn score(&self, p: [f64; 4]) -> Result<Option<Candidate>, OptimizerError> {
        let mut evals = 0u64;
        let mut worst = f64::INFINITY;
        for &size in &self.sizes {
            let design = self.design(size, &p)?;
            let tables = ScanTables::new(&design);
            let res = antenna::required_scan_resolution(&design);
            for steer in &self.steers {
                evals += 1;
                let sl = match antenna::sidelobe_level_with_tables(&design, &tables, steer, res) {
                    Ok(scan) => scan.suppression_db,
                    Err(AntennaError::NoSidelobe) => f64::INFINITY,
                    Err(e) => return Err(e.into()),
                };
                if sl < self.problem.min_sidelobe_db {
                    return Ok(None);
                }
                worst = worst.min(sl);
            }
        }
        let objective = self.design(self.objective, &p)?;
        let integral = antenna::pattern_integral(&objective, &self.center, SEARCH_GAIN_RESOLUTION);
        evals += 1;
        Ok(Some(Candidate {
            params: p,
            gain: 4.0 * std::f64::consts::PI / integral,
            worst_sl: worst,
            evals,
        }))
    }
}

/// Runs the full search. See the module docs for the procedure.
pub fn optimize(problem: &DesignProblem) -> Result<OptimizedDesign, OptimizerError> {
    problem.space.validate()?;
    let s = problem.settings;
    if s.grid_points < 2 || s.steer_samples < 1 || s.grid_points > 64 {
        return Err(OptimizerError::InvalidProblem(format!(
            "grid_points must be in [2, 64] and steer_samples >= 1, got {} / {}",
            s.grid_points, s.steer_samples
        )));
    }
    let eval = Evaluator::new(problem, s.steer_samples)?;

    let axes = [
        linspace(problem.space.d_x.0, problem.space.d_x.1, s.grid_points),
        linspace(problem.space.d_z.0, problem.space.d_z.1, s.grid_points),
        linspace(problem.space.alpha.0, problem.space.alpha.1, s.grid_points),
        linspace(problem.space.alpha.0, problem.space.alpha.1, s.grid_points),
    ];
    let mut grid: Vec<[f64; 4]> = Vec::new();
    for &dx in &axes[0] {
        for &dz in &axes[1] {
            for &ax in &axes[2] {
                for &az in &axes[3] {
                    grid.push([dx, dz, ax, az]);
                }
            }
        }
    }

    // Independent scores collected in grid order keep the pass deterministic
    // under any thread count.
    let scored: Vec<Result<Option<Candidate>, OptimizerError>> =
        grid.par_iter().map(|&p| eval.score(p)).collect();
    let mut evaluations = 0u64;
    let mut feasible: Vec<Candidate> = Vec::new();
    for res in scored {
        match res? {
            Some(c) => {
                evaluations += c.evals;
                feasible.push(c);
            }
            None => evaluations += 1,
        }
    }
    if feasible.is_empty() {
        return Err(OptimizerError::Infeasible { min_sidelobe_db: problem.min_sidelobe_db });
    }
    feasible.sort_by(|a, b| if better(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });

    let steps: [f64; 4] = [
        axis_step(&axes[0]),
        axis_step(&axes[1]),
        axis_step(&axes[2]),
        axis_step(&axes[3]),
    ];
    let bounds = [
        problem.space.d_x,
        problem.space.d_z,
        problem.space.alpha,
        problem.space.alpha,
    ];
    let audit_samples = 2 * s.steer_samples - 1;
    let audit_eval = Evaluator::new(problem, audit_samples)?;

    // Descend from the best grid candidate; if the refined design fails the
    // dense audit, fall back to the next-best feasible grid candidate.
    for start in &feasible {
        let mut best = *start;
        for round in 0..s.descent_rounds {
            let scale = 0.5_f64.powi(round as i32 + 1);
            for dim in 0..4 {
                for dir in [-1.0, 1.0] {
                    let mut p = best.params;
                    p[dim] = (p[dim] + dir * scale * steps[dim]).clamp(bounds[dim].0, bounds[dim].1);
                    if p[dim] == best.params[dim] {
                        continue;
                    }
                    if let Some(c) = eval.score(p)? {
                        evaluations += c.evals;
                        if better(&c, &best) {
                            best = c;
                        }
                    } else {
                        evaluations += 1;
                    }
                }
            }
        }
        // Grid best is a lower bound for the descent result by construction.
        debug_assert!(best.gain >= start.gain);

        if let Some(audited) = audit_eval.score(best.params)? {
            evaluations += audited.evals;
            let objective = audit_eval.design(audit_eval.objective, &audited.params)?;
            let g0 = antenna::peak_gain(&objective, &audit_eval.center, SEARCH_GAIN_RESOLUTION)?;
            evaluations += 2;
            return Ok(OptimizedDesign {
                d_x: audited.params[0],
                d_z: audited.params[1],
                alpha_x: audited.params[2],
                alpha_z: audited.params[3],
                objective_size: audit_eval.objective,
                achieved_gain_db: 10.0 * g0.log10(),
                worst_sidelobe_db: audited.worst_sl,
                evaluations,
                audit_steer_samples: audit_samples,
            });
        }
        evaluations += 1;
    }
    Err(OptimizerError::AuditExhausted)
}

fn axis_step(axis: &[f64]) -> f64 {
    if axis.len() < 2 {
        0.0
    } else {
        axis[1] - axis[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_problem(min_sl: f64) -> DesignProblem {
        DesignProblem {
            constrained_sizes: vec![(4, 8)],
            steering_box: SteeringBox::new(1.63, 1.88, -0.5, 0.5).unwrap(),
            min_sidelobe_db: min_sl,
            space: DesignSpace { d_x: (0.3, 0.5), d_z: (0.4, 0.7), alpha: (0.1, 1.0) },
            settings: SearchSettings { grid_points: 3, steer_samples: 2, descent_rounds: 1 },
        }
    }

    #[test]
    fn unconstrained_search_prefers_large_uniform_aperture() {
        // A 12 dB floor is met even by uniform tapers, so the gain-maximal
        // corner of the space must win: maximal spacings, alpha = 1.
        let problem = tiny_problem(11.0);
        let out = optimize(&problem).unwrap();
        assert_eq!(out.d_x, 0.5);
        assert_eq!(out.d_z, 0.7);
        assert_eq!(out.alpha_x, 1.0);
        assert_eq!(out.alpha_z, 1.0);
        assert!(out.worst_sidelobe_db >= 11.0);
    }

    #[test]
    fn binding_constraint_costs_gain() {
        let loose = optimize(&tiny_problem(11.0)).unwrap();
        let tight = optimize(&tiny_problem(25.0)).unwrap();
        assert!(tight.worst_sidelobe_db >= 25.0);
        assert!(tight.achieved_gain_db < loose.achieved_gain_db);
        // The taper must have tightened to buy the suppression.
        assert!(tight.alpha_x < 1.0 || tight.alpha_z < 1.0);
    }

    #[test]
    fn impossible_floor_reports_infeasible() {
        let problem = tiny_problem(60.0);
        match optimize(&problem) {
            Err(OptimizerError::Infeasible { .. }) => {}
            other => panic!("expected Infeasible, got {other:?}"),
        }
    }

    #[test]
    fn lobe_free_sizes_are_always_feasible_and_ties_break_low() {
        // A single-element "array" has no secondary lobe and its gain ignores
        // every search parameter, so all candidates tie exactly; the
        // tie-break must pick the smallest d_z, then d_x, then tapers.
        let problem = DesignProblem {
            constrained_sizes: vec![(1, 1)],
            steering_box: SteeringBox::new(1.63, 1.88, -0.5, 0.5).unwrap(),
            min_sidelobe_db: 40.0,
            space: DesignSpace { d_x: (0.3, 0.5), d_z: (0.4, 0.7), alpha: (0.2, 1.0) },
            settings: SearchSettings { grid_points: 2, steer_samples: 2, descent_rounds: 0 },
        };
        let out = optimize(&problem).unwrap();
        assert_eq!(out.d_x, 0.3);
        assert_eq!(out.d_z, 0.4);
        assert_eq!(out.alpha_x, 0.2);
        assert_eq!(out.alpha_z, 0.2);
        assert_eq!(out.worst_sidelobe_db, f64::INFINITY);
    }

    #[test]
    fn search_is_deterministic() {
        let problem = tiny_problem(20.0);
        let a = optimize(&problem).unwrap();
        let b = optimize(&problem).unwrap();
        assert_eq!(a.d_x, b.d_x);
        assert_eq!(a.d_z, b.d_z);
        assert_eq!(a.alpha_x, b.alpha_x);
        assert_eq!(a.alpha_z, b.alpha_z);
        assert_eq!(a.achieved_gain_db, b.achieved_gain_db);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn result_beats_every_feasible_grid_point() {
        let problem = tiny_problem(20.0);
        let out = optimize(&problem).unwrap();
        let eval = Evaluator::new(&problem, problem.settings.steer_samples).unwrap();
        for &dx in &linspace(0.3, 0.5, 3) {
            for &dz in &linspace(0.4, 0.7, 3) {
                for &ax in &linspace(0.1, 1.0, 3) {
                    for &az in &linspace(0.1, 1.0, 3) {
                        if let Some(c) = eval.score([dx, dz, ax, az]).unwrap() {
                            assert!(
                                out.achieved_gain_db >= 10.0 * c.gain.log10() - 0.05,
                                "grid point ({dx},{dz},{ax},{az}) beats the optimizer"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_spaces() {
        let mut p = tiny_problem(20.0);
        p.space.d_x = (0.5, 0.3);
        assert!(matches!(optimize(&p), Err(OptimizerError::InvalidProblem(_))));
        let mut p = tiny_problem(20.0);
        p.space.d_z = (0.4, 0.9);
        assert!(matches!(optimize(&p), Err(OptimizerError::InvalidProblem(_))));
        let mut p = tiny_problem(20.0);
        p.constrained_sizes.clear();
        assert!(matches!(optimize(&p), Err(OptimizerError::InvalidProblem(_))));
    }

    #[test]
    fn steering_samples_halved_by_symmetry() {
        let b = SteeringBox::new(1.6, 1.9, -0.8, 0.8).unwrap();
        let sym = b.sample_grid(5);
        assert_eq!(sym.len(), 15); // phi in {0, 0.4, 0.8} x 5 thetas
        let asym = SteeringBox::new(1.6, 1.9, -0.7, 0.8).unwrap().sample_grid(5);
        assert_eq!(asym.len(), 25);
    }
}
