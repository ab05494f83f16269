//! Command-line front end for the multilevel beamforming toolkit.
//!
//! `optimize` solves (or evaluates) the array design, `codebook` builds the
//! beam tree and coverage rasters, `simulate` runs the event-driven downlink
//! and writes a KPI report, and `report` compares several reports against a
//! baseline. Exit codes: 0 success, 1 infeasible design or unstable system,
//! 2 invalid configuration or arguments.

use beamsim_core::antenna::{self, CutAxis};
use beamsim_core::codebook::{build_codebook, Codebook, CoverageRasters};
use beamsim_core::config::{ConfigError, ScenarioConfig};
use beamsim_core::netsim::{KpiReport, SimError, SimOutput, Simulation};
use beamsim_core::optimizer::{OptimizedDesign, OptimizerError};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "beamsim",
    version,
    about = "Multilevel beamforming design, codebook construction and downlink simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the constrained array design problem and write design.json
    Optimize {
        /// Scenario description (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Build the beam tree and per-level coverage rasters
    Codebook {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write principal-cut CSVs for every level's subarray
        #[arg(long)]
        cuts: bool,
    },
    /// Run the downlink simulation and write report/session/beam files
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Cap the beam search depth (0 = wide beam only)
        #[arg(long)]
        levels: Option<usize>,
        /// Override the Nakagami fading shape; "inf" disables fading
        #[arg(long)]
        fading_m: Option<String>,
    },
    /// Print a comparison table of KPI reports (first file is the baseline)
    Report {
        /// report-*.json files produced by `simulate`
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

/// On-disk report: the fully resolved scenario (TOML text, since it round-
/// trips non-finite floats) plus the KPI block.
#[derive(Serialize, Deserialize)]
struct ReportFile {
    config_toml: String,
    kpi: KpiReport,
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codebook(#[from] beamsim_core::codebook::CodebookError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    BadInput(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            // design space with no feasible point / offered load the system
            // cannot carry: domain outcomes, not usage errors
            CliError::Optimizer(OptimizerError::Infeasible { .. })
            | CliError::Sim(SimError::Unstable { .. }) => 1,
            CliError::Config(ConfigError::Optimizer(OptimizerError::Infeasible { .. })) => 1,
            CliError::Config(_) | CliError::BadInput(_) | CliError::Io(_) => 2,
            _ => 1,
        }
    }
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("BEAMSIM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Optimize { config, out } => cmd_optimize(&config, &out),
        Command::Codebook { config, out, cuts } => cmd_codebook(&config, &out, cuts),
        Command::Simulate { config, out, seed, levels, fading_m } => {
            cmd_simulate(&config, &out, seed, levels, fading_m.as_deref())
        }
        Command::Report { reports } => cmd_report(&reports),
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    Ok(ScenarioConfig::from_path(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn design_path(out: &Path) -> PathBuf {
    out.join("design.json")
}

/// Loads a previously optimized design from the output directory, or resolves
/// one from the config (running the search if the scenario asks for one).
fn obtain_design(cfg: &ScenarioConfig, out: &Path) -> Result<OptimizedDesign, CliError> {
    let path = design_path(out);
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        let design: OptimizedDesign = serde_json::from_str(&text)?;
        println!("design: reusing {}", path.display());
        return Ok(design);
    }
    Ok(cfg.resolve_design()?)
}

fn cmd_optimize(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    fs::create_dir_all(out)?;
    let design = cfg.resolve_design()?;
    write_json(&design_path(out), &design)?;
    println!(
        "design: d_x={:.4} d_z={:.4} alpha_x={:.4} alpha_z={:.4}",
        design.d_x, design.d_z, design.alpha_x, design.alpha_z
    );
    println!(
        "objective {}x{}: gain {:.2} dBi, worst side lobe {:.2} dB ({} candidate evaluations)",
        design.objective_size.0,
        design.objective_size.1,
        design.achieved_gain_db,
        design.worst_sidelobe_db,
        design.evaluations
    );
    println!("wrote {}", design_path(out).display());
    Ok(())
}

fn build_from_config(
    cfg: &ScenarioConfig,
    design: &OptimizedDesign,
) -> Result<(Codebook, CoverageRasters), CliError> {
    Ok(build_codebook(
        design,
        cfg.sector_geometry(),
        &cfg.codebook_spec(),
        cfg.steering_box().map_err(ConfigError::from)?,
        cfg.codebook.relaxed,
    )?)
}

fn cmd_codebook(config: &Path, out: &Path, cuts: bool) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    fs::create_dir_all(out)?;
    let design = obtain_design(&cfg, out)?;
    let (cb, rasters) = build_from_config(&cfg, &design)?;

    let cb_path = out.join("codebook.json");
    let mut f = fs::File::create(&cb_path)?;
    cb.write_json(&mut f)?;
    f.write_all(b"\n")?;
    println!("codebook: {} beams over {} levels", cb.beams.len(), cb.depth() + 1);
    for (l, beams) in cb.levels.iter().enumerate() {
        let (n_x, n_z) = cb.beams[beams[0]].subarray;
        println!(
            "  level {l}: {} beams, {}x{} elements, gap fraction {:.4}",
            beams.len(),
            n_x,
            n_z,
            rasters.gap_fraction[l]
        );
    }
    for l in 0..=cb.depth() {
        let path = out.join(format!("raster_level{l}.csv"));
        let mut f = fs::File::create(&path)?;
        rasters.export_level_csv(l, &mut f)?;
    }
    println!("wrote {} and raster_level*.csv", cb_path.display());

    if cuts {
        for (l, beams) in cb.levels.iter().enumerate() {
            let beam = &cb.beams[beams[0]];
            let d = cb.design.design(beam.subarray.0, beam.subarray.1)
                .map_err(beamsim_core::codebook::CodebookError::from)?;
            let g0 = 10f64.powf(beam.peak_gain_db / 10.0);
            for (axis, name) in [(CutAxis::Elevation, "elevation"), (CutAxis::Azimuth, "azimuth")] {
                let path = out.join(format!("cut_level{l}_{name}.csv"));
                let mut f = fs::File::create(&path)?;
                antenna::export_principal_cut(&d, &beam.steer, g0, axis, 2048, &mut f)?;
            }
        }
        println!("wrote cut_level*_{{elevation,azimuth}}.csv");
    }
    Ok(())
}

fn parse_fading(arg: &str) -> Result<f64, CliError> {
    if arg.eq_ignore_ascii_case("inf") || arg.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    arg.parse::<f64>()
        .map_err(|_| CliError::BadInput(format!("--fading-m expects a number or 'inf', got {arg}")))
}

fn run_tag(cfg: &ScenarioConfig) -> String {
    let cap = cfg.sim.level_cap.unwrap_or(cfg.codebook.levels.len());
    let m = if cfg.sim.nakagami_m.is_infinite() {
        "inf".to_string()
    } else {
        format!("{}", cfg.sim.nakagami_m)
    };
    format!("{}-L{cap}-m{m}-s{}", cfg.name, cfg.seed)
}

fn cmd_simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    levels: Option<usize>,
    fading_m: Option<&str>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    // fold overrides back into the config so the report embeds what truly ran
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(l) = levels {
        cfg.sim.level_cap = Some(l);
    }
    if let Some(m) = fading_m {
        cfg.sim.nakagami_m = parse_fading(m)?;
    }
    cfg.validate()?;
    fs::create_dir_all(out)?;

    let design = obtain_design(&cfg, out)?;
    let (cb, _rasters) = build_from_config(&cfg, &design)?;
    let layout = cfg.network_layout().map_err(ConfigError::from)?;
    let sim = Simulation::new(&cb, &layout, cfg.radio(), cfg.sim_params(), cfg.traffic())?;
    let out_run = sim.run(cfg.seed, cfg.sim.horizon_s, cfg.warmup_s())?;

    let tag = run_tag(&cfg);
    write_outputs(&cfg, &cb, &out_run, out, &tag)?;
    let r = &out_run.report;
    if r.offered_load_bps > r.capacity_estimate_bps {
        eprintln!(
            "warning: offered load {:.2} Mbit/s exceeds the single-user capacity estimate \
             {:.2} Mbit/s; the system may be unstable",
            r.offered_load_bps / 1e6,
            r.capacity_estimate_bps / 1e6
        );
    }
    println!(
        "{tag}: {} sessions, MUT {:.3} Mbit/s, CET {:.3} Mbit/s, PC {:.1} W, busy {:.3}",
        r.sessions_completed,
        r.mut_bps / 1e6,
        r.cet_bps / 1e6,
        r.pc_w,
        r.busy_fraction
    );
    Ok(())
}

fn write_outputs(
    cfg: &ScenarioConfig,
    cb: &Codebook,
    out_run: &SimOutput,
    out: &Path,
    tag: &str,
) -> Result<(), CliError> {
    let report = ReportFile {
        config_toml: cfg.to_toml()?,
        kpi: out_run.report.clone(),
    };
    let report_path = out.join(format!("report-{tag}.json"));
    write_json(&report_path, &report)?;

    let mut f = fs::File::create(out.join(format!("sessions-{tag}.csv")))?;
    writeln!(
        f,
        "id,x_m,y_m,arrival_s,sojourn_s,file_bits,throughput_bps,final_beam,probes,served_slots"
    )?;
    for s in &out_run.sessions {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            s.id,
            s.x_m,
            s.y_m,
            s.arrival_s,
            s.sojourn_s,
            s.file_bits,
            s.throughput_bps,
            s.final_beam,
            s.probes,
            s.served_slots
        )?;
    }

    let mut f = fs::File::create(out.join(format!("beams-{tag}.csv")))?;
    writeln!(f, "beam,level,index,served_slots,completed_sessions")?;
    for (id, beam) in cb.beams.iter().enumerate() {
        writeln!(
            f,
            "{},{},{},{},{}",
            id,
            beam.level,
            beam.index,
            out_run.report.beam_slot_counts[id],
            out_run.report.beam_session_counts[id]
        )?;
    }
    println!("wrote {}", report_path.display());
    Ok(())
}

fn cmd_report(paths: &[PathBuf]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p)?;
        let rf: ReportFile = serde_json::from_str(&text)?;
        let cfg = ScenarioConfig::from_toml(&rf.config_toml)?;
        rows.push((run_tag(&cfg), rf.kpi));
    }
    let base = rows[0].1.clone();
    println!(
        "{:<28} {:>9} {:>12} {:>12} {:>9} {:>9} {:>9}",
        "run", "sessions", "MUT Mbit/s", "CET Mbit/s", "PC W", "MUT gain", "CET gain"
    );
    for (tag, k) in &rows {
        let mut_gain = if base.mut_bps > 0.0 { k.mut_bps / base.mut_bps } else { f64::NAN };
        let cet_gain = if base.cet_bps > 0.0 { k.cet_bps / base.cet_bps } else { f64::NAN };
        println!(
            "{:<28} {:>9} {:>12.3} {:>12.3} {:>9.1} {:>8.0}% {:>8.0}%",
            tag,
            k.sessions_completed,
            k.mut_bps / 1e6,
            k.cet_bps / 1e6,
            k.pc_w,
            100.0 * mut_gain,
            100.0 * cet_gain
        );
    }
    Ok(())
}
