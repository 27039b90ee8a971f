//! Run directories: every file a planning or ablation run produces, plus
//! the resolved config that reproduces it.
//!
//! All files are deterministic given the config except `timing.json` and the
//! `plan_seconds` fields of ablation reports, which hold wall-clock times.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::localizer::EvalReport;
use crate::minco::{MincoTrajectory, TrajectoryExport};
use crate::optimizer::write_history_csv;
use crate::pipeline::{AblationReport, PlanConfig, PlanOutcome, Timing, World};
use crate::render::{render_png, render_svg, Overlay};
use crate::scan::PoseSE2;

pub const CONFIG_FILE: &str = "config.json";
pub const PATH_FILE: &str = "path.json";
pub const TRAJECTORY_FILE: &str = "trajectory.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const RENDER_PNG_FILE: &str = "render.png";
pub const RENDER_SVG_FILE: &str = "render.svg";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_CSV_FILE: &str = "ablation.csv";

/// Searched path and the key poses extracted from it, as `[x, y, yaw]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathExport {
    pub poses: Vec<[f64; 3]>,
    pub keyposes: Vec<[f64; 3]>,
    pub cost: f64,
    pub expanded: usize,
}

impl PathExport {
    pub fn poses_se2(&self) -> Vec<PoseSE2> {
        self.poses.iter().map(|p| PoseSE2::new(p[0], p[1], p[2])).collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_trajectory(path: &Path) -> Result<MincoTrajectory, Error> {
    let export: TrajectoryExport = read_json(path)?;
    Ok(MincoTrajectory::from_export(&export)?)
}

pub fn write_eval(dir: &Path, eval: &EvalReport) -> Result<(), Error> {
    write_json(&dir.join(EVAL_FILE), eval)?;
    let mut w = BufWriter::new(File::create(dir.join(EVAL_CSV_FILE))?);
    eval.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes the heatmap PNG and the SVG overlay that references it.
pub fn write_renders(dir: &Path, world: &World, overlay: &Overlay) -> Result<(), Error> {
    render_png(&world.grid, &world.mem, overlay, 4)
        .save(dir.join(RENDER_PNG_FILE))
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(dir.join(RENDER_SVG_FILE), render_svg(&world.grid, overlay, Some(RENDER_PNG_FILE)))?;
    Ok(())
}

/// Writes a complete planning run into `dir`.
pub fn write_plan_run(
    dir: &Path,
    cfg: &PlanConfig,
    world: &World,
    out: &PlanOutcome,
    eval: &EvalReport,
) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let path = PathExport {
        poses: out.path.poses.iter().map(|p| [p.x, p.y, p.theta]).collect(),
        keyposes: out.keyposes.iter().map(|k| [k.x, k.y, k.z]).collect(),
        cost: out.path.cost,
        expanded: out.path.expanded,
    };
    write_json(&dir.join(PATH_FILE), &path)?;
    write_json(&dir.join(TRAJECTORY_FILE), &out.trajectory.export())?;
    let mut w = BufWriter::new(File::create(dir.join(HISTORY_FILE))?);
    write_history_csv(&out.history, &mut w)?;
    w.flush()?;
    write_eval(dir, eval)?;
    write_json::<Timing>(&dir.join(TIMING_FILE), &out.timing)?;
    let overlay = Overlay { path: Some(&out.path.poses), trajectory: Some(&out.trajectory), eval: Some(eval) };
    write_renders(dir, world, &overlay)
}

/// Writes an ablation report as JSON and a per-run CSV.
pub fn write_ablation(dir: &Path, cfg: &PlanConfig, report: &AblationReport) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    write_json(&dir.join(ABLATION_FILE), report)?;
    let mut w = BufWriter::new(File::create(dir.join(ABLATION_CSV_FILE))?);
    writeln!(w, "arm,run,ok,mean_error,max_error,goal_deviation,failures,j_l,path_length,duration,plan_seconds,error")?;
    for r in &report.runs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.arm.label(),
            r.run,
            r.ok,
            r.mean_error,
            r.max_error,
            r.goal_deviation,
            r.failures,
            r.j_l,
            r.path_length,
            r.duration,
            r.plan_seconds,
            r.error.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    w.flush()?;
    Ok(())
}
