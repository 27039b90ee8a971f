use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gfmplan::artifacts::{self, PathExport};
use gfmplan::error::{Error, MemError, SearchError, WorldError};
use gfmplan::mem::{build_mem, save_mem, BINS, OBSTACLE_CODE};
use gfmplan::pipeline::{ablate, evaluate, load_grid, plan, Arm, PlanConfig, World};
use gfmplan::render::Overlay;

/// Perception-aware planning on metric encoding maps.
#[derive(Parser)]
#[command(name = "gfmplan", version)]
struct Cli {
    /// JSON or TOML config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode the map into a MEM image and metadata sidecar.
    BuildMem {
        /// Map raster with a JSON sidecar; overrides the config map.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Output file stem.
        #[arg(long, default_value = "mem")]
        name: String,
    },
    /// Plan, replay localization and write a run directory.
    Plan {
        /// Planner variant.
        #[arg(long, value_enum, default_value = "complete")]
        arm: ArmArg,
    },
    /// Replay localization along an existing trajectory.
    Eval {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Run every planner variant over jittered seeds and compare them.
    Ablate {
        /// Overrides the number of runs per arm.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Render a run directory to PNG and SVG.
    Render {
        /// Run directory written by `plan`.
        run: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ArmArg {
    Complete,
    WithoutPerceptionSearch,
    WithoutLocalizationCost,
}

impl From<ArmArg> for Arm {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Complete => Arm::Complete,
            ArmArg::WithoutPerceptionSearch => Arm::WithoutPerceptionSearch,
            ArmArg::WithoutLocalizationCost => Arm::WithoutLocalizationCost,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    let world = |w: &WorldError| match w {
        WorldError::Io(_) | WorldError::Decode(_) => 4,
        _ => 3,
    };
    match e {
        Error::Search(SearchError::NoPath { .. } | SearchError::IterationLimit { .. }) => 2,
        Error::Config(_) | Error::Search(SearchError::Blocked { .. }) | Error::Mem(MemError::Metadata(_)) => 3,
        Error::World(w) | Error::Search(SearchError::World(w)) | Error::Mem(MemError::World(w)) => world(w),
        Error::Io(_) | Error::Json(_) | Error::Mem(MemError::Io(_) | MemError::Malformed(_)) => 4,
        Error::Minco(_) => 1,
    }
}

fn load_config(cli: &Cli) -> Result<PlanConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, path.display().to_string())));
            }
            PlanConfig::load(path)?
        }
        None => PlanConfig::default().resolved(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn build_mem_cmd(cfg: &mut PlanConfig, out: &Path, map: Option<PathBuf>, name: &str) -> Result<(), Error> {
    if let Some(map) = map {
        cfg.map = Some(map);
        cfg.benchmark = None;
    }
    let grid = load_grid(cfg)?;
    let t0 = Instant::now();
    let mem = build_mem(&grid, &cfg.rank_config(grid.resolution()));
    let secs = t0.elapsed().as_secs_f64();
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("{name}.png"));
    save_mem(&mem, &path)?;
    let free: Vec<u64> = mem.codes().iter().copied().filter(|&c| c != OBSTACLE_CODE).collect();
    let bits: u64 = free.iter().map(|c| c.count_ones() as u64).sum();
    let degenerate = if free.is_empty() { 100.0 } else { 100.0 * bits as f64 / (free.len() * BINS) as f64 };
    println!("wrote {}", path.display());
    println!("cells {} ({} free)", mem.codes().len(), free.len());
    println!("degenerate bits {degenerate:.1}%");
    println!("mean M {:.2}", mem.mean_free_gfm());
    println!("build time {secs:.2}s");
    Ok(())
}

fn plan_cmd(cfg: &PlanConfig, out: &Path, arm: Arm) -> Result<(), Error> {
    let world = World::load(cfg)?;
    let outcome = plan(&world, cfg, arm, world.start, world.goal)?;
    let eval = evaluate(&world, cfg, &outcome.trajectory);
    artifacts::write_plan_run(out, cfg, &world, &outcome, &eval)?;
    println!(
        "path {:.2} m, {} key poses, duration {:.2} s, planned in {:.2} s",
        outcome.path.length(),
        outcome.keyposes.len(),
        outcome.trajectory.total_duration(),
        outcome.timing.total
    );
    println!("mean error {:.4} m, goal deviation {:.4} m", eval.mean_error, eval.goal_deviation);
    println!("wrote {}", out.display());
    Ok(())
}

fn eval_cmd(cfg: &PlanConfig, out: &Path, trajectory: &Path) -> Result<(), Error> {
    let world = World::load(cfg)?;
    let traj = artifacts::read_trajectory(trajectory)?;
    let eval = evaluate(&world, cfg, &traj);
    std::fs::create_dir_all(out)?;
    artifacts::write_eval(out, &eval)?;
    println!(
        "mean error {:.4} m, max {:.4} m, goal deviation {:.4} m, {} failures",
        eval.mean_error, eval.max_error, eval.goal_deviation, eval.failures
    );
    Ok(())
}

fn ablate_cmd(cfg: &mut PlanConfig, out: &Path, runs: Option<usize>) -> Result<(), Error> {
    if let Some(r) = runs {
        cfg.ablation.runs = r;
    }
    let world = World::load(cfg)?;
    let name = cfg.benchmark.clone().unwrap_or_else(|| "map".into());
    let report = ablate(&world, cfg, &name);
    artifacts::write_ablation(out, cfg, &report)?;
    println!("{:<28} {:>5} {:>26} {:>10} {:>10}", "arm", "ok", "mean error [95% CI] (m)", "goal (m)", "plan (s)");
    for a in &report.arms {
        println!(
            "{:<28} {:>2}/{:<2} {:>8.4} [{:.4}, {:.4}] {:>10.4} {:>10.3}",
            a.arm.label(),
            a.completed,
            a.completed + a.failed,
            a.mean_error.mean,
            a.mean_error.lo,
            a.mean_error.hi,
            a.goal_deviation.mean,
            a.plan_seconds.mean
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn render_cmd(run: &Path, out: &Path) -> Result<(), Error> {
    let cfg = PlanConfig::load(&run.join(artifacts::CONFIG_FILE))?;
    let world = World::load(&cfg)?;
    let optional = |file: &str| {
        let p = run.join(file);
        p.exists().then_some(p)
    };
    let path = optional(artifacts::PATH_FILE).map(|p| artifacts::read_json::<PathExport>(&p)).transpose()?;
    let traj = optional(artifacts::TRAJECTORY_FILE).map(|p| artifacts::read_trajectory(&p)).transpose()?;
    let eval = optional(artifacts::EVAL_FILE).map(|p| artifacts::read_json(&p)).transpose()?;
    let poses = path.as_ref().map(|p| p.poses_se2());
    let overlay = Overlay { path: poses.as_deref(), trajectory: traj.as_ref(), eval: eval.as_ref() };
    std::fs::create_dir_all(out)?;
    artifacts::write_renders(out, &world, &overlay)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::BuildMem { map, name } => build_mem_cmd(&mut cfg, &cli.out, map, &name),
        Command::Plan { arm } => plan_cmd(&cfg, &cli.out, arm.into()),
        Command::Eval { trajectory } => eval_cmd(&cfg, &cli.out, &trajectory),
        Command::Ablate { runs } => ablate_cmd(&mut cfg, &cli.out, runs),
        Command::Render { run } => render_cmd(&run, &cli.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
