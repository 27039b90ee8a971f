//! End-to-end planning: presearch, hybrid A*, key poses, trajectory
//! optimization and localization replay, plus the three-arm ablation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lbfgs::Termination;
use crate::localizer::{track_trajectory, EvalReport, TrackConfig};
use crate::maps;
use crate::mem::{build_mem, load_mem_for, MetricEncodingMap, BINS};
use crate::minco::{MincoTrajectory, Vec3};
use crate::optimizer::{initial_trajectory, optimize, CostReport, OptConfig};
use crate::scan::{PoseSE2, RankConfig};
use crate::search::{
    extract_keyposes, heuristic_presearch, hybrid_astar, uniform_presearch, KeyposeConfig, PosePath, SearchConfig,
    StepCost,
};
use crate::world::{load_occupancy_file, DistanceField, OccupancyGrid};

/// LiDAR model shared by the MEM, the planner and the evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Field of view in degrees.
    pub fov_deg: f64,
    pub n_rays: usize,
    pub max_range: f64,
    /// Rank-2 threshold on the scaled singular value ratio.
    pub tau_rank: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { fov_deg: 90.0, n_rays: 90, max_range: 8.0, tau_rank: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub runs: usize,
    /// Uniform jitter applied to start and goal positions per run (m).
    pub jitter: f64,
    pub bootstrap_resamples: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { runs: 20, jitter: 0.1, bootstrap_resamples: 2000 }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Occupancy raster with a JSON sidecar. Ignored when `benchmark` is set.
    pub map: Option<PathBuf>,
    /// Name of a built-in benchmark map.
    pub benchmark: Option<String>,
    /// Prebuilt MEM; built in memory when absent.
    pub mem: Option<PathBuf>,
    /// `[x, y, yaw]`; defaults to the benchmark's poses.
    pub start: Option<[f64; 3]>,
    pub goal: Option<[f64; 3]>,
    pub seed: u64,
    pub sensor: SensorConfig,
    pub search: SearchConfig,
    pub keyposes: KeyposeConfig,
    pub optimizer: OptConfig,
    pub track: TrackConfig,
    pub ablation: AblationConfig,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            map: None,
            benchmark: Some("corridor_detour".into()),
            mem: None,
            start: None,
            goal: None,
            seed: 0,
            sensor: SensorConfig::default(),
            search: SearchConfig::default(),
            keyposes: KeyposeConfig::default(),
            optimizer: OptConfig::default(),
            track: TrackConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl PlanConfig {
    /// Parses JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PlanConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copies the shared sensor model into the sub-configs.
    pub fn resolved(mut self) -> Self {
        let fov = self.sensor.fov_deg.to_radians();
        self.search.fov = fov;
        self.optimizer.fov = fov;
        self.track.fov = fov;
        self.track.n_rays = self.sensor.n_rays;
        self.track.max_range = self.sensor.max_range;
        self.search.sigmoid = self.optimizer.sigmoid;
        self.search.safety_margin = self.optimizer.safety_distance;
        self
    }

    pub fn validate(&self) -> Result<(), Error> {
        let s = &self.sensor;
        if !(s.fov_deg > 0.0 && s.fov_deg <= 360.0) || s.n_rays == 0 || !(s.max_range > 0.0) || !(s.tau_rank > 0.0) {
            return Err(Error::Config(
                "sensor needs 0 < fov_deg <= 360, n_rays > 0, max_range > 0, tau_rank > 0".into(),
            ));
        }
        self.optimizer.validate().map_err(Error::Config)?;
        if self.search.theta_bins == 0 || !(self.search.step_cells > 0.0) {
            return Err(Error::Config("search needs theta_bins > 0 and step_cells > 0".into()));
        }
        if !(self.track.dt > 0.0) {
            return Err(Error::Config("track.dt must be positive".into()));
        }
        if self.map.is_none() && self.benchmark.is_none() {
            return Err(Error::Config("either map or benchmark must be set".into()));
        }
        if let Some(name) = &self.benchmark {
            if maps::by_name(name).is_none() {
                return Err(Error::Config(format!(
                    "unknown benchmark '{name}'; expected one of {:?}",
                    maps::BENCHMARK_NAMES
                )));
            }
        }
        Ok(())
    }

    pub fn rank_config(&self, resolution: f64) -> RankConfig {
        let mut r = RankConfig::for_grid(resolution, BINS, self.sensor.max_range);
        r.tau_rank = self.sensor.tau_rank;
        r
    }
}

/// Map, distance field and MEM loaded together.
pub struct World {
    pub grid: OccupancyGrid,
    pub field: DistanceField,
    pub mem: MetricEncodingMap,
    pub start: PoseSE2,
    pub goal: PoseSE2,
}

fn pose(v: [f64; 3]) -> PoseSE2 {
    PoseSE2::new(v[0], v[1], v[2])
}

/// Occupancy grid plus start and goal, before the MEM is attached.
pub struct Scenario {
    pub grid: OccupancyGrid,
    pub start: PoseSE2,
    pub goal: PoseSE2,
}

impl Scenario {
    /// Loads the map named by `cfg` and checks that both poses are free.
    pub fn load(cfg: &PlanConfig) -> Result<Self, Error> {
        let grid = load_grid(cfg)?;
        let defaults = cfg.benchmark.as_deref().and_then(maps::by_name);
        let start = cfg.start.map(pose).or(defaults.as_ref().map(|b| b.start));
        let goal = cfg.goal.map(pose).or(defaults.as_ref().map(|b| b.goal));
        let start = start.ok_or_else(|| Error::Config("start pose missing".into()))?;
        let goal = goal.ok_or_else(|| Error::Config("goal pose missing".into()))?;
        for (what, p) in [("start", start), ("goal", goal)] {
            if !grid.is_free_point(p.position()) {
                return Err(Error::Config(format!("{what} pose ({:.2}, {:.2}) is not in free space", p.x, p.y)));
            }
        }
        Ok(Self { grid, start, goal })
    }
}

/// The configured occupancy grid: a benchmark, or a raster with sidecar.
pub fn load_grid(cfg: &PlanConfig) -> Result<OccupancyGrid, Error> {
    match (&cfg.benchmark, &cfg.map) {
        (Some(name), _) => {
            Ok(maps::by_name(name).ok_or_else(|| Error::Config(format!("unknown benchmark '{name}'")))?.grid)
        }
        (None, Some(path)) => Ok(load_occupancy_file(path)?),
        (None, None) => Err(Error::Config("either map or benchmark must be set".into())),
    }
}

impl World {
    pub fn load(cfg: &PlanConfig) -> Result<Self, Error> {
        let Scenario { grid, start, goal } = Scenario::load(cfg)?;
        let field = DistanceField::build(&grid)?;
        let mem = match &cfg.mem {
            Some(path) => load_mem_for(path, &grid)?,
            None => build_mem(&grid, &cfg.rank_config(grid.resolution())),
        };
        Ok(Self { grid, field, mem, start, goal })
    }
}

/// Which parts of the planner are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Complete,
    /// Plain hybrid A* with a distance cost.
    WithoutPerceptionSearch,
    /// Trajectory optimization without the localization cost.
    WithoutLocalizationCost,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Complete, Arm::WithoutPerceptionSearch, Arm::WithoutLocalizationCost];

    pub fn label(self) -> &'static str {
        match self {
            Arm::Complete => "complete",
            Arm::WithoutPerceptionSearch => "without_perception_search",
            Arm::WithoutLocalizationCost => "without_localization_cost",
        }
    }
}

/// Wall time of each planning stage in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub presearch: f64,
    pub search: f64,
    pub optimize: f64,
    pub total: f64,
}

pub struct PlanOutcome {
    pub path: PosePath,
    pub keyposes: Vec<Vec3>,
    pub trajectory: MincoTrajectory,
    pub history: Vec<CostReport>,
    pub termination: Option<Termination>,
    pub timing: Timing,
}

/// Plans from `start` to `goal` with the given arm.
pub fn plan(world: &World, cfg: &PlanConfig, arm: Arm, start: PoseSE2, goal: PoseSE2) -> Result<PlanOutcome, Error> {
    let t0 = Instant::now();
    let mut search = cfg.search.clone();
    let hfield = if arm == Arm::WithoutPerceptionSearch {
        search.step_cost = StepCost::Distance;
        uniform_presearch(&world.grid, &goal, search.distance_cost)?
    } else {
        heuristic_presearch(&world.grid, &world.mem, &goal, &search.sigmoid)?
    };
    let t1 = Instant::now();
    let path = hybrid_astar(&world.grid, &world.field, &world.mem, &hfield, start, goal, &search)?;
    let t2 = Instant::now();
    let keyposes = extract_keyposes(&path.poses, &cfg.keyposes);
    let mut opt = cfg.optimizer.clone();
    if arm == Arm::WithoutLocalizationCost {
        opt.lambda_l = 0.0;
    }
    let (trajectory, history, termination) = if keyposes.len() < 2 {
        let p = path.poses[0].as_vector();
        let traj = initial_trajectory(&[p, p], &opt)?;
        (traj, Vec::new(), None)
    } else {
        let init = initial_trajectory(&keyposes, &opt)?;
        let r = optimize(&init, &world.field, &world.mem, &opt);
        (r.trajectory, r.history, Some(r.termination))
    };
    let t3 = Instant::now();
    let timing = Timing {
        presearch: (t1 - t0).as_secs_f64(),
        search: (t2 - t1).as_secs_f64(),
        optimize: (t3 - t2).as_secs_f64(),
        total: (t3 - t0).as_secs_f64(),
    };
    Ok(PlanOutcome { path, keyposes, trajectory, history, termination, timing })
}

/// Start and goal for run `run` of an ablation, jittered deterministically.
pub fn jittered_endpoints(world: &World, cfg: &PlanConfig, run: usize) -> (PoseSE2, PoseSE2) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(run as u64));
    let j = cfg.ablation.jitter;
    let mut shift = |p: PoseSE2| {
        if j <= 0.0 {
            return p;
        }
        p.offset(rng.random_range(-j..=j), rng.random_range(-j..=j), 0.0)
    };
    (shift(world.start), shift(world.goal))
}

/// Seed of the localization noise for run `run`; shared by all arms.
pub fn noise_seed(cfg: &PlanConfig, run: usize) -> u64 {
    cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(run as u64 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: Arm,
    pub run: usize,
    pub ok: bool,
    pub error: Option<String>,
    pub mean_error: f64,
    pub max_error: f64,
    pub goal_deviation: f64,
    pub failures: usize,
    pub j_l: f64,
    pub path_length: f64,
    pub duration: f64,
    pub plan_seconds: f64,
}

/// Mean with a percentile bootstrap confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// 95% percentile bootstrap interval of the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> Interval {
    let n = values.len();
    if n == 0 {
        return Interval { mean: f64::NAN, lo: f64::NAN, hi: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> =
        (0..resamples.max(1)).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    Interval { mean, lo: at(0.025), hi: at(0.975) }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub completed: usize,
    pub failed: usize,
    pub mean_error: Interval,
    pub goal_deviation: Interval,
    pub plan_seconds: Interval,
    pub j_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub benchmark: String,
    pub runs: Vec<RunRecord>,
    pub arms: Vec<ArmSummary>,
}

impl AblationReport {
    pub fn arm(&self, arm: Arm) -> &ArmSummary {
        self.arms.iter().find(|s| s.arm == arm).expect("every arm is summarized")
    }
}

/// Plans and replays one run of one arm.
pub fn run_arm(world: &World, cfg: &PlanConfig, arm: Arm, run: usize) -> RunRecord {
    let (start, goal) = jittered_endpoints(world, cfg, run);
    let mut rec = RunRecord {
        arm,
        run,
        ok: false,
        error: None,
        mean_error: f64::NAN,
        max_error: f64::NAN,
        goal_deviation: f64::NAN,
        failures: 0,
        j_l: f64::NAN,
        path_length: f64::NAN,
        duration: f64::NAN,
        plan_seconds: f64::NAN,
    };
    match plan(world, cfg, arm, start, goal) {
        Ok(out) => {
            let eval = track_trajectory(&out.trajectory, &world.grid, &world.field, &cfg.track, noise_seed(cfg, run));
            let loc_cfg = OptConfig { lambda_l: 1.0, ..cfg.optimizer.clone() };
            rec.ok = true;
            rec.mean_error = eval.mean_error;
            rec.max_error = eval.max_error;
            rec.goal_deviation = eval.goal_deviation;
            rec.failures = eval.failures;
            rec.j_l = crate::optimizer::localization_cost(&out.trajectory, &world.mem, &loc_cfg).value;
            rec.path_length = out.path.length();
            rec.duration = out.trajectory.total_duration();
            rec.plan_seconds = out.timing.total;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Runs every arm `cfg.ablation.runs` times; runs execute in parallel and
/// are aggregated in run order.
pub fn ablate(world: &World, cfg: &PlanConfig, name: &str) -> AblationReport {
    let jobs: Vec<(Arm, usize)> = Arm::ALL.iter().flat_map(|&a| (0..cfg.ablation.runs).map(move |r| (a, r))).collect();
    let runs: Vec<RunRecord> = jobs.par_iter().map(|&(arm, run)| run_arm(world, cfg, arm, run)).collect();
    let arms = Arm::ALL
        .iter()
        .enumerate()
        .map(|(k, &arm)| {
            let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.arm == arm && r.ok).collect();
            let pick = |f: fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let seed = cfg.seed.wrapping_add(k as u64);
            let b = cfg.ablation.bootstrap_resamples;
            ArmSummary {
                arm,
                completed: ok.len(),
                failed: runs.iter().filter(|r| r.arm == arm && !r.ok).count(),
                mean_error: bootstrap_mean_ci(&pick(|r| r.mean_error), b, seed),
                goal_deviation: bootstrap_mean_ci(&pick(|r| r.goal_deviation), b, seed + 100),
                plan_seconds: bootstrap_mean_ci(&pick(|r| r.plan_seconds), b, seed + 200),
                j_l: pick(|r| r.j_l).iter().sum::<f64>() / ok.len().max(1) as f64,
            }
        })
        .collect();
    AblationReport { benchmark: name.to_string(), runs, arms }
}

/// Replays a trajectory with the configured sensor and noise.
pub fn evaluate(world: &World, cfg: &PlanConfig, traj: &MincoTrajectory) -> EvalReport {
    track_trajectory(traj, &world.grid, &world.field, &cfg.track, noise_seed(cfg, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0, epsilon = 1e-12);
        // ties share the average rank
        assert_abs_diff_eq!(spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]), 0.866_025_403_784_438_6, epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_interval_brackets_mean() {
        let v: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let ci = bootstrap_mean_ci(&v, 1000, 3);
        assert!(ci.lo <= ci.mean && ci.mean <= ci.hi);
        assert_eq!(ci, bootstrap_mean_ci(&v, 1000, 3));
        let c = bootstrap_mean_ci(&[2.0; 5], 100, 0);
        assert_eq!((c.lo, c.hi), (2.0, 2.0));
    }

    #[test]
    fn config_round_trips_through_json_and_toml() {
        let cfg = PlanConfig::default().resolved();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PlanConfig>(&json).unwrap(), cfg);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<PlanConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut cfg = PlanConfig::default();
        cfg.benchmark = Some("nowhere".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = PlanConfig::default();
        cfg.optimizer.lbfgs.c1 = 0.95;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
