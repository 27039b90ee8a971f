//! Localizability-aware path search.
//!
//! A grid Dijkstra over the full-window GFM gives a goal-rooted heuristic
//! field, and a hybrid A* over SE(2) motion primitives accumulates the
//! sigmoid-smoothed GFM of each expanded pose as its path cost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::SearchError;
use crate::mem::{MetricEncodingMap, BINS};
use crate::scan::{normalize_angle, PoseSE2};
use crate::world::{DistanceField, OccupancyGrid, Point2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmoidParams {
    pub epsilon: f64,
    pub l: f64,
}

impl Default for SigmoidParams {
    fn default() -> Self {
        Self { epsilon: 1.0, l: BINS as f64 }
    }
}

/// Smooth, increasing map from a GFM count in `[0, L]` to `(0, 1)`.
pub fn sigmoid(m: f64, p: &SigmoidParams) -> f64 {
    1.0 / (1.0 + ((p.epsilon * p.l - 2.0 * p.epsilon * m) / p.l).exp())
}

pub fn sigmoid_derivative(m: f64, p: &SigmoidParams) -> f64 {
    let u = 2.0 * p.epsilon * m / p.l - p.epsilon;
    2.0 * p.epsilon / p.l / (2.0 + u.exp() + (-u).exp())
}

/// Cost-to-go over grid cells, rooted at the goal.
#[derive(Clone, Debug)]
pub struct HeuristicField {
    width: usize,
    height: usize,
    h: Vec<f64>,
    goal_cell: (usize, usize),
}

impl HeuristicField {
    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal_cell
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    pub fn at_cell(&self, ix: usize, iy: usize) -> f64 {
        self.h[iy * self.width + ix]
    }

    /// Value at the cell containing `p`, infinite outside the map.
    pub fn at_point(&self, grid: &OccupancyGrid, p: Point2) -> f64 {
        match grid.world_to_cell(p) {
            Some((ix, iy)) => self.at_cell(ix, iy),
            None => f64::INFINITY,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Queued {
    cost: f64,
    tie: f64,
    seq: u64,
    slot: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    // reversed so BinaryHeap pops the smallest (cost, tie, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then(other.tie.total_cmp(&self.tie)).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Dijkstra from `goal` with the weight of entering cell `b` given by `weight(b)`.
fn grid_dijkstra(grid: &OccupancyGrid, goal: (usize, usize), weight: impl Fn(usize, usize) -> f64) -> HeuristicField {
    let (w, h) = (grid.width(), grid.height());
    let mut dist = vec![f64::INFINITY; w * h];
    let mut heap = BinaryHeap::new();
    let start = grid.index(goal.0, goal.1);
    dist[start] = 0.0;
    heap.push(Queued { cost: 0.0, tie: 0.0, seq: 0, slot: start });
    let mut seq = 1;
    while let Some(Queued { cost, slot, .. }) = heap.pop() {
        if cost > dist[slot] {
            continue;
        }
        let (x, y) = ((slot % w) as i64, (slot / w) as i64);
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if !grid.in_bounds(nx, ny) || grid.is_occupied(nx as usize, ny as usize) {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            let c = cost + weight(nx as usize, ny as usize);
            if c < dist[n] {
                dist[n] = c;
                heap.push(Queued { cost: c, tie: 0.0, seq, slot: n });
                seq += 1;
            }
        }
    }
    HeuristicField { width: w, height: h, h: dist, goal_cell: goal }
}

fn goal_cell(grid: &OccupancyGrid, goal: &PoseSE2) -> Result<(usize, usize), SearchError> {
    let cell =
        grid.world_to_cell(goal.position()).ok_or(crate::error::WorldError::OutOfBounds { x: goal.x, y: goal.y })?;
    if grid.is_occupied(cell.0, cell.1) {
        return Err(crate::error::WorldError::InsideObstacle { x: goal.x, y: goal.y }.into());
    }
    Ok(cell)
}

/// Heuristic field whose edge weight into a cell is the sigmoid of its
/// full-window GFM.
pub fn heuristic_presearch(
    grid: &OccupancyGrid,
    mem: &MetricEncodingMap,
    goal: &PoseSE2,
    params: &SigmoidParams,
) -> Result<HeuristicField, SearchError> {
    let cell = goal_cell(grid, goal)?;
    Ok(grid_dijkstra(grid, cell, |x, y| sigmoid(mem.full_window(x, y) as f64, params)))
}

/// Heuristic field with a constant edge weight, used by the plain planner.
pub fn uniform_presearch(grid: &OccupancyGrid, goal: &PoseSE2, weight: f64) -> Result<HeuristicField, SearchError> {
    let cell = goal_cell(grid, goal)?;
    Ok(grid_dijkstra(grid, cell, |_, _| weight))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCost {
    /// Sigmoid of the continuous GFM at each new pose.
    Perception,
    /// Constant cost per unit of primitive length.
    Distance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// LiDAR field of view used when scoring poses (rad).
    pub fov: f64,
    pub theta_bins: usize,
    /// Primitive length in map cells.
    pub step_cells: f64,
    /// Yaw change of the sharpest arc per primitive (rad).
    pub max_turn: f64,
    /// In-place rotation increment (rad).
    pub rotate_step: f64,
    pub goal_tol_xy: f64,
    pub goal_tol_yaw: f64,
    /// Required clearance to obstacles (m).
    pub safety_margin: f64,
    /// Scale applied to the heuristic field.
    pub heuristic_weight: f64,
    /// Search-only cost per radian of yaw change; keeps ties from wiggling.
    pub turn_penalty: f64,
    pub max_expansions: usize,
    pub step_cost: StepCost,
    /// Per-step cost of the plain planner for a full-length primitive.
    pub distance_cost: f64,
    pub sigmoid: SigmoidParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            fov: 90f64.to_radians(),
            theta_bins: 32,
            step_cells: 2.0,
            max_turn: 2.0 * std::f64::consts::TAU / 32.0,
            rotate_step: std::f64::consts::TAU / 32.0,
            goal_tol_xy: 0.25,
            goal_tol_yaw: 0.35,
            safety_margin: 0.3,
            heuristic_weight: 0.5,
            turn_penalty: 0.02,
            max_expansions: 400_000,
            step_cost: StepCost::Perception,
            distance_cost: 0.5,
            sigmoid: SigmoidParams::default(),
        }
    }
}

/// Pose sequence from start to goal and its accumulated cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosePath {
    pub poses: Vec<PoseSE2>,
    /// Accumulated step cost, excluding the turn penalty.
    pub cost: f64,
    pub expanded: usize,
    /// Number of poses whose heuristic exceeded the realized remaining cost.
    pub heuristic_overestimates: usize,
}

impl PosePath {
    pub fn length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].position() - w[0].position()).norm()).sum()
    }
}

struct Node {
    pose: PoseSE2,
    g: f64,
    cost: f64,
    parent: Option<usize>,
}

#[derive(Clone, Copy)]
struct Primitive {
    forward: f64,
    lateral: f64,
    turn: f64,
}

fn primitives(cfg: &SearchConfig, step: f64) -> Vec<Primitive> {
    let t = cfg.max_turn;
    let mut out: Vec<Primitive> =
        [-t, -0.5 * t, 0.0, 0.5 * t, t].iter().map(|&turn| Primitive { forward: step, lateral: 0.0, turn }).collect();
    out.push(Primitive { forward: 0.0, lateral: step, turn: 0.0 });
    out.push(Primitive { forward: 0.0, lateral: -step, turn: 0.0 });
    out.push(Primitive { forward: 0.0, lateral: 0.0, turn: cfg.rotate_step });
    out.push(Primitive { forward: 0.0, lateral: 0.0, turn: -cfg.rotate_step });
    out
}

/// Applies a primitive and returns intermediate positions for clearance checks.
fn apply(pose: &PoseSE2, m: Primitive) -> (PoseSE2, [Point2; 2]) {
    let (s, c) = pose.theta.sin_cos();
    let (dx, dy) = if m.forward != 0.0 && m.turn.abs() > 1e-12 {
        let r = m.forward / m.turn;
        let th1 = pose.theta + m.turn;
        (r * (th1.sin() - s), -r * (th1.cos() - c))
    } else if m.forward != 0.0 {
        (m.forward * c, m.forward * s)
    } else {
        (-m.lateral * s, m.lateral * c)
    };
    let p0 = pose.position();
    let end = PoseSE2::new(pose.x + dx, pose.y + dy, pose.theta + m.turn);
    let mid = p0 + Point2::new(dx, dy) * 0.5;
    (end, [mid, end.position()])
}

fn clear(field: &DistanceField, grid: &OccupancyGrid, p: Point2, margin: f64) -> bool {
    grid.world_to_cell(p).is_some() && field.sample(p).0 >= margin
}

/// Cost of arriving at `pose` after moving `length` metres.
pub fn step_cost(mem: &MetricEncodingMap, pose: &PoseSE2, length: f64, full_step: f64, cfg: &SearchConfig) -> f64 {
    match cfg.step_cost {
        StepCost::Perception => sigmoid(mem.gfm_continuous(pose, cfg.fov).value, &cfg.sigmoid),
        StepCost::Distance => cfg.distance_cost * (length / full_step).max(0.5),
    }
}

/// Recomputes the accumulated cost of a path with the configured step cost.
pub fn path_cost(mem: &MetricEncodingMap, path: &[PoseSE2], full_step: f64, cfg: &SearchConfig) -> f64 {
    path.windows(2).map(|w| step_cost(mem, &w[1], (w[1].position() - w[0].position()).norm(), full_step, cfg)).sum()
}

fn within_goal(p: &PoseSE2, goal: &PoseSE2, cfg: &SearchConfig) -> bool {
    (p.position() - goal.position()).norm() <= cfg.goal_tol_xy
        && normalize_angle(p.theta - goal.theta).abs() <= cfg.goal_tol_yaw
}

/// Hybrid A* from `start` to `goal`.
///
/// The returned path ends exactly at `goal`; the final snap from the last
/// expanded pose is scored like any other step.
pub fn hybrid_astar(
    grid: &OccupancyGrid,
    field: &DistanceField,
    mem: &MetricEncodingMap,
    hfield: &HeuristicField,
    start: PoseSE2,
    goal: PoseSE2,
    cfg: &SearchConfig,
) -> Result<PosePath, SearchError> {
    for (what, p) in [("start", &start), ("goal", &goal)] {
        if !clear(field, grid, p.position(), cfg.safety_margin) {
            return Err(SearchError::Blocked { what, x: p.x, y: p.y });
        }
    }
    if within_goal(&start, &goal, cfg) {
        return Ok(PosePath { poses: vec![start], cost: 0.0, expanded: 0, heuristic_overestimates: 0 });
    }
    let res = grid.resolution();
    let full_step = cfg.step_cells * res;
    let prims = primitives(cfg, full_step);
    let bins = cfg.theta_bins.max(1);
    let (w, h) = (grid.width(), grid.height());
    let key = |p: &PoseSE2| -> Option<usize> {
        let (ix, iy) = grid.world_to_cell(p.position())?;
        let tb = ((normalize_angle(p.theta) + std::f64::consts::PI) / std::f64::consts::TAU * bins as f64).floor()
            as usize
            % bins;
        Some((iy * w + ix) * bins + tb)
    };
    let heuristic = |p: &PoseSE2| cfg.heuristic_weight * hfield.at_point(grid, p.position());

    let mut best_g = vec![f64::INFINITY; w * h * bins];
    let mut closed = vec![false; w * h * bins];
    let mut nodes = vec![Node { pose: start, g: 0.0, cost: 0.0, parent: None }];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let k0 = key(&start).expect("start checked in bounds");
    best_g[k0] = 0.0;
    let h0 = heuristic(&start);
    heap.push(Queued { cost: h0, tie: h0, seq, slot: 0 });
    let mut expanded = 0usize;

    while let Some(Queued { slot, .. }) = heap.pop() {
        let pose = nodes[slot].pose;
        let g = nodes[slot].g;
        let k = key(&pose).expect("queued poses are in bounds");
        if closed[k] || g > best_g[k] {
            continue;
        }
        closed[k] = true;
        expanded += 1;
        if expanded > cfg.max_expansions {
            return Err(SearchError::IterationLimit { limit: cfg.max_expansions });
        }
        if within_goal(&pose, &goal, cfg) {
            let mut poses = Vec::new();
            let mut cur = Some(slot);
            while let Some(i) = cur {
                poses.push(nodes[i].pose);
                cur = nodes[i].parent;
            }
            poses.reverse();
            let last = *poses.last().expect("non-empty");
            let mut cost = nodes[slot].cost;
            if last != goal {
                cost += step_cost(mem, &goal, (goal.position() - last.position()).norm(), full_step, cfg);
                poses.push(goal);
            }
            let overestimates = count_overestimates(&poses, mem, full_step, cfg, &heuristic);
            return Ok(PosePath { poses, cost, expanded, heuristic_overestimates: overestimates });
        }
        for &m in &prims {
            let (next, checks) = apply(&pose, m);
            if !checks.iter().all(|&p| clear(field, grid, p, cfg.safety_margin)) {
                continue;
            }
            let Some(nk) = key(&next) else { continue };
            if closed[nk] {
                continue;
            }
            let length = (next.position() - pose.position()).norm();
            let sc = step_cost(mem, &next, length, full_step, cfg);
            let ng = g + sc + cfg.turn_penalty * m.turn.abs();
            if ng >= best_g[nk] {
                continue;
            }
            let nh = heuristic(&next);
            if !nh.is_finite() {
                continue;
            }
            best_g[nk] = ng;
            nodes.push(Node { pose: next, g: ng, cost: nodes[slot].cost + sc, parent: Some(slot) });
            seq += 1;
            heap.push(Queued { cost: ng + nh, tie: nh, seq, slot: nodes.len() - 1 });
        }
    }
    Err(SearchError::NoPath { expanded })
}

fn count_overestimates(
    poses: &[PoseSE2],
    mem: &MetricEncodingMap,
    full_step: f64,
    cfg: &SearchConfig,
    heuristic: &impl Fn(&PoseSE2) -> f64,
) -> usize {
    let mut remaining = 0.0;
    let mut count = 0;
    for i in (0..poses.len()).rev() {
        if heuristic(&poses[i]) > remaining + 1e-9 {
            count += 1;
        }
        if i > 0 {
            let len = (poses[i].position() - poses[i - 1].position()).norm();
            remaining += step_cost(mem, &poses[i], len, full_step, cfg);
        }
    }
    if count > 0 {
        log::debug!("heuristic exceeded realized cost-to-go at {count} path poses");
    }
    count
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyposeConfig {
    /// Maximum perpendicular deviation of the simplified polyline (m).
    pub rdp_epsilon: f64,
    /// Maximum distance between consecutive key poses (m).
    pub max_spacing: f64,
    /// Maximum yaw change between consecutive key poses (rad).
    pub max_yaw_gap: f64,
}

impl Default for KeyposeConfig {
    fn default() -> Self {
        Self { rdp_epsilon: 0.1, max_spacing: 1.0, max_yaw_gap: 0.8 }
    }
}

/// Unwraps yaw so consecutive values never jump by more than pi.
pub fn unwrap_yaw(poses: &[PoseSE2]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(poses.len());
    for p in poses {
        match out.last() {
            Some(&prev) => out.push(prev + normalize_angle(p.theta - prev)),
            None => out.push(p.theta),
        }
    }
    out
}

fn rdp(points: &[Point2], lo: usize, hi: usize, eps: f64, keep: &mut [bool]) {
    if hi <= lo + 1 {
        return;
    }
    let (a, b) = (points[lo], points[hi]);
    let ab = b - a;
    let len = ab.norm();
    let mut worst = (0.0, lo);
    for (i, p) in points.iter().enumerate().take(hi).skip(lo + 1) {
        let ap = p - a;
        let d = if len < 1e-12 { ap.norm() } else { (ab.x * ap.y - ab.y * ap.x).abs() / len };
        if d > worst.0 {
            worst = (d, i);
        }
    }
    if worst.0 > eps {
        keep[worst.1] = true;
        rdp(points, lo, worst.1, eps, keep);
        rdp(points, worst.1, hi, eps, keep);
    }
}

/// Key poses `(x, y, unwrapped yaw)` sampled from a search path.
pub fn extract_keyposes(path: &[PoseSE2], cfg: &KeyposeConfig) -> Vec<nalgebra::Vector3<f64>> {
    let n = path.len();
    let yaw = unwrap_yaw(path);
    let at = |i: usize| nalgebra::Vector3::new(path[i].x, path[i].y, yaw[i]);
    if n < 2 {
        return (0..n).map(at).collect();
    }
    let pts: Vec<Point2> = path.iter().map(|p| p.position()).collect();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    rdp(&pts, 0, n - 1, cfg.rdp_epsilon, &mut keep);
    let mut picked: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    // refine gaps that are too long or turn too far
    let mut i = 0;
    while i + 1 < picked.len() {
        let (a, b) = (picked[i], picked[i + 1]);
        let dist = (pts[b] - pts[a]).norm();
        let turn = (yaw[b] - yaw[a]).abs();
        if b > a + 1 && (dist > cfg.max_spacing || turn > cfg.max_yaw_gap) {
            let pieces = ((dist / cfg.max_spacing).ceil().max((turn / cfg.max_yaw_gap).ceil()) as usize).max(2);
            let mut inserted = Vec::new();
            for k in 1..pieces {
                let idx = a + ((b - a) * k + pieces / 2) / pieces;
                if idx > a && idx < b && inserted.last() != Some(&idx) {
                    inserted.push(idx);
                }
            }
            picked.splice(i + 1..i + 1, inserted);
        }
        i += 1;
    }
    // drop zero-length hops other than pure rotations
    let mut out: Vec<usize> = Vec::with_capacity(picked.len());
    for idx in picked {
        if let Some(&last) = out.last() {
            if (pts[idx] - pts[last]).norm() < 1e-9 && (yaw[idx] - yaw[last]).abs() < 1e-9 {
                continue;
            }
        }
        out.push(idx);
    }
    out.into_iter().map(at).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::MemMeta;
    use crate::scan::RankConfig;
    use approx::assert_abs_diff_eq;

    fn open_grid(n: usize) -> OccupancyGrid {
        OccupancyGrid::from_fn(n, n, 0.1, Point2::zeros(), |x, y| x == 0 || y == 0 || x == n - 1 || y == n - 1).unwrap()
    }

    fn uniform_mem(grid: &OccupancyGrid, bits: u32) -> MetricEncodingMap {
        let code = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        let meta = MemMeta::for_grid(grid, &RankConfig::for_grid(0.1, BINS, 8.0));
        let codes = (0..grid.width() * grid.height()).map(|i| if grid.cells()[i] { u64::MAX } else { code }).collect();
        MetricEncodingMap::from_codes(meta, codes).unwrap()
    }

    #[test]
    fn sigmoid_examples() {
        let p = SigmoidParams::default();
        assert_abs_diff_eq!(sigmoid(32.0, &p), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sigmoid(0.0, &p), 0.268941, epsilon = 1e-6);
        assert_abs_diff_eq!(sigmoid_derivative(32.0, &p), 0.0078125, epsilon = 1e-15);
        for m in [10.0, 32.0, 50.0] {
            let h = 1e-5;
            let fd = (sigmoid(m + h, &p) - sigmoid(m - h, &p)) / (2.0 * h);
            assert!((fd - sigmoid_derivative(m, &p)).abs() < 1e-8);
        }
        let mut prev = 0.0;
        for k in 0..=64 {
            let v = sigmoid(k as f64, &p);
            assert!(v > prev);
            assert!(sigmoid_derivative(k as f64, &p) > 0.0);
            prev = v;
        }
    }

    #[test]
    fn uniform_heuristic_counts_hops() {
        let grid = open_grid(16);
        let mem = uniform_mem(&grid, 20);
        let p = SigmoidParams::default();
        let goal = PoseSE2::new(grid.cell_center(5, 7).x, grid.cell_center(5, 7).y, 0.0);
        let hf = heuristic_presearch(&grid, &mem, &goal, &p).unwrap();
        let s = sigmoid(20.0, &p);
        for iy in 1..15 {
            for ix in 1..15 {
                let hops = (ix as i64 - 5).abs().max((iy as i64 - 7).abs()) as f64;
                assert_abs_diff_eq!(hf.at_cell(ix, iy), s * hops, epsilon = 1e-12);
            }
        }
        assert!(hf.at_cell(0, 0).is_infinite());
    }

    #[test]
    fn unreachable_pocket_is_infinite() {
        let grid = OccupancyGrid::from_fn(12, 12, 0.1, Point2::zeros(), |x, y| x == 6 || y == 0 || y == 11).unwrap();
        let mem = uniform_mem(&grid, 0);
        let goal = PoseSE2::new(0.25, 0.55, 0.0);
        let hf = heuristic_presearch(&grid, &mem, &goal, &SigmoidParams::default()).unwrap();
        assert!(hf.at_cell(9, 5).is_infinite());
        assert_eq!(hf.at_cell(2, 5), 0.0);
    }

    #[test]
    fn goal_in_obstacle_is_error() {
        let grid = open_grid(10);
        let mem = uniform_mem(&grid, 0);
        assert!(heuristic_presearch(&grid, &mem, &PoseSE2::new(0.05, 0.05, 0.0), &SigmoidParams::default()).is_err());
    }

    fn plan_open(start: PoseSE2, goal: PoseSE2) -> (PosePath, MetricEncodingMap, SearchConfig) {
        let grid = open_grid(60);
        let field = DistanceField::build(&grid).unwrap();
        let mem = uniform_mem(&grid, 4);
        let cfg = SearchConfig::default();
        let hf = heuristic_presearch(&grid, &mem, &goal, &cfg.sigmoid).unwrap();
        (hybrid_astar(&grid, &field, &mem, &hf, start, goal, &cfg).unwrap(), mem, cfg)
    }

    #[test]
    fn start_equals_goal() {
        let p = PoseSE2::new(3.0, 3.0, 0.2);
        let (path, _, _) = plan_open(p, p);
        assert_eq!(path.poses, vec![p]);
    }

    #[test]
    fn open_map_path_is_nearly_straight() {
        let start = PoseSE2::new(1.0, 1.0, 0.0);
        for (gx, gy) in [(4.0, 3.0), (2.0, 5.0), (5.0, 1.0)] {
            let th = (gy - 1.0f64).atan2(gx - 1.0);
            let (path, _, _) = plan_open(PoseSE2::new(1.0, 1.0, th), PoseSE2::new(gx, gy, th));
            let straight = ((gx - 1.0f64).powi(2) + (gy - 1.0f64).powi(2)).sqrt();
            assert!(path.length() <= 1.05 * straight, "{} vs {straight}", path.length());
        }
        let goal = PoseSE2::new(5.0, 1.2, 0.0);
        let (path, mem, cfg) = plan_open(start, goal);
        let straight = (goal.position() - start.position()).norm();
        assert!(path.length() <= 1.05 * straight, "{} vs {straight}", path.length());
        assert_eq!(*path.poses.first().unwrap(), start);
        assert_eq!(*path.poses.last().unwrap(), goal);
        let recomputed = path_cost(&mem, &path.poses, 0.2, &cfg);
        assert!((recomputed - path.cost).abs() < 1e-9);
    }

    #[test]
    fn search_is_deterministic() {
        let start = PoseSE2::new(1.0, 4.0, 1.0);
        let goal = PoseSE2::new(4.5, 1.5, -2.0);
        let (a, _, _) = plan_open(start, goal);
        let (b, _, _) = plan_open(start, goal);
        assert_eq!(a, b);
    }

    #[test]
    fn blocked_start_is_rejected() {
        let grid = open_grid(30);
        let field = DistanceField::build(&grid).unwrap();
        let mem = uniform_mem(&grid, 4);
        let cfg = SearchConfig::default();
        let goal = PoseSE2::new(1.5, 1.5, 0.0);
        let hf = heuristic_presearch(&grid, &mem, &goal, &cfg.sigmoid).unwrap();
        let err = hybrid_astar(&grid, &field, &mem, &hf, PoseSE2::new(0.2, 1.5, 0.0), goal, &cfg).unwrap_err();
        assert!(matches!(err, SearchError::Blocked { what: "start", .. }));
    }

    fn poses(xs: &[(f64, f64, f64)]) -> Vec<PoseSE2> {
        xs.iter().map(|&(x, y, t)| PoseSE2::new(x, y, t)).collect()
    }

    #[test]
    fn straight_path_keeps_endpoints() {
        let path: Vec<PoseSE2> = (0..=5).map(|i| PoseSE2::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let k = extract_keyposes(&path, &KeyposeConfig::default());
        assert_eq!(k.len(), 2);
        assert_eq!(k[0].x, 0.0);
        assert_abs_diff_eq!(k[1].x, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn l_shape_has_one_bend() {
        let mut pts = Vec::new();
        for i in 0..=5 {
            pts.push((i as f64 * 0.1, 0.0, 0.0));
        }
        for i in 1..=5 {
            pts.push((0.5, i as f64 * 0.1, 0.0));
        }
        let k = extract_keyposes(&poses(&pts), &KeyposeConfig::default());
        assert_eq!(k.len(), 3);
        assert_abs_diff_eq!(k[1].x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(k[1].y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn yaw_is_unwrapped() {
        let path = poses(&[(0.0, 0.0, 3.0), (0.5, 0.0, -3.1), (1.0, 0.0, -2.9), (1.5, 0.0, 2.9)]);
        let cfg = KeyposeConfig { rdp_epsilon: 0.1, max_spacing: 0.4, max_yaw_gap: 10.0 };
        let k = extract_keyposes(&path, &cfg);
        assert_eq!(k.len(), 4);
        for w in k.windows(2) {
            assert!((w[1].z - w[0].z).abs() < std::f64::consts::PI);
        }
    }
}
