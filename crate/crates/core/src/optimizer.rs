//! Perception-aware trajectory optimization.
//!
//! The objective is `lambda_l J_l + lambda_e J_e + lambda_G J_G` over the
//! interior waypoints and the unconstrained time variables `tau`. `J_l`
//! integrates the sigmoid of the continuous GFM along the trajectory, `J_e` is
//! the squared jerk plus a time regularizer, and `J_G` penalizes clearance and
//! kinematic limit violations at the quadrature samples.

use std::io::Write;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::MincoError;
use crate::lbfgs::{self, LbfgsParams, Termination};
use crate::mem::MetricEncodingMap;
use crate::minco::{basis, Boundary, MincoTrajectory, Vec3};
use crate::search::{sigmoid, sigmoid_derivative, SigmoidParams};
use crate::world::{DistanceField, Point2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub lambda_l: f64,
    pub lambda_e: f64,
    pub lambda_g: f64,
    /// Time regularization weight.
    pub rho: f64,
    /// Safety distance (m).
    pub safety_distance: f64,
    /// Speed limit (m/s).
    pub v_max: f64,
    /// Acceleration limit (m/s^2).
    pub a_max: f64,
    /// Yaw rate limit (rad/s).
    pub omega_max: f64,
    /// Yaw acceleration limit (rad/s^2).
    pub alpha_max: f64,
    /// Quadrature intervals per segment.
    pub samples_per_segment: usize,
    pub sigmoid: SigmoidParams,
    /// LiDAR field of view (rad).
    pub fov: f64,
    pub lbfgs: LbfgsParams,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lambda_l: 1.0,
            lambda_e: 1.0,
            lambda_g: 1e4,
            rho: 20.0,
            safety_distance: 0.3,
            v_max: 2.0,
            a_max: 3.0,
            omega_max: 2.0,
            alpha_max: 3.0,
            samples_per_segment: 16,
            sigmoid: SigmoidParams::default(),
            fov: 90f64.to_radians(),
            lbfgs: LbfgsParams::default(),
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), String> {
        let weights = [self.lambda_l, self.lambda_e, self.lambda_g, self.rho];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err("cost weights must be non-negative".into());
        }
        if self.samples_per_segment < 2 {
            return Err("samples_per_segment must be at least 2".into());
        }
        if !(0.0 < self.lbfgs.c1 && self.lbfgs.c1 < self.lbfgs.c2 && self.lbfgs.c2 < 1.0) {
            return Err("line search constants need 0 < c1 < c2 < 1".into());
        }
        let limits = [self.v_max, self.a_max, self.omega_max, self.alpha_max, self.sigmoid.epsilon, self.fov];
        if limits.iter().any(|v| !(*v > 0.0)) {
            return Err("limits, epsilon and fov must be positive".into());
        }
        Ok(())
    }
}

/// Maps a positive duration to an unconstrained variable.
pub fn time_forward(t: f64) -> Result<f64, MincoError> {
    if !(t > 0.0) {
        return Err(MincoError::NonPositiveDuration(t));
    }
    Ok(if t > 1.0 { (2.0 * t - 1.0).sqrt() - 1.0 } else { 1.0 - (2.0 / t - 1.0).sqrt() })
}

pub fn time_backward(tau: f64) -> f64 {
    if tau > 0.0 {
        ((tau + 1.0).powi(2) + 1.0) / 2.0
    } else {
        2.0 / ((1.0 - tau).powi(2) + 1.0)
    }
}

/// `dt/dtau` of [`time_backward`].
pub fn time_backward_derivative(tau: f64) -> f64 {
    if tau > 0.0 {
        tau + 1.0
    } else {
        let den = (1.0 - tau).powi(2) + 1.0;
        4.0 * (1.0 - tau) / (den * den)
    }
}

/// A cost value with its partials with respect to the coefficients and durations.
#[derive(Clone, Debug)]
pub struct CostGrad {
    pub value: f64,
    pub d_c: Vec<[f64; 3]>,
    pub d_t: Vec<f64>,
}

impl CostGrad {
    fn zeros(traj: &MincoTrajectory) -> Self {
        Self { value: 0.0, d_c: vec![[0.0; 3]; traj.coefficients().len()], d_t: vec![0.0; traj.segments()] }
    }

    fn add_scaled(&mut self, other: &CostGrad, w: f64) {
        self.value += w * other.value;
        for (a, b) in self.d_c.iter_mut().zip(&other.d_c) {
            for k in 0..3 {
                a[k] += w * b[k];
            }
        }
        for (a, b) in self.d_t.iter_mut().zip(&other.d_t) {
            *a += w * b;
        }
    }
}

/// Derivatives of a sampled integrand with respect to `p`, `p'` and `p''`.
struct SampleTerm {
    value: f64,
    grads: [Vec3; 3],
}

/// Trapezoid quadrature of an integrand over every segment, with the chain
/// rule through both the quadrature weight and the moving sample time.
fn integrate(
    traj: &MincoTrajectory,
    k: usize,
    mut integrand: impl FnMut(usize, usize, [Vec3; 4]) -> SampleTerm,
) -> CostGrad {
    let mut out = CostGrad::zeros(traj);
    let n = 2 * traj.s();
    for seg in 0..traj.segments() {
        let ti = traj.durations()[seg];
        for j in 0..=k {
            let eta = if j == 0 || j == k { 0.5 } else { 1.0 };
            let frac = j as f64 / k as f64;
            let t = frac * ti;
            let derivs = [0, 1, 2, 3].map(|d| traj.eval_segment(seg, t, d));
            let term = integrand(seg, j, derivs);
            let w = ti / k as f64 * eta;
            out.value += w * term.value;
            out.d_t[seg] += eta / k as f64 * term.value;
            for (d, g) in term.grads.iter().enumerate() {
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let beta = basis(n, d, t);
                for (row, b) in beta.iter().enumerate() {
                    let c = &mut out.d_c[n * seg + row];
                    for a in 0..3 {
                        c[a] += w * b * g[a];
                    }
                }
                out.d_t[seg] += w * frac * g.dot(&derivs[d + 1]);
            }
        }
    }
    out
}

/// Localization cost: integral of the sigmoid of the GFM along the trajectory.
pub fn localization_cost(traj: &MincoTrajectory, mem: &MetricEncodingMap, cfg: &OptConfig) -> CostGrad {
    integrate(traj, cfg.samples_per_segment, |_, _, p| {
        let m = mem.gfm_continuous_xyt(p[0].x, p[0].y, p[0].z, cfg.fov);
        let ds = sigmoid_derivative(m.value, &cfg.sigmoid);
        SampleTerm { value: sigmoid(m.value, &cfg.sigmoid), grads: [m.gradient * ds, Vec3::zeros(), Vec3::zeros()] }
    })
}

/// Gram-matrix integral of the squared `s`-th derivative plus `rho` times total duration.
pub fn energy_cost(traj: &MincoTrajectory, cfg: &OptConfig) -> CostGrad {
    let s = traj.s();
    let n = 2 * s;
    let mut out = CostGrad::zeros(traj);
    let falling = |a: usize| -> f64 { (0..s).map(|m| (a - m) as f64).product() };
    for seg in 0..traj.segments() {
        let t = traj.durations()[seg];
        let c = traj.segment_coefficients(seg);
        for a in s..n {
            for b in s..n {
                let p = (a + b - 2 * s + 1) as i32;
                let g = falling(a) * falling(b) * t.powi(p) / p as f64;
                for d in 0..3 {
                    out.value += c[a][d] * c[b][d] * g;
                    out.d_c[n * seg + a][d] += 2.0 * c[b][d] * g;
                }
            }
        }
        out.d_t[seg] = traj.eval_segment(seg, t, s).norm_squared() + cfg.rho;
        out.value += cfg.rho * t;
    }
    out
}

/// Worst constraint violations over the quadrature samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Violations {
    pub clearance_deficit: f64,
    pub velocity_excess: f64,
    pub acceleration_excess: f64,
    pub yaw_rate_excess: f64,
    pub yaw_accel_excess: f64,
}

fn hinge_sq(v: Vec3, limit: f64, mask: Vec3) -> (f64, Vec3) {
    let m = v.component_mul(&mask);
    let excess = m.norm_squared() - limit * limit;
    if excess > 0.0 {
        (excess, m * 2.0)
    } else {
        (0.0, Vec3::zeros())
    }
}

/// Penalty cost for clearance, speed, acceleration and yaw-rate limits.
pub fn penalty_cost(traj: &MincoTrajectory, field: &DistanceField, cfg: &OptConfig) -> (CostGrad, Violations) {
    let xy = Vec3::new(1.0, 1.0, 0.0);
    let yaw = Vec3::new(0.0, 0.0, 1.0);
    let s = traj.s() as i32;
    let mut worst = Violations::default();
    let cost = integrate(traj, cfg.samples_per_segment, |_, _, p| {
        let (e, grad_e) = field.sample(Point2::new(p[0].x, p[0].y));
        let deficit = cfg.safety_distance - e;
        let mut value = 0.0;
        let mut g0 = Vec3::zeros();
        if deficit > 0.0 {
            value += deficit.powi(s);
            let scale = -(s as f64) * deficit.powi(s - 1);
            g0 = Vec3::new(grad_e.x, grad_e.y, 0.0) * scale;
        }
        let (gv, dv) = hinge_sq(p[1], cfg.v_max, xy);
        let (gw, dw) = hinge_sq(p[1], cfg.omega_max, yaw);
        let (ga, da) = hinge_sq(p[2], cfg.a_max, xy);
        let (gal, dal) = hinge_sq(p[2], cfg.alpha_max, yaw);
        value += gv + gw + ga + gal;
        worst.clearance_deficit = worst.clearance_deficit.max(deficit);
        worst.velocity_excess = worst.velocity_excess.max(p[1].component_mul(&xy).norm() - cfg.v_max);
        worst.acceleration_excess = worst.acceleration_excess.max(p[2].component_mul(&xy).norm() - cfg.a_max);
        worst.yaw_rate_excess = worst.yaw_rate_excess.max(p[1].z.abs() - cfg.omega_max);
        worst.yaw_accel_excess = worst.yaw_accel_excess.max(p[2].z.abs() - cfg.alpha_max);
        SampleTerm { value, grads: [g0, dv + dw, da + dal] }
    });
    (cost, worst)
}

/// Cost breakdown at one accepted iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub iteration: usize,
    pub total: f64,
    pub j_l: f64,
    pub j_e: f64,
    pub j_g: f64,
    pub grad_norm: f64,
    pub duration: f64,
    pub violations: Violations,
}

/// Writes a cost history as CSV.
pub fn write_history_csv(history: &[CostReport], mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "iteration,total,j_l,j_e,j_g,grad_norm,duration,clearance_deficit,velocity_excess,acceleration_excess,yaw_rate_excess,yaw_accel_excess"
    )?;
    for r in history {
        let v = &r.violations;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.total,
            r.j_l,
            r.j_e,
            r.j_g,
            r.grad_norm,
            r.duration,
            v.clearance_deficit,
            v.velocity_excess,
            v.acceleration_excess,
            v.yaw_rate_excess,
            v.yaw_accel_excess
        )?;
    }
    Ok(())
}

/// The full objective over the decision vector `[Q (row-major), tau]`.
pub struct Problem<'a> {
    pub boundary: Boundary,
    pub s: usize,
    pub segments: usize,
    pub field: &'a DistanceField,
    pub mem: &'a MetricEncodingMap,
    pub cfg: &'a OptConfig,
}

/// Objective value, gradient and the parts that produced them.
pub struct Evaluation {
    pub total: f64,
    pub gradient: DVector<f64>,
    pub j_l: f64,
    pub j_e: f64,
    pub j_g: f64,
    pub violations: Violations,
}

impl<'a> Problem<'a> {
    pub fn encode(traj: &MincoTrajectory) -> DVector<f64> {
        let q = traj.waypoints();
        let mut x = Vec::with_capacity(3 * q.len() + traj.segments());
        for w in q {
            x.extend_from_slice(w.as_slice());
        }
        for &t in traj.durations() {
            x.push(time_forward(t).expect("durations are positive"));
        }
        DVector::from_vec(x)
    }

    pub fn decode(&self, x: &DVector<f64>) -> Result<MincoTrajectory, MincoError> {
        let nq = self.segments - 1;
        let q: Vec<Vec3> = (0..nq).map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect();
        let t: Vec<f64> = (0..self.segments).map(|i| time_backward(x[3 * nq + i])).collect();
        MincoTrajectory::construct(&q, &t, self.boundary.clone(), self.s)
    }

    pub fn evaluate_trajectory(&self, traj: &MincoTrajectory, x: &DVector<f64>) -> Evaluation {
        let cfg = self.cfg;
        let mut total = CostGrad::zeros(traj);
        let j_l = if cfg.lambda_l > 0.0 {
            let l = localization_cost(traj, self.mem, cfg);
            total.add_scaled(&l, cfg.lambda_l);
            l.value
        } else {
            0.0
        };
        let e = energy_cost(traj, cfg);
        total.add_scaled(&e, cfg.lambda_e);
        let (g, violations) = penalty_cost(traj, self.field, cfg);
        total.add_scaled(&g, cfg.lambda_g);
        let (gq, gt) = traj.propagate_gradient(&total.d_c, &total.d_t);
        let nq = self.segments - 1;
        let mut grad = DVector::zeros(x.len());
        for (i, v) in gq.iter().enumerate() {
            grad.fixed_rows_mut::<3>(3 * i).copy_from(v);
        }
        for (i, v) in gt.iter().enumerate() {
            grad[3 * nq + i] = v * time_backward_derivative(x[3 * nq + i]);
        }
        Evaluation { total: total.value, gradient: grad, j_l, j_e: e.value, j_g: g.value, violations }
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Option<Evaluation> {
        let traj = self.decode(x).ok()?;
        Some(self.evaluate_trajectory(&traj, x))
    }
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub trajectory: MincoTrajectory,
    pub history: Vec<CostReport>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl OptResult {
    pub fn final_report(&self) -> &CostReport {
        self.history.last().expect("history holds at least the initial point")
    }
}

/// Optimizes waypoints and durations starting from `initial`.
pub fn optimize(
    initial: &MincoTrajectory,
    field: &DistanceField,
    mem: &MetricEncodingMap,
    cfg: &OptConfig,
) -> OptResult {
    let problem =
        Problem { boundary: initial.boundary().clone(), s: initial.s(), segments: initial.segments(), field, mem, cfg };
    let x0 = Problem::encode(initial);
    let mut history = Vec::new();
    let result = lbfgs::minimize(
        x0,
        &cfg.lbfgs,
        |x| match problem.evaluate(x) {
            Some(e) => (e.total, e.gradient),
            None => (f64::INFINITY, DVector::zeros(x.len())),
        },
        |iteration, x, _| {
            let traj = problem.decode(x).expect("accepted iterates are finite");
            let e = problem.evaluate_trajectory(&traj, x);
            history.push(CostReport {
                iteration,
                total: e.total,
                j_l: e.j_l,
                j_e: e.j_e,
                j_g: e.j_g,
                grad_norm: e.gradient.norm(),
                duration: traj.total_duration(),
                violations: e.violations,
            });
        },
    );
    if result.termination == Termination::LineSearchFailed {
        log::warn!("line search failed after {} iterations; returning best point", result.iterations);
    }
    let trajectory = problem.decode(&result.x).expect("accepted iterates are finite");
    OptResult { trajectory, history, termination: result.termination, evaluations: result.evaluations }
}

/// Duration of a rest-to-rest trapezoidal profile covering `dist`.
fn trapezoid_time(dist: f64, cruise: f64, accel: f64) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    if dist >= cruise * cruise / accel {
        dist / cruise + cruise / accel
    } else {
        2.0 * (dist / accel).sqrt()
    }
}

/// Initial segment durations between key poses: trapezoidal profiles at half
/// the speed and yaw-rate limits, whichever is slower, and never below `min_time`.
pub fn initial_durations(keyposes: &[Vec3], cfg: &OptConfig, min_time: f64) -> Vec<f64> {
    keyposes
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let lin = trapezoid_time(d.xy().norm(), 0.5 * cfg.v_max, 0.5 * cfg.a_max);
            let ang = trapezoid_time(d.z.abs(), 0.5 * cfg.omega_max, 0.5 * cfg.alpha_max);
            lin.max(ang).max(min_time)
        })
        .collect()
}

/// Rest-to-rest trajectory through the key poses with initial durations.
pub fn initial_trajectory(keyposes: &[Vec3], cfg: &OptConfig) -> Result<MincoTrajectory, MincoError> {
    if keyposes.len() < 2 {
        return Err(MincoError::Shape("need at least two key poses".into()));
    }
    let t = initial_durations(keyposes, cfg, 0.1);
    let boundary = Boundary::rest(keyposes[0], *keyposes.last().expect("checked"), 3);
    MincoTrajectory::construct(&keyposes[1..keyposes.len() - 1], &t, boundary, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::{MemMeta, BINS};
    use crate::scan::RankConfig;
    use crate::world::OccupancyGrid;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn room(n: usize) -> OccupancyGrid {
        OccupancyGrid::from_fn(n, n, 0.1, Point2::zeros(), |x, y| x == 0 || y == 0 || x == n - 1 || y == n - 1).unwrap()
    }

    fn mem_from(grid: &OccupancyGrid, code: impl Fn(usize, usize) -> u64) -> MetricEncodingMap {
        let meta = MemMeta::for_grid(grid, &RankConfig::for_grid(0.1, BINS, 8.0));
        let codes = (0..grid.width() * grid.height())
            .map(|i| {
                let (x, y) = (i % grid.width(), i / grid.width());
                if grid.is_occupied(x, y) {
                    u64::MAX
                } else {
                    code(x, y)
                }
            })
            .collect();
        MetricEncodingMap::from_codes(meta, codes).unwrap()
    }

    fn traj(q: &[[f64; 3]], t: &[f64], start: [f64; 3], goal: [f64; 3]) -> MincoTrajectory {
        let q: Vec<Vec3> = q.iter().map(|w| Vec3::from(*w)).collect();
        MincoTrajectory::construct(&q, t, Boundary::rest(start.into(), goal.into(), 3), 3).unwrap()
    }

    #[test]
    fn time_map_examples() {
        assert_abs_diff_eq!(time_forward(1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(time_forward(2.5).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(time_backward(-1.0), 0.4, epsilon = 1e-15);
        assert!(time_forward(0.0).is_err());
        let mut t = 1e-3;
        while t <= 1e3 {
            assert!((time_backward(time_forward(t).unwrap()) - t).abs() <= 1e-12 * t.max(1.0));
            t *= 1.37;
        }
        for tau in [-2.0, -0.3, 0.4, 3.0] {
            let h = 1e-6;
            let fd = (time_backward(tau + h) - time_backward(tau - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, time_backward_derivative(tau), epsilon = 1e-8);
        }
    }

    #[test]
    fn uniform_field_localization_cost() {
        let grid = room(60);
        let mem = mem_from(&grid, |_, _| u64::MAX);
        let cfg = OptConfig::default();
        let tr = traj(&[[2.0, 2.5, 0.3], [3.5, 3.0, 1.0]], &[1.2, 0.8, 1.5], [1.5, 1.5, 0.0], [4.0, 4.0, 0.5]);
        let l = localization_cost(&tr, &mem, &cfg);
        let m = mem.gfm_continuous_xyt(2.0, 2.0, 0.0, cfg.fov).value;
        assert_abs_diff_eq!(l.value, sigmoid(m, &cfg.sigmoid) * 3.5, epsilon = 1e-12);
        let (gq, _) = tr.propagate_gradient(&l.d_c, &l.d_t);
        for g in gq {
            assert_abs_diff_eq!(g.x, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g.y, 0.0, epsilon = 1e-12);
        }
        let doubled = traj(&[[2.0, 2.5, 0.3], [3.5, 3.0, 1.0]], &[2.4, 1.6, 3.0], [1.5, 1.5, 0.0], [4.0, 4.0, 0.5]);
        assert_abs_diff_eq!(localization_cost(&doubled, &mem, &cfg).value, 2.0 * l.value, epsilon = 1e-12);
    }

    #[test]
    fn energy_examples() {
        let cfg = OptConfig::default();
        let p = [1.0, 1.0, 0.2];
        let still = traj(&[], &[2.0], p, p);
        assert_abs_diff_eq!(energy_cost(&still, &cfg).value, cfg.rho * 2.0, epsilon = 1e-12);
        // x = 10t^3 - 15t^4 + 6t^5, x''' = 60 - 360t + 360t^2
        let mj = traj(&[], &[1.0], [0.0; 3], [1.0, 0.0, 0.0]);
        let steps = 2_000;
        let h = 1.0 / steps as f64;
        let jerk2 = |t: f64| (60.0 - 360.0 * t + 360.0 * t * t).powi(2);
        let simpson: f64 = (0..steps)
            .map(|i| {
                let a = i as f64 * h;
                h / 6.0 * (jerk2(a) + 4.0 * jerk2(a + 0.5 * h) + jerk2(a + h))
            })
            .sum();
        assert_abs_diff_eq!(energy_cost(&mj, &cfg).value - cfg.rho, simpson, epsilon = 1e-8);
        assert_abs_diff_eq!(energy_cost(&mj, &cfg).value - cfg.rho, 720.0, epsilon = 1e-9);
    }

    #[test]
    fn feasible_trajectory_has_no_penalty() {
        let grid = room(60);
        let field = DistanceField::build(&grid).unwrap();
        let cfg = OptConfig::default();
        let tr = traj(&[[3.0, 3.0, 0.5]], &[3.0, 3.0], [2.0, 2.0, 0.0], [4.0, 3.5, 1.0]);
        let (g, v) = penalty_cost(&tr, &field, &cfg);
        assert_eq!(g.value, 0.0);
        assert!(g.d_c.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(v, Violations::default());
    }

    #[test]
    fn stationary_clearance_violation() {
        let grid = room(60);
        let field = DistanceField::build(&grid).unwrap();
        let cfg = OptConfig::default();
        // clearance at x = 0.25 is 0.15 = d/2
        let p = [0.25, 3.0, 0.0];
        assert_abs_diff_eq!(field.sample(Point2::new(0.25, 3.0)).0, 0.15, epsilon = 1e-12);
        let tr = traj(&[], &[2.0], p, p);
        let (g, v) = penalty_cost(&tr, &field, &cfg);
        assert_abs_diff_eq!(g.value, 2.0 * 0.15f64.powi(3), epsilon = 1e-12);
        assert_abs_diff_eq!(v.clearance_deficit, 0.15, epsilon = 1e-12);
    }

    fn random_mem(grid: &OccupancyGrid, seed: u64) -> MetricEncodingMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<u64> =
            (0..grid.width() * grid.height()).map(|_| rng.random::<u64>() & rng.random::<u64>()).collect();
        mem_from(grid, |x, y| codes[y * grid.width() + x])
    }

    fn fd_check(problem: &Problem, x: &DVector<f64>, tol: f64) {
        let e = problem.evaluate(x).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (problem.evaluate(&xp).unwrap().total - problem.evaluate(&xm).unwrap().total) / (2.0 * h);
            let g = e.gradient[i];
            assert!((fd - g).abs() <= tol * fd.abs().max(g.abs()).max(1.0), "component {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn full_gradient_matches_finite_difference() {
        let grid = room(60);
        let field = DistanceField::build(&grid).unwrap();
        // smooth GFM field so finite differences stay off interpolation creases
        let mem = mem_from(&grid, |x, _| (1u64 << (x / 6).min(63)) - 1);
        let cfg = OptConfig {
            v_max: 0.6,
            a_max: 0.5,
            omega_max: 0.4,
            alpha_max: 0.3,
            safety_distance: 0.6,
            ..Default::default()
        };
        let tr = traj(&[[1.0, 2.0, 0.4], [2.5, 1.4, 1.1]], &[1.1, 1.7, 0.9], [0.7, 0.8, 0.0], [4.0, 2.5, 0.8]);
        let problem =
            Problem { boundary: tr.boundary().clone(), s: 3, segments: 3, field: &field, mem: &mem, cfg: &cfg };
        let x = Problem::encode(&tr);
        let e = problem.evaluate(&x).unwrap();
        assert!(e.j_g > 0.0, "test trajectory should violate limits");
        fd_check(&problem, &x, 1e-4);
    }

    #[test]
    fn localization_gradient_on_random_mem() {
        let grid = room(60);
        let field = DistanceField::build(&grid).unwrap();
        let mem = random_mem(&grid, 4);
        let cfg = OptConfig { lambda_e: 0.0, lambda_g: 0.0, rho: 0.0, ..Default::default() };
        let tr = traj(&[[2.03, 2.47, 0.41]], &[1.3, 0.9], [1.51, 1.62, 0.07], [3.33, 3.71, 0.93]);
        let problem =
            Problem { boundary: tr.boundary().clone(), s: 3, segments: 2, field: &field, mem: &mem, cfg: &cfg };
        fd_check(&problem, &Problem::encode(&tr), 1e-4);
    }

    #[test]
    fn optimization_decreases_cost_monotonically() {
        let grid = room(60);
        let field = DistanceField::build(&grid).unwrap();
        let mem = mem_from(&grid, |x, _| (1u64 << (x / 4).min(63)) - 1);
        let cfg = OptConfig::default();
        let keys = [Vec3::new(1.0, 1.0, 0.0), Vec3::new(3.0, 2.0, 0.5), Vec3::new(5.0, 4.5, 1.0)];
        let init = initial_trajectory(&keys, &cfg).unwrap();
        let r = optimize(&init, &field, &mem, &cfg);
        assert!(r.history.windows(2).all(|w| w[1].total <= w[0].total + 1e-12));
        assert!(r.final_report().total < r.history[0].total);
        for h in &r.history {
            let sum = cfg.lambda_l * h.j_l + cfg.lambda_e * h.j_e + cfg.lambda_g * h.j_g;
            assert!((sum - h.total).abs() <= 1e-12 * h.total.abs().max(1.0));
        }
        let mut csv = Vec::new();
        write_history_csv(&r.history, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), r.history.len() + 1);
    }

    #[test]
    fn initial_durations_cover_rotation() {
        let cfg = OptConfig::default();
        let keys = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.5), Vec3::new(4.0, 0.0, 1.5)];
        let t = initial_durations(&keys, &cfg, 0.1);
        assert!(t[0] > 1.0);
        // 4 m at 1 m/s cruise with 1.5 m/s^2: 4 + 1/1.5
        assert_abs_diff_eq!(t[1], 4.0 + 1.0 / 1.5, epsilon = 1e-12);
    }
}
