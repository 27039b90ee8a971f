//! Simulated 2D LiDAR scans, hit-point Jacobians and per-ray rank classes.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix2x3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::WorldError;
use crate::world::{OccupancyGrid, Point2, RayHit};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Robot pose in SE(2) with yaw kept in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSE2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PoseSE2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    /// Transforms a body-frame point into the world frame.
    pub fn transform(&self, body: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.x + c * body.x - s * body.y, self.y + s * body.x + c * body.y)
    }

    /// Pose displaced by `(dx, dy, dtheta)`; yaw is re-normalized.
    pub fn offset(&self, dx: f64, dy: f64, dtheta: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.theta + dtheta)
    }
}

#[derive(Clone, Debug)]
pub struct Scan {
    pub pose: PoseSE2,
    /// Body-frame beam angles.
    pub ray_angles: Vec<f64>,
    pub hits: Vec<RayHit>,
}

impl Scan {
    /// Number of returns (misses filtered out).
    pub fn returns(&self) -> usize {
        self.hits.iter().filter(|h| h.hit).count()
    }

    /// Returned points expressed in the body frame of the scan pose.
    pub fn body_points(&self) -> Vec<Point2> {
        self.ray_angles
            .iter()
            .zip(&self.hits)
            .filter(|(_, h)| h.hit)
            .map(|(&a, h)| Point2::new(a.cos(), a.sin()) * h.range)
            .collect()
    }
}

/// Body-frame beam angles: `n_rays` evenly spaced over `[-fov/2, fov/2)`.
pub fn beam_angles(fov: f64, n_rays: usize) -> Vec<f64> {
    (0..n_rays).map(|k| -0.5 * fov + fov * k as f64 / n_rays as f64).collect()
}

pub fn simulate_scan(
    grid: &OccupancyGrid,
    pose: PoseSE2,
    fov: f64,
    n_rays: usize,
    max_range: f64,
) -> Result<Scan, WorldError> {
    if n_rays == 0 || !(fov > 0.0 && fov <= TAU) {
        return Err(WorldError::Config(format!("invalid scan geometry: fov {fov}, {n_rays} rays")));
    }
    let ray_angles = beam_angles(fov, n_rays);
    let hits = ray_angles
        .iter()
        .map(|&a| grid.raycast(pose.position(), pose.theta + a, max_range))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scan { pose, ray_angles, hits })
}

/// Parameters of the per-ray rank test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub max_range: f64,
    /// Rank 2 iff `sigma2 / sigma1 > tau_rank`.
    pub tau_rank: f64,
    pub fd_step_xy: f64,
    pub fd_step_theta: f64,
}

impl RankConfig {
    /// Default steps: a quarter cell in translation, a quarter angular bin in yaw.
    pub fn for_grid(resolution: f64, bins: usize, max_range: f64) -> Self {
        Self { max_range, tau_rank: 0.05, fd_step_xy: 0.25 * resolution, fd_step_theta: 0.25 * TAU / bins as f64 }
    }
}

/// Finite-difference Jacobian of one ray's hit point and the nominal range.
#[derive(Clone, Copy, Debug)]
pub struct HitJacobian {
    pub jacobian: Matrix2x3<f64>,
    pub range: f64,
}

/// Central differences of the ray-cast hit point with respect to `(x, y, theta)`,
/// holding the beam's body angle fixed.
///
/// Returns `None` when the nominal ray or any perturbed ray misses, starts
/// inside an obstacle, or strikes a different obstacle component.
pub fn hit_jacobian_fd(
    grid: &OccupancyGrid,
    pose: PoseSE2,
    body_angle: f64,
    step_xy: f64,
    step_theta: f64,
    max_range: f64,
) -> Option<HitJacobian> {
    let cast = |p: PoseSE2| grid.raycast(p.position(), p.theta + body_angle, max_range).ok().filter(|h| h.hit);
    let nominal = cast(pose)?;
    let component = |h: &RayHit| h.surface_cell.map(|(ix, iy)| grid.component(ix, iy));
    let base = component(&nominal);
    let steps = [(step_xy, 0.0, 0.0), (0.0, step_xy, 0.0), (0.0, 0.0, step_theta)];
    let mut jacobian = Matrix2x3::zeros();
    for (col, &(dx, dy, dt)) in steps.iter().enumerate() {
        // yaw is perturbed without wrapping so the difference stays local
        let plus = PoseSE2 { x: pose.x + dx, y: pose.y + dy, theta: pose.theta + dt };
        let minus = PoseSE2 { x: pose.x - dx, y: pose.y - dy, theta: pose.theta - dt };
        let hp = cast(plus)?;
        let hm = cast(minus)?;
        if component(&hp) != base || component(&hm) != base {
            return None;
        }
        let h = dx + dy + dt;
        let d = (hp.point - hm.point) / (2.0 * h);
        jacobian[(0, col)] = d.x;
        jacobian[(1, col)] = d.y;
    }
    Some(HitJacobian { jacobian, range: nominal.range })
}

#[derive(Debug, Error, PartialEq)]
pub enum JacobianError {
    #[error("ray is parallel to the surface (A + Bk = {0:e})")]
    GrazingIncidence(f64),
}

/// Surface line `A(x - a) + B(y - b) = 0` through the hit point `(a, b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceLine {
    pub a_coef: f64,
    pub b_coef: f64,
    pub a: f64,
    pub b: f64,
}

/// Closed-form hit-point Jacobian for a ray of slope `k` from `pose` striking a
/// locally straight surface.
pub fn hit_jacobian_analytic(line: SurfaceLine, pose: PoseSE2, k: f64) -> Result<Matrix2x3<f64>, JacobianError> {
    let SurfaceLine { a_coef: big_a, b_coef: big_b, a, .. } = line;
    let denom = big_a + big_b * k;
    let scale = big_a.abs() + (big_b * k).abs();
    if denom.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(JacobianError::GrazingIncidence(denom));
    }
    let x0 = pose.x;
    let kk = 1.0 + k * k;
    Ok(Matrix2x3::new(big_b * k, -big_b, kk * (x0 - a) * big_b, -big_a * k, big_a, kk * (a - x0) * big_a) / denom)
}

/// Singular values `(sigma1, sigma2)` of a 2x3 matrix, descending.
pub fn singular_values(j: &Matrix2x3<f64>) -> (f64, f64) {
    let g: Matrix2<f64> = j * j.transpose();
    let tr = g[(0, 0)] + g[(1, 1)];
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let l1 = (0.5 * tr + disc).max(0.0);
    let l2 = (0.5 * tr - disc).max(0.0);
    (l1.sqrt(), l2.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RayClass {
    Rank1,
    Rank2,
    Miss,
}

impl RayClass {
    /// Degenerate rays (rank 1 or no return) set their bit in the MEM.
    pub fn is_degenerate(self) -> bool {
        !matches!(self, RayClass::Rank2)
    }
}

/// Ratio `sigma2 / sigma1` of the range-normalized FD Jacobian, `None` on a miss.
pub fn rank_ratio(grid: &OccupancyGrid, pose: PoseSE2, body_angle: f64, cfg: &RankConfig) -> Option<f64> {
    let hj = hit_jacobian_fd(grid, pose, body_angle, cfg.fd_step_xy, cfg.fd_step_theta, cfg.max_range)?;
    let mut j = hj.jacobian;
    let r = hj.range.max(f64::EPSILON);
    j[(0, 2)] /= r;
    j[(1, 2)] /= r;
    let (s1, s2) = singular_values(&j);
    Some(s2 / s1.max(f64::EPSILON))
}

pub fn classify_ray(grid: &OccupancyGrid, pose: PoseSE2, body_angle: f64, cfg: &RankConfig) -> RayClass {
    match rank_ratio(grid, pose, body_angle, cfg) {
        None => RayClass::Miss,
        Some(ratio) if ratio > cfg.tau_rank => RayClass::Rank2,
        Some(_) => RayClass::Rank1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn room(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::from_fn(w, h, 1.0, Point2::zeros(), |ix, iy| ix == 0 || iy == 0 || ix == w - 1 || iy == h - 1)
            .unwrap()
    }

    #[test]
    fn normalize_is_idempotent() {
        for &a in &[-7.0, -PI, -1.0, 0.0, PI, 4.0, 100.0] {
            let n = normalize_angle(a);
            assert!(n > -PI && n <= PI);
            assert_eq!(normalize_angle(n), n);
        }
        assert_eq!(normalize_angle(-PI), PI);
    }

    #[test]
    fn beam_spacing() {
        let a = beam_angles(PI / 2.0, 4);
        let expect = [-PI / 4.0, -PI / 8.0, 0.0, PI / 8.0];
        for (x, e) in a.iter().zip(expect) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn empty_map_scan_misses() {
        let g = OccupancyGrid::from_fn(10, 10, 1.0, Point2::zeros(), |_, _| false).unwrap();
        let s = simulate_scan(&g, PoseSE2::new(5.0, 5.0, 0.3), TAU, 32, 20.0).unwrap();
        assert_eq!(s.returns(), 0);
        assert!(s.hits.iter().all(|h| !h.hit));
        for &a in &s.ray_angles {
            assert_eq!(classify_ray(&g, s.pose, a, &RankConfig::for_grid(1.0, 64, 20.0)), RayClass::Miss);
        }
    }

    #[test]
    fn square_room_scan_symmetry() {
        let g = room(11, 11);
        let c = Point2::new(5.5, 5.5);
        let s0 = simulate_scan(&g, PoseSE2::new(c.x, c.y, 0.1), TAU, 64, 50.0).unwrap();
        let s1 = simulate_scan(&g, PoseSE2::new(c.x, c.y, 0.1 + PI / 2.0), TAU, 64, 50.0).unwrap();
        assert_eq!(s0.returns(), 64);
        for (a, b) in s0.hits.iter().zip(&s1.hits) {
            assert_abs_diff_eq!(a.range, b.range, epsilon = 1e-9);
        }
    }

    #[test]
    fn scan_from_obstacle_is_error() {
        let g = room(5, 5);
        assert!(simulate_scan(&g, PoseSE2::new(0.5, 0.5, 0.0), TAU, 8, 10.0).is_err());
    }

    #[test]
    fn analytic_vertical_wall() {
        let j = hit_jacobian_analytic(
            SurfaceLine { a_coef: 1.0, b_coef: 0.0, a: 5.0, b: 0.5 },
            PoseSE2::new(2.0, 0.5, 0.0),
            0.0,
        )
        .unwrap();
        let expect = Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 1.0, 3.0);
        assert_abs_diff_eq!(j, expect, epsilon = 1e-15);
    }

    #[test]
    fn analytic_grazing_is_error() {
        let line = SurfaceLine { a_coef: 1.0, b_coef: 1.0, a: 0.0, b: 0.0 };
        assert!(matches!(
            hit_jacobian_analytic(line, PoseSE2::new(-1.0, 1.0, 0.0), -1.0),
            Err(JacobianError::GrazingIncidence(_))
        ));
    }

    #[test]
    fn fd_matches_analytic_on_wall() {
        let g = OccupancyGrid::from_fn(20, 10, 1.0, Point2::zeros(), |ix, _| ix >= 15).unwrap();
        let pose = PoseSE2::new(4.3, 5.2, 0.0);
        let hj = hit_jacobian_fd(&g, pose, 0.0, 0.25, 0.01, 50.0).unwrap();
        let exact = Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 1.0, 15.0 - 4.3);
        assert!((hj.jacobian - exact).abs().max() < 1e-3, "{}", hj.jacobian);
    }

    #[test]
    fn corridor_wall_ray_is_rank1() {
        let g = OccupancyGrid::from_fn(60, 12, 0.1, Point2::zeros(), |_, iy| iy < 2 || iy >= 10).unwrap();
        let cfg = RankConfig::for_grid(0.1, 64, 8.0);
        let pose = PoseSE2::new(3.03, 0.61, 0.0);
        assert_eq!(classify_ray(&g, pose, 1.1, &cfg), RayClass::Rank1);
        assert_eq!(classify_ray(&g, pose, -2.0, &cfg), RayClass::Rank1);
    }

    #[test]
    fn ray_near_inside_corner_is_rank2() {
        // room x<5, y<5 with walls beyond; aim just beside the corner (5, 5)
        let g = OccupancyGrid::from_fn(12, 12, 1.0, Point2::zeros(), |ix, iy| ix >= 5 || iy >= 5).unwrap();
        let pose = PoseSE2::new(1.5, 1.7, 0.0);
        let to_corner = Point2::new(5.0, 5.0) - pose.position();
        let r = to_corner.norm();
        let cfg = RankConfig { max_range: 20.0, tau_rank: 0.05, fd_step_xy: 0.05, fd_step_theta: 0.05 };
        // corner just outside the translation stencil, well inside the yaw stencil
        let aim = to_corner.y.atan2(to_corner.x) + 1.5 * cfg.fd_step_xy / r;
        let ratio = rank_ratio(&g, pose, aim, &cfg).unwrap();
        assert!(ratio > 0.2, "ratio {ratio} at range {r}");
        assert_eq!(classify_ray(&g, pose, aim, &cfg), RayClass::Rank2);
    }

    #[test]
    fn beyond_range_is_miss() {
        let g = room(20, 20);
        let cfg = RankConfig::for_grid(1.0, 64, 2.0);
        assert_eq!(classify_ray(&g, PoseSE2::new(10.0, 10.0, 0.0), 0.0, &cfg), RayClass::Miss);
    }
}
