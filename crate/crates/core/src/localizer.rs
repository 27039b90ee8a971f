//! Scan-to-map registration against the distance field and the evaluation
//! harness that measures localization error along a trajectory.
//!
//! The registration cost is `f(p) = 0.5 * sum E(T(p) z_i)^2` over the body
//! frame points `z_i`. Its Gauss-Newton Hessian `H1` is a sum of outer
//! products, so its smallest eigenvalue says how well the pose is constrained.

use std::io::Write;

use nalgebra::{Matrix2x3, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::minco::MincoTrajectory;
use crate::scan::{normalize_angle, simulate_scan, PoseSE2};
use crate::world::{DistanceField, OccupancyGrid, Point2};

/// A scan to register: body-frame points and the field to register against.
pub struct Registration<'a> {
    pub field: &'a DistanceField,
    pub points: Vec<Point2>,
}

/// Jacobian of `T(p) z` with respect to `(x, y, theta)` for a fixed `z`.
pub fn point_jacobian(theta: f64, z: Point2) -> Matrix2x3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2x3::new(1.0, 0.0, -s * z.x - c * z.y, 0.0, 1.0, c * z.x - s * z.y)
}

impl Registration<'_> {
    /// Cost and gradient at `pose` (yaw is used as given, not wrapped).
    pub fn objective_and_gradient(&self, pose: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let p = PoseSE2 { x: pose.x, y: pose.y, theta: pose.z };
        let mut f = 0.0;
        let mut g = Vector3::zeros();
        for &z in &self.points {
            let (e, grad) = self.field.sample(p.transform(z));
            f += 0.5 * e * e;
            g += point_jacobian(pose.z, z).transpose() * grad * e;
        }
        (f, g)
    }

    /// Gauss-Newton approximation: sum of `(J^T grad E)(J^T grad E)^T`.
    pub fn h1(&self, pose: &Vector3<f64>) -> Matrix3<f64> {
        let p = PoseSE2 { x: pose.x, y: pose.y, theta: pose.z };
        let vectors: Vec<Vector3<f64>> = self
            .points
            .iter()
            .map(|&z| point_jacobian(pose.z, z).transpose() * self.field.sample(p.transform(z)).1)
            .collect();
        outer_product_sum(&vectors)
    }

    /// Full Hessian by central differences of the analytic gradient.
    pub fn hessian_fd(&self, pose: &Vector3<f64>, step: f64) -> Matrix3<f64> {
        let mut h = Matrix3::zeros();
        for k in 0..3 {
            let mut dp = Vector3::zeros();
            dp[k] = step;
            let gp = self.objective_and_gradient(&(pose + dp)).1;
            let gm = self.objective_and_gradient(&(pose - dp)).1;
            h.set_column(k, &((gp - gm) / (2.0 * step)));
        }
        (h + h.transpose()) * 0.5
    }

    pub fn hessian_analysis(&self, pose: &Vector3<f64>) -> HessianSplit {
        let h1 = self.h1(pose);
        let total = self.hessian_fd(pose, 1e-5);
        let eig = SymmetricEigen::new(h1);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        HessianSplit {
            h1,
            h_total_fd: total,
            residual: total - h1,
            eigenvalues: Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]),
            eigenvectors: Matrix3::from_fn(|r, c| eig.eigenvectors[(r, order[c])]),
        }
    }
}

/// `H1`, the finite-difference full Hessian and their difference.
#[derive(Clone, Debug)]
pub struct HessianSplit {
    pub h1: Matrix3<f64>,
    pub h_total_fd: Matrix3<f64>,
    pub residual: Matrix3<f64>,
    /// Eigenvalues of `H1`, ascending.
    pub eigenvalues: Vector3<f64>,
    /// Matching unit eigenvectors as columns.
    pub eigenvectors: Matrix3<f64>,
}

impl HessianSplit {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[2]
    }

    /// Eigenvector of the smallest eigenvalue.
    pub fn null_direction(&self) -> Vector3<f64> {
        self.eigenvectors.column(0).into_owned()
    }
}

/// `sum a_i a_i^T`.
pub fn outer_product_sum(vectors: &[Vector3<f64>]) -> Matrix3<f64> {
    vectors.iter().fold(Matrix3::zeros(), |acc, a| acc + a * a.transpose())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussNewtonConfig {
    pub max_iterations: usize,
    /// Stop once the step norm drops below this.
    pub tolerance: f64,
    /// Damping as a fraction of `trace(H1) / 3`.
    pub damping: f64,
    /// Consecutive cost increases treated as divergence.
    pub divergence_window: usize,
}

impl Default for GaussNewtonConfig {
    fn default() -> Self {
        Self { max_iterations: 30, tolerance: 1e-4, damping: 1e-4, divergence_window: 5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussNewtonResult {
    pub pose: PoseSE2,
    pub converged: bool,
    pub iterations: usize,
    /// Cost before the first step and after every step.
    pub costs: Vec<f64>,
}

/// Damped Gauss-Newton registration starting from `initial`.
pub fn gauss_newton_localize(reg: &Registration, initial: PoseSE2, cfg: &GaussNewtonConfig) -> GaussNewtonResult {
    let mut p = initial.as_vector();
    let mut costs = vec![reg.objective_and_gradient(&p).0];
    let mut rising = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let (_, g) = reg.objective_and_gradient(&p);
        let h = reg.h1(&p);
        let mu = cfg.damping * (h.trace() / 3.0).max(1e-12);
        let Some(step) = (h + Matrix3::identity() * mu).cholesky().map(|c| c.solve(&g)) else {
            break;
        };
        p -= step;
        iterations += 1;
        let f = reg.objective_and_gradient(&p).0;
        rising = if f > *costs.last().expect("non-empty") { rising + 1 } else { 0 };
        costs.push(f);
        if rising >= cfg.divergence_window {
            break;
        }
        if step.norm() < cfg.tolerance {
            converged = true;
            break;
        }
    }
    GaussNewtonResult { pose: PoseSE2::new(p.x, p.y, p.z), converged, iterations, costs }
}

/// Sensor and noise model used when replaying a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Sampling interval along the trajectory (s).
    pub dt: f64,
    pub fov: f64,
    pub n_rays: usize,
    pub max_range: f64,
    /// Standard deviation of range noise (m).
    pub range_sigma: f64,
    /// Per-sample initial-guess drift (m, rad).
    pub drift_sigma_xy: f64,
    pub drift_sigma_theta: f64,
    pub gauss_newton: GaussNewtonConfig,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            fov: 90f64.to_radians(),
            n_rays: 90,
            max_range: 8.0,
            range_sigma: 0.01,
            drift_sigma_xy: 0.02,
            drift_sigma_theta: 0.01,
            gauss_newton: GaussNewtonConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub t: f64,
    pub truth: PoseSE2,
    pub estimate: PoseSE2,
    pub error: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<TrackSample>,
    pub mean_error: f64,
    pub max_error: f64,
    pub goal_deviation: f64,
    pub failures: usize,
}

impl EvalReport {
    fn from_samples(samples: Vec<TrackSample>, failures: usize) -> Self {
        let n = samples.len().max(1) as f64;
        let mean_error = samples.iter().map(|s| s.error).sum::<f64>() / n;
        let max_error = samples.iter().map(|s| s.error).fold(0.0, f64::max);
        let goal_deviation = samples.last().map_or(0.0, |s| s.error);
        Self { samples, mean_error, max_error, goal_deviation, failures }
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,x,y,theta,est_x,est_y,est_theta,error,converged")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.t,
                s.truth.x,
                s.truth.y,
                s.truth.theta,
                s.estimate.x,
                s.estimate.y,
                s.estimate.theta,
                s.error,
                s.converged
            )?;
        }
        Ok(())
    }
}

/// Replays `traj`, localizing a simulated scan at every `dt`.
///
/// Each initial guess carries the previous sample's error plus fresh drift,
/// so poses that cannot correct an error keep accumulating it.
pub fn track_trajectory(
    traj: &MincoTrajectory,
    grid: &OccupancyGrid,
    field: &DistanceField,
    cfg: &TrackConfig,
    seed: u64,
) -> EvalReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_noise = Normal::new(0.0, cfg.range_sigma.max(0.0)).expect("finite sigma");
    let drift_xy = Normal::new(0.0, cfg.drift_sigma_xy.max(0.0)).expect("finite sigma");
    let drift_theta = Normal::new(0.0, cfg.drift_sigma_theta.max(0.0)).expect("finite sigma");
    let total = traj.total_duration();
    let steps = (total / cfg.dt).ceil().max(1.0) as usize;
    let mut carried = Vector3::zeros();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut failures = 0;
    for k in 0..=steps {
        let t = (k as f64 * cfg.dt).min(total);
        let p = traj.evaluate(t, 0).0;
        let truth = PoseSE2::new(p.x, p.y, p.z);
        let drift = Vector3::new(rng.sample(drift_xy), rng.sample(drift_xy), rng.sample(drift_theta));
        let guess = truth.offset(carried.x + drift.x, carried.y + drift.y, carried.z + drift.z);
        let Ok(scan) = simulate_scan(grid, truth, cfg.fov, cfg.n_rays, cfg.max_range) else {
            failures += 1;
            continue;
        };
        let points: Vec<Point2> = scan
            .ray_angles
            .iter()
            .zip(&scan.hits)
            .filter(|(_, h)| h.hit)
            .map(|(&a, h)| Point2::new(a.cos(), a.sin()) * (h.range + rng.sample(range_noise)))
            .collect();
        let (estimate, converged) = if points.len() >= 3 {
            let reg = Registration { field, points };
            let r = gauss_newton_localize(&reg, guess, &cfg.gauss_newton);
            (r.pose, r.converged)
        } else {
            (guess, false)
        };
        if !converged {
            failures += 1;
        }
        carried =
            Vector3::new(estimate.x - truth.x, estimate.y - truth.y, normalize_angle(estimate.theta - truth.theta));
        let error = (estimate.position() - truth.position()).norm();
        samples.push(TrackSample { t, truth, estimate, error, converged });
    }
    EvalReport::from_samples(samples, failures)
}
