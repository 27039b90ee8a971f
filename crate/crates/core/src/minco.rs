//! Minimum-control-effort piecewise polynomials in `(x, y, yaw)`.
//!
//! A trajectory with `K` segments of degree `2s - 1` is fixed by its interior
//! waypoints `Q`, its segment durations `t` and the start/goal derivative
//! states. The coefficient map `C = M(Q, t)` is a banded linear solve, and
//! gradients of any cost `J(C, t)` are pulled back to `(Q, t)` with one
//! adjoint solve on the same factorization.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::banded::BandedSystem;
use crate::error::MincoError;

pub type Vec3 = Vector3<f64>;

/// Derivative states at both ends: entry `d` is the `d`-th derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub head: Vec<[f64; 3]>,
    pub tail: Vec<[f64; 3]>,
}

impl Boundary {
    /// Rest-to-rest boundary: all derivatives above position are zero.
    pub fn rest(start: Vec3, goal: Vec3, s: usize) -> Self {
        let mut head = vec![[0.0; 3]; s];
        let mut tail = vec![[0.0; 3]; s];
        head[0] = start.into();
        tail[0] = goal.into();
        Self { head, tail }
    }
}

/// `d`-th derivative of the natural basis `[1, t, ..., t^(n-1)]` at `t`.
pub fn basis(n: usize, d: usize, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, slot) in out.iter_mut().enumerate().skip(d) {
        let mut c = 1.0;
        for m in 0..d {
            c *= (k - m) as f64;
        }
        *slot = c * t.powi((k - d) as i32);
    }
    out
}

#[derive(Clone, Debug)]
pub struct MincoTrajectory {
    s: usize,
    boundary: Boundary,
    waypoints: Vec<Vec3>,
    durations: Vec<f64>,
    coeffs: Vec<[f64; 3]>,
    system: BandedSystem,
}

/// Plain-data form of a trajectory for JSON export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryExport {
    pub s: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Q")]
    pub q: Vec<[f64; 3]>,
    pub t: Vec<f64>,
    /// `K` blocks of `2s` rows of `(x, y, yaw)` coefficients, lowest power first.
    #[serde(rename = "C")]
    pub c: Vec<Vec<[f64; 3]>>,
    pub boundary: Boundary,
}

impl MincoTrajectory {
    /// Solves for the coefficients. Rows are ordered per joint as: derivative
    /// continuity `s..2s-1`, the waypoint, then continuity `0..s`, which keeps
    /// the system within a `(2s, 2s)` band.
    pub fn construct(waypoints: &[Vec3], durations: &[f64], boundary: Boundary, s: usize) -> Result<Self, MincoError> {
        let k = durations.len();
        if k == 0 || s == 0 {
            return Err(MincoError::Shape("need at least one segment and s >= 1".into()));
        }
        if waypoints.len() + 1 != k {
            return Err(MincoError::Shape(format!("{} waypoints for {k} segments", waypoints.len())));
        }
        if boundary.head.len() != s || boundary.tail.len() != s {
            return Err(MincoError::Shape(format!("boundary must carry {s} derivatives at each end")));
        }
        if let Some(&bad) = durations.iter().find(|&&t| !(t > 0.0) || !t.is_finite()) {
            return Err(MincoError::NonPositiveDuration(bad));
        }
        let n = 2 * s;
        let size = n * k;
        let mut a = BandedSystem::new(size, n, n);
        let mut b = vec![[0.0; 3]; size];
        for d in 0..s {
            for (col, v) in basis(n, d, 0.0).into_iter().enumerate() {
                if v != 0.0 {
                    a.set(d, col, v);
                }
            }
            b[d] = boundary.head[d];
        }
        for (i, &t) in durations.iter().enumerate().take(k - 1) {
            let row0 = n * i + s;
            let seg = n * i;
            let next = n * (i + 1);
            let mut row = row0;
            for d in s..n - 1 {
                for (col, v) in basis(n, d, t).into_iter().enumerate() {
                    if v != 0.0 {
                        a.set(row, seg + col, v);
                    }
                }
                for (col, v) in basis(n, d, 0.0).into_iter().enumerate() {
                    if v != 0.0 {
                        a.set(row, next + col, -v);
                    }
                }
                row += 1;
            }
            for (col, v) in basis(n, 0, t).into_iter().enumerate() {
                a.set(row, seg + col, v);
            }
            b[row] = waypoints[i].into();
            row += 1;
            for d in 0..s {
                for (col, v) in basis(n, d, t).into_iter().enumerate() {
                    if v != 0.0 {
                        a.set(row, seg + col, v);
                    }
                }
                for (col, v) in basis(n, d, 0.0).into_iter().enumerate() {
                    if v != 0.0 {
                        a.set(row, next + col, -v);
                    }
                }
                row += 1;
            }
        }
        let seg = n * (k - 1);
        for d in 0..s {
            let row = size - s + d;
            for (col, v) in basis(n, d, durations[k - 1]).into_iter().enumerate() {
                if v != 0.0 {
                    a.set(row, seg + col, v);
                }
            }
            b[row] = boundary.tail[d];
        }
        a.factorize()?;
        a.solve(&mut b);
        Ok(Self { s, boundary, waypoints: waypoints.to_vec(), durations: durations.to_vec(), coeffs: b, system: a })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn segments(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn waypoints(&self) -> &[Vec3] {
        &self.waypoints
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// All coefficients, `2s` rows per segment.
    pub fn coefficients(&self) -> &[[f64; 3]] {
        &self.coeffs
    }

    pub fn segment_coefficients(&self, seg: usize) -> &[[f64; 3]] {
        let n = 2 * self.s;
        &self.coeffs[n * seg..n * (seg + 1)]
    }

    /// `order`-th derivative of segment `seg` at local time `t`.
    pub fn eval_segment(&self, seg: usize, t: f64, order: usize) -> Vec3 {
        let n = 2 * self.s;
        let beta = basis(n, order, t);
        let c = self.segment_coefficients(seg);
        let mut out = Vec3::zeros();
        for (row, w) in c.iter().zip(beta) {
            out += Vec3::new(row[0], row[1], row[2]) * w;
        }
        out
    }

    /// Segment index and local time for a global time; `true` when clamped.
    pub fn locate(&self, time: f64) -> (usize, f64, bool) {
        let total = self.total_duration();
        let clamped = !(0.0..=total).contains(&time);
        let mut t = time.clamp(0.0, total);
        for (i, &d) in self.durations.iter().enumerate() {
            if t <= d || i + 1 == self.durations.len() {
                return (i, t.min(d), clamped);
            }
            t -= d;
        }
        unreachable!("durations are non-empty")
    }

    /// `order`-th derivative at global time; the flag reports clamping.
    pub fn evaluate(&self, time: f64, order: usize) -> (Vec3, bool) {
        let (seg, t, clamped) = self.locate(time);
        (self.eval_segment(seg, t, order), clamped)
    }

    /// Pulls `dJ/dC` back through the coefficient map.
    ///
    /// Returns `(dJ/dQ, dJ/dt)` where `dJ/dt` includes `dj_dt_direct`.
    pub fn propagate_gradient(&self, dj_dc: &[[f64; 3]], dj_dt_direct: &[f64]) -> (Vec<Vec3>, Vec<f64>) {
        let n = 2 * self.s;
        let k = self.segments();
        assert_eq!(dj_dc.len(), n * k, "dJ/dC shape");
        assert_eq!(dj_dt_direct.len(), k, "dJ/dt shape");
        let mut adj = dj_dc.to_vec();
        self.system.solve_transposed(&mut adj);
        let row_vec = |r: usize| Vec3::new(adj[r][0], adj[r][1], adj[r][2]);
        let mut grad_q = Vec::with_capacity(k.saturating_sub(1));
        let mut grad_t = dj_dt_direct.to_vec();
        let s = self.s;
        for i in 0..k - 1 {
            let t = self.durations[i];
            let row0 = n * i + s;
            // rows carry derivative orders s..2s-2, then 0 (waypoint), then 0..s-1
            let mut orders: Vec<usize> = (s..n - 1).collect();
            orders.push(0);
            orders.extend(0..s);
            for (off, &d) in orders.iter().enumerate() {
                let g = row_vec(row0 + off);
                grad_t[i] -= g.dot(&self.eval_segment(i, t, d + 1));
            }
            grad_q.push(row_vec(row0 + s - 1));
        }
        let t = self.durations[k - 1];
        for d in 0..s {
            let g = row_vec(n * k - s + d);
            grad_t[k - 1] -= g.dot(&self.eval_segment(k - 1, t, d + 1));
        }
        (grad_q, grad_t)
    }

    pub fn export(&self) -> TrajectoryExport {
        let n = 2 * self.s;
        TrajectoryExport {
            s: self.s,
            k: self.segments(),
            q: self.waypoints.iter().map(|w| (*w).into()).collect(),
            t: self.durations.clone(),
            c: self.coeffs.chunks(n).map(|c| c.to_vec()).collect(),
            boundary: self.boundary.clone(),
        }
    }

    /// Rebuilds a trajectory from its exported `(Q, t, boundary)`.
    pub fn from_export(e: &TrajectoryExport) -> Result<Self, MincoError> {
        let q: Vec<Vec3> = e.q.iter().map(|w| Vec3::from(*w)).collect();
        Self::construct(&q, &e.t, e.boundary.clone(), e.s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, k: usize) -> MincoTrajectory {
        let mut v = || Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
        let start = v();
        let goal = v();
        let q: Vec<Vec3> = (0..k - 1).map(|_| v()).collect();
        let mut b = Boundary::rest(start, goal, 3);
        b.head[1] = v().into();
        b.tail[2] = v().into();
        let t: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..10.0)).collect();
        MincoTrajectory::construct(&q, &t, b, 3).unwrap()
    }

    #[test]
    fn stationary_single_segment_is_constant() {
        let p = Vec3::new(1.0, -2.0, 0.5);
        let tr = MincoTrajectory::construct(&[], &[2.0], Boundary::rest(p, p, 3), 3).unwrap();
        let c = tr.segment_coefficients(0);
        assert_abs_diff_eq!(Vec3::from(c[0]), p, epsilon = 1e-12);
        for row in &c[1..] {
            for v in row {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn minimum_jerk_profile() {
        let tr = MincoTrajectory::construct(&[], &[1.0], Boundary::rest(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 3), 3)
            .unwrap();
        let c = tr.segment_coefficients(0);
        let expect = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
        for (row, e) in c.iter().zip(expect) {
            assert_abs_diff_eq!(row[0], e, epsilon = 1e-10);
            assert_abs_diff_eq!(row[1], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn structure_holds_for_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(1..=16);
            let tr = random_traj(&mut rng, k);
            for i in 0..k - 1 {
                let t = tr.durations()[i];
                assert!((tr.eval_segment(i, t, 0) - tr.waypoints()[i]).abs().max() < 1e-9);
                for d in 0..=4 {
                    let l = tr.eval_segment(i, t, d);
                    let r = tr.eval_segment(i + 1, 0.0, d);
                    assert!((l - r).abs().max() < 1e-9 * (1.0 + l.abs().max()), "order {d}");
                }
            }
        }
    }

    #[test]
    fn evaluate_clamps_and_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tr = random_traj(&mut rng, 3);
        let (p, clamped) = tr.evaluate(tr.total_duration() + 1.0, 0);
        assert!(clamped);
        assert_abs_diff_eq!(p, Vec3::from(tr.boundary().tail[0]), epsilon = 1e-8);
        assert!(!tr.evaluate(0.5 * tr.total_duration(), 0).1);
    }

    #[test]
    fn top_derivative_is_piecewise_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tr = random_traj(&mut rng, 2);
        let t = tr.durations()[0];
        assert_abs_diff_eq!(tr.eval_segment(0, 0.1 * t, 5), tr.eval_segment(0, 0.9 * t, 5), epsilon = 1e-9);
        assert_abs_diff_eq!(tr.eval_segment(0, 0.0, 6), Vec3::zeros(), epsilon = 0.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tr = random_traj(&mut rng, 4);
        let h = 1e-6;
        for frac in [0.13, 0.41, 0.77] {
            let time = frac * tr.total_duration();
            let fd = (tr.evaluate(time + h, 0).0 - tr.evaluate(time - h, 0).0) / (2.0 * h);
            let v = tr.evaluate(time, 1).0;
            assert!((fd - v).norm() <= 1e-6 * v.norm().max(1.0));
        }
    }

    #[test]
    fn gradient_independent_of_c_is_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tr = random_traj(&mut rng, 3);
        let zeros = vec![[0.0; 3]; 18];
        let (gq, gt) = tr.propagate_gradient(&zeros, &[1.0, 2.0, 3.0]);
        assert_eq!(gt, vec![1.0, 2.0, 3.0]);
        assert!(gq.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn rejects_non_positive_durations() {
        let b = Boundary::rest(Vec3::zeros(), Vec3::zeros(), 3);
        assert!(matches!(MincoTrajectory::construct(&[], &[0.0], b, 3), Err(MincoError::NonPositiveDuration(_))));
    }

    #[test]
    fn export_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tr = random_traj(&mut rng, 3);
        let json = serde_json::to_string(&tr.export()).unwrap();
        let back: TrajectoryExport = serde_json::from_str(&json).unwrap();
        let rebuilt = MincoTrajectory::from_export(&back).unwrap();
        for (a, b) in rebuilt.coefficients().iter().zip(tr.coefficients()) {
            for d in 0..3 {
                assert_abs_diff_eq!(a[d], b[d], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tr = random_traj(&mut rng, 4);
        let w: Vec<[f64; 3]> = (0..24)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let cost = |t: &MincoTrajectory| -> f64 {
            t.coefficients().iter().zip(&w).map(|(c, w)| c[0] * w[0] + c[1] * w[1] + c[2] * w[2]).sum()
        };
        let (gq, gt) = tr.propagate_gradient(&w, &[0.0; 4]);
        let h = 1e-6;
        for i in 0..3 {
            for d in 0..3 {
                let mut qp = tr.waypoints().to_vec();
                let mut qm = qp.clone();
                qp[i][d] += h;
                qm[i][d] -= h;
                let fp = cost(&MincoTrajectory::construct(&qp, tr.durations(), tr.boundary().clone(), 3).unwrap());
                let fm = cost(&MincoTrajectory::construct(&qm, tr.durations(), tr.boundary().clone(), 3).unwrap());
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - gq[i][d]).abs() <= 1e-5 * fd.abs().max(1.0), "q {i} {d}: {fd} vs {}", gq[i][d]);
            }
        }
        for i in 0..4 {
            let mut tp = tr.durations().to_vec();
            let mut tm = tp.clone();
            tp[i] += h;
            tm[i] -= h;
            let fp = cost(&MincoTrajectory::construct(tr.waypoints(), &tp, tr.boundary().clone(), 3).unwrap());
            let fm = cost(&MincoTrajectory::construct(tr.waypoints(), &tm, tr.boundary().clone(), 3).unwrap());
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - gt[i]).abs() <= 1e-5 * fd.abs().max(1.0), "t {i}: {fd} vs {}", gt[i]);
        }
    }

    #[test]
    fn squared_coefficient_norm_single_segment() {
        let b = Boundary::rest(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.5), 3);
        let cost = |t: f64| -> f64 {
            let tr = MincoTrajectory::construct(&[], &[t], b.clone(), 3).unwrap();
            tr.coefficients().iter().flat_map(|r| r.iter()).map(|v| v * v).sum()
        };
        let tr = MincoTrajectory::construct(&[], &[1.7], b.clone(), 3).unwrap();
        let dc: Vec<[f64; 3]> = tr.coefficients().iter().map(|r| [2.0 * r[0], 2.0 * r[1], 2.0 * r[2]]).collect();
        let (gq, gt) = tr.propagate_gradient(&dc, &[0.0]);
        assert!(gq.is_empty());
        let h = 1e-6;
        let fd = (cost(1.7 + h) - cost(1.7 - h)) / (2.0 * h);
        assert!((fd - gt[0]).abs() <= 1e-5 * fd.abs().max(1.0));
    }
}
