//! Benchmark maps built from rectangles, so tests need no external data.
//!
//! A hit-point Jacobian only reaches rank 2 at corners, so "feature rich"
//! here means walls with many corners (crenellations and pillars).

use serde::{Deserialize, Serialize};

use crate::scan::PoseSE2;
use crate::world::{OccupancyGrid, Point2};

/// Axis-aligned rectangle in metres, `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }
}

/// Everything is occupied except `free`, then `solid` is carved back in.
pub fn rasterize(width_m: f64, height_m: f64, resolution: f64, free: &[Rect], solid: &[Rect]) -> OccupancyGrid {
    let w = (width_m / resolution).round() as usize;
    let h = (height_m / resolution).round() as usize;
    OccupancyGrid::from_fn(w, h, resolution, Point2::zeros(), |ix, iy| {
        let c = Point2::new((ix as f64 + 0.5) * resolution, (iy as f64 + 0.5) * resolution);
        !free.iter().any(|r| r.contains(c)) || solid.iter().any(|r| r.contains(c))
    })
    .expect("benchmark geometry is valid")
}

/// Square teeth of size `depth` every `pitch` metres along a horizontal wall.
fn teeth_x(x0: f64, x1: f64, y_wall: f64, depth: f64, pitch: f64, downward: bool) -> Vec<Rect> {
    let mut out = Vec::new();
    let mut x = x0 + 0.5 * pitch;
    while x + depth < x1 {
        let (ya, yb) = if downward { (y_wall - depth, y_wall) } else { (y_wall, y_wall + depth) };
        out.push(Rect::new(x, ya, x + depth, yb));
        x += pitch;
    }
    out
}

/// Square teeth along a vertical wall.
fn teeth_y(y0: f64, y1: f64, x_wall: f64, depth: f64, pitch: f64, leftward: bool) -> Vec<Rect> {
    let mut out = Vec::new();
    let mut y = y0 + 0.5 * pitch;
    while y + depth < y1 {
        let (xa, xb) = if leftward { (x_wall - depth, x_wall) } else { (x_wall, x_wall + depth) };
        out.push(Rect::new(xa, y, xb, y + depth));
        y += pitch;
    }
    out
}

/// Staircase cut of `size` metres into the convex corner at `(x, y)`; `sx`, `sy`
/// point from the corner into the obstacle.
fn chamfer(x: f64, y: f64, size: f64, sx: f64, sy: f64) -> Vec<Rect> {
    let steps = (size / 0.1).round() as usize;
    (0..steps)
        .map(|k| {
            let along = 0.1 * k as f64;
            let depth = size - along;
            let (xa, xb) = (x + sx * along, x + sx * (along + 0.1));
            let (ya, yb) = (y, y + sy * depth);
            Rect::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb))
        })
        .collect()
}

/// A map with a start and goal pose.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: &'static str,
    pub grid: OccupancyGrid,
    pub start: PoseSE2,
    pub goal: PoseSE2,
}

pub const BENCHMARK_NAMES: [&str; 3] = ["corridor_detour", "corner_room", "long_corridor"];

pub fn by_name(name: &str) -> Option<Benchmark> {
    match name {
        "corridor_detour" => Some(corridor_detour()),
        "corner_room" => Some(corner_room()),
        "long_corridor" => Some(long_corridor()),
        _ => None,
    }
}

/// Two crenellated rooms joined by a straight, smooth-walled corridor and an
/// equally long hall. The hall's lower wall is smooth and its far wall is
/// crenellated, just at the edge of the sensor cone when looking along the hall.
/// The block between the two routes has chamfered ends, each fronted by two
/// small pillars.
pub fn corridor_detour() -> Benchmark {
    let free = [
        Rect::new(0.5, 0.5, 4.0, 13.0),
        Rect::new(20.0, 0.5, 23.5, 13.0),
        Rect::new(4.0, 1.5, 20.0, 3.7),
        Rect::new(4.0, 6.0, 20.0, 12.6),
    ];
    let mut solid = teeth_x(4.0, 20.0, 12.6, 0.3, 1.0, true);
    solid.extend(teeth_y(0.5, 13.0, 0.5, 0.3, 1.0, false));
    solid.extend(teeth_x(0.5, 4.0, 13.0, 0.3, 1.0, true));
    solid.extend(teeth_x(0.5, 4.0, 0.5, 0.3, 1.0, false));
    solid.extend(teeth_y(3.7, 6.0, 4.0, 0.3, 0.8, true));
    solid.extend(teeth_y(3.7, 6.0, 20.0, 0.3, 0.8, false));
    solid.extend(teeth_y(0.5, 13.0, 23.5, 0.3, 1.0, true));
    solid.extend(teeth_x(20.0, 23.5, 13.0, 0.3, 1.0, true));
    solid.extend(teeth_x(20.0, 23.5, 0.5, 0.3, 1.0, false));
    // chamfered entrances keep optimized trajectories from cutting a square corner
    let mut free = free.to_vec();
    free.extend(chamfer(4.0, 6.0, 1.5, 1.0, -1.0));
    free.extend(chamfer(4.0, 3.7, 1.5, 1.0, 1.0));
    free.extend(chamfer(20.0, 6.0, 1.5, -1.0, -1.0));
    free.extend(chamfer(20.0, 3.7, 1.5, -1.0, 1.0));
    Benchmark {
        name: "corridor_detour",
        grid: rasterize(24.0, 13.5, 0.1, &free, &solid),
        start: PoseSE2::new(2.25, 4.6, 0.0),
        goal: PoseSE2::new(21.75, 4.6, 0.0),
    }
}

/// Square room with crenellated walls and two pillars.
pub fn corner_room() -> Benchmark {
    let free = [Rect::new(0.2, 0.2, 7.8, 7.8)];
    let mut solid = vec![Rect::new(2.0, 5.0, 2.6, 5.6), Rect::new(5.0, 2.0, 5.6, 2.6)];
    solid.extend(teeth_x(0.2, 7.8, 0.2, 0.3, 1.2, false));
    solid.extend(teeth_x(0.2, 7.8, 7.8, 0.3, 1.2, true));
    solid.extend(teeth_y(0.2, 7.8, 0.2, 0.3, 1.2, false));
    solid.extend(teeth_y(0.2, 7.8, 7.8, 0.3, 1.2, true));
    Benchmark {
        name: "corner_room",
        grid: rasterize(8.0, 8.0, 0.1, &free, &solid),
        start: PoseSE2::new(1.2, 1.2, 0.0),
        goal: PoseSE2::new(6.6, 6.6, 0.0),
    }
}

/// A 2.2 m wide corridor longer than twice the LiDAR range.
pub fn long_corridor() -> Benchmark {
    let free = [Rect::new(0.2, 0.2, 29.8, 2.4)];
    Benchmark {
        name: "long_corridor",
        grid: rasterize(30.0, 2.6, 0.1, &free, &[]),
        start: PoseSE2::new(1.0, 1.3, 0.0),
        goal: PoseSE2::new(29.0, 1.3, 0.0),
    }
}
