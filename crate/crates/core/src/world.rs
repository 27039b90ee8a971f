//! Occupancy grids, the Euclidean distance field `E(q)` and exact ray casting.
//!
//! Grid convention: cell `(ix, iy)` covers the world rectangle
//! `origin + [ix, ix+1) x [iy, iy+1)` scaled by `resolution`; row `iy = 0` is the
//! bottom of the map (smallest `y`). Rasters are stored top row first, so
//! loading flips rows.

use std::collections::VecDeque;
use std::path::Path;

use image::GrayImage;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::WorldError;

pub type Point2 = Vector2<f64>;

/// Sidecar metadata for an occupancy raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub resolution_m: f64,
    pub origin_xy_m: [f64; 2],
    /// Pixels strictly darker than this value are obstacles.
    pub occupied_below: u8,
}

impl Default for MapMeta {
    fn default() -> Self {
        Self { resolution_m: 0.1, origin_xy_m: [0.0, 0.0], occupied_below: 128 }
    }
}

#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    cells: Vec<bool>,
    /// 8-connected obstacle component label per cell, 0 for free cells.
    components: Vec<u32>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        cells: Vec<bool>,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::Config("grid dimensions must be at least 1x1".into()));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(WorldError::Config(format!("resolution must be positive, got {resolution}")));
        }
        if cells.len() != width * height {
            return Err(WorldError::Config(format!("expected {} cells, got {}", width * height, cells.len())));
        }
        let components = label_components(width, height, &cells);
        Ok(Self { width, height, resolution, origin, cells, components })
    }

    /// Builds a grid by evaluating `occupied(ix, iy)` for every cell.
    pub fn from_fn(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        mut occupied: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, WorldError> {
        let mut cells = Vec::with_capacity(width * height);
        for iy in 0..height {
            for ix in 0..width {
                cells.push(occupied(ix, iy));
            }
        }
        Self::new(width, height, resolution, origin, cells)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    #[inline]
    pub fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    #[inline]
    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.cells[self.index(ix, iy)]
    }

    pub fn component(&self, ix: usize, iy: usize) -> u32 {
        self.components[self.index(ix, iy)]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Continuous cell coordinates of a world point (cell corners at integers).
    #[inline]
    pub fn to_grid(&self, p: Point2) -> Point2 {
        (p - self.origin) / self.resolution
    }

    pub fn world_to_cell(&self, p: Point2) -> Option<(usize, usize)> {
        let g = self.to_grid(p);
        let (ix, iy) = (g.x.floor() as i64, g.y.floor() as i64);
        self.in_bounds(ix, iy).then_some((ix as usize, iy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        self.origin + Point2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.resolution
    }

    /// World extent `(min, max)` of the map rectangle.
    pub fn bounds(&self) -> (Point2, Point2) {
        let size = Point2::new(self.width as f64, self.height as f64) * self.resolution;
        (self.origin, self.origin + size)
    }

    pub fn is_free_point(&self, p: Point2) -> bool {
        matches!(self.world_to_cell(p), Some((ix, iy)) if !self.is_occupied(ix, iy))
    }

    /// SHA-256 over geometry and occupancy; used to tie a MEM to its source map.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(self.resolution.to_le_bytes());
        h.update(self.origin.x.to_le_bytes());
        h.update(self.origin.y.to_le_bytes());
        let packed: Vec<u8> = self.cells.iter().map(|&c| c as u8).collect();
        h.update(&packed);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Occupancy raster, top row first: obstacles black, free space white.
    pub fn to_raster(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let iy = self.height - 1 - y as usize;
            image::Luma([if self.is_occupied(x as usize, iy) { 0 } else { 255 }])
        })
    }

    pub fn meta(&self) -> MapMeta {
        MapMeta { resolution_m: self.resolution, origin_xy_m: [self.origin.x, self.origin.y], occupied_below: 128 }
    }

    /// Casts a ray and returns the first occupied-cell boundary it crosses.
    ///
    /// Walks the grid cell by cell (Amanatides-Woo); ties at grid vertices step
    /// in `x` first. Rays that leave the map or exceed `max_range` miss.
    pub fn raycast(&self, origin: Point2, angle: f64, max_range: f64) -> Result<RayHit, WorldError> {
        let (mut ix, mut iy) =
            self.world_to_cell(origin).ok_or(WorldError::OutOfBounds { x: origin.x, y: origin.y })?;
        if self.is_occupied(ix, iy) {
            return Err(WorldError::InsideObstacle { x: origin.x, y: origin.y });
        }
        let dir = Point2::new(angle.cos(), angle.sin());
        let step_x: i64 = if dir.x > 0.0 {
            1
        } else if dir.x < 0.0 {
            -1
        } else {
            0
        };
        let step_y: i64 = if dir.y > 0.0 {
            1
        } else if dir.y < 0.0 {
            -1
        } else {
            0
        };
        let res = self.resolution;
        let boundary_x = |ix: usize| self.origin.x + (ix as i64 + (step_x > 0) as i64) as f64 * res;
        let boundary_y = |iy: usize| self.origin.y + (iy as i64 + (step_y > 0) as i64) as f64 * res;
        loop {
            let tx = if step_x != 0 { (boundary_x(ix) - origin.x) / dir.x } else { f64::INFINITY };
            let ty = if step_y != 0 { (boundary_y(iy) - origin.y) / dir.y } else { f64::INFINITY };
            let (t, along_x) = if tx <= ty { (tx, true) } else { (ty, false) };
            if t > max_range {
                return Ok(RayHit::miss());
            }
            let (nx, ny) = if along_x { (ix as i64 + step_x, iy as i64) } else { (ix as i64, iy as i64 + step_y) };
            if !self.in_bounds(nx, ny) {
                return Ok(RayHit::miss());
            }
            let mut point = origin + dir * t;
            // Snap the crossed coordinate exactly onto the cell face.
            if along_x {
                point.x = boundary_x(ix);
            } else {
                point.y = boundary_y(iy);
            }
            ix = nx as usize;
            iy = ny as usize;
            if self.is_occupied(ix, iy) {
                return Ok(RayHit { hit: true, point, range: t, surface_cell: Some((ix, iy)) });
            }
        }
    }
}

fn label_components(width: usize, height: usize, cells: &[bool]) -> Vec<u32> {
    let mut labels = vec![0u32; cells.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..cells.len() {
        if !cells[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if cells[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    labels
}

/// Builds an occupancy grid from an 8-bit raster (top row first).
pub fn load_occupancy(raster: &GrayImage, meta: &MapMeta) -> Result<OccupancyGrid, WorldError> {
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    if w == 0 || h == 0 {
        return Err(WorldError::Decode("raster is empty".into()));
    }
    if meta.occupied_below == 0 {
        return Err(WorldError::Config("occupied_below must lie in (0, 255)".into()));
    }
    let origin = Point2::new(meta.origin_xy_m[0], meta.origin_xy_m[1]);
    OccupancyGrid::from_fn(w, h, meta.resolution_m, origin, |ix, iy| {
        raster.get_pixel(ix as u32, (h - 1 - iy) as u32)[0] < meta.occupied_below
    })
}

/// Sidecar path for a map raster: `maps/room.pgm` -> `maps/room.json`.
pub fn sidecar_path(raster: &Path) -> std::path::PathBuf {
    raster.with_extension("json")
}

/// Loads a PGM/PNG raster and its JSON sidecar.
pub fn load_occupancy_file(path: &Path) -> Result<OccupancyGrid, WorldError> {
    let sidecar = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&sidecar)
        .map_err(|e| WorldError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", sidecar.display()))))?;
    let meta: MapMeta =
        serde_json::from_str(&meta_text).map_err(|e| WorldError::Config(format!("map metadata: {e}")))?;
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => WorldError::Io(io),
        e => WorldError::Decode(format!("{}: {e}", path.display())),
    })?;
    load_occupancy(&img.to_luma8(), &meta)
}

/// Writes the raster and sidecar so that [`load_occupancy_file`] restores the grid.
pub fn save_occupancy_file(grid: &OccupancyGrid, path: &Path) -> Result<(), WorldError> {
    grid.to_raster().save(path).map_err(|e| WorldError::Decode(format!("{}: {e}", path.display())))?;
    let meta = serde_json::to_string_pretty(&grid.meta()).expect("metadata serializes");
    Ok(std::fs::write(sidecar_path(path), meta)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub hit: bool,
    pub point: Point2,
    pub range: f64,
    pub surface_cell: Option<(usize, usize)>,
}

impl RayHit {
    pub fn miss() -> Self {
        Self { hit: false, point: Point2::new(f64::NAN, f64::NAN), range: f64::INFINITY, surface_cell: None }
    }
}

/// Euclidean distance to the nearest obstacle boundary, sampled at cell centers.
///
/// `distance` is the unsigned field (zero inside obstacles). Sampling uses a
/// signed extension in which occupied cells carry minus their depth below the
/// obstacle surface, so the interpolated zero level set lies on cell faces.
#[derive(Clone, Debug)]
pub struct DistanceField {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    distance: Vec<f64>,
    signed: Vec<f64>,
    gradient: Vec<Point2>,
}

impl DistanceField {
    pub fn build(grid: &OccupancyGrid) -> Result<Self, WorldError> {
        if grid.occupied_count() == 0 {
            return Err(WorldError::NoObstacles);
        }
        let (w, h, res) = (grid.width(), grid.height(), grid.resolution());
        let to_obstacle = squared_edt(w, h, |i| grid.cells()[i]);
        let to_free = squared_edt(w, h, |i| !grid.cells()[i]);
        let half = 0.5 * res;
        let distance: Vec<f64> = to_obstacle.iter().map(|&d2| (d2.sqrt() * res - half).max(0.0)).collect();
        let signed: Vec<f64> = grid
            .cells()
            .iter()
            .enumerate()
            .map(|(i, &occ)| {
                if occ {
                    // An all-obstacle map has no surface; cap the depth.
                    let depth = if to_free[i].is_finite() { to_free[i].sqrt() * res - half } else { half };
                    -depth
                } else {
                    distance[i]
                }
            })
            .collect();
        let mut gradient = vec![Point2::zeros(); w * h];
        for iy in 0..h {
            for ix in 0..w {
                let at = |x: usize, y: usize| signed[y * w + x];
                let gx = central(ix, w, |x| at(x, iy)) / res;
                let gy = central(iy, h, |y| at(ix, y)) / res;
                gradient[iy * w + ix] = Point2::new(gx, gy);
            }
        }
        Ok(Self { width: w, height: h, resolution: res, origin: grid.origin(), distance, signed, gradient })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Unsigned distance stored for a cell.
    pub fn distance_at(&self, ix: usize, iy: usize) -> f64 {
        self.distance[iy * self.width + ix]
    }

    /// Signed value used by interpolation (negative inside obstacles).
    pub fn signed_at(&self, ix: usize, iy: usize) -> f64 {
        self.signed[iy * self.width + ix]
    }

    /// Central-difference gradient stored for a cell.
    pub fn gradient_at(&self, ix: usize, iy: usize) -> Point2 {
        self.gradient[iy * self.width + ix]
    }

    /// Bilinear interpolation of the field between cell centers and its exact
    /// gradient. Outside the map the result is distance 0 with a unit vector
    /// pointing at the map center.
    pub fn sample(&self, q: Point2) -> (f64, Point2) {
        let size = Point2::new(self.width as f64, self.height as f64) * self.resolution;
        let rel = q - self.origin;
        if !(rel.x >= 0.0 && rel.y >= 0.0 && rel.x <= size.x && rel.y <= size.y) {
            let inward = self.origin + size * 0.5 - q;
            let n = inward.norm();
            let g = if n > 0.0 && n.is_finite() { inward / n } else { Point2::zeros() };
            return (0.0, g);
        }
        let u = rel.x / self.resolution - 0.5;
        let v = rel.y / self.resolution - 0.5;
        let (x0, fx, dx_ok) = axis_cell(u, self.width);
        let (y0, fy, dy_ok) = axis_cell(v, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let s = |x: usize, y: usize| self.signed[y * self.width + x];
        let (v00, v10, v01, v11) = (s(x0, y0), s(x1, y0), s(x0, y1), s(x1, y1));
        let value = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
        let gx = if dx_ok { ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01)) / self.resolution } else { 0.0 };
        let gy = if dy_ok { ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10)) / self.resolution } else { 0.0 };
        (value, Point2::new(gx, gy))
    }
}

/// Splits a continuous center-grid coordinate into (lower index, fraction,
/// interior flag); coordinates in the outer half cell are clamped.
#[inline]
fn axis_cell(u: f64, n: usize) -> (usize, f64, bool) {
    if n == 1 {
        return (0, 0.0, false);
    }
    if u <= 0.0 {
        return (0, 0.0, false);
    }
    let max = (n - 1) as f64;
    if u >= max {
        return (n - 2, 1.0, false);
    }
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64, true)
}

fn central(i: usize, n: usize, f: impl Fn(usize) -> f64) -> f64 {
    if n == 1 {
        0.0
    } else if i == 0 {
        f(1) - f(0)
    } else if i == n - 1 {
        f(n - 1) - f(n - 2)
    } else {
        0.5 * (f(i + 1) - f(i - 1))
    }
}

/// Exact squared Euclidean distance (in cells) from every cell center to the
/// nearest cell where `is_site` holds. Two separable lower-envelope passes.
pub(crate) fn squared_edt(w: usize, h: usize, is_site: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..w * h).map(|i| if is_site(i) { 0.0 } else { f64::INFINITY }).collect();
    let mut buf = vec![0.0; w.max(h)];
    for x in 0..w {
        for y in 0..h {
            buf[y] = grid[y * w + x];
        }
        let out = edt_1d(&buf[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let out = edt_1d(&grid[y * w..(y + 1) * w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    grid
}

/// 1D squared distance transform of a sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![f64::INFINITY; n];
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        return d;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let intersect =
        |p: usize, q: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
    for &q in &sites {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = intersect(p, q);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid_from(rows: &[&str], res: f64) -> OccupancyGrid {
        // rows given top first, '#' = obstacle
        let h = rows.len();
        let w = rows[0].len();
        OccupancyGrid::from_fn(w, h, res, Point2::zeros(), |ix, iy| rows[h - 1 - iy].as_bytes()[ix] == b'#').unwrap()
    }

    #[test]
    fn raster_thresholds() {
        let white = GrayImage::from_pixel(10, 10, image::Luma([255]));
        let g = load_occupancy(&white, &MapMeta::default()).unwrap();
        assert_eq!(g.occupied_count(), 0);
        let black = GrayImage::from_pixel(10, 10, image::Luma([0]));
        assert_eq!(load_occupancy(&black, &MapMeta::default()).unwrap().occupied_count(), 100);
        let checker = GrayImage::from_fn(2, 2, |x, y| image::Luma([if (x + y) % 2 == 0 { 0 } else { 255 }]));
        let expected = checker.pixels().filter(|p| p[0] < 128).count();
        assert_eq!(load_occupancy(&checker, &MapMeta::default()).unwrap().occupied_count(), expected);
        assert_eq!(expected, 2);
    }

    #[test]
    fn raster_rows_flip_to_world_up() {
        // top-left pixel black -> cell (0, h-1)
        let img = GrayImage::from_fn(3, 2, |x, y| image::Luma([if x == 0 && y == 0 { 0 } else { 255 }]));
        let g = load_occupancy(&img, &MapMeta::default()).unwrap();
        assert!(g.is_occupied(0, 1));
        assert!(!g.is_occupied(0, 0));
        let back = g.to_raster();
        assert_eq!(back.get_pixel(0, 0)[0], 0);
        assert_eq!(back.get_pixel(0, 1)[0], 255);
    }

    #[test]
    fn rejects_bad_config() {
        let img = GrayImage::from_pixel(2, 2, image::Luma([255]));
        let meta = MapMeta { resolution_m: 0.0, ..MapMeta::default() };
        assert!(matches!(load_occupancy(&img, &meta), Err(WorldError::Config(_))));
        let empty = GrayImage::new(0, 0);
        assert!(matches!(load_occupancy(&empty, &MapMeta::default()), Err(WorldError::Decode(_))));
    }

    #[test]
    fn cell_round_trip() {
        let g = grid_from(&["....", "...."], 0.25);
        for iy in 0..2 {
            for ix in 0..4 {
                assert_eq!(g.world_to_cell(g.cell_center(ix, iy)), Some((ix, iy)));
            }
        }
    }

    #[test]
    fn distance_examples() {
        let g = OccupancyGrid::from_fn(6, 1, 1.0, Point2::zeros(), |ix, _| ix == 0).unwrap();
        let df = DistanceField::build(&g).unwrap();
        assert_eq!(df.distance_at(0, 0), 0.0);
        assert_abs_diff_eq!(df.distance_at(3, 0), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_map_is_flagged() {
        let g = grid_from(&["...", "..."], 1.0);
        assert!(matches!(DistanceField::build(&g), Err(WorldError::NoObstacles)));
    }

    #[test]
    fn equidistant_obstacles_tie() {
        let g = OccupancyGrid::from_fn(7, 1, 1.0, Point2::zeros(), |ix, _| ix == 0 || ix == 6).unwrap();
        let df = DistanceField::build(&g).unwrap();
        assert_abs_diff_eq!(df.distance_at(3, 0), 2.5, epsilon = 1e-12);
        // one cell off the ridge the gradient points away from the nearer wall
        assert!(df.gradient_at(2, 0).x > 0.0);
        assert!(df.gradient_at(4, 0).x < 0.0);
    }

    #[test]
    fn sample_center_and_midpoint() {
        let g = OccupancyGrid::from_fn(8, 3, 1.0, Point2::zeros(), |ix, _| ix == 0).unwrap();
        let df = DistanceField::build(&g).unwrap();
        let (d, _) = df.sample(g.cell_center(3, 1));
        assert_abs_diff_eq!(d, df.distance_at(3, 1), epsilon = 1e-12);
        // cells 1 and 2 store 0.5 and 1.5; the midpoint is their average
        let mid = (g.cell_center(1, 1) + g.cell_center(2, 1)) * 0.5;
        assert_abs_diff_eq!(df.sample(mid).0, 1.0, epsilon = 1e-12);
        // the obstacle face interpolates to zero
        assert_abs_diff_eq!(df.sample(Point2::new(1.0, 1.5)).0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_sample_is_conservative() {
        let g = OccupancyGrid::from_fn(4, 4, 1.0, Point2::zeros(), |ix, iy| ix == 0 && iy == 0).unwrap();
        let df = DistanceField::build(&g).unwrap();
        let (d, grad) = df.sample(Point2::new(-1.0, 2.0));
        assert_eq!(d, 0.0);
        assert!(grad.x > 0.0);
        assert_abs_diff_eq!(grad.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn raycast_wall_example() {
        // wall occupying x in [5, 6)
        let g = OccupancyGrid::from_fn(10, 2, 1.0, Point2::zeros(), |ix, _| ix == 5).unwrap();
        let hit = g.raycast(Point2::new(2.0, 0.5), 0.0, 10.0).unwrap();
        assert!(hit.hit);
        assert_abs_diff_eq!(hit.range, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hit.point.x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hit.point.y, 0.5, epsilon = 1e-12);
        assert_eq!(hit.surface_cell, Some((5, 0)));
        let away = g.raycast(Point2::new(2.0, 0.5), std::f64::consts::PI, 5.0).unwrap();
        assert!(!away.hit);
    }

    #[test]
    fn raycast_errors_and_misses() {
        let g = grid_from(&["....", ".#..", "...."], 1.0);
        assert!(matches!(g.raycast(Point2::new(1.5, 1.5), 0.0, 5.0), Err(WorldError::InsideObstacle { .. })));
        let empty = grid_from(&["...."], 1.0);
        assert!(!empty.raycast(Point2::new(0.5, 0.5), 0.3, 100.0).unwrap().hit);
        let near = g.raycast(Point2::new(0.5, 1.5), 0.0, 0.4).unwrap();
        assert!(!near.hit, "wall at range 0.5 is beyond max_range 0.4");
    }

    #[test]
    fn components_are_eight_connected() {
        let g = grid_from(&["#...", ".#..", "...#"], 1.0);
        assert_eq!(g.component(0, 2), g.component(1, 1));
        assert_ne!(g.component(1, 1), g.component(3, 0));
        assert_eq!(g.component(2, 2), 0);
    }
}
