//! Metric Encoding Map: one 64-bit rank code per grid cell.
//!
//! Bit `i - 1` of a free cell's code is set when the ray at discrete world
//! angle `i` (angle `2 pi (i - 1) / 64`) has a rank-deficient hit-point
//! Jacobian or no return. Obstacle cells carry all ones. The GFM of a field
//! of view is the popcount of the code masked to the angles inside it.
//!
//! On disk a MEM is a 16-bit RGBA PNG (R = code bits 0..16, G = 16..32,
//! B = 32..48, A = 48..64, top image row = highest grid row) plus a
//! `<name>.mem.json` sidecar with [`MemMeta`].

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgba};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MemError;
use crate::scan::{classify_ray, PoseSE2, RankConfig, RayClass};
use crate::world::{OccupancyGrid, Point2};

/// Number of discrete angles per cell.
pub const BINS: usize = 64;
pub const OBSTACLE_CODE: u64 = u64::MAX;

/// Angular width of one discrete angle.
pub const BIN_WIDTH: f64 = TAU / BINS as f64;

/// Packs per-angle ranks (`1` or `2`, angle `i` at index `i - 1`) into a code.
///
/// Evaluates `sum_i 2^i - 2^(i-1) rank_i` in 128-bit arithmetic so the
/// `i = 64` term does not overflow.
pub fn encode_cell(ranks: &[u8; BINS]) -> u64 {
    let mut q: u128 = 0;
    for (k, &r) in ranks.iter().enumerate() {
        debug_assert!(r == 1 || r == 2, "rank must be 1 or 2");
        let i = k as u32 + 1;
        q += (1u128 << i) - (1u128 << (i - 1)) * r as u128;
    }
    q as u64
}

/// Code for a list of ray classes; misses count as rank 1.
pub fn encode_classes(classes: &[RayClass; BINS]) -> u64 {
    classes.iter().enumerate().filter(|(_, c)| c.is_degenerate()).fold(0u64, |q, (b, _)| q | (1u64 << b))
}

/// Masks `q` to the window of discrete angles `(i, j)`, 1-based.
///
/// For `i <= j` the mask is `2^j - 2^(i-1)` (angles `i..=j`); for `i > j` it is
/// `!(2^i - 2^(j-1))`. All arithmetic wraps modulo 2^64.
pub fn window_code(q: u64, i: usize, j: usize) -> u64 {
    debug_assert!((1..=BINS).contains(&i) && (1..=BINS).contains(&j));
    // 128-bit shifts make 2^64 wrap to 0 without a branch
    let pow = |e: usize| (1u128 << e) as u64;
    let inner = pow(j).wrapping_sub(pow(i - 1));
    let outer = !pow(i).wrapping_sub(pow(j - 1));
    // branch-free select keeps decode time independent of the window
    let sel = ((i <= j) as u64).wrapping_neg();
    (inner & sel | outer & !sel) & q
}

/// Discrete GFM value: Hamming weight of [`window_code`].
#[inline]
pub fn gfm_discrete(q: u64, i: usize, j: usize) -> u32 {
    window_code(q, i, j).count_ones()
}

/// Mask of `len` consecutive angles starting at 1-based angle `start`,
/// wrapping past angle 64 back to angle 1.
#[inline]
pub fn cyclic_mask(start: usize, len: usize) -> u64 {
    let base = if len >= BINS { u64::MAX } else { (1u64 << len) - 1 };
    base.rotate_left(((start - 1) % BINS) as u32)
}

/// GFM over the cyclic window that runs from angle `i` forward to angle `j`
/// inclusive (`i > j` wraps through angle 64).
#[inline]
pub fn gfm_cyclic(q: u64, i: usize, j: usize) -> u32 {
    let len = (j + BINS - i) % BINS + 1;
    (q & cyclic_mask(i, len)).count_ones()
}

/// Metadata persisted next to the MEM image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemMeta {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub origin_xy_m: [f64; 2],
    pub bins: usize,
    pub max_range_m: f64,
    pub tau_rank: f64,
    pub fd_step_xy_m: f64,
    pub fd_step_theta_rad: f64,
    /// Fingerprint of the occupancy grid the codes were built from.
    pub source_hash: String,
    /// Describes the image channel layout.
    pub layout: String,
}

impl MemMeta {
    /// Metadata describing a MEM built from `grid` with `cfg`.
    pub fn for_grid(grid: &OccupancyGrid, cfg: &RankConfig) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution_m: grid.resolution(),
            origin_xy_m: [grid.origin().x, grid.origin().y],
            bins: BINS,
            max_range_m: cfg.max_range,
            tau_rank: cfg.tau_rank,
            fd_step_xy_m: cfg.fd_step_xy,
            fd_step_theta_rad: cfg.fd_step_theta,
            source_hash: grid.fingerprint(),
            layout: LAYOUT.into(),
        }
    }
}

const LAYOUT: &str = "rgba16: R=bits0-15 G=bits16-31 B=bits32-47 A=bits48-63; top row = max grid y";

/// GFM value and its gradient `(dM/dx, dM/dy, dM/dtheta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfmSample {
    pub value: f64,
    pub gradient: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct MetricEncodingMap {
    meta: MemMeta,
    origin: Point2,
    codes: Vec<u64>,
}

impl MetricEncodingMap {
    /// Wraps raw codes; `codes` are row-major with row 0 at the bottom.
    pub fn from_codes(meta: MemMeta, codes: Vec<u64>) -> Result<Self, MemError> {
        if codes.len() != meta.width * meta.height || meta.width == 0 || meta.height == 0 {
            return Err(MemError::Metadata(format!("{} codes for a {}x{} map", codes.len(), meta.width, meta.height)));
        }
        if meta.bins != BINS {
            return Err(MemError::Metadata(format!("unsupported bin count {}", meta.bins)));
        }
        if !(meta.resolution_m > 0.0) {
            return Err(MemError::Metadata("resolution must be positive".into()));
        }
        let origin = Point2::new(meta.origin_xy_m[0], meta.origin_xy_m[1]);
        Ok(Self { meta, origin, codes })
    }

    pub fn meta(&self) -> &MemMeta {
        &self.meta
    }

    pub fn width(&self) -> usize {
        self.meta.width
    }

    pub fn height(&self) -> usize {
        self.meta.height
    }

    pub fn resolution(&self) -> f64 {
        self.meta.resolution_m
    }

    pub fn codes(&self) -> &[u64] {
        &self.codes
    }

    pub fn code(&self, ix: usize, iy: usize) -> u64 {
        self.codes[iy * self.meta.width + ix]
    }

    pub fn matches_source(&self, grid: &OccupancyGrid) -> bool {
        self.meta.source_hash == grid.fingerprint()
    }

    /// Full-window GFM `M_1L` of a cell.
    pub fn full_window(&self, ix: usize, iy: usize) -> u32 {
        self.code(ix, iy).count_ones()
    }

    /// Mean full-window GFM over free cells (cells whose code is not all ones).
    pub fn mean_free_gfm(&self) -> f64 {
        let free: Vec<u32> = self.codes.iter().filter(|&&c| c != OBSTACLE_CODE).map(|c| c.count_ones()).collect();
        if free.is_empty() {
            BINS as f64
        } else {
            free.iter().map(|&c| c as f64).sum::<f64>() / free.len() as f64
        }
    }

    /// Bilinear corner cells and weights for a world point, `None` outside.
    fn spatial_stencil(&self, p: Point2) -> Option<Stencil> {
        let res = self.meta.resolution_m;
        let rel = p - self.origin;
        let (w, h) = (self.meta.width, self.meta.height);
        if !(rel.x >= 0.0 && rel.y >= 0.0 && rel.x <= w as f64 * res && rel.y <= h as f64 * res) {
            return None;
        }
        let (x0, fx, dx) = axis(rel.x / res - 0.5, w);
        let (y0, fy, dy) = axis(rel.y / res - 0.5, h);
        Some(Stencil {
            cells: [
                (x0, y0),
                ((x0 + 1).min(w - 1), y0),
                (x0, (y0 + 1).min(h - 1)),
                ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1)),
            ],
            fx,
            fy,
            dx,
            dy,
        })
    }

    /// Bilinearly interpolated full-window GFM at a world point (`BINS` outside).
    pub fn full_window_at(&self, p: Point2) -> f64 {
        match self.spatial_stencil(p) {
            None => BINS as f64,
            Some(s) => {
                let v: [f64; 4] = s.cells.map(|(x, y)| self.full_window(x, y) as f64);
                s.blend(v)
            }
        }
    }

    /// Continuous GFM for a pose with a field of view centred on its yaw.
    ///
    /// Quadrilinear in `(x, y, i*, j*)`: bilinear over the four surrounding cell
    /// centers and linear between the integer windows that bracket the
    /// fractional start and end angle indices. Yaw moves both ends, so
    /// `dM/dtheta = (dM/di* + dM/dj*) / bin_width`.
    pub fn gfm_continuous(&self, pose: &PoseSE2, fov: f64) -> GfmSample {
        self.gfm_continuous_xyt(pose.x, pose.y, pose.theta, fov)
    }

    /// As [`gfm_continuous`](Self::gfm_continuous) with an unwrapped yaw.
    pub fn gfm_continuous_xyt(&self, x: f64, y: f64, theta: f64, fov: f64) -> GfmSample {
        let Some(s) = self.spatial_stencil(Point2::new(x, y)) else {
            return GfmSample { value: BINS as f64, gradient: Vector3::zeros() };
        };
        let start = (theta - 0.5 * fov) / BIN_WIDTH + 1.0;
        let end = (theta + 0.5 * fov) / BIN_WIDTH + 1.0;
        let (i0, fi) = (start.floor(), start - start.floor());
        let (j0, fj) = (end.floor(), end - end.floor());
        // window [i0 + a, j0 + b] for a, b in {0, 1}
        let window = |q: u64, a: f64, b: f64| -> f64 {
            let s_idx = i0 + a;
            let len = (j0 + b - s_idx + 1.0).clamp(0.0, BINS as f64) as usize;
            if len == 0 {
                return 0.0;
            }
            let start = (s_idx as i64 - 1).rem_euclid(BINS as i64) as usize + 1;
            (q & cyclic_mask(start, len)).count_ones() as f64
        };
        // per-cell angular bilinear value and its partials in (i*, j*)
        let mut vals = [0.0; 4];
        let mut d_i = [0.0; 4];
        let mut d_j = [0.0; 4];
        for (k, &(cx, cy)) in s.cells.iter().enumerate() {
            let q = self.code(cx, cy);
            let c00 = window(q, 0.0, 0.0);
            let c10 = window(q, 1.0, 0.0);
            let c01 = window(q, 0.0, 1.0);
            let c11 = window(q, 1.0, 1.0);
            vals[k] = (1.0 - fi) * (1.0 - fj) * c00 + fi * (1.0 - fj) * c10 + (1.0 - fi) * fj * c01 + fi * fj * c11;
            d_i[k] = (1.0 - fj) * (c10 - c00) + fj * (c11 - c01);
            d_j[k] = (1.0 - fi) * (c01 - c00) + fi * (c11 - c10);
        }
        let value = s.blend(vals);
        let (gx, gy) = s.partials(vals, self.meta.resolution_m);
        let gt = (s.blend(d_i) + s.blend(d_j)) / BIN_WIDTH;
        GfmSample { value, gradient: Vector3::new(gx, gy, gt) }
    }
}

struct Stencil {
    /// (x0,y0), (x1,y0), (x0,y1), (x1,y1)
    cells: [(usize, usize); 4],
    fx: f64,
    fy: f64,
    dx: bool,
    dy: bool,
}

impl Stencil {
    fn blend(&self, v: [f64; 4]) -> f64 {
        let (fx, fy) = (self.fx, self.fy);
        (1.0 - fy) * ((1.0 - fx) * v[0] + fx * v[1]) + fy * ((1.0 - fx) * v[2] + fx * v[3])
    }

    fn partials(&self, v: [f64; 4], res: f64) -> (f64, f64) {
        let (fx, fy) = (self.fx, self.fy);
        let gx = if self.dx { ((1.0 - fy) * (v[1] - v[0]) + fy * (v[3] - v[2])) / res } else { 0.0 };
        let gy = if self.dy { ((1.0 - fx) * (v[2] - v[0]) + fx * (v[3] - v[1])) / res } else { 0.0 };
        (gx, gy)
    }
}

fn axis(u: f64, n: usize) -> (usize, f64, bool) {
    if n == 1 || u <= 0.0 {
        return (0, 0.0, false);
    }
    let max = (n - 1) as f64;
    if u >= max {
        return (n - 2, 1.0, false);
    }
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64, true)
}

/// Ray classes of the 64 discrete angles seen from a cell center.
pub fn classify_cell(grid: &OccupancyGrid, ix: usize, iy: usize, cfg: &RankConfig) -> [RayClass; BINS] {
    let c = grid.cell_center(ix, iy);
    let pose = PoseSE2 { x: c.x, y: c.y, theta: 0.0 };
    std::array::from_fn(|b| classify_ray(grid, pose, b as f64 * BIN_WIDTH, cfg))
}

/// Builds the MEM for every cell in parallel. Output does not depend on the
/// number of worker threads.
pub fn build_mem(grid: &OccupancyGrid, cfg: &RankConfig) -> MetricEncodingMap {
    let w = grid.width();
    let codes: Vec<u64> = (0..w * grid.height())
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i % w, i / w);
            if grid.is_occupied(ix, iy) {
                OBSTACLE_CODE
            } else {
                encode_classes(&classify_cell(grid, ix, iy, cfg))
            }
        })
        .collect();
    let meta = MemMeta::for_grid(grid, cfg);
    MetricEncodingMap::from_codes(meta, codes).expect("geometry comes from a valid grid")
}

/// Splits a code into the `(R, G, B, A)` 16-bit channels.
pub fn code_to_channels(q: u64) -> [u16; 4] {
    [q as u16, (q >> 16) as u16, (q >> 32) as u16, (q >> 48) as u16]
}

pub fn channels_to_code(c: [u16; 4]) -> u64 {
    c[0] as u64 | (c[1] as u64) << 16 | (c[2] as u64) << 32 | (c[3] as u64) << 48
}

/// `maps/room.png` -> `maps/room.mem.json`.
pub fn mem_sidecar_path(png: &Path) -> PathBuf {
    let stem = png.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    png.with_file_name(format!("{stem}.mem.json"))
}

pub fn mem_to_image(mem: &MetricEncodingMap) -> ImageBuffer<Rgba<u16>, Vec<u16>> {
    let (w, h) = (mem.width(), mem.height());
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| Rgba(code_to_channels(mem.code(x as usize, h - 1 - y as usize))))
}

pub fn save_mem(mem: &MetricEncodingMap, path: &Path) -> Result<(), MemError> {
    mem_to_image(mem).save(path).map_err(|e| MemError::Malformed(format!("{}: {e}", path.display())))?;
    let json = serde_json::to_string_pretty(&mem.meta).map_err(|e| MemError::Metadata(e.to_string()))?;
    std::fs::write(mem_sidecar_path(path), json)?;
    Ok(())
}

/// Loads a MEM image and its sidecar metadata.
pub fn load_mem(path: &Path) -> Result<MetricEncodingMap, MemError> {
    if !path.exists() {
        return Err(MemError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, path.display().to_string())));
    }
    let text = std::fs::read_to_string(mem_sidecar_path(path))?;
    let meta: MemMeta = serde_json::from_str(&text).map_err(|e| MemError::Metadata(e.to_string()))?;
    let img = image::open(path).map_err(|e| MemError::Malformed(format!("{}: {e}", path.display())))?;
    let img = match img {
        image::DynamicImage::ImageRgba16(b) => b,
        other => {
            return Err(MemError::Malformed(format!("expected 16-bit RGBA, found {:?}", other.color())));
        }
    };
    if img.width() as usize != meta.width || img.height() as usize != meta.height {
        return Err(MemError::Malformed(format!(
            "image is {}x{}, metadata says {}x{}",
            img.width(),
            img.height(),
            meta.width,
            meta.height
        )));
    }
    let h = meta.height;
    let mut codes = vec![0u64; meta.width * h];
    for (x, y, px) in img.enumerate_pixels() {
        let iy = h - 1 - y as usize;
        codes[iy * meta.width + x as usize] = channels_to_code(px.0);
    }
    MetricEncodingMap::from_codes(meta, codes)
}

/// Loads a MEM and rejects it unless it was built from `grid`.
pub fn load_mem_for(path: &Path, grid: &OccupancyGrid) -> Result<MetricEncodingMap, MemError> {
    let mem = load_mem(path)?;
    if !mem.matches_source(grid) {
        return Err(MemError::Metadata(format!(
            "{}: built from a different map (source hash mismatch)",
            path.display()
        )));
    }
    Ok(mem)
}
