//! Static images of a MEM with planned artifacts drawn on top.
//!
//! Rendering is pure: the same inputs always give the same bytes.

use std::fmt::Write as _;

use image::{Rgb, RgbImage};

use crate::localizer::EvalReport;
use crate::mem::{MetricEncodingMap, BINS};
use crate::minco::MincoTrajectory;
use crate::scan::PoseSE2;
use crate::world::{OccupancyGrid, Point2};

pub const OBSTACLE: Rgb<u8> = Rgb([0, 0, 0]);
const PATH: Rgb<u8> = Rgb([255, 255, 255]);
const TRAJECTORY: Rgb<u8> = Rgb([0, 220, 0]);

/// Heatmap color of a full-window GFM value: red grows with `m`, blue shrinks.
pub fn heat(m: u32) -> Rgb<u8> {
    let r = ((m.min(BINS as u32) as f64 / BINS as f64) * 255.0).round() as u8;
    Rgb([r, 0, 255 - r])
}

/// What to draw over the heatmap. Everything is optional.
#[derive(Default)]
pub struct Overlay<'a> {
    pub path: Option<&'a [PoseSE2]>,
    pub trajectory: Option<&'a MincoTrajectory>,
    pub eval: Option<&'a EvalReport>,
}

/// Pixel position of a world point; image row 0 is the top of the map.
fn to_pixel(grid: &OccupancyGrid, scale: u32, p: Point2) -> (f64, f64) {
    let g = grid.to_grid(p);
    let s = scale as f64;
    (g.x * s, (grid.height() as f64 - g.y) * s)
}

fn plot(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let n = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for k in 0..=n {
        let t = k as f64 / n as f64;
        plot(img, (a.0 + t * (b.0 - a.0)).floor() as i64, (a.1 + t * (b.1 - a.1)).floor() as i64, c);
    }
}

/// Green (small) to red (large) for a localization error in metres.
fn error_color(e: f64, max: f64) -> Rgb<u8> {
    let u = if max > 0.0 { (e / max).clamp(0.0, 1.0) } else { 0.0 };
    Rgb([(255.0 * u).round() as u8, (255.0 * (1.0 - u)).round() as u8, 0])
}

/// Raster rendering with `scale` pixels per cell.
pub fn render_png(grid: &OccupancyGrid, mem: &MetricEncodingMap, overlay: &Overlay, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    let mut img = RgbImage::from_fn(w * scale, h * scale, |px, py| {
        let ix = (px / scale) as usize;
        let iy = (h - 1 - py / scale) as usize;
        if grid.is_occupied(ix, iy) {
            OBSTACLE
        } else {
            heat(mem.full_window(ix, iy))
        }
    });
    if let Some(path) = overlay.path {
        for pair in path.windows(2) {
            let a = to_pixel(grid, scale, pair[0].position());
            let b = to_pixel(grid, scale, pair[1].position());
            line(&mut img, a, b, PATH);
        }
    }
    if let Some(traj) = overlay.trajectory {
        let pts = sample_trajectory(traj, 0.05);
        for pair in pts.windows(2) {
            line(
                &mut img,
                to_pixel(grid, scale, pair[0].position()),
                to_pixel(grid, scale, pair[1].position()),
                TRAJECTORY,
            );
        }
        for p in sample_trajectory(traj, 1.0) {
            let a = to_pixel(grid, scale, p.position());
            let tip = p.position() + Point2::new(p.theta.cos(), p.theta.sin()) * (3.0 * grid.resolution());
            line(&mut img, a, to_pixel(grid, scale, tip), TRAJECTORY);
        }
    }
    if let Some(eval) = overlay.eval {
        for s in &eval.samples {
            let (x, y) = to_pixel(grid, scale, s.truth.position());
            let c = error_color(s.error, eval.max_error);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    plot(&mut img, x as i64 + dx, y as i64 + dy, c);
                }
            }
        }
    }
    img
}

fn sample_trajectory(traj: &MincoTrajectory, dt: f64) -> Vec<PoseSE2> {
    let total = traj.total_duration();
    let n = (total / dt).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let p = traj.evaluate((k as f64 * dt).min(total), 0).0;
            PoseSE2::new(p.x, p.y, p.z)
        })
        .collect()
}

/// Vector overlay in world metres (y up). `background` is an image file
/// referenced relative to the SVG, typically the PNG heatmap.
pub fn render_svg(grid: &OccupancyGrid, overlay: &Overlay, background: Option<&str>) -> String {
    let (lo, hi) = grid.bounds();
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.3} {:.3} {w:.3} {h:.3}" width="{:.0}" height="{:.0}">"#,
        lo.x,
        -hi.y,
        w * 40.0,
        h * 40.0
    );
    if let Some(href) = background {
        let _ = writeln!(
            s,
            r#"<image href="{href}" x="{:.3}" y="{:.3}" width="{w:.3}" height="{h:.3}" preserveAspectRatio="none"/>"#,
            lo.x, -hi.y
        );
    }
    let _ = writeln!(s, r#"<g transform="scale(1,-1)" fill="none" stroke-width="0.05">"#);
    if let Some(path) = overlay.path {
        let pts: Vec<String> = path.iter().map(|p| format!("{:.3},{:.3}", p.x, p.y)).collect();
        let _ = writeln!(s, r#"<polyline class="path" stroke="white" points="{}"/>"#, pts.join(" "));
    }
    if let Some(traj) = overlay.trajectory {
        let pts: Vec<String> = sample_trajectory(traj, 0.05).iter().map(|p| format!("{:.3},{:.3}", p.x, p.y)).collect();
        let _ = writeln!(s, r#"<polyline class="trajectory" stroke="rgb(0,220,0)" points="{}"/>"#, pts.join(" "));
        for p in sample_trajectory(traj, 1.0) {
            let _ = writeln!(
                s,
                r#"<line class="yaw" stroke="rgb(0,220,0)" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#,
                p.x,
                p.y,
                p.x + 0.3 * p.theta.cos(),
                p.y + 0.3 * p.theta.sin()
            );
        }
    }
    if let Some(eval) = overlay.eval {
        for smp in &eval.samples {
            let Rgb([r, g, b]) = error_color(smp.error, eval.max_error);
            let _ = writeln!(
                s,
                r#"<circle class="error" cx="{:.3}" cy="{:.3}" r="0.06" fill="rgb({r},{g},{b})" stroke="none"/>"#,
                smp.truth.x, smp.truth.y
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps;
    use crate::mem::build_mem;
    use crate::scan::RankConfig;

    #[test]
    fn heat_is_monotone() {
        assert_eq!(heat(0), Rgb([0, 0, 255]));
        assert_eq!(heat(64), Rgb([255, 0, 0]));
        assert!((0..64).all(|m| heat(m).0[0] <= heat(m + 1).0[0]));
    }

    #[test]
    fn empty_overlay_is_heatmap_only() {
        let b = maps::corner_room();
        let mem = build_mem(&b.grid, &RankConfig::for_grid(0.1, BINS, 8.0));
        let img = render_png(&b.grid, &mem, &Overlay::default(), 1);
        assert_eq!((img.width() as usize, img.height() as usize), (b.grid.width(), b.grid.height()));
        for (ix, iy) in [(10, 10), (40, 40), (0, 0), (70, 12)] {
            let px = img.get_pixel(ix as u32, (b.grid.height() - 1 - iy) as u32);
            let want = if b.grid.is_occupied(ix, iy) { OBSTACLE } else { heat(mem.full_window(ix, iy)) };
            assert_eq!(*px, want);
        }
        let svg = render_svg(&b.grid, &Overlay::default(), None);
        assert!(svg.starts_with("<svg") && !svg.contains("polyline"));
    }
}
