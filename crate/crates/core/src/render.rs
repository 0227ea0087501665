//! Overlay images for inspecting plans and simulated runs.

use image::{Rgb, RgbImage};

use crate::bev_map::{BevMap, PixelCoord, WorldCoord};
use crate::executor::SimLog;
use crate::generation::{STAR_INNER_RADIUS_PX, STAR_OUTER_RADIUS_PX, START_MARKER_COLOR, stamp_star};
use crate::planner::PathM;
use crate::traversability::TraversabilityMask;

pub const MASK_TINT: [u8; 3] = [0, 200, 255];
pub const PATH_COLOR: [u8; 3] = [255, 0, 0];
pub const GOAL_COLOR: [u8; 3] = [255, 215, 0];
pub const TRAJECTORY_COLOR: [u8; 3] = [0, 60, 255];

const TINT_ALPHA: f64 = 0.35;

fn blend(px: &mut Rgb<u8>, color: [u8; 3], alpha: f64) {
    for (v, c) in px.0.iter_mut().zip(color) {
        *v = (*v as f64 * (1.0 - alpha) + c as f64 * alpha).round() as u8;
    }
}

/// Blends `color` over every traversable cell.
pub fn tint_mask(raster: &mut RgbImage, mask: &TraversabilityMask, color: [u8; 3]) {
    assert_eq!((raster.width() as usize, raster.height() as usize), (mask.width(), mask.height()));
    for (px, &t) in raster.pixels_mut().zip(mask.cells()) {
        if t {
            blend(px, color, TINT_ALPHA);
        }
    }
}

/// Paints a square dot of side `2 * radius + 1` clipped to the raster.
pub fn dot(raster: &mut RgbImage, p: PixelCoord, radius: i64, color: [u8; 3]) {
    let (c, r) = (p.col.round() as i64, p.row.round() as i64);
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            let (x, y) = (c + dc, r + dr);
            if x >= 0 && y >= 0 && x < raster.width() as i64 && y < raster.height() as i64 {
                raster.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}

/// Draws a segment by sampling it at sub-pixel spacing.
pub fn line(raster: &mut RgbImage, a: PixelCoord, b: PixelCoord, radius: i64, color: [u8; 3]) {
    let n = ((b.col - a.col).abs().max((b.row - a.row).abs()) * 2.0).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        dot(raster, PixelCoord::new(a.col + t * (b.col - a.col), a.row + t * (b.row - a.row)), radius, color);
    }
}

/// Polyline through world points, drawn in pixel space. Non-finite
/// projections are skipped.
pub fn polyline(raster: &mut RgbImage, map: &BevMap, points: &[WorldCoord], radius: i64, color: [u8; 3]) {
    let px: Vec<PixelCoord> = points.iter().map(|&p| map.world_to_pixel(p)).collect();
    if let [only] = px.as_slice() {
        dot(raster, *only, radius, color);
    }
    for w in px.windows(2) {
        if [w[0].col, w[0].row, w[1].col, w[1].row].iter().all(|v| v.is_finite()) {
            line(raster, w[0], w[1], radius, color);
        }
    }
}

/// Map with the mask tinted, the path trace in red and start/goal stars.
pub fn plan_overlay(map: &BevMap, mask: &TraversabilityMask, path: &PathM) -> RgbImage {
    let mut img = map.raster().clone();
    tint_mask(&mut img, mask, MASK_TINT);
    for c in &path.pixel_trace {
        dot(&mut img, c.to_pixel(), 1, PATH_COLOR);
    }
    if let (Some(first), Some(last)) = (path.pixel_trace.first(), path.pixel_trace.last()) {
        stamp_star(&mut img, first.to_pixel(), STAR_OUTER_RADIUS_PX, STAR_INNER_RADIUS_PX, START_MARKER_COLOR);
        stamp_star(&mut img, last.to_pixel(), STAR_OUTER_RADIUS_PX, STAR_INNER_RADIUS_PX, GOAL_COLOR);
    }
    img
}

/// Map with the planned path in red and the true trajectory in blue.
pub fn trajectory_overlay(map: &BevMap, path: &PathM, log: &SimLog) -> RgbImage {
    let mut img = map.raster().clone();
    polyline(&mut img, map, &path.waypoints, 1, PATH_COLOR);
    let truth: Vec<WorldCoord> = log.steps.iter().map(|s| s.true_pose.position()).collect();
    polyline(&mut img, map, &truth, 0, TRAJECTORY_COLOR);
    let goal = map.world_to_pixel(log.goal);
    if goal.col.is_finite() && goal.row.is_finite() {
        stamp_star(&mut img, goal, STAR_OUTER_RADIUS_PX, STAR_INNER_RADIUS_PX, GOAL_COLOR);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev_map::{Affine, Cell};
    use crate::planner::{CostParams, plan_path};
    use crate::traversability::distance_transform;

    fn blank_map(w: u32, h: u32) -> BevMap {
        BevMap::new(RgbImage::from_pixel(w, h, Rgb([100, 100, 100])), Affine::north_up(0.5, 10.0, 20.0)).unwrap()
    }

    #[test]
    fn tint_only_touches_traversable_cells() {
        let mut img = RgbImage::from_pixel(2, 1, Rgb([100, 100, 100]));
        let mask = TraversabilityMask::new(2, 1, vec![true, false]).unwrap();
        tint_mask(&mut img, &mask, [0, 200, 255]);
        assert_eq!(img.get_pixel(0, 0).0, [65, 135, 154]);
        assert_eq!(img.get_pixel(1, 0).0, [100, 100, 100]);
    }

    #[test]
    fn line_covers_both_endpoints_and_stays_clipped() {
        let mut img = RgbImage::new(10, 10);
        line(&mut img, PixelCoord::new(-3.0, 2.0), PixelCoord::new(12.0, 7.0), 0, [9, 9, 9]);
        assert_eq!(img.get_pixel(0, 3).0, [9, 9, 9]);
        assert_eq!(img.get_pixel(9, 6).0, [9, 9, 9]);
        let mut img = RgbImage::new(10, 10);
        line(&mut img, PixelCoord::new(1.0, 1.0), PixelCoord::new(8.0, 8.0), 0, [9, 9, 9]);
        for i in 1..=8 {
            assert_eq!(img.get_pixel(i, i).0, [9, 9, 9]);
        }
    }

    #[test]
    fn plan_overlay_draws_the_trace() {
        let map = blank_map(40, 20);
        let mask = crate::synthetic::corridor(40, 20);
        let field = distance_transform(&mask);
        let path = plan_path(
            &mask,
            &field,
            &map,
            PixelCoord::new(3.0, 10.0),
            PixelCoord::new(36.0, 10.0),
            &CostParams::default(),
        )
        .unwrap();
        let img = plan_overlay(&map, &mask, &path);
        assert_eq!(img.dimensions(), (40, 20));
        assert_eq!(img.get_pixel(20, 10).0, PATH_COLOR);
        assert_eq!(img.get_pixel(3, 10).0, START_MARKER_COLOR);
        assert_eq!(img.get_pixel(36, 10).0, GOAL_COLOR);
        assert_eq!(img.get_pixel(0, 0).0, [100, 100, 100]);
        assert!(path.pixel_trace.contains(&Cell::new(20, 10)));
    }
}
