//! Seeded synthetic maps and masks for tests, benchmarks and demos.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bev_map::{Affine, BevMap, Cell, PixelCoord};
use crate::generation::{STAR_INNER_RADIUS_PX, STAR_OUTER_RADIUS_PX, annotate_start, stamp_star};
use crate::traversability::TraversabilityMask;

pub const GOAL_MARKER_COLOR: [u8; 3] = [255, 0, 0];

/// Easting/northing of the top-left corner of synthetic maps.
pub const ORIGIN: (f64, f64) = (500_000.0, 4_100_000.0);

/// A `w`×`h` mask with a one-cell non-traversable border ring.
pub fn corridor(width: usize, height: usize) -> TraversabilityMask {
    TraversabilityMask::from_fn(width, height, |c| {
        c.col > 0 && c.row > 0 && c.col + 1 < width && c.row + 1 < height
    })
}

/// [`corridor`] with a full-height wall at column `wall_col`.
pub fn walled_corridor(width: usize, height: usize, wall_col: usize) -> TraversabilityMask {
    let mut m = corridor(width, height);
    for row in 0..height {
        m.set(Cell::new(wall_col, row), false);
    }
    m
}

/// Each cell is an obstacle independently with probability `obstacle_p`.
pub fn random_mask(width: usize, height: usize, obstacle_p: f64, seed: u64) -> TraversabilityMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TraversabilityMask::from_fn(width, height, |_| !rng.random_bool(obstacle_p))
}

/// Two square blobs of side `side` in opposite corners of a `size`×`size` grid.
pub fn two_blobs(size: usize, side: usize) -> TraversabilityMask {
    TraversabilityMask::from_fn(size, size, |c| {
        (c.col < side && c.row < side) || (c.col >= size - side && c.row >= size - side)
    })
}

/// Thin U-shaped ground-truth corridor and the straight line it detours
/// around: `(gt, start, goal)`. Planning on an all-traversable prediction
/// cuts straight across the non-corridor region.
pub fn u_corridor(size: usize, width: usize) -> (TraversabilityMask, Cell, Cell) {
    let (lo, hi) = (4, size - 4 - width);
    let gt = TraversabilityMask::from_fn(size, size, |c| {
        let left = (lo..lo + width).contains(&c.col) && (lo..hi + width).contains(&c.row);
        let right = (hi..hi + width).contains(&c.col) && (lo..hi + width).contains(&c.row);
        let bottom = (hi..hi + width).contains(&c.row) && (lo..hi + width).contains(&c.col);
        left || right || bottom
    });
    (gt, Cell::new(lo + width / 2, lo), Cell::new(hi + width / 2, lo))
}

/// A rendered aerial-looking scene with its ground-truth mask and a start and
/// goal on the road network.
#[derive(Debug, Clone)]
pub struct Scene {
    pub map: BevMap,
    pub mask: TraversabilityMask,
    pub start: Cell,
    pub goal: Cell,
}

impl Scene {
    /// The map with the start marker and a goal marker drawn on it, as a
    /// generation backend would return for a goal request.
    pub fn goal_image(&self) -> RgbImage {
        let mut img = annotate_start(&self.map, self.start.to_pixel()).expect("start lies on the map");
        stamp_star(&mut img, self.goal.to_pixel(), STAR_OUTER_RADIUS_PX, STAR_INNER_RADIUS_PX, GOAL_MARKER_COLOR);
        img
    }

    pub fn start_pixel(&self) -> PixelCoord {
        self.start.to_pixel()
    }
}

const GRASS: [u8; 3] = [70, 115, 55];
const ROAD: [u8; 3] = [128, 128, 124];
const ROOF: [u8; 3] = [165, 82, 64];

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amp: i16) -> Rgb<u8> {
    Rgb(base.map(|v| (v as i16 + rng.random_range(-amp..=amp)).clamp(0, 255) as u8))
}

/// Square scene of `size` px at `scale_m` metres per pixel: a grid of roads
/// `road_width` px wide on grass with buildings in the blocks. The start is
/// on the top-left intersection and the goal on the bottom-right one.
pub fn road_scene(size: usize, road_width: usize, scale_m: f64, seed: u64) -> Scene {
    assert!(size >= 8 * road_width && road_width >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = (size / 16).max(1) as i64;
    let mut lines = |fracs: [f64; 3]| -> Vec<usize> {
        fracs
            .iter()
            .map(|f| ((f * size as f64) as i64 + rng.random_range(-spread..=spread)) as usize)
            .collect()
    };
    let rows = lines([0.2, 0.5, 0.8]);
    let cols = lines([0.2, 0.5, 0.8]);
    let half = road_width / 2;
    let on_road = |v: usize, centers: &[usize]| centers.iter().any(|&c| v + half >= c && v <= c + half);
    let mask = TraversabilityMask::from_fn(size, size, |c| on_road(c.row, &rows) || on_road(c.col, &cols));

    let mut raster = RgbImage::new(size as u32, size as u32);
    for (c, r, px) in raster.enumerate_pixels_mut() {
        let road = mask.get(Cell::new(c as usize, r as usize));
        *px = jitter(&mut rng, if road { ROAD } else { GRASS }, 12);
    }
    let n_roofs = size * size / 6000;
    for _ in 0..n_roofs {
        let (w, h) = (rng.random_range(8..24usize), rng.random_range(8..24usize));
        let (c0, r0) = (rng.random_range(0..size - w), rng.random_range(0..size - h));
        let clear = (r0.saturating_sub(2)..(r0 + h + 2).min(size))
            .all(|r| (c0.saturating_sub(2)..(c0 + w + 2).min(size)).all(|c| !mask.get(Cell::new(c, r))));
        if clear {
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    raster.put_pixel(c as u32, r as u32, jitter(&mut rng, ROOF, 8));
                }
            }
        }
    }
    let affine = Affine::north_up(scale_m, ORIGIN.0, ORIGIN.1);
    let map = BevMap::new(raster, affine).expect("valid synthetic map");
    Scene { map, mask, start: Cell::new(cols[0], rows[0]), goal: Cell::new(cols[2], rows[2]) }
}
