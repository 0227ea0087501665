//! Fixed inputs shared by the benchmarks.

use pathpainter::synthetic::{random_mask, road_scene, Scene};
use pathpainter::TraversabilityMask;

/// Road-grid scene used for planning and skeleton benchmarks.
pub fn road(size: usize) -> Scene {
    road_scene(size, 14, 1.0, 1)
}

/// Two independent noisy masks of the same shape.
pub fn mask_pair(size: usize) -> (TraversabilityMask, TraversabilityMask) {
    (random_mask(size, size, 0.3, 1), random_mask(size, size, 0.3, 2))
}
