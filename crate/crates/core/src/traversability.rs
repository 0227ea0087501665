//! Binary traversability masks and the grid operations built on them.
//!
//! Connectivity is 8-connected everywhere in this module.

use std::collections::VecDeque;
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev_map::Cell;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("image is empty")]
    EmptyImage,
    #[error("cell buffer has {got} entries, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch { left_w: usize, left_h: usize, right_w: usize, right_h: usize },
    #[error("cell {0} is outside the mask")]
    OutOfBounds(Cell),
    #[error("failed to decode mask image: {0}")]
    Image(#[from] image::ImageError),
}

/// 8-neighborhood offsets as `(dcol, drow)`, ordered row-major.
pub const NEIGHBORS8: [(isize, isize); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Row-major boolean grid, `true` = traversable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraversabilityMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl TraversabilityMask {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyImage);
        }
        if cells.len() != width * height {
            return Err(MaskError::BadLength { expected: width * height, got: cells.len() });
        }
        Ok(Self { width, height, cells })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self { width, height, cells: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(Cell) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut cells = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                cells.push(f(Cell::new(col, row)));
            }
        }
        Self { width, height, cells }
    }

    /// Parses rows of `#` (traversable) and `.` (blocked). Handy for tests.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == width), "ragged ascii mask");
        Self::from_fn(width, height, |c| rows[c.row].as_bytes()[c.col] == b'#')
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        c.row * self.width + c.col
    }

    #[inline]
    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    #[inline]
    pub fn contains(&self, c: Cell) -> bool {
        c.col < self.width && c.row < self.height
    }

    /// Traversability of `c`; out-of-bounds cells read as blocked.
    #[inline]
    pub fn get(&self, c: Cell) -> bool {
        self.contains(c) && self.cells[self.index(c)]
    }

    pub fn set(&mut self, c: Cell, value: bool) {
        let i = self.index(c);
        self.cells[i] = value;
    }

    #[inline]
    pub fn offset(&self, c: Cell, dcol: isize, drow: isize) -> Option<Cell> {
        let col = c.col.checked_add_signed(dcol)?;
        let row = c.row.checked_add_signed(drow)?;
        (col < self.width && row < self.height).then_some(Cell::new(col, row))
    }

    pub fn neighbors8(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS8.iter().filter_map(move |&(dc, dr)| self.offset(c, dc, dr))
    }

    pub fn count_traversable(&self) -> usize {
        self.cells.iter().filter(|&&v| v).count()
    }

    pub fn traversable_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| self.cell_at(i))
    }

    pub fn same_shape(&self, other: &TraversabilityMask) -> Result<(), MaskError> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(MaskError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    pub fn is_subset_of(&self, other: &TraversabilityMask) -> bool {
        self.same_shape(other).is_ok() && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    /// Nearest-neighbor resample to `width x height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        Self::from_fn(width, height, |c| {
            let sc = ((c.col as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            let sr = ((c.row as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            self.cells[sr.min(self.height - 1) * self.width + sc.min(self.width - 1)]
        })
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.cells[y as usize * self.width + x as usize] { 255 } else { 0 }])
        })
    }

    /// 8-bit grayscale PNG, 255 = traversable, 0 = blocked.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        crate::io::encode_png(self.to_gray_image())
    }

    pub fn from_png_bytes(bytes: &[u8], rule: ThresholdRule) -> Result<Self, MaskError> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        binarize(&img, rule)
    }

    pub fn load(path: &Path, rule: ThresholdRule) -> Result<Self, MaskError> {
        let img = image::open(path)?.to_rgb8();
        binarize(&img, rule)
    }
}

/// Rule deciding which pixels of a rendered mask count as traversable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdRule {
    /// `0.299 R + 0.587 G + 0.114 B >= threshold`.
    Luminance { threshold: u8 },
    /// `min(R, G, B) >= threshold` ("white-ish").
    MinChannel { threshold: u8 },
    /// Every channel within `tolerance` of `rgb`.
    Color { rgb: [u8; 3], tolerance: u8 },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Luminance { threshold: 128 }
    }
}

impl ThresholdRule {
    pub fn holds(&self, px: [u8; 3]) -> bool {
        let [r, g, b] = px.map(u32::from);
        match *self {
            // integer form of the weighted sum keeps the comparison exact
            ThresholdRule::Luminance { threshold } => 299 * r + 587 * g + 114 * b >= 1000 * threshold as u32,
            ThresholdRule::MinChannel { threshold } => r.min(g).min(b) >= threshold as u32,
            ThresholdRule::Color { rgb, tolerance } => {
                px.iter().zip(rgb).all(|(&p, q)| p.abs_diff(q) <= tolerance)
            }
        }
    }
}

pub fn binarize(image: &RgbImage, rule: ThresholdRule) -> Result<TraversabilityMask, MaskError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(MaskError::EmptyImage);
    }
    let cells = image.pixels().map(|p| rule.holds(p.0)).collect();
    TraversabilityMask::new(image.width() as usize, image.height() as usize, cells)
}

/// Euclidean distance, in pixels, from every cell to the nearest blocked cell.
///
/// Stored as exact integer squared distances. A mask with no blocked cell
/// yields an *unbounded* field whose distances are all `+inf`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    squared: Vec<u64>,
    unbounded: bool,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// True when the source mask had no blocked cell at all.
    pub fn is_unbounded(&self) -> bool {
        self.unbounded
    }

    /// Exact squared distance, `None` for the unbounded sentinel.
    pub fn squared(&self, c: Cell) -> Option<u64> {
        (!self.unbounded).then(|| self.squared[c.row * self.width + c.col])
    }

    pub fn squared_values(&self) -> Option<&[u64]> {
        (!self.unbounded).then_some(&self.squared[..])
    }

    pub fn dist(&self, c: Cell) -> f64 {
        self.dist_at(c.row * self.width + c.col)
    }

    #[inline]
    pub fn dist_at(&self, index: usize) -> f64 {
        if self.unbounded {
            f64::INFINITY
        } else {
            (self.squared[index] as f64).sqrt()
        }
    }

    pub fn max_dist(&self) -> f64 {
        if self.unbounded {
            return f64::INFINITY;
        }
        (self.squared.iter().copied().max().unwrap_or(0) as f64).sqrt()
    }
}

/// Exact Euclidean distance transform.
///
/// Two separable passes over squared distances (Meijster, Roerdink and
/// Hesselink): a column scan producing the vertical distance to the nearest
/// blocked cell, then a row scan taking the lower envelope of the parabolas
/// `(x - i)^2 + g(i)^2`. All arithmetic is integer.
pub fn distance_transform(mask: &TraversabilityMask) -> DistanceField {
    let (w, h) = (mask.width, mask.height);
    if mask.cells.iter().all(|&v| v) {
        return DistanceField { width: w, height: h, squared: vec![u64::MAX; w * h], unbounded: true };
    }
    let inf = (w + h) as i64;
    let blocked = |col: usize, row: usize| !mask.cells[row * w + col];

    let mut g = vec![0i64; w * h];
    for col in 0..w {
        g[col] = if blocked(col, 0) { 0 } else { inf };
        for row in 1..h {
            g[row * w + col] = if blocked(col, row) { 0 } else { 1 + g[(row - 1) * w + col] };
        }
        for row in (0..h.saturating_sub(1)).rev() {
            let below = g[(row + 1) * w + col];
            if below < g[row * w + col] {
                g[row * w + col] = below + 1;
            }
        }
    }

    let mut squared = vec![0u64; w * h];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for row in 0..h {
        let gr = &g[row * w..(row + 1) * w];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + gr[i].pow(2);
        let sep = |i: usize, u: usize| {
            let (i64_, u64_) = (i as i64, u as i64);
            (u64_ * u64_ - i64_ * i64_ + gr[u].pow(2) - gr[i].pow(2)).div_euclid(2 * (u64_ - i64_))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let wv = 1 + sep(s[q as usize], u);
                if wv < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = wv;
                }
            }
        }
        for u in (0..w).rev() {
            squared[row * w + u] = f(u as i64, s[q as usize]) as u64;
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    DistanceField { width: w, height: h, squared, unbounded: false }
}

/// Offsets of a discrete disk: all `(dc, dr)` with `dc^2 + dr^2 <= r^2`.
fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dc * dc + dr * dr <= r * r {
                out.push((dc, dr));
            }
        }
    }
    out
}

// Out-of-bounds neighbors are ignored by both operators, which keeps them
// adjoint and gives open(m) <= m <= close(m).
fn morph(mask: &TraversabilityMask, radius: usize, erode: bool) -> TraversabilityMask {
    if radius == 0 {
        return mask.clone();
    }
    let se = disk(radius);
    TraversabilityMask::from_fn(mask.width, mask.height, |c| {
        let mut hits = se.iter().filter_map(|&(dc, dr)| mask.offset(c, dc, dr)).map(|n| mask.get(n));
        if erode {
            hits.all(|v| v)
        } else {
            hits.any(|v| v)
        }
    })
}

pub fn erode(mask: &TraversabilityMask, radius: usize) -> TraversabilityMask {
    morph(mask, radius, true)
}

pub fn dilate(mask: &TraversabilityMask, radius: usize) -> TraversabilityMask {
    morph(mask, radius, false)
}

pub fn open(mask: &TraversabilityMask, radius: usize) -> TraversabilityMask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &TraversabilityMask, radius: usize) -> TraversabilityMask {
    erode(&dilate(mask, radius), radius)
}

/// Opening followed by closing with a disk of `radius`; removes specks and
/// fills pinholes. Radius 0 is the identity.
pub fn morph_open_close(mask: &TraversabilityMask, radius: usize) -> TraversabilityMask {
    close(&open(mask, radius), radius)
}

/// 8-connected component labelling of the `true` cells of a grid.
#[derive(Debug, Clone)]
pub struct Components {
    /// 0 for unset cells, otherwise `1..=count`, assigned in raster order.
    pub labels: Vec<u32>,
    /// `sizes[label - 1]` is the cell count of that component.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Label of the biggest component; ties go to the lower label.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(u32, usize)> = None;
        for (i, &size) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((i as u32 + 1, size));
            }
        }
        best.map(|(l, _)| l)
    }
}

pub fn label_components(width: usize, height: usize, set: &[bool]) -> Components {
    assert_eq!(set.len(), width * height);
    let mut labels = vec![0u32; set.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..set.len() {
        if !set[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (col, row) = ((i % width) as isize, (i / width) as isize);
            for (dc, dr) in NEIGHBORS8 {
                let (nc, nr) = (col + dc, row + dr);
                if nc < 0 || nr < 0 || nc >= width as isize || nr >= height as isize {
                    continue;
                }
                let j = nr as usize * width + nc as usize;
                if set[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

impl TraversabilityMask {
    pub fn components(&self) -> Components {
        label_components(self.width, self.height, &self.cells)
    }
}

/// Whether `a` and `b` lie in the same 8-connected traversable component.
pub fn connected(mask: &TraversabilityMask, a: Cell, b: Cell) -> Result<bool, MaskError> {
    for c in [a, b] {
        if !mask.contains(c) {
            return Err(MaskError::OutOfBounds(c));
        }
    }
    if !mask.get(a) || !mask.get(b) {
        return Ok(false);
    }
    if a == b {
        return Ok(true);
    }
    let mut seen = vec![false; mask.cells.len()];
    let mut queue = VecDeque::from([a]);
    seen[mask.index(a)] = true;
    while let Some(c) = queue.pop_front() {
        for n in mask.neighbors8(c) {
            let i = mask.index(n);
            if mask.cells[i] && !seen[i] {
                if n == b {
                    return Ok(true);
                }
                seen[i] = true;
                queue.push_back(n);
            }
        }
    }
    Ok(false)
}

/// Nearest traversable cell to `c` within Euclidean `radius` pixels.
/// Ties resolve to the smaller row, then the smaller column.
pub fn nearest_traversable(mask: &TraversabilityMask, c: Cell, radius: usize) -> Option<Cell> {
    if mask.get(c) {
        return Some(c);
    }
    let r = radius as isize;
    let mut best: Option<(u64, Cell)> = None;
    for dr in -r..=r {
        for dc in -r..=r {
            let d2 = (dc * dc + dr * dr) as u64;
            if d2 > (radius * radius) as u64 {
                continue;
            }
            let Some(n) = mask.offset(c, dc, dr) else { continue };
            if mask.get(n) && best.is_none_or(|(bd, bc)| (d2, n.row, n.col) < (bd, bc.row, bc.col)) {
                best = Some((d2, n));
            }
        }
    }
    best.map(|(_, n)| n)
}

/// Neighbor ring P2..P9 (N, NE, E, SE, S, SW, W, NW) as used by Zhang–Suen.
fn ring(cells: &[bool], w: usize, h: usize, i: usize) -> [bool; 8] {
    let (col, row) = ((i % w) as isize, (i / w) as isize);
    RING_OFFSETS.map(|(dc, dr)| {
        let (c, r) = (col + dc as isize, row + dr as isize);
        c >= 0 && r >= 0 && c < w as isize && r < h as isize && cells[r as usize * w + c as usize]
    })
}

/// Number of 0 -> 1 transitions around the ring.
fn transitions(p: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count()
}

const RING_OFFSETS: [(i8, i8); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Components among the ring cells whose value equals `value`, using 8- or
/// 4-adjacency inside the 3x3 window. With `touching_edge`, only components
/// containing an edge (4-)neighbor of the center are counted.
fn ring_components(p: &[bool; 8], value: bool, eight: bool, touching_edge: bool) -> usize {
    let mut visited = [false; 8];
    let mut count = 0;
    for start in 0..8 {
        if p[start] != value || visited[start] {
            continue;
        }
        visited[start] = true;
        let mut stack = vec![start];
        let mut has_edge = false;
        while let Some(k) = stack.pop() {
            has_edge |= k % 2 == 0;
            let (kc, kr) = RING_OFFSETS[k];
            for j in 0..8 {
                if p[j] != value || visited[j] {
                    continue;
                }
                let (jc, jr) = RING_OFFSETS[j];
                let (dc, dr) = ((kc - jc).abs(), (kr - jr).abs());
                if (eight && dc.max(dr) == 1) || (!eight && dc + dr == 1) {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        if has_edge || !touching_edge {
            count += 1;
        }
    }
    count
}

/// Simple-point test for (8, 4) topology: the foreground neighbors form one
/// 8-component and the background 4-adjacent to the pixel forms one
/// 4-component. Removing such a pixel changes neither the component count
/// nor the holes.
fn is_simple(p: &[bool; 8]) -> bool {
    ring_components(p, true, true, false) == 1 && ring_components(p, false, false, true) == 1
}

/// Zhang–Suen thinning to a one-pixel-wide skeleton.
///
/// Each sub-iteration marks candidates with the classic conditions on a
/// snapshot, then deletes them one at a time, re-checking on the live image
/// that the pixel is still simple and not an end point. The re-check keeps
/// two-pixel-thick structures (which plain Zhang–Suen erases completely)
/// from disappearing, so the 8-connected component count is preserved.
pub fn skeletonize(mask: &TraversabilityMask) -> TraversabilityMask {
    let (w, h) = (mask.width, mask.height);
    let mut cells = mask.cells.clone();
    loop {
        let mut changed = false;
        for step in 0..2 {
            let candidates: Vec<usize> = (0..cells.len())
                .filter(|&i| {
                    if !cells[i] {
                        return false;
                    }
                    let p = ring(&cells, w, h, i);
                    let b = p.iter().filter(|&&v| v).count();
                    let (n, e, s, west) = (p[0], p[2], p[4], p[6]);
                    let cond = if step == 0 {
                        !(n && e && s) && !(e && s && west)
                    } else {
                        !(n && e && west) && !(n && s && west)
                    };
                    (2..=6).contains(&b) && transitions(&p) == 1 && cond
                })
                .collect();
            for i in candidates {
                let p = ring(&cells, w, h, i);
                let b = p.iter().filter(|&&v| v).count();
                if b >= 2 && is_simple(&p) {
                    cells[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    TraversabilityMask { width: w, height: h, cells }
}
