//! Boundary-penalized A* on a traversability mask.
//!
//! The search graph is the 8-connected grid of traversable cells. Moving from
//! `u` to a neighbor `v` costs
//!
//! ```text
//! step(u, v) * (1 + lambda * penalty(dist(v)))
//! penalty(d) = max(0, (d_sat - d) / d_sat)
//! ```
//!
//! where `step` is 1 or sqrt(2) and `dist` is the Euclidean distance to the
//! nearest blocked cell. Cells hugging the boundary are expensive, so optimal
//! paths drift toward corridor centerlines.
//!
//! Edge costs are quantized to integer units of `1 / COST_SCALE` before the
//! search, which makes path costs exact sums: two searches over the same graph
//! agree to the last unit.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev_map::{BevMap, Cell, PixelCoord, WorldCoord};
use crate::traversability::{skeletonize, DistanceField, TraversabilityMask, NEIGHBORS8};

/// Integer cost units per unit of path cost.
pub const COST_SCALE: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    Goal,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{which:?} endpoint {at:?} is {reason}")]
    InvalidEndpoint { which: Endpoint, at: PixelCoord, reason: &'static str },
    #[error("no traversable path connects start and goal")]
    NoPath,
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("grid dimensions disagree: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    /// Penalty weight, `>= 0`.
    pub lambda: f64,
    /// Distance in pixels beyond which the boundary penalty vanishes.
    pub d_sat: f64,
    /// Scales the Euclidean heuristic; values in `(0, 1]` keep it admissible.
    pub heuristic_weight: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { lambda: 2.0, d_sat: 5.0, heuristic_weight: 1.0 }
    }
}

impl CostParams {
    /// Pure shortest path (no boundary penalty).
    pub fn shortest() -> Self {
        Self { lambda: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(PlanError::InvalidParams(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.d_sat > 0.0 && self.d_sat.is_finite()) {
            return Err(PlanError::InvalidParams(format!("d_sat must be > 0, got {}", self.d_sat)));
        }
        if !(self.heuristic_weight > 0.0 && self.heuristic_weight <= 1.0) {
            return Err(PlanError::InvalidParams(format!(
                "heuristic_weight must be in (0, 1], got {}",
                self.heuristic_weight
            )));
        }
        Ok(())
    }

    /// Boundary penalty in `[0, 1]` for a cell at distance `d`.
    pub fn penalty(&self, d: f64) -> f64 {
        if d.is_infinite() {
            0.0
        } else {
            ((self.d_sat - d) / self.d_sat).max(0.0)
        }
    }

    /// Quantized cost of stepping onto a cell at distance `d`.
    #[inline]
    pub fn edge_units(&self, diagonal: bool, d: f64) -> u64 {
        let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
        (step * (1.0 + self.lambda * self.penalty(d)) * COST_SCALE).round() as u64
    }
}

/// Quantized length of one grid step with no penalty.
#[inline]
pub fn step_units(diagonal: bool) -> u64 {
    CostParams::shortest().edge_units(diagonal, f64::INFINITY)
}

pub fn units_to_cost(units: u64) -> f64 {
    units as f64 / COST_SCALE
}

/// Penalty-free length of a cell sequence, in cost units.
pub fn trace_step_units(trace: &[Cell]) -> u64 {
    trace
        .windows(2)
        .map(|w| step_units(w[0].col != w[1].col && w[0].row != w[1].row))
        .sum()
}

/// Result of a grid search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub cost_units: u64,
}

impl GridPath {
    pub fn cost(&self) -> f64 {
        units_to_cost(self.cost_units)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Open {
    f: u64,
    g: u64,
    index: usize,
}

// BinaryHeap pops the greatest: smallest f, then largest g, then smallest
// raster index (row, then column).
impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.cmp(&self.f).then(self.g.cmp(&other.g)).then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable per-thread search buffers. Entries are validated by a
/// generation stamp so nothing is cleared between searches.
#[derive(Debug, Default)]
pub struct SearchScratch {
    stamp: Vec<u32>,
    g: Vec<u64>,
    parent: Vec<u32>,
    closed: Vec<bool>,
    generation: u32,
    heap: BinaryHeap<Open>,
}

impl SearchScratch {
    fn reset(&mut self, len: usize) {
        if self.stamp.len() != len || self.generation == u32::MAX {
            self.stamp = vec![0; len];
            self.g = vec![0; len];
            self.parent = vec![0; len];
            self.closed = vec![false; len];
            self.generation = 0;
        }
        self.generation += 1;
        self.heap.clear();
    }

    #[inline]
    fn g(&self, i: usize) -> u64 {
        if self.stamp[i] == self.generation {
            self.g[i]
        } else {
            u64::MAX
        }
    }

    #[inline]
    fn touch(&mut self, i: usize, g: u64, parent: usize) {
        self.stamp[i] = self.generation;
        self.g[i] = g;
        self.parent[i] = parent as u32;
        self.closed[i] = false;
    }
}

fn check_endpoint(mask: &TraversabilityMask, c: Cell, which: Endpoint) -> Result<(), PlanError> {
    let at = c.to_pixel();
    if !mask.contains(c) {
        return Err(PlanError::InvalidEndpoint { which, at, reason: "out of bounds" });
    }
    if !mask.get(c) {
        return Err(PlanError::InvalidEndpoint { which, at, reason: "not traversable" });
    }
    Ok(())
}

/// A* between two cells. See the module docs for the cost model.
pub fn plan_cells(
    mask: &TraversabilityMask,
    field: &DistanceField,
    start: Cell,
    goal: Cell,
    params: &CostParams,
) -> Result<GridPath, PlanError> {
    plan_cells_with(&mut SearchScratch::default(), mask, field, start, goal, params)
}

pub fn plan_cells_with(
    scratch: &mut SearchScratch,
    mask: &TraversabilityMask,
    field: &DistanceField,
    start: Cell,
    goal: Cell,
    params: &CostParams,
) -> Result<GridPath, PlanError> {
    params.validate()?;
    if field.width() != mask.width() || field.height() != mask.height() {
        return Err(PlanError::DimensionMismatch("distance field vs mask".into()));
    }
    check_endpoint(mask, start, Endpoint::Start)?;
    check_endpoint(mask, goal, Endpoint::Goal)?;

    let w = mask.width();
    let h = mask.height();
    let cells = mask.cells();
    scratch.reset(cells.len());

    // floor(weight * euclid * (S - 2)) stays below every quantized edge sum
    // and changes by less than one edge cost per step, so it is consistent.
    let (gc, gr) = (goal.col as f64, goal.row as f64);
    let hscale = params.heuristic_weight * (COST_SCALE - 2.0);
    let heuristic = |i: usize| -> u64 {
        let (c, r) = ((i % w) as f64, (i / w) as f64);
        ((c - gc).hypot(r - gr) * hscale).floor() as u64
    };

    let si = mask.index(start);
    let gi = mask.index(goal);
    scratch.touch(si, 0, si);
    scratch.heap.push(Open { f: heuristic(si), g: 0, index: si });

    while let Some(Open { g, index, .. }) = scratch.heap.pop() {
        if scratch.closed[index] || g > scratch.g(index) {
            continue;
        }
        if index == gi {
            let mut trace = vec![goal];
            let mut i = gi;
            while i != si {
                i = scratch.parent[i] as usize;
                trace.push(mask.cell_at(i));
            }
            trace.reverse();
            return Ok(GridPath { cells: trace, cost_units: g });
        }
        scratch.closed[index] = true;
        let (col, row) = ((index % w) as isize, (index / w) as isize);
        for (dc, dr) in NEIGHBORS8 {
            let (nc, nr) = (col + dc, row + dr);
            if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                continue;
            }
            let ni = nr as usize * w + nc as usize;
            if !cells[ni] {
                continue;
            }
            let ng = g + params.edge_units(dc != 0 && dr != 0, field.dist_at(ni));
            if ng < scratch.g(ni) {
                scratch.touch(ni, ng, index);
                scratch.heap.push(Open { f: ng + heuristic(ni), g: ng, index: ni });
            }
        }
    }
    Err(PlanError::NoPath)
}

/// Global path in the map frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PathM {
    pub waypoints: Vec<WorldCoord>,
    /// Dense cell sequence the path was searched on; consecutive cells are
    /// 8-adjacent.
    pub pixel_trace: Vec<Cell>,
    /// For each waypoint, its position in `pixel_trace`.
    pub waypoint_trace_index: Vec<usize>,
    /// Accumulated search cost (unitless).
    pub cost: f64,
    /// Polyline length of the waypoints, meters.
    pub length_m: f64,
}

pub fn polyline_length(points: &[WorldCoord]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

impl PathM {
    pub fn from_grid(grid: &GridPath, map: &BevMap) -> Self {
        let waypoints: Vec<WorldCoord> = grid.cells.iter().map(|&c| map.cell_to_world(c)).collect();
        Self {
            length_m: polyline_length(&waypoints),
            waypoint_trace_index: (0..grid.cells.len()).collect(),
            pixel_trace: grid.cells.clone(),
            waypoints,
            cost: grid.cost(),
        }
    }

    /// Number of waypoints.
    pub fn k(&self) -> usize {
        self.waypoints.len()
    }

    pub fn waypoint_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.waypoint_trace_index.iter().map(|&i| self.pixel_trace[i])
    }

    pub fn to_json(&self) -> String {
        let doc = PathDoc {
            k: self.k(),
            cost: round6(self.cost),
            length_m: round6(self.length_m),
            waypoints: self.waypoints.iter().map(|w| WorldCoord::new(round6(w.x), round6(w.y))).collect(),
            pixel_trace: self.pixel_trace.iter().map(|c| [c.col, c.row]).collect(),
            waypoint_trace_index: self.waypoint_trace_index.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("path document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PathFileError> {
        let doc: PathDoc = serde_json::from_str(text)?;
        if doc.waypoints.is_empty() {
            return Err(PathFileError::Invalid("path has no waypoints".into()));
        }
        if doc.k != doc.waypoints.len() || doc.waypoint_trace_index.len() != doc.waypoints.len() {
            return Err(PathFileError::Invalid("waypoint counts disagree".into()));
        }
        if doc.waypoint_trace_index.iter().any(|&i| i >= doc.pixel_trace.len()) {
            return Err(PathFileError::Invalid("waypoint index outside pixel trace".into()));
        }
        Ok(Self {
            waypoints: doc.waypoints,
            pixel_trace: doc.pixel_trace.iter().map(|&[c, r]| Cell::new(c, r)).collect(),
            waypoint_trace_index: doc.waypoint_trace_index,
            cost: doc.cost,
            length_m: doc.length_m,
        })
    }
}

#[derive(Debug, Error)]
pub enum PathFileError {
    #[error("path JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid path: {0}")]
    Invalid(String),
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathDoc {
    k: usize,
    cost: f64,
    length_m: f64,
    waypoints: Vec<WorldCoord>,
    pixel_trace: Vec<[usize; 2]>,
    waypoint_trace_index: Vec<usize>,
}

fn check_dims(mask: &TraversabilityMask, map: &BevMap) -> Result<(), PlanError> {
    if mask.width() != map.width() || mask.height() != map.height() {
        return Err(PlanError::DimensionMismatch(format!(
            "mask {}x{} vs map {}x{}",
            mask.width(),
            mask.height(),
            map.width(),
            map.height()
        )));
    }
    Ok(())
}

fn endpoint_cell(mask: &TraversabilityMask, p: PixelCoord, which: Endpoint) -> Result<Cell, PlanError> {
    p.to_cell(mask.width(), mask.height()).ok_or(PlanError::InvalidEndpoint {
        which,
        at: p,
        reason: "out of bounds",
    })
}

/// Plans a map-frame path between two pixel positions (rounded to cells).
pub fn plan_path(
    mask: &TraversabilityMask,
    field: &DistanceField,
    map: &BevMap,
    start: PixelCoord,
    goal: PixelCoord,
    params: &CostParams,
) -> Result<PathM, PlanError> {
    check_dims(mask, map)?;
    let s = endpoint_cell(mask, start, Endpoint::Start)?;
    let g = endpoint_cell(mask, goal, Endpoint::Goal)?;
    let grid = plan_cells(mask, field, s, g, params)?;
    Ok(PathM::from_grid(&grid, map))
}

/// Plans along the mask skeleton.
///
/// Each endpoint is joined to the skeleton cell nearest to it in grid steps
/// (breadth-first over the mask, so the join stays in its component); the
/// middle section is searched on the skeleton only. Joins and middle use the
/// same cost function and field.
pub fn plan_path_on_skeleton(
    mask: &TraversabilityMask,
    field: &DistanceField,
    map: &BevMap,
    start: PixelCoord,
    goal: PixelCoord,
    params: &CostParams,
) -> Result<PathM, PlanError> {
    check_dims(mask, map)?;
    let s = endpoint_cell(mask, start, Endpoint::Start)?;
    let g = endpoint_cell(mask, goal, Endpoint::Goal)?;
    check_endpoint(mask, s, Endpoint::Start)?;
    check_endpoint(mask, g, Endpoint::Goal)?;
    let skeleton = skeletonize(mask);
    let (Some(s_on), Some(g_on)) = (nearest_set_cell(mask, &skeleton, s), nearest_set_cell(mask, &skeleton, g)) else {
        return Err(PlanError::NoPath);
    };
    let head = plan_cells(mask, field, s, s_on, params)?;
    let middle = plan_cells(&skeleton, field, s_on, g_on, params)?;
    let tail = plan_cells(mask, field, g_on, g, params)?;
    let mut cells = head.cells;
    cells.extend_from_slice(&middle.cells[1..]);
    cells.extend_from_slice(&tail.cells[1..]);
    let grid = GridPath { cells, cost_units: head.cost_units + middle.cost_units + tail.cost_units };
    Ok(PathM::from_grid(&grid, map))
}

fn nearest_set_cell(mask: &TraversabilityMask, target: &TraversabilityMask, from: Cell) -> Option<Cell> {
    let mut seen = vec![false; mask.cells().len()];
    let mut queue = VecDeque::from([from]);
    seen[mask.index(from)] = true;
    while let Some(c) = queue.pop_front() {
        if target.get(c) {
            return Some(c);
        }
        for n in mask.neighbors8(c) {
            let i = mask.index(n);
            if mask.get(n) && !seen[i] {
                seen[i] = true;
                queue.push_back(n);
            }
        }
    }
    None
}

/// Cells crossed by the segment between two cell centers.
///
/// Supercover traversal: every cell the segment touches, including both
/// side cells when it passes exactly through a cell corner.
pub fn supercover(a: Cell, b: Cell) -> Vec<Cell> {
    traverse(a, b, true)
}

/// Cells whose interior the segment passes through. Differs from
/// [`supercover`] only at exact corner crossings, where the two side cells
/// are touched at a single point.
pub fn interior_cells(a: Cell, b: Cell) -> Vec<Cell> {
    traverse(a, b, false)
}

fn traverse(a: Cell, b: Cell, corners: bool) -> Vec<Cell> {
    let (mut x, mut y) = (a.col as i64, a.row as i64);
    let (dx, dy) = (b.col as i64 - x, b.row as i64 - y);
    let (xstep, ystep) = (dx.signum(), dy.signum());
    let (adx, ady) = (dx.abs(), dy.abs());
    // walk along the major axis; (u, v) are (major, minor) coordinates
    let (major_len, minor_len, swap) = if adx >= ady { (adx, ady, false) } else { (ady, adx, true) };
    let (d_major, d_minor) = (2 * major_len, 2 * minor_len);
    let mut out = vec![a];
    let mut push = |x: i64, y: i64| out.push(Cell::new(x as usize, y as usize));
    let mut error = major_len;
    let mut prev = error;
    for _ in 0..major_len {
        if swap {
            y += ystep;
        } else {
            x += xstep;
        }
        error += d_minor;
        if error > d_major {
            if swap {
                x += xstep;
            } else {
                y += ystep;
            }
            error -= d_major;
            // side cells: the one behind on the minor axis and the one
            // behind on the major axis
            let minor_side = if swap { (x - xstep, y) } else { (x, y - ystep) };
            let major_side = if swap { (x, y - ystep) } else { (x - xstep, y) };
            match (error + prev).cmp(&d_major) {
                Ordering::Less => push(minor_side.0, minor_side.1),
                Ordering::Greater => push(major_side.0, major_side.1),
                Ordering::Equal => {
                    if corners {
                        push(minor_side.0, minor_side.1);
                        push(major_side.0, major_side.1);
                    }
                }
            }
        }
        push(x, y);
        prev = error;
    }
    out
}

/// True when every cell the segment passes through is traversable. Exact
/// corner crossings are allowed, consistent with diagonal grid moves.
pub fn line_of_sight(mask: &TraversabilityMask, a: Cell, b: Cell) -> bool {
    interior_cells(a, b).into_iter().all(|c| mask.get(c))
}

/// Greedy line-of-sight decimation of the waypoints.
///
/// Starting from the first waypoint, the next kept waypoint is the farthest
/// one reachable through an unbroken run of visible successors. Endpoints,
/// `pixel_trace` and `cost` are kept; `length_m` is recomputed.
pub fn simplify_path(path: &PathM, mask: &TraversabilityMask) -> PathM {
    let cells: Vec<Cell> = path.waypoint_cells().collect();
    let n = cells.len();
    if n <= 2 {
        return path.clone();
    }
    let mut keep = vec![0usize];
    let mut i = 0;
    while i < n - 1 {
        let mut j = i + 1;
        while j + 1 < n && line_of_sight(mask, cells[i], cells[j + 1]) {
            j += 1;
        }
        keep.push(j);
        i = j;
    }
    let waypoints: Vec<WorldCoord> = keep.iter().map(|&k| path.waypoints[k]).collect();
    PathM {
        length_m: polyline_length(&waypoints),
        waypoint_trace_index: keep.iter().map(|&k| path.waypoint_trace_index[k]).collect(),
        waypoints,
        pixel_trace: path.pixel_trace.clone(),
        cost: path.cost,
    }
}
