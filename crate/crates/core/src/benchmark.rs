//! Segmentation metrics and the start/goal path-planning benchmark.
//!
//! The path benchmark samples connected start/goal pairs on a ground-truth
//! mask, plans on a predicted mask and reports reachability (`succ`), the
//! share of the predicted path inside ground truth (`valid`) and the
//! predicted-to-ground-truth shortest length ratio (`len_ratio`). The last
//! two are averaged over successful pairs only.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bev_map::Cell;
use crate::planner::{
    CostParams, PlanError, SearchScratch, line_of_sight, plan_cells_with, trace_step_units, units_to_cost,
};
use crate::traversability::{DistanceField, TraversabilityMask, distance_transform, nearest_traversable};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("ground truth has {0} traversable cells, at least 2 are needed")]
    TooFewCells(usize),
    #[error("sampling gave up after {rejections} rejections with {achieved} of {requested} pairs")]
    SamplingExhausted { achieved: usize, requested: usize, rejections: usize },
    #[error("no records to aggregate")]
    NoRecords,
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn check_dims(a: &TraversabilityMask, b: &TraversabilityMask) -> Result<(), BenchError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(BenchError::DimensionMismatch((a.width(), a.height()), (b.width(), b.height())));
    }
    Ok(())
}

/// Pixel-level segmentation scores with `true` as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Metrics whose denominator was zero and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl SegMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let mut undefined = Vec::new();
        let mut ratio = |name: &str, num: u64, den: u64| {
            if den == 0 {
                undefined.push(name.to_owned());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let iou = ratio("iou", tp, tp + fp + fn_);
        let precision = ratio("precision", tp, tp + fp);
        let recall = ratio("recall", tp, tp + fn_);
        let f1 = ratio("f1", 2 * tp, 2 * tp + fp + fn_);
        Self { iou, precision, recall, f1, tp, fp, fn_, undefined }
    }
}

pub fn seg_metrics(pred: &TraversabilityMask, gt: &TraversabilityMask) -> Result<SegMetrics, BenchError> {
    check_dims(pred, gt)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.cells().iter().zip(gt.cells()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(SegMetrics::from_counts(tp, fp, fn_))
}

/// Mean of per-image scores together with scores of the pooled counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegSummary {
    pub n_images: usize,
    pub mean_iou: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub pooled: SegMetrics,
}

impl SegSummary {
    pub fn new(per_image: &[SegMetrics]) -> Option<Self> {
        if per_image.is_empty() {
            return None;
        }
        let n = per_image.len() as f64;
        let mean = |f: fn(&SegMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        let sum = |f: fn(&SegMetrics) -> u64| per_image.iter().map(f).sum::<u64>();
        Some(Self {
            n_images: per_image.len(),
            mean_iou: mean(|m| m.iou),
            mean_precision: mean(|m| m.precision),
            mean_recall: mean(|m| m.recall),
            mean_f1: mean(|m| m.f1),
            pooled: SegMetrics::from_counts(sum(|m| m.tp), sum(|m| m.fp), sum(|m| m.fn_)),
        })
    }
}

/// A sampled benchmark query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub start: Cell,
    pub goal: Cell,
    /// Shortest ground-truth path length in cost units (see [`units_to_cost`]).
    pub gt_cost_units: u64,
}

impl PairSample {
    /// Shortest ground-truth path length in pixels.
    pub fn gt_shortest_cost(&self) -> f64 {
        units_to_cost(self.gt_cost_units)
    }
}

/// Minimum start/goal separation: 100 px at 2048 px, scaled with the larger
/// image side.
pub fn default_min_sep_px(width: usize, height: usize) -> f64 {
    100.0 * width.max(height) as f64 / 2048.0
}

pub const REJECTIONS_PER_PAIR: usize = 1000;

/// Seeded rejection sampling of connected, separated start/goal pairs.
pub fn sample_pairs(
    gt: &TraversabilityMask,
    n: usize,
    min_sep_px: f64,
    seed: u64,
) -> Result<Vec<PairSample>, BenchError> {
    let cells: Vec<Cell> = gt.traversable_cells().collect();
    if cells.len() < 2 {
        return Err(BenchError::TooFewCells(cells.len()));
    }
    let labels = gt.components().labels;
    let field = distance_transform(gt);
    let params = CostParams::shortest();
    let mut scratch = SearchScratch::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = REJECTIONS_PER_PAIR.saturating_mul(n);
    let mut rejections = 0;
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let start = cells[rng.random_range(0..cells.len())];
        let goal = cells[rng.random_range(0..cells.len())];
        let ok = start != goal
            && start.distance(goal) >= min_sep_px
            && labels[gt.index(start)] == labels[gt.index(goal)];
        if !ok {
            rejections += 1;
            if rejections >= budget {
                return Err(BenchError::SamplingExhausted { achieved: pairs.len(), requested: n, rejections });
            }
            continue;
        }
        let path = plan_cells_with(&mut scratch, gt, &field, start, goal, &params)?;
        pairs.push(PairSample { start, goal, gt_cost_units: path.cost_units });
    }
    Ok(pairs)
}

/// How path length is measured for the length ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    /// Penalty-free step length of the dense grid path (1 or √2 per step).
    #[default]
    Steps,
    /// Length of the line-of-sight simplified polyline.
    Polyline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Cost used when planning on the prediction.
    pub params: CostParams,
    /// Endpoints not traversable in the prediction are moved to the nearest
    /// predicted-traversable cell within this many pixels; 0 disables it.
    pub snap_radius_px: usize,
    pub length: LengthMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { params: CostParams::shortest(), snap_radius_px: 0, length: LengthMode::Steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub len_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub plan_time_s: f64,
}

impl PairRecord {
    fn failed(reason: String, plan_time_s: f64) -> Self {
        Self { success: false, validity: None, len_ratio: None, failure: Some(reason), plan_time_s }
    }
}

/// Evaluates pairs of one prediction against one ground truth.
#[derive(Debug)]
pub struct PairEvaluator<'a> {
    pred: &'a TraversabilityMask,
    gt: &'a TraversabilityMask,
    pred_field: DistanceField,
    gt_field: Option<DistanceField>,
    opts: EvalOptions,
}

/// Length of the greedy line-of-sight shortcut of `cells`, in pixels.
fn los_length(mask: &TraversabilityMask, cells: &[Cell]) -> f64 {
    let mut len = 0.0;
    let mut anchor = 0;
    while anchor + 1 < cells.len() {
        let mut next = anchor + 1;
        while next + 1 < cells.len() && line_of_sight(mask, cells[anchor], cells[next + 1]) {
            next += 1;
        }
        len += cells[anchor].distance(cells[next]);
        anchor = next;
    }
    len
}

impl<'a> PairEvaluator<'a> {
    pub fn new(pred: &'a TraversabilityMask, gt: &'a TraversabilityMask, opts: EvalOptions) -> Result<Self, BenchError> {
        check_dims(pred, gt)?;
        opts.params.validate()?;
        let gt_field = (opts.length == LengthMode::Polyline).then(|| distance_transform(gt));
        Ok(Self { pred, gt, pred_field: distance_transform(pred), gt_field, opts })
    }

    fn snap(&self, c: Cell) -> Cell {
        if self.opts.snap_radius_px == 0 || self.pred.get(c) {
            return c;
        }
        nearest_traversable(self.pred, c, self.opts.snap_radius_px).unwrap_or(c)
    }

    pub fn eval(&self, pair: &PairSample) -> PairRecord {
        self.eval_with(&mut SearchScratch::default(), pair)
    }

    pub fn eval_with(&self, scratch: &mut SearchScratch, pair: &PairSample) -> PairRecord {
        let t0 = Instant::now();
        let (s, g) = (self.snap(pair.start), self.snap(pair.goal));
        let planned = plan_cells_with(scratch, self.pred, &self.pred_field, s, g, &self.opts.params);
        let plan_time_s = t0.elapsed().as_secs_f64();
        let path = match planned {
            Ok(p) => p,
            Err(e) => return PairRecord::failed(e.to_string(), plan_time_s),
        };
        let inside = path.cells.iter().filter(|&&c| self.gt.get(c)).count();
        let validity = inside as f64 / path.cells.len() as f64;
        let len_ratio = match self.opts.length {
            LengthMode::Steps => trace_step_units(&path.cells) as f64 / pair.gt_cost_units as f64,
            LengthMode::Polyline => {
                let field = self.gt_field.as_ref().expect("built for polyline mode");
                let gt_path = plan_cells_with(scratch, self.gt, field, pair.start, pair.goal, &CostParams::shortest())
                    .expect("sampled pairs are connected in ground truth");
                los_length(self.pred, &path.cells) / los_length(self.gt, &gt_path.cells)
            }
        };
        PairRecord { success: true, validity: Some(validity), len_ratio: Some(len_ratio), failure: None, plan_time_s }
    }

    /// Evaluates all pairs on up to `threads` threads (0 or 1 runs on the
    /// caller's thread). Results are in pair order either way.
    pub fn eval_all(&self, pairs: &[PairSample], threads: usize) -> Vec<PairRecord> {
        if threads <= 1 {
            let mut scratch = SearchScratch::default();
            return pairs.iter().map(|p| self.eval_with(&mut scratch, p)).collect();
        }
        let run = || pairs.par_iter().map_init(SearchScratch::default, |s, p| self.eval_with(s, p)).collect();
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    }
}

pub fn eval_pair(
    pred: &TraversabilityMask,
    gt: &TraversabilityMask,
    pair: &PairSample,
    opts: &EvalOptions,
) -> Result<PairRecord, BenchError> {
    Ok(PairEvaluator::new(pred, gt, *opts)?.eval(pair))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBenchResult {
    pub n_samples: usize,
    pub n_success: usize,
    pub succ: f64,
    /// `None` when no pair succeeded.
    pub valid: Option<f64>,
    pub len_ratio: Option<f64>,
    pub mean_plan_time_s: f64,
}

pub fn aggregate(records: &[PairRecord]) -> Result<PathBenchResult, BenchError> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let ok: Vec<&PairRecord> = records.iter().filter(|r| r.success).collect();
    let mean = |f: fn(&PairRecord) -> Option<f64>| {
        (!ok.is_empty()).then(|| ok.iter().map(|r| f(r).unwrap_or(0.0)).sum::<f64>() / ok.len() as f64)
    };
    Ok(PathBenchResult {
        n_samples: records.len(),
        n_success: ok.len(),
        succ: ok.len() as f64 / records.len() as f64,
        valid: mean(|r| r.validity),
        len_ratio: mean(|r| r.len_ratio),
        mean_plan_time_s: records.iter().map(|r| r.plan_time_s).sum::<f64>() / records.len() as f64,
    })
}

#[derive(Serialize)]
struct PairEntry<'a> {
    index: usize,
    start: [usize; 2],
    goal: [usize; 2],
    gt_cost: f64,
    success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    validity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    len_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_time_s: Option<f64>,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    dataset: &'a str,
    backend_id: &'a str,
    n: usize,
    seed: u64,
    n_success: usize,
    succ: f64,
    valid: Option<f64>,
    len_ratio: Option<f64>,
    mean_plan_time_s: Option<f64>,
    per_pair: Vec<PairEntry<'a>>,
}

/// Everything needed to write a path-benchmark report.
#[derive(Debug, Clone)]
pub struct PathBenchReport {
    pub dataset: String,
    pub backend_id: String,
    pub seed: u64,
    pub pairs: Vec<PairSample>,
    pub records: Vec<PairRecord>,
    pub result: PathBenchResult,
}

impl PathBenchReport {
    /// Pretty JSON report. Timings vary run to run, so they are written only
    /// when `with_timing` is set; otherwise `mean_plan_time_s` is null.
    pub fn to_json(&self, with_timing: bool) -> String {
        let per_pair = self
            .pairs
            .iter()
            .zip(&self.records)
            .enumerate()
            .map(|(index, (p, r))| PairEntry {
                index,
                start: [p.start.col, p.start.row],
                goal: [p.goal.col, p.goal.row],
                gt_cost: p.gt_shortest_cost(),
                success: r.success,
                validity: r.validity,
                len_ratio: r.len_ratio,
                failure: r.failure.as_deref(),
                plan_time_s: with_timing.then_some(r.plan_time_s),
            })
            .collect();
        let doc = ReportDoc {
            dataset: &self.dataset,
            backend_id: &self.backend_id,
            n: self.result.n_samples,
            seed: self.seed,
            n_success: self.result.n_success,
            succ: self.result.succ,
            valid: self.result.valid,
            len_ratio: self.result.len_ratio,
            mean_plan_time_s: with_timing.then_some(self.result.mean_plan_time_s),
            per_pair,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    /// One-row table with the Succ./Valid./Len./Time columns.
    pub fn to_table(&self, with_timing: bool) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.3}"));
        let time = if with_timing { format!("{:.3}", self.result.mean_plan_time_s) } else { "-".to_owned() };
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>7} {:>7} {:>7} {:>9}", "Method", "Succ.", "Valid.", "Len.", "Time (s)");
        let _ = writeln!(
            out,
            "{:<24} {:>7.3} {:>7} {:>7} {:>9}",
            self.backend_id,
            self.result.succ,
            opt(self.result.valid),
            opt(self.result.len_ratio),
            time
        );
        let _ = writeln!(
            out,
            "dataset {}, n = {}, successes = {}, seed = {}",
            self.dataset, self.result.n_samples, self.result.n_success, self.seed
        );
        out
    }
}
