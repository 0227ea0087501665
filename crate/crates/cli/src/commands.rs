use std::path::{Path, PathBuf};

use pathpainter::benchmark::{
    EvalOptions, PairEvaluator, PathBenchReport, SegMetrics, SegSummary, aggregate, default_min_sep_px,
    sample_pairs, seg_metrics,
};
use pathpainter::bev_map::{BevMap, PixelCoord, WorldCoord, load_map};
use pathpainter::executor::{SimLog, SimOutcome, simulate_follow};
use pathpainter::generation::{
    GenerationBackend, GenerationRequest, PromptTemplates, Task, annotate_start, backend_from_config,
    conform_size, extract_goal_with, fetch_with,
};
use pathpainter::planner::{plan_path, plan_path_on_skeleton, simplify_path};
use pathpainter::render::{plan_overlay, trajectory_overlay};
use pathpainter::traversability::{distance_transform, morph_open_close};
use pathpainter::{PathM, ThresholdRule, TraversabilityMask, encode_png, write_atomic};
use serde_json::json;

use crate::{BenchPathArgs, BenchSegArgs, CliError, FollowSimArgs, PlanArgs, RunConfig};

pub const PATH_FILE: &str = "path.json";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const GOAL_FILE: &str = "goal.json";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const TRAJECTORY_PNG: &str = "trajectory.png";
pub const SIM_FILE: &str = "sim.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const SEG_JSON: &str = "seg_report.json";
pub const SEG_TXT: &str = "seg_report.txt";
pub const MASK_FILE: &str = "mask.png";
pub const MASK_RAW_FILE: &str = "mask_raw.png";

/// Writes every output, each atomically, into `dir`.
fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn json_bytes(value: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("JSON value serializes");
    s.push('\n');
    s.into_bytes()
}

fn parse_xy(text: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Config(format!("'{text}' is not a coordinate pair X,Y"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    let x: f64 = a.trim().parse().map_err(|_| bad())?;
    let y: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(bad());
    }
    Ok((x, y))
}

fn position(map: &BevMap, text: &str, pixel: bool) -> Result<PixelCoord, CliError> {
    let (a, b) = parse_xy(text)?;
    Ok(if pixel { PixelCoord::new(a, b) } else { map.world_to_pixel(WorldCoord::new(a, b)) })
}

fn open_map(cfg: &RunConfig) -> Result<BevMap, CliError> {
    let raster = cfg.map.as_deref().ok_or_else(|| CliError::Config("no map configured".into()))?;
    let world = cfg.world_file.as_deref().expect("config check fills in the world file");
    load_map(raster, world).map_err(|e| CliError::Input(e.to_string()))
}

fn open_backend(cfg: &RunConfig) -> Result<Option<Box<dyn GenerationBackend>>, CliError> {
    cfg.backend.as_ref().map(backend_from_config).transpose().map_err(CliError::from)
}

fn require<'a>(backend: &'a Option<Box<dyn GenerationBackend>>) -> Result<&'a dyn GenerationBackend, CliError> {
    backend.as_deref().ok_or_else(|| CliError::Config("this command needs a backend".into()))
}

fn prompts(cfg: &RunConfig) -> Result<PromptTemplates, CliError> {
    let mut t = PromptTemplates::default();
    if let Some(dir) = &cfg.prompt_dir {
        for (name, slot) in [("mask.txt", &mut t.mask), ("goal.txt", &mut t.goal)] {
            let p = dir.join(name);
            if p.is_file() {
                *slot = std::fs::read_to_string(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            }
        }
    }
    Ok(t)
}

/// Mask response for the map: raw bytes plus the cleaned, map-sized mask.
fn fetch_mask_for(
    cfg: &RunConfig,
    map: &BevMap,
    backend: &dyn GenerationBackend,
) -> Result<(Vec<u8>, TraversabilityMask), CliError> {
    let req = GenerationRequest::from_raster(map.raster(), prompts(cfg)?.mask_prompt(), Task::Mask)?;
    let resp = fetch_with(backend, &req)?;
    let mask = TraversabilityMask::from_png_bytes(&resp.image_png, cfg.mask_rule)
        .map_err(|e| CliError::Backend(format!("mask response: {e}")))?;
    Ok((resp.image_png, fit_mask(cfg, map, mask)))
}

fn fit_mask(cfg: &RunConfig, map: &BevMap, mask: TraversabilityMask) -> TraversabilityMask {
    let mask = if (mask.width(), mask.height()) == (map.width(), map.height()) {
        mask
    } else {
        mask.resize_nearest(map.width(), map.height())
    };
    morph_open_close(&mask, cfg.cleanup_radius_px)
}

/// The planning mask: the configured file if any, otherwise the backend's.
fn obtain_mask(
    cfg: &RunConfig,
    map: &BevMap,
    backend: &Option<Box<dyn GenerationBackend>>,
) -> Result<TraversabilityMask, CliError> {
    if let Some(p) = &cfg.mask {
        let mask = TraversabilityMask::load(p, cfg.mask_rule).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        return Ok(fit_mask(cfg, map, mask));
    }
    match backend {
        Some(b) => Ok(fetch_mask_for(cfg, map, b.as_ref())?.1),
        None => Err(CliError::Config("neither a mask file nor a backend is configured".into())),
    }
}

pub fn plan(cfg: &RunConfig, args: &PlanArgs) -> Result<String, CliError> {
    let map = open_map(cfg)?;
    let backend = open_backend(cfg)?;
    let start = position(&map, &args.start, args.pixel)?;
    let mut goal_doc = None;
    let goal = match (&args.goal, &args.prompt) {
        (Some(g), _) => position(&map, g, args.pixel)?,
        (None, Some(instruction)) => {
            let backend = require(&backend)?;
            let annotated = annotate_start(&map, start)?;
            let req = GenerationRequest::from_raster(&annotated, prompts(cfg)?.goal_prompt(instruction), Task::Goal)?;
            let resp = fetch_with(backend, &req)?;
            let result = conform_size(&resp.decode_rgb()?, annotated.width(), annotated.height());
            let goal = extract_goal_with(&result, &annotated, start, &cfg.goal_extraction)?;
            let world = map.pixel_to_world(goal);
            goal_doc = Some(json!({
                "instruction": instruction,
                "backend_id": resp.backend_id,
                "pixel": { "col": goal.col, "row": goal.row },
                "world": { "x": world.x, "y": world.y },
            }));
            goal
        }
        (None, None) => return Err(CliError::Config("either --goal or --prompt is required".into())),
    };
    let mask = obtain_mask(cfg, &map, &backend)?;
    let field = distance_transform(&mask);
    let planner = if cfg.skeleton { plan_path_on_skeleton } else { plan_path };
    let mut path = planner(&mask, &field, &map, start, goal, &cfg.cost)?;
    if cfg.simplify {
        path = simplify_path(&path, &mask);
    }
    let mut files = vec![
        (PATH_FILE, path.to_json().into_bytes()),
        (OVERLAY_FILE, encode_png(plan_overlay(&map, &mask, &path))),
    ];
    if let Some(doc) = &goal_doc {
        files.push((GOAL_FILE, json_bytes(doc)));
    }
    write_outputs(&cfg.out_dir, &files)?;
    Ok(format!(
        "planned {} waypoints, {:.2} m, cost {:.3}; wrote {}",
        path.k(),
        path.length_m,
        path.cost,
        cfg.out_dir.join(PATH_FILE).display()
    ))
}

fn outcome_name(o: &SimOutcome) -> &'static str {
    match o {
        SimOutcome::Reached { .. } => "reached",
        SimOutcome::Missed { .. } => "missed",
        SimOutcome::BudgetExhausted { .. } => "budget_exhausted",
    }
}

fn sim_summary(log: &SimLog) -> serde_json::Value {
    let end = log.final_true_pose();
    json!({
        "outcome": outcome_name(&log.outcome),
        "error_m": log.outcome.error_m(),
        "steps": log.steps.len(),
        "final_true_pose": { "x": end.x, "y": end.y, "theta": end.theta },
        "goal": { "x": log.goal.x, "y": log.goal.y },
        "max_estimate_error_m": log.max_estimate_error_m(),
        "off_mask_steps": log.off_mask_steps,
    })
}

/// Runs the simulator. The log and overlay are written whether or not the
/// goal is reached; an unreached goal then yields [`CliError::SimFailed`].
pub fn follow_sim(cfg: &RunConfig, args: &FollowSimArgs) -> Result<String, CliError> {
    let map = open_map(cfg)?;
    let text = std::fs::read_to_string(&args.path)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.path.display())))?;
    let path = PathM::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", args.path.display())))?;
    let backend = if cfg.mask.is_some() { None } else { open_backend(cfg)? };
    let mask = if cfg.mask.is_some() || backend.is_some() {
        obtain_mask(cfg, &map, &backend)?
    } else {
        TraversabilityMask::filled(map.width(), map.height(), true)
    };
    let mut sim = cfg.sim;
    if args.no_fixes {
        sim.fixes_enabled = false;
    }
    let log = simulate_follow(&map, &mask, &path, &sim).map_err(|e| CliError::Config(e.to_string()))?;
    write_outputs(
        &cfg.out_dir,
        &[
            (TRAJECTORY_CSV, log.to_csv().into_bytes()),
            (TRAJECTORY_PNG, encode_png(trajectory_overlay(&map, &path, &log))),
            (SIM_FILE, json_bytes(&sim_summary(&log))),
        ],
    )?;
    let line = format!(
        "{} after {} steps, final error {:.3} m",
        outcome_name(&log.outcome),
        log.steps.len(),
        log.outcome.error_m()
    );
    if log.outcome.is_success() {
        Ok(line)
    } else {
        Err(CliError::SimFailed(line))
    }
}

pub fn fetch_mask(cfg: &RunConfig) -> Result<String, CliError> {
    let map = open_map(cfg)?;
    let backend = open_backend(cfg)?;
    let (raw, mask) = fetch_mask_for(cfg, &map, require(&backend)?)?;
    write_outputs(&cfg.out_dir, &[(MASK_RAW_FILE, raw), (MASK_FILE, mask.to_png_bytes())])?;
    let share = mask.count_traversable() as f64 / (mask.width() * mask.height()) as f64;
    Ok(format!("mask {}x{}, {:.1}% traversable", mask.width(), mask.height(), share * 100.0))
}

fn image_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let ext = Path::new(&name).extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if entry.path().is_file() && matches!(ext.as_deref(), Some("png" | "tif" | "tiff")) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn bench_seg(cfg: &RunConfig, args: &BenchSegArgs) -> Result<String, CliError> {
    let pred_names = image_files(&args.pred_dir)?;
    let gt_names = image_files(&args.gt_dir)?;
    if gt_names.is_empty() {
        return Err(CliError::Input(format!("no mask images in {}", args.gt_dir.display())));
    }
    if pred_names != gt_names {
        let only: Vec<&String> = pred_names
            .iter()
            .filter(|n| !gt_names.contains(n))
            .chain(gt_names.iter().filter(|n| !pred_names.contains(n)))
            .collect();
        return Err(CliError::Input(format!("unmatched files: {only:?}")));
    }
    let mut per_image = Vec::new();
    let mut scored: Vec<SegMetrics> = Vec::new();
    let mut warnings = Vec::new();
    let mut table = format!("{:<32} {:>7} {:>7} {:>7} {:>7}\n", "File", "IoU", "Prec.", "Rec.", "F1");
    for name in &gt_names {
        let load = |dir: &Path, rule: ThresholdRule| {
            TraversabilityMask::load(&dir.join(name), rule).map_err(|e| CliError::Input(format!("{name}: {e}")))
        };
        let pred = load(&args.pred_dir, cfg.mask_rule)?;
        let gt = load(&args.gt_dir, ThresholdRule::default())?;
        match seg_metrics(&pred, &gt) {
            Ok(m) => {
                table += &format!("{name:<32} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n", m.iou, m.precision, m.recall, m.f1);
                let mut entry = serde_json::to_value(&m).expect("metrics serialize");
                entry["file"] = json!(name);
                per_image.push(entry);
                scored.push(m);
            }
            Err(e) => {
                table += &format!("{name:<32} {:>7} {:>7} {:>7} {:>7}\n", "-", "-", "-", "-");
                warnings.push(format!("{name}: {e}"));
                per_image.push(json!({ "file": name, "error": e.to_string() }));
            }
        }
    }
    let summary = SegSummary::new(&scored);
    if let Some(s) = &summary {
        table += &format!(
            "{:<32} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n",
            "mean", s.mean_iou, s.mean_precision, s.mean_recall, s.mean_f1
        );
        table += &format!(
            "{:<32} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n",
            "pooled", s.pooled.iou, s.pooled.precision, s.pooled.recall, s.pooled.f1
        );
    }
    for w in &warnings {
        eprintln!("warning: {w}");
        table += &format!("warning: {w}\n");
    }
    let doc = json!({ "per_image": per_image, "summary": summary, "warnings": warnings });
    write_outputs(&cfg.out_dir, &[(SEG_JSON, json_bytes(&doc)), (SEG_TXT, table.into_bytes())])?;
    Ok(match &summary {
        Some(s) => format!("{} images, mean IoU {:.3}, {} warnings", s.n_images, s.mean_iou, warnings.len()),
        None => format!("no comparable images, {} warnings", warnings.len()),
    })
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

pub fn bench_path(cfg: &RunConfig, args: &BenchPathArgs) -> Result<String, CliError> {
    let load = |p: &PathBuf, rule: ThresholdRule| {
        TraversabilityMask::load(p, rule).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    };
    let pred = load(&args.pred, cfg.mask_rule)?;
    let gt = load(&args.gt, ThresholdRule::default())?;
    let b = &cfg.bench;
    let min_sep = b.min_sep_px.unwrap_or_else(|| default_min_sep_px(gt.width(), gt.height()));
    let opts = EvalOptions { params: cfg.bench_params(), snap_radius_px: b.snap_radius_px, length: b.length };
    let evaluator = PairEvaluator::new(&pred, &gt, opts)?;
    let pairs = sample_pairs(&gt, b.n, min_sep, cfg.seed)?;
    let records = evaluator.eval_all(&pairs, b.parallel);
    let result = aggregate(&records)?;
    let report = PathBenchReport {
        dataset: b.dataset.clone().unwrap_or_else(|| stem(&args.gt)),
        backend_id: b.backend_id.clone().unwrap_or_else(|| stem(&args.pred)),
        seed: cfg.seed,
        pairs,
        records,
        result,
    };
    write_outputs(
        &cfg.out_dir,
        &[
            (REPORT_JSON, report.to_json(b.record_timing).into_bytes()),
            (REPORT_TXT, report.to_table(b.record_timing).into_bytes()),
        ],
    )?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.3}"));
    Ok(format!(
        "succ {:.3} valid {} len {} over {} pairs",
        report.result.succ,
        fmt(report.result.valid),
        fmt(report.result.len_ratio),
        report.result.n_samples
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_coordinate_pairs() {
        assert_eq!(parse_xy("1.5,-2").unwrap(), (1.5, -2.0));
        assert_eq!(parse_xy(" 3 , 4 ").unwrap(), (3.0, 4.0));
        for bad in ["1", "a,b", "1,2,3", "nan,1", ""] {
            assert!(parse_xy(bad).is_err(), "{bad}");
        }
    }
}
