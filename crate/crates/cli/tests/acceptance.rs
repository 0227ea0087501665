//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::time::Instant;

use common::*;
use image::{Rgb, RgbImage};
use pathpainter::benchmark::{EvalOptions, eval_pair, seg_metrics, PairSample};
use pathpainter::executor::{
    Frame, Pose2D, RigidTransform2D, SimConfig, compute_map_to_odom, normalize_angle, simulate_follow,
    transform_waypoint,
};
use pathpainter::generation::{GenError, extract_goal, stamp_star};
use pathpainter::planner::{CostParams, PlanError, plan_path};
use pathpainter::synthetic::{corridor, random_mask, road_scene, u_corridor};
use pathpainter::traversability::distance_transform;
use pathpainter::{Affine, BevMap, Cell, PixelCoord, TraversabilityMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

// Independent reference for the planner's cost model: brute-force boundary
// distance, the same quantized edge weights, and plain Dijkstra.

const SCALE: f64 = 1e9;

fn oracle_sq_dist(mask: &TraversabilityMask, c: Cell) -> Option<u64> {
    if !mask.get(c) {
        return Some(0);
    }
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let (x, y) = (c.col as i64, c.row as i64);
    let mut best: Option<u64> = None;
    for r in 1..w.max(h) {
        if best.is_some_and(|b| (r * r) as u64 > b) {
            break;
        }
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() != r && dy.abs() != r {
                    continue;
                }
                let (cx, cy) = (x + dx, y + dy);
                if cx < 0 || cy < 0 || cx >= w || cy >= h || mask.get(Cell::new(cx as usize, cy as usize)) {
                    continue;
                }
                let d = (dx * dx + dy * dy) as u64;
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
    }
    best
}

fn oracle_edge(diagonal: bool, sq: Option<u64>, lambda: f64, d_sat: f64) -> u64 {
    let step = if diagonal { 2f64.sqrt() } else { 1.0 };
    let penalty = match sq {
        None => 0.0,
        Some(s) => ((d_sat - (s as f64).sqrt()) / d_sat).max(0.0),
    };
    (step * (1.0 + lambda * penalty) * SCALE).round() as u64
}

/// Single-source Dijkstra where each move is charged at the cell it enters.
fn oracle_dijkstra(mask: &TraversabilityMask, from: Cell, lambda: f64, d_sat: f64) -> Vec<Option<u64>> {
    oracle_search(mask, from, lambda, d_sat, false)
}

/// With `reverse` set, each move is charged at the cell it leaves, which
/// gives forward cost-to-go when searching from the goal.
fn oracle_search(mask: &TraversabilityMask, from: Cell, lambda: f64, d_sat: f64, reverse: bool) -> Vec<Option<u64>> {
    let (w, h) = (mask.width(), mask.height());
    let sq: Vec<Option<u64>> = (0..w * h).map(|i| oracle_sq_dist(mask, Cell::new(i % w, i / w))).collect();
    let mut dist = vec![None; w * h];
    let mut heap = BinaryHeap::new();
    dist[from.row * w + from.col] = Some(0u64);
    heap.push(Reverse((0u64, from.row * w + from.col)));
    while let Some(Reverse((d, i))) = heap.pop() {
        if dist[i] != Some(d) {
            continue;
        }
        let (c, r) = ((i % w) as i64, (i / w) as i64);
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                let (nc, nr) = (c + dc, r + dr);
                if (dc, dr) == (0, 0) || nc < 0 || nr < 0 || nc >= w as i64 || nr >= h as i64 {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if !mask.cells()[j] {
                    continue;
                }
                let charged = if reverse { sq[i] } else { sq[j] };
                let nd = d + oracle_edge(dc != 0 && dr != 0, charged, lambda, d_sat);
                if dist[j].is_none_or(|old| nd < old) {
                    dist[j] = Some(nd);
                    heap.push(Reverse((nd, j)));
                }
            }
        }
    }
    dist
}

fn unit_map(mask: &TraversabilityMask) -> BevMap {
    BevMap::new(RgbImage::new(mask.width() as u32, mask.height() as u32), Affine::north_up(1.0, 0.0, 0.0)).unwrap()
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let lambdas = [0.0, 2.0, 5.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut reachable, mut unreachable) = (0, 0);
    for seed in 0..100u64 {
        let mask = random_mask(64, 64, 0.3, 1000 + seed);
        let field = distance_transform(&mask);
        let map = unit_map(&mask);
        let cells: Vec<Cell> = mask.traversable_cells().collect();
        let start = cells[rng.random_range(0..cells.len())];
        let goal = cells[rng.random_range(0..cells.len())];
        for &lambda in &lambdas {
            let params = CostParams { lambda, d_sat: 5.0, heuristic_weight: 1.0 };
            let reference = oracle_dijkstra(&mask, start, lambda, 5.0)[goal.row * 64 + goal.col];
            let planned = plan_path(&mask, &field, &map, start.to_pixel(), goal.to_pixel(), &params);
            match (reference, planned) {
                (Some(units), Ok(path)) => {
                    reachable += 1;
                    ensure(path.cost == units as f64 / SCALE, || {
                        format!("mask {seed} lambda {lambda}: cost {} vs oracle {}", path.cost, units as f64 / SCALE)
                    })?;
                }
                (None, Err(PlanError::NoPath)) => unreachable += 1,
                (r, p) => return Err(format!("mask {seed} lambda {lambda}: oracle {r:?}, planner {:?}", p.err())),
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    ensure(reachable >= 150, || format!("only {reachable} reachable cases"))?;
    Ok(format!("{reachable} reachable + {unreachable} unreachable cases agree exactly, {secs:.1} s"))
}

fn criterion_2() -> Outcome {
    let mask = corridor(41, 11);
    let field = distance_transform(&mask);
    let map = unit_map(&mask);
    let (start, goal) = (Cell::new(1, 5), Cell::new(39, 5));
    for d_sat in [3.0, 4.0, 5.0] {
        let params = CostParams { lambda: 2.0, d_sat, heuristic_weight: 1.0 };
        let path = plan_path(&mask, &field, &map, start.to_pixel(), goal.to_pixel(), &params)
            .map_err(|e| format!("d_sat {d_sat}: {e}"))?;
        let off: Vec<&Cell> = path.pixel_trace.iter().filter(|c| c.row != 5).collect();
        ensure(off.is_empty(), || format!("d_sat {d_sat}: off-centre cells {off:?}"))?;
        let fwd = oracle_dijkstra(&mask, start, 2.0, d_sat);
        let bwd = oracle_search(&mask, goal, 2.0, d_sat, true);
        let best = fwd[goal.row * 41 + goal.col].ok_or("oracle found no path")?;
        ensure(path.cost == best as f64 / SCALE, || format!("d_sat {d_sat}: cost differs from oracle"))?;
        ensure(bwd[start.row * 41 + start.col] == Some(best), || "forward and reverse optima disagree".to_string())?;
        for i in 0..41 * 11 {
            let (Some(f), Some(b)) = (fwd[i], bwd[i]) else { continue };
            if f + b == best && i / 41 != 5 {
                return Err(format!("d_sat {d_sat}: an optimal path passes ({}, {})", i % 41, i / 41));
            }
        }
    }
    Ok("centre row only for d_sat 3, 4, 5; every optimal path stays there (exhaustive Dijkstra)".into())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut unbounded = 0;
    for i in 0..200 {
        let p = rng.random_range(0.0..1.0f64).powi(2);
        let mask = random_mask(32, 32, p, 300 + i);
        let field = distance_transform(&mask);
        let blocked: Vec<Cell> = (0..1024).map(|j| Cell::new(j % 32, j / 32)).filter(|&c| !mask.get(c)).collect();
        if blocked.is_empty() {
            ensure(field.is_unbounded(), || format!("mask {i}: all traversable but field is bounded"))?;
            unbounded += 1;
            continue;
        }
        for j in 0..1024 {
            let c = Cell::new(j % 32, j / 32);
            let brute = blocked.iter().map(|b| c.squared_distance(*b)).min().unwrap();
            let got = field.squared(c);
            ensure(got == Some(brute), || format!("mask {i} cell {c}: {got:?} vs {brute}"))?;
        }
    }
    Ok(format!("200 masks integer-exact ({unbounded} all-traversable)"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..200 {
        let (pp, pg) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let p: Vec<bool> = (0..1024).map(|_| rng.random_bool(pp)).collect();
        let g: Vec<bool> = (0..1024).map(|_| rng.random_bool(pg)).collect();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for k in 0..1024 {
            tp += (p[k] && g[k]) as u64;
            fp += (p[k] && !g[k]) as u64;
            fn_ += (!p[k] && g[k]) as u64;
        }
        let m = seg_metrics(&TraversabilityMask::new(32, 32, p).unwrap(), &TraversabilityMask::new(32, 32, g).unwrap())
            .map_err(|e| e.to_string())?;
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let expected = (
            tp,
            fp,
            fn_,
            ratio(tp, tp + fp + fn_),
            ratio(tp, tp + fp),
            ratio(tp, tp + fn_),
            ratio(2 * tp, 2 * tp + fp + fn_),
        );
        let got = (m.tp, m.fp, m.fn_, m.iou, m.precision, m.recall, m.f1);
        ensure(got == expected, || format!("pair {i}: {got:?} vs {expected:?}"))?;
    }
    let pred = TraversabilityMask::new(2, 2, vec![true, true, false, false]).unwrap();
    let gt = TraversabilityMask::new(2, 2, vec![true, false, true, false]).unwrap();
    let m = seg_metrics(&pred, &gt).map_err(|e| e.to_string())?;
    ensure(m.iou == 1.0 / 3.0 && m.precision == 0.5 && m.recall == 0.5 && m.f1 == 0.5, || format!("2x2: {m:?}"))?;
    Ok("200 random pairs exact; 2x2 example iou 1/3, p = r = f1 = 1/2".into())
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    write_mask(p, "gt.png", &road_scene(256, 10, 1.0, 5).mask);
    let args = |out: &'static str| {
        vec!["bench-path", "--pred", "gt.png", "--gt", "gt.png", "--n", "100", "--seed", "77", "--out-dir", out]
    };
    for out in ["run1", "run2"] {
        let o = run(p, &args(out));
        ensure(code(&o) == 0, || format!("exit {}: {}", code(&o), String::from_utf8_lossy(&o.stderr)))?;
    }
    let doc = read_json(&p.join("run1/report.json"));
    let vals = (doc["succ"].as_f64(), doc["valid"].as_f64(), doc["len_ratio"].as_f64(), doc["n"].as_u64());
    ensure(vals == (Some(1.0), Some(1.0), Some(1.0), Some(100)), || format!("report {vals:?}"))?;
    for f in ["report.json", "report.txt"] {
        let (a, b) = (std::fs::read(p.join("run1").join(f)), std::fs::read(p.join("run2").join(f)));
        ensure(a.is_ok() && a.ok() == b.ok(), || format!("{f} differs between runs"))?;
    }
    Ok("succ = valid = len = 1.0 over 100 pairs; reports byte-identical".into())
}

fn criterion_6() -> Outcome {
    let (gt, start, goal) = u_corridor(64, 3);
    let pred = TraversabilityMask::filled(64, 64, true);
    let field = distance_transform(&gt);
    let gt_path =
        pathpainter::planner::plan_cells(&gt, &field, start, goal, &CostParams::shortest()).map_err(|e| e.to_string())?;
    let pair = PairSample { start, goal, gt_cost_units: gt_path.cost_units };
    let r = eval_pair(&pred, &gt, &pair, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let v = r.validity.unwrap_or(f64::NAN);
    let l = r.len_ratio.unwrap_or(f64::NAN);
    ensure(r.success && v < 1.0, || format!("success {}, validity {v}", r.success))?;
    Ok(format!("success with validity {v:.3} and length ratio {l:.3}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_align = 0.0f64;
    let mut worst_group = 0.0f64;
    let rand_t = |rng: &mut ChaCha8Rng| {
        RigidTransform2D::new(rng.random_range(-PI..PI), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0))
    };
    let gap = |a: &RigidTransform2D, b: &RigidTransform2D| {
        normalize_angle(a.rotation - b.rotation)
            .abs()
            .max((a.translation.0 - b.translation.0).abs())
            .max((a.translation.1 - b.translation.1).abs())
    };
    for _ in 0..1000 {
        let pm = Pose2D::new(rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0), rng.random_range(-PI..PI), Frame::Map);
        let po = Pose2D::new(rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0), rng.random_range(-PI..PI), Frame::Odom);
        let t = compute_map_to_odom(&pm, &po).map_err(|e| e.to_string())?;
        worst_align = worst_align.max(transform_waypoint(&t, pm.position()).distance(po.position()));

        let (a, b, c) = (rand_t(&mut rng), rand_t(&mut rng), rand_t(&mut rng));
        let id = RigidTransform2D::IDENTITY;
        worst_group = worst_group
            .max(gap(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))))
            .max(gap(&a.compose(&a.inverse()), &id))
            .max(gap(&a.inverse().compose(&a), &id))
            .max(gap(&a.compose(&id), &a))
            .max(gap(&id.compose(&a), &a));
    }
    ensure(worst_align <= 1e-9, || format!("alignment residual {worst_align:e} m"))?;
    ensure(worst_group <= 1e-12, || format!("group-law residual {worst_group:e}"))?;
    Ok(format!("alignment residual {worst_align:.1e} m, group-law residual {worst_group:.1e}"))
}

fn criterion_8() -> Outcome {
    let map = BevMap::new(RgbImage::new(220, 21), Affine::north_up(1.0, 0.0, 21.0)).unwrap();
    let mask = corridor(220, 21);
    let field = distance_transform(&mask);
    let path = plan_path(&mask, &field, &map, PixelCoord::new(5.0, 10.0), PixelCoord::new(205.0, 10.0), &CostParams::default())
        .map_err(|e| e.to_string())?;
    ensure((path.length_m - 200.0).abs() < 1e-9, || format!("path is {} m", path.length_m))?;
    let cfg = SimConfig { drift_rate: 0.01, goal_tolerance_m: 2.0, rng_seed: 8, ..SimConfig::default() };
    let mut report = Vec::new();
    for (fixes, want) in [(true, true), (false, false)] {
        let t0 = Instant::now();
        let log = simulate_follow(&map, &mask, &path, &SimConfig { fixes_enabled: fixes, ..cfg }).map_err(|e| e.to_string())?;
        let secs = t0.elapsed().as_secs_f64();
        ensure(log.outcome.is_success() == want, || format!("fixes {fixes}: {:?}", log.outcome))?;
        ensure(secs < 10.0, || format!("fixes {fixes}: {secs:.1} s"))?;
        report.push(format!("fixes {}: error {:.2} m", if fixes { "on" } else { "off" }, log.outcome.error_m()));
    }
    Ok(report.join(", "))
}

fn criterion_9() -> Outcome {
    let original = RgbImage::from_fn(512, 512, |c, r| Rgb([(c * 7 % 97) as u8 + 60, (r * 5 % 89) as u8 + 60, 80]));
    let start = PixelCoord::new(256.0, 256.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut placed = 0;
    while placed < 50 {
        let center = PixelCoord::new(rng.random_range(40.0..472.0), rng.random_range(40.0..472.0));
        if (center.col - start.col).hypot(center.row - start.row) < 40.0 {
            continue;
        }
        let mut result = original.clone();
        stamp_star(&mut result, center, 12.0, 5.0, [255, 0, 0]);
        let g = extract_goal(&result, &original, start).map_err(|e| format!("stamp {placed}: {e}"))?;
        worst = worst.max((g.col - center.col).hypot(g.row - center.row));
        placed += 1;
    }
    ensure(worst < 2.0, || format!("worst centroid error {worst:.3} px"))?;
    let unchanged = extract_goal(&original, &original, start);
    ensure(matches!(unchanged, Err(GenError::NoGoalFound(_))), || format!("unchanged image gave {unchanged:?}"))?;
    Ok(format!("50 stamps, worst centroid error {worst:.3} px; unchanged image -> NoGoalFound"))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    let scene = road_scene(512, 14, 1.0, 10);
    oracle_fixture(p, &scene, json!({ "sim": { "drift_rate": 0.01, "rng_seed": 10 } }));
    let start = scene.map.pixel_to_world(scene.start_pixel());
    let start = format!("{},{}", start.x, start.y);
    let plan = run(p, &["plan", "--config", "config.json", "--start", &start, "--prompt", "drive to the far crossing"]);
    ensure(code(&plan) == 0, || format!("plan exit {}: {}", code(&plan), String::from_utf8_lossy(&plan.stderr)))?;
    let sim = run(p, &["follow-sim", "--config", "config.json", "--path", "out/path.json"]);
    ensure(code(&sim) == 0, || format!("follow-sim exit {}: {}", code(&sim), String::from_utf8_lossy(&sim.stderr)))?;
    let goal = read_json(&p.join("out/goal.json"));
    let summary = read_json(&p.join("out/sim.json"));
    let (gx, gy) = (goal["world"]["x"].as_f64().unwrap_or(f64::NAN), goal["world"]["y"].as_f64().unwrap_or(f64::NAN));
    let end = &summary["final_true_pose"];
    let (ex, ey) = (end["x"].as_f64().unwrap_or(f64::NAN), end["y"].as_f64().unwrap_or(f64::NAN));
    let miss = (ex - gx).hypot(ey - gy);
    ensure(miss < 2.0, || format!("final position {miss:.3} m from the extracted goal"))?;
    Ok(format!("plan and follow-sim exit 0; final position {miss:.2} m from the extracted goal"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("planner optimality", criterion_1),
        ("corridor centering", criterion_2),
        ("EDT exactness", criterion_3),
        ("segmentation metric oracle", criterion_4),
        ("benchmark identity", criterion_5),
        ("shortcut phenomenon", criterion_6),
        ("map/odometry alignment", criterion_7),
        ("drift correction", criterion_8),
        ("goal extraction", criterion_9),
        ("end-to-end offline", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.2} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}) [{secs:.2} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
