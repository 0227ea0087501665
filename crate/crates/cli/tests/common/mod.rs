#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::RgbImage;
use pathpainter::synthetic::Scene;
use pathpainter::{Affine, BevMap, TraversabilityMask};
use serde_json::{Value, json};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathpainter"))
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn write_map(dir: &Path, name: &str, map: &BevMap) -> PathBuf {
    let png = dir.join(format!("{name}.png"));
    map.raster().save(&png).unwrap();
    std::fs::write(dir.join(format!("{name}.pgw")), map.affine().to_world_file_string()).unwrap();
    png
}

pub fn write_mask(dir: &Path, name: &str, mask: &TraversabilityMask) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, mask.to_png_bytes()).unwrap();
    p
}

pub fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

/// Blank map at 1 m/px with a mask, plus a config naming both.
pub fn mask_fixture(dir: &Path, mask: &TraversabilityMask, extra: Value) -> PathBuf {
    let map = BevMap::new(
        RgbImage::new(mask.width() as u32, mask.height() as u32),
        Affine::north_up(1.0, 1000.0, 2000.0),
    )
    .unwrap();
    write_map(dir, "map", &map);
    write_mask(dir, "mask.png", mask);
    let mut cfg = json!({ "map": "map.png", "mask": "mask.png", "out_dir": "out" });
    merge(&mut cfg, extra);
    write_config(dir, "config.json", &cfg)
}

/// Scene map plus oracle backend files; the config has no mask so both the
/// mask and the goal come from the backend.
pub fn oracle_fixture(dir: &Path, scene: &Scene, extra: Value) -> PathBuf {
    write_map(dir, "map", &scene.map);
    write_mask(dir, "gt_mask.png", &scene.mask);
    scene.goal_image().save(dir.join("goal_answer.png")).unwrap();
    let mut cfg = json!({
        "map": "map.png",
        "backend": { "kind": "oracle", "oracle_mask": "gt_mask.png", "oracle_goal": "goal_answer.png" },
        "out_dir": "out",
    });
    merge(&mut cfg, extra);
    write_config(dir, "config.json", &cfg)
}

pub fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

pub fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}
