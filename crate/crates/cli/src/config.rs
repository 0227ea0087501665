//! Run configuration: a JSON document with one section per pipeline stage.
//!
//! Relative paths are resolved against the directory holding the config
//! file, and every referenced file must exist when the config is loaded.

use std::path::{Path, PathBuf};

use pathpainter::benchmark::LengthMode;
use pathpainter::generation::{BackendConfig, BackendKind, GoalExtraction};
use pathpainter::{CostParams, SimConfig, ThresholdRule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Orthomosaic raster (PNG or TIFF).
    pub map: Option<PathBuf>,
    /// World file; defaults to the raster's sidecar (`.pgw`, `.tfw`, `.wld`).
    pub world_file: Option<PathBuf>,
    /// Traversability mask image. When absent the mask is requested from the
    /// backend.
    pub mask: Option<PathBuf>,
    pub mask_rule: ThresholdRule,
    /// Open/close radius applied to masks before planning; 0 disables it.
    pub cleanup_radius_px: usize,
    pub backend: Option<BackendConfig>,
    /// Directory with `mask.txt` and/or `goal.txt` replacing the built-in
    /// prompt templates.
    pub prompt_dir: Option<PathBuf>,
    pub cost: CostParams,
    /// Route the middle of the path along the mask skeleton.
    pub skeleton: bool,
    /// Drop waypoints that have line of sight past them.
    pub simplify: bool,
    pub goal_extraction: GoalExtraction,
    pub sim: SimConfig,
    pub bench: BenchConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: None,
            world_file: None,
            mask: None,
            mask_rule: ThresholdRule::default(),
            cleanup_radius_px: 1,
            backend: None,
            prompt_dir: None,
            cost: CostParams::default(),
            skeleton: false,
            simplify: false,
            goal_extraction: GoalExtraction::default(),
            sim: SimConfig::default(),
            bench: BenchConfig::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n: usize,
    /// Defaults to 100 px scaled from a 2048 px image side.
    pub min_sep_px: Option<f64>,
    pub snap_radius_px: usize,
    pub length: LengthMode,
    /// Penalty used when planning on predictions; 0 gives plain shortest paths.
    pub lambda: f64,
    pub d_sat: f64,
    /// Worker threads for pair evaluation; 0 or 1 runs sequentially.
    pub parallel: usize,
    /// Include wall-clock timings in the JSON report.
    pub record_timing: bool,
    pub dataset: Option<String>,
    pub backend_id: Option<String>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            min_sep_px: None,
            snap_radius_px: 0,
            length: LengthMode::Steps,
            lambda: 0.0,
            d_sat: CostParams::default().d_sat,
            parallel: 1,
            record_timing: false,
            dataset: None,
            backend_id: None,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub lambda: Option<f64>,
    pub d_sat: Option<f64>,
    pub lookahead_m: Option<f64>,
    pub n: Option<usize>,
    pub min_sep_px: Option<f64>,
    pub parallel: Option<usize>,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `replay:DIR`, `http:URL` or `oracle:MASK[,GOAL]`. A bare
/// `http://` or `https://` URL selects the HTTP backend.
pub fn parse_backend_spec(spec: &str) -> Result<BackendConfig, CliError> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(BackendConfig::http(spec));
    }
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| cfg_err(format!("backend '{spec}' is not of the form kind:value")))?;
    let cfg = match kind {
        "replay" => BackendConfig::replay(rest),
        "http" => BackendConfig::http(rest),
        "oracle" => {
            let mut parts = rest.splitn(2, ',');
            let mask = parts.next().filter(|s| !s.is_empty()).map(PathBuf::from);
            let goal = parts.next().filter(|s| !s.is_empty()).map(PathBuf::from);
            BackendConfig::oracle(mask, goal)
        }
        other => return Err(cfg_err(format!("unknown backend kind '{other}'"))),
    };
    Ok(cfg)
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn sidecar_for(raster: &Path) -> Option<PathBuf> {
    let ext = raster.extension()?.to_string_lossy().to_ascii_lowercase();
    let mut candidates = Vec::new();
    if let (Some(first), Some(last)) = (ext.chars().next(), ext.chars().last()) {
        candidates.push(format!("{first}{last}w"));
    }
    candidates.push(format!("{ext}w"));
    candidates.push("wld".into());
    candidates.into_iter().map(|e| raster.with_extension(e)).find(|p| p.is_file())
}

impl RunConfig {
    /// Reads a config file, or the defaults when `path` is `None`, then
    /// applies `overrides` and checks it.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let (mut cfg, base) = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| cfg_err(format!("cannot read config {}: {e}", p.display())))?;
                let cfg: RunConfig =
                    serde_json::from_str(&text).map_err(|e| cfg_err(format!("config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, base)
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        cfg.resolve_paths(&base);
        cfg.apply(overrides)?;
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.map);
        resolve(base, &mut self.world_file);
        resolve(base, &mut self.mask);
        resolve(base, &mut self.prompt_dir);
        if let Some(b) = &mut self.backend {
            b.resolve_paths(base);
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
            self.sim.rng_seed = s;
        }
        if let Some(spec) = &o.backend {
            self.backend = Some(parse_backend_spec(spec)?);
        }
        if let Some(l) = o.lambda {
            self.cost.lambda = l;
        }
        if let Some(d) = o.d_sat {
            self.cost.d_sat = d;
            self.bench.d_sat = d;
        }
        if let Some(l) = o.lookahead_m {
            self.sim.lookahead_m = l;
        }
        if let Some(n) = o.n {
            self.bench.n = n;
        }
        if let Some(m) = o.min_sep_px {
            self.bench.min_sep_px = Some(m);
        }
        if let Some(p) = o.parallel {
            self.bench.parallel = p;
        }
        Ok(())
    }

    fn check(&mut self) -> Result<(), CliError> {
        let must_exist = |what: &str, p: &Option<PathBuf>, dir: bool| -> Result<(), CliError> {
            match p {
                Some(p) if (dir && !p.is_dir()) || (!dir && !p.is_file()) => {
                    Err(cfg_err(format!("{what} {} does not exist", p.display())))
                }
                _ => Ok(()),
            }
        };
        must_exist("map", &self.map, false)?;
        must_exist("world_file", &self.world_file, false)?;
        must_exist("mask", &self.mask, false)?;
        must_exist("prompt_dir", &self.prompt_dir, true)?;
        if let Some(b) = &self.backend {
            b.validate().map_err(|e| cfg_err(e.to_string()))?;
            must_exist("backend replay_dir", &b.replay_dir, true)?;
            if b.kind == BackendKind::Oracle {
                must_exist("backend oracle_mask", &b.oracle_mask, false)?;
                must_exist("backend oracle_goal", &b.oracle_goal, false)?;
            }
        }
        if let (Some(map), None) = (&self.map, &self.world_file) {
            self.world_file = Some(
                sidecar_for(map)
                    .ok_or_else(|| cfg_err(format!("no world file given and no sidecar found for {}", map.display())))?,
            );
        }
        self.cost.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.bench_params().validate().map_err(|e| cfg_err(format!("bench: {e}")))?;
        self.sim.validate().map_err(|e| cfg_err(e.to_string()))?;
        if self.bench.n == 0 {
            return Err(cfg_err("bench.n must be at least 1"));
        }
        if self.bench.min_sep_px.is_some_and(|m| !(m >= 0.0 && m.is_finite())) {
            return Err(cfg_err("bench.min_sep_px must be a non-negative number"));
        }
        Ok(())
    }

    pub fn bench_params(&self) -> CostParams {
        CostParams { lambda: self.bench.lambda, d_sat: self.bench.d_sat, ..CostParams::default() }
    }
}
