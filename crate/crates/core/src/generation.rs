//! Client side of the image-generation step.
//!
//! The start position is marked on the map with a green star, the backend is
//! asked for a traversability mask and (separately) for the same map with the
//! destination marked, and the destination is recovered by diffing the
//! returned image against the request.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use base64::engine::general_purpose::STANDARD as B64;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev_map::{BevMap, PixelCoord};
use crate::traversability::label_components;

pub const STAR_OUTER_RADIUS_PX: f64 = 12.0;
pub const STAR_INNER_RADIUS_PX: f64 = 5.0;
pub const START_MARKER_COLOR: [u8; 3] = [0, 255, 0];

pub const DEFAULT_TIMEOUT_S: f64 = 120.0;
pub const TOKEN_ENV_VAR: &str = "PATHPAINTER_BACKEND_TOKEN";
const REPLAY_KEY_DOMAIN: &[u8] = b"pathpainter-replay-v1\0";
const MAX_RESPONSE_BYTES: u64 = 512 * 1024 * 1024;

const MASK_PROMPT: &str = include_str!("../assets/prompts/mask.txt");
const GOAL_PROMPT: &str = include_str!("../assets/prompts/goal.txt");

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("start marker position ({}, {}) is outside the {width}x{height} map", .at.col, .at.row)]
    StartOutOfBounds { at: PixelCoord, width: usize, height: usize },
    #[error("result image is {result:?} but the original is {original:?}")]
    DimensionMismatch { result: (u32, u32), original: (u32, u32) },
    #[error("no goal marker found: {0}")]
    NoGoalFound(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("replay miss: no recorded response {}", .0.display())]
    ReplayMiss(PathBuf),
    #[error("backend timed out after {0} s")]
    Timeout(f64),
    #[error("backend returned HTTP status {0}")]
    Status(u16),
    #[error("backend response could not be decoded: {0}")]
    BadBody(String),
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io { path: path.to_path_buf(), source }
}

/// Vertices of a five-pointed star around `center`, first tip pointing up
/// (towards smaller rows), alternating outer and inner radius.
pub fn star_polygon(center: PixelCoord, outer: f64, inner: f64) -> [(f64, f64); 10] {
    std::array::from_fn(|i| {
        let r = if i % 2 == 0 { outer } else { inner };
        let a = std::f64::consts::PI * i as f64 / 5.0;
        (center.col + r * a.sin(), center.row - r * a.cos())
    })
}

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Fills a star in place; a pixel is painted when its centre lies inside the
/// polygon. Returns the number of pixels painted.
pub fn stamp_star(
    raster: &mut RgbImage,
    center: PixelCoord,
    outer: f64,
    inner: f64,
    color: [u8; 3],
) -> usize {
    let poly = star_polygon(center, outer, inner);
    let (w, h) = (raster.width() as i64, raster.height() as i64);
    let c0 = ((center.col - outer).floor() as i64).max(0);
    let c1 = ((center.col + outer).ceil() as i64).min(w - 1);
    let r0 = ((center.row - outer).floor() as i64).max(0);
    let r1 = ((center.row + outer).ceil() as i64).min(h - 1);
    let mut painted = 0;
    for row in r0..=r1 {
        for col in c0..=c1 {
            if point_in_polygon(col as f64, row as f64, &poly) {
                raster.put_pixel(col as u32, row as u32, Rgb(color));
                painted += 1;
            }
        }
    }
    painted
}

/// Copy of the map raster with the start marker drawn at `start`.
pub fn annotate_start(map: &BevMap, start: PixelCoord) -> Result<RgbImage, GenError> {
    let (w, h) = (map.width(), map.height());
    if start.to_cell(w, h).is_none() {
        return Err(GenError::StartOutOfBounds { at: start, width: w, height: h });
    }
    let mut out = map.raster().clone();
    stamp_star(&mut out, start, STAR_OUTER_RADIUS_PX, STAR_INNER_RADIUS_PX, START_MARKER_COLOR);
    Ok(out)
}

/// Nearest-neighbour resize of a backend result to the request size; a
/// no-op copy when the sizes already agree.
pub fn conform_size(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    image::imageops::resize(img, width, height, image::imageops::FilterType::Nearest)
}

/// Thresholds for diff-based goal extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalExtraction {
    /// Minimum absolute difference on any channel for a pixel to count as changed.
    pub diff_threshold: u8,
    /// Changes within this many pixels of the start are ignored.
    pub start_exclusion_px: f64,
    /// Blobs smaller than this are not accepted as a marker.
    pub min_blob_px: usize,
}

impl Default for GoalExtraction {
    fn default() -> Self {
        Self { diff_threshold: 40, start_exclusion_px: 30.0, min_blob_px: 10 }
    }
}

pub fn extract_goal(
    result: &RgbImage,
    original: &RgbImage,
    start: PixelCoord,
) -> Result<PixelCoord, GenError> {
    extract_goal_with(result, original, start, &GoalExtraction::default())
}

/// Centroid of the largest 8-connected blob of changed pixels outside the
/// start exclusion zone.
pub fn extract_goal_with(
    result: &RgbImage,
    original: &RgbImage,
    start: PixelCoord,
    params: &GoalExtraction,
) -> Result<PixelCoord, GenError> {
    if result.dimensions() != original.dimensions() {
        return Err(GenError::DimensionMismatch {
            result: result.dimensions(),
            original: original.dimensions(),
        });
    }
    let (w, h) = (result.width() as usize, result.height() as usize);
    let excl2 = params.start_exclusion_px * params.start_exclusion_px;
    let changed: Vec<bool> = result
        .pixels()
        .zip(original.pixels())
        .enumerate()
        .map(|(i, (a, b))| {
            let differs = a.0.iter().zip(b.0.iter()).any(|(&x, &y)| x.abs_diff(y) >= params.diff_threshold);
            let (dc, dr) = ((i % w) as f64 - start.col, (i / w) as f64 - start.row);
            differs && dc * dc + dr * dr > excl2
        })
        .collect();
    let comps = label_components(w, h, &changed);
    let Some(label) = comps.largest() else {
        return Err(GenError::NoGoalFound("result does not differ from the request".into()));
    };
    let size = comps.sizes[label as usize - 1];
    if size < params.min_blob_px {
        return Err(GenError::NoGoalFound(format!(
            "largest changed region has {size} px, fewer than {}",
            params.min_blob_px
        )));
    }
    let (mut sc, mut sr) = (0.0, 0.0);
    for (i, _) in comps.labels.iter().enumerate().filter(|(_, l)| **l == label) {
        sc += (i % w) as f64;
        sr += (i / w) as f64;
    }
    Ok(PixelCoord::new(sc / size as f64, sr / size as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mask,
    Goal,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mask => "mask",
            Task::Goal => "goal",
        }
    }
}

/// Prompt text sent with each task. `{instruction}` in the goal template is
/// replaced by the user's instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub mask: String,
    pub goal: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self { mask: MASK_PROMPT.to_owned(), goal: GOAL_PROMPT.to_owned() }
    }
}

impl PromptTemplates {
    pub fn mask_prompt(&self) -> String {
        self.mask.clone()
    }

    pub fn goal_prompt(&self, instruction: &str) -> String {
        self.goal.replace("{instruction}", instruction.trim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    map_png: Vec<u8>,
    prompt: String,
    task: Task,
}

impl GenerationRequest {
    pub fn new(map_png: Vec<u8>, prompt: impl Into<String>, task: Task) -> Result<Self, GenError> {
        let prompt = prompt.into();
        if task == Task::Goal && prompt.trim().is_empty() {
            return Err(GenError::InvalidRequest("goal requests need a non-empty prompt".into()));
        }
        image::load_from_memory(&map_png)
            .map_err(|e| GenError::InvalidRequest(format!("map image does not decode: {e}")))?;
        Ok(Self { map_png, prompt, task })
    }

    pub fn from_raster(raster: &RgbImage, prompt: impl Into<String>, task: Task) -> Result<Self, GenError> {
        Self::new(crate::io::encode_png(raster.clone()), prompt, task)
    }

    pub fn map_png(&self) -> &[u8] {
        &self.map_png
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Lowercase hex SHA-256 over the task, the length-prefixed prompt and
    /// the image bytes.
    pub fn replay_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(REPLAY_KEY_DOMAIN);
        h.update(self.task.as_str().as_bytes());
        h.update(b"\0");
        h.update((self.prompt.len() as u64).to_le_bytes());
        h.update(self.prompt.as_bytes());
        h.update(&self.map_png);
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub image_png: Vec<u8>,
    pub backend_id: String,
    pub latency_s: f64,
}

impl GenerationResponse {
    pub fn decode_rgb(&self) -> Result<RgbImage, GenError> {
        image::load_from_memory(&self.image_png)
            .map(|img| img.to_rgb8())
            .map_err(|e| GenError::BadBody(format!("response image does not decode: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Replay,
    Http,
    Oracle,
}

/// Backend selection. Only the fields belonging to `kind` are consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_dir: Option<PathBuf>,
    /// Image returned for mask requests by the oracle backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_mask: Option<PathBuf>,
    /// Image returned for goal requests by the oracle backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_goal: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

impl BackendConfig {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Self { replay_dir: Some(dir.into()), ..Self::empty(BackendKind::Replay) }
    }

    pub fn http(url: impl Into<String>) -> Self {
        Self { endpoint_url: Some(url.into()), ..Self::empty(BackendKind::Http) }
    }

    pub fn oracle(mask: Option<PathBuf>, goal: Option<PathBuf>) -> Self {
        Self { oracle_mask: mask, oracle_goal: goal, ..Self::empty(BackendKind::Oracle) }
    }

    fn empty(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint_url: None,
            replay_dir: None,
            oracle_mask: None,
            oracle_goal: None,
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(GenError::InvalidConfig(format!("timeout_s must be positive, got {}", self.timeout_s)));
        }
        let missing = match self.kind {
            BackendKind::Replay if self.replay_dir.is_none() => Some("replay_dir"),
            BackendKind::Http if self.endpoint_url.as_deref().is_none_or(str::is_empty) => Some("endpoint_url"),
            BackendKind::Oracle if self.oracle_mask.is_none() && self.oracle_goal.is_none() => {
                Some("oracle_mask or oracle_goal")
            }
            _ => None,
        };
        match missing {
            Some(field) => Err(GenError::InvalidConfig(format!(
                "{} backend requires {field}",
                serde_json::to_string(&self.kind).unwrap_or_default().trim_matches('"')
            ))),
            None => Ok(()),
        }
    }

    /// Turns relative paths into paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.replay_dir, &mut self.oracle_mask, &mut self.oracle_goal].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Something that turns a request into result image bytes.
pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> String;
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, GenError>;
}

/// Serves previously recorded responses stored as `<replay_key>.png`.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, request: &GenerationRequest) -> PathBuf {
        self.dir.join(format!("{}.png", request.replay_key()))
    }

    /// Stores `image_png` as the recorded response to `request`.
    pub fn record(&self, request: &GenerationRequest, image_png: &[u8]) -> Result<PathBuf, GenError> {
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.path_for(request);
        crate::io::write_atomic(&path, image_png).map_err(io_err(&path))?;
        Ok(path)
    }
}

impl GenerationBackend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay:{}", self.dir.display())
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, GenError> {
        let path = self.path_for(request);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(GenError::ReplayMiss(path)),
            Err(e) => Err(GenError::Io { path, source: e }),
        }
    }
}

/// Returns fixed ground-truth images regardless of the request contents.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    mask_png: Option<Vec<u8>>,
    goal_png: Option<Vec<u8>>,
}

impl OracleBackend {
    pub fn new(mask_png: Option<Vec<u8>>, goal_png: Option<Vec<u8>>) -> Self {
        Self { mask_png, goal_png }
    }
}

impl GenerationBackend for OracleBackend {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, GenError> {
        let image = match request.task {
            Task::Mask => &self.mask_png,
            Task::Goal => &self.goal_png,
        };
        image.clone().ok_or_else(|| {
            GenError::InvalidConfig(format!("oracle backend has no {} image", request.task.as_str()))
        })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    task: &'a str,
    prompt: &'a str,
    image_b64: String,
}

#[derive(Deserialize)]
struct WireResponse {
    image_b64: String,
}

/// JSON-over-HTTP backend.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint_url: String,
    timeout_s: f64,
    bearer_token: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint_url: impl Into<String>, timeout_s: f64, bearer_token: Option<String>) -> Self {
        Self { endpoint_url: endpoint_url.into(), timeout_s, bearer_token }
    }

    fn map_transport(&self, e: ureq::Error) -> GenError {
        match e {
            ureq::Error::Timeout(_) => GenError::Timeout(self.timeout_s),
            ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
                GenError::Timeout(self.timeout_s)
            }
            ureq::Error::StatusCode(code) => GenError::Status(code),
            ureq::Error::Json(e) => GenError::BadBody(e.to_string()),
            other => GenError::Transport(other.to_string()),
        }
    }
}

impl GenerationBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint_url)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, GenError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut post = agent.post(&self.endpoint_url);
        if let Some(token) = &self.bearer_token {
            post = post.header("Authorization", format!("Bearer {token}"));
        }
        let body = WireRequest {
            task: request.task.as_str(),
            prompt: &request.prompt,
            image_b64: B64.encode(&request.map_png),
        };
        let mut response = post.send_json(&body).map_err(|e| self.map_transport(e))?;
        let status = response.status().as_u16();
        if status != 200 {
            return Err(GenError::Status(status));
        }
        let mut raw = Vec::new();
        response
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .reader()
            .read_to_end(&mut raw)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::TimedOut => GenError::Timeout(self.timeout_s),
                _ => GenError::Transport(e.to_string()),
            })?;
        let wire: WireResponse = serde_json::from_slice(&raw).map_err(|e| GenError::BadBody(e.to_string()))?;
        let png = B64
            .decode(wire.image_b64.trim())
            .map_err(|e| GenError::BadBody(format!("image_b64: {e}")))?;
        image::load_from_memory(&png).map_err(|e| GenError::BadBody(format!("image does not decode: {e}")))?;
        Ok(png)
    }
}

/// Wraps a backend with an in-memory response cache keyed by request hash.
pub struct CachedBackend<B> {
    inner: B,
    cache: Mutex<HashMap<String, Vec<u8>>>,
}

impl<B: GenerationBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).len()
    }
}

impl<B: GenerationBackend> GenerationBackend for CachedBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<u8>, GenError> {
        let key = request.replay_key();
        if let Some(hit) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let bytes = self.inner.generate(request)?;
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).insert(key, bytes.clone());
        Ok(bytes)
    }
}

/// Instantiates the backend described by `config`. The HTTP bearer token is
/// read from [`TOKEN_ENV_VAR`] when set.
pub fn backend_from_config(config: &BackendConfig) -> Result<Box<dyn GenerationBackend>, GenError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Replay => Box::new(ReplayBackend::new(config.replay_dir.clone().unwrap_or_default())),
        BackendKind::Http => {
            let token = std::env::var(TOKEN_ENV_VAR).ok().filter(|t| !t.is_empty());
            Box::new(HttpBackend::new(config.endpoint_url.clone().unwrap_or_default(), config.timeout_s, token))
        }
        BackendKind::Oracle => {
            let read = |p: &Option<PathBuf>| -> Result<Option<Vec<u8>>, GenError> {
                p.as_deref().map(|p| std::fs::read(p).map_err(io_err(p))).transpose()
            };
            Box::new(OracleBackend::new(read(&config.oracle_mask)?, read(&config.oracle_goal)?))
        }
    })
}

pub fn fetch(config: &BackendConfig, request: &GenerationRequest) -> Result<GenerationResponse, GenError> {
    fetch_with(backend_from_config(config)?.as_ref(), request)
}

/// Runs one request and checks that the returned bytes decode as an image.
pub fn fetch_with(
    backend: &dyn GenerationBackend,
    request: &GenerationRequest,
) -> Result<GenerationResponse, GenError> {
    let t0 = Instant::now();
    let image_png = backend.generate(request)?;
    let latency_s = t0.elapsed().as_secs_f64();
    image::load_from_memory(&image_png)
        .map_err(|e| GenError::BadBody(format!("response image does not decode: {e}")))?;
    Ok(GenerationResponse { image_png, backend_id: backend.id(), latency_s })
}
