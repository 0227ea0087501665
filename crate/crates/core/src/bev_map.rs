//! Georeferenced BEV raster and pixel/world conversion.
//!
//! The georeference is an ESRI world file: six numbers, one per line, in the
//! order `A D B E C F`, describing
//!
//! ```text
//! x = A * col + B * row + C
//! y = D * col + E * row + F
//! ```
//!
//! with `(col, row)` measured at pixel centers. World coordinates are the
//! map frame; no datum or CRS is interpreted.

use std::fmt;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image: {0}")]
    Image(#[from] image::ImageError),
    #[error("malformed world file: {0}")]
    MalformedWorldFile(String),
    #[error("world-file affine is singular (A*E - D*B = {0})")]
    SingularAffine(f64),
    #[error("raster is empty")]
    EmptyRaster,
}

/// Sub-pixel image position. Integer values are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub col: f64,
    pub row: f64,
}

impl PixelCoord {
    pub fn new(col: f64, row: f64) -> Self {
        Self { col, row }
    }

    /// Nearest grid cell, or `None` when outside a `width x height` grid.
    pub fn to_cell(self, width: usize, height: usize) -> Option<Cell> {
        if !self.col.is_finite() || !self.row.is_finite() {
            return None;
        }
        let col = self.col.round();
        let row = self.row.round();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            return None;
        }
        Some(Cell::new(col as usize, row as usize))
    }
}

/// Metric position in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldCoord {
    pub x: f64,
    pub y: f64,
}

impl WorldCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: WorldCoord) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Integer grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }

    pub fn to_pixel(self) -> PixelCoord {
        PixelCoord::new(self.col as f64, self.row as f64)
    }

    pub fn distance(self, other: Cell) -> f64 {
        let dc = self.col as f64 - other.col as f64;
        let dr = self.row as f64 - other.row as f64;
        dc.hypot(dr)
    }

    pub fn squared_distance(self, other: Cell) -> u64 {
        let dc = self.col.abs_diff(other.col) as u64;
        let dr = self.row.abs_diff(other.row) as u64;
        dc * dc + dr * dr
    }

    pub fn is_adjacent8(self, other: Cell) -> bool {
        self != other && self.col.abs_diff(other.col) <= 1 && self.row.abs_diff(other.row) <= 1
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

/// World-file affine, fields named after the world-file letters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub a: f64,
    pub d: f64,
    pub b: f64,
    pub e: f64,
    pub c: f64,
    pub f: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { a: 1.0, d: 0.0, b: 0.0, e: 1.0, c: 0.0, f: 0.0 };

    /// Builds an affine from values in world-file order `A D B E C F`.
    pub fn from_world_file_order(v: [f64; 6]) -> Result<Self, MapError> {
        let affine = Affine { a: v[0], d: v[1], b: v[2], e: v[3], c: v[4], f: v[5] };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MapError::MalformedWorldFile("non-finite value".into()));
        }
        let det = affine.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(MapError::SingularAffine(det));
        }
        Ok(affine)
    }

    /// North-up affine with square pixels of `scale` meters whose top-left
    /// pixel center sits at `(x0, y0)`.
    pub fn north_up(scale: f64, x0: f64, y0: f64) -> Self {
        Affine { a: scale, d: 0.0, b: 0.0, e: -scale, c: x0, f: y0 }
    }

    pub fn to_world_file_order(&self) -> [f64; 6] {
        [self.a, self.d, self.b, self.e, self.c, self.f]
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.d * self.b
    }

    pub fn apply(&self, p: PixelCoord) -> WorldCoord {
        WorldCoord {
            x: self.a * p.col + self.b * p.row + self.c,
            y: self.d * p.col + self.e * p.row + self.f,
        }
    }

    pub fn invert(&self, w: WorldCoord) -> PixelCoord {
        let det = self.determinant();
        let dx = w.x - self.c;
        let dy = w.y - self.f;
        PixelCoord {
            col: (self.e * dx - self.b * dy) / det,
            row: (self.a * dy - self.d * dx) / det,
        }
    }

    /// Mean ground sampling distance in meters per pixel.
    pub fn mean_scale(&self) -> f64 {
        self.determinant().abs().sqrt()
    }

    pub fn parse_world_file(text: &str) -> Result<Self, MapError> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if lines.len() != 6 {
            return Err(MapError::MalformedWorldFile(format!(
                "expected 6 numeric lines, found {}",
                lines.len()
            )));
        }
        let mut values = [0.0; 6];
        for (slot, line) in values.iter_mut().zip(&lines) {
            *slot = line
                .parse::<f64>()
                .map_err(|_| MapError::MalformedWorldFile(format!("not a number: {line:?}")))?;
        }
        Self::from_world_file_order(values)
    }

    pub fn to_world_file_string(&self) -> String {
        self.to_world_file_order().iter().map(|v| format!("{v:.12}\n")).collect()
    }
}

/// BEV orthomosaic with its georeference. Immutable once built.
#[derive(Debug, Clone)]
pub struct BevMap {
    raster: RgbImage,
    affine: Affine,
}

impl BevMap {
    pub fn new(raster: RgbImage, affine: Affine) -> Result<Self, MapError> {
        if raster.width() == 0 || raster.height() == 0 {
            return Err(MapError::EmptyRaster);
        }
        let affine = Affine::from_world_file_order(affine.to_world_file_order())?;
        Ok(Self { raster, affine })
    }

    pub fn width(&self) -> usize {
        self.raster.width() as usize
    }

    pub fn height(&self) -> usize {
        self.raster.height() as usize
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn raster(&self) -> &RgbImage {
        &self.raster
    }

    pub fn pixel_to_world(&self, p: PixelCoord) -> WorldCoord {
        self.affine.apply(p)
    }

    pub fn world_to_pixel(&self, w: WorldCoord) -> PixelCoord {
        self.affine.invert(w)
    }

    pub fn cell_to_world(&self, c: Cell) -> WorldCoord {
        self.affine.apply(c.to_pixel())
    }

    /// Grid cell containing a world position, if it lies on the map.
    pub fn world_to_cell(&self, w: WorldCoord) -> Option<Cell> {
        self.world_to_pixel(w).to_cell(self.width(), self.height())
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.to_cell(self.width(), self.height()).is_some()
    }
}

/// Loads a raster (PNG or TIFF, converted to RGB8) and its world-file sidecar.
pub fn load_map(raster_path: &Path, worldfile_path: &Path) -> Result<BevMap, MapError> {
    let text = std::fs::read_to_string(worldfile_path).map_err(|source| MapError::Io {
        path: worldfile_path.display().to_string(),
        source,
    })?;
    let affine = Affine::parse_world_file(&text)?;
    let raster = image::open(raster_path)?.to_rgb8();
    BevMap::new(raster, affine)
}
