//! Deterministic fusion of rendered label maps with externally supplied
//! background and object segmentation masks.
//!
//! Two rules, applied in order:
//! 1. pixels without 3D projection (rendered = 255) take the background
//!    prediction;
//! 2. object masks paste over the result in descending confidence order
//!    (index breaks ties), except where the rendered map already holds a
//!    movable class — statically mapped parked movables win.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::map::{ClassRegistry, IGNORE_ID};
use crate::render::{read_pgm, write_pgm, LabelMap};

#[derive(Debug, thiserror::Error)]
pub enum FuseError {
    #[error("raster dimensions mismatch: {0}")]
    DimensionMismatch(String),
    #[error("object class {0} is not a movable class")]
    NotMovable(u16),
    #[error("confidence must be in [0, 1], got {0}")]
    InvalidConfidence(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("raster error: {0}")]
    Raster(#[from] crate::render::RasterIoError),
    #[error("mask sidecar parse error: {0}")]
    Sidecar(String),
}

/// A binary instance mask for one movable object with a confidence score.
#[derive(Debug, Clone)]
pub struct ObjectMask {
    pub class_id: u16,
    pub confidence: f64,
    width: u32,
    height: u32,
    pixels: Vec<bool>,
}

impl ObjectMask {
    pub fn new(
        class_id: u16,
        confidence: f64,
        width: u32,
        height: u32,
        pixels: Vec<bool>,
    ) -> Result<Self, FuseError> {
        assert_eq!(pixels.len(), width as usize * height as usize);
        if !(confidence.is_finite() && (0.0..=1.0).contains(&confidence)) {
            return Err(FuseError::InvalidConfidence(confidence));
        }
        Ok(Self {
            class_id,
            confidence,
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn covers(&self, idx: usize) -> bool {
        self.pixels[idx]
    }

    /// Reads a mask from a binary PGM (nonzero = covered) plus a sidecar
    /// text file `class_id confidence` next to it (`.txt` extension).
    pub fn read(pgm_path: &Path) -> Result<Self, FuseError> {
        let raster = read_pgm(pgm_path)?;
        let sidecar = pgm_path.with_extension("txt");
        let reader = BufReader::new(std::fs::File::open(&sidecar)?);
        let line = reader
            .lines()
            .next()
            .ok_or_else(|| FuseError::Sidecar(format!("{} is empty", sidecar.display())))??;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(FuseError::Sidecar(format!(
                "expected `class_id confidence`, got {line:?}"
            )));
        }
        let class_id: u16 = fields[0]
            .parse()
            .map_err(|e| FuseError::Sidecar(format!("bad class id: {e}")))?;
        let confidence: f64 = fields[1]
            .parse()
            .map_err(|e| FuseError::Sidecar(format!("bad confidence: {e}")))?;
        let pixels = raster.data().iter().map(|&v| v != 0).collect();
        Self::new(class_id, confidence, raster.width(), raster.height(), pixels)
    }

    /// Writes the mask PGM and its sidecar.
    pub fn write(&self, pgm_path: &Path) -> Result<(), FuseError> {
        let data: Vec<u16> = self.pixels.iter().map(|&p| u16::from(p)).collect();
        write_pgm(
            pgm_path,
            &LabelMap::from_data(self.width, self.height, data),
        )?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(
            pgm_path.with_extension("txt"),
        )?);
        writeln!(out, "{} {}", self.class_id, self.confidence)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FuseOptions {
    /// Masks below this confidence are ignored.
    pub confidence_threshold: f64,
}

impl Default for FuseOptions {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.9,
        }
    }
}

/// Fusion output: the label map plus the count of pixels left without data.
#[derive(Debug, Clone)]
pub struct FusedLabelMap {
    pub label: LabelMap,
    pub holes: usize,
}

/// Fuses a rendered label map with a background prediction and object masks.
pub fn fuse(
    rendered: &LabelMap,
    background: &LabelMap,
    objects: &[ObjectMask],
    registry: &ClassRegistry,
    opts: &FuseOptions,
) -> Result<FusedLabelMap, FuseError> {
    if !rendered.same_dims(background) {
        return Err(FuseError::DimensionMismatch(format!(
            "rendered {}x{} vs background {}x{}",
            rendered.width(),
            rendered.height(),
            background.width(),
            background.height()
        )));
    }
    for (i, obj) in objects.iter().enumerate() {
        if obj.width != rendered.width() || obj.height != rendered.height() {
            return Err(FuseError::DimensionMismatch(format!(
                "object {} is {}x{}, frame is {}x{}",
                i,
                obj.width,
                obj.height,
                rendered.width(),
                rendered.height()
            )));
        }
        if !registry.is_movable(obj.class_id) {
            return Err(FuseError::NotMovable(obj.class_id));
        }
    }

    let ignore = IGNORE_ID as u16;
    let n = rendered.data().len();
    let mut data: Vec<u16> = rendered.data().to_vec();
    // rule 1: fill pixels without 3D projection from the background
    for idx in 0..n {
        if data[idx] == ignore {
            data[idx] = background.data()[idx];
        }
    }
    // rule 2: paste objects, high confidence first (stable on index ties);
    // rendered static movables are never overwritten
    let mut order: Vec<usize> = (0..objects.len())
        .filter(|&i| objects[i].confidence >= opts.confidence_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        objects[b]
            .confidence
            .partial_cmp(&objects[a].confidence)
            .expect("finite confidence")
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; n];
    for &i in &order {
        let obj = &objects[i];
        for idx in 0..n {
            if !obj.covers(idx) || claimed[idx] {
                continue;
            }
            let rendered_class = rendered.data()[idx];
            if rendered_class != ignore && registry.is_movable(rendered_class) {
                continue;
            }
            data[idx] = obj.class_id;
            claimed[idx] = true;
        }
    }
    let holes = data.iter().filter(|&&v| v == ignore).count();
    Ok(FusedLabelMap {
        label: LabelMap::from_data(rendered.width(), rendered.height(), data),
        holes,
    })
}
