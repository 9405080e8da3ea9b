//! Thermal frame ingestion, radiometric calibration and per-person
//! temperature screening.

pub mod pnm;

use std::path::Path;

use crate::engine::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

use pnm::{PnmImage, PnmKind};

/// Linear map from raw counts to degrees Celsius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TempCalibration {
    pub slope: f64,
    pub offset: f64,
}

impl TempCalibration {
    pub fn new(slope: f64, offset: f64) -> Result<Self> {
        if slope == 0.0 || !slope.is_finite() || !offset.is_finite() {
            return Err(Error::Domain(format!(
                "calibration needs a finite non-zero slope and finite offset, got {slope} / {offset}"
            )));
        }
        Ok(Self { slope, offset })
    }

    pub fn celsius(&self, raw: u16) -> f64 {
        self.slope * raw as f64 + self.offset
    }
}

pub fn to_celsius(raw: u16, cal: Option<&TempCalibration>) -> Result<f64> {
    cal.map(|c| c.celsius(raw))
        .ok_or_else(|| Error::Config("no temperature calibration configured".into()))
}

/// A single-channel thermal frame. 8-bit sources are widened to `u16`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalFrame {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Largest representable count (255 for 8-bit sources).
    pub max_value: u16,
    pub pixels: Vec<u16>,
    pub calibration: Option<TempCalibration>,
}

impl ThermalFrame {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        max_value: u16,
        pixels: Vec<u16>,
    ) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} frame needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            max_value,
            pixels,
            calibration: None,
        })
    }

    pub fn with_calibration(mut self, cal: Option<TempCalibration>) -> Self {
        self.calibration = cal;
        self
    }

    pub fn pixel(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Count rescaled to 0..=255 for display.
    pub fn display_level(&self, x: usize, y: usize) -> u8 {
        let v = self.pixel(x, y) as u32;
        let max = self.max_value.max(1) as u32;
        ((v.min(max) * 255 + max / 2) / max) as u8
    }

    /// Network input: counts normalized to [0, 1], replicated over
    /// `shape.channels`, nearest-neighbour resampled to the tensor size.
    pub fn to_tensor(&self, shape: Shape) -> Result<Tensor> {
        if shape.is_empty() {
            return Err(Error::Shape(format!("cannot sample a frame into {shape}")));
        }
        let max = self.max_value.max(1) as f32;
        Tensor::from_fn(shape, |_, y, x| {
            let sy = y * self.height / shape.height;
            let sx = x * self.width / shape.width;
            self.pixel(sx, sy) as f32 / max
        })
    }
}

/// Decodes a binary graymap or pixmap. Pixmaps are reduced to luminance
/// with integer Rec. 601 weights.
pub fn load_frame(id: impl Into<String>, bytes: &[u8]) -> Result<ThermalFrame> {
    let img = pnm::decode(bytes)?;
    let pixels = match img.kind {
        PnmKind::Graymap => img.samples,
        PnmKind::Pixmap => img
            .samples
            .chunks_exact(3)
            .map(|rgb| {
                let y = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
                ((y + 500) / 1000) as u16
            })
            .collect(),
    };
    ThermalFrame::new(id, img.width, img.height, img.max_value, pixels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// Parses a raw16 sidecar line: `width height endianness` where endianness
/// is `le`/`little` or `be`/`big`.
pub fn parse_raw16_sidecar(text: &str) -> Result<(usize, usize, Endianness)> {
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [w, h, e] = fields.as_slice() else {
        return Err(Error::parse(
            0,
            "raw16 sidecar must read `width height endianness`",
        ));
    };
    let dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    let (Some(width), Some(height)) = (dim(w), dim(h)) else {
        return Err(Error::parse(0, format!("bad raw16 dimensions `{w} {h}`")));
    };
    let endianness = match e.to_ascii_lowercase().as_str() {
        "le" | "little" => Endianness::Little,
        "be" | "big" => Endianness::Big,
        other => return Err(Error::parse(0, format!("unknown endianness `{other}`"))),
    };
    Ok((width, height, endianness))
}

pub fn load_raw16(id: impl Into<String>, bytes: &[u8], sidecar: &str) -> Result<ThermalFrame> {
    let (width, height, endianness) = parse_raw16_sidecar(sidecar)?;
    let expected = width * height * 2;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let pixels = bytes[..expected]
        .chunks_exact(2)
        .map(|c| match endianness {
            Endianness::Little => u16::from_le_bytes([c[0], c[1]]),
            Endianness::Big => u16::from_be_bytes([c[0], c[1]]),
        })
        .collect();
    ThermalFrame::new(id, width, height, u16::MAX, pixels)
}

/// Loads a frame from disk, picking the decoder by extension. `*.raw16`
/// files read their dimensions from a sibling `*.hdr` sidecar.
pub fn load_frame_path(path: &Path) -> Result<ThermalFrame> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("raw16"))
    {
        let sidecar_path = path.with_extension("hdr");
        let sidecar =
            std::fs::read_to_string(&sidecar_path).map_err(|e| Error::file(&sidecar_path, e))?;
        return load_raw16(id, &bytes, &sidecar);
    }
    load_frame(id, &bytes)
}

/// Encodes the frame as a binary graymap with its own `max_value`.
pub fn write_frame(frame: &ThermalFrame) -> Vec<u8> {
    pnm::encode(&PnmImage {
        kind: PnmKind::Graymap,
        width: frame.width,
        height: frame.height,
        max_value: frame.max_value,
        samples: frame.pixels.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RoiStatistic {
    Max,
    /// Nearest-rank percentile, p in (0, 100].
    Percentile(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeverConfig {
    pub fever_threshold_c: f64,
    pub statistic: RoiStatistic,
}

impl Default for FeverConfig {
    fn default() -> Self {
        Self {
            fever_threshold_c: 37.5,
            statistic: RoiStatistic::Percentile(95.0),
        }
    }
}

impl FeverConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fever_threshold_c.is_finite() {
            return Err(Error::Domain("fever threshold must be finite".into()));
        }
        if let RoiStatistic::Percentile(p) = self.statistic {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::Domain(format!(
                    "percentile must lie in (0, 100], got {p}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersonTemperature {
    pub box_index: usize,
    pub temperature_c: f64,
    pub fever: bool,
}

/// Pixel index ranges covered by `bbox`, clipped to the frame. A pixel is
/// included when any part of it lies under the box.
pub fn roi_bounds(
    frame: &ThermalFrame,
    bbox: &BoundingBox,
) -> Option<(usize, usize, usize, usize)> {
    let span = |lo: f64, len: f64, limit: usize| {
        let a = lo.floor().max(0.0);
        let b = (lo + len).ceil().min(limit as f64);
        (b > a).then_some((a as usize, b as usize))
    };
    let (x0, x1) = span(bbox.x, bbox.w, frame.width)?;
    let (y0, y1) = span(bbox.y, bbox.h, frame.height)?;
    Some((x0, x1, y0, y1))
}

/// Calibrated statistic over the clipped box.
pub fn roi_temperature(
    frame: &ThermalFrame,
    bbox: &BoundingBox,
    statistic: RoiStatistic,
) -> Result<f64> {
    let cal = frame.calibration.ok_or_else(|| {
        Error::Config(format!(
            "frame `{}` has no temperature calibration",
            frame.id
        ))
    })?;
    let (x0, x1, y0, y1) = roi_bounds(frame, bbox).ok_or_else(|| {
        Error::EmptyRoi(format!("box {bbox:?} lies outside frame `{}`", frame.id))
    })?;
    let mut temps: Vec<f64> = (y0..y1)
        .flat_map(|y| (x0..x1).map(move |x| (x, y)))
        .map(|(x, y)| cal.celsius(frame.pixel(x, y)))
        .collect();
    Ok(match statistic {
        RoiStatistic::Max => temps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        RoiStatistic::Percentile(p) => {
            temps.sort_by(f64::total_cmp);
            temps[nearest_rank(p, temps.len()) - 1]
        }
    })
}

/// 1-based nearest rank: `ceil(p/100 · n)`, at least 1.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    ((p * n as f64 / 100.0).ceil() as usize).clamp(1, n)
}

pub fn person_temperature(
    frame: &ThermalFrame,
    box_index: usize,
    bbox: &BoundingBox,
    cfg: &FeverConfig,
) -> Result<PersonTemperature> {
    cfg.validate()?;
    let temperature_c = roi_temperature(frame, bbox, cfg.statistic)?;
    Ok(PersonTemperature {
        box_index,
        temperature_c,
        fever: temperature_c >= cfg.fever_threshold_c,
    })
}
