//! Batch processing of a directory of thermal frames.
//!
//! Each frame goes through detection, distancing, optional temperature
//! screening and rendering. Per-frame failures are recorded in the report
//! and do not stop the run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{DetectorMode, PipelineConfig};
use crate::distancing::{assess_frame, FrameAssessment};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::json::{assessment_json, parse_detections, Json};
use crate::model::Model;
use crate::render::{render_annotated, RgbImage};
use crate::thermal::{load_frame_path, person_temperature, PersonTemperature, ThermalFrame};
use crate::yolo::{Detection, Detector};

pub const FRAME_EXTENSIONS: &[&str] = &["pgm", "ppm", "pnm", "raw16"];
pub const REPORT_FILE: &str = "report.json";

/// Where detections come from. External detections never run the network.
pub enum DetectionSource {
    Model(Box<Detector>),
    External(HashMap<String, Vec<Detection>>),
}

impl DetectionSource {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        cfg.decode.validate()?;
        match &cfg.detector {
            DetectorMode::External { path } => load_external(path).map(Self::External),
            DetectorMode::Inference { weights, netspec } => {
                let model = Model::load(netspec, weights)?;
                let (_, head, anchors) = model.head.ok_or_else(|| {
                    Error::Config(format!("{} declares no detection head", netspec.display()))
                })?;
                let input = model.net.input_shape();
                if input.height != input.width || input.height != cfg.decode.input_size {
                    return Err(Error::Config(format!(
                        "decode.input_size {} does not match the network input {input}",
                        cfg.decode.input_size
                    )));
                }
                Ok(Self::Model(Box::new(Detector {
                    net: model.net,
                    head,
                    anchors,
                    config: cfg.decode,
                })))
            }
        }
    }

    /// Person detections in frame coordinates.
    pub fn detect(&self, frame: &ThermalFrame, cfg: &PipelineConfig) -> Result<Vec<Detection>> {
        match self {
            Self::External(map) => Ok(map
                .get(&frame.id)
                .map(|dets| {
                    dets.iter()
                        .filter(|d| d.score >= cfg.decode.confidence_threshold)
                        .copied()
                        .collect()
                })
                .unwrap_or_default()),
            Self::Model(detector) => Ok(detect_frame(detector, frame)?
                .into_iter()
                .filter(|d| d.class_id == 0)
                .collect()),
        }
    }
}

/// Runs the detector on a frame resampled to the network input and maps
/// the detections back to frame coordinates.
pub fn detect_frame(detector: &Detector, frame: &ThermalFrame) -> Result<Vec<Detection>> {
    let input = detector.net.input_shape();
    let tensor = frame.to_tensor(input)?;
    let sx = frame.width as f64 / input.width as f64;
    let sy = frame.height as f64 / input.height as f64;
    Ok(detector
        .detect(&tensor)?
        .into_iter()
        .map(|d| Detection {
            bbox: BoundingBox::new(d.bbox.x * sx, d.bbox.y * sy, d.bbox.w * sx, d.bbox.h * sy),
            ..d
        })
        .collect())
}

/// Reads external detections from a JSON-lines file, or from a directory
/// holding one `<frame>.json` per frame.
pub fn load_external(path: &Path) -> Result<HashMap<String, Vec<Detection>>> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::file(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut map: HashMap<String, Vec<Detection>> = HashMap::new();
    for file in files {
        let text = std::fs::read_to_string(&file).map_err(|e| Error::file(&file, e))?;
        let records = parse_detections(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", file.display())))?;
        for rec in records {
            if map.insert(rec.frame.clone(), rec.detections).is_some() {
                return Err(Error::Config(format!(
                    "{}: frame `{}` listed twice",
                    file.display(),
                    rec.frame
                )));
            }
        }
    }
    Ok(map)
}

/// Frame files directly inside `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub frame: String,
    pub boxes: Vec<BoundingBox>,
    pub assessment: FrameAssessment,
    pub temperatures: Vec<PersonTemperature>,
    pub image: RgbImage,
}

impl FrameResult {
    pub fn fevers(&self) -> usize {
        self.temperatures.iter().filter(|t| t.fever).count()
    }

    pub fn to_json(&self, threshold_m: f64) -> Json {
        assessment_json(
            &self.frame,
            threshold_m,
            &self.boxes,
            &self.assessment,
            &self.temperatures,
        )
    }
}

pub fn process_frame(
    frame: &ThermalFrame,
    source: &DetectionSource,
    cfg: &PipelineConfig,
) -> Result<FrameResult> {
    let boxes: Vec<BoundingBox> = source
        .detect(frame, cfg)?
        .into_iter()
        .map(|d| d.bbox)
        .collect();
    let camera = cfg.camera.model_for(frame.width, frame.height);
    let assessment = assess_frame(&boxes, &camera, &cfg.distancing)?;
    let mut temperatures = Vec::new();
    if cfg.calibration.is_some() {
        for (k, b) in boxes.iter().enumerate() {
            match person_temperature(frame, k, b, &cfg.fever) {
                Ok(t) => temperatures.push(t),
                Err(Error::EmptyRoi(_)) => {
                    log::warn!("frame {}: person {k} lies outside the frame", frame.id)
                }
                Err(e) => return Err(e),
            }
        }
    }
    let image = render_annotated(frame, &boxes, &assessment, &cfg.render);
    Ok(FrameResult {
        frame: frame.id.clone(),
        boxes,
        assessment,
        temperatures,
        image,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameSummary {
    pub frame: String,
    pub persons: usize,
    pub violations: usize,
    pub fevers: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameFailure {
    pub frame: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunReport {
    pub frames: Vec<FrameSummary>,
    pub failures: Vec<FrameFailure>,
}

impl RunReport {
    pub fn persons(&self) -> usize {
        self.frames.iter().map(|f| f.persons).sum()
    }

    pub fn violations(&self) -> usize {
        self.frames.iter().map(|f| f.violations).sum()
    }

    pub fn fevers(&self) -> usize {
        self.frames.iter().map(|f| f.fevers).sum()
    }

    /// 0 when every frame succeeded, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }

    pub fn to_json(&self) -> Json {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                Json::obj([
                    ("frame", Json::str(&f.frame)),
                    ("persons", Json::count(f.persons)),
                    ("violations", Json::count(f.violations)),
                    ("fevers", Json::count(f.fevers)),
                ])
            })
            .collect();
        let failures = self
            .failures
            .iter()
            .map(|f| {
                Json::obj([
                    ("frame", Json::str(&f.frame)),
                    ("error", Json::str(&f.error)),
                ])
            })
            .collect();
        Json::obj([
            ("frames", Json::Arr(frames)),
            ("failures", Json::Arr(failures)),
            (
                "totals",
                Json::obj([
                    (
                        "frames",
                        Json::count(self.frames.len() + self.failures.len()),
                    ),
                    ("processed", Json::count(self.frames.len())),
                    ("failed", Json::count(self.failures.len())),
                    ("persons", Json::count(self.persons())),
                    ("violations", Json::count(self.violations())),
                    ("fevers", Json::count(self.fevers())),
                ]),
            ),
        ])
    }
}

fn frame_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Processes `frames` in order and writes `<id>.ppm`, `<id>.json` and
/// `report.json` into `out_dir`. Errors returned here are setup errors;
/// frame errors end up in the report.
pub fn run_pipeline(cfg: &PipelineConfig, frames: &[PathBuf], out_dir: &Path) -> Result<RunReport> {
    let mut seen = HashMap::new();
    for p in frames {
        if let Some(other) = seen.insert(frame_id(p), p) {
            return Err(Error::Config(format!(
                "{} and {} share the frame id `{}`",
                other.display(),
                p.display(),
                frame_id(p)
            )));
        }
    }
    cfg.distancing.validate()?;
    cfg.fever.validate()?;
    let source = DetectionSource::from_config(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;

    let outcomes: Vec<(String, Result<FrameSummary>)> = frames
        .par_iter()
        .map(|path| {
            let id = frame_id(path);
            let outcome = (|| {
                let frame = load_frame_path(path)?.with_calibration(cfg.calibration);
                let result = process_frame(&frame, &source, cfg)?;
                let ppm = out_dir.join(format!("{id}.ppm"));
                std::fs::write(&ppm, result.image.to_ppm()).map_err(|e| Error::file(&ppm, e))?;
                let json = out_dir.join(format!("{id}.json"));
                let mut text = result.to_json(cfg.distancing.threshold_m).to_pretty();
                text.push('\n');
                std::fs::write(&json, text).map_err(|e| Error::file(&json, e))?;
                Ok(FrameSummary {
                    frame: id.clone(),
                    persons: result.boxes.len(),
                    violations: result.assessment.violating_pairs.len(),
                    fevers: result.fevers(),
                })
            })();
            (id, outcome)
        })
        .collect();

    let mut report = RunReport::default();
    for (frame, outcome) in outcomes {
        match outcome {
            Ok(summary) => report.frames.push(summary),
            Err(e) => {
                log::error!("frame {frame}: {e}");
                report.failures.push(FrameFailure {
                    frame,
                    error: e.to_string(),
                });
            }
        }
    }
    let path = out_dir.join(REPORT_FILE);
    let mut text = report.to_json().to_pretty();
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::thermal::write_frame;

    fn config(det_path: &Path) -> PipelineConfig {
        let text = format!(
            "[camera]\nrange_m = 10\nhfov_deg = 90\nimage_width_px = 64\n[thermal]\nslope = 0.5\noffset = 0\nstatistic = max\n[detector]\nmode = external\npath = {}\n",
            det_path.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn external_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let frames_dir = dir.path().join("frames");
        std::fs::create_dir(&frames_dir).unwrap();
        let mut pixels = vec![60u16; 64 * 48];
        pixels[10 * 64 + 6] = 80;
        let frame = ThermalFrame::new("b", 64, 48, 255, pixels).unwrap();
        std::fs::write(frames_dir.join("b.pgm"), write_frame(&frame)).unwrap();
        std::fs::write(frames_dir.join("a.pgm"), b"P5\n2 2\n255\n\x00").unwrap();
        std::fs::write(frames_dir.join("notes.txt"), b"x").unwrap();

        let dets = dir.path().join("dets.jsonl");
        std::fs::write(
            &dets,
            concat!(
                r#"{"frame":"b","detections":[{"x":5,"y":5,"w":10,"h":20,"score":0.9,"class":"person"},"#,
                r#"{"x":8,"y":5,"w":10,"h":20,"score":0.8,"class":"person"},"#,
                r#"{"x":40,"y":5,"w":10,"h":20,"score":0.3,"class":"person"}]}"#
            ),
        )
        .unwrap();
        let cfg = config(&dets);
        let frames = list_frames(&frames_dir).unwrap();
        assert_eq!(
            frames.iter().map(|p| frame_id(p)).collect::<Vec<_>>(),
            ["a", "b"]
        );

        let out = dir.path().join("out");
        let report = run_pipeline(&cfg, &frames, &out).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].frame, "a");
        assert_eq!(report.exit_code(), 2);
        assert_eq!(
            report.frames,
            vec![FrameSummary {
                frame: "b".into(),
                persons: 2,
                violations: 1,
                fevers: 1
            }]
        );
        assert!(out.join("b.ppm").exists());
        assert!(out.join("b.json").exists());
        assert!(!out.join("a.ppm").exists());
        let text = std::fs::read_to_string(out.join(REPORT_FILE)).unwrap();
        assert!(text.contains("\"violations\": 1"));
    }

    #[test]
    fn missing_detection_file_is_a_setup_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(&dir.path().join("absent.jsonl"));
        assert!(matches!(
            run_pipeline(&cfg, &[], dir.path()),
            Err(Error::File { .. })
        ));
    }
}
