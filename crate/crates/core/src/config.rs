//! INI-style pipeline configuration.
//!
//! ```text
//! [camera]
//! range_m = 10
//! hfov_deg = 90
//! # image_width_px / image_height_px default to each frame's size
//!
//! [distancing]
//! threshold_m = 2.0
//!
//! [decode]
//! conf = 0.5
//! nms_iou = 0.5
//!
//! [thermal]
//! slope = 0.01
//! offset = -40
//! fever_threshold_c = 37.5
//! statistic = p95        # or `max`
//!
//! [detector]
//! mode = external        # or `inference` with weights= and netspec=
//! path = detections.jsonl
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::distancing::{CameraModel, DistancingConfig};
use crate::error::{Error, Result};
use crate::render::RenderStyle;
use crate::thermal::{FeverConfig, RoiStatistic, TempCalibration};
use crate::yolo::DecodeConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraSettings {
    pub range_m: f64,
    pub hfov_deg: f64,
    pub image_width_px: Option<f64>,
    pub image_height_px: Option<f64>,
}

impl CameraSettings {
    /// Camera model for a frame, filling unset image dimensions from it.
    pub fn model_for(&self, frame_width: usize, frame_height: usize) -> CameraModel {
        CameraModel {
            range_m: self.range_m,
            hfov_deg: self.hfov_deg,
            image_width_px: self.image_width_px.unwrap_or(frame_width as f64),
            image_height_px: self.image_height_px.unwrap_or(frame_height as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectorMode {
    Inference { weights: PathBuf, netspec: PathBuf },
    External { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub camera: CameraSettings,
    pub distancing: DistancingConfig,
    pub decode: DecodeConfig,
    pub fever: FeverConfig,
    pub calibration: Option<TempCalibration>,
    pub detector: DetectorMode,
    pub output_dir: Option<PathBuf>,
    pub render: RenderStyle,
}

struct Entry {
    value: String,
    line: usize,
}

type Sections = HashMap<String, (usize, HashMap<String, Entry>)>;

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "camera",
        &["range_m", "hfov_deg", "image_width_px", "image_height_px"],
    ),
    ("distancing", &["threshold_m"]),
    ("decode", &["conf", "nms_iou", "input_size"]),
    (
        "thermal",
        &["slope", "offset", "fever_threshold_c", "statistic"],
    ),
    ("detector", &["mode", "path", "weights", "netspec"]),
    ("output", &["dir"]),
    ("render", &["thickness"]),
];

fn key_error(key: &str, line: usize, message: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

fn read_sections(text: &str) -> Result<Sections> {
    let mut sections: Sections = HashMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| key_error(line, line_no, "unterminated section header"))?
                .trim()
                .to_string();
            if !KNOWN_KEYS.iter().any(|(s, _)| *s == name) {
                return Err(key_error(&name, line_no, "unknown section"));
            }
            if sections.contains_key(&name) {
                return Err(key_error(&name, line_no, "duplicate section"));
            }
            sections.insert(name.clone(), (line_no, HashMap::new()));
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| key_error(line, line_no, "expected key = value"))?;
        let key = key.trim();
        let section = current
            .as_ref()
            .ok_or_else(|| key_error(key, line_no, "key outside of any section"))?;
        let full = format!("{section}.{key}");
        let allowed = KNOWN_KEYS
            .iter()
            .find(|(s, _)| s == section)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(key_error(&full, line_no, "unknown key"));
        }
        let entries = &mut sections.get_mut(section).expect("section exists").1;
        if entries.contains_key(key) {
            return Err(key_error(&full, line_no, "duplicate key"));
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line: line_no,
            },
        );
    }
    Ok(sections)
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find(['#', ';']).unwrap_or(line.len());
    &line[..cut]
}

struct Lookup<'a> {
    sections: &'a Sections,
    last_line: usize,
}

impl Lookup<'_> {
    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|(_, e)| e.get(key))
    }

    fn required_line(&self, section: &str) -> usize {
        self.sections
            .get(section)
            .map_or(self.last_line, |(l, _)| *l)
    }

    fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.entry(section, key).map(|e| (e.value.as_str(), e.line))
    }

    fn required(&self, section: &str, key: &str) -> Result<(&str, usize)> {
        self.raw(section, key).ok_or_else(|| {
            key_error(
                &format!("{section}.{key}"),
                self.required_line(section),
                "missing required key",
            )
        })
    }

    fn real(
        &self,
        section: &str,
        key: &str,
        check: impl Fn(f64) -> bool,
        rule: &str,
    ) -> Result<Option<f64>> {
        let Some((v, line)) = self.raw(section, key) else {
            return Ok(None);
        };
        let full = format!("{section}.{key}");
        let parsed: f64 = v
            .parse()
            .map_err(|_| key_error(&full, line, format!("`{v}` is not a number")))?;
        if !parsed.is_finite() || !check(parsed) {
            return Err(key_error(&full, line, format!("{v} is invalid: {rule}")));
        }
        Ok(Some(parsed))
    }

    fn required_real(
        &self,
        section: &str,
        key: &str,
        check: impl Fn(f64) -> bool,
        rule: &str,
    ) -> Result<f64> {
        self.required(section, key)?;
        Ok(self.real(section, key, check, rule)?.expect("present"))
    }

    fn path(&self, section: &str, key: &str) -> Result<PathBuf> {
        let (v, line) = self.required(section, key)?;
        if v.is_empty() {
            return Err(key_error(&format!("{section}.{key}"), line, "empty path"));
        }
        Ok(PathBuf::from(v))
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let sections = read_sections(text)?;
    let q = Lookup {
        sections: &sections,
        last_line: text.lines().count(),
    };
    let positive = |v: f64| v > 0.0;
    let unit = |v: f64| (0.0..=1.0).contains(&v);

    let camera = CameraSettings {
        range_m: q.required_real("camera", "range_m", positive, "must be > 0")?,
        hfov_deg: q.required_real(
            "camera",
            "hfov_deg",
            |v| v > 0.0 && v < 180.0,
            "must lie in (0, 180)",
        )?,
        image_width_px: q.real("camera", "image_width_px", positive, "must be > 0")?,
        image_height_px: q.real("camera", "image_height_px", positive, "must be > 0")?,
    };

    let distancing = DistancingConfig {
        threshold_m: q
            .real("distancing", "threshold_m", positive, "must be > 0")?
            .unwrap_or(DistancingConfig::default().threshold_m),
    };

    let defaults = DecodeConfig::default();
    let input_size = match q.raw("decode", "input_size") {
        None => defaults.input_size,
        Some((v, line)) => v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            key_error(
                "decode.input_size",
                line,
                format!("`{v}` is not a positive integer"),
            )
        })?,
    };
    let decode = DecodeConfig {
        confidence_threshold: q
            .real("decode", "conf", unit, "must lie in [0, 1]")?
            .unwrap_or(defaults.confidence_threshold),
        nms_iou_threshold: q
            .real("decode", "nms_iou", unit, "must lie in [0, 1]")?
            .unwrap_or(defaults.nms_iou_threshold),
        input_size,
    };

    let statistic = match q.raw("thermal", "statistic") {
        None => FeverConfig::default().statistic,
        Some((v, line)) => parse_statistic(v).ok_or_else(|| {
            key_error(
                "thermal.statistic",
                line,
                format!("`{v}` is not `max` or `p<percentile>` in (0, 100]"),
            )
        })?,
    };
    let fever = FeverConfig {
        fever_threshold_c: q
            .real("thermal", "fever_threshold_c", |_| true, "must be finite")?
            .unwrap_or(FeverConfig::default().fever_threshold_c),
        statistic,
    };
    let slope = q.real("thermal", "slope", |v| v != 0.0, "must be non-zero")?;
    let offset = q.real("thermal", "offset", |_| true, "must be finite")?;
    let calibration = match (slope, offset) {
        (Some(s), o) => Some(TempCalibration::new(s, o.unwrap_or(0.0))?),
        (None, Some(_)) => {
            let line = q.raw("thermal", "offset").map_or(0, |(_, l)| l);
            return Err(key_error(
                "thermal.slope",
                line,
                "offset given without slope",
            ));
        }
        (None, None) => None,
    };

    let (mode, mode_line) = q.required("detector", "mode")?;
    let detector = match mode {
        "external" => DetectorMode::External {
            path: q.path("detector", "path")?,
        },
        "inference" => DetectorMode::Inference {
            weights: q.path("detector", "weights")?,
            netspec: q.path("detector", "netspec")?,
        },
        other => {
            return Err(key_error(
                "detector.mode",
                mode_line,
                format!("`{other}` is not `inference` or `external`"),
            ))
        }
    };

    let output_dir = q.raw("output", "dir").map(|(v, _)| PathBuf::from(v));
    let mut render = RenderStyle::default();
    if let Some((v, line)) = q.raw("render", "thickness") {
        render.line_thickness_px =
            v.parse::<usize>().ok().filter(|&t| t >= 1).ok_or_else(|| {
                key_error(
                    "render.thickness",
                    line,
                    format!("`{v}` is not an integer >= 1"),
                )
            })?;
    }

    Ok(PipelineConfig {
        camera,
        distancing,
        decode,
        fever,
        calibration,
        detector,
        output_dir,
        render,
    })
}

fn parse_statistic(v: &str) -> Option<RoiStatistic> {
    if v.eq_ignore_ascii_case("max") {
        return Some(RoiStatistic::Max);
    }
    let p: f64 = v.strip_prefix(['p', 'P'])?.parse().ok()?;
    (p > 0.0 && p <= 100.0).then_some(RoiStatistic::Percentile(p))
}

/// Reads a config file. Relative paths inside it are resolved against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    match &mut cfg.detector {
        DetectorMode::External { path } => resolve(path),
        DetectorMode::Inference { weights, netspec } => {
            resolve(weights);
            resolve(netspec);
        }
    }
    if let Some(dir) = &mut cfg.output_dir {
        resolve(dir);
    }
    Ok(cfg)
}

impl PipelineConfig {
    /// Serializes every setting, defaults included, in the same syntax
    /// `parse_config` reads.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let c = &self.camera;
        writeln!(
            s,
            "[camera]\nrange_m = {}\nhfov_deg = {}",
            c.range_m, c.hfov_deg
        )
        .unwrap();
        if let Some(w) = c.image_width_px {
            writeln!(s, "image_width_px = {w}").unwrap();
        }
        if let Some(h) = c.image_height_px {
            writeln!(s, "image_height_px = {h}").unwrap();
        }
        writeln!(
            s,
            "\n[distancing]\nthreshold_m = {}",
            self.distancing.threshold_m
        )
        .unwrap();
        let d = &self.decode;
        writeln!(
            s,
            "\n[decode]\nconf = {}\nnms_iou = {}\ninput_size = {}",
            d.confidence_threshold, d.nms_iou_threshold, d.input_size
        )
        .unwrap();
        writeln!(s, "\n[thermal]").unwrap();
        if let Some(cal) = &self.calibration {
            writeln!(s, "slope = {}\noffset = {}", cal.slope, cal.offset).unwrap();
        }
        let stat = match self.fever.statistic {
            RoiStatistic::Max => "max".to_string(),
            RoiStatistic::Percentile(p) => format!("p{p}"),
        };
        writeln!(
            s,
            "fever_threshold_c = {}\nstatistic = {stat}",
            self.fever.fever_threshold_c
        )
        .unwrap();
        writeln!(s, "\n[detector]").unwrap();
        match &self.detector {
            DetectorMode::External { path } => {
                writeln!(s, "mode = external\npath = {}", path.display()).unwrap()
            }
            DetectorMode::Inference { weights, netspec } => writeln!(
                s,
                "mode = inference\nweights = {}\nnetspec = {}",
                weights.display(),
                netspec.display()
            )
            .unwrap(),
        }
        if let Some(dir) = &self.output_dir {
            writeln!(s, "\n[output]\ndir = {}", dir.display()).unwrap();
        }
        writeln!(
            s,
            "\n[render]\nthickness = {}",
            self.render.line_thickness_px
        )
        .unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str =
        "[camera]\nrange_m = 10\nhfov_deg = 90\n\n[detector]\nmode = external\npath = dets.jsonl\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.distancing.threshold_m, 2.0);
        assert_eq!(cfg.decode.confidence_threshold, 0.5);
        assert_eq!(cfg.decode.nms_iou_threshold, 0.5);
        assert_eq!(cfg.fever.fever_threshold_c, 37.5);
        assert_eq!(cfg.fever.statistic, RoiStatistic::Percentile(95.0));
        assert_eq!(cfg.calibration, None);
        assert_eq!(
            cfg.detector,
            DetectorMode::External {
                path: "dets.jsonl".into()
            }
        );
    }

    #[test]
    fn negative_threshold_names_key_and_line() {
        let text = format!("{MINIMAL}[distancing]\nthreshold_m = -1\n");
        match parse_config(&text).unwrap_err() {
            Error::ConfigKey { key, line, .. } => {
                assert_eq!(key, "distancing.threshold_m");
                assert_eq!(line, 9);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let unknown = format!("{MINIMAL}[decode]\nconfidence = 0.3\n");
        assert!(
            matches!(parse_config(&unknown), Err(Error::ConfigKey { ref key, .. }) if key == "decode.confidence")
        );
        let missing = "[camera]\nrange_m = 10\n[detector]\nmode = external\npath = x\n";
        assert!(
            matches!(parse_config(missing), Err(Error::ConfigKey { ref key, .. }) if key == "camera.hfov_deg")
        );
        let no_path =
            "[camera]\nrange_m = 10\nhfov_deg = 60\n[detector]\nmode = inference\nweights = w\n";
        assert!(
            matches!(parse_config(no_path), Err(Error::ConfigKey { ref key, .. }) if key == "detector.netspec")
        );
        assert!(parse_config("[cameras]\n").is_err());
    }

    #[test]
    fn statistic_values() {
        assert_eq!(parse_statistic("max"), Some(RoiStatistic::Max));
        assert_eq!(parse_statistic("p90"), Some(RoiStatistic::Percentile(90.0)));
        assert_eq!(parse_statistic("p0"), None);
        assert_eq!(parse_statistic("median"), None);
    }

    proptest! {
        #[test]
        fn ini_round_trip(
            range in 0.1..100.0f64,
            fov in 1.0..179.0f64,
            width in prop::option::of(1.0..4000.0f64),
            threshold in 0.1..10.0f64,
            conf in 0.0..=1.0f64,
            slope in prop::option::of(0.001..1.0f64),
            offset in -100.0..100.0f64,
            stat in prop_oneof![Just(RoiStatistic::Max), (1.0..=100.0f64).prop_map(RoiStatistic::Percentile)],
            inference in any::<bool>(),
            thickness in 1usize..6,
        ) {
            let cfg = PipelineConfig {
                camera: CameraSettings { range_m: range, hfov_deg: fov, image_width_px: width, image_height_px: None },
                distancing: DistancingConfig { threshold_m: threshold },
                decode: DecodeConfig { confidence_threshold: conf, ..Default::default() },
                fever: FeverConfig { fever_threshold_c: 38.0, statistic: stat },
                calibration: slope.map(|s| TempCalibration::new(s, offset).unwrap()),
                detector: if inference {
                    DetectorMode::Inference { weights: "m.tgw".into(), netspec: "m.net".into() }
                } else {
                    DetectorMode::External { path: "d.jsonl".into() }
                },
                output_dir: Some("out".into()),
                render: RenderStyle { line_thickness_px: thickness, ..Default::default() },
            };
            let text = cfg.to_ini();
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_ini(), text);
        }
    }
}
