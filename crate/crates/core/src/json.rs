//! JSON formats: detections, ground-truth labels, per-frame assessments
//! and evaluation reports.
//!
//! Output uses a small writer instead of serde so that every real number is
//! printed with exactly six decimals and no exponent, which keeps reports
//! byte-stable across runs and platforms.

use serde::Deserialize;

use crate::distancing::FrameAssessment;
use crate::error::{Error, Result};
use crate::eval::{Counts, EvalSummary};
use crate::geometry::BoundingBox;
use crate::thermal::PersonTemperature;
use crate::yolo::{Detection, PERSON_CLASS};

#[derive(Clone, Debug, PartialEq)]
pub enum Json {
    Null,
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

pub fn fixed(v: f64) -> String {
    if !v.is_finite() {
        return "null".to_string();
    }
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

impl Json {
    pub fn obj<K: Into<String>>(fields: impl IntoIterator<Item = (K, Json)>) -> Self {
        Json::Obj(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn str(s: impl Into<String>) -> Self {
        Json::Str(s.into())
    }

    pub fn count(n: usize) -> Self {
        Json::Int(n as i64)
    }

    pub fn to_compact(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, None, 0);
        out
    }

    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, Some(2), 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, indent: Option<usize>, depth: usize) {
        let newline = |out: &mut String, depth: usize| {
            if let Some(step) = indent {
                out.push('\n');
                out.extend(std::iter::repeat_n(' ', step * depth));
            }
        };
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Int(i) => out.push_str(&i.to_string()),
            Json::Num(v) => out.push_str(&fixed(*v)),
            Json::Str(s) => out.push_str(&serde_json::to_string(s).expect("string serialization")),
            Json::Arr(items) => {
                out.push('[');
                // arrays of scalars stay on one line
                let flat = items
                    .iter()
                    .all(|i| !matches!(i, Json::Arr(_) | Json::Obj(_)));
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                        if flat && indent.is_some() {
                            out.push(' ');
                        }
                    }
                    if !flat {
                        newline(out, depth + 1);
                    }
                    item.write(out, indent, depth + 1);
                }
                if !flat && !items.is_empty() {
                    newline(out, depth);
                }
                out.push(']');
            }
            Json::Obj(fields) => {
                out.push('{');
                for (k, (key, value)) in fields.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    newline(out, depth + 1);
                    out.push_str(&serde_json::to_string(key).expect("string serialization"));
                    out.push(':');
                    if indent.is_some() {
                        out.push(' ');
                    }
                    value.write(out, indent, depth + 1);
                }
                if !fields.is_empty() {
                    newline(out, depth);
                }
                out.push('}');
            }
        }
    }
}

pub fn bbox_json(b: &BoundingBox) -> Json {
    Json::obj([
        ("x", Json::Num(b.x)),
        ("y", Json::Num(b.y)),
        ("w", Json::Num(b.w)),
        ("h", Json::Num(b.h)),
    ])
}

pub fn class_name(class_id: usize) -> String {
    if class_id == 0 {
        PERSON_CLASS.to_string()
    } else {
        format!("class_{class_id}")
    }
}

/// `{"frame": .., "detections": [{"x", "y", "w", "h", "score", "class"}]}`
pub fn detections_json(frame: &str, dets: &[Detection]) -> Json {
    let items = dets
        .iter()
        .map(|d| {
            Json::obj([
                ("x", Json::Num(d.bbox.x)),
                ("y", Json::Num(d.bbox.y)),
                ("w", Json::Num(d.bbox.w)),
                ("h", Json::Num(d.bbox.h)),
                ("score", Json::Num(d.score)),
                ("class", Json::str(class_name(d.class_id))),
            ])
        })
        .collect();
    Json::obj([
        ("frame", Json::str(frame)),
        ("detections", Json::Arr(items)),
    ])
}

/// Per-frame assessment. `temperatures` may be empty when the camera is
/// uncalibrated; persons without a reading omit `temperature_c`.
pub fn assessment_json(
    frame: &str,
    threshold_m: f64,
    boxes: &[BoundingBox],
    assessment: &FrameAssessment,
    temperatures: &[PersonTemperature],
) -> Json {
    let persons = boxes
        .iter()
        .zip(&assessment.colors)
        .enumerate()
        .map(|(k, (b, color))| {
            let mut fields = vec![
                ("bbox".to_string(), bbox_json(b)),
                ("color".to_string(), Json::str(color.as_str())),
            ];
            if let Some(t) = temperatures.iter().find(|t| t.box_index == k) {
                fields.push(("temperature_c".into(), Json::Num(t.temperature_c)));
                fields.push(("fever".into(), Json::Bool(t.fever)));
            }
            Json::Obj(fields)
        })
        .collect();
    let violations = assessment
        .violating_pairs
        .iter()
        .map(|v| {
            Json::Arr(vec![
                Json::count(v.i),
                Json::count(v.j),
                Json::Num(v.distance_m),
            ])
        })
        .collect();
    Json::obj([
        ("frame", Json::str(frame)),
        ("threshold_m", Json::Num(threshold_m)),
        ("persons", Json::Arr(persons)),
        ("violations", Json::Arr(violations)),
    ])
}

pub fn counts_json(c: &Counts) -> Json {
    Json::obj([
        ("true_positives", Json::count(c.true_positives)),
        ("false_positives", Json::count(c.false_positives)),
        ("false_negatives", Json::count(c.false_negatives)),
    ])
}

pub fn eval_summary_json(s: &EvalSummary) -> Json {
    Json::obj([
        ("average_precision", Json::Num(s.average_precision)),
        ("miss_rate", Json::Num(s.miss_rate)),
        ("counts", counts_json(&s.counts)),
        (
            "pr_curve",
            Json::Arr(
                s.pr_curve
                    .iter()
                    .map(|p| {
                        Json::obj([
                            ("threshold", Json::Num(p.threshold)),
                            ("recall", Json::Num(p.recall)),
                            ("precision", Json::Num(p.precision)),
                        ])
                    })
                    .collect(),
            ),
        ),
        (
            "per_frame",
            Json::Arr(
                s.per_frame
                    .iter()
                    .map(|f| {
                        Json::obj([
                            ("frame", Json::str(&f.frame_id)),
                            ("counts", counts_json(&f.counts)),
                        ])
                    })
                    .collect(),
            ),
        ),
    ])
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionEntry {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
    #[serde(default = "default_class")]
    class: String,
}

fn default_class() -> String {
    PERSON_CLASS.to_string()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    frame: String,
    #[serde(default)]
    detections: Vec<DetectionEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetections {
    pub frame: String,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub frame: String,
    pub boxes: Vec<BoundingBox>,
    /// Optional dataset tag; the evaluation reports each tag separately.
    #[serde(default)]
    pub dataset: Option<String>,
}

/// Reads a stream of JSON values: JSON lines, concatenated objects, or a
/// single top-level array.
fn read_stream<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(text)?);
    }
    serde_json::Deserializer::from_str(text)
        .into_iter::<T>()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn parse_detections(text: &str) -> Result<Vec<FrameDetections>> {
    read_stream::<DetectionRecord>(text)?
        .into_iter()
        .map(|rec| {
            let detections = rec
                .detections
                .into_iter()
                .map(|d| {
                    let bbox = BoundingBox::new(d.x, d.y, d.w, d.h);
                    bbox.validate()
                        .map_err(|e| Error::Domain(format!("frame `{}`: {e}", rec.frame)))?;
                    if !(0.0..=1.0).contains(&d.score) {
                        return Err(Error::Domain(format!(
                            "frame `{}`: score {} outside [0, 1]",
                            rec.frame, d.score
                        )));
                    }
                    if d.class != PERSON_CLASS {
                        return Err(Error::Domain(format!(
                            "frame `{}`: unsupported class `{}`",
                            rec.frame, d.class
                        )));
                    }
                    Ok(Detection {
                        bbox,
                        score: d.score,
                        class_id: 0,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FrameDetections {
                frame: rec.frame,
                detections,
            })
        })
        .collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    let labels = read_stream::<LabelRecord>(text)?;
    for l in &labels {
        for b in &l.boxes {
            b.validate()
                .map_err(|e| Error::Domain(format!("label `{}`: {e}", l.frame)))?;
        }
    }
    Ok(labels)
}
