use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use thermoguard_core::config::load_config;
use thermoguard_core::eval::{evaluate, split_dataset, FrameData, SplitSpec};
use thermoguard_core::json::{
    detections_json, eval_summary_json, parse_detections, parse_labels, Json, LabelRecord,
};
use thermoguard_core::model::Model;
use thermoguard_core::pipeline::{detect_frame, list_frames, run_pipeline};
use thermoguard_core::thermal::load_frame_path;
use thermoguard_core::yolo::{DecodeConfig, Detection, Detector};

/// Social-distancing and fever screening on thermal frames.
#[derive(Parser)]
#[command(name = "thermoguard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process every frame in a directory and write annotated outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Overrides `[output] dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score detections against labels: AP, miss rate and counts.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.5)]
        score_threshold: f64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split the labelled frames into train/val/test (70/20/10). Frames
    /// tagged with a dataset are split within their dataset.
    Split {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ignore dataset tags and split all frames together.
        #[arg(long)]
        pooled: bool,
    },
    /// Run the detector on a single frame and print its detections.
    Decode {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        netspec: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        conf: f64,
        #[arg(long, default_value_t = 0.5)]
        nms_iou: f64,
    },
    /// Write the seeded reference network as a netspec and weights file.
    InitModel {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("THERMOGUARD_LOG", "warn"))
        .init();
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Run {
            config,
            frames,
            out,
        } => run(&config, &frames, out),
        Command::Eval {
            detections,
            labels,
            iou,
            score_threshold,
            out,
        } => {
            let report = eval(&detections, &labels, iou, score_threshold)?;
            emit(&report, out.as_deref())?;
            Ok(0)
        }
        Command::Split {
            labels,
            seed,
            pooled,
        } => {
            let mut groups: BTreeMap<Option<String>, Vec<String>> = BTreeMap::new();
            for r in read_labels(&labels)? {
                let key = if pooled { None } else { r.dataset };
                groups.entry(key).or_default().push(r.frame);
            }
            let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for ids in groups.values() {
                let split = split_dataset(ids, &SplitSpec::new(seed))?;
                train.extend(split.train);
                val.extend(split.val);
                test.extend(split.test);
            }
            let list = |v: &[String]| Json::Arr(v.iter().map(Json::str).collect());
            let report = Json::obj([
                (
                    "seed",
                    i64::try_from(seed).map_or_else(|_| Json::str(seed.to_string()), Json::Int),
                ),
                ("train", list(&train)),
                ("val", list(&val)),
                ("test", list(&test)),
            ]);
            emit(&report, None)?;
            Ok(0)
        }
        Command::Decode {
            weights,
            netspec,
            frame,
            conf,
            nms_iou,
        } => {
            let dets = decode_frame(&weights, &netspec, &frame, conf, nms_iou)?;
            let id = frame
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            emit(&detections_json(&id, &dets), None)?;
            Ok(0)
        }
        Command::InitModel { out_dir, seed } => {
            let model = Model::reference(seed);
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let net = out_dir.join("reference.net");
            let tgw = out_dir.join("reference.tgw");
            std::fs::write(&net, model.layout().to_text())
                .with_context(|| format!("writing {}", net.display()))?;
            std::fs::write(&tgw, model.weights().encode()?)
                .with_context(|| format!("writing {}", tgw.display()))?;
            println!("{}\n{}", net.display(), tgw.display());
            Ok(0)
        }
    }
}

fn emit(json: &Json, out: Option<&Path>) -> anyhow::Result<()> {
    let mut text = json.to_pretty();
    text.push('\n');
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(config: &Path, frames: &Path, out: Option<PathBuf>) -> anyhow::Result<u8> {
    let cfg = load_config(config).with_context(|| format!("loading {}", config.display()))?;
    if !frames.is_dir() {
        bail!("frame directory {} does not exist", frames.display());
    }
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let paths = list_frames(frames)?;
    log::info!("processing {} frames into {}", paths.len(), out.display());
    let report = run_pipeline(&cfg, &paths, &out)?;
    eprintln!(
        "{} frames, {} failed, {} persons, {} violations, {} fevers",
        report.frames.len() + report.failures.len(),
        report.failures.len(),
        report.persons(),
        report.violations(),
        report.fevers()
    );
    Ok(report.exit_code() as u8)
}

fn read_labels(path: &Path) -> anyhow::Result<Vec<LabelRecord>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_labels(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Pooled summary plus one summary per dataset tag. A dataset whose metrics
/// are undefined reports the error instead.
fn eval(detections: &Path, labels: &Path, iou: f64, score_threshold: f64) -> anyhow::Result<Json> {
    let text = std::fs::read_to_string(detections)
        .with_context(|| format!("reading {}", detections.display()))?;
    let mut by_frame: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for rec in
        parse_detections(&text).with_context(|| format!("parsing {}", detections.display()))?
    {
        by_frame
            .entry(rec.frame)
            .or_default()
            .extend(rec.detections);
    }
    let records = read_labels(labels)?;
    let mut groups: BTreeMap<String, Vec<FrameData>> = BTreeMap::new();
    let mut pooled = Vec::with_capacity(records.len());
    for rec in records {
        let frame = FrameData {
            detections: by_frame.remove(&rec.frame).unwrap_or_default(),
            ground_truth: rec.boxes,
            frame_id: rec.frame,
        };
        if let Some(tag) = rec.dataset {
            groups.entry(tag).or_default().push(frame.clone());
        }
        pooled.push(frame);
    }
    for frame in by_frame.keys() {
        log::warn!("detections for unlabelled frame `{frame}` ignored");
    }
    let summary = evaluate(&pooled, iou, score_threshold)?;
    let datasets = groups
        .into_iter()
        .map(|(tag, frames)| {
            let body = match evaluate(&frames, iou, score_threshold) {
                Ok(s) => eval_summary_json(&s),
                Err(e) => Json::obj([("error", Json::str(e.to_string()))]),
            };
            Json::obj([("dataset", Json::str(tag)), ("summary", body)])
        })
        .collect();
    Ok(Json::obj([
        ("iou_threshold", Json::Num(iou)),
        ("score_threshold", Json::Num(score_threshold)),
        ("pooled", eval_summary_json(&summary)),
        ("datasets", Json::Arr(datasets)),
    ]))
}

fn decode_frame(
    weights: &Path,
    netspec: &Path,
    frame: &Path,
    conf: f64,
    nms_iou: f64,
) -> anyhow::Result<Vec<Detection>> {
    let model = Model::load(netspec, weights)?;
    let Some((_, head, anchors)) = model.head else {
        bail!("{} declares no detection head", netspec.display());
    };
    let input = model.net.input_shape();
    let detector = Detector {
        config: DecodeConfig {
            confidence_threshold: conf,
            nms_iou_threshold: nms_iou,
            input_size: input.width,
        },
        net: model.net,
        head,
        anchors,
    };
    detector.config.validate()?;
    Ok(detect_frame(&detector, &load_frame_path(frame)?)?)
}
