use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lmnet::dataset::{
    augment, crop_range, list_stems, load_scene, parse_kitti_label, rasterize_targets, read_kitti_bin, synth_scene,
    write_scene, Calibration, ClassStats, Scene, CALIB_DIR, LABEL_DIR, VELODYNE_DIR,
};
use lmnet::geom::{encode_frontal_view, FrontalViewMap, ObjectClass, Point3};
use lmnet::net::{
    evaluate_loss, infer, load_weights, save_weights, train_with_progress, LMNetParams, NetOutput, TrainSample,
};
use lmnet::postproc::{
    detect, evaluate_per_class, format_json_lines, format_kitti_results, parse_json_lines, Candidate, Detection,
    EvalMetrics,
};
use lmnet::tensor::ConvAlgo;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{Machine, StageStats, Stages, TimingReport};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::mapfile::{read_map, write_map};
use crate::render::{write_channel_images, write_class_image};

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "frame".into(), |s| s.to_string_lossy().into_owned())
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

/// Crops and projects a scan into its frontal-view map.
pub fn encode_points(points: &[Point3], cfg: &PipelineConfig) -> FrontalViewMap {
    encode_frontal_view(&crop_range(points), &cfg.projection)
}

pub fn encode(cfg: &PipelineConfig, input: &Path, output: &Path, render: Option<&Path>) -> Result<FrontalViewMap> {
    let map = encode_points(&read_kitti_bin(input)?, cfg);
    create_parent(output)?;
    write_map(output, &map)?;
    info!("{}: {} valid cells", output.display(), map.valid_count());
    if let Some(dir) = render {
        write_channel_images(&map, dir, &stem_of(input))?;
    }
    Ok(map)
}

pub fn render(input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    Ok(write_channel_images(&read_map(input)?, output, &stem_of(input))?)
}

/// Weights from a file, with the head options taken from the config.
pub fn load_params(path: &Path, cfg: &PipelineConfig) -> Result<LMNetParams> {
    let mut params = load_weights(path)?;
    params.config.objectness_relu = cfg.net.objectness_relu;
    Ok(params)
}

/// Every scene of a dataset root, in sorted stem order.
pub fn load_dataset(root: &Path) -> Result<Vec<Scene>> {
    let stems = list_stems(root)?;
    if stems.is_empty() {
        return Err(CliError::Usage(format!(
            "no scans under {}",
            root.join(VELODYNE_DIR).display()
        )));
    }
    Ok(stems
        .iter()
        .map(|s| load_scene(root, s))
        .collect::<lmnet::Result<_>>()?)
}

/// Scenes plus their augmented replicas, rasterized into training samples.
pub fn training_samples(scenes: &[Scene], cfg: &PipelineConfig) -> Result<Vec<TrainSample>> {
    let mut all: Vec<Scene> = scenes.to_vec();
    for (i, scene) in scenes.iter().enumerate() {
        for r in 0..cfg.augment.replicas {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ ((i as u64) << 32) ^ r as u64);
            all.push(augment(scene, &cfg.augment, &mut rng));
        }
    }
    let targets = all
        .iter()
        .map(|s| rasterize_targets(s, &cfg.projection))
        .collect::<lmnet::Result<Vec<_>>>()?;
    let stats = ClassStats::from_targets(&targets);
    Ok(all
        .iter()
        .zip(&targets)
        .map(|(s, t)| TrainSample {
            input: encode_frontal_view(&s.points, &cfg.projection).into_channels(),
            targets: t.loss_targets(&stats),
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Loss of the starting weights, then one mean training loss per epoch.
    pub history: Vec<f64>,
    pub params: LMNetParams,
}

pub fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(s, "{i},{l}").unwrap();
    }
    s
}

pub fn train(
    cfg: &PipelineConfig,
    data: &Path,
    weights_out: &Path,
    history_out: Option<&Path>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let samples = training_samples(&load_dataset(data)?, cfg)?;
    let mut params = match resume {
        Some(p) => load_params(p, cfg)?,
        None => LMNetParams::build_with(cfg.net, cfg.train.seed)?,
    };
    let start = evaluate_loss(&params, &samples, cfg.train.background_balance)?;
    info!("{} samples, starting loss {start:.6}", samples.len());
    let mut history = vec![start];
    history.extend(train_with_progress(&mut params, &samples, &cfg.train, |_, _| {})?);
    create_parent(weights_out)?;
    save_weights(&params, weights_out)?;
    if let Some(path) = history_out {
        create_parent(path)?;
        fs::write(path, history_csv(&history))?;
    }
    Ok(TrainOutcome { history, params })
}

/// Detections of one scan and the intermediate maps.
pub struct FrameResult {
    pub map: FrontalViewMap,
    pub output: NetOutput,
    pub detections: Vec<Candidate>,
}

pub fn detect_points(
    params: &LMNetParams,
    points: &[Point3],
    cfg: &PipelineConfig,
    algo: ConvAlgo,
) -> Result<FrameResult> {
    let map = encode_points(points, cfg);
    let output = infer(params, map.channels(), algo)?;
    let detections = detect(&output.objectness, &output.corners, &map, &cfg.nms)?;
    Ok(FrameResult {
        map,
        output,
        detections,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Kitti,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Kitti => "txt",
            OutputFormat::Json => "jsonl",
        }
    }

    pub fn format(self, dets: &[Candidate], calib: &Calibration) -> String {
        match self {
            OutputFormat::Kitti => format_kitti_results(dets, calib),
            OutputFormat::Json => format_json_lines(dets),
        }
    }
}

struct Frame {
    stem: String,
    scan: PathBuf,
    calib: Option<PathBuf>,
}

/// A single scan, a directory of scans, or a dataset root with `velodyne/`
/// (whose `calib/` files are then used), in sorted name order.
fn discover_frames(input: &Path) -> Result<(Vec<Frame>, bool)> {
    if input.is_file() {
        let frame = Frame {
            stem: stem_of(input),
            scan: input.to_path_buf(),
            calib: None,
        };
        return Ok((vec![frame], false));
    }
    let (dir, calib_dir) = if input.join(VELODYNE_DIR).is_dir() {
        (input.join(VELODYNE_DIR), Some(input.join(CALIB_DIR)))
    } else {
        (input.to_path_buf(), None)
    };
    let mut frames = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "bin") {
            let stem = stem_of(&path);
            let calib = calib_dir
                .as_ref()
                .map(|d| d.join(format!("{stem}.txt")))
                .filter(|p| p.is_file());
            frames.push(Frame {
                stem,
                scan: path,
                calib,
            });
        }
    }
    frames.sort_by(|a, b| a.stem.cmp(&b.stem));
    Ok((frames, true))
}

pub struct InferOptions<'a> {
    pub weights: &'a Path,
    pub input: &'a Path,
    pub output: &'a Path,
    pub format: OutputFormat,
    pub render: Option<&'a Path>,
    pub calib: Option<&'a Path>,
    pub algo: ConvAlgo,
}

/// Runs the detector over the input and writes one detection file per
/// scan. Returns `(stem, detections)` in processing order.
pub fn infer_files(cfg: &PipelineConfig, opts: &InferOptions) -> Result<Vec<(String, Vec<Candidate>)>> {
    let params = load_params(opts.weights, cfg)?;
    let (frames, batch) = discover_frames(opts.input)?;
    let default_calib = match opts.calib {
        Some(p) => Calibration::read(p)?,
        None => Calibration::default(),
    };
    if batch {
        fs::create_dir_all(opts.output)?;
    } else {
        create_parent(opts.output)?;
    }
    let mut results = Vec::with_capacity(frames.len());
    for frame in frames {
        let points = read_kitti_bin(&frame.scan)?;
        let r = detect_points(&params, &points, cfg, opts.algo)?;
        let calib = match &frame.calib {
            Some(p) => Calibration::read(p)?,
            None => default_calib.clone(),
        };
        let path = if batch {
            opts.output.join(format!("{}.{}", frame.stem, opts.format.extension()))
        } else {
            opts.output.to_path_buf()
        };
        fs::write(&path, opts.format.format(&r.detections, &calib))?;
        if let Some(dir) = opts.render {
            write_class_image(&r.output.objectness, &r.map, &dir.join(format!("{}.ppm", frame.stem)))?;
        }
        info!("{}: {} detections", frame.stem, r.detections.len());
        results.push((frame.stem, r.detections));
    }
    Ok(results)
}

/// Writes `count` synthetic scenes as a KITTI-layout dataset. A non-empty
/// output directory is only replaced with `force`.
pub fn synth(cfg: &PipelineConfig, output: &Path, count: usize, force: bool) -> Result<()> {
    cfg.synth.validate()?;
    if output.exists() && fs::read_dir(output)?.next().is_some() {
        if !force {
            return Err(lmnet::Error::InvalidArgument(format!(
                "{} is not empty; pass --force to replace its dataset",
                output.display()
            ))
            .into());
        }
        for dir in [VELODYNE_DIR, LABEL_DIR, CALIB_DIR] {
            let d = output.join(dir);
            if d.is_dir() {
                fs::remove_dir_all(d)?;
            }
        }
    }
    let calib = Calibration::default();
    for i in 0..count {
        let scene = synth_scene(&cfg.synth.for_index(i as u64), &cfg.projection)?;
        write_scene(output, &format!("{i:06}"), &scene, &calib)?;
    }
    info!("wrote {count} scenes to {}", output.display());
    Ok(())
}

fn read_detections(path: &Path, calib: &Calibration) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(parse_json_lines(&text)?
            .into_iter()
            .map(|c| Detection {
                bbox: c.bbox,
                confidence: c.confidence as f64,
            })
            .collect());
    }
    Ok(parse_kitti_label(&text, calib)?
        .into_iter()
        .map(|(bbox, score)| Detection {
            bbox,
            confidence: score.unwrap_or(1.0),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub frames: usize,
    pub classes: BTreeMap<ObjectClass, EvalMetrics>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<11} {:>9} {:>9} {:>9} {:>5} {:>5} {:>5}\n",
            "class", "precision", "recall", "AP", "TP", "FP", "GT"
        );
        for (c, m) in &self.classes {
            writeln!(
                s,
                "{:<11} {:>9.4} {:>9.4} {:>9.4} {:>5} {:>5} {:>5}",
                c.kitti_name(),
                m.precision,
                m.recall,
                m.ap,
                m.true_positives,
                m.false_positives,
                m.ground_truths
            )
            .unwrap();
        }
        s
    }
}

/// Scores `<stem>.txt` (KITTI results) or `<stem>.jsonl` detection files
/// against the labels of a dataset root. Frames without a detection file
/// count as having no detections.
pub fn eval(detections: &Path, labels: &Path, iou: f64) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(lmnet::Error::InvalidArgument(format!("IoU threshold {iou} outside [0, 1]")).into());
    }
    let mut stems: Vec<String> = fs::read_dir(labels.join(LABEL_DIR))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .map(|p| stem_of(&p))
        .collect();
    stems.sort();
    let (mut dets, mut gts) = (Vec::new(), Vec::new());
    for stem in &stems {
        let calib_path = labels.join(CALIB_DIR).join(format!("{stem}.txt"));
        let calib = if calib_path.is_file() {
            Calibration::read(&calib_path)?
        } else {
            Calibration::default()
        };
        let text = fs::read_to_string(labels.join(LABEL_DIR).join(format!("{stem}.txt")))?;
        gts.push(parse_kitti_label(&text, &calib)?.into_iter().map(|(b, _)| b).collect());
        let found = ["txt", "jsonl"]
            .iter()
            .map(|ext| detections.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file());
        dets.push(match found {
            Some(p) => read_detections(&p, &calib)?,
            None => Vec::new(),
        });
    }
    Ok(EvalReport {
        iou_threshold: iou,
        frames: stems.len(),
        classes: evaluate_per_class(&dets, &gts, iou),
    })
}

pub struct BenchOptions<'a> {
    pub weights: Option<&'a Path>,
    pub input: Option<&'a Path>,
    pub repetitions: usize,
    pub warmup: usize,
    pub algo: ConvAlgo,
}

/// Times crop and projection, the forward pass and post-processing over
/// `repetitions` frames after `warmup` unmeasured ones. Without weights a
/// freshly initialized network is used; without input, a synthetic scene.
pub fn bench(cfg: &PipelineConfig, opts: &BenchOptions) -> Result<TimingReport> {
    if opts.repetitions == 0 {
        return Err(lmnet::Error::InvalidArgument("repetitions must be at least 1".into()).into());
    }
    let params = match opts.weights {
        Some(p) => load_params(p, cfg)?,
        None => LMNetParams::build_with(cfg.net, cfg.train.seed)?,
    };
    let points = match opts.input {
        Some(p) => read_kitti_bin(p)?,
        None => synth_scene(&cfg.synth, &cfg.projection)?.points,
    };
    let mut samples: [Vec<Duration>; 4] = Default::default();
    let mut detections = 0;
    for run in 0..opts.warmup + opts.repetitions {
        let t0 = Instant::now();
        let map = encode_points(&points, cfg);
        let t1 = Instant::now();
        let out = infer(&params, map.channels(), opts.algo)?;
        let t2 = Instant::now();
        let dets = detect(&out.objectness, &out.corners, &map, &cfg.nms)?;
        let t3 = Instant::now();
        if run >= opts.warmup {
            for (s, d) in samples.iter_mut().zip([t1 - t0, t2 - t1, t3 - t2, t3 - t0]) {
                s.push(d);
            }
        }
        detections = dets.len();
    }
    let total = StageStats::from_samples(&samples[3]);
    Ok(TimingReport {
        frames: opts.repetitions,
        warmup: opts.warmup,
        threads: rayon::current_num_threads(),
        algo: match opts.algo {
            ConvAlgo::Direct => "direct".into(),
            ConvAlgo::Im2col => "im2col".into(),
        },
        height: cfg.projection.height,
        width: cfg.projection.width,
        machine: Machine::current(),
        stages: Stages {
            preprocess: StageStats::from_samples(&samples[0]),
            forward: StageStats::from_samples(&samples[1]),
            postprocess: StageStats::from_samples(&samples[2]),
        },
        frames_per_second: 1e3 / total.mean_ms,
        total,
        detections,
    })
}
