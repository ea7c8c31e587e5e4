//! Command-line surface for the symmetry detection pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde_json::json;

use symdet::aggregate::ClusterParams;
use symdet::error::{Result, SymError};
use symdet::io::{
    list_frames, load_frame, load_intrinsics, load_symmetries, read_color_png, read_depth_png,
    read_mask_png, save_symmetries, write_color_png, FrameMeta,
};
use symdet::metrics::{
    counterpart_curve, dense_error, match_frame, order_metrics, pr_at_threshold, pr_curve,
    FrameEval, PrPoint,
};
use symdet::pipeline::{detect_scan, DetectParams, StageTimes};
use symdet::predictor::model::{forward, ref_candidate, ModelConfig, ModelParams};
use symdet::predictor::train::{assign_frame, prepare_frame};
use symdet::predictor::TrainConfig;
use symdet::synth::dataset::{build_dataset, default_intrinsics, DatasetSpec};
use symdet::synth::ShapeKind;
use symdet::verify::VerifyParams;
use symdet::SymmetryHypothesis;

#[derive(Parser)]
#[command(name = "symdet", version, about = "Symmetry detection for single-view RGB-D scans")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-frame batch work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory (or file, for train and bench).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic RGB-D symmetry benchmark.
    Synth(SynthArgs),
    /// Train the predictor on a dataset split.
    Train(TrainArgs),
    /// Detect symmetries in every frame of a split.
    Detect(DetectArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Render per-pixel symmetry-support segmentations.
    Segment(SegmentArgs),
    /// Report per-stage pipeline timings.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated training shape kinds.
    #[arg(long, default_value = "box,cylinder,ngon")]
    shapes: String,
    /// Shape kind reserved for the holdout-category split.
    #[arg(long)]
    holdout_kind: Option<String>,
    /// Training instances per shape kind.
    #[arg(long, default_value_t = 20)]
    per_shape: usize,
    /// Training views per instance.
    #[arg(long, default_value_t = 5)]
    views: usize,
    /// Holdout views of each training instance.
    #[arg(long, default_value_t = 2)]
    holdout_views: usize,
    /// Fresh holdout instances per kind.
    #[arg(long, default_value_t = 2)]
    holdout_instances: usize,
    /// Views per holdout instance.
    #[arg(long, default_value_t = 5)]
    holdout_instance_views: usize,
    /// Target occlusion-ratio range, e.g. 0.5-0.6.
    #[arg(long)]
    occlusion: Option<String>,
    /// Overwrite a nonempty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of training frames.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Weight of the foot-point / axis regression terms.
    #[arg(long, default_value_t = 4.0)]
    reg_weight: f64,
    /// Comma-separated encoder layer widths.
    #[arg(long, default_value = "64,128,256")]
    encoder: String,
    #[arg(long, default_value_t = 128)]
    trunk: usize,
    #[arg(long, default_value_t = 16)]
    attn: usize,
    /// Per-frame point budget.
    #[arg(long, default_value_t = 256)]
    max_points: usize,
    /// Zero the RGB input channels.
    #[arg(long)]
    no_rgb: bool,
    /// Disable counterpart and orbit supervision.
    #[arg(long)]
    no_counterpart: bool,
    /// Per-epoch loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DetectArgs {
    /// Directory of frames to process.
    #[arg(long)]
    data: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// DBSCAN neighborhood radius (normalized units).
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// Candidate confidence floor.
    #[arg(long, default_value_t = 0.2)]
    confidence: f64,
    /// Core weight threshold at 1000 points.
    #[arg(long, default_value_t = 500.0)]
    min_weight: f64,
    /// Verification violation budget at 1000 points.
    #[arg(long, default_value_t = 50.0)]
    max_violations: f64,
    /// Plane refinement iterations (0 disables).
    #[arg(long, default_value_t = 6)]
    refine_iters: usize,
    /// Skip visibility verification.
    #[arg(long)]
    no_verify: bool,
    /// Zero the RGB input channels.
    #[arg(long)]
    no_rgb: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of ground-truth frames.
    #[arg(long)]
    data: PathBuf,
    /// Directory of per-frame detection JSON files.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    confidence: f64,
    #[arg(long, default_value_t = 0.25)]
    error_threshold: f64,
    /// Model checkpoint; enables the counterpart error curve.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    detect: DetectArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    detect: DetectArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(frame_errors) if frame_errors == 0 => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} frame(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    };
    code
}

/// Returns the number of frame-level errors; hard errors abort via Err.
fn run(cli: &Cli) -> Result<usize> {
    match &cli.cmd {
        Cmd::Synth(a) => cmd_synth(cli, a).map(|()| 0),
        Cmd::Train(a) => cmd_train(cli, a).map(|()| 0),
        Cmd::Detect(a) => cmd_detect(cli, a),
        Cmd::Eval(a) => cmd_eval(cli, a),
        Cmd::Segment(a) => cmd_segment(cli, &a.detect),
        Cmd::Bench(a) => cmd_bench(cli, &a.detect).map(|()| 0),
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| SymError::InvalidArgument("--out is required".into()))
}

fn frame_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Apply `f` to every frame directory, optionally across threads, and return
/// per-frame results in input order.
fn run_frames<T, F>(frames: &[PathBuf], threads: usize, f: F) -> Vec<std::result::Result<T, String>>
where
    T: Send,
    F: Fn(&Path) -> Result<T> + Sync,
{
    let wrap = |d: &Path| f(d).map_err(|e| e.to_string());
    if threads <= 1 || frames.len() <= 1 {
        return frames.iter().map(|d| wrap(d)).collect();
    }
    let slots: Vec<Mutex<Option<std::result::Result<T, String>>>> =
        frames.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.min(frames.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= frames.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(wrap(&frames[i]));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

fn parse_kinds(s: &str) -> Result<Vec<ShapeKind>> {
    s.split(',').map(|k| k.trim().parse::<ShapeKind>()).collect()
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let out = out_dir(cli)?;
    if out.exists() && fs::read_dir(out)?.next().is_some() && !args.force {
        return Err(SymError::InvalidArgument(format!(
            "output directory {} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    let occlusion = match &args.occlusion {
        None => None,
        Some(s) => {
            let (lo, hi) = s
                .split_once('-')
                .ok_or_else(|| SymError::InvalidArgument("occlusion must be lo-hi".into()))?;
            let lo: f64 = lo.parse().map_err(|_| SymError::Parse("bad occlusion bound".into()))?;
            let hi: f64 = hi.parse().map_err(|_| SymError::Parse("bad occlusion bound".into()))?;
            Some((lo, hi))
        }
    };
    let spec = DatasetSpec {
        kinds: parse_kinds(&args.shapes)?,
        holdout_kind: args.holdout_kind.as_deref().map(str::parse).transpose()?,
        instances_per_kind: args.per_shape,
        views_per_instance: args.views,
        holdout_views_per_instance: args.holdout_views,
        holdout_instances_per_kind: args.holdout_instances,
        holdout_instance_views: args.holdout_instance_views,
        occlusion,
        intrinsics: default_intrinsics(),
    };
    let counts = build_dataset(&spec, cli.seed, out)?;
    println!("split\tframes");
    for (split, n) in &counts {
        println!("{split}\t{n}");
    }
    Ok(())
}

fn parse_encoder(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| SymError::Parse("bad encoder width".into())))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(SymError::InvalidArgument("encoder needs exactly three widths".into())),
    }
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let out = out_dir(cli)?;
    let frames = list_frames(&args.data)?;
    let model_cfg = ModelConfig {
        encoder: parse_encoder(&args.encoder)?,
        trunk: args.trunk,
        attn: args.attn,
        max_points: args.max_points,
        use_rgb: !args.no_rgb,
        use_counterpart: !args.no_counterpart,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        reg_weight: args.reg_weight,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    let (model, report) =
        symdet::predictor::train(&frames, model_cfg, &train_cfg, args.log.as_deref())?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    model.save(out)?;
    if let Some(last) = report.epoch_losses.last() {
        println!("trained {} epochs on {} frames, final loss {last:.6}", args.epochs, frames.len());
    }
    Ok(())
}

fn load_model(args: &DetectArgs) -> Result<ModelParams> {
    let mut model = ModelParams::load(&args.model)?;
    if args.no_rgb {
        model.config.use_rgb = false;
    }
    Ok(model)
}

fn detect_params(args: &DetectArgs) -> DetectParams {
    DetectParams {
        cluster: ClusterParams {
            eps: args.eps,
            confidence_floor: args.confidence,
            min_weight: args.min_weight,
            ..ClusterParams::default()
        },
        refine_iters: args.refine_iters,
        verify: if args.no_verify {
            None
        } else {
            Some(VerifyParams { max_violations: args.max_violations, ..VerifyParams::default() })
        },
    }
}

/// True when no masked pixel carries valid depth, i.e. the frame contains no
/// object surface at all.
fn frame_is_empty(dir: &Path) -> Result<bool> {
    let intr = load_intrinsics(&dir.join("intrinsics.json"))?;
    let depth = read_depth_png(&dir.join("depth.png"), &intr)?;
    let mask = read_mask_png(&dir.join("mask.png"))?;
    Ok(mask.iter().zip(&depth).all(|(&m, &z)| !m || z <= 0.0))
}

fn report_failures(
    frames: &[PathBuf],
    results: &[std::result::Result<(), String>],
) -> usize {
    let mut failures = 0;
    for (dir, res) in frames.iter().zip(results) {
        if let Err(msg) = res {
            eprintln!("{}: {msg}", frame_name(dir));
            failures += 1;
        }
    }
    failures
}

fn cmd_detect(cli: &Cli, args: &DetectArgs) -> Result<usize> {
    let out = out_dir(cli)?;
    fs::create_dir_all(out)?;
    let model = load_model(args)?;
    let params = detect_params(args);
    let frames = list_frames(&args.data)?;
    let results = run_frames(&frames, cli.threads, |dir| {
        let path = out.join(format!("{}.json", frame_name(dir)));
        if frame_is_empty(dir)? {
            return save_symmetries(&path, &[]);
        }
        let (scan, _, _) = load_frame(dir)?;
        let det = detect_scan(&model, &scan, &params)?;
        save_symmetries(&path, &det.symmetries)
    });
    Ok(report_failures(&frames, &results))
}

fn write_pr_csv(path: &Path, curve: &[PrPoint]) -> Result<()> {
    let mut s = String::from("threshold,precision,recall\n");
    for p in curve {
        s.push_str(&format!("{:.6},{:.6},{:.6}\n", p.threshold, p.precision, p.recall));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Minimal line plot of y against x on a unit-square axis box.
fn write_svg_curve(path: &Path, points: &[(f64, f64)], xlabel: &str, ylabel: &str) -> Result<()> {
    let (w, h, m) = (400.0, 400.0, 45.0);
    let sx = |x: f64| m + x.clamp(0.0, 1.0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - y.clamp(0.0, 1.0) * (h - 2.0 * m);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        w - 2.0 * m,
        h - 2.0 * m
    );
    if !points.is_empty() {
        let pts: Vec<String> =
            points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{xlabel}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 14 {})\">{ylabel}</text>\n</svg>\n",
        w / 2.0,
        h - 12.0,
        h / 2.0,
        h / 2.0
    ));
    fs::write(path, svg)?;
    Ok(())
}

struct EvalFrame {
    ref_eval: FrameEval,
    rot_eval: FrameEval,
    /// (predicted order, ground-truth order) of confidently matched
    /// rotational pairs; continuous axes map to order 0.
    orders: Vec<(u32, u32)>,
    bucket: usize,
}

fn eval_frame(
    dir: &Path,
    det_dir: &Path,
    confidence: f64,
    error_threshold: f64,
) -> Result<EvalFrame> {
    let (scan, gts, meta) = load_frame(dir)?;
    let path = det_dir.join(format!("{}.json", frame_name(dir)));
    let dets = load_symmetries(&path)?;
    let id = meta.frame_id.clone();
    let build = |refl: bool| -> Result<FrameEval> {
        let preds: Vec<&SymmetryHypothesis> =
            dets.iter().filter(|s| s.is_reflectional() == refl).collect();
        let gt: Vec<&SymmetryHypothesis> =
            gts.iter().filter(|s| s.is_reflectional() == refl).collect();
        let mut errors = Vec::with_capacity(preds.len());
        for p in &preds {
            let mut row = Vec::with_capacity(gt.len());
            for g in &gt {
                row.push(dense_error(g, p, &scan.points)?);
            }
            errors.push(row);
        }
        Ok(FrameEval {
            frame_id: id.clone(),
            errors,
            confidences: preds.iter().map(|p| p.confidence).collect(),
            num_gt: gt.len(),
        })
    };
    let ref_eval = build(true)?;
    let rot_eval = build(false)?;

    let rot_preds: Vec<&SymmetryHypothesis> =
        dets.iter().filter(|s| s.is_rotational()).collect();
    let rot_gts: Vec<&SymmetryHypothesis> = gts.iter().filter(|s| s.is_rotational()).collect();
    let rec = match_frame(&rot_eval, confidence, error_threshold)?;
    let orders = rec
        .matched
        .iter()
        .map(|&(p, g, _)| (rot_preds[p].order.unwrap_or(0), rot_gts[g].order.unwrap_or(0)))
        .collect();

    let bucket = ((meta.occlusion_ratio * 10.0).floor() as usize).min(9);
    Ok(EvalFrame { ref_eval, rot_eval, orders, bucket })
}

/// Matched predicted-vs-ground-truth counterpart pairs over a frame, in the
/// normalized (unit-diagonal) cloud.
fn counterpart_pairs(
    model: &ModelParams,
    dir: &Path,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let (scan, gts, _) = load_frame(dir)?;
    let frame = prepare_frame(&scan.points, &scan.colors, &gts, &model.config, 32)?;
    let x = symdet::predictor::features(&frame.points, &frame.colors, &model.config);
    let fp = forward(model, x, false);
    let asg = assign_frame(&fp, &frame, &model.config)?;
    let ref_out = fp.tape.value(fp.ref_head);
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (i, a) in asg.iter().enumerate() {
        let row: Vec<f64> = ref_out.row(i).to_vec();
        for &(head, gt_idx) in &a.ref_pairs {
            let s = frame.ref_gt[gt_idx];
            if let Some(cps) = &frame.gt.counterparts[s] {
                let (_, _, cp, _) = ref_candidate(&frame.points[i], &row, head);
                pred.push(cp);
                gt.push(cps[i]);
            }
        }
    }
    Ok((pred, gt))
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<usize> {
    let out = out_dir(cli)?;
    fs::create_dir_all(out)?;
    let frames = list_frames(&args.data)?;
    if frames.is_empty() {
        return Err(SymError::InvalidArgument("no frames to evaluate".into()));
    }
    // All frames must come from one split; a mixed directory indicates the
    // detections and ground truth were produced for different experiments.
    let mut split: Option<String> = None;
    for dir in &frames {
        let meta: FrameMeta =
            serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        match &split {
            None => split = Some(meta.split),
            Some(s) if *s != meta.split => {
                return Err(SymError::InvalidArgument(format!(
                    "split mismatch: {s} vs {} in {}",
                    meta.split,
                    dir.display()
                )));
            }
            _ => {}
        }
    }
    let split = split.unwrap();

    let results = run_frames(&frames, cli.threads, |dir| {
        eval_frame(dir, &args.detections, args.confidence, args.error_threshold)
    });
    let mut evals = Vec::new();
    for r in &results {
        if let Ok(e) = r {
            evals.push(e);
        }
    }
    if evals.is_empty() {
        return Err(SymError::InvalidArgument("every frame failed to evaluate".into()));
    }

    let ref_frames: Vec<FrameEval> = evals.iter().map(|e| e.ref_eval.clone()).collect();
    let rot_frames: Vec<FrameEval> = evals.iter().map(|e| e.rot_eval.clone()).collect();
    let ref_pr = pr_curve(&ref_frames, args.error_threshold)?;
    let rot_pr = pr_curve(&rot_frames, args.error_threshold)?;
    write_pr_csv(&out.join("pr_ref.csv"), &ref_pr)?;
    write_pr_csv(&out.join("pr_rot.csv"), &rot_pr)?;
    write_svg_curve(
        &out.join("pr_ref.svg"),
        &ref_pr.iter().map(|p| (p.recall, p.precision)).collect::<Vec<_>>(),
        "recall",
        "precision",
    )?;
    write_svg_curve(
        &out.join("pr_rot.svg"),
        &rot_pr.iter().map(|p| (p.recall, p.precision)).collect::<Vec<_>>(),
        "recall",
        "precision",
    )?;

    let (rp, rr, rf) = pr_at_threshold(&ref_frames, args.confidence, args.error_threshold)?;
    let (op, or, of) = pr_at_threshold(&rot_frames, args.confidence, args.error_threshold)?;

    let all_orders: Vec<(u32, u32)> = evals.iter().flat_map(|e| e.orders.clone()).collect();
    let order_summary = if all_orders.is_empty() {
        serde_json::Value::Null
    } else {
        let pred: Vec<u32> = all_orders.iter().map(|o| o.0).collect();
        let gt: Vec<u32> = all_orders.iter().map(|o| o.1).collect();
        let (acc, angle) = order_metrics(&pred, &gt)?;
        json!({ "accuracy": acc, "mean_angle_deg": angle, "matched": all_orders.len() })
    };

    // Counterpart errors live in the normalized cloud, whose bounding-box
    // diagonal is 1, so the sweep ceiling 0.25 * diagonal is just 0.25.
    let counterpart_summary = match &args.model {
        None => serde_json::Value::Null,
        Some(path) => {
            let model = ModelParams::load(path)?;
            let mut pred = Vec::new();
            let mut gt = Vec::new();
            for dir in &frames {
                if let Ok((p, g)) = counterpart_pairs(&model, dir) {
                    pred.extend(p);
                    gt.extend(g);
                }
            }
            if pred.is_empty() {
                serde_json::Value::Null
            } else {
                let (curve, auc) = counterpart_curve(&pred, &gt, 0.25, 50)?;
                let mut s = String::from("threshold,fraction\n");
                for (t, f) in &curve {
                    s.push_str(&format!("{t:.6},{f:.6}\n"));
                }
                fs::write(out.join("counterpart.csv"), s)?;
                write_svg_curve(
                    &out.join("counterpart.svg"),
                    &curve.iter().map(|&(t, f)| (t / 0.25, f)).collect::<Vec<_>>(),
                    "error threshold / 0.25 diag",
                    "fraction below",
                )?;
                json!({ "auc": auc, "t_max": 0.25, "pairs": pred.len() })
            }
        }
    };

    let mut buckets = Vec::new();
    for b in 0..10usize {
        let idx: Vec<usize> =
            (0..evals.len()).filter(|&i| evals[i].bucket == b).collect();
        if idx.is_empty() {
            continue;
        }
        let bref: Vec<FrameEval> = idx.iter().map(|&i| evals[i].ref_eval.clone()).collect();
        let brot: Vec<FrameEval> = idx.iter().map(|&i| evals[i].rot_eval.clone()).collect();
        let (_, _, f_ref) = pr_at_threshold(&bref, args.confidence, args.error_threshold)?;
        let (_, _, f_rot) = pr_at_threshold(&brot, args.confidence, args.error_threshold)?;
        buckets.push(json!({
            "lo": b as f64 / 10.0,
            "hi": (b + 1) as f64 / 10.0,
            "frames": idx.len(),
            "ref_f1": f_ref,
            "rot_f1": f_rot,
        }));
    }

    let failures = report_failures(
        &frames,
        &results.iter().map(|r| r.as_ref().map(|_| ()).map_err(Clone::clone)).collect::<Vec<_>>(),
    );
    let summary = json!({
        "split": split,
        "frames": evals.len(),
        "failed_frames": failures,
        "confidence_threshold": args.confidence,
        "error_threshold": args.error_threshold,
        "reflectional": { "precision": rp, "recall": rr, "f1": rf },
        "rotational": { "precision": op, "recall": or, "f1": of },
        "order": order_summary,
        "counterpart": counterpart_summary,
        "occlusion_buckets": buckets,
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(out.join("summary.json"), &text)?;
    println!("{text}");
    Ok(failures)
}

const PALETTE: [[f64; 3]; 10] = [
    [0.84, 0.16, 0.16],
    [0.17, 0.51, 0.85],
    [0.19, 0.72, 0.29],
    [0.93, 0.60, 0.13],
    [0.58, 0.29, 0.75],
    [0.12, 0.75, 0.72],
    [0.89, 0.31, 0.60],
    [0.55, 0.65, 0.12],
    [0.42, 0.36, 0.25],
    [0.35, 0.39, 0.88],
];
const OUTLIER_GRAY: [f64; 3] = [0.5, 0.5, 0.5];

fn cmd_segment(cli: &Cli, args: &DetectArgs) -> Result<usize> {
    let out = out_dir(cli)?;
    fs::create_dir_all(out)?;
    let model = load_model(args)?;
    let params = detect_params(args);
    let frames = list_frames(&args.data)?;
    let results = run_frames(&frames, cli.threads, |dir| {
        let (scan, _, _) = load_frame(dir)?;
        let det = detect_scan(&model, &scan, &params)?;
        // Each scan point inherits the cluster label of its nearest
        // subsampled point.
        let sub_points: Vec<Vector3<f64>> =
            det.subsample.iter().map(|&i| scan.points[i]).collect();
        let mut point_color = vec![OUTLIER_GRAY; scan.points.len()];
        for (k, p) in scan.points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (j, q) in sub_points.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            if let Some(label) = det.point_labels[best.1] {
                point_color[k] = PALETTE[label % PALETTE.len()];
            }
        }
        let (w, h) = (scan.intrinsics.width, scan.intrinsics.height);
        let mut img = read_color_png(&dir.join("color.png"))?;
        let mut k = 0usize;
        for i in 0..img.len() {
            if scan.mask[i] && scan.depth[i] > 0.0 {
                img[i] = point_color[k];
                k += 1;
            }
        }
        write_color_png(&out.join(format!("{}.png", frame_name(dir))), &img, w, h)
    });
    Ok(report_failures(&frames, &results))
}

fn mean_stddev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

fn cmd_bench(cli: &Cli, args: &DetectArgs) -> Result<()> {
    let model = load_model(args)?;
    let params = detect_params(args);
    let frames = list_frames(&args.data)?;
    if frames.is_empty() {
        return Err(SymError::InvalidArgument("no frames to benchmark".into()));
    }
    let mut times: Vec<StageTimes> = Vec::with_capacity(frames.len());
    for dir in &frames {
        let (scan, _, _) = load_frame(dir)?;
        times.push(detect_scan(&model, &scan, &params)?.times);
    }
    let stage = |get: fn(&StageTimes) -> f64| {
        let ms: Vec<f64> = times.iter().map(|t| get(t) * 1e3).collect();
        let (mean, sd) = mean_stddev(&ms);
        json!({ "mean_ms": mean, "stddev_ms": sd })
    };
    let report = json!({
        "frames": frames.len(),
        "stages": {
            "inference": stage(|t| t.inference),
            "aggregation": stage(|t| t.aggregation),
            "verification": stage(|t| t.verification),
        },
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &cli.out {
        Some(path) => fs::write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
