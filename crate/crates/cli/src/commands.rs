//! Individual subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use rayon::prelude::*;

use semloc_core::fusion::{fuse, FuseOptions, ObjectMask};
use semloc_core::geometry::{read_pose_file, write_pose_file, CameraModel, CameraPose, PoseRecord};
use semloc_core::localize::{
    evaluate_pose_stream, kalman_smooth, refine_pose, KalmanParams, NoiseModel, RefineOptions,
    RenderedView, SemanticWeightTable,
};
use semloc_core::map::{
    load_cloud, remove_moving, write_cloud_ascii, write_cloud_binary, ClassRegistry,
    SemanticPointCloud,
};
use semloc_core::metrics::{
    coco_thresholds, instance_ap, summarize, ConfusionMatrix, InstanceGroundTruth,
    InstancePrediction,
};
use semloc_core::render::{
    compute_splat_sizes, read_pgm, render, render_birdview, write_depth_map, write_pgm,
    BirdviewBounds, LabelMap, SplatConfig,
};
use semloc_core::road::RoadOffsetField;
use semloc_core::scene::{generate, SceneSpec};

pub struct Context {
    pub seed: Option<u64>,
    pub verbose: bool,
}

impl Context {
    pub fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("[semloc] {msg}");
        }
    }
}

/// Parses `fx,fy,cx,cy,width,height`.
pub fn parse_camera(s: &str) -> Result<CameraModel> {
    let v = parse_numbers(s, 6).context("camera expects fx,fy,cx,cy,width,height")?;
    Ok(CameraModel::new(
        v[0],
        v[1],
        v[2],
        v[3],
        v[4] as u32,
        v[5] as u32,
    )?)
}

pub fn parse_splat_range(s: &str) -> Result<(f64, f64)> {
    let v = parse_numbers(s, 2).context("splat range expects s_min,s_max")?;
    if !(v[0] > 0.0 && v[1] >= v[0]) {
        bail!("invalid splat range [{}, {}]", v[0], v[1]);
    }
    Ok((v[0], v[1]))
}

fn parse_numbers(s: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.with_context(|| format!("cannot parse numbers from {s:?}"))?;
    if vals.len() != n {
        bail!("expected {n} comma-separated numbers, got {}", vals.len());
    }
    Ok(vals)
}

pub fn parse_class_list(s: &str) -> Result<Vec<u16>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u16>()
                .with_context(|| format!("bad class id {t:?}"))
        })
        .collect()
}

pub fn load_registry(spec: &str) -> Result<ClassRegistry> {
    Ok(match spec {
        "semantic" => ClassRegistry::semantic_classes(),
        "lane" => ClassRegistry::lane_classes(),
        "full" => ClassRegistry::full(),
        path => ClassRegistry::load(Path::new(path))?,
    })
}

pub fn load_weights(spec: &str) -> Result<SemanticWeightTable> {
    Ok(match spec {
        "standard" => SemanticWeightTable::standard(),
        "uniform" => SemanticWeightTable::uniform(),
        path => SemanticWeightTable::read_csv(Path::new(path))?,
    })
}

fn load_scene_spec(spec: &str) -> Result<SceneSpec> {
    if spec == "standard" {
        Ok(SceneSpec::standard())
    } else {
        Ok(SceneSpec::load(Path::new(spec))?)
    }
}

/// Sorted listing of files in a directory with the given extension.
fn sorted_dir(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == extension))
        .collect();
    files.sort();
    Ok(files)
}

pub fn gen_scene(ctx: &Context, spec: &str, out: &Path) -> Result<()> {
    let mut scene_spec = load_scene_spec(spec)?;
    if let Some(seed) = ctx.seed {
        scene_spec.seed = seed;
    }
    let scene = generate(&scene_spec)?;
    std::fs::create_dir_all(out)?;
    for (round, cloud) in scene.rounds.iter().enumerate() {
        write_cloud_binary(&out.join(format!("round_{round:02}.spc")), cloud)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(
            out.join(format!("membership_{round:02}.txt")),
        )?);
        writeln!(f, "# primitive transient")?;
        for origin in &scene.membership[round] {
            writeln!(f, "{} {}", origin.primitive, u8::from(origin.transient))?;
        }
    }
    write_pose_file(&out.join("gt_poses.txt"), &scene.poses)?;
    ctx.log(&format!(
        "scene: {} rounds, {} poses, {} total points",
        scene.rounds.len(),
        scene.poses.len(),
        scene.rounds.iter().map(|r| r.len()).sum::<usize>()
    ));
    Ok(())
}

pub fn filter_moving(
    ctx: &Context,
    rounds: &[PathBuf],
    delta: f64,
    eps_d: f64,
    out: &Path,
) -> Result<()> {
    let clouds: Result<Vec<SemanticPointCloud>> = rounds
        .iter()
        .map(|p| load_cloud(p).with_context(|| format!("loading {}", p.display())))
        .collect();
    let clouds = clouds?;
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    let filtered = remove_moving(&clouds, delta, eps_d)?;
    ctx.log(&format!("kept {} of {} points", filtered.len(), total));
    write_cloud_auto(out, &filtered)
}

fn write_cloud_auto(path: &Path, cloud: &SemanticPointCloud) -> Result<()> {
    if path.extension().is_some_and(|e| e == "txt") {
        write_cloud_ascii(path, cloud)?;
    } else {
        write_cloud_binary(path, cloud)?;
    }
    Ok(())
}

pub fn render_cmd(
    ctx: &Context,
    map: &Path,
    poses: &Path,
    cam: &str,
    splat_range: &str,
    out: &Path,
) -> Result<()> {
    let cloud = load_cloud(map)?;
    let records = read_pose_file(poses)?;
    let camera = parse_camera(cam)?;
    let range = parse_splat_range(splat_range)?;
    let pose_list: Vec<CameraPose> = records.iter().map(|r| r.pose).collect();
    let splat = compute_splat_sizes(&cloud, &pose_list, range);
    std::fs::create_dir_all(out)?;
    let frames: Vec<(u64, LabelMap, semloc_core::render::DepthMap)> = records
        .par_iter()
        .map(|rec| {
            let (label, depth) = render(&cloud, &rec.pose, &camera, &splat);
            (rec.frame_id, label, depth)
        })
        .collect();
    for (frame_id, label, depth) in &frames {
        write_pgm(&out.join(format!("label_{frame_id:06}.pgm")), label)?;
        write_depth_map(&out.join(format!("depth_{frame_id:06}.dpt")), depth)?;
    }
    ctx.log(&format!("rendered {} frames", frames.len()));
    Ok(())
}

pub fn render_birdview_cmd(
    ctx: &Context,
    map: &Path,
    bounds: &str,
    resolution: f64,
    filter_road_tilt: Option<f64>,
    out: &Path,
) -> Result<()> {
    let v = parse_numbers(bounds, 4).context("bounds expects min_x,min_y,max_x,max_y")?;
    if !(resolution > 0.0) {
        bail!("resolution must be positive");
    }
    let cloud = load_cloud(map)?;
    let cloud = match filter_road_tilt {
        Some(tilt) => {
            let outcome = semloc_core::map::filter_road_points(&cloud, tilt)?;
            ctx.log(&format!(
                "road filter kept {} points ({} degenerate dropped)",
                outcome.cloud.len(),
                outcome.degenerate_dropped
            ));
            outcome.cloud
        }
        None => cloud,
    };
    let bv = render_birdview(
        &cloud,
        BirdviewBounds::new(v[0], v[1], v[2], v[3]),
        resolution,
    );
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let stem = out.to_string_lossy();
    write_pgm(Path::new(&format!("{stem}_label.pgm")), &bv.labels)?;
    // intensity quantized to 8-bit for the PGM
    let intensity = LabelMap::from_data(
        bv.width,
        bv.height,
        bv.intensity
            .iter()
            .map(|&i| (i.clamp(0.0, 1.0) * 255.0).round() as u16)
            .collect(),
    );
    write_pgm(Path::new(&format!("{stem}_intensity.pgm")), &intensity)?;
    ctx.log(&format!("bird view {}x{} cells", bv.width, bv.height));
    Ok(())
}

pub fn build_road_field(
    ctx: &Context,
    map: &Path,
    road_classes: &str,
    resolution: f64,
    out: &Path,
) -> Result<()> {
    let cloud = load_cloud(map)?;
    let classes = parse_class_list(road_classes)?;
    let field = RoadOffsetField::build(&cloud, &classes, resolution)?;
    field.save(out)?;
    ctx.log(&format!(
        "offset field {}x{} at {} m/cell",
        field.width(),
        field.height(),
        field.resolution()
    ));
    Ok(())
}

pub fn simulate_noise(
    ctx: &Context,
    poses: &Path,
    trans_max: f64,
    rot_max: f64,
    out: &Path,
) -> Result<()> {
    let records = read_pose_file(poses)?;
    let model = NoiseModel::new(trans_max, rot_max, ctx.seed.unwrap_or(0))?;
    let noisy = model.perturb_stream(&records.iter().map(|r| r.pose).collect::<Vec<_>>());
    let out_records: Vec<PoseRecord> = records
        .iter()
        .zip(noisy)
        .map(|(r, pose)| PoseRecord {
            frame_id: r.frame_id,
            pose,
        })
        .collect();
    write_pose_file(out, &out_records)?;
    ctx.log(&format!("perturbed {} poses", out_records.len()));
    Ok(())
}

pub fn rectify(ctx: &Context, poses: &Path, field: &Path, out: &Path) -> Result<()> {
    let records = read_pose_file(poses)?;
    let field = RoadOffsetField::load(field)?;
    let rectified: Vec<PoseRecord> = records
        .iter()
        .map(|r| PoseRecord {
            frame_id: r.frame_id,
            pose: CameraPose::new(
                *r.pose.rotation(),
                field.rectify_translation(r.pose.translation()),
            ),
        })
        .collect();
    write_pose_file(out, &rectified)?;
    ctx.log(&format!("rectified {} poses", rectified.len()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn refine_cmd(
    ctx: &Context,
    map: &Path,
    coarse: &Path,
    gt: &Path,
    cam: &str,
    weights: &str,
    splat_range: &str,
    max_points: usize,
    out: &Path,
) -> Result<()> {
    let cloud = load_cloud(map)?;
    let coarse_records = read_pose_file(coarse)?;
    let gt_records = read_pose_file(gt)?;
    if coarse_records.len() != gt_records.len() {
        bail!(
            "coarse stream has {} poses, ground truth {}",
            coarse_records.len(),
            gt_records.len()
        );
    }
    let camera = parse_camera(cam)?;
    let range = parse_splat_range(splat_range)?;
    let table = load_weights(weights)?;
    let gt_poses: Vec<CameraPose> = gt_records.iter().map(|r| r.pose).collect();
    let splat = compute_splat_sizes(&cloud, &gt_poses, range);
    let opts = RefineOptions {
        max_points,
        ..RefineOptions::default()
    };
    let refined: Result<Vec<PoseRecord>> = coarse_records
        .par_iter()
        .zip(gt_records.par_iter())
        .map(|(c, g)| {
            let (label, depth) = render(&cloud, &g.pose, &camera, &splat);
            let view = RenderedView::new(depth, label, g.pose);
            let outcome = refine_pose(&c.pose, &view, &camera, &table, &opts)
                .with_context(|| format!("refining frame {}", c.frame_id))?;
            Ok(PoseRecord {
                frame_id: c.frame_id,
                pose: outcome.pose,
            })
        })
        .collect();
    let refined = refined?;
    write_pose_file(out, &refined)?;
    ctx.log(&format!("refined {} poses", refined.len()));
    Ok(())
}

pub fn smooth(
    ctx: &Context,
    poses: &Path,
    dt: f64,
    process_noise: f64,
    measurement_noise: &str,
    out: &Path,
) -> Result<()> {
    let records = read_pose_file(poses)?;
    let params = KalmanParams {
        process_noise,
        measurement_noise: match measurement_noise {
            "auto" => None,
            v => Some(v.parse::<f64>().context("bad measurement noise")?),
        },
    };
    let smoothed = kalman_smooth(
        &records.iter().map(|r| r.pose).collect::<Vec<_>>(),
        dt,
        &params,
    )?;
    let out_records: Vec<PoseRecord> = records
        .iter()
        .zip(smoothed)
        .map(|(r, pose)| PoseRecord {
            frame_id: r.frame_id,
            pose,
        })
        .collect();
    write_pose_file(out, &out_records)?;
    ctx.log(&format!("smoothed {} poses", out_records.len()));
    Ok(())
}

pub fn fuse_cmd(
    ctx: &Context,
    rendered: &Path,
    background: &Path,
    objects_dir: Option<&Path>,
    classes: &str,
    confidence: f64,
    out: &Path,
) -> Result<()> {
    let rendered_map = read_pgm(rendered)?;
    let background_map = read_pgm(background)?;
    let registry = load_registry(classes)?;
    let mut objects = Vec::new();
    if let Some(dir) = objects_dir {
        for path in sorted_dir(dir, "pgm")? {
            objects.push(ObjectMask::read(&path)?);
        }
    }
    let fused = fuse(
        &rendered_map,
        &background_map,
        &objects,
        &registry,
        &FuseOptions {
            confidence_threshold: confidence,
        },
    )?;
    write_pgm(out, &fused.label)?;
    ctx.log(&format!(
        "fused {} objects, {} hole pixels remain",
        objects.len(),
        fused.holes
    ));
    Ok(())
}

pub fn eval_pose(_ctx: &Context, est: &Path, gt: &Path) -> Result<()> {
    let est_records = read_pose_file(est)?;
    let gt_records = read_pose_file(gt)?;
    let acc = evaluate_pose_stream(&est_records, &gt_records)?;
    println!(
        "median_translation_m,{}\nmedian_rotation_deg,{}",
        acc.median_translation_m, acc.median_rotation_deg
    );
    Ok(())
}

pub fn eval_seg(
    _ctx: &Context,
    gt_dir: &Path,
    pred_dir: &Path,
    classes: &str,
    out: Option<&Path>,
) -> Result<()> {
    let registry = load_registry(classes)?;
    let gt_files = sorted_dir(gt_dir, "pgm")?;
    if gt_files.is_empty() {
        bail!("no .pgm files in {}", gt_dir.display());
    }
    let mut conf = ConfusionMatrix::from_registry(&registry);
    for gt_path in &gt_files {
        let name = gt_path.file_name().expect("listing returned files");
        let pred_path = pred_dir.join(name);
        let gt = read_pgm(gt_path)?;
        let pred = read_pgm(&pred_path)
            .with_context(|| format!("missing prediction {}", pred_path.display()))?;
        conf.accumulate(&gt, &pred)?;
    }
    let summary = summarize(&conf)?;
    let mut csv = String::new();
    csv.push_str("class_id,name,accuracy,iou\n");
    for score in &summary.per_class {
        let name = registry
            .get(score.class_id)
            .map(|e| e.name.as_str())
            .unwrap_or("?");
        csv.push_str(&format!(
            "{},{},{},{}\n",
            score.class_id, name, score.accuracy, score.iou
        ));
    }
    csv.push_str(&format!("mean,pixel_accuracy,{},\n", summary.pixel_accuracy));
    csv.push_str(&format!(
        "mean,class_accuracy,{},\n",
        summary.mean_class_accuracy
    ));
    csv.push_str(&format!("mean,iou,{},\n", summary.mean_iou));
    emit(out, &csv)
}

pub fn eval_instance(
    _ctx: &Context,
    gt_dir: &Path,
    pred_dir: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let mut gts = Vec::new();
    for path in sorted_dir(gt_dir, "pgm")? {
        let mask = ObjectMask::read(&path)?;
        let n = (mask.width() * mask.height()) as usize;
        gts.push(InstanceGroundTruth {
            class_id: mask.class_id,
            width: mask.width(),
            height: mask.height(),
            mask: (0..n).map(|i| mask.covers(i)).collect(),
        });
    }
    if gts.is_empty() {
        bail!("no ground-truth masks in {}", gt_dir.display());
    }
    let mut preds = Vec::new();
    for path in sorted_dir(pred_dir, "pgm")? {
        let mask = ObjectMask::read(&path)?;
        let n = (mask.width() * mask.height()) as usize;
        preds.push(InstancePrediction {
            class_id: mask.class_id,
            score: mask.confidence,
            width: mask.width(),
            height: mask.height(),
            mask: (0..n).map(|i| mask.covers(i)).collect(),
        });
    }
    let summary = instance_ap(&preds, &gts, &coco_thresholds());
    let mut csv = String::from("class_id,ap\n");
    for (class, ap) in &summary.per_class {
        csv.push_str(&format!("{class},{ap}\n"));
    }
    csv.push_str(&format!("mean,{}\n", summary.mean_ap));
    emit(out, &csv)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Renders one frame and fuses it for the pipeline; shared with tests.
pub fn label_from_mask(width: u32, height: u32, covered: &[bool]) -> LabelMap {
    LabelMap::from_data(
        width,
        height,
        covered.iter().map(|&c| u16::from(c)).collect(),
    )
}

pub use semloc_core::render::DepthMap;
pub type Splat = SplatConfig;
