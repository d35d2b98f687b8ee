//! `semloc` — semantic-map rendering, pose rectification/refinement, and
//! evaluation from the command line.

mod commands;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "semloc", version, about = "Semantic 3D map localization toolkit")]
struct Cli {
    /// Worker threads for frame-parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed override for randomized stages.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print per-stage progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: point-cloud rounds, poses, membership.
    GenScene {
        /// Scene config path, or `standard` for the built-in scene.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove transient points by temporal consistency across rounds.
    FilterMoving {
        /// Per-round cloud files, in round order.
        #[arg(long, num_args = 1.., required = true)]
        rounds: Vec<PathBuf>,
        #[arg(long, default_value_t = semloc_core::map::DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = semloc_core::map::DEFAULT_EPS_D)]
        eps_d: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render label and depth maps for every pose.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Camera as fx,fy,cx,cy,width,height.
        #[arg(long)]
        cam: String,
        #[arg(long, default_value = "0.025,0.05")]
        splat_range: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Orthographic top-down intensity/label raster of road points.
    RenderBirdview {
        #[arg(long)]
        map: PathBuf,
        /// Bounds as min_x,min_y,max_x,max_y (meters).
        #[arg(long)]
        bounds: String,
        /// Meters per cell.
        #[arg(long)]
        resolution: f64,
        /// Keep only near-vertical-normal or road-class points first.
        #[arg(long)]
        filter_road_tilt: Option<f64>,
        /// Output prefix; writes <prefix>_label.pgm and <prefix>_intensity.pgm.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the road-mask offset field from a semantic map.
    BuildRoadField {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value = "9,10")]
        road_classes: String,
        #[arg(long, default_value_t = semloc_core::road::DEFAULT_GRID_RESOLUTION)]
        resolution: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb ground-truth poses with uniform GPS/IMU-style noise.
    SimulateNoise {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long, default_value_t = semloc_core::localize::DEFAULT_TRANS_MAX_M)]
        trans_max: f64,
        #[arg(long, default_value_t = semloc_core::localize::DEFAULT_ROT_MAX_DEG)]
        rot_max: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Snap pose translations onto the road via an offset field.
    Rectify {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine coarse poses against reference views rendered from the map.
    Refine {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        coarse: PathBuf,
        /// Ground-truth poses used to render the reference views.
        #[arg(long)]
        gt: PathBuf,
        /// Camera as fx,fy,cx,cy,width,height.
        #[arg(long)]
        cam: String,
        /// `standard`, `uniform`, or a weights CSV path.
        #[arg(long, default_value = "standard")]
        weights: String,
        #[arg(long, default_value = "0.025,0.05")]
        splat_range: String,
        #[arg(long, default_value_t = 1500)]
        max_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kalman-smooth pose translations (constant-velocity model).
    Smooth {
        #[arg(long)]
        poses: PathBuf,
        /// Frame period in seconds.
        #[arg(long)]
        dt: f64,
        #[arg(long, default_value_t = 0.1)]
        process_noise: f64,
        /// Measurement variance, or `auto` to estimate.
        #[arg(long, default_value = "auto")]
        measurement_noise: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a rendered label map with background and object masks.
    Fuse {
        #[arg(long)]
        rendered: PathBuf,
        #[arg(long)]
        background: PathBuf,
        /// Directory of mask PGMs with `class_id confidence` sidecars.
        #[arg(long)]
        objects_dir: Option<PathBuf>,
        /// `semantic`, `lane`, `full`, or a class-table path.
        #[arg(long, default_value = "semantic")]
        classes: String,
        #[arg(long, default_value_t = 0.9)]
        confidence: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median translation/rotation offsets of an estimated pose stream.
    EvalPose {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Segmentation metrics over directories of label-map PGMs.
    EvalSeg {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        /// `semantic`, `lane`, `full`, or a class-table path.
        #[arg(long, default_value = "semantic")]
        classes: String,
        /// Optional CSV output path (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instance-segmentation AP over directories of mask PGMs.
    EvalInstance {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // a failure here means a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let ctx = commands::Context {
        seed: cli.seed,
        verbose: cli.verbose,
    };
    let result = match cli.command {
        Command::GenScene { spec, out } => commands::gen_scene(&ctx, &spec, &out),
        Command::FilterMoving {
            rounds,
            delta,
            eps_d,
            out,
        } => commands::filter_moving(&ctx, &rounds, delta, eps_d, &out),
        Command::Render {
            map,
            poses,
            cam,
            splat_range,
            out,
        } => commands::render_cmd(&ctx, &map, &poses, &cam, &splat_range, &out),
        Command::RenderBirdview {
            map,
            bounds,
            resolution,
            filter_road_tilt,
            out,
        } => commands::render_birdview_cmd(&ctx, &map, &bounds, resolution, filter_road_tilt, &out),
        Command::BuildRoadField {
            map,
            road_classes,
            resolution,
            out,
        } => commands::build_road_field(&ctx, &map, &road_classes, resolution, &out),
        Command::SimulateNoise {
            poses,
            trans_max,
            rot_max,
            out,
        } => commands::simulate_noise(&ctx, &poses, trans_max, rot_max, &out),
        Command::Rectify { poses, field, out } => commands::rectify(&ctx, &poses, &field, &out),
        Command::Refine {
            map,
            coarse,
            gt,
            cam,
            weights,
            splat_range,
            max_points,
            out,
        } => commands::refine_cmd(
            &ctx,
            &map,
            &coarse,
            &gt,
            &cam,
            &weights,
            &splat_range,
            max_points,
            &out,
        ),
        Command::Smooth {
            poses,
            dt,
            process_noise,
            measurement_noise,
            out,
        } => commands::smooth(&ctx, &poses, dt, process_noise, &measurement_noise, &out),
        Command::Fuse {
            rendered,
            background,
            objects_dir,
            classes,
            confidence,
            out,
        } => commands::fuse_cmd(
            &ctx,
            &rendered,
            &background,
            objects_dir.as_deref(),
            &classes,
            confidence,
            &out,
        ),
        Command::EvalPose { est, gt } => commands::eval_pose(&ctx, &est, &gt),
        Command::EvalSeg {
            gt_dir,
            pred_dir,
            classes,
            out,
        } => commands::eval_seg(&ctx, &gt_dir, &pred_dir, &classes, out.as_deref()),
        Command::EvalInstance {
            gt_dir,
            pred_dir,
            out,
        } => commands::eval_instance(&ctx, &gt_dir, &pred_dir, out.as_deref()),
        Command::Pipeline { config, out } => {
            return match pipeline::run(&ctx, &config, &out) {
                Ok(()) => ExitCode::SUCCESS,
                Err(err) => {
                    eprintln!("pipeline failed in stage `{}`: {:#}", err.stage, err.source);
                    ExitCode::from(err.stage.exit_code())
                }
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
