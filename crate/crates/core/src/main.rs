use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use egobench::camera::{max_linear, Camera, PinholeCamera};
use egobench::fusion::{OCC_MIN_OBS, TSDF_MIN_OBS};
use egobench::gradcheck;
use egobench::io::{self, SequenceManifest, VolumeData, VolumeFile};
use egobench::metrics::{average_precision, default_iou_thresholds, surface_metrics, Interpolation, DEFAULT_SAMPLES, DEFAULT_TAU};
use egobench::pipeline::{
    self, fuse_occupancy, fuse_tsdf, lift_snippet, per_timestamp_map, room_grid, track_stream, ObbReport, SimulateConfig, SurfaceReport,
    DEFAULT_DETECTION_RES, DEFAULT_SURFACE_VOXEL,
};
use egobench::scenegen::{default_camera, DetectionNoise, SceneSpec};
use egobench::tracker::TrackerConfig;
use egobench::voxel::DEFAULT_EXTENT_M;

/// Geometry, fusion, tracking and evaluation tools for egocentric 3D
/// perception. Set EGOBENCH_THREADS to bound the worker thread count.
#[derive(Parser)]
#[command(name = "egobench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence directory.
    Simulate(SimulateArgs),
    /// Fuse depth maps (tsdf) or local occupancy volumes into a mesh.
    Fuse(FuseArgs),
    /// Track a detection stream into sequence-level boxes.
    Track(TrackArgs),
    /// Score predicted boxes against ground truth.
    EvalObb(EvalObbArgs),
    /// Score a predicted mesh against a ground-truth mesh.
    EvalSurface(EvalSurfaceArgs),
    /// Lift one snippet into feature and mask volumes.
    Lift(LiftArgs),
    /// Check every analytic loss gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CameraChoice {
    /// 240x240 Kannala-Brandt fisheye
    Fisheye,
    /// Largest-FoV pinhole covering the fisheye image
    MaxLinear,
    /// 640x480 ScanNet-style pinhole
    Scannet,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectory length in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    /// Frame rate in Hz (snippets are 1 s at 10 Hz).
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    #[arg(long, value_enum, default_value_t = CameraChoice::Fisheye)]
    camera: CameraChoice,
    /// Room extents x,y,z in meters.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [4.0, 4.0, 3.0])]
    room: Vec<f64>,
    /// Number of boxes.
    #[arg(long, default_value_t = 8)]
    boxes: usize,
    /// Semi-dense points to sample.
    #[arg(long, default_value_t = 10_000)]
    points: usize,
    /// Semi-dense point noise in meters.
    #[arg(long, default_value_t = 0.01)]
    point_sigma: f64,
    /// Render depth for every n-th frame.
    #[arg(long, default_value_t = 1)]
    depth_stride: usize,
    /// Frames per detection snippet.
    #[arg(long, default_value_t = 10)]
    snippet_frames: usize,
    /// Detection center jitter in meters.
    #[arg(long, default_value_t = 0.1)]
    sigma_center: f64,
    /// Detection log-size jitter.
    #[arg(long, default_value_t = 0.05)]
    sigma_size: f64,
    /// Detection yaw jitter in degrees.
    #[arg(long, default_value_t = 10.0)]
    sigma_yaw_deg: f64,
    /// Expected false positives per visible object.
    #[arg(long, default_value_t = 0.1)]
    false_positive_rate: f64,
    /// Also export ground-truth local occupancy at this resolution per
    /// snippet (96 matches the 4 cm surface grid); 0 disables.
    #[arg(long, default_value_t = 0)]
    occupancy_res: usize,
    /// Extent of exported occupancy volumes in meters.
    #[arg(long, default_value_t = DEFAULT_EXTENT_M)]
    occupancy_extent: f64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FuseMode {
    Tsdf,
    Occupancy,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = FuseMode::Tsdf)]
    mode: FuseMode,
    /// Voxel size of the global volume in meters.
    #[arg(long, default_value_t = DEFAULT_SURFACE_VOXEL)]
    voxel: f64,
    /// Margin around the room covered by the global volume, in meters.
    #[arg(long, default_value_t = 0.1)]
    pad: f64,
    /// TSDF truncation in meters [default: 3 voxels].
    #[arg(long)]
    truncation: Option<f64>,
    /// Minimum observations per voxel [default: 2 for tsdf, 5 for occupancy].
    #[arg(long)]
    min_obs: Option<u32>,
    /// Output mesh (PLY).
    #[arg(long)]
    out: PathBuf,
    /// Also write the fused volume and its observation counts.
    #[arg(long)]
    volume_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    /// Detection stream (JSON lines).
    #[arg(long)]
    detections: PathBuf,
    /// Sequence manifest supplying camera views for 2D association terms.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output scene boxes (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Instantiation score threshold.
    #[arg(long, default_value_t = 0.5)]
    p_inst: f64,
    /// Association score threshold.
    #[arg(long, default_value_t = 0.45)]
    p_assoc: f64,
    /// IoU gate for accepting a match.
    #[arg(long, default_value_t = 0.2)]
    iou_gate: f64,
    /// Minimum detections for a track to survive its probation.
    #[arg(long, default_value_t = 2)]
    n_min: u32,
    /// Probation period in seconds.
    #[arg(long, default_value_t = 1.0)]
    t_inst: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpChoice {
    All,
    #[value(name = "101")]
    P101,
}

#[derive(Args)]
struct EvalObbArgs {
    /// Predicted boxes (JSON lines).
    pred: PathBuf,
    /// Ground-truth boxes (JSON lines).
    gt: PathBuf,
    /// Score each timestamp separately and average.
    #[arg(long)]
    per_timestamp: bool,
    #[arg(long, value_enum, default_value_t = InterpChoice::All)]
    interp: InterpChoice,
    /// IoU thresholds [default: 0.0, 0.05, ..., 0.5].
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct EvalSurfaceArgs {
    /// Predicted mesh (PLY).
    pred: PathBuf,
    /// Ground-truth mesh (PLY).
    gt: PathBuf,
    /// Samples per mesh.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Distance threshold in meters.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct LiftArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Timestamp of the snippet's last frame.
    #[arg(long)]
    time: f64,
    /// Grid extent in meters.
    #[arg(long, default_value_t = DEFAULT_EXTENT_M)]
    extent: f64,
    /// Voxels per side (64 gives 6.25 cm voxels at 4 m).
    #[arg(long, default_value_t = DEFAULT_DETECTION_RES)]
    resolution: usize,
    /// Directory for features.vol, points.vol and freespace.vol.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random points per loss.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EGOBENCH_THREADS") {
        let n: usize = v.parse().with_context(|| format!("EGOBENCH_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("EGOBENCH_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn emit<T: Serialize>(report: &T, json: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string(report)?;
    println!("{text}");
    if let Some(p) = json {
        io::write_json(p, report)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let camera = match a.camera {
        CameraChoice::Fisheye => default_camera(),
        CameraChoice::MaxLinear => match default_camera() {
            Camera::Fisheye(fe) => max_linear(&fe, fe.width, fe.height)?.into(),
            other => other,
        },
        CameraChoice::Scannet => PinholeCamera::scannet().into(),
    };
    let cfg = SimulateConfig {
        spec: SceneSpec {
            seed: a.seed,
            room: [a.room[0], a.room[1], a.room[2]],
            box_count: [a.boxes, a.boxes],
            point_sigma: a.point_sigma,
            detection: DetectionNoise {
                sigma_center: a.sigma_center,
                sigma_size: a.sigma_size,
                sigma_yaw: a.sigma_yaw_deg.to_radians(),
                false_positive_rate: a.false_positive_rate,
            },
            ..SceneSpec::default()
        },
        duration: a.duration,
        rate: a.rate,
        camera,
        depth_stride: a.depth_stride,
        num_points: a.points,
        snippet_frames: a.snippet_frames,
        occupancy: (a.occupancy_res > 0).then_some((a.occupancy_extent, a.occupancy_res)),
    };
    let m = pipeline::simulate(&cfg, &a.out).context("--out / scene flags")?;
    println!("wrote {}: {} depth frames, {} occupancy volumes", a.out.join("manifest.json").display(), m.depth.len(), m.occupancy.len());
    Ok(())
}

fn fuse(a: FuseArgs) -> Result<()> {
    let m = SequenceManifest::load(&a.manifest).context("--manifest")?;
    let grid = room_grid(&m.scene, a.voxel, a.pad).context("--voxel / --pad")?;
    let (mesh, volume) = match a.mode {
        FuseMode::Tsdf => {
            let vol = fuse_tsdf(&m, grid, a.truncation).context("tsdf fusion")?;
            let mesh = vol.extract_mesh(a.min_obs.unwrap_or(TSDF_MIN_OBS))?;
            (mesh, a.volume_out.is_some().then(|| (VolumeData::F32(vol.tsdf.clone()), vol.weights.clone())))
        }
        FuseMode::Occupancy => {
            if a.truncation.is_some() {
                bail!("--truncation only applies to --mode tsdf");
            }
            let vol = fuse_occupancy(&m, grid).context("occupancy fusion")?;
            let mesh = vol.extract_mesh(a.min_obs.unwrap_or(OCC_MIN_OBS))?;
            (mesh, a.volume_out.is_some().then(|| (VolumeData::F64(vol.occ.clone()), vol.counts.clone())))
        }
    };
    io::write_mesh_ply(&a.out, &mesh)?;
    if let (Some(path), Some((values, counts))) = (&a.volume_out, volume) {
        io::write_volume(path, &VolumeFile { grid, channels: 1, data: values })?;
        let counts_path = path.with_extension("counts.vol");
        io::write_volume(&counts_path, &VolumeFile { grid, channels: 1, data: VolumeData::U32(counts) })?;
    }
    println!("mesh: {} vertices, {} faces -> {}", mesh.vertices.len(), mesh.faces.len(), a.out.display());
    Ok(())
}

fn track(a: TrackArgs) -> Result<()> {
    let cfg = TrackerConfig {
        p_inst: a.p_inst,
        p_assoc: a.p_assoc,
        iou_gate: a.iou_gate,
        n_min: a.n_min,
        t_inst: a.t_inst,
        ..TrackerConfig::default()
    };
    cfg.validate().context("tracker flags (--p-inst, --p-assoc, --iou-gate, --n-min, --t-inst)")?;
    let stream = io::read_detection_stream(&a.detections).context("--detections")?;
    let views = match &a.manifest {
        Some(p) => {
            let m = SequenceManifest::load(p).context("--manifest")?;
            Some((io::read_calibration(&m.calibration)?, io::read_trajectory(&m.trajectory)?))
        }
        None => None,
    };
    let state = track_stream(&stream, views.as_ref().map(|(c, t)| (c, t.as_slice())), &cfg)?;
    let confirmed: Vec<_> = state.confirmed(cfg.n_min).collect();
    io::write_obbs_jsonl(&a.out, confirmed.iter().map(|t| (state.time, &t.obb)))?;
    println!("{} snippets -> {} tracked boxes at t = {}", stream.len(), confirmed.len(), state.time);
    Ok(())
}

fn eval_obb(a: EvalObbArgs) -> Result<()> {
    let thresholds = a.thresholds.unwrap_or_else(default_iou_thresholds);
    let interp = match a.interp {
        InterpChoice::All => Interpolation::AllPoints,
        InterpChoice::P101 => Interpolation::Points101,
    };
    let pred = io::read_obbs_jsonl(&a.pred).context("predictions")?;
    let gt = io::read_obbs_jsonl(&a.gt).context("ground truth")?;
    let report = if a.per_timestamp {
        per_timestamp_map(&pred, &gt, &thresholds, interp)?
    } else {
        let p: Vec<_> = pred.into_iter().map(|(_, b)| b).collect();
        let g: Vec<_> = gt.into_iter().map(|(_, b)| b).collect();
        ObbReport::new(&average_precision(&p, &g, &thresholds, interp).context("--thresholds")?, None)
    };
    println!("mAP {:.4}", report.map);
    for (t, ap) in report.iou_thresholds.iter().zip(&report.ap_per_threshold) {
        println!("  AP@{t:.2} {ap:.4}");
    }
    emit(&report, a.json.as_deref())
}

fn eval_surface(a: EvalSurfaceArgs) -> Result<()> {
    let pred = io::read_mesh_ply(&a.pred).context("predicted mesh")?;
    let gt = io::read_mesh_ply(&a.gt).context("ground-truth mesh")?;
    if !(a.tau > 0.0) {
        bail!("--tau must be positive");
    }
    let m = surface_metrics(&pred, &gt, a.samples, a.tau, a.seed).context("--samples")?;
    println!("acc {:.4} m  comp {:.4} m  prec {:.4}  recal {:.4}", m.acc, m.comp, m.prec, m.recal);
    let report = SurfaceReport { version: io::FORMAT_VERSION, samples: a.samples, tau: a.tau, seed: a.seed, metrics: m };
    emit(&report, a.json.as_deref())
}

fn lift(a: LiftArgs) -> Result<()> {
    let m = SequenceManifest::load(&a.manifest).context("--manifest")?;
    let out = lift_snippet(&m, a.time, a.extent, a.resolution).context("--time / --extent / --resolution")?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let grid = out.grid;
    let files = [
        ("features.vol", out.features.channels, VolumeData::F64(out.features.values)),
        ("points.vol", 1, VolumeData::U8(out.points.values)),
        ("freespace.vol", 1, VolumeData::U8(out.freespace.values)),
    ];
    for (name, channels, data) in files {
        io::write_volume(&a.out.join(name), &VolumeFile { grid, channels, data })?;
    }
    println!("lifted {}^3 grid ({} m) into {}", a.resolution, a.extent, a.out.display());
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<bool> {
    if a.points == 0 {
        bail!("--points must be >= 1");
    }
    let results = gradcheck::run(a.seed, a.points)?;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<15} max rel err {:.3e} (tol {:.0e}, {} points)", r.name, r.max_rel_err, r.tolerance, r.points);
    }
    emit(&results, a.json.as_deref())?;
    Ok(results.iter().all(|r| r.passed()))
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate(a)?,
        Command::Fuse(a) => fuse(a)?,
        Command::Track(a) => track(a)?,
        Command::EvalObb(a) => eval_obb(a)?,
        Command::EvalSurface(a) => eval_surface(a)?,
        Command::Lift(a) => lift(a)?,
        Command::Gradcheck(a) => return gradcheck_cmd(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
