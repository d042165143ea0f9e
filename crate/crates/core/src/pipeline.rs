//! End-to-end runs over sequence directories: simulation, fusion,
//! tracking, lifting and metric reports.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraView};
use crate::error::{Error, Result};
use crate::fusion::{OccupancyVolume, TsdfVolume};
use crate::geom::{GravityDir, Pose, Vec3};
use crate::io::{self, FrameRef, SequenceManifest, VolumeData, VolumeFile, FORMAT_VERSION};
use crate::metrics::{average_precision, DetectionMetrics, Interpolation, SurfaceMetrics};
use crate::obb::Obb3;
use crate::scenegen::{
    default_camera, generate_scene, noisy_detections, sample_semidense, simulate_trajectory, Raycaster, Scene, SceneSpec, TimedPose,
};
use crate::tracker::{step, SceneState, TrackerConfig};
use crate::voxel::{
    anchor_grid, lift_features, rasterize_freespace, rasterize_points, FeatureFrame, FeatureImage, FeatureVolume, MaskVolume, VoxelGrid,
    DEFAULT_FREESPACE_SAMPLES,
};

pub const SNIPPET_SECONDS: f64 = 1.0;
pub const DEFAULT_DETECTION_VOXEL: f64 = 0.0625;
pub const DEFAULT_DETECTION_RES: usize = 64;
pub const DEFAULT_SURFACE_VOXEL: f64 = 0.04;
pub const DEFAULT_SURFACE_RES: usize = 96;

/// Seed offsets so each random stream of a run is independent.
const TRAJECTORY_STREAM: u64 = 1;
const POINTS_STREAM: u64 = 2;
const DETECTION_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub spec: SceneSpec,
    pub duration: f64,
    pub rate: f64,
    pub camera: Camera,
    /// Render every n-th trajectory frame.
    pub depth_stride: usize,
    pub num_points: usize,
    /// Frames per detection snippet; detections are emitted at the last
    /// frame of each snippet.
    pub snippet_frames: usize,
    /// Ground-truth local occupancy `(extent m, resolution)` per snippet.
    pub occupancy: Option<(f64, usize)>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            spec: SceneSpec::default(),
            duration: 30.0,
            rate: 10.0,
            camera: default_camera(),
            depth_stride: 1,
            num_points: 10_000,
            snippet_frames: 10,
            occupancy: None,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.camera.validate()?;
        if self.depth_stride == 0 || self.snippet_frames == 0 {
            return Err(Error::InvalidArgument("depth stride and snippet length must be >= 1".into()));
        }
        if let Some((extent, res)) = self.occupancy {
            if !(extent > 0.0) || res == 0 {
                return Err(Error::InvalidArgument(format!("invalid occupancy export {extent} m / {res}")));
            }
        }
        Ok(())
    }
}

/// Detections of one snippet with the ground truth visible in it.
#[derive(Debug, Clone)]
pub struct Snippet {
    pub t: f64,
    pub view: CameraView,
    pub detections: Vec<Obb3>,
    pub visible_gt: Vec<Obb3>,
}

/// Emits one jittered detection set at the last frame of every complete
/// snippet of the trajectory.
pub fn simulate_snippets(
    scene: &Scene,
    spec: &SceneSpec,
    trajectory: &[TimedPose],
    camera: &Camera,
    snippet_frames: usize,
    seed: u64,
) -> Result<Vec<Snippet>> {
    if snippet_frames == 0 {
        return Err(Error::InvalidArgument("snippets need at least one frame".into()));
    }
    let caster = Raycaster::new(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trajectory
        .iter()
        .skip(snippet_frames - 1)
        .step_by(snippet_frames)
        .map(|tp| {
            let view = CameraView::new(*camera, tp.pose);
            let visible = caster.visible_boxes(scene, &view);
            Ok(Snippet {
                t: tp.t,
                view,
                detections: noisy_detections(scene, spec, &visible, &mut rng)?,
                visible_gt: visible.iter().map(|&b| scene.obbs[b].clone()).collect(),
            })
        })
        .collect()
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a complete synthetic sequence into `out_dir` and returns its
/// manifest (with paths relative to `out_dir`).
pub fn simulate(cfg: &SimulateConfig, out_dir: &Path) -> Result<SequenceManifest> {
    cfg.validate()?;
    let seed = cfg.spec.seed;
    let scene = generate_scene(&cfg.spec)?;
    let trajectory = simulate_trajectory(&scene, seed.wrapping_add(TRAJECTORY_STREAM), cfg.duration, cfg.rate)?;
    ensure_dir(out_dir)?;
    ensure_dir(&out_dir.join("depth"))?;

    io::write_trajectory(&out_dir.join("trajectory.csv"), &trajectory)?;
    io::write_calibration(&out_dir.join("calibration.json"), &cfg.camera)?;
    io::write_mesh_ply(&out_dir.join("gt_mesh.ply"), &scene.mesh())?;
    io::write_obbs_jsonl(&out_dir.join("gt_obbs.jsonl"), scene.obbs.iter().map(|b| (0.0, b)))?;

    let caster = Raycaster::new(&scene);
    let mut depth = Vec::new();
    for (idx, tp) in trajectory.iter().enumerate().step_by(cfg.depth_stride) {
        let rel = format!("depth/{idx:06}.depth");
        io::write_depth(&out_dir.join(&rel), &caster.render_depth(&cfg.camera, &tp.pose))?;
        depth.push(FrameRef { t: tp.t, path: rel.into() });
    }

    let points =
        sample_semidense(&scene, &trajectory, &cfg.camera, cfg.num_points, cfg.spec.point_sigma, seed.wrapping_add(POINTS_STREAM))?;
    io::write_points_ply(&out_dir.join("points.ply"), &points)?;

    let snippets = simulate_snippets(&scene, &cfg.spec, &trajectory, &cfg.camera, cfg.snippet_frames, seed.wrapping_add(DETECTION_STREAM))?;
    io::write_obbs_jsonl(&out_dir.join("detections.jsonl"), snippets.iter().flat_map(|s| s.detections.iter().map(move |d| (s.t, d))))?;
    io::write_obbs_jsonl(&out_dir.join("snippet_gt.jsonl"), snippets.iter().flat_map(|s| s.visible_gt.iter().map(move |d| (s.t, d))))?;

    let mut occupancy = Vec::new();
    if let Some((extent, res)) = cfg.occupancy {
        ensure_dir(&out_dir.join("occupancy"))?;
        for s in &snippets {
            let grid = anchor_grid(&s.view.t_w_cam, &GravityDir::down(), extent, res)?;
            let rel = format!("occupancy/{:06}.vol", (s.t * cfg.rate).round() as u64);
            let vol = VolumeFile {
                grid,
                channels: 1,
                data: VolumeData::F32(scene.occupancy_volume(&grid).into_iter().map(|x| x as f32).collect()),
            };
            io::write_volume(&out_dir.join(&rel), &vol)?;
            occupancy.push(FrameRef { t: s.t, path: rel.into() });
        }
    }

    let manifest = SequenceManifest {
        version: FORMAT_VERSION,
        scene: cfg.spec.clone(),
        trajectory: "trajectory.csv".into(),
        calibration: "calibration.json".into(),
        depth,
        points: "points.ply".into(),
        gt_mesh: "gt_mesh.ply".into(),
        gt_obbs: "gt_obbs.jsonl".into(),
        detections: "detections.jsonl".into(),
        snippet_gt: "snippet_gt.jsonl".into(),
        occupancy,
    };
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Axis-aligned grid covering the room of `spec` plus `pad` meters on
/// every side.
pub fn room_grid(spec: &SceneSpec, voxel_size: f64, pad: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0) || !(pad >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid voxel size {voxel_size} or padding {pad}")));
    }
    let [x, y, z] = spec.room;
    let count = |len: f64| ((len + 2.0 * pad) / voxel_size).ceil() as usize;
    VoxelGrid::new(Pose::from_translation(Vec3::new(0.0, 0.0, z / 2.0)), [count(z), count(y), count(x)], voxel_size)
}

/// Timestamps closer than this are the same instant.
pub const TIME_EPSILON: f64 = 1e-6;

/// Pose at time `t` (to within [`TIME_EPSILON`]), or the latest pose before it.
pub fn pose_at(trajectory: &[TimedPose], t: f64) -> Option<Pose> {
    let i = trajectory.partition_point(|p| p.t <= t + TIME_EPSILON);
    (i > 0).then(|| trajectory[i - 1].pose)
}

pub fn fuse_tsdf(manifest: &SequenceManifest, grid: VoxelGrid, truncation: Option<f64>) -> Result<TsdfVolume> {
    let camera = io::read_calibration(&manifest.calibration)?;
    let trajectory = io::read_trajectory(&manifest.trajectory)?;
    let mut vol = match truncation {
        Some(t) => TsdfVolume::with_truncation(grid, t),
        None => TsdfVolume::new(grid),
    };
    for frame in &manifest.depth {
        let pose =
            pose_at(&trajectory, frame.t).ok_or_else(|| Error::InvalidArgument(format!("no pose for depth frame at t = {}", frame.t)))?;
        vol.integrate(&io::read_depth(&frame.path)?, &CameraView::new(camera, pose))?;
    }
    Ok(vol)
}

pub fn fuse_occupancy(manifest: &SequenceManifest, grid: VoxelGrid) -> Result<OccupancyVolume> {
    if manifest.occupancy.is_empty() {
        return Err(Error::InvalidArgument("manifest lists no occupancy volumes".into()));
    }
    let mut vol = OccupancyVolume::new(grid);
    for frame in &manifest.occupancy {
        let local = io::read_volume(&frame.path)?;
        if local.channels != 1 {
            return Err(Error::ShapeMismatch(format!("occupancy volume has {} channels", local.channels)));
        }
        vol.integrate(&local.data.to_f64(), &local.grid)?;
    }
    Ok(vol)
}

/// Runs the tracker over a detection stream. Views are looked up in the
/// trajectory when one is given.
pub fn track_stream(stream: &[(f64, Vec<Obb3>)], views: Option<(&Camera, &[TimedPose])>, cfg: &TrackerConfig) -> Result<SceneState> {
    let mut state = SceneState::new();
    for (t, dets) in stream {
        let view = views.and_then(|(cam, traj)| pose_at(traj, *t).map(|p| CameraView::new(*cam, p)));
        state = step(&state, dets, *t, view.as_ref(), cfg)?;
    }
    Ok(state)
}

/// Snippet-level and sequence-level detection mAP of a snippet stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub snippet_map: f64,
    pub sequence_map: f64,
    pub snippets: usize,
    pub tracks: usize,
}

pub fn persistence_report(snippets: &[Snippet], scene_gt: &[Obb3], cfg: &TrackerConfig, thresholds: &[f64]) -> Result<PersistenceReport> {
    let scored: Vec<&Snippet> = snippets.iter().filter(|s| !s.visible_gt.is_empty()).collect();
    if scored.is_empty() {
        return Err(Error::InvalidArgument("no snippet observes any ground-truth box".into()));
    }
    let mut total = 0.0;
    for s in &scored {
        total += average_precision(&s.detections, &s.visible_gt, thresholds, Interpolation::AllPoints)?.map;
    }
    let mut state = SceneState::new();
    for s in snippets {
        state = step(&state, &s.detections, s.t, Some(&s.view), cfg)?;
    }
    let sequence = average_precision(&state.confirmed_boxes(cfg.n_min), scene_gt, thresholds, Interpolation::AllPoints)?;
    Ok(PersistenceReport {
        snippet_map: total / scored.len() as f64,
        sequence_map: sequence.map,
        snippets: snippets.len(),
        tracks: state.confirmed(cfg.n_min).count(),
    })
}

/// Scene boxes seen by at least one snippet, in scene order.
pub fn observed_gt(scene: &Scene, snippets: &[Snippet]) -> Vec<Obb3> {
    scene.obbs.iter().filter(|o| snippets.iter().any(|s| s.visible_gt.contains(o))).cloned().collect()
}

/// Instantiation thresholds tried by [`best_persistence_report`].
pub const P_INST_GRID: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// [`persistence_report`] at the best of several instantiation thresholds,
/// each with `p_assoc = p_inst - 0.05`. Returns the report and its `p_inst`.
pub fn best_persistence_report(
    snippets: &[Snippet],
    scene_gt: &[Obb3],
    base: &TrackerConfig,
    p_inst_grid: &[f64],
    thresholds: &[f64],
) -> Result<(PersistenceReport, f64)> {
    let mut best: Option<(PersistenceReport, f64)> = None;
    for &p in p_inst_grid {
        let cfg = TrackerConfig { p_inst: p, p_assoc: (p - 0.05).max(0.0), ..base.clone() };
        let r = persistence_report(snippets, scene_gt, &cfg, thresholds)?;
        if best.as_ref().is_none_or(|(b, _)| r.sequence_map > b.sequence_map) {
            best = Some((r, p));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty instantiation threshold grid".into()))
}

pub struct LiftOutput {
    pub grid: VoxelGrid,
    pub features: FeatureVolume,
    pub points: MaskVolume,
    pub freespace: MaskVolume,
}

/// Lifts the snippet ending at `t_end`: depth frames within one snippet
/// length are lifted as single-channel features into a grid anchored on the
/// last of them, and the semi-dense points are rasterized into the same
/// grid.
pub fn lift_snippet(manifest: &SequenceManifest, t_end: f64, extent: f64, resolution: usize) -> Result<LiftOutput> {
    let camera = io::read_calibration(&manifest.calibration)?;
    let trajectory = io::read_trajectory(&manifest.trajectory)?;
    let mut frames = Vec::new();
    let mut last_pose = None;
    for f in manifest.depth.iter().filter(|f| f.t <= t_end && f.t > t_end - SNIPPET_SECONDS) {
        let pose = pose_at(&trajectory, f.t).ok_or_else(|| Error::InvalidArgument(format!("no pose at t = {}", f.t)))?;
        let depth = io::read_depth(&f.path)?;
        let features = FeatureImage::new(1, depth.width, depth.height, depth.data.iter().map(|&d| d as f64).collect())?;
        frames.push(FeatureFrame { features, camera, t_w_cam: pose });
        last_pose = Some(pose);
    }
    let last = last_pose.ok_or_else(|| Error::InvalidArgument(format!("no depth frames in the snippet ending at t = {t_end}")))?;
    let grid = anchor_grid(&last, &GravityDir::down(), extent, resolution)?;
    let pc = io::read_points_ply(&manifest.points)?;
    Ok(LiftOutput {
        grid,
        features: lift_features(&grid, &frames)?,
        points: rasterize_points(&grid, &pc),
        freespace: rasterize_freespace(&grid, &pc, DEFAULT_FREESPACE_SAMPLES)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub version: u32,
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: SurfaceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObbReport {
    pub version: u32,
    pub map: f64,
    pub iou_thresholds: Vec<f64>,
    pub ap_per_threshold: Vec<f64>,
    pub per_class_ap: BTreeMap<usize, Vec<f64>>,
    /// Number of timestamps averaged over, when scored per snippet.
    pub snippets: Option<usize>,
}

impl ObbReport {
    pub fn new(m: &DetectionMetrics, snippets: Option<usize>) -> Self {
        ObbReport {
            version: FORMAT_VERSION,
            map: m.map,
            iou_thresholds: m.iou_thresholds.clone(),
            ap_per_threshold: m.ap_per_threshold(),
            per_class_ap: m.per_class_ap.clone(),
            snippets,
        }
    }
}

/// Mean of per-timestamp metrics over timestamps with ground truth;
/// per-class and per-threshold entries are averaged the same way.
pub fn per_timestamp_map(pred: &[(f64, Obb3)], gt: &[(f64, Obb3)], thresholds: &[f64], interp: Interpolation) -> Result<ObbReport> {
    let mut times: Vec<f64> = gt.iter().map(|(t, _)| *t).collect();
    times.dedup();
    if times.is_empty() {
        return Err(Error::InvalidArgument("ground truth is empty".into()));
    }
    let mut map = 0.0;
    let mut per_thr = vec![0.0; thresholds.len()];
    let mut per_class: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for &t in &times {
        let p: Vec<Obb3> = pred.iter().filter(|(s, _)| *s == t).map(|(_, b)| b.clone()).collect();
        let g: Vec<Obb3> = gt.iter().filter(|(s, _)| *s == t).map(|(_, b)| b.clone()).collect();
        let m = average_precision(&p, &g, thresholds, interp)?;
        map += m.map;
        per_thr.iter_mut().zip(m.ap_per_threshold()).for_each(|(a, b)| *a += b);
        for (c, aps) in m.per_class_ap {
            let e = per_class.entry(c).or_insert_with(|| (vec![0.0; thresholds.len()], 0));
            e.0.iter_mut().zip(aps).for_each(|(a, b)| *a += b);
            e.1 += 1;
        }
    }
    let n = times.len() as f64;
    Ok(ObbReport {
        version: FORMAT_VERSION,
        map: map / n,
        iou_thresholds: thresholds.to_vec(),
        ap_per_threshold: per_thr.into_iter().map(|x| x / n).collect(),
        per_class_ap: per_class.into_iter().map(|(c, (v, k))| (c, v.into_iter().map(|x| x / k as f64).collect())).collect(),
        snippets: Some(times.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::default_iou_thresholds;
    use crate::scenegen::DetectionNoise;
    use tempfile::tempdir;

    fn small_config() -> SimulateConfig {
        SimulateConfig {
            duration: 2.0,
            rate: 5.0,
            num_points: 300,
            snippet_frames: 5,
            occupancy: Some((2.0, 8)),
            ..SimulateConfig::default()
        }
    }

    #[test]
    fn simulate_writes_a_loadable_sequence() {
        let dir = tempdir().unwrap();
        let m = simulate(&small_config(), dir.path()).unwrap();
        assert_eq!(m.depth.len(), 10);
        assert_eq!(m.occupancy.len(), 2);
        let loaded = SequenceManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(io::read_trajectory(&loaded.trajectory).unwrap().len(), 10);
        assert_eq!(io::read_points_ply(&loaded.points).unwrap().len(), 300);
        assert_eq!(io::read_obbs_jsonl(&loaded.gt_obbs).unwrap().len(), 8);
        let grid = room_grid(&loaded.scene, 0.1, 0.1).unwrap();
        let tsdf = fuse_tsdf(&loaded, grid, None).unwrap();
        assert!(tsdf.weights.iter().any(|w| *w > 0));
        let occ = fuse_occupancy(&loaded, grid).unwrap();
        assert!(occ.counts.iter().any(|c| *c > 0));
        let lifted = lift_snippet(&loaded, 1.8, 2.0, 8).unwrap();
        assert_eq!(lifted.features.channels, 2);
    }

    #[test]
    fn room_grid_covers_the_room() {
        let spec = SceneSpec::default();
        let g = room_grid(&spec, 0.02, 0.08).unwrap();
        assert_eq!(g.dims, [158, 208, 208]);
        for p in [Vec3::new(-2.0, -2.0, 0.0), Vec3::new(2.0, 2.0, 3.0)] {
            assert!(g.containing_voxel(&g.to_local(&p)).is_some());
        }
    }

    #[test]
    fn noiseless_persistence_is_perfect() {
        let spec = SceneSpec { detection: DetectionNoise::noiseless(), ..SceneSpec::default() };
        let scene = generate_scene(&spec).unwrap();
        let traj = simulate_trajectory(&scene, 1, 30.0, 10.0).unwrap();
        let snippets = simulate_snippets(&scene, &spec, &traj, &default_camera(), 10, 5).unwrap();
        let seen: Vec<Obb3> = scene.obbs.iter().filter(|b| snippets.iter().any(|s| s.visible_gt.contains(b))).cloned().collect();
        let r = persistence_report(&snippets, &seen, &TrackerConfig::default(), &default_iou_thresholds()).unwrap();
        assert_eq!(r.sequence_map, 1.0);
    }

    #[test]
    fn pose_lookup() {
        let traj: Vec<TimedPose> =
            (0..3).map(|i| TimedPose { t: i as f64, pose: Pose::from_translation(Vec3::new(i as f64, 0.0, 0.0)) }).collect();
        assert!(pose_at(&traj, -0.5).is_none());
        assert_eq!(pose_at(&traj, 1.0).unwrap().translation.x, 1.0);
        assert_eq!(pose_at(&traj, 1.5).unwrap().translation.x, 1.0);
        assert_eq!(pose_at(&traj, 2.0 - 1e-12).unwrap().translation.x, 2.0);
    }
}
