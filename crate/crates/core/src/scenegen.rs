//! Seeded synthetic scenes: shoebox rooms with floor-standing boxes, smooth
//! head-height camera trajectories, ray-cast depth, semi-dense points and
//! jittered detections.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{Bvh, Hit};
use crate::camera::{Camera, CameraView, DepthMap, FisheyeCamera};
use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation, Vec3};
use crate::mesh::{Ray, TriangleMesh};
use crate::obb::{iou3, Obb3};
use crate::voxel::{PointCloudWithVisibility, VoxelGrid};

pub const EYE_HEIGHT: f64 = 1.5;
/// Horizontal speed bound of simulated trajectories (m/s).
pub const MAX_SPEED: f64 = 0.5;
pub const MAX_YAW_RATE: f64 = 0.8;
pub const MAX_PITCH: f64 = 30.0 * PI / 180.0;
pub const PLACEMENT_ATTEMPTS: usize = 1000;
/// Fraction of semi-dense points drawn from the band along geometric edges.
pub const EDGE_FRACTION: f64 = 0.7;
pub const EDGE_BAND: f64 = 0.1;

const WALL_MARGIN: f64 = 0.05;
const BOX_CLEARANCE: f64 = 0.1;
const CAMERA_MARGIN: f64 = 0.5;
const MAX_ROLL: f64 = 0.1;
const MAX_KEYFRAMES: usize = 64;
const CANDIDATE_BATCH: usize = 4096;
/// Corner probes are pulled this far toward the box center.
const PROBE_SHRINK: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionNoise {
    /// Per-axis center jitter (m).
    pub sigma_center: f64,
    /// Log-normal size jitter.
    pub sigma_size: f64,
    /// Yaw jitter (rad).
    pub sigma_yaw: f64,
    /// Expected false positives per visible object.
    pub false_positive_rate: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise { sigma_center: 0.1, sigma_size: 0.05, sigma_yaw: 10f64.to_radians(), false_positive_rate: 0.1 }
    }
}

impl DetectionNoise {
    pub fn noiseless() -> Self {
        DetectionNoise { sigma_center: 0.0, sigma_size: 0.0, sigma_yaw: 0.0, false_positive_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_center, self.sigma_size, self.sigma_yaw, self.false_positive_rate];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("detection noise must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Room extents along x, y, z (m).
    pub room: [f64; 3],
    /// Inclusive range of the number of boxes.
    pub box_count: [usize; 2],
    /// Inclusive range of each box side length (m).
    pub box_size: [f64; 2],
    pub classes: Vec<String>,
    /// Isotropic semi-dense point noise (m).
    pub point_sigma: f64,
    pub detection: DetectionNoise,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            room: [4.0, 4.0, 3.0],
            box_count: [8, 8],
            box_size: [0.3, 1.2],
            classes: ["chair", "table", "sofa", "cabinet", "shelf"].map(String::from).to_vec(),
            point_sigma: 0.01,
            detection: DetectionNoise::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.room.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidArgument(format!("room extents must be positive, got {:?}", self.room)));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("at least one class is required".into()));
        }
        if self.box_count[0] > self.box_count[1] {
            return Err(Error::InvalidArgument(format!("empty box count range {:?}", self.box_count)));
        }
        let [lo, hi] = self.box_size;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid box size range {:?}", self.box_size)));
        }
        if hi >= EYE_HEIGHT || hi + 2.0 * WALL_MARGIN >= self.room[0].min(self.room[1]) {
            return Err(Error::InvalidArgument(format!("box size {hi} does not fit the room below eye height")));
        }
        if 2.0 * CAMERA_MARGIN >= self.room[0].min(self.room[1]) || self.room[2] <= EYE_HEIGHT {
            return Err(Error::InvalidArgument(format!("room {:?} too small for a walking camera", self.room)));
        }
        if !(self.point_sigma.is_finite() && self.point_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("point sigma must be non-negative, got {}", self.point_sigma)));
        }
        self.detection.validate()
    }
}

/// Room centered on the origin in x and y with its floor at z = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: [f64; 3],
    pub room_mesh: TriangleMesh,
    pub obbs: Vec<Obb3>,
    pub classes: Vec<String>,
}

impl Scene {
    pub fn room_bounds(&self) -> (Vec3, Vec3) {
        let [x, y, z] = self.room;
        (Vec3::new(-x / 2.0, -y / 2.0, 0.0), Vec3::new(x / 2.0, y / 2.0, z))
    }

    /// Room followed by each box as a closed outward cuboid (12 faces each).
    pub fn mesh(&self) -> TriangleMesh {
        let mut m = self.room_mesh.clone();
        for b in &self.obbs {
            m.append(&box_mesh(b));
        }
        m
    }

    /// Approximate signed distance to the solid part of the scene (walls and
    /// boxes), positive inside solid.
    pub fn solid_distance(&self, p: &Vec3) -> f64 {
        let (lo, hi) = self.room_bounds();
        let mut inside_room = f64::INFINITY;
        for a in 0..3 {
            inside_room = inside_room.min(p[a] - lo[a]).min(hi[a] - p[a]);
        }
        let mut sd = -inside_room;
        for b in &self.obbs {
            let q = b.pose().inverse().transform_point(p);
            let d = q.abs() - b.dims / 2.0;
            let outside = d.map(|x| x.max(0.0)).norm() + d.max().min(0.0);
            sd = sd.max(-outside);
        }
        sd
    }

    /// Occupancy in `[0, 1]` ramping linearly through 0.5 at the surface
    /// over `ramp` meters on either side.
    pub fn occupancy_at(&self, p: &Vec3, ramp: f64) -> f64 {
        (0.5 + 0.5 * self.solid_distance(p) / ramp).clamp(0.0, 1.0)
    }

    /// Occupancy sampled at every voxel center of `grid`.
    pub fn occupancy_volume(&self, grid: &VoxelGrid) -> Vec<f64> {
        (0..grid.num_voxels())
            .into_par_iter()
            .map(|v| {
                let (i, j, k) = grid.unflatten(v);
                self.occupancy_at(&grid.voxel_center(i, j, k), grid.voxel_size)
            })
            .collect()
    }
}

pub fn box_mesh(b: &Obb3) -> TriangleMesh {
    TriangleMesh::cuboid(-b.dims / 2.0, b.dims / 2.0).transformed(&b.pose())
}

fn random_box(rng: &mut ChaCha8Rng, spec: &SceneSpec, class: usize) -> Result<Obb3> {
    let [lo, hi] = spec.box_size;
    let dims = Vec3::new(rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi));
    let yaw = rng.random_range(-PI..PI);
    let (s, c) = yaw.sin_cos();
    let hx = c.abs() * dims.x / 2.0 + s.abs() * dims.y / 2.0 + WALL_MARGIN;
    let hy = s.abs() * dims.x / 2.0 + c.abs() * dims.y / 2.0 + WALL_MARGIN;
    let (rx, ry) = (spec.room[0] / 2.0 - hx, spec.room[1] / 2.0 - hy);
    let x = if rx > 0.0 { rng.random_range(-rx..rx) } else { 0.0 };
    let y = if ry > 0.0 { rng.random_range(-ry..ry) } else { 0.0 };
    Obb3::with_class(Vec3::new(x, y, dims.z / 2.0), yaw, dims, class, spec.classes.len(), 1.0)
}

fn fits_in_room(b: &Obb3, room: &[f64; 3]) -> bool {
    b.corners().iter().all(|c| c.x.abs() <= room[0] / 2.0 - WALL_MARGIN + 1e-12 && c.y.abs() <= room[1] / 2.0 - WALL_MARGIN + 1e-12)
}

fn inflated(b: &Obb3, by: f64) -> Obb3 {
    let mut out = b.clone();
    out.dims += Vec3::repeat(by);
    out
}

/// Places boxes by rejection sampling; neighbours keep a small clearance
/// so no two boxes share a face.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = rng.random_range(spec.box_count[0]..=spec.box_count[1]);
    let mut obbs: Vec<Obb3> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let class = rng.random_range(0..spec.classes.len());
            let b = random_box(&mut rng, spec, class)?;
            let grown = inflated(&b, BOX_CLEARANCE);
            if fits_in_room(&b, &spec.room) && obbs.iter().all(|o| iou3(&grown, o) == 0.0) {
                obbs.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailure { requested: count, attempts: PLACEMENT_ATTEMPTS });
        }
    }
    let [x, y, z] = spec.room;
    Ok(Scene {
        room: spec.room,
        room_mesh: TriangleMesh::cuboid_inward(Vec3::new(-x / 2.0, -y / 2.0, 0.0), Vec3::new(x / 2.0, y / 2.0, z)),
        obbs,
        classes: spec.classes.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

/// Camera-to-world rotation for a camera (x right, y down, z forward)
/// looking along heading `yaw` tilted up by `pitch`, rolled about its axis.
pub fn look_rotation(yaw: f64, pitch: f64, roll: f64) -> Rotation {
    let f = Vec3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
    let right = f.cross(&Vec3::z()).normalize();
    let down = f.cross(&right);
    let (s, c) = roll.sin_cos();
    Rotation::from_columns(right * c + down * s, down * c - right * s, f)
}

/// Bounded-velocity random walk at eye height with yaw-dominant rotation.
pub fn simulate_trajectory(scene: &Scene, seed: u64, duration: f64, rate: f64) -> Result<Vec<TimedPose>> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {rate}")));
    }
    let n = (duration * rate).round().max(1.0) as usize;
    let dt = 1.0 / rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = [scene.room[0] / 2.0 - CAMERA_MARGIN, scene.room[1] / 2.0 - CAMERA_MARGIN];
    let mut pos = [rng.random_range(-bound[0]..bound[0]), rng.random_range(-bound[1]..bound[1])];
    let mut vel = [0.0f64; 2];
    let mut yaw: f64 = rng.random_range(-PI..PI);
    let mut yaw_rate = 0.0f64;
    let mut pitch = -0.3f64;
    let mut roll = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let rotation = look_rotation(yaw, pitch, roll);
        out.push(TimedPose { t: i as f64 * dt, pose: Pose::new(rotation, Vec3::new(pos[0], pos[1], EYE_HEIGHT)) });
        for v in vel.iter_mut() {
            *v += rng.sample::<f64, _>(StandardNormal) * 0.8 * dt;
        }
        let speed = vel[0].hypot(vel[1]);
        if speed > MAX_SPEED {
            vel.iter_mut().for_each(|v| *v *= MAX_SPEED / speed);
        }
        for a in 0..2 {
            if (pos[a] + vel[a] * dt).abs() > bound[a] {
                vel[a] = -vel[a];
            }
            pos[a] = (pos[a] + vel[a] * dt).clamp(-bound[a], bound[a]);
        }
        yaw_rate = (0.9 * yaw_rate + 0.3 * rng.sample::<f64, _>(StandardNormal)).clamp(-MAX_YAW_RATE, MAX_YAW_RATE);
        yaw = crate::geom::wrap_angle(yaw + yaw_rate * dt);
        pitch = (pitch + 0.1 * (-0.3 - pitch) + 0.03 * rng.sample::<f64, _>(StandardNormal)).clamp(-MAX_PITCH, MAX_PITCH);
        roll = (0.9 * roll + 0.01 * rng.sample::<f64, _>(StandardNormal)).clamp(-MAX_ROLL, MAX_ROLL);
    }
    Ok(out)
}

/// Wide-angle fisheye used by the simulator by default.
pub fn default_camera() -> Camera {
    FisheyeCamera::new(105.0, 105.0, 120.0, 120.0, [0.02, -0.005, 0.0, 0.0], 240, 240, 118.0).expect("constant calibration is valid").into()
}

/// Scene mesh with its BVH; face indices past the room belong to boxes.
pub struct Raycaster {
    pub mesh: TriangleMesh,
    bvh: Bvh,
    room_faces: usize,
}

impl Raycaster {
    pub fn new(scene: &Scene) -> Self {
        let mesh = scene.mesh();
        let bvh = Bvh::build(&mesh);
        Raycaster { room_faces: scene.room_mesh.faces.len(), mesh, bvh }
    }

    pub fn first_hit(&self, ray: &Ray) -> Option<Hit> {
        self.bvh.first_hit(ray)
    }

    pub fn box_of_face(&self, face: usize) -> Option<usize> {
        face.checked_sub(self.room_faces).map(|f| f / 12)
    }

    /// True when nothing blocks the segment from `from` to `to`.
    pub fn line_of_sight(&self, from: &Vec3, to: &Vec3) -> bool {
        self.first_hit(&Ray::new(*from, to - from)).is_none_or(|h| h.t >= 1.0 - 1e-9)
    }

    /// Nearest intersection per pixel; pixels that miss or fall outside the
    /// fisheye image circle stay invalid.
    pub fn render_depth(&self, cam: &Camera, t_w_cam: &Pose) -> DepthMap {
        let (w, h) = (cam.width(), cam.height());
        let mut depth = DepthMap::new(w, h);
        depth.data.par_chunks_mut(w).enumerate().for_each(|(v, row)| {
            for (u, d) in row.iter_mut().enumerate() {
                *d = self.pixel_depth(cam, t_w_cam, u as f64, v as f64).unwrap_or(0.0) as f32;
            }
        });
        depth
    }

    fn pixel_depth(&self, cam: &Camera, t_w_cam: &Pose, u: f64, v: f64) -> Option<f64> {
        if let Camera::Fisheye(f) = cam {
            if (u - f.cx).hypot(v - f.cy) > f.valid_radius {
                return None;
            }
        }
        let dir = cam.depth_ray(u, v).ok()?;
        // the ray has unit depth, so the hit parameter is the depth itself
        let ray = Ray::new(t_w_cam.translation, t_w_cam.rotation.apply(&dir));
        self.first_hit(&ray).map(|h| h.t)
    }

    /// Boxes with an unoccluded, in-view probe point (center or a shrunken
    /// corner).
    pub fn visible_boxes(&self, scene: &Scene, view: &CameraView) -> Vec<usize> {
        let cam_center = view.t_w_cam.translation;
        let w_to_c = view.t_w_cam.inverse();
        (0..scene.obbs.len())
            .filter(|&b| {
                let obb = &scene.obbs[b];
                std::iter::once(obb.center).chain(obb.corners().iter().map(|c| obb.center + (c - obb.center) * PROBE_SHRINK)).any(|p| {
                    let pc = w_to_c.transform_point(&p);
                    if !(view.camera.depth_of(&pc) > 0.0 && view.camera.project(&pc).valid) {
                        return false;
                    }
                    self.first_hit(&Ray::new(cam_center, p - cam_center)).is_some_and(|h| self.box_of_face(h.face) == Some(b))
                })
            })
            .collect()
    }
}

pub fn render_depth(scene: &Scene, cam: &Camera, t_w_cam: &Pose) -> DepthMap {
    Raycaster::new(scene).render_depth(cam, t_w_cam)
}

/// Planar rectangle `center + s a + t b` for `s, t` in `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
struct Rect {
    center: Vec3,
    a: Vec3,
    b: Vec3,
}

impl Rect {
    fn area(&self) -> f64 {
        4.0 * self.a.norm() * self.b.norm()
    }

    fn band_area(&self, band: f64) -> f64 {
        let inner = (2.0 * self.a.norm() - 2.0 * band).max(0.0) * (2.0 * self.b.norm() - 2.0 * band).max(0.0);
        self.area() - inner
    }

    fn edge_distance(&self, s: f64, t: f64) -> f64 {
        (self.a.norm() * (1.0 - s.abs())).min(self.b.norm() * (1.0 - t.abs()))
    }

    fn at(&self, s: f64, t: f64) -> Vec3 {
        self.center + self.a * s + self.b * t
    }
}

fn cuboid_rects(pose: &Pose, half: &Vec3, with_bottom: bool) -> Vec<Rect> {
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut out = Vec::new();
    for n in 0..3 {
        let (p, q) = ((n + 1) % 3, (n + 2) % 3);
        for sign in [-1.0, 1.0] {
            if n == 2 && sign < 0.0 && !with_bottom {
                continue;
            }
            out.push(Rect {
                center: pose.transform_point(&(axes[n] * sign * half[n])),
                a: pose.transform_vector(&(axes[p] * half[p])),
                b: pose.transform_vector(&(axes[q] * half[q])),
            });
        }
    }
    out
}

fn scene_rects(scene: &Scene) -> Vec<Rect> {
    let (lo, hi) = scene.room_bounds();
    let mut rects = cuboid_rects(&Pose::from_translation((lo + hi) / 2.0), &((hi - lo) / 2.0), true);
    for b in &scene.obbs {
        // box bottoms rest on the floor and are never observed
        rects.extend(cuboid_rects(&b.pose(), &(b.dims / 2.0), false));
    }
    rects
}

/// Trajectory poses used as observers, evenly strided.
fn keyframes(trajectory: &[TimedPose]) -> Vec<Pose> {
    let stride = trajectory.len().div_ceil(MAX_KEYFRAMES).max(1);
    trajectory.iter().step_by(stride).map(|p| p.pose).collect()
}

/// Semi-dense points on observed surfaces, biased toward edges, each with
/// the keyframe centers that see it.
pub fn sample_semidense(
    scene: &Scene,
    trajectory: &[TimedPose],
    camera: &Camera,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<PointCloudWithVisibility> {
    if trajectory.is_empty() {
        return Err(Error::InvalidArgument("semi-dense sampling needs a non-empty trajectory".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("point sigma must be non-negative, got {sigma}")));
    }
    let caster = Raycaster::new(scene);
    let rects = scene_rects(scene);
    let by_area = WeightedIndex::new(rects.iter().map(Rect::area)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let by_band = WeightedIndex::new(rects.iter().map(|r| r.band_area(EDGE_BAND))).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let frames = keyframes(trajectory);
    let inverses: Vec<Pose> = frames.iter().map(Pose::inverse).collect();
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let candidate = |index: u64| -> Option<(Vec3, Vec<u32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let on_edge = rng.random_bool(EDGE_FRACTION);
        let rect = &rects[if on_edge { by_band.sample(&mut rng) } else { by_area.sample(&mut rng) }];
        let (s, t) = loop {
            let (s, t) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            if !on_edge || rect.edge_distance(s, t) < EDGE_BAND {
                break (s, t);
            }
        };
        let p = rect.at(s, t);
        let vis: Vec<u32> = frames
            .iter()
            .zip(&inverses)
            .enumerate()
            .filter(|(_, (pose, inv))| {
                let pc = inv.transform_point(&p);
                camera.depth_of(&pc) > 0.0 && camera.project(&pc).valid && caster.line_of_sight(&pose.translation, &p)
            })
            .map(|(k, _)| k as u32)
            .collect();
        if vis.is_empty() {
            return None;
        }
        let jitter = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        Some((p + jitter, vis))
    };

    let mut points = Vec::with_capacity(n);
    let mut visibility = Vec::with_capacity(n);
    let max_candidates = (n as u64).saturating_mul(100).max(CANDIDATE_BATCH as u64);
    let mut next = 0u64;
    while points.len() < n && next < max_candidates {
        let batch: Vec<_> = (next..next + CANDIDATE_BATCH as u64).into_par_iter().map(candidate).collect();
        next += CANDIDATE_BATCH as u64;
        for (p, vis) in batch.into_iter().flatten() {
            if points.len() == n {
                break;
            }
            points.push(p);
            visibility.push(vis);
        }
    }
    if points.len() < n {
        log::warn!("only {} of {n} semi-dense points are visible from the trajectory", points.len());
    }
    // drop keyframes that observe nothing and renumber
    let mut used = vec![false; frames.len()];
    visibility.iter().flatten().for_each(|&k| used[k as usize] = true);
    let mut remap = vec![u32::MAX; frames.len()];
    let mut observers = Vec::new();
    for (k, pose) in frames.iter().enumerate() {
        if used[k] {
            remap[k] = observers.len() as u32;
            observers.push(pose.translation);
        }
    }
    visibility.iter_mut().flatten().for_each(|k| *k = remap[*k as usize]);
    Ok(PointCloudWithVisibility { points, observers, visibility })
}

/// Jittered copies of the listed ground-truth boxes plus Poisson-many
/// floor-standing false positives; scores are uniform in `[0.5, 1)`.
pub fn noisy_detections<R: Rng>(scene: &Scene, spec: &SceneSpec, visible: &[usize], rng: &mut R) -> Result<Vec<Obb3>> {
    let noise = &spec.detection;
    noise.validate()?;
    let k = scene.classes.len();
    let mut out = Vec::with_capacity(visible.len());
    for &b in visible {
        let gt = &scene.obbs[b];
        let jitter = |rng: &mut R, s: f64| s * rng.sample::<f64, _>(StandardNormal);
        let center =
            gt.center + Vec3::new(jitter(rng, noise.sigma_center), jitter(rng, noise.sigma_center), jitter(rng, noise.sigma_center));
        let dims = gt.dims.map(|d| d * jitter(rng, noise.sigma_size).exp());
        let yaw = gt.yaw + jitter(rng, noise.sigma_yaw);
        out.push(Obb3::with_class(center, yaw, dims, gt.label(), k, rng.random_range(0.5..1.0))?);
    }
    let lambda = noise.false_positive_rate * visible.len() as f64;
    let fps = if lambda > 0.0 { Poisson::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng) as usize } else { 0 };
    let (lo, hi) = scene.room_bounds();
    let [s_lo, s_hi] = spec.box_size;
    for _ in 0..fps {
        let dims = Vec3::new(rng.random_range(s_lo..=s_hi), rng.random_range(s_lo..=s_hi), rng.random_range(s_lo..=s_hi));
        let center = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), dims.z / 2.0);
        let class = rng.random_range(0..k);
        out.push(Obb3::with_class(center, rng.random_range(-PI..PI), dims, class, k, rng.random_range(0.5..1.0))?);
    }
    Ok(out)
}
