//! Gravity-aligned oriented bounding boxes.
//!
//! Boxes live in a world frame whose z axis points against gravity; `yaw`
//! rotates the footprint about that axis. `dims` are full side lengths along
//! the box's own x, y and (vertical) z axes.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Pose, Rotation, Vec3};
use crate::voxel::VoxelGrid;

/// Number of regressed box parameters per voxel: 3 sizes, 3 offsets, yaw.
pub const NUM_BOX_PARAMS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obb3 {
    pub center: Vec3,
    pub yaw: f64,
    pub dims: Vec3,
    pub class_probs: Vec<f64>,
    pub score: f64,
}

impl Obb3 {
    pub fn new(center: Vec3, yaw: f64, dims: Vec3, class_probs: Vec<f64>, score: f64) -> Result<Self> {
        let b = Obb3 { center, yaw: wrap_angle(yaw), dims, class_probs, score };
        b.validate()?;
        Ok(b)
    }

    /// Box with a one-hot class distribution over `num_classes`.
    pub fn with_class(center: Vec3, yaw: f64, dims: Vec3, class: usize, num_classes: usize, score: f64) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::InvalidArgument(format!("class {class} out of range for {num_classes} classes")));
        }
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Obb3::new(center, yaw, dims, probs, score)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("box dims must be positive, got {:?}", self.dims.as_slice())));
        }
        if !self.center.iter().all(|c| c.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::InvalidArgument("box center and yaw must be finite".into()));
        }
        if self.class_probs.is_empty() {
            return Err(Error::InvalidArgument("box needs at least one class".into()));
        }
        let sum: f64 = self.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.class_probs.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidArgument(format!("class probabilities must form a simplex (sum {sum})")));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidArgument(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }

    /// Most probable class; ties go to the lower index.
    pub fn label(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.class_probs.iter().enumerate() {
            if *p > self.class_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Object-to-world pose.
    pub fn pose(&self) -> Pose {
        Pose::new(Rotation::from_yaw(self.yaw), self.center)
    }

    /// Sets center and yaw from a pose, keeping only the rotation about z.
    pub fn set_pose(&mut self, pose: &Pose) {
        let m = pose.rotation.matrix();
        self.yaw = wrap_angle(m[(1, 0)].atan2(m[(0, 0)]));
        self.center = pose.translation;
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let pose = self.pose();
        let h = self.dims / 2.0;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let local =
                Vec3::new(if i & 1 == 0 { -h.x } else { h.x }, if i & 2 == 0 { -h.y } else { h.y }, if i & 4 == 0 { -h.z } else { h.z });
            *c = pose.transform_point(&local);
        }
        out
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.pose().inverse().transform_point(p);
        let h = self.dims / 2.0;
        local.x.abs() <= h.x && local.y.abs() <= h.y && local.z.abs() <= h.z
    }

    pub fn geometry(&self) -> BoxGeom<f64> {
        BoxGeom { center: [self.center.x, self.center.y, self.center.z], dims: [self.dims.x, self.dims.y, self.dims.z], yaw: self.yaw }
    }
}

/// Box geometry over a generic scalar so IoU can be differentiated.
#[derive(Debug, Clone, Copy)]
pub struct BoxGeom<S> {
    pub center: [S; 3],
    pub dims: [S; 3],
    pub yaw: S,
}

fn footprint<S: Real>(b: &BoxGeom<S>) -> Vec<[S; 2]> {
    let (s, c) = (b.yaw.sin(), b.yaw.cos());
    let hx = b.dims[0] * S::cst(0.5);
    let hy = b.dims[1] * S::cst(0.5);
    // counter-clockwise
    [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|&(sx, sy)| {
            let lx = hx * S::cst(sx);
            let ly = hy * S::cst(sy);
            [b.center[0] + c * lx - s * ly, b.center[1] + s * lx + c * ly]
        })
        .collect()
}

#[inline]
fn cross2<S: Real>(o: [S; 2], a: [S; 2], p: [S; 2]) -> S {
    (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
}

/// Sutherland-Hodgman clip of `subject` against the convex CCW `clip`.
fn clip_polygon<S: Real>(subject: Vec<[S; 2]>, clip: &[[S; 2]]) -> Vec<[S; 2]> {
    let mut out = subject;
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross2(a, b, p);
            let dq = cross2(a, b, q);
            let p_in = dp.value() >= 0.0;
            let q_in = dq.value() >= 0.0;
            if p_in {
                out.push(p);
            }
            if p_in != q_in {
                let t = dp / (dp - dq);
                out.push([p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]);
            }
        }
    }
    out
}

fn polygon_area<S: Real>(poly: &[[S; 2]]) -> S {
    let mut acc = S::zero();
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc = acc + (p[0] * q[1] - q[0] * p[1]);
    }
    let a = acc * S::cst(0.5);
    if a.value() < 0.0 {
        -a
    } else {
        a
    }
}

/// Exact intersection volume of two gravity-aligned boxes.
pub fn intersection_volume<S: Real>(a: &BoxGeom<S>, b: &BoxGeom<S>) -> S {
    let half = S::cst(0.5);
    let top = (a.center[2] + a.dims[2] * half).min(b.center[2] + b.dims[2] * half);
    let bottom = (a.center[2] - a.dims[2] * half).max(b.center[2] - b.dims[2] * half);
    let h = top - bottom;
    if h.value() <= 0.0 {
        return S::zero();
    }
    let poly = clip_polygon(footprint(a), &footprint(b));
    if poly.len() < 3 {
        return S::zero();
    }
    polygon_area(&poly) * h
}

pub fn iou3_geom<S: Real>(a: &BoxGeom<S>, b: &BoxGeom<S>) -> S {
    let inter = intersection_volume(a, b);
    let va = a.dims[0] * a.dims[1] * a.dims[2];
    let vb = b.dims[0] * b.dims[1] * b.dims[2];
    let union = va + vb - inter;
    if union.value() <= 0.0 {
        return S::zero();
    }
    let iou = inter / union;
    // clipping round-off can push identical boxes a hair past 1
    if iou.value() > 1.0 {
        S::cst(1.0)
    } else {
        iou
    }
}

/// Exact 3D IoU of two gravity-aligned boxes.
pub fn iou3(a: &Obb3, b: &Obb3) -> f64 {
    iou3_geom(&a.geometry(), &b.geometry())
}

/// Axis-aligned image-space box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Box2 {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Box2 { min, max }
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }
}

pub fn iou2(a: &Box2, b: &Box2) -> f64 {
    let w = (a.max[0].min(b.max[0]) - a.min[0].max(b.min[0])).max(0.0);
    let h = (a.max[1].min(b.max[1]) - a.min[1].max(b.min[1])).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Image-space hull of the box corners that project validly.
pub fn project_bbox2(obb: &Obb3, cam: &Camera, t_w_cam: &Pose) -> Option<Box2> {
    let t_cam_w = t_w_cam.inverse();
    let mut hull: Option<Box2> = None;
    for corner in obb.corners() {
        let px = cam.project(&t_cam_w.transform_point(&corner));
        if !px.valid {
            continue;
        }
        let b = hull.get_or_insert(Box2::new([px.u, px.v], [px.u, px.v]));
        b.min = [b.min[0].min(px.u), b.min[1].min(px.v)];
        b.max = [b.max[0].max(px.u), b.max[1].max(px.v)];
    }
    hull.map(|b| {
        let (w, h) = (cam.width() as f64, cam.height() as f64);
        Box2::new([b.min[0].clamp(0.0, w), b.min[1].clamp(0.0, h)], [b.max[0].clamp(0.0, w), b.max[1].clamp(0.0, h)])
    })
}

/// Dense per-voxel detection outputs over one [`VoxelGrid`].
///
/// All arrays are channel-major: entry `(c, v)` lives at `c * N + v` where
/// `v` is the flat voxel index.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGrid {
    pub dims: [usize; 3],
    pub num_classes: usize,
    pub centerness: Vec<f64>,
    pub class_logits: Vec<f64>,
    /// Sizes (3, meters), center offsets (3, voxels), yaw (radians).
    pub params: Vec<f64>,
}

impl DetectionGrid {
    pub fn zeros(dims: [usize; 3], num_classes: usize) -> Self {
        let n = dims.iter().product::<usize>();
        DetectionGrid {
            dims,
            num_classes,
            centerness: vec![0.0; n],
            class_logits: vec![0.0; n * num_classes],
            params: vec![0.0; n * NUM_BOX_PARAMS],
        }
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn check_shape(&self, grid: &VoxelGrid) -> Result<()> {
        let n = self.num_voxels();
        if self.dims != grid.dims {
            return Err(Error::ShapeMismatch(format!("detection grid {:?} vs voxel grid {:?}", self.dims, grid.dims)));
        }
        if self.centerness.len() != n || self.class_logits.len() != n * self.num_classes || self.params.len() != n * NUM_BOX_PARAMS {
            return Err(Error::ShapeMismatch("detection grid arrays do not match its dims".into()));
        }
        Ok(())
    }

    pub fn box_params(&self, v: usize) -> [f64; NUM_BOX_PARAMS] {
        let n = self.num_voxels();
        std::array::from_fn(|c| self.params[c * n + v])
    }

    pub fn set_box_params(&mut self, v: usize, p: &[f64; NUM_BOX_PARAMS]) {
        let n = self.num_voxels();
        for (c, val) in p.iter().enumerate() {
            self.params[c * n + v] = *val;
        }
    }

    pub fn logits(&self, v: usize) -> Vec<f64> {
        let n = self.num_voxels();
        (0..self.num_classes).map(|c| self.class_logits[c * n + v]).collect()
    }

    pub fn class_probs(&self, v: usize) -> Vec<f64> {
        softmax(&self.logits(v))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// World-space box encoded by the parameters at flat voxel `v`.
pub fn decode_geometry<S: Real>(grid: &VoxelGrid, v: usize, params: &[S; NUM_BOX_PARAMS]) -> BoxGeom<S> {
    let local = grid.local_center_flat(v);
    let r = grid.pose.rotation.matrix();
    let t = grid.pose.translation;
    let vs = S::cst(grid.voxel_size);
    let off = [params[3] * vs, params[4] * vs, params[5] * vs];
    let mut center = [S::zero(); 3];
    for (row, c) in center.iter_mut().enumerate() {
        let base = r[(row, 0)] * local.x + r[(row, 1)] * local.y + r[(row, 2)] * local.z + t[row];
        *c = S::cst(base) + S::cst(r[(row, 0)]) * off[0] + S::cst(r[(row, 1)]) * off[1] + S::cst(r[(row, 2)]) * off[2];
    }
    BoxGeom { center, dims: [params[0], params[1], params[2]], yaw: params[6] + S::cst(grid.heading()) }
}

/// One box per voxel whose centerness reaches `tau_center`.
pub fn decode(det: &DetectionGrid, grid: &VoxelGrid, tau_center: f64) -> Result<Vec<Obb3>> {
    det.check_shape(grid)?;
    if !(tau_center > 0.0 && tau_center < 1.0) {
        return Err(Error::InvalidArgument(format!("centerness threshold {tau_center} outside (0, 1)")));
    }
    let mut out = Vec::new();
    for v in 0..det.num_voxels() {
        let score = det.centerness[v];
        if score < tau_center {
            continue;
        }
        let g = decode_geometry(grid, v, &det.box_params(v));
        out.push(Obb3 {
            center: Vec3::new(g.center[0], g.center[1], g.center[2]),
            yaw: wrap_angle(g.yaw),
            dims: Vec3::new(g.dims[0], g.dims[1], g.dims[2]),
            class_probs: det.class_probs(v),
            score: score.clamp(0.0, 1.0),
        });
    }
    Ok(out)
}

/// Greedy suppression by descending score using a caller-defined predicate
/// `suppress(kept, candidate)`.
pub fn greedy_suppress<F>(dets: &[Obb3], order: &[usize], mut suppress: F) -> Vec<usize>
where
    F: FnMut(&Obb3, &Obb3) -> bool,
{
    let mut kept: Vec<usize> = Vec::new();
    for &i in order {
        if !kept.iter().any(|&k| suppress(&dets[k], &dets[i])) {
            kept.push(i);
        }
    }
    kept
}

/// Indices sorted by descending score, ties by input order.
pub fn score_order(dets: &[Obb3]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order
}

/// 3D NMS: a candidate is dropped when its center is within
/// `radius_voxels * voxel_size` of a kept box and their IoU exceeds `iou_min`.
pub fn nms3(dets: &[Obb3], grid: &VoxelGrid, radius_voxels: f64, iou_min: f64) -> Result<Vec<Obb3>> {
    if !(radius_voxels >= 0.0) {
        return Err(Error::InvalidArgument(format!("NMS radius must be non-negative, got {radius_voxels}")));
    }
    let radius = radius_voxels * grid.voxel_size;
    let kept = greedy_suppress(dets, &score_order(dets), |k, c| nms3_suppresses(k, c, radius, iou_min));
    Ok(kept.into_iter().map(|i| dets[i].clone()).collect())
}

pub(crate) fn nms3_suppresses(kept: &Obb3, cand: &Obb3, radius: f64, iou_min: f64) -> bool {
    (kept.center - cand.center).norm() <= radius && iou3(kept, cand) > iou_min
}
