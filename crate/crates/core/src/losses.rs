//! Training objectives with analytic gradients: binary focal loss on soft
//! targets, the box detection loss, the occupancy surface loss and a total
//! variation regularizer, plus the encoder that turns GT boxes into dense
//! detection targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Dual;
use crate::camera::{CameraView, DepthMap};
use crate::error::{Error, Result};
use crate::obb::{decode_geometry, iou3_geom, DetectionGrid, Obb3, NUM_BOX_PARAMS};
use crate::voxel::VoxelGrid;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before the logarithms.
pub const EPS: f64 = 1e-7;
/// Smoothing of `|x|` in the TV term: `sqrt(x^2 + TV_EPS) - sqrt(TV_EPS)`.
pub const TV_EPS: f64 = 1e-8;
/// Targets of free-space, surface and occupied samples.
pub const OCC_TARGETS: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("focal alpha must be in (0, 1) and gamma >= 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_c: f64,
    pub w_iou: f64,
    pub w_cls: f64,
    pub w_tv: f64,
    /// Sampling band around observed surfaces, meters.
    pub delta: f64,
}

impl LossWeights {
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        LossWeights { w_c: 100.0, w_iou: 10.0, w_cls: 1.0, w_tv: 0.01, delta: voxel_size }
    }
}

/// Binary focal loss of probability `p` against a soft target `y`.
pub fn focal_loss(p: f64, y: f64, fp: &FocalParams) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    let q = 1.0 - p;
    -(y * fp.alpha * q.powf(fp.gamma) * p.ln() + (1.0 - y) * (1.0 - fp.alpha) * p.powf(fp.gamma) * q.ln())
}

/// `d focal_loss / dp`; zero where `p` is clamped.
pub fn focal_grad(p: f64, y: f64, fp: &FocalParams) -> f64 {
    if !(EPS..=1.0 - EPS).contains(&p) {
        return 0.0;
    }
    let q = 1.0 - p;
    let g = fp.gamma;
    let pos = fp.alpha * (-g * q.powf(g - 1.0) * p.ln() + q.powf(g) / p);
    let neg = (1.0 - fp.alpha) * (g * p.powf(g - 1.0) * q.ln() - p.powf(g) / q);
    -(y * pos + (1.0 - y) * neg)
}

/// Dense detection targets: centerness 1 at the voxel holding each box
/// center, with that box's parameters and one-hot class (as logits
/// `ln(max(p, 1e-12))`) stored there. Boxes centered outside the grid are
/// dropped; when two centers share a voxel the first box wins.
pub fn encode_targets(gt: &[Obb3], grid: &VoxelGrid, num_classes: usize) -> Result<DetectionGrid> {
    let mut out = DetectionGrid::zeros(grid.dims, num_classes);
    let n = grid.num_voxels();
    for b in gt {
        if b.label() >= num_classes {
            return Err(Error::InvalidArgument(format!("class {} out of range for {num_classes} classes", b.label())));
        }
        let local = grid.to_local(&b.center);
        let Some((i, j, k)) = grid.containing_voxel(&local) else { continue };
        let v = grid.flat_index(i, j, k);
        if out.centerness[v] == 1.0 {
            log::debug!("two GT centers share voxel {v}; keeping the first");
            continue;
        }
        out.centerness[v] = 1.0;
        let off = (local - grid.local_center(i, j, k)) / grid.voxel_size;
        let yaw = crate::geom::wrap_angle(b.yaw - grid.heading());
        out.set_box_params(v, &[b.dims.x, b.dims.y, b.dims.z, off.x, off.y, off.z, yaw]);
        for c in 0..num_classes {
            let p: f64 = if c == b.label() { 1.0 } else { 0.0 };
            out.class_logits[c * n + v] = p.max(1e-12).ln();
        }
    }
    Ok(out)
}

fn positive(target: &DetectionGrid, v: usize) -> bool {
    target.centerness[v] > 0.5
}

/// Detection loss and its gradient with respect to every entry of `pred`.
///
/// `(1/N) * sum_v [ w_c FL(centerness) ]`, plus at voxels where the target
/// centerness is 1: `w_iou (1 - IoU(decoded pred, decoded target))` and
/// `w_cls * sum_k FL(softmax_k, target_k)`.
pub fn detection_loss_grad(
    pred: &DetectionGrid,
    target: &DetectionGrid,
    grid: &VoxelGrid,
    w: &LossWeights,
    fp: &FocalParams,
) -> Result<(f64, DetectionGrid)> {
    pred.check_shape(grid)?;
    target.check_shape(grid)?;
    if pred.num_classes != target.num_classes {
        return Err(Error::ShapeMismatch(format!("prediction has {} classes, target {}", pred.num_classes, target.num_classes)));
    }
    let n = grid.num_voxels();
    let inv_n = 1.0 / n as f64;
    let mut grad = DetectionGrid::zeros(grid.dims, pred.num_classes);
    let mut loss = 0.0;
    for v in 0..n {
        let (p, y) = (pred.centerness[v], target.centerness[v]);
        loss += w.w_c * focal_loss(p, y, fp);
        grad.centerness[v] = w.w_c * focal_grad(p, y, fp) * inv_n;
        if !positive(target, v) {
            continue;
        }

        let tp = target.box_params(v);
        let tgeom = decode_geometry(grid, v, &tp.map(Dual::constant));
        let pp = pred.box_params(v);
        let mut g = [0.0; NUM_BOX_PARAMS];
        let mut iou = 0.0;
        for (c, gc) in g.iter_mut().enumerate() {
            let params: [Dual; NUM_BOX_PARAMS] = std::array::from_fn(|i| if i == c { Dual::var(pp[i]) } else { Dual::constant(pp[i]) });
            let r = iou3_geom(&decode_geometry(grid, v, &params), &tgeom);
            iou = r.v;
            *gc = -w.w_iou * r.d * inv_n;
        }
        loss += w.w_iou * (1.0 - iou);
        grad.set_box_params(v, &g);

        let probs = pred.class_probs(v);
        let ys = target.class_probs(v);
        let dl_dp: Vec<f64> = probs.iter().zip(&ys).map(|(p, y)| w.w_cls * focal_grad(*p, *y, fp) * inv_n).collect();
        loss += w.w_cls * probs.iter().zip(&ys).map(|(p, y)| focal_loss(*p, *y, fp)).sum::<f64>();
        let dot: f64 = dl_dp.iter().zip(&probs).map(|(g, p)| g * p).sum();
        for (j, pj) in probs.iter().enumerate() {
            grad.class_logits[j * n + v] = pj * (dl_dp[j] - dot);
        }
    }
    Ok((loss * inv_n, grad))
}

pub fn detection_loss(pred: &DetectionGrid, target: &DetectionGrid, grid: &VoxelGrid, w: &LossWeights, fp: &FocalParams) -> Result<f64> {
    detection_loss_grad(pred, target, grid, w, fp).map(|(l, _)| l)
}

/// Voxel index and trilinear weights of one sample.
type Stencil = [(usize, f64); 8];

/// Trilinear stencils of the free-space, surface and occupied samples drawn
/// from every valid depth pixel, in pixel order; samples outside the grid
/// are dropped.
fn occupancy_samples(grid: &VoxelGrid, depth: &DepthMap, view: &CameraView, delta: f64, seed: u64) -> Result<Vec<(usize, Stencil)>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling band must be positive, got {delta}")));
    }
    let cam = &view.camera;
    if depth.width != cam.width() || depth.height != cam.height() {
        return Err(Error::ShapeMismatch("depth map does not match camera".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_grid = grid.pose.inverse().compose(&view.t_w_cam);
    let mut out = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v) as f64;
            if d <= 0.0 {
                continue;
            }
            let ray = cam.depth_ray(u as f64, v as f64)?;
            let free = d - delta * rng.random::<f64>();
            let occ = d + delta * rng.random::<f64>();
            for (kind, t) in [(0usize, free), (1, d), (2, occ)] {
                if let Some(st) = grid.trilinear_weights(&to_grid.transform_point(&(ray * t))) {
                    out.push((kind, st));
                }
            }
        }
    }
    Ok(out)
}

/// Occupancy surface loss and its gradient with respect to `pred_occ`.
///
/// Free-space samples lie up to `delta` in front of each observed depth,
/// surface samples on it and occupied samples up to `delta` behind it, with
/// targets 0, 0.5 and 1. The loss is the per-pixel sum of the three focal
/// terms averaged over pixels, i.e. three times the mean over the samples
/// that land in the grid.
pub fn occupancy_loss_grad(
    pred_occ: &[f64],
    grid: &VoxelGrid,
    depth: &DepthMap,
    view: &CameraView,
    w: &LossWeights,
    fp: &FocalParams,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if pred_occ.len() != grid.num_voxels() {
        return Err(Error::ShapeMismatch(format!("occupancy has {} values, grid {} voxels", pred_occ.len(), grid.num_voxels())));
    }
    let samples = occupancy_samples(grid, depth, view, w.delta, seed)?;
    if samples.is_empty() {
        return Err(Error::NoValidSamples);
    }
    let scale = 3.0 / samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred_occ.len()];
    for (kind, st) in &samples {
        let p: f64 = st.iter().map(|(i, wt)| pred_occ[*i] * wt).sum();
        let y = OCC_TARGETS[*kind];
        loss += focal_loss(p, y, fp);
        let g = focal_grad(p, y, fp) * scale;
        for (i, wt) in st {
            grad[*i] += g * wt;
        }
    }
    Ok((loss * scale, grad))
}

pub fn occupancy_loss(
    pred_occ: &[f64],
    grid: &VoxelGrid,
    depth: &DepthMap,
    view: &CameraView,
    w: &LossWeights,
    fp: &FocalParams,
    seed: u64,
) -> Result<f64> {
    occupancy_loss_grad(pred_occ, grid, depth, view, w, fp, seed).map(|(l, _)| l)
}

/// Total variation: for each axis, the mean smoothed absolute forward
/// difference, summed over the three axes. Returns the gradient too.
pub fn tv_loss_grad(vol: &[f64], dims: [usize; 3]) -> Result<(f64, Vec<f64>)> {
    if dims.iter().any(|d| *d < 2) {
        return Err(Error::VolumeTooSmall(dims));
    }
    let [d, h, w] = dims;
    if vol.len() != d * h * w {
        return Err(Error::ShapeMismatch(format!("volume has {} values, dims {dims:?}", vol.len())));
    }
    let strides = [h * w, w, 1];
    let mut loss = 0.0;
    let mut grad = vec![0.0; vol.len()];
    for axis in 0..3 {
        let count = (dims[axis] - 1) * dims.iter().product::<usize>() / dims[axis];
        let inv = 1.0 / count as f64;
        let s = strides[axis];
        for i in 0..d {
            for j in 0..h {
                for k in 0..w {
                    if [i, j, k][axis] + 1 == dims[axis] {
                        continue;
                    }
                    let a = (i * h + j) * w + k;
                    let diff = vol[a + s] - vol[a];
                    let r = (diff * diff + TV_EPS).sqrt();
                    loss += (r - TV_EPS.sqrt()) * inv;
                    let g = diff / r * inv;
                    grad[a + s] += g;
                    grad[a] -= g;
                }
            }
        }
    }
    Ok((loss, grad))
}

pub fn tv_loss(vol: &[f64], dims: [usize; 3]) -> Result<f64> {
    tv_loss_grad(vol, dims).map(|(l, _)| l)
}
