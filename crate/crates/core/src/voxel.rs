//! Local gravity-aligned voxel grids and what gets lifted onto them:
//! multi-view image features, semi-dense point masks and freespace masks.
//!
//! Voxel `(i, j, k)` indexes `(D, H, W)`, which map to the grid frame's
//! `(z, y, x)` axes. Flat indices are `(i * H + j) * W + k`. The grid frame
//! origin sits at the center of the volume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geom::{gravity_align, GravityDir, Pose, Vec3};

pub const DEFAULT_EXTENT_M: f64 = 4.0;
pub const DEFAULT_FREESPACE_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    /// Grid-to-world transform.
    pub pose: Pose,
    /// Voxel counts `(D, H, W)`.
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl VoxelGrid {
    pub fn new(pose: Pose, dims: [usize; 3], voxel_size: f64) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(VoxelGrid { pose, dims, voxel_size })
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn unflatten(&self, v: usize) -> (usize, usize, usize) {
        let k = v % self.dims[2];
        let j = (v / self.dims[2]) % self.dims[1];
        let i = v / (self.dims[1] * self.dims[2]);
        (i, j, k)
    }

    #[inline]
    pub fn local_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let [d, h, w] = self.dims;
        Vec3::new(
            (k as f64 + 0.5 - w as f64 / 2.0) * self.voxel_size,
            (j as f64 + 0.5 - h as f64 / 2.0) * self.voxel_size,
            (i as f64 + 0.5 - d as f64 / 2.0) * self.voxel_size,
        )
    }

    pub fn local_center_flat(&self, v: usize) -> Vec3 {
        let (i, j, k) = self.unflatten(v);
        self.local_center(i, j, k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.pose.transform_point(&self.local_center(i, j, k))
    }

    pub fn to_local(&self, world: &Vec3) -> Vec3 {
        self.pose.rotation.inverse().apply(&(world - self.pose.translation))
    }

    /// Continuous `(i, j, k)` coordinates in which voxel centers are integers.
    pub fn center_coords(&self, local: &Vec3) -> [f64; 3] {
        let [d, h, w] = self.dims;
        [
            local.z / self.voxel_size + d as f64 / 2.0 - 0.5,
            local.y / self.voxel_size + h as f64 / 2.0 - 0.5,
            local.x / self.voxel_size + w as f64 / 2.0 - 0.5,
        ]
    }

    /// Voxel containing a grid-frame point; boundaries belong to the higher
    /// index.
    pub fn containing_voxel(&self, local: &Vec3) -> Option<(usize, usize, usize)> {
        let c = self.center_coords(local);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = (c[a] + 0.5).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some((idx[0], idx[1], idx[2]))
    }

    /// Heading of the grid's z axis about world z.
    pub fn heading(&self) -> f64 {
        let c2 = self.pose.rotation.column(2);
        c2.y.atan2(c2.x)
    }

    /// Trilinear stencil for a grid-frame point; `None` outside the region
    /// spanned by voxel centers.
    pub fn trilinear_weights(&self, local: &Vec3) -> Option<[(usize, f64); 8]> {
        let c = self.center_coords(local);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let tol = 1e-9;
            if !(c[a] >= -tol && c[a] <= (n - 1) as f64 + tol) {
                return None;
            }
            let x = c[a].clamp(0.0, (n - 1) as f64);
            if n == 1 {
                base[a] = 0;
                frac[a] = 0.0;
            } else {
                let b = (x.floor() as usize).min(n - 2);
                base[a] = b;
                frac[a] = x - b as f64;
            }
        }
        let mut out = [(0usize, 0.0f64); 8];
        for (corner, slot) in out.iter_mut().enumerate() {
            let mut idx = [0usize; 3];
            let mut w = 1.0;
            for a in 0..3 {
                let hi = (corner >> (2 - a)) & 1 == 1;
                idx[a] = (base[a] + hi as usize).min(self.dims[a] - 1);
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            *slot = (self.flat_index(idx[0], idx[1], idx[2]), w);
        }
        Some(out)
    }

    pub fn transformed(&self, t: &Pose) -> VoxelGrid {
        VoxelGrid { pose: t.compose(&self.pose), ..*self }
    }
}

/// Grid anchored on the latest camera: gravity-aligned rotation, centered
/// half an extent ahead along the horizontal viewing direction.
pub fn anchor_grid(last_pose: &Pose, g: &GravityDir, extent_m: f64, resolution: usize) -> Result<VoxelGrid> {
    if resolution == 0 || !(extent_m > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid grid extent {extent_m} / resolution {resolution}")));
    }
    let rotation = gravity_align(&last_pose.rotation, g)?;
    let ahead = rotation.column(2);
    let center = last_pose.translation + ahead * (extent_m / 2.0);
    VoxelGrid::new(Pose::new(rotation, center), [resolution; 3], extent_m / resolution as f64)
}

/// World-space voxel centers in flat-index order.
pub fn voxel_centers(grid: &VoxelGrid) -> Vec<Vec3> {
    (0..grid.num_voxels()).map(|v| grid.pose.transform_point(&grid.local_center_flat(v))).collect()
}

/// Channel-major `C x D x H x W` volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub channels: usize,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl FeatureVolume {
    pub fn get(&self, c: usize, v: usize) -> f64 {
        self.values[c * self.dims.iter().product::<usize>() + v]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    pub dims: [usize; 3],
    pub values: Vec<u8>,
}

impl MaskVolume {
    pub fn zeros(dims: [usize; 3]) -> Self {
        MaskVolume { dims, values: vec![0; dims.iter().product()] }
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0).count()
    }
}

/// Channel-major `F x h x w` image of features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureImage {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * width * height || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature image {channels}x{height}x{width} needs {} values, got {}",
                channels * width * height,
                data.len()
            )));
        }
        Ok(FeatureImage { channels, width, height, data })
    }

    pub fn constant(channels: usize, width: usize, height: usize, value: f64) -> Self {
        FeatureImage { channels, width, height, data: vec![value; channels * width * height] }
    }

    #[inline]
    pub fn at(&self, c: usize, u: usize, v: usize) -> f64 {
        self.data[(c * self.height + v) * self.width + u]
    }

    /// Bilinear sample of every channel; border pixels are repeated.
    pub fn bilinear(&self, u: f64, v: f64, out: &mut [f64]) {
        let uc = u.clamp(0.0, (self.width - 1) as f64);
        let vc = v.clamp(0.0, (self.height - 1) as f64);
        let u0 = uc.floor() as usize;
        let v0 = vc.floor() as usize;
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = uc - u0 as f64;
        let fv = vc - v0 as f64;
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let top = self.at(c, u0, v0) * (1.0 - fu) + self.at(c, u1, v0) * fu;
            let bot = self.at(c, u0, v1) * (1.0 - fu) + self.at(c, u1, v1) * fu;
            *o = top * (1.0 - fv) + bot * fv;
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureFrame {
    pub features: FeatureImage,
    pub camera: Camera,
    pub t_w_cam: Pose,
}

/// Samples every frame's features at each voxel center and aggregates the
/// valid samples into per-channel mean (channels `0..F`) and population
/// standard deviation (channels `F..2F`).
pub fn lift_features(grid: &VoxelGrid, frames: &[FeatureFrame]) -> Result<FeatureVolume> {
    let first = frames.first().ok_or_else(|| Error::InvalidArgument("lifting needs at least one frame".into()))?;
    let f = first.features.channels;
    for fr in frames {
        if fr.features.channels != f {
            return Err(Error::MismatchedFeatureDims { expected: f, got: fr.features.channels });
        }
        if fr.features.width != fr.camera.width() || fr.features.height != fr.camera.height() {
            return Err(Error::ShapeMismatch(format!(
                "feature image {}x{} does not match camera {}x{}",
                fr.features.width,
                fr.features.height,
                fr.camera.width(),
                fr.camera.height()
            )));
        }
    }
    let world_to_cam: Vec<Pose> = frames.iter().map(|fr| fr.t_w_cam.inverse()).collect();
    let n = grid.num_voxels();

    let per_voxel: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let p = grid.pose.transform_point(&grid.local_center_flat(v));
            let mut samples: Vec<f64> = Vec::new();
            let mut buf = vec![0.0; f];
            let mut count = 0usize;
            for (fr, t_cw) in frames.iter().zip(&world_to_cam) {
                let pc = t_cw.transform_point(&p);
                if fr.camera.depth_of(&pc) <= 0.0 {
                    continue;
                }
                let px = fr.camera.project(&pc);
                if !px.valid {
                    continue;
                }
                fr.features.bilinear(px.u, px.v, &mut buf);
                samples.extend_from_slice(&buf);
                count += 1;
            }
            let mut out = vec![0.0; 2 * f];
            if count == 0 {
                return out;
            }
            for c in 0..f {
                let mean = (0..count).map(|s| samples[s * f + c]).sum::<f64>() / count as f64;
                out[c] = mean;
                if count >= 2 {
                    let var = (0..count).map(|s| (samples[s * f + c] - mean).powi(2)).sum::<f64>() / count as f64;
                    out[f + c] = var.sqrt();
                }
            }
            out
        })
        .collect();

    let mut values = vec![0.0; 2 * f * n];
    for (v, feats) in per_voxel.iter().enumerate() {
        for (c, x) in feats.iter().enumerate() {
            values[c * n + v] = *x;
        }
    }
    Ok(FeatureVolume { channels: 2 * f, dims: grid.dims, values })
}

/// Semi-dense points with the camera centers each was observed from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloudWithVisibility {
    pub points: Vec<Vec3>,
    /// Distinct observing camera centers.
    pub observers: Vec<Vec3>,
    /// For each point, indices into `observers`.
    pub visibility: Vec<Vec<u32>>,
}

impl PointCloudWithVisibility {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn observations(&self, i: usize) -> impl Iterator<Item = &Vec3> + '_ {
        self.visibility[i].iter().map(move |&o| &self.observers[o as usize])
    }

    pub fn validate(&self) -> Result<()> {
        if self.visibility.len() != self.points.len() {
            return Err(Error::ShapeMismatch("one visibility list per point required".into()));
        }
        for (i, vis) in self.visibility.iter().enumerate() {
            if vis.is_empty() {
                return Err(Error::InvalidArgument(format!("point {i} has no observations")));
            }
            if vis.iter().any(|&o| o as usize >= self.observers.len()) {
                return Err(Error::InvalidArgument(format!("point {i} references a missing observer")));
            }
        }
        Ok(())
    }

    pub fn transformed(&self, t: &Pose) -> Self {
        PointCloudWithVisibility {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            observers: self.observers.iter().map(|p| t.transform_point(p)).collect(),
            visibility: self.visibility.clone(),
        }
    }
}

/// Marks every voxel that contains at least one point.
pub fn rasterize_points(grid: &VoxelGrid, pc: &PointCloudWithVisibility) -> MaskVolume {
    let mut mask = MaskVolume::zeros(grid.dims);
    for p in &pc.points {
        if let Some((i, j, k)) = grid.containing_voxel(&grid.to_local(p)) {
            mask.values[grid.flat_index(i, j, k)] = 1;
        }
    }
    mask
}

/// Parameter interval of the segment `a + t (b - a)`, `t` in `[0, 1]`, that
/// lies inside the grid's bounding box (grid-frame coordinates).
fn clip_segment_to_grid(grid: &VoxelGrid, a: &Vec3, b: &Vec3) -> Option<(f64, f64)> {
    let half = Vec3::new(
        grid.dims[2] as f64 * grid.voxel_size / 2.0,
        grid.dims[1] as f64 * grid.voxel_size / 2.0,
        grid.dims[0] as f64 * grid.voxel_size / 2.0,
    );
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for ax in 0..3 {
        if d[ax].abs() < 1e-15 {
            if a[ax] < -half[ax] || a[ax] >= half[ax] {
                return None;
            }
            continue;
        }
        let mut lo = (-half[ax] - a[ax]) / d[ax];
        let mut hi = (half[ax] - a[ax]) / d[ax];
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Marks voxels crossed by the rays from each observing camera to its point.
///
/// Each ray is clipped to the grid and ends one voxel short of the point;
/// `samples` points are spaced evenly along what remains. Voxels holding a
/// point of the cloud are never marked free.
pub fn rasterize_freespace(grid: &VoxelGrid, pc: &PointCloudWithVisibility, samples: usize) -> Result<MaskVolume> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("freespace needs at least 2 samples per ray, got {samples}")));
    }
    let mut mask = MaskVolume::zeros(grid.dims);
    let locals: Vec<Vec3> = pc.points.iter().map(|p| grid.to_local(p)).collect();
    for (i, p) in locals.iter().enumerate() {
        for cam in pc.observations(i) {
            let c = grid.to_local(cam);
            let len = (p - c).norm();
            if len <= grid.voxel_size {
                continue;
            }
            let end = p - (p - c) * (grid.voxel_size / len);
            let Some((t0, t1)) = clip_segment_to_grid(grid, &c, &end) else { continue };
            for s in 0..samples {
                let t = t0 + (t1 - t0) * s as f64 / (samples - 1) as f64;
                let q = c + (end - c) * t;
                if let Some((a, b, k)) = grid.containing_voxel(&q) {
                    mask.values[grid.flat_index(a, b, k)] = 1;
                }
            }
        }
    }
    let points = rasterize_points(grid, pc);
    for (m, p) in mask.values.iter_mut().zip(&points.values) {
        if *p != 0 {
            *m = 0;
        }
    }
    Ok(mask)
}

/// Trilinear interpolation of a `D x H x W` volume at world points; `None`
/// marks points outside the region spanned by voxel centers.
pub fn trilinear_sample(vol: &[f64], grid: &VoxelGrid, pts_world: &[Vec3]) -> Result<Vec<Option<f64>>> {
    if vol.len() != grid.num_voxels() {
        return Err(Error::ShapeMismatch(format!("volume has {} values, grid has {} voxels", vol.len(), grid.num_voxels())));
    }
    Ok(pts_world
        .iter()
        .map(|p| grid.trilinear_weights(&grid.to_local(p)).map(|w| w.iter().map(|(idx, wt)| vol[*idx] * wt).sum()))
        .collect())
}
