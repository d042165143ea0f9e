//! Persisting surface observations in a global volume: projective TSDF
//! fusion of depth maps and running-mean fusion of local occupancy grids.
//! Meshes come out through [`marching_cubes`].

use rayon::prelude::*;

use crate::camera::{CameraView, DepthMap};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriangleMesh;
use crate::voxel::VoxelGrid;

pub use crate::mcubes::marching_cubes;

pub const DEFAULT_WEIGHT_CAP: u32 = 128;
pub const TSDF_ISO: f64 = 0.0;
pub const TSDF_MIN_OBS: u32 = 2;
pub const OCC_ISO: f64 = 0.5;
pub const OCC_MIN_OBS: u32 = 5;
/// Relative depth spread above which neighbouring pixels are treated as a
/// discontinuity during lookup.
pub const DEPTH_JUMP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub grid: VoxelGrid,
    pub truncation: f64,
    pub weight_cap: u32,
    /// Signed distance divided by `truncation`, in `[-1, 1]`.
    pub tsdf: Vec<f32>,
    pub weights: Vec<u32>,
}

impl TsdfVolume {
    /// Empty volume with truncation at three voxels.
    pub fn new(grid: VoxelGrid) -> Self {
        Self::with_truncation(grid, 3.0 * grid.voxel_size)
    }

    pub fn with_truncation(grid: VoxelGrid, truncation: f64) -> Self {
        let n = grid.num_voxels();
        TsdfVolume { grid, truncation, weight_cap: DEFAULT_WEIGHT_CAP, tsdf: vec![1.0; n], weights: vec![0; n] }
    }

    /// Folds one depth map into the volume.
    ///
    /// Every voxel center is projected into the camera and the depth map is
    /// sampled bilinearly (nearest across discontinuities); the signed
    /// distance along the viewing ray is clamped to the truncation band and
    /// averaged in. Voxels more than one truncation behind the observed
    /// surface are left alone.
    pub fn integrate(&mut self, depth: &DepthMap, view: &CameraView) -> Result<()> {
        let cam = &view.camera;
        if depth.width != cam.width() || depth.height != cam.height() {
            return Err(Error::ShapeMismatch(format!(
                "depth map {}x{} does not match camera {}x{}",
                depth.width,
                depth.height,
                cam.width(),
                cam.height()
            )));
        }
        let max_depth = depth.data.iter().fold(0.0f32, |m, d| m.max(*d)) as f64;
        if max_depth <= 0.0 {
            return Ok(());
        }
        let trunc = self.truncation;
        let cap = self.weight_cap;
        let grid = self.grid;
        let [_, h, w] = grid.dims;
        // voxel centers are affine in (i, j, k); step camera-frame positions
        let t_cam_vol = view.t_w_cam.inverse().compose(&grid.pose);
        let origin = t_cam_vol.transform_point(&grid.local_center(0, 0, 0));
        let step_k = t_cam_vol.transform_vector(&Vec3::new(grid.voxel_size, 0.0, 0.0));
        let step_j = t_cam_vol.transform_vector(&Vec3::new(0.0, grid.voxel_size, 0.0));
        let step_i = t_cam_vol.transform_vector(&Vec3::new(0.0, 0.0, grid.voxel_size));
        let slice = h * w;
        let cos_fov = (cam.max_view_angle() + 1e-3).min(std::f64::consts::PI).cos();

        self.tsdf.par_chunks_mut(slice).zip(self.weights.par_chunks_mut(slice)).enumerate().for_each(|(i, (tsdf, weights))| {
            for j in 0..h {
                let row = origin + step_i * i as f64 + step_j * j as f64;
                for k in 0..w {
                    let pc = row + step_k * k as f64;
                    let ray_depth = cam.depth_of(&pc);
                    if ray_depth <= 0.0 || ray_depth > max_depth + trunc {
                        continue;
                    }
                    if pc.z < cos_fov * pc.norm() {
                        continue;
                    }
                    let px = cam.project(&pc);
                    if !px.valid {
                        continue;
                    }
                    let Some(d) = depth.bilinear_guarded(px.u, px.v, DEPTH_JUMP) else { continue };
                    let sdf = d - ray_depth;
                    if sdf < -trunc {
                        continue;
                    }
                    let s = (sdf.min(trunc) / trunc) as f32;
                    let v = j * w + k;
                    let wt = weights[v];
                    tsdf[v] = ((tsdf[v] * wt as f32 + s) / (wt + 1) as f32).clamp(-1.0, 1.0);
                    weights[v] = (wt + 1).min(cap);
                }
            }
        });
        Ok(())
    }

    pub fn extract_mesh(&self, min_obs: u32) -> Result<TriangleMesh> {
        marching_cubes(&self.tsdf, &self.weights, &self.grid, TSDF_ISO, min_obs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVolume {
    pub grid: VoxelGrid,
    /// Mean occupancy probability.
    pub occ: Vec<f64>,
    pub counts: Vec<u32>,
}

impl OccupancyVolume {
    pub fn new(grid: VoxelGrid) -> Self {
        let n = grid.num_voxels();
        OccupancyVolume { grid, occ: vec![0.0; n], counts: vec![0; n] }
    }

    /// Samples a local occupancy grid at every global voxel center that falls
    /// inside the local interpolation region and folds the samples into the
    /// per-voxel running mean.
    pub fn integrate(&mut self, local_occ: &[f64], local_grid: &VoxelGrid) -> Result<()> {
        if local_occ.len() != local_grid.num_voxels() {
            return Err(Error::ShapeMismatch(format!(
                "local occupancy has {} values, grid has {} voxels",
                local_occ.len(),
                local_grid.num_voxels()
            )));
        }
        let global = self.grid;
        let outside = (0..8).any(|c| {
            let [d, h, w] = local_grid.dims;
            let corner = local_grid.voxel_center((c & 1) * (d - 1), (c >> 1 & 1) * (h - 1), (c >> 2 & 1) * (w - 1));
            global.containing_voxel(&global.to_local(&corner)).is_none()
        });
        if outside {
            log::warn!("local occupancy grid extends past the global volume; the excess is dropped");
        }
        let t_local_global = local_grid.pose.inverse().compose(&global.pose);
        let [_, h, w] = global.dims;
        let slice = h * w;
        self.occ.par_chunks_mut(slice).zip(self.counts.par_chunks_mut(slice)).enumerate().for_each(|(i, (occ, counts))| {
            for j in 0..h {
                for k in 0..w {
                    let p = t_local_global.transform_point(&global.local_center(i, j, k));
                    let Some(stencil) = local_grid.trilinear_weights(&p) else { continue };
                    let sample: f64 = stencil.iter().map(|(idx, wt)| local_occ[*idx] * wt).sum();
                    let v = j * w + k;
                    let n = counts[v] as f64;
                    occ[v] = ((occ[v] * n + sample) / (n + 1.0)).clamp(0.0, 1.0);
                    counts[v] += 1;
                }
            }
        });
        Ok(())
    }

    pub fn extract_mesh(&self, min_obs: u32) -> Result<TriangleMesh> {
        marching_cubes(&self.occ, &self.counts, &self.grid, OCC_ISO, min_obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, PinholeCamera};
    use crate::geom::{Pose, Rotation};
    use approx::assert_abs_diff_eq;

    fn pinhole_view() -> CameraView {
        CameraView::new(Camera::from(PinholeCamera::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap()), Pose::identity())
    }

    fn plane_depth(z: f32) -> DepthMap {
        DepthMap { width: 64, height: 64, data: vec![z; 64 * 64] }
    }

    fn column_grid() -> VoxelGrid {
        VoxelGrid::new(Pose::from_translation(Vec3::new(0.0, 0.0, 2.0)), [40, 4, 4], 0.025).unwrap()
    }

    #[test]
    fn plane_zero_crossing() {
        let mut vol = TsdfVolume::new(column_grid());
        vol.integrate(&plane_depth(2.0), &pinhole_view()).unwrap();
        let g = vol.grid;
        for (j, k) in [(1, 1), (1, 2), (2, 2)] {
            let mut crossing = None;
            for i in 0..39 {
                let (a, b) = (g.flat_index(i, j, k), g.flat_index(i + 1, j, k));
                if vol.weights[a] > 0 && vol.weights[b] > 0 && vol.tsdf[a] >= 0.0 && vol.tsdf[b] < 0.0 {
                    let (za, zb) = (g.voxel_center(i, j, k).z, g.voxel_center(i + 1, j, k).z);
                    let t = vol.tsdf[a] as f64 / (vol.tsdf[a] - vol.tsdf[b]) as f64;
                    crossing = Some(za + t * (zb - za));
                }
            }
            let z = crossing.expect("no zero crossing");
            assert!((z - 2.0).abs() <= g.voxel_size / 2.0, "{z}");
        }
        // far behind the surface stays unobserved
        assert_eq!(vol.weights[g.flat_index(0, 1, 1)], 1);
        assert_eq!(vol.weights[g.flat_index(39, 1, 1)], 0);
        assert!(vol.tsdf.iter().all(|t| t.abs() <= 1.0));
    }

    #[test]
    fn integrating_twice_is_stable_and_empty_is_noop() {
        let mut vol = TsdfVolume::new(column_grid());
        vol.integrate(&plane_depth(2.0), &pinhole_view()).unwrap();
        let once = vol.clone();
        vol.integrate(&plane_depth(2.0), &pinhole_view()).unwrap();
        for (a, b) in once.tsdf.iter().zip(&vol.tsdf) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        let before = vol.clone();
        vol.integrate(&plane_depth(0.0), &pinhole_view()).unwrap();
        assert_eq!(before, vol);
        assert!(vol.integrate(&DepthMap::new(3, 3), &pinhole_view()).is_err());
    }

    #[test]
    fn weights_are_capped_and_order_invariant() {
        let mut a = TsdfVolume::new(column_grid());
        a.weight_cap = 3;
        for _ in 0..5 {
            a.integrate(&plane_depth(2.0), &pinhole_view()).unwrap();
        }
        assert!(a.weights.iter().all(|w| *w <= 3));

        let maps = [plane_depth(1.98), plane_depth(2.0), plane_depth(2.03)];
        let mut fwd = TsdfVolume::new(column_grid());
        let mut rev = TsdfVolume::new(column_grid());
        for m in &maps {
            fwd.integrate(m, &pinhole_view()).unwrap();
        }
        for m in maps.iter().rev() {
            rev.integrate(m, &pinhole_view()).unwrap();
        }
        for (x, y) in fwd.tsdf.iter().zip(&rev.tsdf) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn fused_box_interior_mesh() {
        // camera inside a box room looking at the +z wall
        let mut vol = TsdfVolume::new(VoxelGrid::new(Pose::from_translation(Vec3::new(0.0, 0.0, 1.5)), [20, 20, 20], 0.05).unwrap());
        for _ in 0..2 {
            vol.integrate(&plane_depth(1.7), &pinhole_view()).unwrap();
        }
        let mesh = vol.extract_mesh(TSDF_MIN_OBS).unwrap();
        assert!(!mesh.is_empty());
        for p in &mesh.vertices {
            assert!((p.z - 1.7).abs() < 0.05, "{p}");
        }
    }

    fn occ_grid() -> VoxelGrid {
        VoxelGrid::new(Pose::identity(), [10, 10, 10], 0.1).unwrap()
    }

    #[test]
    fn occupancy_running_mean() {
        let local = VoxelGrid::new(Pose::new(Rotation::from_yaw(0.4), Vec3::new(0.05, 0.0, 0.0)), [5, 5, 5], 0.1).unwrap();
        let mut g = OccupancyVolume::new(occ_grid());
        g.integrate(&vec![0.8; 125], &local).unwrap();
        let touched: Vec<usize> = (0..g.counts.len()).filter(|&v| g.counts[v] > 0).collect();
        assert!(!touched.is_empty());
        for &v in &touched {
            assert_abs_diff_eq!(g.occ[v], 0.8, epsilon = 1e-12);
            assert_eq!(g.counts[v], 1);
        }
        g.integrate(&vec![0.8; 125], &local).unwrap();
        for &v in &touched {
            assert_abs_diff_eq!(g.occ[v], 0.8, epsilon = 1e-12);
        }
        let mut h = OccupancyVolume::new(occ_grid());
        h.integrate(&vec![0.2; 125], &local).unwrap();
        h.integrate(&vec![0.8; 125], &local).unwrap();
        for &v in &touched {
            assert_abs_diff_eq!(h.occ[v], 0.5, epsilon = 1e-12);
        }
        assert!(h.integrate(&[0.0; 3], &local).is_err());
    }

    #[test]
    fn occupancy_of_half_space_extracts_plane() {
        let local = VoxelGrid::new(Pose::identity(), [12, 12, 12], 0.1).unwrap();
        let occ: Vec<f64> = (0..local.num_voxels()).map(|v| if local.local_center_flat(v).x < 0.0 { 1.0 } else { 0.0 }).collect();
        let mut g = OccupancyVolume::new(occ_grid());
        for _ in 0..5 {
            g.integrate(&occ, &local).unwrap();
        }
        let mesh = g.extract_mesh(OCC_MIN_OBS).unwrap();
        assert!(!mesh.is_empty());
        for p in &mesh.vertices {
            assert!(p.x.abs() < 1e-9);
        }
    }
}
