//! Pinhole and Kannala-Brandt fisheye camera models.
//!
//! Pixel coordinates put the center of pixel `(i, j)` at `(i, j)`. Depth
//! follows the usual convention of each model: pinhole depth is the z
//! coordinate in the camera frame, fisheye depth is the Euclidean distance
//! from the optical center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};

const NEWTON_ITERS: usize = 20;
const NEWTON_TOL: f64 = 1e-10;
/// Upper bound on the half field of view of a rectified pinhole camera.
const MAX_LINEAR_HALF_FOV_DEG: f64 = 85.0;

pub const SCANNET_FOCAL: f64 = 577.87;
pub const SCANNET_WIDTH: usize = 640;
pub const SCANNET_HEIGHT: usize = 480;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub valid: bool,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Pixel { u, v, valid: true }
    }

    pub fn invalid() -> Self {
        Pixel { u: f64::NAN, v: f64::NAN, valid: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = PinholeCamera { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidArgument(format!("pinhole focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera image must be at least 1x1".into()));
        }
        Ok(())
    }

    /// The 640x480 linear camera commonly used for ScanNet-trained models.
    pub fn scannet() -> Self {
        PinholeCamera {
            fx: SCANNET_FOCAL,
            fy: SCANNET_FOCAL,
            cx: SCANNET_WIDTH as f64 / 2.0,
            cy: SCANNET_HEIGHT as f64 / 2.0,
            width: SCANNET_WIDTH,
            height: SCANNET_HEIGHT,
        }
    }

    pub fn project(&self, p: &Vec3) -> Pixel {
        if p.z <= 1e-6 {
            return Pixel::invalid();
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Pixel { u, v, valid: in_bounds(u, v, self.width, self.height) }
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Diagonal half field of view in radians.
    pub fn diagonal_half_fov(&self) -> f64 {
        let du = (self.width as f64 / 2.0) / self.fx;
        let dv = (self.height as f64 / 2.0) / self.fy;
        du.hypot(dv).atan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheyeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Kannala-Brandt radial coefficients `k1..k4`.
    pub k: [f64; 4],
    pub width: usize,
    pub height: usize,
    /// Pixels farther than this from the principal point are invalid.
    pub valid_radius: f64,
}

impl FisheyeCamera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, k: [f64; 4], width: usize, height: usize, valid_radius: f64) -> Result<Self> {
        let cam = FisheyeCamera { fx, fy, cx, cy, k, width, height, valid_radius };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidArgument(format!("fisheye focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera image must be at least 1x1".into()));
        }
        if !(self.valid_radius > 0.0) {
            return Err(Error::InvalidArgument(format!("valid radius must be positive, got {}", self.valid_radius)));
        }
        let corner = (self.cx.max(self.width as f64 - self.cx)).hypot(self.cy.max(self.height as f64 - self.cy));
        if self.valid_radius > corner + 1.0 {
            return Err(Error::InvalidArgument(format!("valid radius {} exceeds the image corner distance {corner}", self.valid_radius)));
        }
        Ok(())
    }

    /// Distorted radius `r(theta)` in normalized units.
    pub fn radius(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        let [k1, k2, k3, k4] = self.k;
        theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))
    }

    fn radius_derivative(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        let [k1, k2, k3, k4] = self.k;
        1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)))
    }

    /// Solves `r(theta) = r` by damped Newton iteration.
    pub fn theta_from_radius(&self, r: f64) -> Result<f64> {
        let mut theta = r;
        let mut residual = self.radius(theta) - r;
        for _ in 0..NEWTON_ITERS {
            if residual.abs() < NEWTON_TOL {
                return Ok(theta);
            }
            let slope = self.radius_derivative(theta);
            if !(slope > 0.0) {
                break;
            }
            let step = residual / slope;
            let mut damping = 1.0;
            loop {
                let cand = theta - damping * step;
                let cand_res = self.radius(cand) - r;
                if cand_res.abs() < residual.abs() || damping < 1e-4 {
                    theta = cand;
                    residual = cand_res;
                    break;
                }
                damping *= 0.5;
            }
        }
        if residual.abs() < NEWTON_TOL {
            Ok(theta)
        } else {
            Err(Error::NoConvergence { radius: r })
        }
    }

    pub fn project(&self, p: &Vec3) -> Pixel {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let (u, v) = if rho < 1e-12 {
            if p.z <= 0.0 {
                return Pixel::invalid();
            }
            (self.cx, self.cy)
        } else {
            let theta = rho.atan2(p.z);
            let scale = self.radius(theta) / rho;
            (self.fx * scale * p.x + self.cx, self.fy * scale * p.y + self.cy)
        };
        let (du, dv) = (u - self.cx, v - self.cy);
        let within = du * du + dv * dv <= self.valid_radius * self.valid_radius;
        Pixel { u, v, valid: within && in_bounds(u, v, self.width, self.height) }
    }

    /// Unit viewing ray through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Result<Vec3> {
        let mx = (u - self.cx) / self.fx;
        let my = (v - self.cy) / self.fy;
        let r = mx.hypot(my);
        if r < 1e-15 {
            return Ok(Vec3::z());
        }
        let theta = self.theta_from_radius(r)?;
        let s = theta.sin() / r;
        Ok(Vec3::new(s * mx, s * my, theta.cos()))
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vec3> {
        Ok(self.ray(u, v)? * depth)
    }
}

#[inline]
fn in_bounds(u: f64, v: f64, width: usize, height: usize) -> bool {
    u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Camera {
    Pinhole(PinholeCamera),
    Fisheye(FisheyeCamera),
}

impl From<PinholeCamera> for Camera {
    fn from(c: PinholeCamera) -> Self {
        Camera::Pinhole(c)
    }
}

impl From<FisheyeCamera> for Camera {
    fn from(c: FisheyeCamera) -> Self {
        Camera::Fisheye(c)
    }
}

impl Camera {
    pub fn width(&self) -> usize {
        match self {
            Camera::Pinhole(c) => c.width,
            Camera::Fisheye(c) => c.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Camera::Pinhole(c) => c.height,
            Camera::Fisheye(c) => c.height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Camera::Pinhole(c) => c.validate(),
            Camera::Fisheye(c) => c.validate(),
        }
    }

    pub fn project(&self, p: &Vec3) -> Pixel {
        match self {
            Camera::Pinhole(c) => c.project(p),
            Camera::Fisheye(c) => c.project(p),
        }
    }

    /// Inverse of [`Camera::project`] using this model's depth convention.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vec3> {
        match self {
            Camera::Pinhole(c) => Ok(c.unproject(u, v, depth)),
            Camera::Fisheye(c) => c.unproject(u, v, depth),
        }
    }

    /// Depth of a camera-frame point under this model's convention.
    pub fn depth_of(&self, p: &Vec3) -> f64 {
        match self {
            Camera::Pinhole(_) => p.z,
            Camera::Fisheye(_) => p.norm(),
        }
    }

    /// Upper bound on the angle between the optical axis and the ray of any
    /// valid pixel. Points outside this cone never project validly.
    pub fn max_view_angle(&self) -> f64 {
        match self {
            Camera::Pinhole(c) => {
                let du = (c.cx + 1.0).max(c.width as f64 - c.cx + 1.0) / c.fx;
                let dv = (c.cy + 1.0).max(c.height as f64 - c.cy + 1.0) / c.fy;
                du.hypot(dv).atan()
            }
            Camera::Fisheye(c) => {
                let du = (c.cx + 1.0).max(c.width as f64 - c.cx + 1.0);
                let dv = (c.cy + 1.0).max(c.height as f64 - c.cy + 1.0);
                let r = du.hypot(dv).min(c.valid_radius + 1.0) / c.fx.min(c.fy);
                c.theta_from_radius(r).unwrap_or(std::f64::consts::PI).min(std::f64::consts::PI)
            }
        }
    }

    /// Ray through the pixel scaled so that [`Camera::depth_of`] the ray is 1.
    pub fn depth_ray(&self, u: f64, v: f64) -> Result<Vec3> {
        match self {
            Camera::Pinhole(c) => Ok(c.unproject(u, v, 1.0)),
            Camera::Fisheye(c) => c.ray(u, v),
        }
    }
}

/// A camera together with its camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub camera: Camera,
    pub t_w_cam: Pose,
}

impl CameraView {
    pub fn new(camera: Camera, t_w_cam: Pose) -> Self {
        CameraView { camera, t_w_cam }
    }
}

/// Largest pinhole camera of the requested size whose diagonal field of view
/// matches the fisheye's coverage at its valid radius.
pub fn max_linear(fe: &FisheyeCamera, width: usize, height: usize) -> Result<PinholeCamera> {
    fe.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("target size must be at least 1x1".into()));
    }
    let theta = fe.theta_from_radius(fe.valid_radius / fe.fx)?;
    let half_fov = theta.min(MAX_LINEAR_HALF_FOV_DEG.to_radians());
    let diag_half = (width as f64).hypot(height as f64) / 2.0;
    let f = diag_half / half_fov.tan();
    PinholeCamera::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
}

/// Per-pixel fisheye source coordinates for a linear target camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, one entry per target pixel.
    pub coords: Vec<Pixel>,
}

impl RectifyMap {
    pub fn get(&self, u: usize, v: usize) -> Pixel {
        self.coords[v * self.width + u]
    }
}

pub fn rectify_map(src: &Camera, lin: &PinholeCamera) -> RectifyMap {
    let mut coords = Vec::with_capacity(lin.width * lin.height);
    for v in 0..lin.height {
        for u in 0..lin.width {
            let ray = lin.unproject(u as f64, v as f64, 1.0);
            coords.push(src.project(&ray));
        }
    }
    RectifyMap { width: lin.width, height: lin.height, coords }
}

/// Single-channel depth image; `0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, d: f32) {
        self.data[v * self.width + u] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    /// Nearest-pixel lookup; `None` when outside the image or invalid.
    pub fn nearest(&self, u: f64, v: f64) -> Option<f64> {
        let (ui, vi) = (u.round(), v.round());
        if ui < 0.0 || vi < 0.0 || ui >= self.width as f64 || vi >= self.height as f64 {
            return None;
        }
        let d = self.get(ui as usize, vi as usize);
        (d > 0.0).then_some(d as f64)
    }

    /// Bilinear lookup when all four neighbours are valid and agree to within
    /// `max_rel_jump` of the smallest, nearest otherwise. Keeps interpolation
    /// from bridging depth discontinuities.
    pub fn bilinear_guarded(&self, u: f64, v: f64, max_rel_jump: f64) -> Option<f64> {
        if u < 0.0 || v < 0.0 || u > (self.width - 1) as f64 || v > (self.height - 1) as f64 {
            return self.nearest(u, v);
        }
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(self.width - 1), (v0 + 1).min(self.height - 1));
        let s = [self.get(u0, v0), self.get(u1, v0), self.get(u0, v1), self.get(u1, v1)];
        let lo = s.iter().fold(f32::INFINITY, |m, d| m.min(*d));
        let hi = s.iter().fold(0.0f32, |m, d| m.max(*d));
        if lo > 0.0 && ((hi - lo) as f64) <= max_rel_jump * lo as f64 {
            let (fu, fv) = (u - u0 as f64, v - v0 as f64);
            let top = s[0] as f64 * (1.0 - fu) + s[1] as f64 * fu;
            let bot = s[2] as f64 * (1.0 - fu) + s[3] as f64 * fu;
            Some(top * (1.0 - fv) + bot * fv)
        } else {
            self.nearest(u, v)
        }
    }

    /// Bilinear lookup when all four neighbours are valid, nearest otherwise.
    pub fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        if u < 0.0 || v < 0.0 || u > (self.width - 1) as f64 || v > (self.height - 1) as f64 {
            return self.nearest(u, v);
        }
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(self.width - 1), (v0 + 1).min(self.height - 1));
        let (fu, fv) = (u - u0 as f64, v - v0 as f64);
        let s = [self.get(u0, v0), self.get(u1, v0), self.get(u0, v1), self.get(u1, v1)];
        if s.iter().all(|d| *d > 0.0) {
            let top = s[0] as f64 * (1.0 - fu) + s[1] as f64 * fu;
            let bot = s[2] as f64 * (1.0 - fu) + s[3] as f64 * fu;
            Some(top * (1.0 - fv) + bot * fv)
        } else {
            self.nearest(u, v)
        }
    }
}

/// Resamples a depth map from `src` into the linear camera `lin` using a
/// precomputed map, converting to z-depth.
pub fn remap_depth(map: &RectifyMap, src_cam: &Camera, src: &DepthMap, lin: &PinholeCamera) -> DepthMap {
    let mut out = DepthMap::new(lin.width, lin.height);
    for v in 0..lin.height {
        for u in 0..lin.width {
            let px = map.get(u, v);
            if !px.valid {
                continue;
            }
            let Some(d) = src.bilinear(px.u, px.v) else { continue };
            let ray = lin.unproject(u as f64, v as f64, 1.0);
            // src depth is along the same ray; convert to the pinhole convention
            let z = match src_cam {
                Camera::Fisheye(_) => d / ray.norm(),
                Camera::Pinhole(_) => d,
            };
            out.set(u, v, z as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn fisheye() -> FisheyeCamera {
        FisheyeCamera::new(150.0, 150.0, 160.0, 160.0, [0.02, -0.005, 0.001, -0.0002], 320, 320, 155.0).unwrap()
    }

    fn pinhole() -> PinholeCamera {
        PinholeCamera::new(150.0, 150.0, 120.0, 120.0, 240, 240).unwrap()
    }

    #[test]
    fn pinhole_optical_axis() {
        let px = pinhole().project(&Vec3::new(0.0, 0.0, 1.0));
        assert!(px.valid);
        assert_eq!((px.u, px.v), (120.0, 120.0));
        assert!(!pinhole().project(&Vec3::new(0.0, 0.0, -1.0)).valid);
        assert!(!pinhole().project(&Vec3::new(10.0, 0.0, 1.0)).valid);
    }

    #[test]
    fn pinhole_unproject_center() {
        let p = pinhole().unproject(120.0, 120.0, 2.0);
        assert_eq!(p, Vec3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn equidistant_center_and_45_degrees() {
        let cam = FisheyeCamera::new(100.0, 100.0, 160.0, 160.0, [0.0; 4], 320, 320, 159.0).unwrap();
        let px = cam.project(&Vec3::new(0.0, 0.0, 1.0));
        assert!(px.valid);
        assert_eq!((px.u, px.v), (160.0, 160.0));

        let p = cam.unproject(160.0 + 100.0 * FRAC_PI_4, 160.0, 1.0).unwrap();
        assert_abs_diff_eq!(p, Vec3::new(FRAC_PI_4.sin(), 0.0, FRAC_PI_4.cos()), epsilon = 1e-12);
    }

    #[test]
    fn fisheye_sees_beyond_ninety_degrees() {
        let cam = FisheyeCamera::new(90.0, 90.0, 160.0, 160.0, [0.0; 4], 320, 320, 158.0).unwrap();
        // theta = 100 deg -> r = 1.745 * 90 = 157 px, inside the valid radius
        let theta = 100f64.to_radians();
        let px = cam.project(&Vec3::new(theta.sin(), 0.0, theta.cos()));
        assert!(px.valid);
        let ray = cam.ray(px.u, px.v).unwrap();
        assert_abs_diff_eq!(ray, Vec3::new(theta.sin(), 0.0, theta.cos()), epsilon = 1e-9);
    }

    #[test]
    fn fisheye_round_trip_random() {
        let cam = fisheye();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut n = 0;
        while n < 1000 {
            let p = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.1..3.0));
            let px = cam.project(&p);
            if !px.valid {
                continue;
            }
            n += 1;
            let q = cam.unproject(px.u, px.v, p.norm()).unwrap();
            assert_abs_diff_eq!(q.normalize(), p.normalize(), epsilon = 1e-6);
            let back = cam.project(&q);
            assert!((back.u - px.u).abs() < 1e-6 && (back.v - px.v).abs() < 1e-6);
        }
    }

    #[test]
    fn pixel_round_trip_both_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for cam in [Camera::from(fisheye()), Camera::from(pinhole())] {
            let mut n = 0;
            while n < 1000 {
                let (u, v) = (rng.random_range(0.0..cam.width() as f64), rng.random_range(0.0..cam.height() as f64));
                let p = cam.unproject(u, v, rng.random_range(0.5..5.0)).unwrap();
                let px = cam.project(&p);
                if let Camera::Fisheye(f) = cam {
                    if (u - f.cx).hypot(v - f.cy) > f.valid_radius {
                        assert!(!px.valid);
                        continue;
                    }
                }
                assert!(px.valid);
                assert!((px.u - u).abs() < 1e-6 && (px.v - v).abs() < 1e-6);
                n += 1;
            }
        }
    }

    #[test]
    fn fisheye_radius_is_monotone_for_small_k() {
        let cam = fisheye();
        let theta_max = cam.theta_from_radius(cam.valid_radius / cam.fx).unwrap();
        let mut prev = -1.0;
        for i in 0..=1000 {
            let r = cam.radius(theta_max * i as f64 / 1000.0);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn newton_reports_non_convergence() {
        // strongly negative k1 folds the polynomial back before r = 3
        let cam = FisheyeCamera { k: [-1.0, 0.0, 0.0, 0.0], ..fisheye() };
        assert!(matches!(cam.theta_from_radius(3.0), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn max_linear_at_45_degrees() {
        let cam = FisheyeCamera::new(200.0, 200.0, 160.0, 160.0, [0.0; 4], 320, 320, 200.0 * FRAC_PI_4).unwrap();
        let lin = max_linear(&cam, 240, 240).unwrap();
        let diag_half = 240.0 * 2f64.sqrt() / 2.0;
        assert_abs_diff_eq!(lin.fx, diag_half, epsilon = 1e-9);
        assert_abs_diff_eq!(lin.fy, diag_half, epsilon = 1e-9);
    }

    #[test]
    fn max_linear_caps_wide_fisheye() {
        // valid radius at 90 deg half-FoV: fx = diag_half / tan(85 deg)
        let cam = FisheyeCamera::new(100.0, 100.0, 160.0, 160.0, [0.0; 4], 320, 320, 100.0 * FRAC_PI_2).unwrap();
        let lin = max_linear(&cam, 240, 240).unwrap();
        let diag_half = 240.0 * 2f64.sqrt() / 2.0;
        assert_abs_diff_eq!(lin.fx, diag_half / 85f64.to_radians().tan(), epsilon = 1e-9);
        assert!(lin.validate().is_ok());
        assert!(lin.diagonal_half_fov() <= FRAC_PI_2);
    }

    #[test]
    fn max_linear_never_exceeds_fisheye_fov() {
        let cam = fisheye();
        let theta = cam.theta_from_radius(cam.valid_radius / cam.fx).unwrap();
        for (w, h) in [(240, 240), (640, 480), (100, 300)] {
            let lin = max_linear(&cam, w, h).unwrap();
            assert!(lin.diagonal_half_fov() <= theta + 1e-12);
        }
    }

    #[test]
    fn rectify_identity_and_center() {
        let lin = pinhole();
        let map = rectify_map(&Camera::from(lin), &lin);
        for v in 0..lin.height {
            for u in 0..lin.width {
                let px = map.get(u, v);
                assert!(px.valid);
                assert_abs_diff_eq!(px.u, u as f64, epsilon = 1e-9);
                assert_abs_diff_eq!(px.v, v as f64, epsilon = 1e-9);
            }
        }
        let fe = fisheye();
        let lin = max_linear(&fe, 240, 240).unwrap();
        let map = rectify_map(&Camera::from(fe), &lin);
        let c = map.get(120, 120);
        assert!(c.valid);
        assert_abs_diff_eq!(c.u, fe.cx, epsilon = 1e-9);
        assert_abs_diff_eq!(c.v, fe.cy, epsilon = 1e-9);
    }

    #[test]
    fn rectify_flags_pixels_beyond_valid_radius() {
        let fe = FisheyeCamera::new(100.0, 100.0, 160.0, 160.0, [0.0; 4], 320, 320, 60.0).unwrap();
        let lin = PinholeCamera::new(50.0, 50.0, 120.0, 120.0, 240, 240).unwrap();
        let map = rectify_map(&Camera::from(fe), &lin);
        assert!(!map.get(0, 0).valid);
        assert!(map.get(120, 120).valid);
    }
}
