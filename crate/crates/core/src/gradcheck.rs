//! Central finite-difference checks of every analytic loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{CameraView, DepthMap, PinholeCamera};
use crate::error::Result;
use crate::geom::{Pose, Vec3};
use crate::losses::{
    detection_loss, detection_loss_grad, encode_targets, focal_grad, focal_loss, occupancy_loss, occupancy_loss_grad, tv_loss,
    tv_loss_grad, FocalParams, LossWeights,
};
use crate::obb::{DetectionGrid, Obb3, NUM_BOX_PARAMS};
use crate::voxel::VoxelGrid;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckResult {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`; the floor keeps gradients that are
/// zero up to round-off from dominating.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Sixth-order stencil, for losses whose smoothed kinks make the
/// low-order truncation error visible at any h above round-off.
fn central6<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    let d1 = f(x + h) - f(x - h);
    let d2 = f(x + 2.0 * h) - f(x - 2.0 * h);
    let d3 = f(x + 3.0 * h) - f(x - 3.0 * h);
    (45.0 * d1 - 9.0 * d2 + d3) / (60.0 * h)
}

/// Runs all four checks at `points` random configurations each.
pub fn run(seed: u64, points: usize) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        check_focal(&mut rng, points),
        check_detection(&mut rng, points)?,
        check_occupancy(&mut rng, points)?,
        check_tv(&mut rng, points)?,
    ])
}

fn check_focal(rng: &mut ChaCha8Rng, points: usize) -> GradcheckResult {
    let fp = FocalParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let p = rng.random_range(0.01..0.99);
        let y = rng.random_range(0.0..=1.0);
        let num = central(|x| focal_loss(x, y, &fp), p, 1e-5);
        worst = worst.max(rel_err(focal_grad(p, y, &fp), num));
    }
    GradcheckResult { name: "focal_loss", points, max_rel_err: worst, tolerance: 1e-4 }
}

fn check_detection(rng: &mut ChaCha8Rng, points: usize) -> Result<GradcheckResult> {
    let fp = FocalParams::default();
    let grid = VoxelGrid::new(Pose::from_translation(Vec3::new(0.3, -0.2, 1.0)), [4, 4, 4], 0.5)?;
    let w = LossWeights::for_voxel_size(grid.voxel_size);
    let num_classes = 3;
    let n = grid.num_voxels();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let gts: Vec<Obb3> = (0..2)
            .map(|_| {
                let c = Vec3::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9));
                let d = Vec3::new(rng.random_range(0.3..1.2), rng.random_range(0.3..1.2), rng.random_range(0.3..1.2));
                Obb3::with_class(
                    grid.pose.transform_point(&c),
                    rng.random_range(-3.0..3.0),
                    d,
                    rng.random_range(0..num_classes),
                    num_classes,
                    1.0,
                )
            })
            .collect::<Result<_>>()?;
        let target = encode_targets(&gts, &grid, num_classes)?;
        let mut pred = target.clone();
        for c in pred.centerness.iter_mut() {
            *c = rng.random_range(0.05..0.95);
        }
        for l in pred.class_logits.iter_mut() {
            *l = rng.random_range(-2.0..2.0);
        }
        let positives: Vec<usize> = (0..n).filter(|&v| target.centerness[v] == 1.0).collect();
        for &v in &positives {
            let mut p = pred.box_params(v);
            for (i, x) in p.iter_mut().enumerate() {
                *x += match i {
                    0..=2 => rng.random_range(-0.1..0.1),
                    3..=5 => rng.random_range(-0.3..0.3),
                    _ => rng.random_range(-0.2..0.2),
                };
            }
            pred.set_box_params(v, &p);
        }
        let (_, grad) = detection_loss_grad(&pred, &target, &grid, &w, &fp)?;
        let loss_with = |g: &DetectionGrid| detection_loss(g, &target, &grid, &w, &fp).expect("shapes fixed");

        let mut probe = |get: &dyn Fn(&mut DetectionGrid) -> &mut f64, analytic: f64| {
            let mut g = pred.clone();
            let x0 = *get(&mut g);
            let num = central(
                |x| {
                    *get(&mut g) = x;
                    loss_with(&g)
                },
                x0,
                1e-5,
            );
            worst = worst.max(rel_err(analytic, num));
        };
        for &v in &positives {
            for c in 0..NUM_BOX_PARAMS {
                probe(&|g: &mut DetectionGrid| &mut g.params[c * n + v], grad.params[c * n + v]);
            }
            for c in 0..num_classes {
                probe(&|g: &mut DetectionGrid| &mut g.class_logits[c * n + v], grad.class_logits[c * n + v]);
            }
        }
        for _ in 0..4 {
            let v = rng.random_range(0..n);
            probe(&|g: &mut DetectionGrid| &mut g.centerness[v], grad.centerness[v]);
        }
    }
    Ok(GradcheckResult { name: "detection_loss", points, max_rel_err: worst, tolerance: 1e-3 })
}

fn check_occupancy(rng: &mut ChaCha8Rng, points: usize) -> Result<GradcheckResult> {
    let fp = FocalParams::default();
    let grid = VoxelGrid::new(Pose::from_translation(Vec3::new(0.0, 0.0, 2.0)), [8, 8, 8], 0.1)?;
    let w = LossWeights::for_voxel_size(grid.voxel_size);
    let view = CameraView::new(PinholeCamera::new(30.0, 30.0, 6.0, 6.0, 12, 12)?.into(), Pose::identity());
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let depth = DepthMap { width: 12, height: 12, data: (0..144).map(|_| rng.random_range(1.85f32..2.15)).collect() };
        let vol: Vec<f64> = (0..grid.num_voxels()).map(|_| rng.random_range(0.05..0.95)).collect();
        let seed = k as u64;
        let (_, grad) = occupancy_loss_grad(&vol, &grid, &depth, &view, &w, &fp, seed)?;
        let touched: Vec<usize> = (0..vol.len()).filter(|&i| grad[i] != 0.0).collect();
        for _ in 0..16 {
            let i = if touched.is_empty() || rng.random_bool(0.2) {
                rng.random_range(0..vol.len())
            } else {
                touched[rng.random_range(0..touched.len())]
            };
            let mut v = vol.clone();
            let num = central(
                |x| {
                    v[i] = x;
                    occupancy_loss(&v, &grid, &depth, &view, &w, &fp, seed).expect("samples exist")
                },
                vol[i],
                1e-6,
            );
            worst = worst.max(rel_err(grad[i], num));
        }
    }
    Ok(GradcheckResult { name: "occupancy_loss", points, max_rel_err: worst, tolerance: 1e-3 })
}

fn check_tv(rng: &mut ChaCha8Rng, points: usize) -> Result<GradcheckResult> {
    let dims = [4, 4, 4];
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let vol: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, grad) = tv_loss_grad(&vol, dims)?;
        for i in 0..vol.len() {
            let mut v = vol.clone();
            let num = central6(
                |x| {
                    v[i] = x;
                    tv_loss(&v, dims).expect("dims fixed")
                },
                vol[i],
                1e-5,
            );
            worst = worst.max(rel_err(grad[i], num));
        }
    }
    Ok(GradcheckResult { name: "tv_loss", points, max_rel_err: worst, tolerance: 1e-4 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        for r in run(1, 10).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
