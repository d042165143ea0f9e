//! Benchmark scoring: mesh-to-mesh surface metrics and box mAP.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::Bvh;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriangleMesh;
use crate::obb::{iou3, Obb3};

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_TAU: f64 = 0.05;

/// IoU thresholds `0.0, 0.05, ..., 0.5`.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 0.05).collect()
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|c| *c <= r).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let s = rng.random::<f64>().sqrt();
            let t = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t)
        })
        .collect())
}

/// Distance from each point to the closest triangle of `mesh`.
pub fn point_mesh_dist(points: &[Vec3], mesh: &TriangleMesh) -> Result<Vec<f64>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let bvh = Bvh::build(mesh);
    Ok(points.par_iter().map(|p| bvh.nearest(p).map_or(f64::INFINITY, |(d, _)| d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    /// Mean distance from predicted samples to the reference mesh.
    pub acc: f64,
    /// Mean distance from reference samples to the predicted mesh.
    pub comp: f64,
    pub prec: f64,
    pub recal: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fraction_below(v: &[f64], tau: f64) -> f64 {
    v.iter().filter(|d| **d < tau).count() as f64 / v.len() as f64
}

/// Accuracy and precision of points against a reference mesh, for
/// predictions that are point sets rather than meshes.
pub fn point_accuracy(points: &[Vec3], gt: &TriangleMesh, tau: f64) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to score".into()));
    }
    let d = point_mesh_dist(points, gt)?;
    Ok((mean(&d), fraction_below(&d, tau)))
}

/// Samples `n` points on each mesh and scores them against the other mesh.
/// Prediction samples use `seed`, reference samples `seed + 1`.
pub fn surface_metrics(pred: &TriangleMesh, gt: &TriangleMesh, n: usize, tau: f64, seed: u64) -> Result<SurfaceMetrics> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample per mesh".into()));
    }
    let p = sample_mesh(pred, n, seed)?;
    let p_star = sample_mesh(gt, n, seed.wrapping_add(1))?;
    let to_gt = point_mesh_dist(&p, gt)?;
    let to_pred = point_mesh_dist(&p_star, pred)?;
    Ok(SurfaceMetrics { acc: mean(&to_gt), comp: mean(&to_pred), prec: fraction_below(&to_gt, tau), recal: fraction_below(&to_pred, tau) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.01, ..., 1.
    Points101,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub map: f64,
    pub iou_thresholds: Vec<f64>,
    /// Per class with at least one GT box: AP at each threshold.
    pub per_class_ap: BTreeMap<usize, Vec<f64>>,
}

impl DetectionMetrics {
    /// mAP over classes at each threshold.
    pub fn ap_per_threshold(&self) -> Vec<f64> {
        (0..self.iou_thresholds.len())
            .map(|t| {
                if self.per_class_ap.is_empty() {
                    0.0
                } else {
                    self.per_class_ap.values().map(|ap| ap[t]).sum::<f64>() / self.per_class_ap.len() as f64
                }
            })
            .collect()
    }
}

/// Detection mAP: per class and IoU threshold, detections in descending
/// score order are greedily matched to the best-overlapping unmatched GT box
/// of their class. A threshold of exactly 0 requires IoU > 0.
pub fn average_precision(dets: &[Obb3], gts: &[Obb3], iou_thresholds: &[f64], interp: Interpolation) -> Result<DetectionMetrics> {
    if iou_thresholds.is_empty() || iou_thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("IoU thresholds must be non-empty and ascending".into()));
    }
    let classes: BTreeSet<usize> = gts.iter().map(|g| g.label()).collect();
    let mut per_class_ap = BTreeMap::new();
    for &c in &classes {
        let cls_gts: Vec<&Obb3> = gts.iter().filter(|g| g.label() == c).collect();
        let mut cls_dets: Vec<&Obb3> = dets.iter().filter(|d| d.label() == c).collect();
        cls_dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        let ious: Vec<Vec<f64>> = cls_dets.iter().map(|d| cls_gts.iter().map(|g| iou3(d, g)).collect()).collect();
        let aps = iou_thresholds
            .iter()
            .map(|&thr| {
                let tp = match_greedy(&ious, cls_gts.len(), thr);
                ap_from_matches(&tp, cls_gts.len(), interp)
            })
            .collect();
        per_class_ap.insert(c, aps);
    }
    let map = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().map(|aps: &Vec<f64>| mean(aps)).sum::<f64>() / per_class_ap.len() as f64
    };
    Ok(DetectionMetrics { map, iou_thresholds: iou_thresholds.to_vec(), per_class_ap })
}

/// True-positive flag per detection (already in score order).
fn match_greedy(ious: &[Vec<f64>], num_gt: usize, thr: f64) -> Vec<bool> {
    let mut taken = vec![false; num_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                let ok = if thr == 0.0 { iou > 0.0 } else { iou >= thr };
                if ok && !taken[g] && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

fn ap_from_matches(tp: &[bool], num_gt: usize, interp: Interpolation) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    // monotone envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match interp {
        Interpolation::AllPoints => {
            let mut ap = 0.0;
            let mut prev_r = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                ap += (r - prev_r) * p;
                prev_r = *r;
            }
            ap
        }
        Interpolation::Points101 => {
            (0..=100)
                .map(|k| {
                    let r = k as f64 / 100.0;
                    recall.iter().position(|x| *x >= r - 1e-12).map_or(0.0, |i| precision[i])
                })
                .sum::<f64>()
                / 101.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvh::brute_force_nearest;
    use crate::geom::{se3_exp, Tangent};
    use approx::assert_abs_diff_eq;

    fn square(z: f64, x0: f64, x1: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::new(x0, 0.0, z), Vec3::new(x1, 0.0, z), Vec3::new(x1, 1.0, z), Vec3::new(x0, 1.0, z)],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    #[test]
    fn samples_lie_on_triangle_and_repeat() {
        let m = TriangleMesh::new(vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)], vec![[0, 1, 2]]);
        let pts = sample_mesh(&m, 1000, 3).unwrap();
        for p in &pts {
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x / 2.0 + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
        assert_eq!(pts, sample_mesh(&m, 1000, 3).unwrap());
        assert_ne!(pts, sample_mesh(&m, 1000, 4).unwrap());
        assert!(matches!(sample_mesh(&TriangleMesh::default(), 10, 0), Err(Error::EmptyMesh)));
    }

    #[test]
    fn sampling_is_area_weighted() {
        let mut m = TriangleMesh::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)], vec![[0, 1, 2]]);
        m.append(&TriangleMesh::new(vec![Vec3::new(5.0, 0.0, 0.0), Vec3::new(8.0, 0.0, 0.0), Vec3::new(5.0, 2.0, 0.0)], vec![[0, 1, 2]]));
        let pts = sample_mesh(&m, 100_000, 1).unwrap();
        let first = pts.iter().filter(|p| p.x < 2.0).count() as f64 / 1e5;
        // binomial sd ~ 0.0014
        assert!((first - 0.25).abs() < 0.02 * 0.25 + 0.005, "{first}");
    }

    #[test]
    fn distances_match_brute_force() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = TriangleMesh::default();
        for i in 0..500 {
            let c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            for _ in 0..3 {
                m.vertices.push(c + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)));
            }
            m.faces.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        let pts: Vec<Vec3> =
            (0..1000).map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let d = point_mesh_dist(&pts, &m).unwrap();
        for (p, d) in pts.iter().zip(&d) {
            assert!((d - brute_force_nearest(&m, p).unwrap().0).abs() <= 1e-9);
        }
        let sq = square(0.0, 0.0, 1.0);
        assert_eq!(point_mesh_dist(&[Vec3::new(0.5, 0.25, 0.0)], &sq).unwrap()[0], 0.0);
        assert_abs_diff_eq!(point_mesh_dist(&[Vec3::new(0.5, 0.25, 0.3)], &sq).unwrap()[0], 0.3, epsilon = 1e-15);
        assert!(point_mesh_dist(&pts, &TriangleMesh::default()).is_err());
    }

    #[test]
    fn surface_identity_and_offsets() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 0.5));
        let s = surface_metrics(&m, &m, 2000, DEFAULT_TAU, 0).unwrap();
        assert!(s.acc < 1e-12 && s.comp < 1e-12);
        assert_eq!((s.prec, s.recal), (1.0, 1.0));

        let big = square(0.0, 0.0, 1.0);
        let shifted = square(0.03, 0.0, 1.0);
        let s = surface_metrics(&shifted, &big, 5000, DEFAULT_TAU, 0).unwrap();
        assert_abs_diff_eq!(s.acc, 0.03, epsilon = 1e-9);
        assert_abs_diff_eq!(s.comp, 0.03, epsilon = 1e-9);
        assert_eq!((s.prec, s.recal), (1.0, 1.0));

        let half = square(0.0, 0.0, 0.5);
        let s = surface_metrics(&half, &big, 10_000, DEFAULT_TAU, 0).unwrap();
        assert_eq!(s.prec, 1.0);
        assert!((s.recal - 0.55).abs() < 0.02, "{}", s.recal); // points within 5 cm of the cut count too
    }

    #[test]
    fn accuracy_is_rigid_invariant() {
        let a = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let b = TriangleMesh::cuboid(Vec3::new(0.1, 0.0, 0.05), Vec3::new(1.2, 0.9, 1.0));
        let t = se3_exp(&Tangent::new(Vec3::new(0.4, -0.3, 1.1), Vec3::new(3.0, 1.0, -2.0)));
        let s0 = surface_metrics(&a, &b, 3000, 0.05, 7).unwrap();
        let s1 = surface_metrics(&a.transformed(&t), &b.transformed(&t), 3000, 0.05, 7).unwrap();
        assert_abs_diff_eq!(s0.acc, s1.acc, epsilon = 1e-9);
        assert_abs_diff_eq!(s0.comp, s1.comp, epsilon = 1e-9);
    }

    fn obb(x: f64, class: usize, score: f64) -> Obb3 {
        Obb3::with_class(Vec3::new(x, 0.0, 0.0), 0.0, Vec3::new(1.0, 1.0, 1.0), class, 3, score).unwrap()
    }

    #[test]
    fn ap_hand_traces() {
        let thr = default_iou_thresholds();
        assert_eq!(thr.len(), 11);
        let gts = vec![obb(0.0, 0, 1.0), obb(5.0, 1, 1.0)];
        let m = average_precision(&gts, &gts, &thr, Interpolation::AllPoints).unwrap();
        assert_eq!(m.map, 1.0);
        let m = average_precision(&[], &gts, &thr, Interpolation::AllPoints).unwrap();
        assert_eq!(m.map, 0.0);

        let one = vec![obb(0.0, 0, 1.0)];
        let dets = vec![obb(0.0, 0, 0.9), obb(10.0, 0, 0.8)];
        let m = average_precision(&dets, &one, &thr, Interpolation::AllPoints).unwrap();
        assert_eq!(m.map, 1.0);
        // reversed scores: precision 0.5 at full recall
        let dets = vec![obb(0.0, 0, 0.8), obb(10.0, 0, 0.9)];
        let m = average_precision(&dets, &one, &thr, Interpolation::AllPoints).unwrap();
        assert_eq!(m.map, 0.5);
        // disjoint boxes never match, even at threshold 0
        let m = average_precision(&[obb(1.5, 0, 1.0)], &one, &[0.0], Interpolation::AllPoints).unwrap();
        assert_eq!(m.map, 0.0);
        assert!(average_precision(&dets, &one, &[0.5, 0.1], Interpolation::AllPoints).is_err());
    }

    #[test]
    fn ap_non_increasing_in_threshold() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gts: Vec<Obb3> = (0..10).map(|i| obb(3.0 * i as f64, i % 3, 1.0)).collect();
        let dets: Vec<Obb3> = gts
            .iter()
            .map(|g| {
                let mut d = g.clone();
                d.center.x += rng.random_range(-0.6..0.6);
                d.score = rng.random_range(0.0..1.0);
                d
            })
            .collect();
        let thr = default_iou_thresholds();
        for interp in [Interpolation::AllPoints, Interpolation::Points101] {
            let m = average_precision(&dets, &gts, &thr, interp).unwrap();
            for aps in m.per_class_ap.values() {
                assert!(aps.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{aps:?}");
            }
            assert_abs_diff_eq!(m.map, mean(&m.ap_per_threshold()), epsilon = 1e-12);
        }
    }
}
