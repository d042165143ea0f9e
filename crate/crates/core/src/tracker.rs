//! Sequence-level persistence of per-snippet box detections.
//!
//! Each step associates the incoming world-frame detections with the tracked
//! boxes by minimum-cost assignment, folds matched detections into their
//! tracks by running average, spawns tracks for confident leftovers, drops
//! tracks that never gathered enough observations and suppresses duplicates.

use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::geom::{pose_boxminus, se3_exp, wrap_angle};
use crate::obb::{iou2, iou3, project_bbox2, Box2, Obb3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Weights of the class, 2D center, 3D center, 2D IoU and 3D IoU costs.
    pub w: [f64; 5],
    pub p_inst: f64,
    pub p_assoc: f64,
    pub iou_gate: f64,
    pub n_min: u32,
    pub t_inst: f64,
    pub dedup_iou3: f64,
    pub dedup_iou2: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            w: [8.0, 0.0, 1.0, 2.0, 0.0],
            p_inst: 0.5,
            p_assoc: 0.45,
            iou_gate: 0.2,
            n_min: 2,
            t_inst: 1.0,
            dedup_iou3: 0.1,
            dedup_iou2: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("p_inst", self.p_inst),
            ("p_assoc", self.p_assoc),
            ("iou_gate", self.iou_gate),
            ("dedup_iou3", self.dedup_iou3),
            ("dedup_iou2", self.dedup_iou2),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.p_assoc > self.p_inst {
            return Err(Error::InvalidArgument(format!("p_assoc ({}) must not exceed p_inst ({})", self.p_assoc, self.p_inst)));
        }
        if self.w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("cost weights must be finite and >= 0, got {:?}", self.w)));
        }
        if self.n_min == 0 || !(self.t_inst >= 0.0 && self.t_inst.is_finite()) {
            return Err(Error::InvalidArgument("n_min must be >= 1 and t_inst finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub obb: Obb3,
    /// Number of detections folded into this track.
    pub n: u32,
    pub t_created: f64,
    pub t_last: f64,
}

impl TrackedObject {
    pub fn new(obb: Obb3, t: f64) -> Self {
        TrackedObject { obb, n: 1, t_created: t, t_last: t }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneState {
    pub tracks: Vec<TrackedObject>,
    pub time: f64,
}

impl SceneState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Boxes of every live track, candidates included.
    pub fn boxes(&self) -> Vec<Obb3> {
        self.tracks.iter().map(|t| t.obb.clone()).collect()
    }

    /// Tracks with at least `n_min` observations; these form the
    /// sequence-level scene. Younger candidates are still on probation.
    pub fn confirmed(&self, n_min: u32) -> impl Iterator<Item = &TrackedObject> + '_ {
        self.tracks.iter().filter(move |t| t.n >= n_min)
    }

    pub fn confirmed_boxes(&self, n_min: u32) -> Vec<Obb3> {
        self.confirmed(n_min).map(|t| t.obb.clone()).collect()
    }
}

/// The five unweighted association costs: class, 2D center distance (px),
/// 3D center distance (m), `1 - iou2`, `1 - iou3`.
///
/// Without a view, or when either box has no projection, both 2D terms
/// are 0.
pub fn assoc_terms(track: &TrackedObject, det: &Obb3, view: Option<&CameraView>) -> [f64; 5] {
    let cls = track.obb.label();
    let c_class = 1.0 - det.class_probs.get(cls).copied().unwrap_or(0.0);
    let c_bbox3 = (track.obb.center - det.center).norm();
    let c_iou3 = 1.0 - iou3(&track.obb, det);
    let (c_bbox2, c_iou2) = match projections(&track.obb, det, view) {
        Some((a, b)) => {
            let (ca, cb) = (a.center(), b.center());
            ((ca[0] - cb[0]).hypot(ca[1] - cb[1]), 1.0 - iou2(&a, &b))
        }
        None => (0.0, 0.0),
    };
    [c_class, c_bbox2, c_bbox3, c_iou2, c_iou3]
}

pub fn assoc_cost(track: &TrackedObject, det: &Obb3, view: Option<&CameraView>, w: &[f64; 5]) -> f64 {
    let terms = assoc_terms(track, det, view);
    w.iter().zip(&terms).map(|(w, c)| w * c).sum()
}

fn projections(a: &Obb3, b: &Obb3, view: Option<&CameraView>) -> Option<(Box2, Box2)> {
    let view = view?;
    let pa = project_bbox2(a, &view.camera, &view.t_w_cam)?;
    let pb = project_bbox2(b, &view.camera, &view.t_w_cam)?;
    Some((pa, pb))
}

/// Minimum-cost assignment of rows to columns (Kuhn-Munkres with row and
/// column potentials, O(n^2 m)). Returns `min(M, N)` `(row, col)` pairs
/// sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::ShapeMismatch("cost matrix rows differ in length".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("cost matrix must be finite".into()));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if rows <= cols {
        Ok(assign(rows, cols, |i, j| cost[i][j]))
    } else {
        let mut pairs: Vec<(usize, usize)> = assign(cols, rows, |i, j| cost[j][i]).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// Assignment for `n <= m`; indices are 1-based internally with slot 0 as
/// the virtual start column.
fn assign(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    out.sort_unstable();
    out
}

/// Folds one detection into a track by running average of dims, class
/// distribution, score and pose (on SE(3)).
///
/// A box turned by a half turn about z is the same box, so the detection's
/// yaw is first taken modulo pi to the branch closest to the track's. If the
/// relative rotation is still too close to a half turn for the log map, the
/// pose is left unchanged for this observation.
pub fn update_track(track: &TrackedObject, det: &Obb3, t: f64) -> TrackedObject {
    let n = track.n as f64;
    let n1 = n + 1.0;
    let mut obb = track.obb.clone();
    obb.dims = (obb.dims * n + det.dims) / n1;
    let classes = obb.class_probs.len().max(det.class_probs.len());
    obb.class_probs = (0..classes)
        .map(|k| {
            let c = track.obb.class_probs.get(k).copied().unwrap_or(0.0);
            let d = det.class_probs.get(k).copied().unwrap_or(0.0);
            (c * n + d) / n1
        })
        .collect();
    obb.score = (obb.score * n + det.score) / n1;

    let mut aligned = det.clone();
    if wrap_angle(det.yaw - track.obb.yaw).abs() > std::f64::consts::FRAC_PI_2 {
        aligned.yaw = wrap_angle(det.yaw + std::f64::consts::PI);
    }
    let pose = track.obb.pose();
    if let Ok(xi) = pose_boxminus(&pose, &aligned.pose()) {
        obb.set_pose(&pose.compose(&se3_exp(&xi.scaled(1.0 / n1))));
    }
    TrackedObject { obb, n: track.n + 1, t_created: track.t_created, t_last: t }
}

/// One association / update / spawn / removal / dedup cycle.
pub fn step(scene: &SceneState, dets: &[Obb3], t: f64, view: Option<&CameraView>, cfg: &TrackerConfig) -> Result<SceneState> {
    if !(t >= scene.time) {
        return Err(Error::NonMonotonicTime { scene_time: scene.time, step_time: t });
    }
    cfg.validate()?;
    let candidates: Vec<&Obb3> = dets.iter().filter(|d| d.score >= cfg.p_assoc).collect();
    let mut tracks = scene.tracks.clone();
    let mut matched = vec![false; candidates.len()];

    if !tracks.is_empty() && !candidates.is_empty() {
        let cost: Vec<Vec<f64>> = tracks.iter().map(|tr| candidates.iter().map(|d| assoc_cost(tr, d, view, &cfg.w)).collect()).collect();
        for (ti, di) in hungarian(&cost)? {
            let (tr, det) = (&tracks[ti], candidates[di]);
            let gate3 = iou3(&tr.obb, det) >= cfg.iou_gate;
            let gate2 = projections(&tr.obb, det, view).is_some_and(|(a, b)| iou2(&a, &b) >= cfg.iou_gate);
            if gate3 || gate2 {
                tracks[ti] = update_track(tr, det, t);
                matched[di] = true;
            }
        }
    }

    for (d, m) in candidates.iter().zip(&matched) {
        if !m && d.score >= cfg.p_inst {
            tracks.push(TrackedObject::new((*d).clone(), t));
        }
    }

    tracks.retain(|tr| !(t - tr.t_created > cfg.t_inst && tr.n < cfg.n_min));

    let tracks = dedup(tracks, view, cfg);
    Ok(SceneState { tracks, time: t })
}

/// Greedy duplicate suppression, best supported tracks first.
fn dedup(mut tracks: Vec<TrackedObject>, view: Option<&CameraView>, cfg: &TrackerConfig) -> Vec<TrackedObject> {
    tracks.sort_by(|a, b| b.n.cmp(&a.n).then(b.obb.score.partial_cmp(&a.obb.score).unwrap_or(std::cmp::Ordering::Equal)));
    let mut kept: Vec<TrackedObject> = Vec::with_capacity(tracks.len());
    for tr in tracks {
        if !kept.iter().any(|k| duplicates(&k.obb, &tr.obb, view, cfg)) {
            kept.push(tr);
        }
    }
    kept
}

fn duplicates(a: &Obb3, b: &Obb3, view: Option<&CameraView>, cfg: &TrackerConfig) -> bool {
    let i3 = iou3(a, b);
    if i3 > cfg.dedup_iou3 {
        return true;
    }
    // 2D overlap alone is not evidence of a duplicate for boxes that are
    // disjoint in space (one may sit behind the other).
    i3 > 0.0 && projections(a, b, view).is_some_and(|(pa, pb)| iou2(&pa, &pb) > cfg.dedup_iou2)
}
