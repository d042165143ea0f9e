//! Python bindings for the persistence and evaluation parts of egobench:
//! the box tracker, TSDF and occupancy fusion volumes, marching cubes, and
//! the surface and detection metrics.
//!
//! Numeric inputs are array-likes (converted to contiguous float64 /
//! float32 / int64 arrays); boxes, cameras and tracker settings are plain
//! dicts with the same fields as the JSON file formats.

use std::path::PathBuf;

use numpy::ndarray::{ArrayViewD, IxDyn};
use numpy::prelude::*;
use numpy::{AllowTypeChange, Element, PyArray1, PyArray2, PyArrayDyn, PyArrayLikeDyn};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use egobench::camera::{Camera, CameraView, DepthMap};
use egobench::fusion::{self, OCC_MIN_OBS, TSDF_MIN_OBS};
use egobench::geom::{Mat3, Pose, Rotation, Vec3};
use egobench::io::{self, ObbRecord, FORMAT_VERSION};
use egobench::mesh::TriangleMesh;
use egobench::metrics::{self, Interpolation, DEFAULT_SAMPLES, DEFAULT_TAU};
use egobench::obb::Obb3;
use egobench::pipeline::{self, ObbReport};
use egobench::tracker::{self, SceneState, TrackerConfig};
use egobench::voxel::VoxelGrid;
use egobench::Error;

create_exception!(_native, EgobenchError, PyException, "Error raised by the egobench core.");
create_exception!(_native, ShapeError, EgobenchError, "An input array or record has the wrong shape.");
create_exception!(_native, HandleClosedError, EgobenchError, "The handle was closed.");

fn core_err(e: Error) -> PyErr {
    match e {
        Error::ShapeMismatch(_) | Error::VolumeTooSmall(_) | Error::MismatchedFeatureDims { .. } => ShapeError::new_err(e.to_string()),
        _ => EgobenchError::new_err(e.to_string()),
    }
}

fn shape_err(msg: impl Into<String>) -> PyErr {
    ShapeError::new_err(msg.into())
}

fn closed() -> PyErr {
    HandleClosedError::new_err("handle is closed")
}

// ------------------------------------------------------------------ records

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| EgobenchError::new_err(format!("invalid {what}: {e}")))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| EgobenchError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Box record; `version`, `timestamp` and `class` may be omitted.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxInput {
    version: Option<u32>,
    #[serde(default)]
    timestamp: f64,
    center: [f64; 3],
    yaw: f64,
    dims: [f64; 3],
    class: Option<usize>,
    score: f64,
    class_probs: Vec<f64>,
}

impl BoxInput {
    fn into_obb(self) -> PyResult<(f64, Obb3)> {
        if let Some(v) = self.version {
            if v != FORMAT_VERSION {
                return Err(EgobenchError::new_err(format!("box record version {v}, expected {FORMAT_VERSION}")));
            }
        }
        let obb = Obb3::new(self.center.into(), self.yaw, self.dims.into(), self.class_probs, self.score).map_err(core_err)?;
        if let Some(c) = self.class {
            if c != obb.label() {
                return Err(EgobenchError::new_err(format!("class {c} disagrees with class_probs")));
            }
        }
        Ok((self.timestamp, obb))
    }
}

fn boxes_from_py(obj: &Bound<'_, PyAny>) -> PyResult<Vec<(f64, Obb3)>> {
    let list: Vec<Bound<'_, PyAny>> = obj.extract()?;
    list.iter().map(|b| from_py::<BoxInput>(b, "box record")?.into_obb()).collect()
}

fn boxes_to_py<'py, 'a>(py: Python<'py>, boxes: impl IntoIterator<Item = (f64, &'a Obb3)>) -> PyResult<Bound<'py, PyList>> {
    let items = boxes.into_iter().map(|(t, b)| to_py(py, &ObbRecord::new(b, t))).collect::<PyResult<Vec<_>>>()?;
    PyList::new(py, items)
}

/// Accepts either a camera object or a whole calibration file.
fn camera_from_py(obj: &Bound<'_, PyAny>) -> PyResult<Camera> {
    let mut value: serde_json::Value = from_py(obj, "camera")?;
    if let Some(inner) = value.get("camera").cloned() {
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            other => return Err(EgobenchError::new_err(format!("calibration version {other:?}, expected {FORMAT_VERSION}"))),
        }
        value = inner;
    }
    let camera: Camera = serde_json::from_value(value).map_err(|e| EgobenchError::new_err(format!("invalid camera: {e}")))?;
    camera.validate().map_err(core_err)?;
    Ok(camera)
}

/// Tracker settings over the defaults; unknown keys are rejected.
fn tracker_config_from_py(obj: Option<&Bound<'_, PyAny>>) -> PyResult<TrackerConfig> {
    let mut value = serde_json::to_value(TrackerConfig::default()).map_err(|e| EgobenchError::new_err(e.to_string()))?;
    if let Some(obj) = obj {
        let overrides: serde_json::Map<String, serde_json::Value> = from_py(obj, "tracker config")?;
        let fields = value.as_object_mut().expect("config serializes to an object");
        for (k, v) in overrides {
            if !fields.contains_key(&k) {
                return Err(EgobenchError::new_err(format!("unknown tracker setting `{k}`")));
            }
            fields.insert(k, v);
        }
    }
    let cfg: TrackerConfig = serde_json::from_value(value).map_err(|e| EgobenchError::new_err(format!("invalid tracker config: {e}")))?;
    cfg.validate().map_err(core_err)?;
    Ok(cfg)
}

// ------------------------------------------------------------------- arrays

fn check_shape(name: &str, a: &ArrayViewD<'_, impl Copy>, expected: &[Option<usize>]) -> PyResult<()> {
    let ok = a.ndim() == expected.len() && a.shape().iter().zip(expected).all(|(s, e)| e.is_none_or(|e| *s == e));
    if ok {
        return Ok(());
    }
    let want: Vec<String> = expected.iter().map(|e| e.map_or("n".into(), |v| v.to_string())).collect();
    Err(shape_err(format!("{name} must have shape ({}), got {:?}", want.join(", "), a.shape())))
}

fn pose_from_array(name: &str, m: &PyArrayLikeDyn<'_, f64, AllowTypeChange>) -> PyResult<Pose> {
    let a = m.as_array();
    check_shape(name, &a, &[Some(4), Some(4)])?;
    if a[[3, 0]] != 0.0 || a[[3, 1]] != 0.0 || a[[3, 2]] != 0.0 || a[[3, 3]] != 1.0 {
        return Err(EgobenchError::new_err(format!("{name} bottom row must be [0, 0, 0, 1]")));
    }
    let r = Mat3::from_fn(|i, j| a[[i, j]]);
    let rotation = Rotation::from_matrix(r).map_err(|e| EgobenchError::new_err(format!("{name}: {e}")))?;
    Ok(Pose::new(rotation, Vec3::new(a[[0, 3]], a[[1, 3]], a[[2, 3]])))
}

fn pose_to_array<'py>(py: Python<'py>, p: &Pose) -> Bound<'py, PyArray2<f64>> {
    let r = p.rotation.matrix();
    let t = p.translation;
    let rows = vec![
        vec![r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
        vec![r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
        vec![r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
        vec![0.0, 0.0, 0.0, 1.0],
    ];
    PyArray2::from_vec2(py, &rows).expect("rows have equal length")
}

fn grid_from_args(pose: &PyArrayLikeDyn<'_, f64, AllowTypeChange>, dims: [usize; 3], voxel_size: f64) -> PyResult<VoxelGrid> {
    VoxelGrid::new(pose_from_array("grid pose", pose)?, dims, voxel_size).map_err(core_err)
}

fn volume_to_py<'py, T: Element + Copy>(py: Python<'py>, grid: &VoxelGrid, data: &[T]) -> PyResult<Bound<'py, PyArrayDyn<T>>> {
    PyArray1::from_slice(py, data).reshape(IxDyn(&grid.dims))
}

type MeshArrays<'py> = (Bound<'py, PyArrayDyn<f64>>, Bound<'py, PyArrayDyn<u32>>);

fn mesh_to_py<'py>(py: Python<'py>, mesh: &TriangleMesh) -> PyResult<MeshArrays<'py>> {
    let v: Vec<f64> = mesh.vertices.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let f: Vec<u32> = mesh.faces.iter().flatten().copied().collect();
    Ok((
        PyArray1::from_vec(py, v).reshape(IxDyn(&[mesh.vertices.len(), 3]))?,
        PyArray1::from_vec(py, f).reshape(IxDyn(&[mesh.faces.len(), 3]))?,
    ))
}

fn mesh_from_py(name: &str, obj: &Bound<'_, PyAny>) -> PyResult<TriangleMesh> {
    let (v, f): (PyArrayLikeDyn<'_, f64, AllowTypeChange>, PyArrayLikeDyn<'_, i64, AllowTypeChange>) = obj.extract()?;
    let (v, f) = (v.as_array(), f.as_array());
    check_shape(&format!("{name} vertices"), &v, &[None, Some(3)])?;
    check_shape(&format!("{name} faces"), &f, &[None, Some(3)])?;
    let vertices: Vec<Vec3> = v.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect();
    let n = vertices.len() as i64;
    let faces = f
        .rows()
        .into_iter()
        .map(|r| {
            let idx = [r[0], r[1], r[2]];
            if idx.iter().any(|&i| i < 0 || i >= n) {
                return Err(shape_err(format!("{name} face {idx:?} indexes outside {n} vertices")));
            }
            Ok(idx.map(|i| i as u32))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(TriangleMesh::new(vertices, faces))
}

// ------------------------------------------------------------------ tracker

/// Online box tracker. `step` folds in one batch of detections; `boxes`
/// returns the scene, confirmed tracks only unless `confirmed=False`.
#[pyclass(module = "egobench._native")]
struct Tracker {
    state: Option<SceneState>,
    cfg: TrackerConfig,
}

impl Tracker {
    fn state(&self) -> PyResult<&SceneState> {
        self.state.as_ref().ok_or_else(closed)
    }
}

#[pymethods]
impl Tracker {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        Ok(Tracker { state: Some(SceneState::new()), cfg: tracker_config_from_py(config)? })
    }

    /// One association, update, spawn, removal and dedup cycle at time `t`.
    /// `camera` and `pose` (camera-to-world, 4x4) enable the 2D cost terms.
    #[pyo3(signature = (detections, t, camera=None, pose=None))]
    fn step(
        &mut self,
        py: Python<'_>,
        detections: &Bound<'_, PyAny>,
        t: f64,
        camera: Option<&Bound<'_, PyAny>>,
        pose: Option<PyArrayLikeDyn<'_, f64, AllowTypeChange>>,
    ) -> PyResult<()> {
        let view = match (camera, pose) {
            (Some(c), Some(p)) => Some(CameraView::new(camera_from_py(c)?, pose_from_array("pose", &p)?)),
            (None, None) => None,
            _ => return Err(EgobenchError::new_err("camera and pose must be given together")),
        };
        let dets: Vec<Obb3> = boxes_from_py(detections)?.into_iter().map(|(_, b)| b).collect();
        let state = self.state()?;
        let cfg = &self.cfg;
        let next = py.detach(|| tracker::step(state, &dets, t, view.as_ref(), cfg)).map_err(core_err)?;
        self.state = Some(next);
        Ok(())
    }

    #[pyo3(signature = (confirmed=true))]
    fn boxes<'py>(&self, py: Python<'py>, confirmed: bool) -> PyResult<Bound<'py, PyList>> {
        let state = self.state()?;
        let n_min = if confirmed { self.cfg.n_min } else { 0 };
        boxes_to_py(py, state.confirmed(n_min).map(|t| (state.time, &t.obb)))
    }

    #[getter]
    fn time(&self) -> PyResult<f64> {
        Ok(self.state()?.time)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.cfg)
    }

    #[getter]
    fn closed(&self) -> bool {
        self.state.is_none()
    }

    fn close(&mut self) -> PyResult<()> {
        self.state.take().map(|_| ()).ok_or_else(closed)
    }

    fn __len__(&self) -> PyResult<usize> {
        Ok(self.state()?.tracks.len())
    }
}

// ------------------------------------------------------------------- fusion

/// Truncated signed distance volume over a world-aligned voxel grid.
#[pyclass(module = "egobench._native")]
struct TsdfVolume {
    inner: Option<fusion::TsdfVolume>,
}

#[pymethods]
impl TsdfVolume {
    /// `pose` is the grid-to-world 4x4 transform, `dims` the (D, H, W)
    /// voxel counts; truncation defaults to three voxels.
    #[new]
    #[pyo3(signature = (pose, dims, voxel_size, truncation=None))]
    fn new(pose: PyArrayLikeDyn<'_, f64, AllowTypeChange>, dims: [usize; 3], voxel_size: f64, truncation: Option<f64>) -> PyResult<Self> {
        let grid = grid_from_args(&pose, dims, voxel_size)?;
        let inner = match truncation {
            Some(t) if !(t > 0.0) => return Err(EgobenchError::new_err(format!("truncation must be positive, got {t}"))),
            Some(t) => fusion::TsdfVolume::with_truncation(grid, t),
            None => fusion::TsdfVolume::new(grid),
        };
        Ok(TsdfVolume { inner: Some(inner) })
    }

    /// Folds in one (H, W) depth map (0 = invalid) seen from `pose`.
    fn integrate_depth(
        &mut self,
        py: Python<'_>,
        depth: PyArrayLikeDyn<'_, f32, AllowTypeChange>,
        camera: &Bound<'_, PyAny>,
        pose: PyArrayLikeDyn<'_, f64, AllowTypeChange>,
    ) -> PyResult<()> {
        let view = CameraView::new(camera_from_py(camera)?, pose_from_array("pose", &pose)?);
        let d = depth.as_array();
        check_shape("depth", &d, &[Some(view.camera.height()), Some(view.camera.width())])?;
        let map = DepthMap { width: d.shape()[1], height: d.shape()[0], data: d.iter().copied().collect() };
        let vol = self.inner.as_mut().ok_or_else(closed)?;
        py.detach(|| vol.integrate(&map, &view)).map_err(core_err)
    }

    /// Zero level set as (vertices (n, 3) float64, faces (m, 3) uint32).
    #[pyo3(signature = (min_obs=TSDF_MIN_OBS))]
    fn extract_mesh<'py>(&self, py: Python<'py>, min_obs: u32) -> PyResult<MeshArrays<'py>> {
        let vol = self.inner.as_ref().ok_or_else(closed)?;
        let mesh = py.detach(|| vol.extract_mesh(min_obs)).map_err(core_err)?;
        mesh_to_py(py, &mesh)
    }

    #[getter]
    fn tsdf<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArrayDyn<f32>>> {
        let vol = self.inner.as_ref().ok_or_else(closed)?;
        volume_to_py(py, &vol.grid, &vol.tsdf)
    }

    #[getter]
    fn weights<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArrayDyn<u32>>> {
        let vol = self.inner.as_ref().ok_or_else(closed)?;
        volume_to_py(py, &vol.grid, &vol.weights)
    }

    #[getter]
    fn truncation(&self) -> PyResult<f64> {
        Ok(self.inner.as_ref().ok_or_else(closed)?.truncation)
    }

    #[getter]
    fn closed(&self) -> bool {
        self.inner.is_none()
    }

    fn close(&mut self) -> PyResult<()> {
        self.inner.take().map(|_| ()).ok_or_else(closed)
    }
}

/// Running-mean occupancy volume fed with local occupancy grids.
#[pyclass(module = "egobench._native")]
struct OccupancyVolume {
    inner: Option<fusion::OccupancyVolume>,
}

#[pymethods]
impl OccupancyVolume {
    #[new]
    fn new(pose: PyArrayLikeDyn<'_, f64, AllowTypeChange>, dims: [usize; 3], voxel_size: f64) -> PyResult<Self> {
        Ok(OccupancyVolume { inner: Some(fusion::OccupancyVolume::new(grid_from_args(&pose, dims, voxel_size)?)) })
    }

    /// Folds in a (D, H, W) local occupancy grid with grid-to-world `pose`.
    fn integrate_occupancy(
        &mut self,
        py: Python<'_>,
        occupancy: PyArrayLikeDyn<'_, f64, AllowTypeChange>,
        pose: PyArrayLikeDyn<'_, f64, AllowTypeChange>,
        voxel_size: f64,
    ) -> PyResult<()> {
        let o = occupancy.as_array();
        check_shape("occupancy", &o, &[None, None, None])?;
        let local = grid_from_args(&pose, [o.shape()[0], o.shape()[1], o.shape()[2]], voxel_size)?;
        let values: Vec<f64> = o.iter().copied().collect();
        let vol = self.inner.as_mut().ok_or_else(closed)?;
        py.detach(|| vol.integrate(&values, &local)).map_err(core_err)
    }

    #[pyo3(signature = (min_obs=OCC_MIN_OBS))]
    fn extract_mesh<'py>(&self, py: Python<'py>, min_obs: u32) -> PyResult<MeshArrays<'py>> {
        let vol = self.inner.as_ref().ok_or_else(closed)?;
        let mesh = py.detach(|| vol.extract_mesh(min_obs)).map_err(core_err)?;
        mesh_to_py(py, &mesh)
    }

    #[getter]
    fn occupancy<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArrayDyn<f64>>> {
        let vol = self.inner.as_ref().ok_or_else(closed)?;
        volume_to_py(py, &vol.grid, &vol.occ)
    }

    #[getter]
    fn counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArrayDyn<u32>>> {
        let vol = self.inner.as_ref().ok_or_else(closed)?;
        volume_to_py(py, &vol.grid, &vol.counts)
    }

    #[getter]
    fn closed(&self) -> bool {
        self.inner.is_none()
    }

    fn close(&mut self) -> PyResult<()> {
        self.inner.take().map(|_| ()).ok_or_else(closed)
    }
}

/// The `iso` level set of a (D, H, W) volume on the grid given by `pose`
/// and `voxel_size`. Cubes touching a voxel with fewer than `min_obs`
/// counts are skipped; without `counts` every voxel counts once.
#[pyfunction]
#[pyo3(signature = (values, pose, voxel_size, iso=0.0, counts=None, min_obs=0))]
fn marching_cubes<'py>(
    py: Python<'py>,
    values: PyArrayLikeDyn<'py, f64, AllowTypeChange>,
    pose: PyArrayLikeDyn<'py, f64, AllowTypeChange>,
    voxel_size: f64,
    iso: f64,
    counts: Option<PyArrayLikeDyn<'py, i64, AllowTypeChange>>,
    min_obs: u32,
) -> PyResult<MeshArrays<'py>> {
    let v = values.as_array();
    check_shape("values", &v, &[None, None, None])?;
    let dims = [v.shape()[0], v.shape()[1], v.shape()[2]];
    let grid = grid_from_args(&pose, dims, voxel_size)?;
    let data: Vec<f64> = v.iter().copied().collect();
    let counts: Vec<u32> = match &counts {
        Some(c) => {
            let c = c.as_array();
            check_shape("counts", &c, &dims.map(Some))?;
            c.iter()
                .map(|&x| u32::try_from(x).map_err(|_| EgobenchError::new_err(format!("counts must be in [0, 2^32), got {x}"))))
                .collect::<PyResult<_>>()?
        }
        None => vec![1; data.len()],
    };
    let mesh = py.detach(|| fusion::marching_cubes(&data, &counts, &grid, iso, min_obs)).map_err(core_err)?;
    mesh_to_py(py, &mesh)
}

// ------------------------------------------------------------------ metrics

/// Accuracy, completeness, precision and recall of `pred` against `gt`,
/// each a (vertices, faces) pair.
#[pyfunction]
#[pyo3(signature = (pred, gt, samples=DEFAULT_SAMPLES, tau=DEFAULT_TAU, seed=0))]
fn surface_metrics<'py>(
    py: Python<'py>,
    pred: &Bound<'py, PyAny>,
    gt: &Bound<'py, PyAny>,
    samples: usize,
    tau: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let pred = mesh_from_py("pred", pred)?;
    let gt = mesh_from_py("gt", gt)?;
    if !(tau > 0.0) {
        return Err(EgobenchError::new_err(format!("tau must be positive, got {tau}")));
    }
    let m = py.detach(|| metrics::surface_metrics(&pred, &gt, samples, tau, seed)).map_err(core_err)?;
    let out = PyDict::new(py);
    out.set_item("acc", m.acc)?;
    out.set_item("comp", m.comp)?;
    out.set_item("prec", m.prec)?;
    out.set_item("recal", m.recal)?;
    Ok(out)
}

/// Detection mAP of box records `pred` against `gt`, averaged over IoU
/// thresholds (default 0.0, 0.05, ..., 0.5). With `per_timestamp`, boxes
/// are grouped by their `timestamp` and scored per group.
#[pyfunction]
#[pyo3(signature = (pred, gt, iou_thresholds=None, interpolation="all-points", per_timestamp=false))]
fn average_precision<'py>(
    py: Python<'py>,
    pred: &Bound<'py, PyAny>,
    gt: &Bound<'py, PyAny>,
    iou_thresholds: Option<Vec<f64>>,
    interpolation: &str,
    per_timestamp: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let interp = match interpolation {
        "all-points" => Interpolation::AllPoints,
        "points101" | "101" => Interpolation::Points101,
        other => return Err(EgobenchError::new_err(format!("interpolation must be `all-points` or `101`, got `{other}`"))),
    };
    let thresholds = iou_thresholds.unwrap_or_else(metrics::default_iou_thresholds);
    let pred = boxes_from_py(pred)?;
    let gt = boxes_from_py(gt)?;
    let report = py
        .detach(|| {
            if per_timestamp {
                pipeline::per_timestamp_map(&pred, &gt, &thresholds, interp)
            } else {
                let p: Vec<Obb3> = pred.into_iter().map(|(_, b)| b).collect();
                let g: Vec<Obb3> = gt.into_iter().map(|(_, b)| b).collect();
                metrics::average_precision(&p, &g, &thresholds, interp).map(|m| ObbReport::new(&m, None))
            }
        })
        .map_err(core_err)?;
    to_py(py, &report)
}

// ---------------------------------------------------------------------- files

/// Mesh from a PLY file as (vertices, faces).
#[pyfunction]
fn read_mesh_ply(py: Python<'_>, path: PathBuf) -> PyResult<MeshArrays<'_>> {
    mesh_to_py(py, &io::read_mesh_ply(&path).map_err(core_err)?)
}

#[pyfunction]
fn write_mesh_ply(path: PathBuf, mesh: &Bound<'_, PyAny>) -> PyResult<()> {
    io::write_mesh_ply(&path, &mesh_from_py("mesh", mesh)?).map_err(core_err)
}

/// Box records from a JSON-lines file.
#[pyfunction]
fn read_obbs_jsonl(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyList>> {
    let boxes = io::read_obbs_jsonl(&path).map_err(core_err)?;
    boxes_to_py(py, boxes.iter().map(|(t, b)| (*t, b)))
}

/// Trajectory as a list of (t, 4x4 camera-to-world pose).
#[pyfunction]
fn read_trajectory(py: Python<'_>, path: PathBuf) -> PyResult<Vec<(f64, Bound<'_, PyArray2<f64>>)>> {
    let traj = io::read_trajectory(&path).map_err(core_err)?;
    Ok(traj.iter().map(|p| (p.t, pose_to_array(py, &p.pose))).collect())
}

/// Camera dict from a calibration file.
#[pyfunction]
fn read_calibration(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &io::read_calibration(&path).map_err(core_err)?)
}

/// Depth map from a depth file as an (H, W) float32 array.
#[pyfunction]
fn read_depth(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyArrayDyn<f32>>> {
    let d = io::read_depth(&path).map_err(core_err)?;
    PyArray1::from_vec(py, d.data).reshape(IxDyn(&[d.height, d.width]))
}

/// Volume file as `{"pose": 4x4, "voxel_size": float, "values": (C, D, H, W)
/// float64}`.
#[pyfunction]
fn read_volume(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let vol = io::read_volume(&path).map_err(core_err)?;
    let [d, h, w] = vol.grid.dims;
    let out = PyDict::new(py);
    out.set_item("pose", pose_to_array(py, &vol.grid.pose))?;
    out.set_item("voxel_size", vol.grid.voxel_size)?;
    out.set_item("values", PyArray1::from_vec(py, vol.data.to_f64()).reshape(IxDyn(&[vol.channels, d, h, w]))?)?;
    Ok(out)
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("FORMAT_VERSION", FORMAT_VERSION)?;
    m.add("TSDF_MIN_OBS", TSDF_MIN_OBS)?;
    m.add("OCC_MIN_OBS", OCC_MIN_OBS)?;
    m.add("EgobenchError", py.get_type::<EgobenchError>())?;
    m.add("ShapeError", py.get_type::<ShapeError>())?;
    m.add("HandleClosedError", py.get_type::<HandleClosedError>())?;
    m.add_class::<Tracker>()?;
    m.add_class::<TsdfVolume>()?;
    m.add_class::<OccupancyVolume>()?;
    m.add_function(wrap_pyfunction!(marching_cubes, m)?)?;
    m.add_function(wrap_pyfunction!(surface_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(read_mesh_ply, m)?)?;
    m.add_function(wrap_pyfunction!(write_mesh_ply, m)?)?;
    m.add_function(wrap_pyfunction!(read_obbs_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(read_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(read_calibration, m)?)?;
    m.add_function(wrap_pyfunction!(read_depth, m)?)?;
    m.add_function(wrap_pyfunction!(read_volume, m)?)?;
    Ok(())
}
