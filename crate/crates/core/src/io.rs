//! Versioned file formats.
//!
//! | artifact            | format                                             |
//! |---------------------|----------------------------------------------------|
//! | trajectory          | CSV `t_sec,tx,ty,tz,qw,qx,qy,qz`                   |
//! | calibration         | JSON, camera tagged by `model`                     |
//! | depth               | 16-byte text header `EGD1 wwwww hhhhh`, raw f32 LE |
//! | mesh, point cloud   | PLY binary little endian                           |
//! | boxes, detections   | JSON lines, one box per line                       |
//! | volumes             | text header terminated by `end\n`, raw LE tensor   |
//! | sequence manifest   | JSON                                               |
//!
//! Floats in text formats use the shortest representation that round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, DepthMap};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Pose, Rotation, Vec3};
use crate::mesh::TriangleMesh;
use crate::obb::Obb3;
use crate::scenegen::{SceneSpec, TimedPose};
use crate::voxel::{PointCloudWithVisibility, VoxelGrid};

pub const FORMAT_VERSION: u32 = 1;

const TRAJECTORY_MAGIC: &str = "# egobench-trajectory";
const TRAJECTORY_COLUMNS: &str = "t_sec,tx,ty,tz,qw,qx,qy,qz";
const DEPTH_MAGIC: &str = "EGD";
const DEPTH_HEADER_LEN: usize = 16;
const VOLUME_MAGIC: &str = "egobench-volume";
const PLY_COMMENT: &str = "comment egobench";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_all(path)?;
    String::from_utf8(bytes).map_err(|e| Error::parse(path, format!("byte {}", e.utf8_error().valid_up_to()), "invalid UTF-8"))
}

fn check_version(path: &Path, found: &str) -> Result<()> {
    if found == FORMAT_VERSION.to_string() {
        Ok(())
    } else {
        Err(Error::VersionMismatch { path: path.to_path_buf(), found: found.to_string(), expected: FORMAT_VERSION.to_string() })
    }
}

// ---------------------------------------------------------------- trajectory

pub fn write_trajectory(path: &Path, poses: &[TimedPose]) -> Result<()> {
    let mut w = create(path)?;
    let mut text = format!("{TRAJECTORY_MAGIC} {FORMAT_VERSION}\n{TRAJECTORY_COLUMNS}\n");
    for p in poses {
        let t = p.pose.translation;
        let [qw, qx, qy, qz] = p.pose.rotation.to_quaternion();
        text.push_str(&format!("{},{},{},{},{qw},{qx},{qy},{qz}\n", p.t, t.x, t.y, t.z));
    }
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Reads a trajectory; timestamps must be strictly increasing.
pub fn read_trajectory(path: &Path) -> Result<Vec<TimedPose>> {
    let text = read_text(path)?;
    if !text.ends_with('\n') {
        return Err(Error::parse(path, format!("line {}", text.lines().count().max(1)), "truncated final line"));
    }
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(path, "line 1", "empty file"))?;
    let version =
        header.strip_prefix(TRAJECTORY_MAGIC).map(str::trim).ok_or_else(|| Error::parse(path, "line 1", "missing trajectory header"))?;
    check_version(path, version)?;
    if lines.next() != Some(TRAJECTORY_COLUMNS) {
        return Err(Error::parse(path, "line 2", format!("expected column header `{TRAJECTORY_COLUMNS}`")));
    }
    let mut out: Vec<TimedPose> = Vec::new();
    for (n, line) in lines.enumerate() {
        let loc = format!("line {}", n + 3);
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, &loc, e.to_string()))?;
        if vals.len() != 8 {
            return Err(Error::parse(path, &loc, format!("expected 8 columns, found {}", vals.len())));
        }
        let rotation =
            Rotation::from_quaternion([vals[4], vals[5], vals[6], vals[7]]).map_err(|e| Error::parse(path, &loc, e.to_string()))?;
        let t = vals[0];
        if let Some(prev) = out.last() {
            if !(t > prev.t) {
                return Err(Error::parse(path, &loc, format!("timestamp {t} does not increase")));
            }
        }
        out.push(TimedPose { t, pose: Pose::new(rotation, Vec3::new(vals[1], vals[2], vals[3])) });
    }
    Ok(out)
}

// --------------------------------------------------------------- calibration

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    version: u32,
    camera: Camera,
}

pub fn write_calibration(path: &Path, camera: &Camera) -> Result<()> {
    write_json(path, &CalibrationFile { version: FORMAT_VERSION, camera: *camera })
}

pub fn read_calibration(path: &Path) -> Result<Camera> {
    let text = read_text(path)?;
    check_json_version(path, &text)?;
    let file: CalibrationFile = parse_json(path, &text)?;
    file.camera.validate()?;
    Ok(file.camera)
}

/// Serializes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))
}

fn check_json_version(path: &Path, text: &str) -> Result<()> {
    #[derive(Deserialize)]
    struct Versioned {
        version: serde_json::Value,
    }
    let v: Versioned = parse_json(path, text)?;
    check_version(path, &v.version.to_string())
}

// --------------------------------------------------------------------- depth

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    if depth.width > 99_999 || depth.height > 99_999 {
        return Err(Error::InvalidArgument(format!("depth map {}x{} too large", depth.width, depth.height)));
    }
    let mut w = create(path)?;
    let header = format!("{DEPTH_MAGIC}{FORMAT_VERSION} {:5} {:5}", depth.width, depth.height);
    debug_assert_eq!(header.len(), DEPTH_HEADER_LEN);
    let mut bytes = Vec::with_capacity(DEPTH_HEADER_LEN + 4 * depth.data.len());
    bytes.extend_from_slice(header.as_bytes());
    depth.data.iter().for_each(|d| bytes.extend_from_slice(&d.to_le_bytes()));
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let bytes = read_all(path)?;
    if bytes.len() < DEPTH_HEADER_LEN {
        return Err(Error::parse(path, "byte 0", "truncated depth header"));
    }
    let header = std::str::from_utf8(&bytes[..DEPTH_HEADER_LEN]).map_err(|_| Error::parse(path, "byte 0", "non-text depth header"))?;
    let rest = header.strip_prefix(DEPTH_MAGIC).ok_or_else(|| Error::parse(path, "byte 0", "bad depth magic"))?;
    check_version(path, &rest[..1])?;
    let mut fields = rest[1..].split_whitespace().map(str::parse::<usize>);
    let (width, height) = match (fields.next(), fields.next(), fields.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) => (w, h),
        _ => return Err(Error::parse(path, "byte 4", "malformed depth dimensions")),
    };
    let body = &bytes[DEPTH_HEADER_LEN..];
    if body.len() != 4 * width * height {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len()),
            format!("expected {} bytes of depth, found {}", 4 * width * height, body.len()),
        ));
    }
    Ok(DepthMap { width, height, data: body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect() })
}

// ----------------------------------------------------------------------- PLY

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    /// `Some(count type)` for list properties.
    list: Option<Scalar>,
    ty: Scalar,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Property values of one element, every value widened losslessly to f64.
#[derive(Debug, Default)]
struct ElementData {
    scalars: Vec<Vec<f64>>,
    lists: Vec<Vec<Vec<f64>>>,
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.path, format!("byte {}", self.pos), "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let b = self.take(ty.size())?;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

fn parse_ply(path: &Path) -> Result<Vec<(Element, ElementData)>> {
    let bytes = read_all(path)?;
    let end = b"end_header\n";
    let header_end =
        bytes.windows(end.len()).position(|w| w == end).ok_or_else(|| Error::parse(path, "byte 0", "missing end_header"))? + end.len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| Error::parse(path, "byte 0", "non-text PLY header"))?;
    let mut lines = header.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(Error::parse(path, "line 1", "not a PLY file"));
    }
    let mut elements: Vec<Element> = Vec::new();
    for (n, line) in lines {
        let loc = format!("line {}", n + 1);
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", v] => {
                if *v != "1.0" {
                    return Err(Error::VersionMismatch { path: path.into(), found: v.to_string(), expected: "1.0".into() });
                }
            }
            ["format", other, _] => return Err(Error::parse(path, loc, format!("unsupported PLY format {other}"))),
            ["comment", "egobench", v] => check_version(path, v)?,
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::parse(path, &loc, format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count_ty, ty, name] => {
                let (Some(c), Some(t)) = (Scalar::parse(count_ty), Scalar::parse(ty)) else {
                    return Err(Error::parse(path, loc, "unknown list property type"));
                };
                let el = elements.last_mut().ok_or_else(|| Error::parse(path, &loc, "property before element"))?;
                el.props.push(Property { name: name.to_string(), list: Some(c), ty: t });
            }
            ["property", ty, name] => {
                let t = Scalar::parse(ty).ok_or_else(|| Error::parse(path, &loc, format!("unknown property type {ty}")))?;
                let el = elements.last_mut().ok_or_else(|| Error::parse(path, &loc, "property before element"))?;
                el.props.push(Property { name: name.to_string(), list: None, ty: t });
            }
            _ => return Err(Error::parse(path, loc, format!("unrecognized header line `{line}`"))),
        }
    }
    let mut cur = Cursor { path, bytes: &bytes, pos: header_end };
    let mut out = Vec::with_capacity(elements.len());
    for el in elements {
        let mut data = ElementData { scalars: vec![Vec::new(); el.props.len()], lists: vec![Vec::new(); el.props.len()] };
        for _ in 0..el.count {
            for (p, prop) in el.props.iter().enumerate() {
                match prop.list {
                    None => data.scalars[p].push(cur.scalar(prop.ty)?),
                    Some(ct) => {
                        let n = cur.scalar(ct)?;
                        if !(n >= 0.0) {
                            return Err(Error::parse(path, format!("byte {}", cur.pos), "negative list length"));
                        }
                        let items = (0..n as usize).map(|_| cur.scalar(prop.ty)).collect::<Result<Vec<_>>>()?;
                        data.lists[p].push(items);
                    }
                }
            }
        }
        out.push((el, data));
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(path, format!("byte {}", cur.pos), "trailing bytes after last element"));
    }
    Ok(out)
}

fn ply_header(elements: &[(&str, usize, &[&str])]) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\n{PLY_COMMENT} {FORMAT_VERSION}\n");
    for (name, count, props) in elements {
        h.push_str(&format!("element {name} {count}\n"));
        for p in *props {
            h.push_str(&format!("property {p}\n"));
        }
    }
    h.push_str("end_header\n");
    h
}

fn find<'a>(path: &Path, els: &'a [(Element, ElementData)], name: &str) -> Result<&'a (Element, ElementData)> {
    els.iter().find(|(e, _)| e.name == name).ok_or_else(|| Error::parse(path, "header", format!("missing element `{name}`")))
}

fn scalar_column<'a>(path: &Path, el: &'a (Element, ElementData), names: &[&str]) -> Result<&'a [f64]> {
    el.0.props
        .iter()
        .position(|p| p.list.is_none() && names.contains(&p.name.as_str()))
        .map(|i| el.1.scalars[i].as_slice())
        .ok_or_else(|| Error::parse(path, "header", format!("element `{}` lacks property `{}`", el.0.name, names[0])))
}

fn list_column<'a>(path: &Path, el: &'a (Element, ElementData), names: &[&str]) -> Result<&'a [Vec<f64>]> {
    el.0.props
        .iter()
        .position(|p| p.list.is_some() && names.contains(&p.name.as_str()))
        .map(|i| el.1.lists[i].as_slice())
        .ok_or_else(|| Error::parse(path, "header", format!("element `{}` lacks list `{}`", el.0.name, names[0])))
}

fn xyz(path: &Path, el: &(Element, ElementData)) -> Result<Vec<Vec3>> {
    let (x, y, z) = (scalar_column(path, el, &["x"])?, scalar_column(path, el, &["y"])?, scalar_column(path, el, &["z"])?);
    Ok((0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i])).collect())
}

fn push_xyz(bytes: &mut Vec<u8>, p: &Vec3) {
    for c in p.iter() {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
}

pub fn write_mesh_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let header = ply_header(&[
        ("vertex", mesh.vertices.len(), &["double x", "double y", "double z"]),
        ("face", mesh.faces.len(), &["list uchar uint vertex_indices"]),
    ]);
    let mut bytes = header.into_bytes();
    mesh.vertices.iter().for_each(|v| push_xyz(&mut bytes, v));
    for f in &mesh.faces {
        bytes.push(3);
        f.iter().for_each(|i| bytes.extend_from_slice(&i.to_le_bytes()));
    }
    let mut w = create(path)?;
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Reads a triangle mesh; polygons with more than three corners are fanned.
pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let els = parse_ply(path)?;
    let vertices = xyz(path, find(path, &els, "vertex")?)?;
    let mut faces = Vec::new();
    if let Ok(face_el) = find(path, &els, "face") {
        for (n, poly) in list_column(path, face_el, &["vertex_indices", "vertex_index"])?.iter().enumerate() {
            if poly.len() < 3 || poly.iter().any(|&i| !(i >= 0.0 && (i as usize) < vertices.len())) {
                return Err(Error::parse(path, format!("face {n}"), "invalid vertex indices"));
            }
            for k in 1..poly.len() - 1 {
                faces.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
            }
        }
    }
    Ok(TriangleMesh::new(vertices, faces))
}

pub fn write_points_ply(path: &Path, pc: &PointCloudWithVisibility) -> Result<()> {
    pc.validate()?;
    let header = ply_header(&[
        ("vertex", pc.points.len(), &["double x", "double y", "double z", "list uint uint observers"]),
        ("observer", pc.observers.len(), &["double x", "double y", "double z"]),
    ]);
    let mut bytes = header.into_bytes();
    for (p, vis) in pc.points.iter().zip(&pc.visibility) {
        push_xyz(&mut bytes, p);
        bytes.extend_from_slice(&(vis.len() as u32).to_le_bytes());
        vis.iter().for_each(|o| bytes.extend_from_slice(&o.to_le_bytes()));
    }
    pc.observers.iter().for_each(|o| push_xyz(&mut bytes, o));
    let mut w = create(path)?;
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

pub fn read_points_ply(path: &Path) -> Result<PointCloudWithVisibility> {
    let els = parse_ply(path)?;
    let vertex = find(path, &els, "vertex")?;
    let pc = PointCloudWithVisibility {
        points: xyz(path, vertex)?,
        observers: xyz(path, find(path, &els, "observer")?)?,
        visibility: list_column(path, vertex, &["observers"])?.iter().map(|l| l.iter().map(|&o| o as u32).collect()).collect(),
    };
    pc.validate().map_err(|e| Error::parse(path, "body", e.to_string()))?;
    Ok(pc)
}

// ------------------------------------------------------------ boxes (JSONL)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObbRecord {
    pub version: u32,
    pub timestamp: f64,
    pub center: [f64; 3],
    pub yaw: f64,
    pub dims: [f64; 3],
    pub class: usize,
    pub score: f64,
    pub class_probs: Vec<f64>,
}

impl ObbRecord {
    pub fn new(obb: &Obb3, timestamp: f64) -> Self {
        ObbRecord {
            version: FORMAT_VERSION,
            timestamp,
            center: obb.center.into(),
            yaw: obb.yaw,
            dims: obb.dims.into(),
            class: obb.label(),
            score: obb.score,
            class_probs: obb.class_probs.clone(),
        }
    }

    pub fn to_obb(&self) -> Result<Obb3> {
        let obb = Obb3::new(self.center.into(), self.yaw, self.dims.into(), self.class_probs.clone(), self.score)?;
        if obb.label() != self.class {
            return Err(Error::InvalidArgument(format!("class {} disagrees with class_probs", self.class)));
        }
        Ok(obb)
    }
}

/// One JSON object per line, in the given order.
pub fn write_obbs_jsonl<'a, I>(path: &Path, boxes: I) -> Result<()>
where
    I: IntoIterator<Item = (f64, &'a Obb3)>,
{
    let mut text = String::new();
    for (t, b) in boxes {
        text.push_str(&serde_json::to_string(&ObbRecord::new(b, t)).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_obbs_jsonl(path: &Path) -> Result<Vec<(f64, Obb3)>> {
    let text = read_text(path)?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::parse(path, format!("line {}", text.lines().count()), "truncated final line"));
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let loc = format!("line {}", n + 1);
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::parse(path, &loc, e.to_string()))?;
        match value.get("version") {
            Some(v) => check_version(path, &v.to_string())?,
            None => return Err(Error::parse(path, &loc, "missing version")),
        }
        let rec: ObbRecord = serde_json::from_value(value).map_err(|e| Error::parse(path, &loc, e.to_string()))?;
        let obb = rec.to_obb().map_err(|e| Error::parse(path, &loc, e.to_string()))?;
        out.push((rec.timestamp, obb));
    }
    Ok(out)
}

/// Groups a detection stream into per-timestamp batches; timestamps must be
/// non-decreasing.
pub fn read_detection_stream(path: &Path) -> Result<Vec<(f64, Vec<Obb3>)>> {
    let mut out: Vec<(f64, Vec<Obb3>)> = Vec::new();
    for (n, (t, b)) in read_obbs_jsonl(path)?.into_iter().enumerate() {
        match out.last_mut() {
            Some((last, v)) if *last == t => v.push(b),
            Some((last, _)) if *last > t => {
                return Err(Error::parse(path, format!("line {}", n + 1), format!("timestamp {t} goes backwards")));
            }
            _ => out.push((t, vec![b])),
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------- volumes

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl VolumeData {
    fn dtype(&self) -> &'static str {
        match self {
            VolumeData::F32(_) => "f32",
            VolumeData::F64(_) => "f64",
            VolumeData::U8(_) => "u8",
            VolumeData::U32(_) => "u32",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VolumeData::F32(v) => v.len(),
            VolumeData::F64(v) => v.len(),
            VolumeData::U8(v) => v.len(),
            VolumeData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            VolumeData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            VolumeData::F64(v) => v.clone(),
            VolumeData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            VolumeData::U32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// A `channels x D x H x W` tensor over a voxel grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub grid: VoxelGrid,
    pub channels: usize,
    pub data: VolumeData,
}

pub fn write_volume(path: &Path, vol: &VolumeFile) -> Result<()> {
    if vol.data.len() != vol.channels * vol.grid.num_voxels() {
        return Err(Error::ShapeMismatch(format!(
            "volume has {} values for {} channels over {:?}",
            vol.data.len(),
            vol.channels,
            vol.grid.dims
        )));
    }
    let [d, h, w] = vol.grid.dims;
    let m = vol.grid.pose.rotation.matrix();
    let t = vol.grid.pose.translation;
    let rot: Vec<String> = (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)].to_string())).collect();
    let header = format!(
        "{VOLUME_MAGIC} {FORMAT_VERSION}\ndtype {}\nchannels {}\ndims {d} {h} {w}\nvoxel_size {}\nrotation {}\ntranslation {} {} {}\nend\n",
        vol.data.dtype(),
        vol.channels,
        vol.grid.voxel_size,
        rot.join(" "),
        t.x,
        t.y,
        t.z
    );
    let mut bytes = header.into_bytes();
    match &vol.data {
        VolumeData::F32(v) => v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes())),
        VolumeData::F64(v) => v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes())),
        VolumeData::U8(v) => bytes.extend_from_slice(v),
        VolumeData::U32(v) => v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes())),
    }
    let mut wr = create(path)?;
    wr.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    finish(path, wr)
}

pub fn read_volume(path: &Path) -> Result<VolumeFile> {
    let mut reader = open(path)?;
    let mut header = Vec::new();
    let mut line = String::new();
    let mut offset = 0usize;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::parse(path, format!("byte {offset}"), e.to_string()))?;
        if n == 0 {
            return Err(Error::parse(path, format!("byte {offset}"), "unterminated volume header"));
        }
        offset += n;
        if !line.ends_with('\n') {
            return Err(Error::parse(path, format!("byte {offset}"), "unterminated volume header"));
        }
        let l = line.trim_end().to_string();
        if l == "end" {
            break;
        }
        header.push(l);
    }
    let field = |name: &str| -> Result<Vec<&str>> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(name).and_then(|r| r.strip_prefix(' ')))
            .map(|r| r.split_whitespace().collect())
            .ok_or_else(|| Error::parse(path, "header", format!("missing `{name}`")))
    };
    let nums = |name: &str, n: usize| -> Result<Vec<f64>> {
        let v = field(name)?;
        if v.len() != n {
            return Err(Error::parse(path, "header", format!("`{name}` needs {n} values")));
        }
        v.iter().map(|s| s.parse::<f64>().map_err(|e| Error::parse(path, "header", format!("`{name}`: {e}")))).collect()
    };
    let version = field(VOLUME_MAGIC)?;
    check_version(path, version.first().copied().unwrap_or(""))?;
    let dtype = field("dtype")?.first().copied().unwrap_or("").to_string();
    let channels = nums("channels", 1)?[0] as usize;
    let dims_f = nums("dims", 3)?;
    let dims = [dims_f[0] as usize, dims_f[1] as usize, dims_f[2] as usize];
    let voxel_size = nums("voxel_size", 1)?[0];
    let r = nums("rotation", 9)?;
    let t = nums("translation", 3)?;
    let rotation = Rotation::from_matrix(Mat3::from_row_slice(&r)).map_err(|e| Error::parse(path, "header", e.to_string()))?;
    let grid = VoxelGrid::new(Pose::new(rotation, Vec3::new(t[0], t[1], t[2])), dims, voxel_size)
        .map_err(|e| Error::parse(path, "header", e.to_string()))?;

    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let count = channels * grid.num_voxels();
    let size = match dtype.as_str() {
        "f32" | "u32" => 4,
        "f64" => 8,
        "u8" => 1,
        other => return Err(Error::parse(path, "header", format!("unknown dtype `{other}`"))),
    };
    if body.len() != count * size {
        return Err(Error::parse(
            path,
            format!("byte {}", offset + body.len()),
            format!("expected {} bytes of data, found {}", count * size, body.len()),
        ));
    }
    let data = match dtype.as_str() {
        "f32" => VolumeData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        "u32" => VolumeData::U32(body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
        "f64" => VolumeData::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        _ => VolumeData::U8(body),
    };
    Ok(VolumeFile { grid, channels, data })
}

// ------------------------------------------------------------------ manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub t: f64,
    pub path: PathBuf,
}

/// Ties together the files of one sequence. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub version: u32,
    pub scene: SceneSpec,
    pub trajectory: PathBuf,
    pub calibration: PathBuf,
    pub depth: Vec<FrameRef>,
    pub points: PathBuf,
    pub gt_mesh: PathBuf,
    pub gt_obbs: PathBuf,
    pub detections: PathBuf,
    /// Ground truth visible in each detection snippet, keyed by timestamp.
    pub snippet_gt: PathBuf,
    /// Local occupancy volumes, one per snippet, when exported.
    #[serde(default)]
    pub occupancy: Vec<FrameRef>,
}

impl SequenceManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads a manifest and resolves every path against its directory.
    pub fn load(path: &Path) -> Result<SequenceManifest> {
        let text = read_text(path)?;
        check_json_version(path, &text)?;
        let mut m: SequenceManifest = parse_json(path, &text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| *p = base.join(&*p);
        resolve(&mut m.trajectory);
        resolve(&mut m.calibration);
        resolve(&mut m.points);
        resolve(&mut m.gt_mesh);
        resolve(&mut m.gt_obbs);
        resolve(&mut m.detections);
        resolve(&mut m.snippet_gt);
        m.depth.iter_mut().for_each(|f| resolve(&mut f.path));
        m.occupancy.iter_mut().for_each(|f| resolve(&mut f.path));
        for (name, frames) in [("depth", &m.depth), ("occupancy", &m.occupancy)] {
            if frames.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(Error::parse(path, name, "timestamps must be strictly increasing"));
            }
        }
        let files = [&m.trajectory, &m.calibration, &m.points, &m.gt_mesh, &m.gt_obbs, &m.detections, &m.snippet_gt];
        for f in files.into_iter().chain(m.depth.iter().map(|f| &f.path)).chain(m.occupancy.iter().map(|f| &f.path)) {
            if !f.is_file() {
                return Err(Error::parse(path, "paths", format!("referenced file {} does not exist", f.display())));
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{FisheyeCamera, PinholeCamera};
    use crate::geom::{se3_exp, Tangent};
    use approx::assert_abs_diff_eq;
    use tempfile::tempdir;

    fn truncate(path: &Path, keep: usize) {
        let bytes = std::fs::read(path).unwrap();
        std::fs::write(path, &bytes[..keep.min(bytes.len())]).unwrap();
    }

    fn is_parse(r: &Result<impl std::fmt::Debug>) -> bool {
        matches!(r, Err(Error::Parse { .. }))
    }

    fn mesh() -> TriangleMesh {
        let mut m = TriangleMesh::cuboid(Vec3::new(-0.1, 0.2, 0.3), Vec3::new(1.0 / 3.0, 0.7, 2.0f64.sqrt()));
        m.vertices[0].x = 1e-300;
        m
    }

    #[test]
    fn mesh_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.ply");
        let m = mesh();
        write_mesh_ply(&p, &m).unwrap();
        assert_eq!(read_mesh_ply(&p).unwrap(), m);
        let bytes = std::fs::read(&p).unwrap();
        write_mesh_ply(&p, &read_mesh_ply(&p).unwrap()).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        let len = bytes.len();
        truncate(&p, len - 3);
        assert!(is_parse(&read_mesh_ply(&p)));
    }

    #[test]
    fn ply_reader_accepts_float_vertices_and_quads() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("q.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_index\nend_header\n".to_vec();
        for v in [[0f32, 0., 0.], [1., 0., 0.], [1., 1., 0.], [0., 1., 0.]] {
            v.iter().for_each(|c| bytes.extend_from_slice(&c.to_le_bytes()));
        }
        bytes.push(4);
        [0i32, 1, 2, 3].iter().for_each(|i| bytes.extend_from_slice(&i.to_le_bytes()));
        std::fs::write(&p, &bytes).unwrap();
        let m = read_mesh_ply(&p).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_abs_diff_eq!(m.area(), 1.0);
    }

    #[test]
    fn ply_rejects_other_versions_and_ascii() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.ply");
        std::fs::write(&p, "ply\nformat binary_little_endian 1.0\ncomment egobench 9\nelement vertex 0\nend_header\n").unwrap();
        assert!(matches!(read_mesh_ply(&p), Err(Error::VersionMismatch { .. })));
        std::fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n").unwrap();
        assert!(is_parse(&read_mesh_ply(&p)));
        std::fs::write(&p, "ply\nformat binary_little_endian 1.0\nelement vertex 1\n").unwrap();
        assert!(is_parse(&read_mesh_ply(&p)));
    }

    #[test]
    fn points_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("pts.ply");
        let pc = PointCloudWithVisibility {
            points: vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0, 2.5, 1e-9)],
            observers: vec![Vec3::new(0.0, 0.0, 1.5), Vec3::new(1.0, 0.0, 1.5)],
            visibility: vec![vec![0, 1], vec![1]],
        };
        write_points_ply(&p, &pc).unwrap();
        assert_eq!(read_points_ply(&p).unwrap(), pc);
        truncate(&p, std::fs::metadata(&p).unwrap().len() as usize - 8);
        assert!(is_parse(&read_points_ply(&p)));
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let poses: Vec<TimedPose> = (0..5)
            .map(|i| TimedPose {
                t: i as f64 * 0.1,
                pose: se3_exp(&Tangent::new(Vec3::new(0.1 * i as f64, -0.7, 2.9), Vec3::new(1.0, 2.0, i as f64 / 3.0))),
            })
            .collect();
        write_trajectory(&p, &poses).unwrap();
        let back = read_trajectory(&p).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.pose.translation, b.pose.translation);
            assert_abs_diff_eq!((a.pose.rotation.matrix() - b.pose.rotation.matrix()).norm(), 0.0, epsilon = 1e-14);
        }
        let text = std::fs::read_to_string(&p).unwrap();
        write_trajectory(&p, &back).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), text.lines().count());
        truncate(&p, text.len() - 10);
        assert!(is_parse(&read_trajectory(&p)));
        std::fs::write(&p, text.replace("# egobench-trajectory 1", "# egobench-trajectory 2")).unwrap();
        assert!(matches!(read_trajectory(&p), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn calibration_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("calib.json");
        for cam in [
            Camera::from(PinholeCamera::scannet()),
            FisheyeCamera::new(241.1, 240.9, 319.5, 318.7, [0.4, -0.5, 0.1, 0.01], 640, 640, 320.0).unwrap().into(),
        ] {
            write_calibration(&p, &cam).unwrap();
            assert_eq!(read_calibration(&p).unwrap(), cam);
        }
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace("\"version\": 1", "\"version\": 2")).unwrap();
        assert!(matches!(read_calibration(&p), Err(Error::VersionMismatch { .. })));
        truncate(&p, text.len() / 2);
        assert!(is_parse(&read_calibration(&p)));
    }

    #[test]
    fn depth_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.depth");
        let mut d = DepthMap::new(7, 3);
        d.set(2, 1, 1.25);
        d.set(6, 2, f32::MIN_POSITIVE);
        write_depth(&p, &d).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 4 * 21);
        assert_eq!(&std::fs::read(&p).unwrap()[..16], b"EGD1     7     3");
        assert_eq!(read_depth(&p).unwrap(), d);
        truncate(&p, 16 + 4 * 20 + 2);
        assert!(is_parse(&read_depth(&p)));
        truncate(&p, 10);
        assert!(is_parse(&read_depth(&p)));
        std::fs::write(&p, b"EGD2     0     0").unwrap();
        assert!(matches!(read_depth(&p), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn json_times_round_trip_exactly() {
        let frames: Vec<FrameRef> = (0..1000).map(|i| FrameRef { t: i as f64 * 0.1, path: format!("{i}").into() }).collect();
        let back: Vec<FrameRef> = serde_json::from_str(&serde_json::to_string(&frames).unwrap()).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
        }
    }

    #[test]
    fn obbs_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        let boxes = vec![
            Obb3::with_class(Vec3::new(0.1, 0.2, 0.3), 0.7, Vec3::new(1.0, 0.5, 0.25), 2, 4, 0.9).unwrap(),
            Obb3::new(Vec3::new(-1.0 / 3.0, 5.0, 0.5), -3.0, Vec3::new(0.3, 0.3, 0.3), vec![0.2, 0.7, 0.1], 0.55).unwrap(),
        ];
        write_obbs_jsonl(&p, [(0.5, &boxes[0]), (0.5, &boxes[1])]).unwrap();
        let back = read_obbs_jsonl(&p).unwrap();
        assert_eq!(back.iter().map(|(_, b)| b.clone()).collect::<Vec<_>>(), boxes);
        let text = std::fs::read_to_string(&p).unwrap();
        truncate(&p, text.len() - 5);
        assert!(is_parse(&read_obbs_jsonl(&p)));
        std::fs::write(&p, text.replacen("\"version\":1", "\"version\":3", 1)).unwrap();
        assert!(matches!(read_obbs_jsonl(&p), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn detection_stream_groups_by_time() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let b = Obb3::with_class(Vec3::zeros(), 0.0, Vec3::repeat(1.0), 0, 1, 0.9).unwrap();
        write_obbs_jsonl(&p, [(0.0, &b), (0.0, &b), (1.0, &b)]).unwrap();
        let s = read_detection_stream(&p).unwrap();
        assert_eq!(s.iter().map(|(t, v)| (*t, v.len())).collect::<Vec<_>>(), vec![(0.0, 2), (1.0, 1)]);
        write_obbs_jsonl(&p, [(1.0, &b), (0.0, &b)]).unwrap();
        assert!(is_parse(&read_detection_stream(&p)));
    }

    #[test]
    fn volume_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.vol");
        let pose = se3_exp(&Tangent::new(Vec3::new(0.0, 0.0, 0.4), Vec3::new(0.1, 0.2, 0.3)));
        let grid = VoxelGrid::new(pose, [2, 3, 4], 0.0625).unwrap();
        for data in [
            VolumeData::F32((0..48).map(|i| i as f32 / 7.0).collect()),
            VolumeData::F64((0..48).map(|i| (i as f64).sqrt()).collect()),
            VolumeData::U8((0..48).map(|i| (i % 2) as u8).collect()),
            VolumeData::U32((0..48).collect()),
        ] {
            let vol = VolumeFile { grid, channels: 2, data };
            write_volume(&p, &vol).unwrap();
            assert_eq!(read_volume(&p).unwrap(), vol);
        }
        let len = std::fs::metadata(&p).unwrap().len() as usize;
        truncate(&p, len - 1);
        assert!(is_parse(&read_volume(&p)));
        truncate(&p, 30);
        assert!(is_parse(&read_volume(&p)));
        let bad = VolumeFile { grid, channels: 1, data: VolumeData::U8(vec![0; 3]) };
        assert!(write_volume(&p, &bad).is_err());
    }

    #[test]
    fn manifest_checks_files_and_times() {
        let dir = tempdir().unwrap();
        let names = ["traj.csv", "calib.json", "pts.ply", "gt.ply", "gt.jsonl", "det.jsonl", "sgt.jsonl", "a.depth", "b.depth"];
        names.iter().for_each(|n| std::fs::write(dir.path().join(n), b"").unwrap());
        let mut m = SequenceManifest {
            version: FORMAT_VERSION,
            scene: SceneSpec::default(),
            trajectory: "traj.csv".into(),
            calibration: "calib.json".into(),
            depth: vec![FrameRef { t: 0.0, path: "a.depth".into() }, FrameRef { t: 0.1, path: "b.depth".into() }],
            points: "pts.ply".into(),
            gt_mesh: "gt.ply".into(),
            gt_obbs: "gt.jsonl".into(),
            detections: "det.jsonl".into(),
            snippet_gt: "sgt.jsonl".into(),
            occupancy: vec![],
        };
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        let loaded = SequenceManifest::load(&p).unwrap();
        assert_eq!(loaded.depth[1].path, dir.path().join("b.depth"));
        m.depth[1].t = 0.0;
        m.write(&p).unwrap();
        assert!(is_parse(&SequenceManifest::load(&p)));
        m.depth[1].t = 0.2;
        m.points = "missing.ply".into();
        m.write(&p).unwrap();
        assert!(is_parse(&SequenceManifest::load(&p)));
    }
}
