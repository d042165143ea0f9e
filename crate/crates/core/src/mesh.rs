//! Triangle meshes plus the two exact primitives built on them: ray-triangle
//! intersection and point-triangle distance.

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        TriangleMesh { vertices, faces }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    pub fn transformed(&self, pose: &crate::geom::Pose) -> TriangleMesh {
        TriangleMesh { vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(), faces: self.faces.clone() }
    }

    /// Checks index range and reports the first out-of-range face.
    pub fn check_indices(&self) -> Result<(), usize> {
        let n = self.vertices.len() as u32;
        match self.faces.iter().position(|f| f.iter().any(|&i| i >= n)) {
            Some(i) => Err(i),
            None => Ok(()),
        }
    }

    /// `V - E + F` with edges counted as unordered vertex pairs.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let used: std::collections::HashSet<u32> = self.faces.iter().flatten().copied().collect();
        used.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// Axis-aligned box `[min, max]`; faces wound outward.
    pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8u32 {
            vertices.push(Vec3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            ));
        }
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3], // z-
            [4, 5, 6],
            [5, 7, 6], // z+
            [0, 1, 4],
            [1, 5, 4], // y-
            [2, 6, 3],
            [3, 6, 7], // y+
            [0, 4, 2],
            [2, 4, 6], // x-
            [1, 3, 5],
            [3, 7, 5], // x+
        ];
        TriangleMesh { vertices, faces }
    }

    /// Same box as [`TriangleMesh::cuboid`] with faces wound inward.
    pub fn cuboid_inward(min: Vec3, max: Vec3) -> TriangleMesh {
        let mut m = Self::cuboid(min, max);
        m.faces.iter_mut().for_each(|f| f.swap(1, 2));
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Ray { origin, dir }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Moller-Trumbore; returns the ray parameter of a front- or back-face hit.
#[inline]
pub fn ray_triangle(ray: &Ray, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[inline]
pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    (closest_point_on_triangle(p, tri) - p).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tri() -> [Vec3; 3] {
        [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]
    }

    #[test]
    fn distance_cases() {
        let t = tri();
        assert_abs_diff_eq!(point_triangle_distance(&Vec3::new(0.2, 0.2, 0.0), &t), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(point_triangle_distance(&Vec3::new(0.2, 0.2, 0.7), &t), 0.7, epsilon = 1e-15);
        // vertex region
        assert_abs_diff_eq!(point_triangle_distance(&Vec3::new(-1.0, -1.0, 0.0), &t), 2f64.sqrt(), epsilon = 1e-15);
        // edge region (hypotenuse)
        let d = point_triangle_distance(&Vec3::new(1.0, 1.0, 0.0), &t);
        assert_abs_diff_eq!(d, 0.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn ray_hits() {
        let t = tri();
        let r = Ray::new(Vec3::new(0.25, 0.25, 2.0), Vec3::new(0.0, 0.0, -1.0));
        assert_abs_diff_eq!(ray_triangle(&r, &t).unwrap(), 2.0, epsilon = 1e-15);
        let r = Ray::new(Vec3::new(2.0, 2.0, 2.0), Vec3::new(0.0, 0.0, -1.0));
        assert!(ray_triangle(&r, &t).is_none());
        let r = Ray::new(Vec3::new(0.25, 0.25, 2.0), Vec3::new(0.0, 0.0, 1.0));
        assert!(ray_triangle(&r, &t).is_none());
    }

    #[test]
    fn cuboid_is_closed_and_outward() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(m.euler_characteristic(), 2);
        assert_abs_diff_eq!(m.area(), 2.0 * (2.0 + 3.0 + 6.0), epsilon = 1e-12);
        let center = Vec3::new(0.5, 1.0, 1.5);
        for f in 0..m.faces.len() {
            let [a, b, c] = m.triangle(f);
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&(a - center)) > 0.0, "face {f} wound inward");
        }
    }
}
