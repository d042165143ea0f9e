//! Bounding-volume hierarchy over mesh triangles.
//!
//! Used for nearest-triangle distance queries (surface metrics) and
//! first-hit ray casts (depth rendering, visibility). Both queries return
//! exactly what a loop over every triangle would.

use crate::geom::Vec3;
use crate::mesh::{point_triangle_distance, ray_triangle, Ray, TriangleMesh};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    /// Slab test; entry parameter if the ray meets the box before `t_max`.
    fn ray_entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.min[a] - origin[a]) * inv_dir[a];
            let mut far = (self.max[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN from 0 * inf means the ray lies in the slab plane; keep it
            if !near.is_nan() {
                t0 = t0.max(near);
            }
            if !far.is_nan() {
                t1 = t1.min(far);
            }
            if t0 > t1 * (1.0 + 1e-12) + 1e-12 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bvh {
    triangles: Vec<[Vec3; 3]>,
    /// Original face index of each entry in `triangles`.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: usize,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Bvh {
        let n = mesh.faces.len();
        let all: Vec<[Vec3; 3]> = (0..n).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Vec3> = all.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(&all, &centroids, &mut order, 0, n, &mut nodes);
        }
        let triangles = order.iter().map(|&i| all[i]).collect();
        Bvh { triangles, order, nodes }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Distance from `p` to the nearest triangle and that triangle's index.
    pub fn nearest(&self, p: &Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds().distance_squared(p) >= best.0 * best.0 {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for k in start..end {
                        let d = point_triangle_distance(p, &self.triangles[k]);
                        if d < best.0 || (d == best.0 && self.order[k] < best.1) {
                            best = (d, self.order[k]);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(p);
                    let dr = self.nodes[right].bounds().distance_squared(p);
                    // visit the closer child first
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some(best)
    }

    /// First intersection along the ray.
    pub fn first_hit(&self, ray: &Ray) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let t_max = best.map_or(f64::INFINITY, |h| h.t);
            let node = &self.nodes[i];
            if node.bounds().ray_entry(&ray.origin, &inv, t_max).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for k in start..end {
                        if let Some(t) = ray_triangle(ray, &self.triangles[k]) {
                            let face = self.order[k];
                            let better = match best {
                                None => true,
                                Some(h) => t < h.t || (t == h.t && face < h.face),
                            };
                            if better {
                                best = Some(Hit { t, face });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }
}

fn build_node(tris: &[[Vec3; 3]], centroids: &[Vec3], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let mut bounds = Aabb::empty();
    let mut cb = Aabb::empty();
    for &i in &order[start..end] {
        for v in &tris[i] {
            bounds.grow(v);
        }
        cb.grow(&centroids[i]);
    }
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let extent = cb.max - cb.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis].partial_cmp(&centroids[b][axis]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end }); // placeholder
    let left = build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    let mut merged = *nodes[left].bounds();
    merged.merge(nodes[right].bounds());
    nodes[idx] = Node::Inner { bounds: merged, left, right };
    idx
}

/// Reference nearest-triangle search over every face.
pub fn brute_force_nearest(mesh: &TriangleMesh, p: &Vec3) -> Option<(f64, usize)> {
    (0..mesh.faces.len())
        .map(|f| (point_triangle_distance(p, &mesh.triangle(f)), f))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
}

/// Reference first-hit search over every face.
pub fn brute_force_first_hit(mesh: &TriangleMesh, ray: &Ray) -> Option<Hit> {
    (0..mesh.faces.len())
        .filter_map(|f| ray_triangle(ray, &mesh.triangle(f)).map(|t| Hit { t, face: f }))
        .min_by(|a, b| a.t.partial_cmp(&b.t).unwrap().then(a.face.cmp(&b.face)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_soup(rng: &mut ChaCha8Rng, n: usize) -> TriangleMesh {
        let mut m = TriangleMesh::default();
        for i in 0..n {
            let c = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            for _ in 0..3 {
                m.vertices.push(c + Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
            }
            let b = 3 * i as u32;
            m.faces.push([b, b + 1, b + 2]);
        }
        m
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mesh = random_soup(&mut rng, 500);
        let bvh = Bvh::build(&mesh);
        for _ in 0..1000 {
            let p = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (d, _) = bvh.nearest(&p).unwrap();
            let (e, _) = brute_force_nearest(&mesh, &p).unwrap();
            assert!((d - e).abs() <= 1e-9, "{d} vs {e}");
        }
    }

    #[test]
    fn first_hit_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mesh = random_soup(&mut rng, 300);
        let bvh = Bvh::build(&mesh);
        for _ in 0..2000 {
            let o = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let ray = Ray::new(o, d);
            assert_eq!(bvh.first_hit(&ray), brute_force_first_hit(&mesh, &ray));
        }
    }

    #[test]
    fn axis_parallel_rays_hit_boxes() {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let bvh = Bvh::build(&mesh);
        let ray = Ray::new(Vec3::new(0.5, 0.5, 5.0), Vec3::new(0.0, 0.0, -1.0));
        assert!((bvh.first_hit(&ray).unwrap().t - 4.0).abs() < 1e-12);
        // grazing along a face plane
        let ray = Ray::new(Vec3::new(0.0, 0.5, 5.0), Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(bvh.first_hit(&ray), brute_force_first_hit(&mesh, &ray));
    }

    #[test]
    fn empty_mesh() {
        let bvh = Bvh::build(&TriangleMesh::default());
        assert!(bvh.nearest(&Vec3::zeros()).is_none());
        assert!(bvh.first_hit(&Ray::new(Vec3::zeros(), Vec3::x())).is_none());
    }
}
