//! Marching cubes over a scalar volume laid out like a [`VoxelGrid`].
//!
//! The per-case triangle table is built once at first use. For every face of
//! the cube, the iso-contour segments are chosen so that corners at or above
//! the iso level are kept apart on ambiguous faces; since that choice only
//! depends on the four values of the shared face, adjacent cubes always agree
//! and the extracted surface has no cracks. The segments are chained into
//! closed loops around the cube and each loop is fan-triangulated.
//!
//! Triangles are wound so their normals point toward increasing values.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriangleMesh;
use crate::voxel::VoxelGrid;

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)` along
/// `(k, j, i)`, i.e. grid-frame `(x, y, z)`.
const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as corner pairs; the second corner has the one extra bit.
fn cube_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(12);
    for a in 0..8usize {
        for bit in [1usize, 2, 4] {
            if a & bit == 0 {
                edges.push((a, a | bit));
            }
        }
    }
    edges
}

/// Corners of each face in counter-clockwise order seen from outside.
fn cube_faces() -> Vec<[usize; 4]> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let bit = 1usize << axis;
        let (u, v) = (1usize << ((axis + 1) % 3), 1usize << ((axis + 2) % 3));
        for side in [0usize, bit] {
            let ring = [side, side | u, side | u | v, side | v];
            // for the +axis face, (u, v, axis) is right-handed so the ring is
            // already counter-clockwise from outside
            if side != 0 {
                faces.push(ring);
            } else {
                faces.push([ring[0], ring[3], ring[2], ring[1]]);
            }
        }
    }
    faces
}

struct Table {
    edges: Vec<(usize, usize)>,
    /// Triangles per case as triples of edge indices.
    cases: Vec<Vec<[u8; 3]>>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

fn build_table() -> Table {
    let edges = cube_edges();
    let faces = cube_faces();
    let edge_of = |a: usize, b: usize| -> usize {
        edges.iter().position(|&(x, y)| (x, y) == (a.min(b), a.max(b))).expect("face ring walks cube edges")
    };
    let mut cases = Vec::with_capacity(256);
    for case in 0..256usize {
        let above = |c: usize| case >> c & 1 == 1;
        // directed segments entry-edge -> exit-edge, one per run of above
        // corners along each face ring
        let mut next: HashMap<usize, usize> = HashMap::new();
        for ring in &faces {
            for s in 0..4 {
                let (a, b) = (ring[s], ring[(s + 1) % 4]);
                if above(a) || !above(b) {
                    continue;
                }
                // entering an above run at edge (a, b); walk to its end
                let mut t = (s + 1) % 4;
                while above(ring[(t + 1) % 4]) {
                    t = (t + 1) % 4;
                }
                let exit = edge_of(ring[t], ring[(t + 1) % 4]);
                next.insert(edge_of(a, b), exit);
            }
        }
        let mut tris = Vec::new();
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut seen = [false; 12];
        for start in starts {
            if seen[start] {
                continue;
            }
            let mut lp = vec![start];
            seen[start] = true;
            let mut e = next[&start];
            while e != start {
                seen[e] = true;
                lp.push(e);
                e = next[&e];
            }
            for w in 1..lp.len() - 1 {
                tris.push([lp[0] as u8, lp[w] as u8, lp[w + 1] as u8]);
            }
        }
        cases.push(tris);
    }

    // Loops all share one orientation; fix the winding globally using the
    // single-corner case, whose normal must point at the above corner.
    let pos = |e: usize| -> Vec3 {
        let (a, b) = edges[e];
        let (pa, pb) = (corner_offset(a), corner_offset(b));
        Vec3::new((pa[0] + pb[0]) as f64 / 2.0, (pa[1] + pb[1]) as f64 / 2.0, (pa[2] + pb[2]) as f64 / 2.0)
    };
    let t = cases[1][0];
    let (a, b, c) = (pos(t[0] as usize), pos(t[1] as usize), pos(t[2] as usize));
    let normal = (b - a).cross(&(c - a));
    if normal.dot(&(Vec3::zeros() - a)) < 0.0 {
        for tris in &mut cases {
            for t in tris.iter_mut() {
                t.swap(1, 2);
            }
        }
    }
    Table { edges, cases }
}

/// Extracts the `iso` level set of `values` (flat indices as in
/// [`VoxelGrid::flat_index`]), skipping every cube that touches a voxel with
/// fewer than `min_obs` observations. Vertices are in world coordinates and
/// shared between adjacent cubes; zero-area triangles are dropped.
pub fn marching_cubes<T: Copy + Into<f64>>(values: &[T], counts: &[u32], grid: &VoxelGrid, iso: f64, min_obs: u32) -> Result<TriangleMesh> {
    let [d, h, w] = grid.dims;
    if d < 2 || h < 2 || w < 2 {
        return Err(Error::VolumeTooSmall(grid.dims));
    }
    let n = grid.num_voxels();
    if values.len() != n || counts.len() != n {
        return Err(Error::ShapeMismatch(format!("marching cubes needs {n} values and counts, got {} and {}", values.len(), counts.len())));
    }
    let table = table();
    let mut mesh = TriangleMesh::default();
    // vertex per (lower corner voxel, axis)
    let mut vertex_of: HashMap<(usize, u8), u32> = HashMap::new();
    let offsets: Vec<usize> = (0..8)
        .map(|c| {
            let [dx, dy, dz] = corner_offset(c);
            grid.flat_index(dz, dy, dx)
        })
        .collect();

    for i in 0..d - 1 {
        for j in 0..h - 1 {
            for k in 0..w - 1 {
                let base = grid.flat_index(i, j, k);
                let mut vals = [0.0f64; 8];
                let mut case = 0usize;
                let mut valid = true;
                for c in 0..8 {
                    let v = base + offsets[c];
                    if counts[v] < min_obs {
                        valid = false;
                        break;
                    }
                    vals[c] = values[v].into();
                    if vals[c] >= iso {
                        case |= 1 << c;
                    }
                }
                if !valid || case == 0 || case == 255 {
                    continue;
                }
                for tri in &table.cases[case] {
                    let mut idx = [0u32; 3];
                    for (slot, &e) in idx.iter_mut().zip(tri) {
                        let (a, b) = table.edges[e as usize];
                        let key = (base + offsets[a], (a ^ b).trailing_zeros() as u8);
                        *slot = *vertex_of.entry(key).or_insert_with(|| {
                            let t = (iso - vals[a]) / (vals[b] - vals[a]);
                            let [ax, ay, az] = corner_offset(a);
                            let pa = grid.local_center(i + az, j + ay, k + ax);
                            let [bx, by, bz] = corner_offset(b);
                            let pb = grid.local_center(i + bz, j + by, k + bx);
                            mesh.vertices.push(grid.pose.transform_point(&(pa + (pb - pa) * t)));
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    if idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2] {
                        continue;
                    }
                    mesh.faces.push(idx);
                    if mesh.face_area(mesh.faces.len() - 1) <= 0.0 {
                        mesh.faces.pop();
                    }
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;

    #[test]
    fn table_shape() {
        let t = table();
        assert_eq!(t.edges.len(), 12);
        assert!(t.cases[0].is_empty() && t.cases[255].is_empty());
        for c in [1usize, 2, 4, 8, 16, 32, 64, 128] {
            assert_eq!(t.cases[c].len(), 1, "case {c}");
        }
        assert_eq!(t.cases[0b0000_0011].len(), 2);
        // every case's triangles use each crossing edge, and only those
        for (case, tris) in t.cases.iter().enumerate() {
            let crossing: Vec<usize> = (0..12)
                .filter(|&e| {
                    let (a, b) = t.edges[e];
                    (case >> a & 1) != (case >> b & 1)
                })
                .collect();
            let mut used: Vec<usize> = tris.iter().flatten().map(|e| *e as usize).collect();
            used.sort_unstable();
            used.dedup();
            assert_eq!(used, crossing, "case {case}");
        }
    }

    #[test]
    fn complementary_single_corner_cases_flip() {
        let t = table();
        let canon = |tr: [u8; 3]| {
            let r = (0..3).min_by_key(|&i| tr[i]).unwrap();
            [tr[r], tr[(r + 1) % 3], tr[(r + 2) % 3]]
        };
        for c in 0..8 {
            let one = canon(t.cases[1 << c][0]);
            let rest = t.cases[255 - (1 << c)][0];
            assert_eq!(canon([rest[0], rest[2], rest[1]]), one, "corner {c}");
        }
    }

    fn grid(n: usize) -> VoxelGrid {
        VoxelGrid::new(Pose::identity(), [n, n, n], 1.0).unwrap()
    }

    #[test]
    fn below_iso_is_empty() {
        let g = grid(3);
        let m = marching_cubes(&[-1.0f64; 27], &[10; 27], &g, 0.0, 1).unwrap();
        assert!(m.is_empty());
        assert!(marching_cubes(&[0.0f64], &[1], &grid(1), 0.0, 1).is_err());
        assert!(marching_cubes(&[0.0f64; 3], &[1; 27], &g, 0.0, 1).is_err());
    }

    #[test]
    fn single_cube_plane_is_a_quad() {
        let g = grid(2);
        let mut v = vec![0.0f64; 8];
        for (idx, val) in v.iter_mut().enumerate() {
            let (_, _, k) = g.unflatten(idx);
            *val = if k == 0 { -1.0 } else { 1.0 };
        }
        let m = marching_cubes(&v, &[1; 8], &g, 0.0, 1).unwrap();
        assert_eq!(m.faces.len(), 2);
        assert_eq!(m.vertices.len(), 4);
        for p in &m.vertices {
            assert!(p.x.abs() < 1e-12);
        }
        assert!((m.area() - 1.0).abs() < 1e-12);
        for f in 0..2 {
            let [a, b, c] = m.triangle(f);
            assert!((b - a).cross(&(c - a)).x > 0.0, "normal should point to +x");
        }
        assert!(marching_cubes(&v, &[1; 8], &g, 0.0, 2).unwrap().is_empty());
    }

    #[test]
    fn sphere_is_closed() {
        let n = 30;
        let g = VoxelGrid::new(Pose::identity(), [n, n, n], 0.1).unwrap();
        let v: Vec<f64> = (0..g.num_voxels()).map(|i| g.local_center_flat(i).norm() - 1.0).collect();
        let m = marching_cubes(&v, &vec![5; v.len()], &g, 0.0, 2).unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.check_indices().is_ok());
        for p in &m.vertices {
            assert!((p.norm() - 1.0).abs() < 0.1);
        }
        // outward normals: positive signed volume
        let vol: f64 = (0..m.faces.len())
            .map(|f| {
                let [a, b, c] = m.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        assert!((vol - 4.0 / 3.0 * std::f64::consts::PI).abs() < 0.1, "{vol}");
    }

    #[test]
    fn random_fields_are_watertight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let g = grid(6);
            let mut v: Vec<f64> = (0..g.num_voxels()).map(|_| rng.random_range(-1.0..1.0)).collect();
            // a below-iso shell keeps the surface away from the volume border
            for (idx, val) in v.iter_mut().enumerate() {
                let (i, j, k) = g.unflatten(idx);
                if [i, j, k].iter().any(|&x| x == 0 || x == 5) {
                    *val = -1.0;
                }
            }
            let m = marching_cubes(&v, &vec![1; v.len()], &g, 0.0, 1).unwrap();
            let mut edge_use: HashMap<(u32, u32), i32> = HashMap::new();
            for f in &m.faces {
                for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                    *edge_use.entry((a, b)).or_default() += 1;
                }
            }
            // every directed edge is matched by its reverse exactly once
            for (&(a, b), &cnt) in &edge_use {
                assert_eq!(cnt, 1);
                assert_eq!(edge_use.get(&(b, a)), Some(&1));
            }
        }
    }
}
