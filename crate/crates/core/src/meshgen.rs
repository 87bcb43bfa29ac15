//! Triangle meshes: symmetric lattice meshes of regular polygons, refined
//! ear-clipping meshes of general polygons, the interpolation constant C1 and
//! vertex-driven morphing.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::polygeom::{orient, regular_polygon, regular_vertex, CoarseTriangulation, HatFunctionSet, Point, Polygon};

/// Node permutations of a symmetric mesh: `rotation[v]` is the node at
/// `R_theta x_v`, `reflection[v]` the node at the mirror image of `x_v`
/// about the x-axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryMaps {
    pub rotation: Vec<usize>,
    pub reflection: Vec<usize>,
}

impl SymmetryMaps {
    /// `rotation` applied `j` times.
    pub fn rotation_power(&self, j: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..self.rotation.len()).collect();
        for _ in 0..j {
            p = p.iter().map(|&v| self.rotation[v]).collect();
        }
        p
    }
}

/// Conforming triangle mesh refining a coarse triangulation of a polygon.
#[derive(Clone, Debug)]
pub struct TriMesh {
    pub nodes: Vec<Point>,
    pub tris: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    /// Coarse cell (slice) containing each triangle.
    pub cell: Vec<usize>,
    /// Coarse cell and barycentric coordinates of each node in it.
    pub node_bary: Vec<(usize, [f64; 3])>,
    pub coarse: CoarseTriangulation,
    /// Median edge length of the reference subdivision (maximum over cells).
    pub h: f64,
    pub symmetry: Option<SymmetryMaps>,
    /// `(n, m)` for symmetric lattice meshes.
    pub lattice: Option<(usize, usize)>,
}

/// Largest node count accepted by the mesh generators.
pub const MAX_NODES: u128 = u32::MAX as u128;

/// Node count `1 + n m (m + 1) / 2` of `symmetric_mesh(n, m)`.
pub fn symmetric_node_count(n: usize, m: usize) -> u128 {
    1 + n as u128 * m as u128 * (m as u128 + 1) / 2
}

/// Global index of lattice point `(i, k)` of slice `j`, where the point is
/// `(i a_j + k a_{j+1}) / m`.
pub fn lattice_index(n: usize, m: usize, j: usize, i: usize, k: usize) -> usize {
    debug_assert!(i + k <= m);
    if i == 0 && k == 0 {
        return 0;
    }
    if i == 0 {
        return lattice_index(n, m, (j + 1) % n, k, 0);
    }
    let off = (i - 1) * (m + 1) - (i - 1) * i / 2 + k;
    1 + (j % n) * (m * (m + 1) / 2) + off
}

/// Symmetric mesh of the regular n-gon: slice `T_j` is cut into `m^2`
/// triangles similar to `T_j / m`.
pub fn symmetric_mesh(n: usize, m: usize) -> Result<TriMesh> {
    if n < 3 || m < 1 {
        return Err(Error::InvalidArgument(format!("symmetric mesh needs n >= 3, m >= 1 (got {n}, {m})")));
    }
    let count = symmetric_node_count(n, m);
    if count > MAX_NODES {
        return Err(Error::Resource { required: count, limit: MAX_NODES });
    }
    let nn = count as usize;
    let poly = regular_polygon(n)?;
    let a: Vec<Point> = (0..n).map(|j| regular_vertex(n, j)).collect();
    let mf = m as f64;
    let mut nodes = vec![[0.0; 2]; nn];
    let mut node_bary = vec![(0usize, [1.0, 0.0, 0.0]); nn];
    let mut boundary = vec![false; nn];
    let mut rotation = vec![0usize; nn];
    let mut reflection = vec![0usize; nn];
    for j in 0..n {
        let (p, q) = (a[j], a[(j + 1) % n]);
        for i in 1..=m {
            for k in 0..=m - i {
                let v = lattice_index(n, m, j, i, k);
                let (bi, bk) = (i as f64 / mf, k as f64 / mf);
                nodes[v] = [bi * p[0] + bk * q[0], bi * p[1] + bk * q[1]];
                if k == 0 {
                    nodes[v] = [bi * p[0], bi * p[1]];
                }
                node_bary[v] = (j, [1.0 - (i + k) as f64 / mf, bi, bk]);
                boundary[v] = i + k == m;
                rotation[v] = lattice_index(n, m, (j + 1) % n, i, k);
                reflection[v] = if k == 0 {
                    lattice_index(n, m, (n - j) % n, i, 0)
                } else {
                    lattice_index(n, m, n - 1 - j, k, i)
                };
            }
        }
    }
    let mut tris = Vec::with_capacity(n * m * m);
    let mut cell = Vec::with_capacity(n * m * m);
    for j in 0..n {
        for i in 0..m {
            for k in 0..m - i {
                let l = |a: usize, b: usize| lattice_index(n, m, j, a, b);
                tris.push([l(i, k), l(i + 1, k), l(i, k + 1)]);
                cell.push(j);
                if i + k + 2 <= m {
                    tris.push([l(i + 1, k), l(i + 1, k + 1), l(i, k + 1)]);
                    cell.push(j);
                }
            }
        }
    }
    let coarse = CoarseTriangulation::fan(&poly, [0.0, 0.0]);
    let h = median_edge(coarse.nodes[n], a[0], a[1]) / mf;
    Ok(TriMesh {
        nodes,
        tris,
        boundary,
        cell,
        node_bary,
        coarse,
        h,
        symmetry: Some(SymmetryMaps { rotation, reflection }),
        lattice: Some((n, m)),
    })
}

/// Interpolates a nodal field from `symmetric_mesh(n, m)` to `symmetric_mesh(n, 2m)`.
pub fn prolong_symmetric(n: usize, m: usize, coarse: &[f64]) -> Vec<f64> {
    let fm = 2 * m;
    let mut fine = vec![0.0; symmetric_node_count(n, fm) as usize];
    fine[0] = coarse[0];
    let c = |j: usize, i: usize, k: usize| coarse[lattice_index(n, m, j, i, k)];
    for j in 0..n {
        for i in 1..=fm {
            for k in 0..=fm - i {
                let v = lattice_index(n, fm, j, i, k);
                fine[v] = match (i % 2, k % 2) {
                    (0, 0) => c(j, i / 2, k / 2),
                    (1, 0) => 0.5 * (c(j, (i - 1) / 2, k / 2) + c(j, (i + 1) / 2, k / 2)),
                    (0, 1) => 0.5 * (c(j, i / 2, (k - 1) / 2) + c(j, i / 2, (k + 1) / 2)),
                    _ => 0.5 * (c(j, (i - 1) / 2, (k + 1) / 2) + c(j, (i + 1) / 2, (k - 1) / 2)),
                };
            }
        }
    }
    fine
}

fn median_edge(a: Point, b: Point, c: Point) -> f64 {
    let mut e = [dist(a, b), dist(b, c), dist(c, a)];
    e.sort_by(|x, y| x.partial_cmp(y).unwrap());
    e[1]
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn bary_of(p: Point, t: [Point; 3]) -> [f64; 3] {
    let det = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
    let l1 = ((p[0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (p[1] - t[0][1])) / det;
    let l2 = ((t[1][0] - t[0][0]) * (p[1] - t[0][1]) - (p[0] - t[0][0]) * (t[1][1] - t[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

impl TriMesh {
    /// Mesh whose triangles are the coarse cells themselves.
    pub fn from_coarse(coarse: CoarseTriangulation) -> Result<Self> {
        let nodes = coarse.nodes.clone();
        let nn = nodes.len();
        let tris = coarse.tris.clone();
        let mut node_bary = vec![(usize::MAX, [0.0; 3]); nn];
        for (c, t) in tris.iter().enumerate() {
            for a in 0..3 {
                if node_bary[t[a]].0 == usize::MAX {
                    let mut b = [0.0; 3];
                    b[a] = 1.0;
                    node_bary[t[a]] = (c, b);
                }
            }
        }
        let h = tris
            .iter()
            .map(|t| median_edge(nodes[t[0]], nodes[t[1]], nodes[t[2]]))
            .fold(0.0, f64::max);
        let mut mesh = Self {
            cell: (0..tris.len()).collect(),
            nodes,
            tris,
            boundary: vec![false; nn],
            node_bary,
            coarse,
            h,
            symmetry: None,
            lattice: None,
        };
        mesh.mark_boundary();
        mesh.validate()?;
        Ok(mesh)
    }

    fn mark_boundary(&mut self) {
        let mut count: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.tris {
            for a in 0..3 {
                let (p, q) = (t[a], t[(a + 1) % 3]);
                *count.entry((p.min(q), p.max(q))).or_default() += 1;
            }
        }
        self.boundary = vec![false; self.nodes.len()];
        for ((p, q), c) in count {
            if c == 1 {
                self.boundary[p] = true;
                self.boundary[q] = true;
            }
        }
    }

    /// Uniform midpoint refinement; returns the parent pair of each new node.
    pub fn refine(&self) -> (TriMesh, Vec<(usize, usize)>) {
        let mut nodes = self.nodes.clone();
        let mut node_bary = self.node_bary.clone();
        let mut parents: Vec<(usize, usize)> = (0..nodes.len()).map(|v| (v, v)).collect();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tris = Vec::with_capacity(4 * self.tris.len());
        let mut cell = Vec::with_capacity(4 * self.tris.len());
        for (t, c) in self.tris.iter().zip(&self.cell) {
            let mut mids = [0usize; 3];
            for a in 0..3 {
                let (p, q) = (t[a], t[(a + 1) % 3]);
                let key = (p.min(q), p.max(q));
                mids[a] = *mid.entry(key).or_insert_with(|| {
                    let (x, y) = (nodes[p], nodes[q]);
                    let pt = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
                    let ct = self.coarse.tris[*c];
                    let b = bary_of(pt, [self.coarse.nodes[ct[0]], self.coarse.nodes[ct[1]], self.coarse.nodes[ct[2]]]);
                    nodes.push(pt);
                    node_bary.push((*c, b));
                    parents.push(key);
                    nodes.len() - 1
                });
            }
            let [a, b, d] = *t;
            let [ab, bd, da] = mids;
            tris.extend_from_slice(&[[a, ab, da], [ab, b, bd], [da, bd, d], [ab, bd, da]]);
            cell.extend_from_slice(&[*c; 4]);
        }
        let mut fine = TriMesh {
            nodes,
            tris,
            boundary: Vec::new(),
            cell,
            node_bary,
            coarse: self.coarse.clone(),
            h: 0.5 * self.h,
            symmetry: None,
            lattice: None,
        };
        fine.mark_boundary();
        (fine, parents)
    }

    pub fn triangle(&self, t: usize) -> [Point; 3] {
        let v = self.tris[t];
        [self.nodes[v[0]], self.nodes[v[1]], self.nodes[v[2]]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn area(&self) -> f64 {
        self.tris.iter().enumerate().map(|(t, _)| self.triangle_area(t)).sum()
    }

    pub fn num_cells(&self) -> usize {
        self.coarse.tris.len()
    }

    /// Checks orientation of every triangle.
    pub fn validate(&self) -> Result<()> {
        for (t, v) in self.tris.iter().enumerate() {
            if orient(self.nodes[v[0]], self.nodes[v[1]], self.nodes[v[2]]) <= 0 {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate or inverted")));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated edge list.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .tris
            .iter()
            .flat_map(|t| (0..3).map(move |a| (t[a].min(t[(a + 1) % 3]), t[a].max(t[(a + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Text dump with `nodes`, `triangles` and `boundary` sections.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.17e} {:.17e}", p[0], p[1]);
        }
        let _ = writeln!(s, "triangles {}", self.tris.len());
        for t in &self.tris {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let b: Vec<usize> = (0..self.nodes.len()).filter(|&v| self.boundary[v]).collect();
        let _ = writeln!(s, "boundary {}", b.len());
        for v in b {
            let _ = writeln!(s, "{v}");
        }
        s
    }
}

/// Ear-clipping triangulation of `p` followed by `levels` midpoint refinements.
pub fn fan_refined_mesh(p: &Polygon, levels: usize) -> Result<TriMesh> {
    if !crate::polygeom::is_simple(p.vertices()) {
        return Err(Error::InvalidArgument("polygon is not simple".into()));
    }
    let mut mesh = TriMesh::from_coarse(CoarseTriangulation::ear_clip(p))?;
    for _ in 0..levels {
        mesh = mesh.refine().0;
    }
    Ok(mesh)
}

/// Interpolation-constant factor `C(T)` of a triangle.
pub fn triangle_constant(t: [Point; 3]) -> Result<f64> {
    let area = 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]));
    if area.abs() <= 0.0 || !area.is_finite() {
        return Err(Error::InvalidMesh("degenerate triangle".into()));
    }
    // Edge a is opposite vertex a.
    let mut e: Vec<(f64, usize)> = (0..3).map(|a| (dist(t[(a + 1) % 3], t[(a + 2) % 3]), a)).collect();
    e.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (short, si) = e[0];
    let (median, mi) = e[1];
    // The shortest and median edges meet at the vertex opposite the longest.
    let apex = 3 - si - mi;
    let u = [t[(apex + 1) % 3][0] - t[apex][0], t[(apex + 1) % 3][1] - t[apex][1]];
    let v = [t[(apex + 2) % 3][0] - t[apex][0], t[(apex + 2) % 3][1] - t[apex][1]];
    let tau = (u[0] * v[1] - u[1] * v[0]).abs().atan2(u[0] * v[0] + u[1] * v[1]);
    let alpha = short / median;
    Ok(c_of(median, alpha, tau))
}

/// `0.493 L (1 + a^2 + r) / sqrt(2 (1 + a^2 - r))`, `r = sqrt(1 + 2 a^2 cos 2 tau + a^4)`.
pub fn c_of(l: f64, alpha: f64, tau: f64) -> f64 {
    let a2 = alpha * alpha;
    let r = (1.0 + 2.0 * a2 * (2.0 * tau).cos() + a2 * a2).sqrt();
    0.493 * l * (1.0 + a2 + r) / (2.0 * (1.0 + a2 - r)).sqrt()
}

/// `C1 = max_T C(T) / h`.
pub fn mesh_constant_c1(mesh: &TriMesh) -> Result<f64> {
    let mut c: f64 = 0.0;
    for t in 0..mesh.tris.len() {
        c = c.max(triangle_constant(mesh.triangle(t))?);
    }
    Ok(c / mesh.h)
}

/// Moves every node by `theta(x) = sum_i d_i phi_i(x)`; connectivity and
/// barycentric data are kept.
pub fn morph_mesh(mesh: &TriMesh, hats: &HatFunctionSet, d: &[f64]) -> Result<TriMesh> {
    let n = hats.n();
    if d.len() != 2 * n {
        return Err(Error::InvalidArgument(format!("displacement length {} != {}", d.len(), 2 * n)));
    }
    if hats.coarse.tris != mesh.coarse.tris {
        return Err(Error::InvalidArgument("hat set does not match mesh coarse cells".into()));
    }
    let new_coarse: Vec<Point> = mesh
        .coarse
        .nodes
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let dp = hats.node_displacement(k, d);
            [p[0] + dp[0], p[1] + dp[1]]
        })
        .collect();
    let nodes: Vec<Point> = mesh
        .node_bary
        .iter()
        .zip(&mesh.nodes)
        .map(|(&(c, b), x)| {
            let t = mesh.coarse.tris[c];
            let mut q = *x;
            for a in 0..3 {
                let (o, w) = (mesh.coarse.nodes[t[a]], new_coarse[t[a]]);
                q[0] += b[a] * (w[0] - o[0]);
                q[1] += b[a] * (w[1] - o[1]);
            }
            q
        })
        .collect();
    let mut coarse = mesh.coarse.clone();
    coarse.nodes = new_coarse;
    let out = TriMesh {
        nodes,
        tris: mesh.tris.clone(),
        boundary: mesh.boundary.clone(),
        cell: mesh.cell.clone(),
        node_bary: mesh.node_bary.clone(),
        coarse,
        h: mesh.h,
        symmetry: None,
        lattice: None,
    };
    out.validate().map_err(|e| Error::StepTooLarge(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polygeom::{polygon_area, HatWeights};
    use std::collections::HashSet;

    fn tri_set(mesh: &TriMesh, perm: &[usize]) -> HashSet<[usize; 3]> {
        mesh.tris
            .iter()
            .map(|t| {
                let mut s = [perm[t[0]], perm[t[1]], perm[t[2]]];
                s.sort();
                s
            })
            .collect()
    }

    #[test]
    fn symmetric_mesh_counts() {
        let m = symmetric_mesh(5, 1).unwrap();
        assert_eq!((m.tris.len(), m.nodes.len()), (5, 6));
        assert_eq!(symmetric_node_count(5, 10_000), 250_025_001);
        assert!(matches!(symmetric_mesh(5, 200_000), Err(Error::Resource { .. })));
        for (n, k) in [(3, 4), (5, 7), (6, 3)] {
            let m = symmetric_mesh(n, k).unwrap();
            assert_eq!(m.tris.len(), n * k * k);
            assert_eq!(m.nodes.len() as u128, symmetric_node_count(n, k));
            for j in 0..n {
                assert_eq!(m.cell.iter().filter(|&&c| c == j).count(), k * k);
            }
            m.validate().unwrap();
        }
    }

    #[test]
    fn symmetric_mesh_is_invariant() {
        for (n, k) in [(5, 6), (6, 5), (4, 3)] {
            let m = symmetric_mesh(n, k).unwrap();
            let s = m.symmetry.as_ref().unwrap();
            let id: Vec<usize> = (0..m.nodes.len()).collect();
            assert_eq!(s.rotation_power(n), id);
            let r2: Vec<usize> = s.reflection.iter().map(|&v| s.reflection[v]).collect();
            assert_eq!(r2, id);
            let base = tri_set(&m, &id);
            assert_eq!(tri_set(&m, &s.rotation), base);
            assert_eq!(tri_set(&m, &s.reflection), base);
            let th = 2.0 * std::f64::consts::PI / n as f64;
            for v in 0..m.nodes.len() {
                let p = m.nodes[v];
                let q = m.nodes[s.rotation[v]];
                let rp = [th.cos() * p[0] - th.sin() * p[1], th.sin() * p[0] + th.cos() * p[1]];
                assert!((rp[0] - q[0]).abs() < 1e-14 && (rp[1] - q[1]).abs() < 1e-14);
                let f = m.nodes[s.reflection[v]];
                assert!((f[0] - p[0]).abs() < 1e-14 && (f[1] + p[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_mesh_area_and_h() {
        for n in [3, 5, 8] {
            let a = polygon_area(&regular_polygon(n).unwrap());
            let m = symmetric_mesh(n, 9).unwrap();
            assert!((m.area() - a).abs() < 1e-12 * a);
            let boundary_count = m.boundary.iter().filter(|&&b| b).count();
            assert_eq!(boundary_count, n * 9);
        }
        let h1 = symmetric_mesh(5, 8).unwrap().h;
        let h2 = symmetric_mesh(5, 16).unwrap().h;
        assert_eq!(h1, 2.0 * h2);
    }

    #[test]
    fn prolongation_reproduces_linear_fields() {
        let (n, m) = (5, 4);
        let c = symmetric_mesh(n, m).unwrap();
        let f = symmetric_mesh(n, 2 * m).unwrap();
        let lin = |p: Point| 0.3 + 2.0 * p[0] - 1.5 * p[1];
        let vc: Vec<f64> = c.nodes.iter().map(|&p| lin(p)).collect();
        let vf = prolong_symmetric(n, m, &vc);
        for (p, v) in f.nodes.iter().zip(&vf) {
            assert!((lin(*p) - v).abs() < 1e-13);
        }
    }

    #[test]
    fn fan_refined_examples() {
        let quad = Polygon::new(vec![[0.0, 0.0], [2.0, 0.0], [2.5, 1.0], [0.0, 1.5]]).unwrap();
        assert_eq!(fan_refined_mesh(&quad, 0).unwrap().tris.len(), 2);
        for k in 0..4 {
            assert_eq!(fan_refined_mesh(&quad, k).unwrap().tris.len(), 2 * 4usize.pow(k as u32));
        }
        let l = Polygon::new(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]]).unwrap();
        let m = fan_refined_mesh(&l, 3).unwrap();
        m.validate().unwrap();
        assert!((m.area() - polygon_area(&l)).abs() < 1e-12 * 3.0);
        let b = m.boundary.iter().filter(|&&b| b).count();
        assert_eq!(b, 6 * 8);
        let h0 = fan_refined_mesh(&l, 1).unwrap().h;
        assert_eq!(fan_refined_mesh(&l, 2).unwrap().h, 0.5 * h0);
    }

    #[test]
    fn c1_examples() {
        let h = 0.25;
        let t = [[0.0, 0.0], [h, 0.0], [0.0, h]];
        // alpha = 1, tau = pi/2: r = 0, C = 0.493 h * 2 / sqrt(4).
        let direct = 0.493 * h * 2.0 / 2.0;
        assert!((triangle_constant(t).unwrap() - direct).abs() < 1e-15);
        assert!(triangle_constant([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
        let c8 = mesh_constant_c1(&symmetric_mesh(5, 8).unwrap()).unwrap();
        let c16 = mesh_constant_c1(&symmetric_mesh(5, 16).unwrap()).unwrap();
        assert!((c8 - c16).abs() < 1e-12 * c8);
        let m = symmetric_mesh(5, 3).unwrap();
        let brute = (0..m.tris.len()).map(|t| triangle_constant(m.triangle(t)).unwrap()).fold(0.0, f64::max) / m.h;
        assert_eq!(brute, mesh_constant_c1(&m).unwrap());
    }

    #[test]
    fn morph_examples() {
        let p = regular_polygon(5).unwrap();
        let m = symmetric_mesh(5, 4).unwrap();
        for w in [HatWeights::SliceFan, HatWeights::BalancedFan] {
            let hats = HatFunctionSet::with_weights(m.coarse.clone(), w).unwrap();
            let same = morph_mesh(&m, &hats, &[0.0; 10]).unwrap();
            assert_eq!(same.nodes, m.nodes);
            let tx: Vec<f64> = (0..10).map(|k| if k % 2 == 0 { 1e-3 } else { 0.0 }).collect();
            let moved = morph_mesh(&m, &hats, &tx).unwrap();
            let bnd: Vec<usize> = (0..m.nodes.len()).filter(|&v| m.boundary[v]).collect();
            for &v in &bnd {
                assert!((moved.nodes[v][0] - m.nodes[v][0] - 1e-3).abs() < 1e-15);
            }
            if w == HatWeights::BalancedFan {
                for v in 0..m.nodes.len() {
                    assert!((moved.nodes[v][0] - m.nodes[v][0] - 1e-3).abs() < 1e-15);
                    assert!((moved.nodes[v][1] - m.nodes[v][1]).abs() < 1e-15);
                }
            }
            let mut d = vec![0.0; 10];
            d[2] = 0.05;
            let mm = morph_mesh(&m, &hats, &d).unwrap();
            let q = p.displaced(&d).unwrap();
            assert!((mm.area() - polygon_area(&q)).abs() < 1e-13);
            let mut big = vec![0.0; 10];
            big[0] = -3.0;
            assert!(matches!(morph_mesh(&m, &hats, &big), Err(Error::StepTooLarge(_))));
        }
    }

    #[test]
    fn dump_has_sections() {
        let s = symmetric_mesh(3, 1).unwrap().dump();
        assert!(s.starts_with("nodes 4\n"));
        assert!(s.contains("triangles 3\n") && s.contains("boundary 3\n"));
    }
}
