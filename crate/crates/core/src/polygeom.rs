//! Polygon geometry: areas, area derivatives, vertex hat functions and the
//! rigid-motion/scaling kernel of the regular polygon.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Sign of the orientation determinant of `(a, b, c)`, computed exactly.
pub fn orient(a: Point, b: Point, c: Point) -> i8 {
    let d = robust::orient2d(
        robust::Coord { x: a[0], y: a[1] },
        robust::Coord { x: b[0], y: b[1] },
        robust::Coord { x: c[0], y: c[1] },
    );
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

fn on_closed_segment(p: Point, a: Point, b: Point) -> bool {
    orient(a, b, p) == 0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0 {
        return true;
    }
    on_closed_segment(c, a, b)
        || on_closed_segment(d, a, b)
        || on_closed_segment(a, c, d)
        || on_closed_segment(b, c, d)
}

/// True iff the closed polygonal chain has no self-intersection. Exact
/// predicates with zero tie tolerance: any touching is rejected.
pub fn is_simple(vertices: &[Point]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if vertices[i] == vertices[j] {
                return false;
            }
        }
    }
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        for j in i + 1..n {
            let (c, d) = (vertices[j], vertices[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Shared endpoint; reject collinear fold-back.
                let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if orient(p, shared, q) == 0 {
                    let dot = (p[0] - shared[0]) * (q[0] - shared[0])
                        + (p[1] - shared[1]) * (q[1] - shared[1]);
                    if dot > 0.0 {
                        return false;
                    }
                }
                if n == 3 && orient(a, b, vertices[(i + 2) % 3]) == 0 {
                    return false;
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (v[i], v[(i + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

/// Simple, counter-clockwise polygon with no zero-length edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!("polygon needs n >= 3, got {n}")));
        }
        if vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidArgument("non-finite vertex".into()));
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::InvalidArgument(format!("zero-length edge at vertex {i}")));
            }
        }
        if !is_simple(&vertices) {
            return Err(Error::InvalidArgument("polygon is not simple".into()));
        }
        if signed_area(&vertices) <= 0.0 {
            return Err(Error::InvalidArgument("polygon is not counter-clockwise".into()));
        }
        Ok(Self { vertices })
    }

    /// Builds from interleaved coordinates `(x0, y0, x1, y1, ...)`.
    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        if coords.len() % 2 != 0 {
            return Err(Error::InvalidArgument("odd coordinate count".into()));
        }
        Self::new(coords.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i % self.n()]
    }

    pub fn coords(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    /// Vertices displaced by `d` (interleaved); validated.
    pub fn displaced(&self, d: &[f64]) -> Result<Self> {
        let c: Vec<f64> = self.coords().iter().zip(d).map(|(a, b)| a + b).collect();
        Self::from_coords(&c)
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.vertices.iter().map(|p| [t * p[0], t * p[1]]).collect())
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let (p, q) = (self.vertices[i], self.vertices[(i + 1) % n]);
                (q[0] - p[0]).hypot(q[1] - p[1])
            })
            .collect()
    }

    /// Interior angles in radians.
    pub fn angles(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let p = self.vertices[(i + n - 1) % n];
                let c = self.vertices[i];
                let q = self.vertices[(i + 1) % n];
                let (ux, uy) = (q[0] - c[0], q[1] - c[1]);
                let (vx, vy) = (p[0] - c[0], p[1] - c[1]);
                let a = (ux * vy - uy * vx).atan2(ux * vx + uy * vy);
                if a < 0.0 {
                    a + 2.0 * PI
                } else {
                    a
                }
            })
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for p in &self.vertices {
            for q in &self.vertices {
                d = d.max((p[0] - q[0]).hypot(p[1] - q[1]));
            }
        }
        d
    }

    pub fn is_convex(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| {
            orient(self.vertices[i], self.vertices[(i + 1) % n], self.vertices[(i + 2) % n]) > 0
        })
    }

    /// Parses one `x y` vertex per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut v = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::Parse(format!("line {}: expected two numbers", ln + 1)));
            }
            let x = parts[0].parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))?;
            let y = parts[1].parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))?;
            v.push([x, y]);
        }
        Self::new(v)
    }

    /// One `x y` line per vertex with round-trip precision.
    pub fn to_text(&self) -> String {
        self.vertices.iter().map(|p| format!("{:?} {:?}\n", p[0], p[1])).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Regular n-gon inscribed in the unit circle with vertex 0 at (1, 0).
pub fn regular_polygon(n: usize) -> Result<Polygon> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("regular polygon needs n >= 3, got {n}")));
    }
    Polygon::new((0..n).map(|j| regular_vertex(n, j)).collect())
}

/// Vertex `j` of the regular n-gon; exact at the axis-aligned angles and
/// bitwise symmetric about the x-axis.
pub fn regular_vertex(n: usize, j: usize) -> Point {
    let j = j % n;
    if 2 * j > n {
        let [x, y] = regular_vertex(n, n - j);
        return [x, -y];
    }
    if 4 * j % n == 0 {
        return match 4 * j / n {
            0 => [1.0, 0.0],
            1 => [0.0, 1.0],
            2 => [-1.0, 0.0],
            _ => [0.0, -1.0],
        };
    }
    let t = 2.0 * PI * j as f64 / n as f64;
    [t.cos(), t.sin()]
}

pub fn polygon_area(p: &Polygon) -> f64 {
    signed_area(p.vertices())
}

/// Gradient of the area with respect to interleaved vertex coordinates.
pub fn area_gradient(p: &Polygon) -> DVector<f64> {
    let n = p.n();
    let v = p.vertices();
    let mut g = DVector::zeros(2 * n);
    for i in 0..n {
        let next = v[(i + 1) % n];
        let prev = v[(i + n - 1) % n];
        g[2 * i] = 0.5 * (next[1] - prev[1]);
        g[2 * i + 1] = 0.5 * (prev[0] - next[0]);
    }
    g
}

/// Constant Hessian of the area: blocks `B_{i,i+1} = [[0, 1/2], [-1/2, 0]]`.
pub fn area_hessian(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        h[(2 * i, 2 * j + 1)] += 0.5;
        h[(2 * i + 1, 2 * j)] -= 0.5;
        h[(2 * j + 1, 2 * i)] += 0.5;
        h[(2 * j, 2 * i + 1)] -= 0.5;
    }
    h
}

/// Translations, scaling and rotation directions at the regular polygon.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    pub t_x: DVector<f64>,
    pub t_y: DVector<f64>,
    pub s: DVector<f64>,
    pub r: DVector<f64>,
}

impl KernelBasis {
    pub fn vectors(&self) -> [&DVector<f64>; 4] {
        [&self.t_x, &self.t_y, &self.s, &self.r]
    }
}

pub fn kernel_basis(n: usize) -> Result<KernelBasis> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("kernel basis needs n >= 3, got {n}")));
    }
    let mut kb = KernelBasis {
        t_x: DVector::zeros(2 * n),
        t_y: DVector::zeros(2 * n),
        s: DVector::zeros(2 * n),
        r: DVector::zeros(2 * n),
    };
    for j in 0..n {
        let [c, s] = regular_vertex(n, j);
        kb.t_x[2 * j] = 1.0;
        kb.t_y[2 * j + 1] = 1.0;
        kb.s[2 * j] = c;
        kb.s[2 * j + 1] = s;
        kb.r[2 * j] = s;
        kb.r[2 * j + 1] = -c;
    }
    Ok(kb)
}

/// Coarse triangulation carrying the hat functions. Nodes `0..n` are the
/// polygon vertices; an optional node `n` is the fan center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseTriangulation {
    pub nodes: Vec<Point>,
    pub tris: Vec<[usize; 3]>,
    pub n: usize,
}

impl CoarseTriangulation {
    pub fn has_center(&self) -> bool {
        self.nodes.len() > self.n
    }

    /// Fan from `center` to every edge of `p`.
    pub fn fan(p: &Polygon, center: Point) -> Self {
        let n = p.n();
        let mut nodes = p.vertices().to_vec();
        nodes.push(center);
        let tris = (0..n).map(|j| [n, j, (j + 1) % n]).collect();
        Self { nodes, tris, n }
    }

    /// Ear-clipping triangulation without interior vertices.
    pub fn ear_clip(p: &Polygon) -> Self {
        let v = p.vertices();
        let n = v.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut tris = Vec::with_capacity(n - 2);
        while idx.len() > 3 {
            let m = idx.len();
            let mut best: Option<(usize, f64)> = None;
            for k in 0..m {
                let (a, b, c) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
                if orient(v[a], v[b], v[c]) <= 0 {
                    continue;
                }
                let blocked = idx.iter().any(|&q| {
                    q != a && q != b && q != c && {
                        let o1 = orient(v[a], v[b], v[q]);
                        let o2 = orient(v[b], v[c], v[q]);
                        let o3 = orient(v[c], v[a], v[q]);
                        o1 >= 0 && o2 >= 0 && o3 >= 0
                    }
                });
                if blocked {
                    continue;
                }
                let q = min_angle(v[a], v[b], v[c]);
                if best.map_or(true, |(_, bq)| q > bq) {
                    best = Some((k, q));
                }
            }
            let k = best.expect("simple polygon always has an ear").0;
            let m = idx.len();
            tris.push([idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]]);
            idx.remove(k);
        }
        tris.push([idx[0], idx[1], idx[2]]);
        Self { nodes: v.to_vec(), tris, n }
    }
}

fn min_angle(a: Point, b: Point, c: Point) -> f64 {
    let ang = |p: Point, q: Point, r: Point| {
        let (ux, uy) = (q[0] - p[0], q[1] - p[1]);
        let (vx, vy) = (r[0] - p[0], r[1] - p[1]);
        (ux * vy - uy * vx).abs().atan2(ux * vx + uy * vy)
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
}

/// Value of the vertex hats at the fan center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HatWeights {
    /// Center value 0: each hat lives on its two adjacent slices.
    SliceFan,
    /// Center value 1/n: the hats form a partition of unity.
    BalancedFan,
}

/// Piecewise-affine hats `phi_i` on a coarse triangulation, with constant
/// gradients per coarse cell.
#[derive(Clone, Debug)]
pub struct HatFunctionSet {
    pub coarse: CoarseTriangulation,
    /// `values[node][i] = phi_i(node)`.
    pub values: Vec<Vec<f64>>,
    /// `grads[cell][i] = grad phi_i` on that cell.
    pub grads: Vec<Vec<Point>>,
}

impl HatFunctionSet {
    /// Hats with value `center_value` at the center node (if any).
    pub fn new(coarse: CoarseTriangulation, center_value: f64) -> Result<Self> {
        let n = coarse.n;
        let mut values = vec![vec![0.0; n]; coarse.nodes.len()];
        for (i, row) in values.iter_mut().enumerate().take(n) {
            row[i] = 1.0;
        }
        if coarse.has_center() {
            values[n] = vec![center_value; n];
        }
        let mut grads = Vec::with_capacity(coarse.tris.len());
        for (c, t) in coarse.tris.iter().enumerate() {
            let p = [coarse.nodes[t[0]], coarse.nodes[t[1]], coarse.nodes[t[2]]];
            let g = bary_gradients(p)
                .ok_or_else(|| Error::InvalidMesh(format!("degenerate coarse cell {c}")))?;
            grads.push(
                (0..n)
                    .map(|i| {
                        let mut s = [0.0; 2];
                        for a in 0..3 {
                            s[0] += values[t[a]][i] * g[a][0];
                            s[1] += values[t[a]][i] * g[a][1];
                        }
                        s
                    })
                    .collect(),
            );
        }
        Ok(Self { coarse, values, grads })
    }

    pub fn with_weights(coarse: CoarseTriangulation, w: HatWeights) -> Result<Self> {
        let cv = match w {
            HatWeights::SliceFan => 0.0,
            HatWeights::BalancedFan => 1.0 / coarse.n as f64,
        };
        Self::new(coarse, cv)
    }

    pub fn n(&self) -> usize {
        self.coarse.n
    }

    pub fn grad(&self, cell: usize, i: usize) -> Point {
        self.grads[cell][i]
    }

    /// `phi_i` at a point with barycentric coordinates `bary` in `cell`.
    pub fn value(&self, cell: usize, bary: [f64; 3], i: usize) -> f64 {
        let t = self.coarse.tris[cell];
        (0..3).map(|a| bary[a] * self.values[t[a]][i]).sum()
    }

    /// Coarse-node displacement induced by vertex displacement `d`.
    pub fn node_displacement(&self, node: usize, d: &[f64]) -> Point {
        let row = &self.values[node];
        let mut s = [0.0; 2];
        for i in 0..self.n() {
            s[0] += row[i] * d[2 * i];
            s[1] += row[i] * d[2 * i + 1];
        }
        s
    }
}

/// Gradients of the three barycentric coordinates; `None` if degenerate.
pub fn bary_gradients(p: [Point; 3]) -> Option<[Point; 3]> {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let q = p[(a + 1) % 3];
        let r = p[(a + 2) % 3];
        g[a] = [(q[1] - r[1]) / det, (r[0] - q[0]) / det];
    }
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> Polygon {
        Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    fn random_simple(rng: &mut ChaCha8Rng, n: usize) -> Polygon {
        loop {
            let v: Vec<Point> = (0..n)
                .map(|j| {
                    let t = 2.0 * PI * (j as f64 + rng.gen_range(-0.3..0.3)) / n as f64;
                    let r = rng.gen_range(0.5..1.5);
                    [r * t.cos(), r * t.sin()]
                })
                .collect();
            if let Ok(p) = Polygon::new(v) {
                return p;
            }
        }
    }

    #[test]
    fn regular_polygon_examples() {
        let p4 = regular_polygon(4).unwrap();
        assert_eq!(p4.vertices(), &[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        let a5 = polygon_area(&regular_polygon(5).unwrap());
        assert!((a5 - 2.5 * (2.0 * PI / 5.0).sin()).abs() < 1e-14);
        assert!((a5 - 2.377641).abs() < 1e-6);
        let p6 = regular_polygon(6).unwrap();
        let (a, b) = (p6.vertex(0), p6.vertex(1));
        let inr = ((a[0] + b[0]) / 2.0).hypot((a[1] + b[1]) / 2.0);
        assert!((inr - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(matches!(regular_polygon(2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn area_examples() {
        assert_eq!(polygon_area(&square()), 1.0);
        let a6 = polygon_area(&regular_polygon(6).unwrap());
        assert!((a6 - 1.5 * 3f64.sqrt()).abs() < 1e-14);
        let dup = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(dup.is_err());
    }

    #[test]
    fn area_gradient_examples() {
        let g = area_gradient(&square());
        assert_eq!((g[0], g[1]), (-0.5, -0.5));
        for n in 3..12 {
            let p = regular_polygon(n).unwrap();
            let g = area_gradient(&p);
            let th = 2.0 * PI / n as f64;
            let kb = kernel_basis(n).unwrap();
            assert!(g.dot(&kb.t_x).abs() < 1e-14 && g.dot(&kb.t_y).abs() < 1e-14);
            for i in 0..n {
                assert!((g[2 * i].hypot(g[2 * i + 1]) - th.sin()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn area_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-6;
        for _ in 0..100 {
            let n = rng.gen_range(3..10);
            let p = random_simple(&mut rng, n);
            let g = area_gradient(&p);
            let c = p.coords();
            let mut fd = vec![0.0; 2 * n];
            for k in 0..2 * n {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[k] += step;
                cm[k] -= step;
                fd[k] = (signed_area(&to_pts(&cp)) - signed_area(&to_pts(&cm))) / (2.0 * step);
            }
            let err: f64 = (0..2 * n).map(|k| (fd[k] - g[k]).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * g.norm(), "err {err}");
        }
    }

    fn to_pts(c: &[f64]) -> Vec<Point> {
        c.chunks(2).map(|q| [q[0], q[1]]).collect()
    }

    #[test]
    fn area_hessian_structure_and_fd() {
        let h4 = area_hessian(4);
        let mut blocks = 0;
        for i in 0..4 {
            for j in 0..4 {
                let nz = (0..2).any(|a| (0..2).any(|b| h4[(2 * i + a, 2 * j + b)] != 0.0));
                if nz {
                    blocks += 1;
                    assert_eq!(h4[(2 * i, 2 * j)], 0.0);
                    assert_eq!(h4[(2 * i + 1, 2 * j)], -h4[(2 * i, 2 * j + 1)]);
                }
            }
        }
        assert_eq!(blocks, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 3..9 {
            let h = area_hessian(n);
            assert_eq!(h, h.transpose());
            let kb = kernel_basis(n).unwrap();
            assert!((&h * &kb.t_x).norm() == 0.0 && (&h * &kb.t_y).norm() == 0.0);
            let p = random_simple(&mut rng, n);
            let c = p.coords();
            let d: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dv = DVector::from_vec(d.clone());
            let q = dv.dot(&(&h * &dv));
            let e = 1e-5;
            let at = |t: f64| signed_area(&to_pts(&c.iter().zip(&d).map(|(a, b)| a + t * b).collect::<Vec<_>>()));
            let fd = (at(e) - 2.0 * at(0.0) + at(-e)) / (e * e);
            assert!((fd - q).abs() < 1e-5 * (1.0 + q.abs()), "{fd} {q}");
        }
    }

    #[test]
    fn kernel_basis_examples() {
        let kb = kernel_basis(5).unwrap();
        let m = DMatrix::from_columns(&[kb.t_x.clone(), kb.t_y.clone(), kb.s.clone(), kb.r.clone()]);
        assert_eq!(m.rank(1e-10), 4);
        let last = m.rows(6, 4).into_owned();
        assert_eq!(last.rank(1e-10), 4);
        for j in 0..5 {
            let d = kb.s[2 * j] * kb.r[2 * j] + kb.s[2 * j + 1] * kb.r[2 * j + 1];
            assert!(d.abs() < 1e-16);
        }
    }

    #[test]
    fn simplicity_examples() {
        assert!(is_simple(regular_polygon(5).unwrap().vertices()));
        assert!(!is_simple(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]));
        // Vertex 3 touches the non-adjacent edge (v0, v1).
        let touching = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(!is_simple(&touching));
        assert!(!is_simple(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]));
    }

    #[test]
    fn polygon_text_round_trip() {
        let p = random_simple(&mut ChaCha8Rng::seed_from_u64(5), 7);
        assert_eq!(Polygon::parse(&p.to_text()).unwrap(), p);
        assert!(Polygon::parse("0 0\n1 1\n1 0\n0 1\n").is_err());
    }

    #[test]
    fn hat_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 3..9 {
            let p = random_simple(&mut rng, n);
            let hats = HatFunctionSet::new(CoarseTriangulation::ear_clip(&p), 0.0).unwrap();
            assert_eq!(hats.coarse.tris.len(), n - 2);
            for cell in 0..n - 2 {
                let mut s = [0.0; 2];
                for i in 0..n {
                    s[0] += hats.grad(cell, i)[0];
                    s[1] += hats.grad(cell, i)[1];
                }
                assert!(s[0].abs() < 1e-12 && s[1].abs() < 1e-12);
            }
        }
        for n in 3..10 {
            let p = regular_polygon(n).unwrap();
            let th = 2.0 * PI / n as f64;
            let hats = HatFunctionSet::with_weights(CoarseTriangulation::fan(&p, [0.0, 0.0]), HatWeights::SliceFan).unwrap();
            for j in 0..n {
                for cell in 0..n {
                    let g = hats.grad(cell, j);
                    let norm = g[0].hypot(g[1]);
                    if cell == j || cell == (j + n - 1) % n {
                        assert!((norm - 1.0 / th.sin()).abs() < 1e-12);
                    } else {
                        assert_eq!(norm, 0.0);
                    }
                }
            }
            let bal = HatFunctionSet::with_weights(CoarseTriangulation::fan(&p, [0.0, 0.0]), HatWeights::BalancedFan).unwrap();
            for cell in 0..n {
                let s = (0..n).fold([0.0, 0.0], |s, i| [s[0] + bal.grad(cell, i)[0], s[1] + bal.grad(cell, i)[1]]);
                assert!(s[0].abs() < 1e-12 && s[1].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ear_clip_nonconvex() {
        let l = Polygon::new(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]]).unwrap();
        let ct = CoarseTriangulation::ear_clip(&l);
        let total: f64 = ct
            .tris
            .iter()
            .map(|t| signed_area(&[ct.nodes[t[0]], ct.nodes[t[1]], ct.nodes[t[2]]]))
            .sum();
        assert!((total - 3.0).abs() < 1e-14);
        assert!(ct.tris.iter().all(|t| orient(ct.nodes[t[0]], ct.nodes[t[1]], ct.nodes[t[2]]) > 0));
    }
}
