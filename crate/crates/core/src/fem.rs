//! P1 finite elements: sparse symmetric matrices, the generalized
//! eigensolver, deflated linear solves and exact element integrals.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{ColMut, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshgen::TriMesh;
use crate::polygeom::{bary_gradients, Point};

/// Fixed reduction chunk: sums are independent of the thread count.
const CHUNK: usize = 4096;

/// Deterministic parallel dot product.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.par_chunks(CHUNK)
        .zip(y.par_chunks(CHUNK))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(b, a)| *b += alpha * a);
}

/// Compressed sparse row storage of a symmetric matrix (both triangles kept).
#[derive(Clone, Debug)]
pub struct SparseSym {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseSym {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, yc)| {
            let r0 = c * CHUNK;
            for (k, yi) in yc.iter_mut().enumerate() {
                let r = r0 + k;
                let mut s = 0.0;
                for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.vals[e] * x[self.cols[e]];
                }
                *yi = s;
            }
        });
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec(x, &mut y);
        y
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&e| self.cols[e] == r)
                    .map_or(0.0, |e| self.vals[e])
            })
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .find(|&e| self.cols[e] == c)
            .map_or(0.0, |e| self.vals[e])
    }

    /// `self + alpha * other` on the same sparsity pattern.
    pub fn add_scaled(&self, alpha: f64, other: &SparseSym) -> SparseSym {
        assert_eq!(self.cols, other.cols);
        let mut out = self.clone();
        out.vals.iter_mut().zip(&other.vals).for_each(|(a, b)| *a += alpha * b);
        out
    }

    pub fn sum(&self) -> f64 {
        self.vals.iter().sum()
    }

    /// Coordinate text: one `row col value` line per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.dim, self.dim, self.nnz());
        for r in 0..self.dim {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let _ = writeln!(s, "{} {} {:.17e}", r, self.cols[e], self.vals[e]);
            }
        }
        s
    }
}

/// Interior degrees of freedom of a mesh.
#[derive(Clone, Debug)]
pub struct DofMap {
    /// `node_to_dof[v]`, `usize::MAX` on boundary nodes.
    pub node_to_dof: Vec<usize>,
    pub dof_to_node: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut node_to_dof = vec![usize::MAX; mesh.nodes.len()];
        let mut dof_to_node = Vec::new();
        for (v, &b) in mesh.boundary.iter().enumerate() {
            if !b {
                node_to_dof[v] = dof_to_node.len();
                dof_to_node.push(v);
            }
        }
        Self { node_to_dof, dof_to_node }
    }

    pub fn len(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_node.is_empty()
    }

    pub fn restrict(&self, field: &[f64]) -> Vec<f64> {
        self.dof_to_node.iter().map(|&v| field[v]).collect()
    }

    pub fn extend(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.node_to_dof.len()];
        for (d, &v) in self.dof_to_node.iter().enumerate() {
            f[v] = x[d];
        }
        f
    }
}

/// Triangle geometry: barycentric gradients and area.
pub fn tri_geometry(mesh: &TriMesh, t: usize) -> Result<([Point; 3], f64)> {
    let p = mesh.triangle(t);
    let g = bary_gradients(p).ok_or_else(|| Error::InvalidMesh(format!("degenerate triangle {t}")))?;
    let area = mesh.triangle_area(t);
    if area <= 0.0 {
        return Err(Error::InvalidMesh(format!("triangle {t} has nonpositive area")));
    }
    Ok((g, area))
}

/// Constant gradient of a P1 field on triangle `t`.
pub fn tri_gradient(mesh: &TriMesh, g: &[Point; 3], t: usize, u: &[f64]) -> Point {
    let v = mesh.tris[t];
    let mut s = [0.0; 2];
    for a in 0..3 {
        s[0] += u[v[a]] * g[a][0];
        s[1] += u[v[a]] * g[a][1];
    }
    s
}

/// Stiffness, mass and the dof map of a mesh.
#[derive(Clone, Debug)]
pub struct FemSystem {
    pub dofs: DofMap,
    pub stiffness: SparseSym,
    pub mass: SparseSym,
}

fn node_triangles(mesh: &TriMesh) -> (Vec<usize>, Vec<usize>) {
    let nn = mesh.nodes.len();
    let mut ptr = vec![0usize; nn + 1];
    for t in &mesh.tris {
        for &v in t {
            ptr[v + 1] += 1;
        }
    }
    for v in 0..nn {
        ptr[v + 1] += ptr[v];
    }
    let mut fill = ptr.clone();
    let mut adj = vec![0usize; ptr[nn]];
    for (k, t) in mesh.tris.iter().enumerate() {
        for &v in t {
            adj[fill[v]] = k;
            fill[v] += 1;
        }
    }
    (ptr, adj)
}

/// Exact P1 stiffness and mass matrices on interior dofs. Rows are assembled
/// independently, so the result does not depend on the thread count.
pub fn assemble(mesh: &TriMesh) -> Result<FemSystem> {
    let dofs = DofMap::new(mesh);
    let geo: Vec<([Point; 3], f64)> =
        (0..mesh.tris.len()).into_par_iter().map(|t| tri_geometry(mesh, t)).collect::<Result<_>>()?;
    let (ptr, adj) = node_triangles(mesh);
    let n = dofs.len();
    let chunks: Vec<(Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut counts = Vec::new();
            let mut cols = Vec::new();
            let mut av = Vec::new();
            let mut bv = Vec::new();
            let mut row: Vec<(usize, f64, f64)> = Vec::with_capacity(16);
            for d in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = dofs.dof_to_node[d];
                row.clear();
                for &t in &adj[ptr[v]..ptr[v + 1]] {
                    let tri = mesh.tris[t];
                    let (g, area) = geo[t];
                    let a = tri.iter().position(|&x| x == v).unwrap();
                    for b in 0..3 {
                        let col = dofs.node_to_dof[tri[b]];
                        if col == usize::MAX {
                            continue;
                        }
                        let k = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                        let m = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                        match row.iter_mut().find(|e| e.0 == col) {
                            Some(e) => {
                                e.1 += k;
                                e.2 += m;
                            }
                            None => row.push((col, k, m)),
                        }
                    }
                }
                row.sort_by_key(|e| e.0);
                counts.push(row.len());
                for e in &row {
                    cols.push(e.0);
                    av.push(e.1);
                    bv.push(e.2);
                }
            }
            (counts, cols, av, bv)
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let (mut cols, mut av, mut bv) = (Vec::new(), Vec::new(), Vec::new());
    for (counts, c, a, b) in chunks {
        for k in counts {
            row_ptr.push(row_ptr.last().unwrap() + k);
        }
        cols.extend(c);
        av.extend(a);
        bv.extend(b);
    }
    let stiffness = SparseSym { dim: n, row_ptr: row_ptr.clone(), cols: cols.clone(), vals: av };
    let mass = SparseSym { dim: n, row_ptr, cols, vals: bv };
    Ok(FemSystem { dofs, stiffness, mass })
}

/// Full (boundary-inclusive) mass matrix, used for the partition-of-unity check.
pub fn full_mass_sum(mesh: &TriMesh) -> f64 {
    (0..mesh.tris.len()).map(|t| mesh.triangle_area(t)).sum::<f64>()
}

/// Preconditioner choice for the iterative solvers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecondKind {
    Jacobi,
    /// Sparse Cholesky factor of the stiffness matrix.
    Cholesky,
}

enum Precond {
    Jacobi(Vec<f64>),
    Cholesky(faer::sparse::linalg::solvers::Llt<usize, f64>),
}

impl Precond {
    fn new(a: &SparseSym, kind: PrecondKind) -> Result<Self> {
        match kind {
            PrecondKind::Jacobi => Ok(Precond::Jacobi(a.diag().iter().map(|d| 1.0 / d).collect())),
            PrecondKind::Cholesky => {
                let sym = SymbolicSparseColMatRef::new_checked(a.dim, a.dim, &a.row_ptr, None, &a.cols);
                let mat = SparseColMatRef::new(sym, &a.vals);
                let llt = mat.sp_cholesky(Side::Lower).map_err(|e| Error::SolverFailure {
                    msg: format!("Cholesky factorization failed: {e:?}"),
                    residual: f64::NAN,
                })?;
                Ok(Precond::Cholesky(llt))
            }
        }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Precond::Jacobi(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
            Precond::Cholesky(llt) => {
                let mut z = r.to_vec();
                llt.solve_in_place(ColMut::from_slice_mut(&mut z));
                z
            }
        }
    }
}

/// Eigenvalue, B-normalized nodal vector (zero on the boundary) and
/// residual `||A u - lambda B u|| / ||u||_B`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct EigOptions {
    pub count: usize,
    /// Relative residual target `||r|| / (lambda ||B x||)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub precond: PrecondKind,
    /// Relative gap below which lambda_1 is declared multiple.
    pub gap_tol: f64,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self { count: 2, tol: 1e-11, max_iter: 2000, seed: 0x5eed, precond: PrecondKind::Cholesky, gap_tol: 1e-8 }
    }
}

struct Block {
    x: Vec<Vec<f64>>,
    ax: Vec<Vec<f64>>,
    bx: Vec<Vec<f64>>,
}

fn gram(u: &[Vec<f64>], v: &[Vec<f64>]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(u.len(), v.len());
    for i in 0..u.len() {
        for j in 0..v.len() {
            g[(i, j)] = dot(&u[i], &v[j]);
        }
    }
    g
}

fn combine(cols: &[Vec<f64>], c: &DMatrix<f64>, rows: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    (0..c.ncols())
        .map(|j| {
            let mut out = vec![0.0; n];
            for i in rows.clone() {
                let w = c[(i, j)];
                if w != 0.0 {
                    axpy(w, &cols[i], &mut out);
                }
            }
            out
        })
        .collect()
}

/// Removes the B-components along the B-orthonormal columns `y` (two passes).
fn b_orthogonalize(v: &mut [Vec<f64>], y: &[Vec<f64>], by: &[Vec<f64>]) {
    for _ in 0..2 {
        for vj in v.iter_mut() {
            for (yi, byi) in y.iter().zip(by) {
                let c = dot(byi, vj);
                axpy(-c, yi, vj);
            }
        }
    }
}

/// B-orthonormalizes a block by SVQB, dropping numerically dependent directions.
fn svqb(a: &SparseSym, b: &SparseSym, v: Vec<Vec<f64>>) -> Block {
    if v.is_empty() {
        return Block { x: v, ax: Vec::new(), bx: Vec::new() };
    }
    let bv: Vec<Vec<f64>> = v.iter().map(|x| b.apply(x)).collect();
    let g = gram(&v, &bv);
    let m = v.len();
    let d: Vec<f64> = (0..m).map(|i| 1.0 / g[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let dm = DMatrix::from_fn(m, m, |i, j| d[i] * 0.5 * (g[(i, j)] + g[(j, i)]) * d[j]);
    let e = SymmetricEigen::new(dm);
    let smax = e.eigenvalues.max();
    let keep: Vec<usize> = (0..m).filter(|&i| e.eigenvalues[i] > 1e-12 * smax).collect();
    let z = DMatrix::from_fn(m, keep.len(), |i, j| d[i] * e.eigenvectors[(i, keep[j])] / e.eigenvalues[keep[j]].sqrt());
    let x = combine(&v, &z, 0..m);
    let ax = x.iter().map(|c| a.apply(c)).collect();
    let bx = x.iter().map(|c| b.apply(c)).collect();
    Block { x, ax, bx }
}

/// LOBPCG with hard locking for the smallest eigenpairs of `A x = lambda B x`
/// in dof space. Returns values, vectors and relative residuals, ascending.
fn lobpcg(
    a: &SparseSym,
    b: &SparseSym,
    pre: &Precond,
    x0: Vec<Vec<f64>>,
    nev: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let start = svqb(a, b, x0);
    let k = start.x.len();
    if k < nev {
        return Err(Error::SolverFailure { msg: "degenerate starting block".into(), residual: f64::NAN });
    }
    let mut blk = rayleigh_ritz(&[start.x], &[start.ax], &[start.bx], k)?.0;
    let mut p: Option<Block> = None;
    let (mut lx, mut lbx, mut llam, mut lres) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for _it in 0..max_iter {
        let ka = blk.x.len();
        let mut lam = vec![0.0; ka];
        let mut res = vec![0.0; ka];
        let mut w = Vec::with_capacity(ka);
        for i in 0..ka {
            lam[i] = dot(&blk.x[i], &blk.ax[i]);
            let mut r = blk.ax[i].clone();
            axpy(-lam[i], &blk.bx[i], &mut r);
            res[i] = norm(&r) / (lam[i].abs() * norm(&blk.bx[i])).max(f64::MIN_POSITIVE);
            w.push(r);
        }
        // Lock the converged leading Ritz pairs.
        let mut nl = 0;
        while nl < ka && llam.len() + nl < nev && res[nl] <= tol {
            nl += 1;
        }
        if nl > 0 {
            for i in 0..nl {
                llam.push(lam[i]);
                lres.push(res[i]);
            }
            lx.extend(blk.x.drain(..nl));
            lbx.extend(blk.bx.drain(..nl));
            blk.ax.drain(..nl);
            lam.drain(..nl);
            res.drain(..nl);
            w.drain(..nl);
            if let Some(pb) = &mut p {
                pb.x.drain(..nl);
                pb.ax.drain(..nl);
                pb.bx.drain(..nl);
            }
        }
        if llam.len() == nev {
            return Ok((llam, lx, lres));
        }
        let want = nev - llam.len();
        let worst = res[..want].iter().cloned().fold(0.0, f64::max);
        if worst < best {
            best = worst;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 50 {
                break;
            }
        }
        let active: Vec<usize> = (0..res.len()).filter(|&i| res[i] > tol).collect();
        let mut wcols: Vec<Vec<f64>> = active.iter().map(|&i| pre.apply(&w[i])).collect();
        b_orthogonalize(&mut wcols, &lx, &lbx);
        b_orthogonalize(&mut wcols, &blk.x, &blk.bx);
        let wb = svqb(a, b, wcols);
        let mut xs = vec![blk.x.clone()];
        let mut axs = vec![blk.ax.clone()];
        let mut bxs = vec![blk.bx.clone()];
        if let Some(pb) = &p {
            let mut pc: Vec<Vec<f64>> = active.iter().filter(|&&i| i < pb.x.len()).map(|&i| pb.x[i].clone()).collect();
            b_orthogonalize(&mut pc, &lx, &lbx);
            b_orthogonalize(&mut pc, &blk.x, &blk.bx);
            b_orthogonalize(&mut pc, &wb.x, &wb.bx);
            let pbn = svqb(a, b, pc);
            xs.push(wb.x);
            axs.push(wb.ax);
            bxs.push(wb.bx);
            xs.push(pbn.x);
            axs.push(pbn.ax);
            bxs.push(pbn.bx);
        } else {
            xs.push(wb.x);
            axs.push(wb.ax);
            bxs.push(wb.bx);
        }
        let (new_blk, new_p) = rayleigh_ritz(&xs, &axs, &bxs, blk.x.len())?;
        blk = new_blk;
        p = new_p;
    }
    Err(Error::SolverFailure {
        msg: format!("LOBPCG did not converge in {max_iter} iterations"),
        residual: best,
    })
}

/// Rayleigh-Ritz on the span of the given column groups; returns the Ritz
/// block and the direction block (components outside the first group).
fn rayleigh_ritz(
    xs: &[Vec<Vec<f64>>],
    axs: &[Vec<Vec<f64>>],
    bxs: &[Vec<Vec<f64>>],
    k: usize,
) -> Result<(Block, Option<Block>)> {
    let s: Vec<Vec<f64>> = xs.iter().flatten().cloned().collect();
    let as_: Vec<Vec<f64>> = axs.iter().flatten().cloned().collect();
    let bs: Vec<Vec<f64>> = bxs.iter().flatten().cloned().collect();
    let m = s.len();
    let mut ga = gram(&s, &as_);
    let mut gb = gram(&s, &bs);
    ga = 0.5 * (&ga + ga.transpose());
    gb = 0.5 * (&gb + gb.transpose());
    let d: Vec<f64> = (0..m).map(|i| 1.0 / gb[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let dm = DMatrix::from_fn(m, m, |i, j| d[i] * gb[(i, j)] * d[j]);
    let eg = SymmetricEigen::new(dm);
    let smax = eg.eigenvalues.max();
    let keep: Vec<usize> = (0..m).filter(|&i| eg.eigenvalues[i] > 1e-12 * smax).collect();
    if keep.len() < k {
        return Err(Error::SolverFailure { msg: "Rayleigh-Ritz basis collapsed".into(), residual: f64::NAN });
    }
    let z = DMatrix::from_fn(m, keep.len(), |i, j| d[i] * eg.eigenvectors[(i, keep[j])] / eg.eigenvalues[keep[j]].sqrt());
    let h = z.transpose() * &ga * &z;
    let h = 0.5 * (&h + h.transpose());
    let eh = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eh.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eh.eigenvalues[i].total_cmp(&eh.eigenvalues[j]));
    let cy = DMatrix::from_fn(keep.len(), k, |i, j| eh.eigenvectors[(i, order[j])]);
    let c = &z * cy;
    let blk = Block { x: combine(&s, &c, 0..m), ax: combine(&as_, &c, 0..m), bx: combine(&bs, &c, 0..m) };
    let first = xs[0].len();
    let p = if m > first {
        Some(Block { x: combine(&s, &c, first..m), ax: combine(&as_, &c, first..m), bx: combine(&bs, &c, first..m) })
    } else {
        None
    };
    Ok((blk, p))
}

/// Smallest `opts.count` eigenpairs; `guess` (node fields) warm-starts the block.
pub fn solve_eigs_with(sys: &FemSystem, opts: &EigOptions, guess: Option<&[Vec<f64>]>) -> Result<Vec<EigenPair>> {
    let n = sys.dofs.len();
    let k = (opts.count + 1).min(n);
    if opts.count == 0 || opts.count > n {
        return Err(Error::InvalidArgument(format!("cannot compute {} eigenpairs of a {n}-dof system", opts.count)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x0: Vec<Vec<f64>> = Vec::with_capacity(k);
    if let Some(g) = guess {
        for f in g.iter().take(k) {
            x0.push(sys.dofs.restrict(f));
        }
    }
    while x0.len() < k {
        x0.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    let pre = Precond::new(&sys.stiffness, opts.precond)?;
    if n <= 3 * k {
        return dense_eigs(sys, opts.count);
    }
    let (lam, x, _) = lobpcg(&sys.stiffness, &sys.mass, &pre, x0, opts.count, opts.tol, opts.max_iter)?;
    let mut out = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        out.push(finish_pair(sys, lam[i], &x[i]));
    }
    if opts.count >= 2 && out[1].value - out[0].value <= opts.gap_tol * out[0].value {
        return Err(Error::Unsupported(format!(
            "lambda_1 appears multiple: lambda_2 - lambda_1 = {:e}",
            out[1].value - out[0].value
        )));
    }
    Ok(out)
}

fn finish_pair(sys: &FemSystem, _lam: f64, x: &[f64]) -> EigenPair {
    let bx = sys.mass.apply(x);
    let s = dot(x, &bx).sqrt();
    let mut x: Vec<f64> = x.iter().map(|v| v / s).collect();
    let (imax, _) = x.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
    if x[imax] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let ax = sys.stiffness.apply(&x);
    let bx = sys.mass.apply(&x);
    let value = dot(&x, &ax);
    let r: Vec<f64> = ax.iter().zip(&bx).map(|(a, b)| a - value * b).collect();
    EigenPair { value, vector: sys.dofs.extend(&x), residual: norm(&r) }
}

fn dense_eigs(sys: &FemSystem, count: usize) -> Result<Vec<EigenPair>> {
    let n = sys.dofs.len();
    let dense = |s: &SparseSym| DMatrix::from_fn(n, n, |i, j| s.get(i, j));
    let bm = dense(&sys.mass);
    let l = bm.clone().cholesky().ok_or_else(|| Error::SolverFailure { msg: "mass not SPD".into(), residual: f64::NAN })?;
    let linv = l.l().try_inverse().unwrap();
    let c = &linv * dense(&sys.stiffness) * linv.transpose();
    let e = SymmetricEigen::new(0.5 * (&c + c.transpose()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].partial_cmp(&e.eigenvalues[j]).unwrap());
    Ok(order
        .iter()
        .take(count)
        .map(|&i| {
            let y = e.eigenvectors.column(i);
            let x = linv.transpose() * y;
            finish_pair(sys, e.eigenvalues[i], x.as_slice())
        })
        .collect())
}

/// Smallest `count` eigenpairs with default options.
pub fn solve_eigs(sys: &FemSystem, count: usize) -> Result<Vec<EigenPair>> {
    solve_eigs_with(sys, &EigOptions { count, ..Default::default() }, None)
}

#[derive(Clone, Debug)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub precond: PrecondKind,
    /// Relative tolerance on `u^T rhs` for consistency.
    pub consistency_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 20_000, precond: PrecondKind::Cholesky, consistency_tol: 1e-8 }
    }
}

/// Solution of a deflated system with the recovered multiplier.
#[derive(Clone, Debug)]
pub struct DeflatedSolution {
    pub field: Vec<f64>,
    pub multiplier: f64,
    pub iterations: usize,
    /// `||(A - lambda B) U - rhs + multiplier B u||`.
    pub residual: f64,
}

/// Reusable deflated solver: factorization is done once per system.
pub struct DeflatedSolver<'a> {
    sys: &'a FemSystem,
    lambda: f64,
    u: Vec<f64>,
    c: Vec<f64>,
    cc: f64,
    pre: Precond,
    opts: CgOptions,
}

impl<'a> DeflatedSolver<'a> {
    pub fn new(sys: &'a FemSystem, lambda: f64, deflation: &[f64], opts: CgOptions) -> Result<Self> {
        let u = sys.dofs.restrict(deflation);
        let c = sys.mass.apply(&u);
        let cc = dot(&c, &c);
        if cc == 0.0 {
            return Err(Error::InvalidArgument("zero deflation vector".into()));
        }
        let pre = Precond::new(&sys.stiffness, opts.precond)?;
        Ok(Self { sys, lambda, u, c, cc, pre, opts })
    }

    fn project(&self, v: &mut [f64]) {
        let s = dot(&self.c, v) / self.cc;
        axpy(-s, &self.c, v);
    }

    fn op(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.sys.stiffness.apply(x);
        let bx = self.sys.mass.apply(x);
        axpy(-self.lambda, &bx, &mut y);
        y
    }

    /// Solves `(A - lambda B) U = rhs - l B u`, `u^T B U = 0` for a node-indexed rhs.
    pub fn solve(&self, rhs: &[f64]) -> Result<DeflatedSolution> {
        let f = self.sys.dofs.restrict(rhs);
        let fnorm = norm(&f);
        let defect = dot(&self.u, &f);
        if defect.abs() > self.opts.consistency_tol * fnorm.max(f64::MIN_POSITIVE) * norm(&self.u) {
            return Err(Error::InconsistentRhs(defect / (fnorm * norm(&self.u))));
        }
        let n = f.len();
        if fnorm == 0.0 {
            return Ok(DeflatedSolution { field: vec![0.0; self.sys.dofs.node_to_dof.len()], multiplier: 0.0, iterations: 0, residual: 0.0 });
        }
        let mut r = f.clone();
        self.project(&mut r);
        let rnorm0 = norm(&r);
        let mut x = vec![0.0; n];
        let mut z = self.pre.apply(&r);
        self.project(&mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut it = 0;
        let mut rn = rnorm0;
        while rn > self.opts.tol * rnorm0 {
            if it >= self.opts.max_iter {
                return Err(Error::SolverFailure { msg: format!("deflated CG stalled after {it} iterations"), residual: rn / rnorm0 });
            }
            let mut w = self.op(&p);
            self.project(&mut w);
            let pw = dot(&p, &w);
            if pw <= 0.0 {
                return Err(Error::SolverFailure { msg: "deflated operator not positive (lambda above lambda_2?)".into(), residual: rn / rnorm0 });
            }
            let alpha = rz / pw;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &w, &mut r);
            rn = norm(&r);
            z = self.pre.apply(&r);
            self.project(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
            it += 1;
        }
        self.project(&mut x);
        let mut res = self.op(&x);
        axpy(-1.0, &f, &mut res);
        let l = -dot(&self.c, &res) / self.cc;
        axpy(l, &self.c, &mut res);
        Ok(DeflatedSolution { field: self.sys.dofs.extend(&x), multiplier: l, iterations: it, residual: norm(&res) })
    }
}

/// One-shot deflated solve.
pub fn deflated_solve(sys: &FemSystem, lambda: f64, deflation: &[f64], rhs: &[f64]) -> Result<DeflatedSolution> {
    DeflatedSolver::new(sys, lambda, deflation, CgOptions::default())?.solve(rhs)
}

/// Preconditioned CG for the stiffness system `A x = f` (node-indexed rhs).
pub fn stiffness_solve(sys: &FemSystem, rhs: &[f64], opts: &CgOptions) -> Result<Vec<f64>> {
    let f = sys.dofs.restrict(rhs);
    let pre = Precond::new(&sys.stiffness, opts.precond)?;
    let f0 = norm(&f);
    let mut x = vec![0.0; f.len()];
    if f0 == 0.0 {
        return Ok(sys.dofs.extend(&x));
    }
    let mut r = f.clone();
    let mut z = pre.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    while norm(&r) > opts.tol * f0 {
        if it >= opts.max_iter {
            return Err(Error::SolverFailure { msg: "CG stalled".into(), residual: norm(&r) / f0 });
        }
        let w = sys.stiffness.apply(&p);
        let alpha = rz / dot(&p, &w);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &w, &mut r);
        z = pre.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        it += 1;
    }
    Ok(sys.dofs.extend(&x))
}

/// Load vector `(g, phi_v)` of a piecewise-constant-per-triangle density
/// times a P1 field: `int_T dens_T * w * phi_v`.
pub fn weighted_load(mesh: &TriMesh, w: &[f64], dens: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.nodes.len()];
    for (t, tri) in mesh.tris.iter().enumerate() {
        let a = mesh.triangle_area(t) * dens(t);
        let s = w[tri[0]] + w[tri[1]] + w[tri[2]];
        for &v in tri {
            out[v] += a / 12.0 * (s + w[v]);
        }
    }
    out
}

/// `int_T u v` for P1 fields on triangle `t`.
pub fn tri_mass_product(mesh: &TriMesh, t: usize, u: &[f64], v: &[f64]) -> f64 {
    let tri = mesh.tris[t];
    let (su, sv) = (u[tri[0]] + u[tri[1]] + u[tri[2]], v[tri[0]] + v[tri[1]] + v[tri[2]]);
    let diag: f64 = (0..3).map(|a| u[tri[a]] * v[tri[a]]).sum();
    mesh.triangle_area(t) / 12.0 * (su * sv + diag)
}

fn per_cell<F>(mesh: &TriMesh, f: F) -> Result<Vec<[f64; 5]>>
where
    F: Fn(usize, &[Point; 3], f64) -> [f64; 5] + Sync,
{
    let nc = mesh.num_cells();
    let parts: Vec<Vec<[f64; 5]>> = (0..mesh.tris.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![[0.0; 5]; nc];
            for t in c * CHUNK..((c + 1) * CHUNK).min(mesh.tris.len()) {
                let (g, area) = tri_geometry(mesh, t)?;
                let r = f(t, &g, area);
                let cell = &mut acc[mesh.cell[t]];
                for k in 0..5 {
                    cell[k] += r[k];
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![[0.0; 5]; nc];
    for p in parts {
        for (o, q) in out.iter_mut().zip(p) {
            for k in 0..5 {
                o[k] += q[k];
            }
        }
    }
    Ok(out)
}

/// Per-cell tables `int_{T_j} d_a u d_b v` (entry `[a][b]`).
pub fn slice_gradient_products(mesh: &TriMesh, u: &[f64], v: &[f64]) -> Result<Vec<[[f64; 2]; 2]>> {
    if mesh.cell.len() != mesh.tris.len() {
        return Err(Error::InvalidMesh("missing slice tags".into()));
    }
    let r = per_cell(mesh, |t, g, area| {
        let gu = tri_gradient(mesh, g, t, u);
        let gv = tri_gradient(mesh, g, t, v);
        [area * gu[0] * gv[0], area * gu[0] * gv[1], area * gu[1] * gv[0], area * gu[1] * gv[1], 0.0]
    })?;
    Ok(r.iter().map(|q| [[q[0], q[1]], [q[2], q[3]]]).collect())
}

/// Per-cell `int_{T_j} u v`.
pub fn slice_mass_products(mesh: &TriMesh, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let r = per_cell(mesh, |t, _, _| [tri_mass_product(mesh, t, u, v), 0.0, 0.0, 0.0, 0.0])?;
    Ok(r.iter().map(|q| q[0]).collect())
}

/// `int_S u^2` over the segment `[p, q]`, which must be a union of mesh edges.
pub fn segment_mass(mesh: &TriMesh, u: &[f64], p: Point, q: Point) -> Result<f64> {
    let len = (q[0] - p[0]).hypot(q[1] - p[1]);
    let tol = 1e-12 * (1.0 + len);
    let on = |x: Point| {
        let cross = (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]);
        let t = ((x[0] - p[0]) * (q[0] - p[0]) + (x[1] - p[1]) * (q[1] - p[1])) / (len * len);
        cross.abs() <= tol * len && t >= -1e-12 && t <= 1.0 + 1e-12
    };
    let mut total = 0.0;
    let mut covered = 0.0;
    for (a, b) in mesh.edges() {
        if on(mesh.nodes[a]) && on(mesh.nodes[b]) {
            let l = (mesh.nodes[a][0] - mesh.nodes[b][0]).hypot(mesh.nodes[a][1] - mesh.nodes[b][1]);
            let (x, y) = (u[a], u[b]);
            total += l / 3.0 * (x * x + x * y + y * y);
            covered += l;
        }
    }
    if (covered - len).abs() > 1e-9 * (1.0 + len) {
        return Err(Error::InvalidArgument(format!("segment not resolved by mesh edges (covered {covered} of {len})")));
    }
    Ok(total)
}

/// Boundary edge data for the boundary form of the shape gradient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryEdgeEnergy {
    pub nodes: [usize; 2],
    pub length: f64,
    /// Outward unit normal.
    pub normal: Point,
    /// `|grad u|^2` on the adjacent triangle.
    pub grad_sq: f64,
    /// `int_edge phi_a` for each endpoint hat (half the length).
    pub hat_integrals: [f64; 2],
}

pub fn boundary_energy_per_edge(mesh: &TriMesh, u: &[f64]) -> Result<Vec<BoundaryEdgeEnergy>> {
    let mut out = Vec::new();
    let mut count = std::collections::HashMap::new();
    for t in &mesh.tris {
        for a in 0..3 {
            let (p, q) = (t[a], t[(a + 1) % 3]);
            *count.entry((p.min(q), p.max(q))).or_insert(0u32) += 1;
        }
    }
    for (t, tri) in mesh.tris.iter().enumerate() {
        for a in 0..3 {
            let (p, q) = (tri[a], tri[(a + 1) % 3]);
            if count[&(p.min(q), p.max(q))] != 1 {
                continue;
            }
            let (g, _) = tri_geometry(mesh, t)?;
            let gu = tri_gradient(mesh, &g, t, u);
            let (x, y) = (mesh.nodes[p], mesh.nodes[q]);
            let l = (y[0] - x[0]).hypot(y[1] - x[1]);
            // Counter-clockwise triangle: the outward normal is the edge rotated clockwise.
            let normal = [(y[1] - x[1]) / l, -(y[0] - x[0]) / l];
            out.push(BoundaryEdgeEnergy {
                nodes: [p, q],
                length: l,
                normal,
                grad_sq: gu[0] * gu[0] + gu[1] * gu[1],
                hat_integrals: [0.5 * l, 0.5 * l],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::{fan_refined_mesh, mesh_constant_c1, symmetric_mesh};
    use crate::polygeom::Polygon;
    use std::f64::consts::PI;

    fn unit_square() -> Polygon {
        Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn element_identities() {
        let mesh = fan_refined_mesh(&Polygon::new(vec![[0.0, 0.0], [1.0, 0.2], [0.3, 1.0]]).unwrap(), 0).unwrap();
        // No interior dofs on a single triangle; check local matrices directly.
        let (g, area) = tri_geometry(&mesh, 0).unwrap();
        for a in 0..3 {
            let s: f64 = (0..3).map(|b| area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])).sum();
            assert!(s.abs() < 1e-14);
        }
        let m = symmetric_mesh(5, 6).unwrap();
        let ones = vec![1.0; m.nodes.len()];
        let total: f64 = (0..m.tris.len()).map(|t| tri_mass_product(&m, t, &ones, &ones)).sum();
        assert!((total - m.area()).abs() < 1e-13);
        let sys = assemble(&m).unwrap();
        assert_eq!(sys.stiffness.row_ptr, sys.mass.row_ptr);
        for r in 0..sys.stiffness.dim {
            for e in sys.stiffness.row_ptr[r]..sys.stiffness.row_ptr[r + 1] {
                let c = sys.stiffness.cols[e];
                assert_eq!(sys.stiffness.vals[e], sys.stiffness.get(c, r));
            }
        }
    }

    #[test]
    fn unit_square_converges_to_two_pi_squared() {
        let exact = 2.0 * PI * PI;
        let mut prev = f64::INFINITY;
        for lv in 2..7 {
            let mesh = fan_refined_mesh(&unit_square(), lv).unwrap();
            let sys = assemble(&mesh).unwrap();
            let e = solve_eigs(&sys, 2).unwrap();
            let l = e[0].value;
            assert!(l > exact && l < prev, "level {lv}: {l}");
            let c1 = mesh_constant_c1(&mesh).unwrap();
            let h = mesh.h;
            assert!(l / (1.0 + c1 * c1 * h * h * l * l) < exact);
            prev = l;
        }
        assert!((prev - exact) / exact < 2e-3);
    }

    #[test]
    fn equilateral_triangle_eigenvalue() {
        let t = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.75f64.sqrt()]]).unwrap();
        let mesh = fan_refined_mesh(&t, 6).unwrap();
        let e = solve_eigs(&assemble(&mesh).unwrap(), 2).unwrap();
        let exact = 16.0 * PI * PI / 3.0;
        assert!(e[0].value > exact && (e[0].value - exact) / exact < 2e-3);
    }

    #[test]
    fn eigenpairs_are_b_orthonormal_and_positive() {
        let mesh = symmetric_mesh(5, 12).unwrap();
        let sys = assemble(&mesh).unwrap();
        let e = solve_eigs_with(&sys, &EigOptions { count: 3, gap_tol: 0.0, ..Default::default() }, None).unwrap();
        let x: Vec<Vec<f64>> = e.iter().map(|p| sys.dofs.restrict(&p.vector)).collect();
        for i in 0..3 {
            for j in 0..3 {
                let g = dot(&x[i], &sys.mass.apply(&x[j]));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-12, "{i} {j} {g}");
            }
        }
        assert!(e[0].vector.iter().all(|&v| v >= -1e-12));
        for p in &e {
            assert!(p.residual < 1e-8 * p.value);
        }
        // Same answer with Jacobi preconditioning.
        let j = solve_eigs_with(&sys, &EigOptions { count: 1, precond: PrecondKind::Jacobi, max_iter: 20_000, ..Default::default() }, None).unwrap();
        assert!((j[0].value - e[0].value).abs() < 1e-9 * e[0].value);
    }

    #[test]
    fn refinement_is_monotone() {
        let mut prev = f64::INFINITY;
        for m in [4, 8, 16, 32] {
            let e = solve_eigs(&assemble(&symmetric_mesh(6, m).unwrap()).unwrap(), 1).unwrap();
            assert!(e[0].value < prev);
            prev = e[0].value;
        }
    }

    #[test]
    fn deflated_solve_examples() {
        let mesh = symmetric_mesh(5, 10).unwrap();
        let sys = assemble(&mesh).unwrap();
        let e = solve_eigs_with(&sys, &EigOptions { count: 3, gap_tol: 0.0, ..Default::default() }, None).unwrap();
        let (u, l1) = (&e[0].vector, e[0].value);
        let zero = deflated_solve(&sys, l1, u, &vec![0.0; mesh.nodes.len()]).unwrap();
        assert!(zero.field.iter().all(|&v| v == 0.0));
        let x2 = sys.dofs.restrict(&e[1].vector);
        let rhs = sys.dofs.extend(&sys.mass.apply(&x2));
        let s = deflated_solve(&sys, l1, u, &rhs).unwrap();
        let gap = e[1].value - l1;
        let err = s.field.iter().zip(&e[1].vector).map(|(a, b)| (a - b / gap).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8 * e[1].vector.iter().fold(0.0f64, |m, v| m.max(v.abs())) / gap, "{err}");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f: Vec<f64> = (0..sys.dofs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ud = sys.dofs.restrict(u);
        let c = dot(&ud, &f) / dot(&ud, &ud);
        axpy(-c, &ud, &mut f);
        let s = deflated_solve(&sys, l1, u, &sys.dofs.extend(&f)).unwrap();
        assert!(s.residual <= 1e-10, "{}", s.residual);
        let bu = sys.mass.apply(&ud);
        assert!(dot(&bu, &sys.dofs.restrict(&s.field)).abs() < 1e-12);
        let bad = sys.dofs.extend(&sys.mass.apply(&ud));
        assert!(matches!(deflated_solve(&sys, l1, u, &bad), Err(Error::InconsistentRhs(_))));
    }

    #[test]
    fn slice_products_and_segments() {
        let mesh = symmetric_mesh(5, 16).unwrap();
        let sys = assemble(&mesh).unwrap();
        let e = solve_eigs(&sys, 1).unwrap();
        let u = &e[0].vector;
        let t = slice_gradient_products(&mesh, u, u).unwrap();
        let total: f64 = t.iter().map(|q| q[0][0] + q[1][1]).sum();
        let ud = sys.dofs.restrict(u);
        assert!((total - dot(&ud, &sys.stiffness.apply(&ud))).abs() < 1e-11 * total);
        assert!((t[0][0][0] + t[0][1][1] - e[0].value / 5.0).abs() < 1e-8);
        assert!((t[0][0][1] + t[4][0][1]).abs() < 1e-8);
        let ones = vec![1.0; mesh.nodes.len()];
        assert!((segment_mass(&mesh, &ones, [0.0, 0.0], [1.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        let x: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        assert!((segment_mass(&mesh, &x, [0.0, 0.0], [1.0, 0.0]).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!(segment_mass(&mesh, &x, [0.0, 0.1], [1.0, 0.1]).is_err());
    }

    #[test]
    fn boundary_energy_examples() {
        let mesh = fan_refined_mesh(&unit_square(), 3).unwrap();
        let zero = vec![0.0; mesh.nodes.len()];
        let be = boundary_energy_per_edge(&mesh, &zero).unwrap();
        assert_eq!(be.len(), 32);
        assert!(be.iter().all(|b| b.grad_sq == 0.0));
        let total: f64 = be.iter().map(|b| b.length).sum();
        assert!((total - 4.0).abs() < 1e-14);
        for b in &be {
            assert!((b.hat_integrals[0] - 0.5 * b.length).abs() < 1e-16);
        }
    }

    #[test]
    fn rellich_identity_in_the_limit() {
        let mut errs = Vec::new();
        for lv in [4, 5, 6] {
            let mesh = fan_refined_mesh(&unit_square(), lv).unwrap();
            let e = solve_eigs(&assemble(&mesh).unwrap(), 1).unwrap();
            let be = boundary_energy_per_edge(&mesh, &e[0].vector).unwrap();
            let s: f64 = be
                .iter()
                .map(|b| {
                    let x = mesh.nodes[b.nodes[0]];
                    b.grad_sq * b.length * (x[0] * b.normal[0] + x[1] * b.normal[1])
                })
                .sum();
            errs.push((s - 2.0 * e[0].value).abs() / (2.0 * e[0].value));
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
        assert!(errs[2] < 0.1);
    }
}
