//! Shape gradient and Hessian of `lambda_1` and of `J = |P| lambda_1` with
//! respect to the vertex coordinates, computed as exact derivatives of the
//! discrete eigenvalue under hat-function morphing; circulant reduction at
//! the regular polygon.
//!
//! Directions are indexed `d = 2 i + a` (vertex `i`, coordinate `a`), the
//! ordering of `Polygon::coords`. On coarse cell `c` the direction `d` has
//! Jacobian `G = e_a (x) grad phi_i`. The pulled-back forms are
//! `a_t(u, v) = int A(I + t G) grad u . grad v` with
//! `A(F) = det F F^{-1} F^{-T}`, and `b_t(u, v) = int det(I + t G) u v`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble, boundary_energy_per_edge, dot, slice_gradient_products, slice_mass_products, tri_geometry,
    tri_gradient, CgOptions, DeflatedSolver, EigOptions, FemSystem,
};
use crate::meshgen::{morph_mesh, prolong_symmetric, symmetric_mesh, SymmetryMaps, TriMesh};
use crate::polygeom::{area_gradient, area_hessian, polygon_area, HatFunctionSet, HatWeights, Point, Polygon};

pub type Mat2 = [[f64; 2]; 2];

fn tr(g: &Mat2) -> f64 {
    g[0][0] + g[1][1]
}

fn mul(g: &Mat2, h: &Mat2) -> Mat2 {
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = g[i][0] * h[0][j] + g[i][1] * h[1][j];
        }
    }
    r
}

fn transpose(g: &Mat2) -> Mat2 {
    [[g[0][0], g[1][0]], [g[0][1], g[1][1]]]
}

fn frob(g: &Mat2, h: &Mat2) -> f64 {
    g[0][0] * h[0][0] + g[0][1] * h[0][1] + g[1][0] * h[1][0] + g[1][1] * h[1][1]
}

/// First variation of `A(F)` at `F = I` along `G`.
pub fn a_first(g: &Mat2) -> Mat2 {
    let t = tr(g);
    [[t - 2.0 * g[0][0], -g[0][1] - g[1][0]], [-g[0][1] - g[1][0], t - 2.0 * g[1][1]]]
}

/// Mixed second variation of `A(F)` at `F = I` along `G`, `H`.
pub fn a_second(g: &Mat2, h: &Mat2) -> Mat2 {
    let (gt, ht) = (transpose(g), transpose(h));
    let b = b_second(g, h);
    let (tg, th) = (tr(g), tr(h));
    let terms = [mul(g, h), mul(h, g), mul(&gt, &ht), mul(&ht, &gt), mul(g, &ht), mul(h, &gt)];
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = if i == j { b } else { 0.0 };
            s -= tg * (h[i][j] + h[j][i]) + th * (g[i][j] + g[j][i]);
            for t in &terms {
                s += t[i][j];
            }
            r[i][j] = s;
        }
    }
    r
}

/// Mixed second variation of `det F` at `F = I`.
pub fn b_second(g: &Mat2, h: &Mat2) -> f64 {
    tr(g) * tr(h) - tr(&mul(g, h))
}

/// `A(F) = det F F^{-1} F^{-T}`.
pub fn a_of(f: &Mat2) -> Mat2 {
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    let inv = [[f[1][1] / det, -f[0][1] / det], [-f[1][0] / det, f[0][0] / det]];
    let p = mul(&inv, &transpose(&inv));
    [[det * p[0][0], det * p[0][1]], [det * p[1][0], det * p[1][1]]]
}

/// Per coarse cell integrals `G_c = int_c grad u (x) grad u` and `E_c = int_c u^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellTables {
    pub grad: Vec<Mat2>,
    pub mass: Vec<f64>,
}

/// Discrete eigenpair on a mesh together with its hat functions and the
/// exact first derivatives of `lambda_h`.
#[derive(Clone, Debug)]
pub struct ShapeState {
    pub polygon: Polygon,
    pub mesh: TriMesh,
    pub hats: HatFunctionSet,
    pub weights: HatWeights,
    pub sys: FemSystem,
    pub lambda: f64,
    pub lambda2: f64,
    /// B-normalized, nonnegative nodal eigenvector.
    pub u: Vec<f64>,
    pub residual: f64,
    pub area: f64,
    pub cells: CellTables,
    /// `d lambda_h / d x_d`.
    pub grad_lambda: Vec<f64>,
}

/// Orbit average of a nodal field over the dihedral symmetry group.
pub fn symmetrize(maps: &SymmetryMaps, n: usize, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for j in 0..n {
        let r = maps.rotation_power(j);
        for v in 0..f.len() {
            out[v] += f[r[v]] + f[maps.reflection[r[v]]];
        }
    }
    out.iter_mut().for_each(|x| *x /= 2.0 * n as f64);
    out
}

fn rayleigh(sys: &FemSystem, u: &[f64]) -> (f64, Vec<f64>) {
    let x = sys.dofs.restrict(u);
    let bx = sys.mass.apply(&x);
    let nb = dot(&x, &bx).sqrt();
    let x: Vec<f64> = x.iter().map(|v| v / nb).collect();
    let lam = dot(&x, &sys.stiffness.apply(&x));
    (lam, sys.dofs.extend(&x))
}

impl ShapeState {
    /// Solves the eigenproblem on `mesh` (warm-started by `guess`) and
    /// builds the hat set with the given center weighting.
    pub fn new(mesh: TriMesh, weights: HatWeights, guess: Option<&[Vec<f64>]>) -> Result<Self> {
        let opts = EigOptions { count: 2, ..Default::default() };
        Self::with_options(mesh, weights, guess, &opts)
    }

    pub fn with_options(mesh: TriMesh, weights: HatWeights, guess: Option<&[Vec<f64>]>, opts: &EigOptions) -> Result<Self> {
        let sys = assemble(&mesh)?;
        let pairs = crate::fem::solve_eigs_with(&sys, opts, guess)?;
        let lambda2 = pairs.get(1).map_or(f64::NAN, |p| p.value);
        Self::from_eigenvector(mesh, sys, weights, &pairs[0].vector, lambda2, pairs[0].residual)
    }

    /// Builds the state from a known eigenvector; on symmetric meshes the
    /// vector is replaced by its orbit average.
    pub fn from_eigenvector(
        mesh: TriMesh,
        sys: FemSystem,
        weights: HatWeights,
        u: &[f64],
        lambda2: f64,
        residual: f64,
    ) -> Result<Self> {
        let n = mesh.coarse.n;
        let polygon = Polygon::new(mesh.coarse.nodes[..n].to_vec())?;
        let hats = HatFunctionSet::with_weights(mesh.coarse.clone(), weights)?;
        let u = match &mesh.symmetry {
            Some(maps) => symmetrize(maps, n, u),
            None => u.to_vec(),
        };
        let (lambda, u) = rayleigh(&sys, &u);
        let grad = slice_gradient_products(&mesh, &u, &u)?;
        let mass = slice_mass_products(&mesh, &u, &u)?;
        let cells = CellTables { grad: grad.iter().map(|g| [[g[0][0], g[0][1]], [g[1][0], g[1][1]]]).collect(), mass };
        let area = polygon_area(&polygon);
        let mut s = Self { polygon, mesh, hats, weights, sys, lambda, lambda2, u, residual, area, cells, grad_lambda: Vec::new() };
        s.grad_lambda = (0..2 * n).map(|d| s.lambda_derivative(d)).collect();
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.polygon.n()
    }

    /// Jacobian of direction `d` on coarse cell `c`.
    pub fn direction(&self, c: usize, d: usize) -> Mat2 {
        let g = self.hats.grad(c, d / 2);
        let mut m = [[0.0; 2]; 2];
        m[d % 2] = g;
        m
    }

    fn lambda_derivative(&self, d: usize) -> f64 {
        (0..self.cells.mass.len())
            .map(|c| {
                let g = self.direction(c, d);
                frob(&a_first(&g), &self.cells.grad[c]) - self.lambda * tr(&g) * self.cells.mass[c]
            })
            .sum()
    }

    /// `J = |P| lambda_h`.
    pub fn j_value(&self) -> f64 {
        self.area * self.lambda
    }

    /// Gradient of `J`.
    pub fn grad_j(&self) -> Vec<f64> {
        let ga = area_gradient(&self.polygon);
        (0..2 * self.n()).map(|d| self.area * self.grad_lambda[d] + self.lambda * ga[d]).collect()
    }

    /// Nodal right-hand side `F_d(v) = (a_d - lambda b_d - lambda_d b)(u, v)`;
    /// the material derivative field solves `(a - lambda b)(U_d, v) = F_d(v)`.
    pub fn material_rhs(&self, d: usize) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let nc = self.cells.mass.len();
        let ad: Vec<Mat2> = (0..nc).map(|c| a_first(&self.direction(c, d))).collect();
        let dens: Vec<f64> = (0..nc).map(|c| self.lambda * tr(&self.direction(c, d)) + self.grad_lambda[d]).collect();
        let mut out = vec![0.0; mesh.nodes.len()];
        for (t, tri) in mesh.tris.iter().enumerate() {
            let c = mesh.cell[t];
            let (g, area) = tri_geometry(mesh, t)?;
            let gu = tri_gradient(mesh, &g, t, &self.u);
            let k = ad[c];
            let kg = [k[0][0] * gu[0] + k[0][1] * gu[1], k[1][0] * gu[0] + k[1][1] * gu[1]];
            let s = self.u[tri[0]] + self.u[tri[1]] + self.u[tri[2]];
            for a in 0..3 {
                let mu = area / 12.0 * (s + self.u[tri[a]]);
                out[tri[a]] += area * (kg[0] * g[a][0] + kg[1] * g[a][1]) - dens[c] * mu;
            }
        }
        for (v, b) in mesh.boundary.iter().enumerate() {
            if *b {
                out[v] = 0.0;
            }
        }
        Ok(out)
    }

    /// Local part of `d^2 lambda_h / dx_d dx_e` (everything except `-2 a(U_d, U_e)`).
    pub fn local_second(&self, d: usize, e: usize) -> f64 {
        (0..self.cells.mass.len())
            .map(|c| {
                let (g, h) = (self.direction(c, d), self.direction(c, e));
                let (gc, ec) = (&self.cells.grad[c], self.cells.mass[c]);
                frob(&a_second(&g, &h), gc)
                    - self.lambda * b_second(&g, &h) * ec
                    - self.grad_lambda[e] * tr(&g) * ec
                    - self.grad_lambda[d] * tr(&h) * ec
            })
            .sum()
    }

    /// `(A - lambda B) f` as a nodal field (zero on the boundary).
    pub fn apply_shifted(&self, f: &[f64]) -> Vec<f64> {
        let x = self.sys.dofs.restrict(f);
        let mut y = self.sys.stiffness.apply(&x);
        let bx = self.sys.mass.apply(&x);
        y.iter_mut().zip(&bx).for_each(|(a, b)| *a -= self.lambda * b);
        self.sys.dofs.extend(&y)
    }

    pub fn solver(&self) -> Result<DeflatedSolver<'_>> {
        DeflatedSolver::new(&self.sys, self.lambda, &self.u, CgOptions::default())
    }

    /// Hessian of `J` from the Hessian of `lambda_h` by the product rule.
    pub fn j_hessian_from(&self, h_lambda: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let ga = area_gradient(&self.polygon);
        let gl = DVector::from_vec(self.grad_lambda.clone());
        let ha = area_hessian(n);
        let mut hj = h_lambda * self.area + &ga * gl.transpose() + &gl * ga.transpose() + ha * self.lambda;
        hj = 0.5 * (&hj + hj.transpose());
        hj
    }
}

/// Boundary (Hadamard) form of the eigenvalue gradient:
/// `-sum_edges |grad u_h|^2 n_a int_edge phi_i`.
pub fn eig_gradient_boundary(state: &ShapeState) -> Result<Vec<f64>> {
    let n = state.n();
    let mesh = &state.mesh;
    let edges = boundary_energy_per_edge(mesh, &state.u)?;
    let hat_at = |v: usize, i: usize| {
        let (c, b) = mesh.node_bary[v];
        state.hats.value(c, b, i)
    };
    let mut g = vec![0.0; 2 * n];
    for e in &edges {
        for i in 0..n {
            let w = 0.5 * e.length * (hat_at(e.nodes[0], i) + hat_at(e.nodes[1], i));
            if w == 0.0 {
                continue;
            }
            g[2 * i] -= e.grad_sq * e.normal[0] * w;
            g[2 * i + 1] -= e.grad_sq * e.normal[1] * w;
        }
    }
    Ok(g)
}

/// Volume form of the eigenvalue gradient (exact derivative of `lambda_h`).
pub fn eig_gradient(state: &ShapeState) -> Vec<f64> {
    state.grad_lambda.clone()
}

/// Full `2n x 2n` Hessians of a general polygon.
#[derive(Clone, Debug)]
pub struct HessianBlocks {
    pub n: usize,
    pub lambda: f64,
    pub area: f64,
    pub grad_lambda: Vec<f64>,
    pub hess_lambda: DMatrix<f64>,
    /// Hessian of `J = |P| lambda_1`.
    pub hess_j: DMatrix<f64>,
    /// Largest deflated-solve residual.
    pub max_residual: f64,
}

impl HessianBlocks {
    /// 2x2 block `M_ij` of the Hessian of `J`.
    pub fn block(&self, i: usize, j: usize) -> Mat2 {
        let h = &self.hess_j;
        [[h[(2 * i, 2 * j)], h[(2 * i, 2 * j + 1)]], [h[(2 * i + 1, 2 * j)], h[(2 * i + 1, 2 * j + 1)]]]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.hess_j.clone().symmetric_eigenvalues().iter().cloned().collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

/// Hessian of `J` with all `2n` material derivatives solved individually.
pub fn hessian_blocks_direct(state: &ShapeState) -> Result<HessianBlocks> {
    let nd = 2 * state.n();
    let solver = state.solver()?;
    let mut fields = Vec::with_capacity(nd);
    let mut max_residual: f64 = 0.0;
    for d in 0..nd {
        let s = solver.solve(&state.material_rhs(d)?)?;
        max_residual = max_residual.max(s.residual);
        fields.push(s.field);
    }
    let images: Vec<Vec<f64>> = fields.par_iter().map(|f| state.apply_shifted(f)).collect();
    let mut hl = DMatrix::zeros(nd, nd);
    for d in 0..nd {
        for e in d..nd {
            let v = state.local_second(d, e) - 2.0 * dot(&fields[d], &images[e]);
            hl[(d, e)] = v;
            hl[(e, d)] = v;
        }
    }
    let hess_j = state.j_hessian_from(&hl);
    Ok(HessianBlocks {
        n: state.n(),
        lambda: state.lambda,
        area: state.area,
        grad_lambda: state.grad_lambda.clone(),
        hess_lambda: hl,
        hess_j,
        max_residual,
    })
}

/// Convenience wrapper: mesh the polygon, solve and assemble the Hessian.
pub fn hessian_blocks_for(mesh: TriMesh, weights: HatWeights) -> Result<HessianBlocks> {
    hessian_blocks_direct(&ShapeState::new(mesh, weights, None)?)
}

/// Eigenpair on `symmetric_mesh(n, m)`, warm-started from coarser lattices.
pub fn symmetric_state(n: usize, m: usize, weights: HatWeights) -> Result<ShapeState> {
    let mesh = symmetric_mesh(n, m)?;
    let guess = if m % 2 == 0 && m >= 64 {
        let coarse = symmetric_state(n, m / 2, weights)?;
        Some(vec![prolong_symmetric(n, m / 2, &coarse.u)])
    } else {
        None
    };
    ShapeState::new(mesh, weights, guess.as_deref())
}

/// Material derivative fields of vertex 0 on a symmetric mesh.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaterialSolution {
    /// `U_0^1` (even in y) and `U_0^2` (odd in y).
    pub fields: [Vec<f64>; 2],
    /// `s = d lambda / d x_0`, equal to `-2 lambda / n` on symmetric meshes.
    pub s: f64,
    /// Raw parity defects `max |U(x, -y) -+ U(x, y)|` before projection.
    pub parity_defect: [f64; 2],
    /// Orthogonality defects `|u^T f^a| / (|u| |f^a|)` of the right-hand sides.
    pub rhs_defect: [f64; 2],
    pub multipliers: [f64; 2],
    pub residuals: [f64; 2],
}

/// Eigenpair, symmetry maps and the two material derivative fields at the
/// regular polygon.
#[derive(Clone, Debug)]
pub struct SymmetricState {
    pub n: usize,
    pub m: usize,
    pub shape: ShapeState,
    pub maps: SymmetryMaps,
    pub material: MaterialSolution,
    /// `(A - lambda B) U_0^a`.
    images: [Vec<f64>; 2],
    /// `rotation^{-j}` permutations.
    inverse_rotations: Vec<Vec<usize>>,
}

/// Right-hand sides `(f^1, f^2)` of the vertex-0 material derivative.
pub fn material_rhs(state: &ShapeState) -> Result<[Vec<f64>; 2]> {
    Ok([state.material_rhs(0)?, state.material_rhs(1)?])
}

fn rot(j: usize, n: usize) -> Mat2 {
    let (s, c) = (2.0 * PI * j as f64 / n as f64).sin_cos();
    [[c, -s], [s, c]]
}

impl SymmetricState {
    pub fn new(n: usize, m: usize, weights: HatWeights) -> Result<Self> {
        let shape = symmetric_state(n, m, weights)?;
        Self::from_shape(shape)
    }

    pub fn from_shape(shape: ShapeState) -> Result<Self> {
        let (n, m) = shape
            .mesh
            .lattice
            .ok_or_else(|| Error::InvalidArgument("symmetric lattice mesh required".into()))?;
        let maps = shape.mesh.symmetry.clone().ok_or_else(|| Error::InvalidArgument("mesh has no symmetry maps".into()))?;
        let rhs = material_rhs(&shape)?;
        let unorm = dot(&shape.u, &shape.u).sqrt();
        let mut rhs_defect = [0.0; 2];
        for a in 0..2 {
            rhs_defect[a] = dot(&shape.u, &rhs[a]).abs() / (unorm * dot(&rhs[a], &rhs[a]).sqrt());
            if rhs_defect[a] > 1e-8 {
                return Err(Error::SymmetryViolation(rhs_defect[a]));
            }
        }
        let solver = shape.solver()?;
        let s0 = solver.solve(&rhs[0])?;
        let s1 = solver.solve(&rhs[1])?;
        let refl = &maps.reflection;
        let mut parity_defect = [0.0; 2];
        let mut fields = [s0.field, s1.field];
        for (a, f) in fields.iter_mut().enumerate() {
            let sign = if a == 0 { 1.0 } else { -1.0 };
            parity_defect[a] = (0..f.len()).map(|v| (f[refl[v]] - sign * f[v]).abs()).fold(0.0, f64::max);
            let p: Vec<f64> = (0..f.len()).map(|v| 0.5 * (f[v] + sign * f[refl[v]])).collect();
            *f = p;
        }
        let images = [shape.apply_shifted(&fields[0]), shape.apply_shifted(&fields[1])];
        let inverse_rotations = (0..n).map(|j| maps.rotation_power((n - j) % n)).collect();
        let material = MaterialSolution {
            fields,
            s: shape.grad_lambda[0],
            parity_defect,
            rhs_defect,
            multipliers: [s0.multiplier, s1.multiplier],
            residuals: [s0.residual, s1.residual],
        };
        Ok(Self { n, m, shape, maps, material, images, inverse_rotations })
    }

    /// `f o R_{j theta}^T` as a nodal field.
    pub fn rotate_field(&self, f: &[f64], j: usize) -> Vec<f64> {
        let p = &self.inverse_rotations[j % self.n];
        p.iter().map(|&v| f[v]).collect()
    }

    /// Material derivative field of direction `(j, b)` by symmetry:
    /// `U_j = R_j U_0 o R_j^T`.
    pub fn u_field(&self, j: usize, b: usize) -> Vec<f64> {
        let r = rot(j, self.n);
        let f0 = self.rotate_field(&self.material.fields[0], j);
        let f1 = self.rotate_field(&self.material.fields[1], j);
        f0.iter().zip(&f1).map(|(x, y)| r[b][0] * x + r[b][1] * y).collect()
    }

    /// `a_h(U_0^a, w)` with `a_h(u, v) = (A - lambda B)`-form.
    pub fn a_u0(&self, a: usize, w: &[f64]) -> f64 {
        dot(&self.images[a], w)
    }

    /// Slice-0 integrals `A_xx, A_xy, A_yy` of `grad u (x) grad u`.
    pub fn slice_integrals(&self) -> Mat2 {
        self.shape.cells.grad[0]
    }

    /// Blocks `M_0j` of the Hessian of `J` (exact discrete formula, `U_j` by symmetry).
    pub fn block_row(&self) -> Vec<Mat2> {
        let n = self.n;
        let st = &self.shape;
        let ga = area_gradient(&st.polygon);
        let ha = area_hessian(n);
        (0..n)
            .into_par_iter()
            .map(|j| {
                let mut blk = [[0.0; 2]; 2];
                for b in 0..2 {
                    let w = self.u_field(j, b);
                    for a in 0..2 {
                        let (d, e) = (a, 2 * j + b);
                        let hl = st.local_second(d, e) - 2.0 * self.a_u0(a, &w);
                        blk[a][b] = st.area * hl
                            + ga[d] * st.grad_lambda[e]
                            + st.grad_lambda[d] * ga[e]
                            + st.lambda * ha[(d, e)];
                    }
                }
                blk
            })
            .collect()
    }

    /// Circulant reduction of the Hessian of `J`.
    pub fn spectrum(&self, weights: HatWeights) -> HessianSpectrum {
        let row = self.block_row();
        let n = self.n;
        let blocks: Vec<CirculantBlock> = (0..n)
            .map(|k| {
                let mut b = [[Complex::new(0.0, 0.0); 2]; 2];
                for (j, m0j) in row.iter().enumerate() {
                    let mt = mul(m0j, &rot(j, n));
                    let rho = Complex::from_polar(1.0, 2.0 * PI * (j * k % n) as f64 / n as f64);
                    for p in 0..2 {
                        for q in 0..2 {
                            b[p][q] += rho * mt[p][q];
                        }
                    }
                }
                CirculantBlock::from_symbol(k, b)
            })
            .collect();
        HessianSpectrum::assemble(n, self.m, weights, self.shape.lambda, self.shape.area, blocks)
    }

    /// Closed-form coefficients: `q_k A_xx - 2|P| a(U_0^1, sum cos(jk theta) U_0^1 o R_j^T)`, etc.
    pub fn theorem_coefficients(&self, k: usize) -> TheoremCoefficients {
        let n = self.n;
        let th = 2.0 * PI / n as f64;
        let q = 2.0 * n as f64 * (1.0 - (k as f64 * th).cos()) / th.sin();
        let sl = self.slice_integrals();
        let p = self.shape.area;
        let comb = |a: usize, trig: fn(f64) -> f64| -> Vec<f64> {
            let f = &self.material.fields[a];
            let mut w = vec![0.0; f.len()];
            for j in 0..n {
                let c = trig((j * k % n) as f64 * th);
                if c == 0.0 {
                    continue;
                }
                let r = self.rotate_field(f, j);
                w.iter_mut().zip(&r).for_each(|(x, y)| *x += c * y);
            }
            w
        };
        let c1 = comb(0, f64::cos);
        let c2 = comb(1, f64::cos);
        let s1 = comb(0, f64::sin);
        let s2 = comb(1, f64::sin);
        TheoremCoefficients {
            k,
            alpha: q * sl[0][0] - 2.0 * p * self.a_u0(0, &c1),
            beta: q * sl[1][1] - 2.0 * p * self.a_u0(1, &c2),
            gamma1: -2.0 * p * self.a_u0(0, &s2),
            gamma2: 2.0 * p * self.a_u0(1, &s1),
            forms: [self.a_u0(0, &c1), self.a_u0(1, &c2), self.a_u0(0, &s2), self.a_u0(1, &s1)],
        }
    }

    /// Cross-checks of the four forms `a_h(U_0^a, sum_j w_j U_0^b o R_j^T)`:
    /// the exact identity through directly assembled right-hand sides, and
    /// the slice-integral expansion (exact for the center-free hats only).
    pub fn appendix_check(&self, k: usize) -> Result<AppendixCheck> {
        let n = self.n;
        let th = 2.0 * PI / n as f64;
        let st = &self.shape;
        let rhs: Vec<[Vec<f64>; 2]> =
            (0..n).map(|j| Ok([st.material_rhs(2 * j)?, st.material_rhs(2 * j + 1)?])).collect::<Result<_>>()?;
        // a_h(U_0^a, U_0^b o R_j^T) = sum_c R_j[c][b] F_{j,c}(U_0^a).
        let exact_form = |a: usize, b: usize, j: usize| {
            let r = rot(j, n);
            (0..2).map(|c| r[c][b] * dot(&rhs[j][c], &self.material.fields[a])).sum::<f64>()
        };
        let cosk = |j: usize| ((j * k % n) as f64 * th).cos();
        let sink = |j: usize| ((j * k % n) as f64 * th).sin();
        let spec: [(usize, usize, &dyn Fn(usize) -> f64); 4] = [(0, 0, &cosk), (1, 1, &cosk), (0, 1, &sink), (1, 0, &sink)];
        let mut computed = [0.0; 4];
        let mut exact = [0.0; 4];
        for (q, (a, b, w)) in spec.iter().enumerate() {
            let f = &self.material.fields[*b];
            let mut acc = vec![0.0; f.len()];
            let mut ex = 0.0;
            for j in 0..n {
                let c = w(j);
                let r = self.rotate_field(f, j);
                acc.iter_mut().zip(&r).for_each(|(x, y)| *x += c * y);
                ex += c * exact_form(*a, *b, j);
            }
            computed[q] = self.a_u0(*a, &acc);
            exact[q] = ex;
        }
        let literal = self.literal_expansions(k)?;
        let scale = (0..2).map(|a| self.a_u0(a, &self.material.fields[a]).abs()).fold(f64::MIN_POSITIVE, f64::max);
        let exact_gap = (0..4).map(|q| (computed[q] - exact[q]).abs()).fold(0.0, f64::max) / scale;
        let literal_gap = (0..4).map(|q| (computed[q] - literal[q]).abs()).fold(0.0, f64::max) / scale;
        Ok(AppendixCheck { k, computed, exact, literal, exact_gap, literal_gap })
    }

    /// The four slice-integral expansions with `int_{T_j} grad u . M grad U_0^a`.
    fn literal_expansions(&self, k: usize) -> Result<[f64; 4]> {
        let n = self.n;
        let th = 2.0 * PI / n as f64;
        let st = &self.shape;
        // The expansions are written for the material fields of opposite sign.
        let neg = |f: &[f64]| f.iter().map(|x| -x).collect::<Vec<f64>>();
        let t1 = slice_gradient_products(&st.mesh, &st.u, &neg(&self.material.fields[0]))?;
        let t2 = slice_gradient_products(&st.mesh, &st.u, &neg(&self.material.fields[1]))?;
        let (sn, cs) = th.sin_cos();
        let ck = |j: usize| ((j * k % n) as f64 * th).cos();
        let sk = |j: usize| ((j * k % n) as f64 * th).sin();
        // int grad u . M grad U with M symmetric 2x2 given row-wise.
        let pair = |t: &[[f64; 2]; 2], m: Mat2| frob(&m, t);
        let dotg = |t: &[[f64; 2]; 2]| t[0][0] + t[1][1];
        let m_a = |j: usize| {
            let (s, c) = ((2 * j + 1) as f64 * th).sin_cos();
            [[-s, c], [c, s]]
        };
        let m_b = |j: usize| {
            let (s, c) = ((2 * j + 1) as f64 * th).sin_cos();
            [[-c, -s], [-s, c]]
        };
        let mut out = [0.0; 4];
        for j in 0..n {
            let dc = ck(j + 1) - ck(j);
            let ds = sk(j + 1) - sk(j);
            out[0] += (ck(j + 1) + ck(j)) * dotg(&t1[j]) + dc / sn * pair(&t1[j], m_a(j));
            out[1] += cs / sn * dc * dotg(&t2[j]) + dc / sn * pair(&t2[j], m_b(j));
            out[2] += cs / sn * ds * dotg(&t1[j]) + ds / sn * pair(&t1[j], m_b(j));
            out[3] += (sk(j + 1) + sk(j)) * dotg(&t2[j]) + ds / sn * pair(&t2[j], m_a(j));
        }
        Ok(out)
    }

    /// Structural identities on slice 0.
    pub fn identities(&self) -> StructuralIdentities {
        let n = self.n as f64;
        let th = 2.0 * PI / n;
        let a = self.slice_integrals();
        let lam = self.shape.lambda;
        StructuralIdentities {
            sum_defect: (a[0][0] + a[1][1] - lam / n).abs() / lam,
            criticality_defect: (a[0][0] - th.cos() / th.sin() * a[0][1] - lam / (2.0 * n)).abs() / lam,
            rotation_defect: (-a[0][0] * th.sin() + a[1][1] * th.sin() + 2.0 * a[0][1] * th.cos()).abs() / lam,
            s_defect: (self.material.s + 2.0 * lam / n).abs() / lam,
        }
    }
}

/// Relative defects of the slice-0 identities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructuralIdentities {
    /// `A_xx + A_yy = lambda / n`.
    pub sum_defect: f64,
    /// `A_xx - cot(theta) A_xy = lambda / (2n)`.
    pub criticality_defect: f64,
    /// `-A_xx sin(theta) + A_yy sin(theta) + 2 A_xy cos(theta) = 0`.
    pub rotation_defect: f64,
    /// `s = -2 lambda / n`.
    pub s_defect: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoremCoefficients {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `a(U^1, W^alpha), a(U^2, W^beta), a(U^1, W^gamma1), a(U^2, W^gamma2)`.
    pub forms: [f64; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AppendixCheck {
    pub k: usize,
    pub computed: [f64; 4],
    pub exact: [f64; 4],
    pub literal: [f64; 4],
    pub exact_gap: f64,
    pub literal_gap: f64,
}

/// Block symbol `B_{rho_k}` and its eigenvalues.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CirculantBlock {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `Im B_12`.
    pub gamma1: f64,
    /// `-Im B_21`.
    pub gamma2: f64,
    /// `Re B_12` (zero up to rounding).
    pub re_b12: f64,
    /// Row-major `[re, im]` entries of `B_{rho_k}`.
    pub symbol: [[[f64; 2]; 2]; 2],
    pub mu_lo: f64,
    pub mu_hi: f64,
}

impl CirculantBlock {
    fn from_symbol(k: usize, b: [[Complex<f64>; 2]; 2]) -> Self {
        let (alpha, beta) = (b[0][0].re, b[1][1].re);
        let off = 0.5 * (b[0][1] + b[1][0].conj());
        let disc = ((alpha - beta).powi(2) + 4.0 * off.norm_sqr()).sqrt();
        let symbol = [[[b[0][0].re, b[0][0].im], [b[0][1].re, b[0][1].im]], [[b[1][0].re, b[1][0].im], [b[1][1].re, b[1][1].im]]];
        Self {
            k,
            alpha,
            beta,
            gamma1: b[0][1].im,
            gamma2: -b[1][0].im,
            re_b12: b[0][1].re,
            symbol,
            mu_lo: 0.5 * (alpha + beta - disc),
            mu_hi: 0.5 * (alpha + beta + disc),
        }
    }

    /// `mu = (alpha + beta -+ sqrt((alpha - beta)^2 + 4 gamma^2)) / 2`.
    pub fn mu_from(alpha: f64, beta: f64, gamma: f64) -> (f64, f64) {
        let disc = ((alpha - beta).powi(2) + 4.0 * gamma * gamma).sqrt();
        (0.5 * (alpha + beta - disc), 0.5 * (alpha + beta + disc))
    }
}

/// Hessian spectrum of `J` at the regular polygon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HessianSpectrum {
    pub n: usize,
    pub m: usize,
    pub weights: HatWeights,
    pub lambda: f64,
    pub area: f64,
    pub blocks: Vec<CirculantBlock>,
    /// All `2n` eigenvalues, ascending.
    pub mu: Vec<f64>,
    pub zero_count: usize,
    /// Distinct nonzero eigenvalues with multiplicities, ascending.
    pub nonzero: Vec<(f64, usize)>,
}

/// Relative threshold below which an eigenvalue counts as zero.
pub const ZERO_TOL: f64 = 1e-4;

impl HessianSpectrum {
    fn assemble(n: usize, m: usize, weights: HatWeights, lambda: f64, area: f64, blocks: Vec<CirculantBlock>) -> Self {
        let mut mu: Vec<f64> = blocks.iter().flat_map(|b| [b.mu_lo, b.mu_hi]).collect();
        mu.sort_by(f64::total_cmp);
        let scale = mu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let zero_count = mu.iter().filter(|v| v.abs() <= ZERO_TOL * scale).count();
        let mut nonzero: Vec<(f64, usize)> = Vec::new();
        for &v in mu.iter().filter(|v| v.abs() > ZERO_TOL * scale) {
            match nonzero.last_mut() {
                Some((w, c)) if (v - *w).abs() <= 1e-8 * scale => *c += 1,
                _ => nonzero.push((v, 1)),
            }
        }
        Self { n, m, weights, lambda, area, blocks, mu, zero_count, nonzero }
    }

    /// Multiplicity pattern check: 4 zeros, the rest in pairs except the
    /// two simple values of `k = n/2` for even `n`.
    pub fn pattern_ok(&self) -> bool {
        let simple = self.nonzero.iter().filter(|p| p.1 == 1).count();
        let expected_simple = if self.n % 2 == 0 { 2 } else { 0 };
        self.zero_count == 4 && simple <= expected_simple && self.nonzero.iter().all(|p| p.1 <= 2)
    }

    /// CSV with columns `k,alpha,beta,gamma,mu_lo,mu_hi,multiplicity`.
    pub fn to_csv(&self) -> String {
        use crate::report::fmt_sig;
        let mut s = String::from("k,alpha,beta,gamma,mu_lo,mu_hi,multiplicity,alpha_hex,beta_hex,gamma_hex,mu_lo_hex,mu_hi_hex\n");
        for b in &self.blocks {
            let mult = if b.k == 0 || 2 * b.k == self.n { 1 } else { 2 };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                b.k,
                fmt_sig(b.alpha),
                fmt_sig(b.beta),
                fmt_sig(b.gamma1),
                fmt_sig(b.mu_lo),
                fmt_sig(b.mu_hi),
                mult,
                crate::report::hex(b.alpha),
                crate::report::hex(b.beta),
                crate::report::hex(b.gamma1),
                crate::report::hex(b.mu_lo),
                crate::report::hex(b.mu_hi)
            );
        }
        s
    }
}

/// Hessian spectrum at the regular `n`-gon on `symmetric_mesh(n, m)`.
pub fn hessian_spectrum(n: usize, m: usize) -> Result<HessianSpectrum> {
    hessian_spectrum_with(n, m, HatWeights::BalancedFan)
}

pub fn hessian_spectrum_with(n: usize, m: usize, weights: HatWeights) -> Result<HessianSpectrum> {
    let st = SymmetricState::new(n, m, weights)?;
    Ok(st.spectrum(weights))
}

/// Eigenvalue and `J` of the mesh morphed by `d`, warm-started by `guess`.
pub fn morphed_lambda(base: &ShapeState, d: &[f64]) -> Result<(f64, f64)> {
    let mesh = morph_mesh(&base.mesh, &base.hats, d)?;
    let sys = assemble(&mesh)?;
    let opts = EigOptions { count: 1, tol: 1e-12, ..Default::default() };
    let pairs = crate::fem::solve_eigs_with(&sys, &opts, Some(std::slice::from_ref(&base.u)))?;
    let p = base.polygon.displaced(d)?;
    Ok((pairs[0].value, pairs[0].value * polygon_area(&p)))
}

/// Central-difference gradient of `lambda_h`.
pub fn fd_gradient(base: &ShapeState, step: f64) -> Result<Vec<f64>> {
    let nd = 2 * base.n();
    (0..nd)
        .map(|d| {
            let mut e = vec![0.0; nd];
            e[d] = step;
            let lp = morphed_lambda(base, &e)?.0;
            e[d] = -step;
            let lm = morphed_lambda(base, &e)?.0;
            Ok((lp - lm) / (2.0 * step))
        })
        .collect()
}

/// Second-difference Hessian of `J`.
pub fn fd_hessian_j(base: &ShapeState, step: f64) -> Result<DMatrix<f64>> {
    let nd = 2 * base.n();
    let j0 = base.j_value();
    let eval = |pairs: &[(usize, f64)]| -> Result<f64> {
        let mut e = vec![0.0; nd];
        for &(d, s) in pairs {
            e[d] += s;
        }
        Ok(morphed_lambda(base, &e)?.1)
    };
    let mut h = DMatrix::zeros(nd, nd);
    for d in 0..nd {
        let jp = eval(&[(d, step)])?;
        let jm = eval(&[(d, -step)])?;
        h[(d, d)] = (jp - 2.0 * j0 + jm) / (step * step);
        for e in 0..d {
            let pp = eval(&[(d, step), (e, step)])?;
            let pm = eval(&[(d, step), (e, -step)])?;
            let mp = eval(&[(d, -step), (e, step)])?;
            let mm = eval(&[(d, -step), (e, -step)])?;
            let v = (pp - pm - mp + mm) / (4.0 * step * step);
            h[(d, e)] = v;
            h[(e, d)] = v;
        }
    }
    Ok(h)
}

/// Relative Frobenius distance `|a - b| / |b|`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Euclidean norm of a slice.
pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Point on the regular polygon boundary used by tests.
pub fn polygon_point(p: &Polygon, i: usize) -> Point {
    p.vertex(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::fan_refined_mesh;
    use crate::polygeom::regular_polygon;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pulled_back_coefficient_variations_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut g = [[0.0; 2]; 2];
            let mut h = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    g[i][j] = rng.gen_range(-1.0..1.0);
                    h[i][j] = rng.gen_range(-1.0..1.0);
                }
            }
            let f = |t: f64, s: f64| a_of(&[[1.0 + t * g[0][0] + s * h[0][0], t * g[0][1] + s * h[0][1]], [t * g[1][0] + s * h[1][0], 1.0 + t * g[1][1] + s * h[1][1]]]);
            let e = 1e-4;
            let a1 = a_first(&g);
            let a2 = a_second(&g, &h);
            for i in 0..2 {
                for j in 0..2 {
                    let d1 = (f(e, 0.0)[i][j] - f(-e, 0.0)[i][j]) / (2.0 * e);
                    assert!((d1 - a1[i][j]).abs() < 1e-7);
                    let d2 = (f(e, e)[i][j] - f(e, -e)[i][j] - f(-e, e)[i][j] + f(-e, -e)[i][j]) / (4.0 * e * e);
                    assert!((d2 - a2[i][j]).abs() < 1e-6, "{d2} {}", a2[i][j]);
                }
            }
            let det = |t: f64, s: f64| (1.0 + t * g[0][0] + s * h[0][0]) * (1.0 + t * g[1][1] + s * h[1][1]) - (t * g[0][1] + s * h[0][1]) * (t * g[1][0] + s * h[1][0]);
            let d2 = (det(e, e) - det(e, -e) - det(-e, e) + det(-e, -e)) / (4.0 * e * e);
            // det is bilinear in (t, s): the difference quotient is exact up to rounding.
            assert!((d2 - b_second(&g, &h)).abs() < 1e-6);
        }
    }

    fn pentagon_state(m: usize, w: HatWeights) -> ShapeState {
        symmetric_state(5, m, w).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences_on_perturbed_pentagon() {
        let p = regular_polygon(5).unwrap();
        let mut d = vec![0.0; 10];
        d[2] = 0.05;
        d[3] = -0.03;
        let q = p.displaced(&d).unwrap();
        let st = ShapeState::new(fan_refined_mesh(&q, 4).unwrap(), HatWeights::BalancedFan, None).unwrap();
        let fd = fd_gradient(&st, 1e-5).unwrap();
        let g = eig_gradient(&st);
        let err = vec_norm(&fd.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>()) / vec_norm(&g);
        assert!(err < 1e-4, "{err}");
        // Boundary form converges to the same gradient.
        let gb = eig_gradient_boundary(&st).unwrap();
        let errb = vec_norm(&gb.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>()) / vec_norm(&g);
        assert!(errb < 0.2, "{errb}");
        // Translations: the gradient sums to zero per coordinate.
        let sx: f64 = (0..5).map(|i| g[2 * i]).sum();
        let sy: f64 = (0..5).map(|i| g[2 * i + 1]).sum();
        assert!(sx.abs() < 1e-9 * vec_norm(&g) && sy.abs() < 1e-9 * vec_norm(&g));
    }

    #[test]
    fn regular_polygon_is_discretely_critical() {
        for w in [HatWeights::BalancedFan, HatWeights::SliceFan] {
            let st = pentagon_state(16, w);
            let gj = st.grad_j();
            assert!(vec_norm(&gj) < 1e-10 * st.j_value(), "{gj:?}");
            assert!((st.grad_lambda[0] + 2.0 * st.lambda / 5.0).abs() < 1e-12 * st.lambda);
        }
    }

    #[test]
    fn material_rhs_is_equivariant_and_orthogonal() {
        let st = SymmetricState::new(5, 12, HatWeights::BalancedFan).unwrap();
        for j in 1..5 {
            for b in 0..2 {
                let direct = st.shape.material_rhs(2 * j + b).unwrap();
                let r = rot(j, 5);
                let f0 = st.rotate_field(&st.shape.material_rhs(0).unwrap(), j);
                let f1 = st.rotate_field(&st.shape.material_rhs(1).unwrap(), j);
                let err = direct.iter().zip(f0.iter().zip(&f1)).map(|(d, (x, y))| (d - r[b][0] * x - r[b][1] * y).abs()).fold(0.0, f64::max);
                let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(err < 1e-12 * scale, "{err}");
            }
        }
        assert!(st.material.rhs_defect[0] < 1e-12 && st.material.rhs_defect[1] < 1e-12);
        assert!(st.material.parity_defect[0] < 1e-10 && st.material.parity_defect[1] < 1e-10);
        let bu = st.shape.sys.mass.apply(&st.shape.sys.dofs.restrict(&st.shape.u));
        for a in 0..2 {
            assert!(dot(&bu, &st.shape.sys.dofs.restrict(&st.material.fields[a])).abs() < 1e-12);
        }
    }

    #[test]
    fn circulant_route_matches_direct_route() {
        for w in [HatWeights::BalancedFan, HatWeights::SliceFan] {
            let st = SymmetricState::new(5, 12, w).unwrap();
            let spec = st.spectrum(w);
            let direct = hessian_blocks_direct(&st.shape).unwrap();
            let ev = direct.eigenvalues();
            let scale = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in ev.iter().zip(&spec.mu) {
                assert!((a - b).abs() < 1e-9 * scale, "{w:?} {ev:?} {:?}", spec.mu);
            }
            let row = st.block_row();
            for j in 0..5 {
                let b = direct.block(0, j);
                for p in 0..2 {
                    for q in 0..2 {
                        assert!((b[p][q] - row[j][p][q]).abs() < 1e-9 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn structural_identities_hold() {
        let st = SymmetricState::new(5, 16, HatWeights::BalancedFan).unwrap();
        let id = st.identities();
        assert!(id.sum_defect < 1e-10, "{id:?}");
        assert!(id.criticality_defect < 1e-10, "{id:?}");
        assert!(id.rotation_defect < 1e-10, "{id:?}");
        assert!(id.s_defect < 1e-12, "{id:?}");
        let spec = st.spectrum(HatWeights::BalancedFan);
        let scale = spec.mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b0 = &spec.blocks[0];
        assert!(b0.alpha.abs() < 1e-9 * scale && b0.beta.abs() < 1e-9 * scale && b0.gamma1.abs() < 1e-9 * scale);
        let b1 = &spec.blocks[1];
        assert!((b1.alpha - b1.beta).abs() < 1e-6 * b1.alpha.abs() && (b1.alpha - b1.gamma1).abs() < 1e-6 * b1.alpha.abs());
        for b in &spec.blocks {
            assert!((b.gamma1 - b.gamma2).abs() < 1e-8 * scale);
            assert!(b.re_b12.abs() < 1e-8 * scale);
            let c = &spec.blocks[(5 - b.k) % 5];
            assert!((b.mu_lo - c.mu_lo).abs() < 1e-9 * scale && (b.mu_hi - c.mu_hi).abs() < 1e-9 * scale);
        }
        assert_eq!(spec.zero_count, 4);
        assert!(spec.pattern_ok());
    }

    #[test]
    fn appendix_identities() {
        for w in [HatWeights::BalancedFan, HatWeights::SliceFan] {
            let st = SymmetricState::new(5, 12, w).unwrap();
            for k in 0..5 {
                let c = st.appendix_check(k).unwrap();
                assert!(c.exact_gap < 1e-9, "{w:?} {c:?}");
                if w == HatWeights::SliceFan {
                    assert!(c.literal_gap < 1e-9, "{c:?}");
                }
            }
        }
    }

    #[test]
    fn closed_form_coefficients_match_symbol() {
        for w in [HatWeights::BalancedFan, HatWeights::SliceFan] {
            let st = SymmetricState::new(5, 16, w).unwrap();
            let sp = st.spectrum(w);
            let scale = sp.mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..5 {
                let t = st.theorem_coefficients(k);
                let b = &sp.blocks[k];
                assert!((t.gamma1 - t.gamma2).abs() < 1e-8 * scale);
                // Center-weighted hats alter only the translation modes k = 1, n - 1.
                if w == HatWeights::SliceFan || (2..=3).contains(&k) {
                    for (x, y) in [(t.alpha, b.alpha), (t.beta, b.beta), (t.gamma1, b.gamma1)] {
                        assert!((x - y).abs() < 1e-9 * scale, "{w:?} {k} {x} {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_is_annihilated() {
        let st = pentagon_state(12, HatWeights::BalancedFan);
        let h = hessian_blocks_direct(&st).unwrap();
        let kb = crate::polygeom::kernel_basis(5).unwrap();
        let norm = h.eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for v in kb.vectors() {
            let q = (v.transpose() * &h.hess_j * v)[(0, 0)] / v.norm_squared();
            assert!(q.abs() < 1e-6 * norm, "{q}");
        }
    }

    #[test]
    fn hessian_matches_second_differences() {
        let st = pentagon_state(8, HatWeights::BalancedFan);
        let h = hessian_blocks_direct(&st).unwrap();
        let fd = fd_hessian_j(&st, 1e-4).unwrap();
        let e = rel_frobenius(&fd, &h.hess_j);
        assert!(e < 1e-4, "{e}");
    }
}
