//! Torsion function `-Delta w = 1`, torsional rigidity `T = int w`, and its
//! exact discrete shape gradient and Hessian under hat-function morphing.
//!
//! The discrete rigidity is `T_h = max_v 2 L(v) - a(v, v)` with `L(v) = int v`.
//! Pulled back along `F = I + t G` this becomes `2 L_t(w_t) - a_t(w_t, w_t)`
//! with `L_t(v) = int det F v`, so
//! `dT = 2 L_d(w) - a_d(w, w)` and
//! `d^2 T = 2 L_de(w) - a_de(w, w) + 2 a(W_d, W_e)`, where the material
//! derivative `W_d` solves `a(W_d, v) = L_d(v) - a_d(w, v)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fem::{
    assemble, dot, slice_gradient_products, slice_mass_products, stiffness_solve, tri_geometry, tri_gradient, weighted_load,
    CgOptions, FemSystem,
};
use crate::hessian::{a_first, a_second, b_second, Mat2};
use crate::meshgen::{morph_mesh, TriMesh};
use crate::polygeom::{area_gradient, area_hessian, polygon_area, HatFunctionSet, HatWeights, Polygon};

fn tr(g: &Mat2) -> f64 {
    g[0][0] + g[1][1]
}

fn frob(g: &Mat2, h: &Mat2) -> f64 {
    g[0][0] * h[0][0] + g[0][1] * h[0][1] + g[1][0] * h[1][0] + g[1][1] * h[1][1]
}

/// Discrete torsion function on a mesh.
#[derive(Clone, Debug)]
pub struct TorsionState {
    pub mesh: TriMesh,
    pub sys: FemSystem,
    /// Nodal torsion function, zero on the boundary.
    pub w: Vec<f64>,
    /// `T_h = int w_h`.
    pub t: f64,
    /// Per coarse cell `int grad w (x) grad w`.
    pub grad_table: Vec<Mat2>,
    /// Per coarse cell `int w`.
    pub mass_table: Vec<f64>,
    /// Smallest interior nodal value.
    pub min_interior: f64,
}

impl TorsionState {
    /// Discrete maximum principle `w >= 0` at interior nodes.
    pub fn maximum_principle_holds(&self) -> bool {
        self.min_interior >= 0.0
    }
}

/// Stiffness solve with unit load.
pub fn solve_torsion(mesh: &TriMesh) -> Result<TorsionState> {
    let sys = assemble(mesh)?;
    let ones = vec![1.0; mesh.nodes.len()];
    let load = weighted_load(mesh, &ones, |_| 1.0);
    let w = stiffness_solve(&sys, &load, &CgOptions { tol: 1e-13, ..Default::default() })?;
    let t = dot(&load, &w);
    let grad_table = slice_gradient_products(mesh, &w, &w)?;
    let mass_table = slice_mass_products(mesh, &w, &ones)?;
    let min_interior = w
        .iter()
        .zip(&mesh.boundary)
        .filter(|(_, b)| !**b)
        .map(|(v, _)| *v)
        .fold(f64::INFINITY, f64::min);
    Ok(TorsionState { mesh: mesh.clone(), sys, w, t, grad_table, mass_table, min_interior })
}

/// Gradient and Hessian of `T_h` with respect to the vertex coordinates.
#[derive(Clone, Debug)]
pub struct TorsionHessian {
    pub n: usize,
    pub t: f64,
    pub area: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    pub area_gradient: DVector<f64>,
    pub maximum_principle: bool,
}

impl TorsionHessian {
    /// 2x2 block `T_ij`.
    pub fn block(&self, i: usize, j: usize) -> Mat2 {
        let h = &self.hess;
        [[h[(2 * i, 2 * j)], h[(2 * i, 2 * j + 1)]], [h[(2 * i + 1, 2 * j)], h[(2 * i + 1, 2 * j + 1)]]]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.hess)
    }

    /// Hessian of the scale-invariant `-T / |P|^2`, whose minimizer among
    /// `n`-gons is expected to be the regular polygon.
    pub fn scale_invariant_hessian(&self) -> DMatrix<f64> {
        let n = self.n;
        let ga = self.area_gradient.clone();
        let gt = DVector::from_vec(self.grad.clone());
        let ha = area_hessian(n);
        let (a, t) = (self.area, self.t);
        let h = &self.hess / (a * a) - (&gt * ga.transpose() + &ga * gt.transpose()) * (2.0 / a.powi(3))
            + &ga * ga.transpose() * (6.0 * t / a.powi(4))
            - ha * (2.0 * t / a.powi(3));
        let h = -h;
        0.5 * (&h + h.transpose())
    }
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigenvalues().iter().cloned().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn direction(hats: &HatFunctionSet, c: usize, d: usize) -> Mat2 {
    let g = hats.grad(c, d / 2);
    let mut m = [[0.0; 2]; 2];
    m[d % 2] = g;
    m
}

/// Nodal right-hand side `L_d(v) - a_d(w, v)`, zero on the boundary.
fn material_rhs(st: &TorsionState, hats: &HatFunctionSet, d: usize) -> Result<Vec<f64>> {
    let mesh = &st.mesh;
    let nc = st.mass_table.len();
    let ad: Vec<Mat2> = (0..nc).map(|c| a_first(&direction(hats, c, d))).collect();
    let tg: Vec<f64> = (0..nc).map(|c| tr(&direction(hats, c, d))).collect();
    let mut out = vec![0.0; mesh.nodes.len()];
    for (t, tri) in mesh.tris.iter().enumerate() {
        let c = mesh.cell[t];
        let (g, area) = tri_geometry(mesh, t)?;
        let gw = tri_gradient(mesh, &g, t, &st.w);
        let k = ad[c];
        let kg = [k[0][0] * gw[0] + k[0][1] * gw[1], k[1][0] * gw[0] + k[1][1] * gw[1]];
        for a in 0..3 {
            out[tri[a]] += tg[c] * area / 3.0 - area * (kg[0] * g[a][0] + kg[1] * g[a][1]);
        }
    }
    for (v, b) in mesh.boundary.iter().enumerate() {
        if *b {
            out[v] = 0.0;
        }
    }
    Ok(out)
}

/// Exact gradient and Hessian of `T_h` under morphing by the hats of the
/// mesh's coarse triangulation.
pub fn torsion_hessian(mesh: &TriMesh, weights: HatWeights) -> Result<TorsionHessian> {
    let st = solve_torsion(mesh)?;
    let hats = HatFunctionSet::with_weights(mesh.coarse.clone(), weights)?;
    let n = hats.n();
    let nd = 2 * n;
    let nc = st.mass_table.len();
    let grad: Vec<f64> = (0..nd)
        .map(|d| {
            (0..nc)
                .map(|c| {
                    let g = direction(&hats, c, d);
                    2.0 * tr(&g) * st.mass_table[c] - frob(&a_first(&g), &st.grad_table[c])
                })
                .sum()
        })
        .collect();
    let opts = CgOptions { tol: 1e-13, ..Default::default() };
    let fields: Vec<Vec<f64>> =
        (0..nd).into_par_iter().map(|d| stiffness_solve(&st.sys, &material_rhs(&st, &hats, d)?, &opts)).collect::<Result<_>>()?;
    let images: Vec<Vec<f64>> = fields
        .par_iter()
        .map(|f| st.sys.dofs.extend(&st.sys.stiffness.apply(&st.sys.dofs.restrict(f))))
        .collect();
    let mut hess = DMatrix::zeros(nd, nd);
    for d in 0..nd {
        for e in d..nd {
            let local: f64 = (0..nc)
                .map(|c| {
                    let (g, h) = (direction(&hats, c, d), direction(&hats, c, e));
                    2.0 * b_second(&g, &h) * st.mass_table[c] - frob(&a_second(&g, &h), &st.grad_table[c])
                })
                .sum();
            let v = local + 2.0 * dot(&fields[d], &images[e]);
            hess[(d, e)] = v;
            hess[(e, d)] = v;
        }
    }
    let polygon = Polygon::new(mesh.coarse.nodes[..n].to_vec())?;
    Ok(TorsionHessian {
        n,
        t: st.t,
        area: polygon_area(&polygon),
        grad,
        hess,
        area_gradient: area_gradient(&polygon),
        maximum_principle: st.maximum_principle_holds(),
    })
}

/// `T_h` on the mesh morphed by the vertex displacement `d`.
pub fn morphed_torsion(mesh: &TriMesh, hats: &HatFunctionSet, d: &[f64]) -> Result<f64> {
    Ok(solve_torsion(&morph_mesh(mesh, hats, d)?)?.t)
}

/// Second-difference Hessian of `T_h` under morphing.
pub fn fd_torsion_hessian(mesh: &TriMesh, weights: HatWeights, step: f64) -> Result<DMatrix<f64>> {
    let hats = HatFunctionSet::with_weights(mesh.coarse.clone(), weights)?;
    let nd = 2 * hats.n();
    let t0 = solve_torsion(mesh)?.t;
    let eval = |pairs: &[(usize, f64)]| -> Result<f64> {
        let mut e = vec![0.0; nd];
        for &(d, s) in pairs {
            e[d] += s;
        }
        morphed_torsion(mesh, &hats, &e)
    };
    let entries: Vec<(usize, usize)> = (0..nd).flat_map(|d| (0..=d).map(move |e| (d, e))).collect();
    let vals: Vec<f64> = entries
        .par_iter()
        .map(|&(d, e)| {
            if d == e {
                Ok((eval(&[(d, step)])? - 2.0 * t0 + eval(&[(d, -step)])?) / (step * step))
            } else {
                let pp = eval(&[(d, step), (e, step)])?;
                let pm = eval(&[(d, step), (e, -step)])?;
                let mp = eval(&[(d, -step), (e, step)])?;
                let mm = eval(&[(d, -step), (e, -step)])?;
                Ok((pp - pm - mp + mm) / (4.0 * step * step))
            }
        })
        .collect::<Result<_>>()?;
    let mut h = DMatrix::zeros(nd, nd);
    for (&(d, e), v) in entries.iter().zip(vals) {
        h[(d, e)] = v;
        h[(e, d)] = v;
    }
    Ok(h)
}

/// Torsion spectrum row for CSV output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorsionReport {
    pub n: usize,
    pub m: usize,
    pub t: f64,
    pub area: f64,
    /// Eigenvalues of the Hessian of `-T / |P|^2`, ascending.
    pub eigenvalues: Vec<f64>,
    pub zero_count: usize,
    pub maximum_principle: bool,
}

impl TorsionReport {
    pub fn to_csv(&self) -> String {
        use crate::report::{fmt_sig, hex};
        let mut s = String::from("index,eigenvalue,eigenvalue_hex\n");
        for (i, e) in self.eigenvalues.iter().enumerate() {
            s.push_str(&format!("{i},{},{}\n", fmt_sig(*e), hex(*e)));
        }
        s
    }
}

/// Torsion and scale-invariant torsion Hessian spectrum at the regular `n`-gon.
pub fn torsion_report(n: usize, m: usize) -> Result<TorsionReport> {
    let mesh = crate::meshgen::symmetric_mesh(n, m)?;
    let th = torsion_hessian(&mesh, HatWeights::BalancedFan)?;
    let eigenvalues = sorted_eigenvalues(&th.scale_invariant_hessian());
    let max = eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let zero_count = eigenvalues.iter().filter(|e| e.abs() <= 1e-4 * max).count();
    Ok(TorsionReport { n, m, t: th.t, area: th.area, eigenvalues, zero_count, maximum_principle: th.maximum_principle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::rel_frobenius;
    use crate::meshgen::{fan_refined_mesh, symmetric_mesh};
    use crate::polygeom::{kernel_basis, regular_polygon};
    use std::f64::consts::PI;

    /// Torsional rigidity of the unit square from the double sine series
    /// `T = 64 / pi^6 sum_{j,k odd} 1 / (j^2 k^2 (j^2 + k^2))`.
    fn square_series() -> f64 {
        let mut s = 0.0;
        for j in (1..4000).step_by(2) {
            for k in (1..4000).step_by(2) {
                let (j2, k2) = ((j * j) as f64, (k * k) as f64);
                s += 1.0 / (j2 * k2 * (j2 + k2));
            }
        }
        64.0 / PI.powi(6) * s
    }

    #[test]
    fn unit_square_matches_series() {
        let sq = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let exact = square_series();
        let coarse = solve_torsion(&fan_refined_mesh(&sq, 5).unwrap()).unwrap();
        let fine = solve_torsion(&fan_refined_mesh(&sq, 6).unwrap()).unwrap();
        assert!(coarse.t < fine.t && fine.t < exact);
        let (e1, e2) = (exact - coarse.t, exact - fine.t);
        assert!(e2 / exact < 1e-3, "{} {}", fine.t, exact);
        assert!((e1 / e2 - 4.0).abs() < 0.3, "{}", e1 / e2);
        assert!(fine.maximum_principle_holds());
    }

    #[test]
    fn scaling_to_fourth_power() {
        let p = regular_polygon(5).unwrap();
        let a = solve_torsion(&fan_refined_mesh(&p, 3).unwrap()).unwrap().t;
        let b = solve_torsion(&fan_refined_mesh(&p.scaled(2.0).unwrap(), 3).unwrap()).unwrap().t;
        assert!((b / a - 16.0).abs() < 1e-8 * 16.0);
    }

    #[test]
    fn gradient_matches_difference_quotients() {
        let mesh = symmetric_mesh(5, 6).unwrap();
        let th = torsion_hessian(&mesh, HatWeights::BalancedFan).unwrap();
        let hats = HatFunctionSet::with_weights(mesh.coarse.clone(), HatWeights::BalancedFan).unwrap();
        let step = 1e-5;
        for d in 0..10 {
            let mut e = vec![0.0; 10];
            e[d] = step;
            let tp = morphed_torsion(&mesh, &hats, &e).unwrap();
            e[d] = -step;
            let tm = morphed_torsion(&mesh, &hats, &e).unwrap();
            let fd = (tp - tm) / (2.0 * step);
            assert!((fd - th.grad[d]).abs() < 1e-7, "{d} {fd} {}", th.grad[d]);
        }
    }

    #[test]
    fn hessian_matches_second_differences_and_annihilates_kernel() {
        let mesh = symmetric_mesh(5, 8).unwrap();
        let th = torsion_hessian(&mesh, HatWeights::BalancedFan).unwrap();
        let fd = fd_torsion_hessian(&mesh, HatWeights::BalancedFan, 1e-4).unwrap();
        assert!(rel_frobenius(&th.hess, &fd) < 1e-5, "{}", rel_frobenius(&th.hess, &fd));
        let kb = kernel_basis(5).unwrap();
        let norm = th.hess.norm();
        for v in &kb.vectors()[..2] {
            assert!((&th.hess * *v).norm() < 1e-9 * norm);
        }
    }

    #[test]
    fn regular_pentagon_is_a_strict_local_maximum_modulo_similarities() {
        let r = torsion_report(5, 16).unwrap();
        assert_eq!(r.zero_count, 4, "{:?}", r.eigenvalues);
        let max = r.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(r.eigenvalues[4] > 1e-3 * max, "{:?}", r.eigenvalues);
        assert!(r.maximum_principle);
    }

    #[test]
    fn polygon_torsion_approaches_disk() {
        let ts: Vec<f64> = [16, 64, 256].iter().map(|&n| solve_torsion(&symmetric_mesh(n, 16).unwrap()).unwrap().t).collect();
        assert!(ts[0] < ts[1] && ts[1] < ts[2] && ts[2] < PI / 8.0, "{ts:?}");
        assert!(PI / 8.0 - ts[2] < 1e-3, "{ts:?}");
    }
}
