//! Explicit perturbation estimates around the regular polygon: eigenvalue
//! and eigenfunction drift bounds `E_1..E_4`, the torsion comparison bound,
//! and an empirical continuity probe of the Hessian blocks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{eigenvalue_interval, Interval};
use crate::error::{Error, Result};
use crate::fem::{assemble, solve_eigs};
use crate::hessian::{hessian_blocks_direct, ShapeState};
use crate::meshgen::{fan_refined_mesh, mesh_constant_c1, morph_mesh, TriMesh};
use crate::polygeom::{kernel_basis, regular_polygon, HatFunctionSet, HatWeights, Polygon};

/// First positive zero of `J_0`.
pub const J01: f64 = 2.404_825_557_695_773;
/// First positive zero of `J_1`.
pub const J11: f64 = 3.831_705_970_207_512;

/// Largest admissible vertex displacement `sin^2(pi/n) / 4`.
pub fn epsilon0(n: usize) -> f64 {
    0.25 * (PI / n as f64).sin().powi(2)
}

/// Inputs of the perturbation estimates for a polygon `P` whose vertices lie
/// within `eps` of those of the regular `n`-gon inscribed in the unit circle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub eps: f64,
    pub n: usize,
    /// `lambda_1` of the regular polygon.
    pub lambda_star: Interval,
    /// `lambda_1(P)`.
    pub lambda1: Interval,
    /// `lambda_2(P)`. The bounds `lambda_2 <= (j11/j01)^2 lambda_1` and
    /// `lambda_2 - lambda_1 >= 3 pi^2 / diam^2` are used when sharper or when
    /// this is absent.
    pub lambda2: Option<Interval>,
    /// `diam(P)`, used for the fallback gap; infinite when unknown.
    pub diam: f64,
    /// Inradius `cos(pi/n)` of the regular polygon.
    pub r_n: f64,
}

impl PerturbationBudget {
    pub fn new(eps: f64, n: usize, lambda_star: Interval, lambda1: Interval, lambda2: Option<Interval>, diam: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("n must be at least 3, got {n}")));
        }
        let e0 = epsilon0(n);
        if !(eps >= 0.0 && eps <= e0) {
            return Err(Error::InvalidArgument(format!("eps = {eps} outside [0, {e0}]")));
        }
        Ok(Self { eps, n, lambda_star, lambda1, lambda2, diam, r_n: (PI / n as f64).cos() })
    }
}

/// Drift bounds; `|lambda_1 - lambda_1^*| <= 2 (E_1 + E_3)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EBounds {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
}

impl EBounds {
    pub fn eigenvalue_drift(&self) -> f64 {
        (2.0 * (Interval::point(self.e1) + self.e3)).hi
    }
}

/// Evaluates `E_1..E_4` in interval arithmetic, using
/// `||u_1^*||_inf^2 <= lambda_1^*` and `lambda_1(P_n + B_eps) >= lambda_1^* / (1 + eps)^2`.
/// The unknown `alpha_1 = (psi, u_1)` enters through `1 / (1 + alpha_1)`,
/// bounded with `alpha_1 >= sqrt(max(0, 1 - E_2))`.
pub fn e_bounds(b: &PerturbationBudget) -> Result<EBounds> {
    let p = Interval::point;
    let eps = p(b.eps);
    let ls = b.lambda_star;
    let l1 = b.lambda1;
    let one_eps = 1.0 + eps;
    let two_pi = 2.0 * Interval::pi();
    let e1 = eps * ls.sqr() * ls * (two_pi + two_pi * one_eps.sqr() * one_eps);
    let l_dil = Interval::point(ls.lo) / one_eps.sqr();
    let q = (e1 / Interval::point(l_dil.lo)).sqrt();
    let l2_ratio = l1 * (p(J11) / p(J01)).sqr();
    let gap_diam = 3.0 * Interval::pi().sqr() / p(b.diam).sqr();
    let (l2, gap) = match b.lambda2 {
        Some(l2) => {
            let g = l2 - l1;
            (if l2.hi < l2_ratio.hi { l2 } else { l2_ratio }, if g.lo > gap_diam.lo { g } else { gap_diam })
        }
        None => (l2_ratio, gap_diam),
    };
    if !(gap.lo > 0.0) {
        return Err(Error::BoundUnavailable("spectral gap interval contains zero".into()));
    }
    let gap = p(gap.lo);
    let r = p(b.r_n);
    let r4 = r.sqr().sqr();
    let growth = ((r + eps).sqr().sqr() - r4) / r4;
    let e2 = Interval::point(l1.hi) / gap * growth + 2.0 * Interval::point(l2.hi) / gap * q;
    let alpha_lo = (1.0 - e2).max(&p(0.0)).sqrt().lo;
    let f = 1.0 / (1.0 + p(alpha_lo));
    let ratio = r / (r + eps);
    let e3 = 2.0 * p(l1.hi) * e2 * f + p(ls.hi) * (1.0 - ratio.sqr()) + p(ls.hi) * q;
    let e4 = 2.0 * f * e2 + 2.0 * q + q.sqr();
    Ok(EBounds { e1: e1.hi, e2: e2.hi, e3: e3.hi, e4: e4.hi })
}

/// `d_H ||f||_inf^2 (|O_a| diam O_a + |O_b| diam O_b)`, a bound on
/// `int |grad v_a - grad v_b|^2` for solutions of `-Delta v = f` on convex
/// domains `O_a`, `O_b`.
pub fn torsion_gap(f_inf: f64, areas: [f64; 2], diams: [f64; 2], d_h: f64) -> f64 {
    let p = Interval::point;
    (p(d_h) * p(f_inf).sqr() * (p(areas[0]) * diams[0] + p(areas[1]) * diams[1])).hi
}

/// Vertex displacement with each vertex moved by a vector uniform in the
/// disk of radius `eps`.
pub fn random_displacement(n: usize, eps: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .flat_map(|_| {
            let r = eps * rng.gen::<f64>().sqrt();
            let t = 2.0 * PI * rng.gen::<f64>();
            [r * t.cos(), r * t.sin()]
        })
        .collect()
}

/// `p` with every vertex moved by a uniform random vector of length at most `eps`.
pub fn random_perturbation(p: &Polygon, eps: f64, rng: &mut impl Rng) -> Result<Polygon> {
    p.displaced(&random_displacement(p.n(), eps, rng))
}

/// Guaranteed interval for `lambda_1` together with the discrete `lambda_2`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EigenEnclosure {
    pub lambda1_h: f64,
    pub lambda2_h: f64,
    pub lambda1: Interval,
    pub lambda2: Interval,
}

/// FEM eigenvalues on `mesh` widened to guaranteed intervals.
pub fn eigen_enclosure(mesh: &TriMesh) -> Result<EigenEnclosure> {
    let sys = assemble(mesh)?;
    let pairs = solve_eigs(&sys, 2)?;
    let c1 = mesh_constant_c1(mesh)?;
    Ok(EigenEnclosure {
        lambda1_h: pairs[0].value,
        lambda2_h: pairs[1].value,
        lambda1: eigenvalue_interval(pairs[0].value, c1, mesh.h)?,
        lambda2: eigenvalue_interval(pairs[1].value, c1, mesh.h)?,
    })
}

/// One random trial: measured drift of `lambda_1` against `2 (E_1 + E_3)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityTrial {
    pub seed: u64,
    pub eps: f64,
    pub lambda_star_h: f64,
    pub lambda_h: f64,
    pub measured: f64,
    pub bounds: EBounds,
    pub bound: f64,
}

impl StabilityTrial {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }
}

/// Runs `count` seeded trials at one `eps`. The regular polygon is meshed by
/// `levels` refinements of an ear-clip triangulation and each perturbed
/// polygon by morphing that mesh, so both share one topology.
pub fn stability_trials(n: usize, eps: f64, count: usize, seed: u64, levels: usize) -> Result<Vec<StabilityTrial>> {
    let reg = regular_polygon(n)?;
    let base = fan_refined_mesh(&reg, levels)?;
    let hats = HatFunctionSet::with_weights(base.coarse.clone(), HatWeights::BalancedFan)?;
    let star = eigen_enclosure(&base)?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let d = random_displacement(n, eps, &mut rng);
            let p = reg.displaced(&d)?;
            let enc = eigen_enclosure(&morph_mesh(&base, &hats, &d)?)?;
            let budget = PerturbationBudget::new(eps, n, star.lambda1, enc.lambda1, Some(enc.lambda2), p.diameter())?;
            let bounds = e_bounds(&budget)?;
            Ok(StabilityTrial {
                seed: s,
                eps,
                lambda_star_h: star.lambda1_h,
                lambda_h: enc.lambda1_h,
                measured: (enc.lambda1_h - star.lambda1_h).abs(),
                bounds,
                bound: bounds.eigenvalue_drift(),
            })
        })
        .collect()
}

/// Drift of the Hessian blocks of `J` at one perturbation size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftRow {
    pub eps: f64,
    /// Max over samples of `max_ij |M_ij - M_ij^*|`.
    pub max_drift: f64,
    pub mean_drift: f64,
    /// Max over samples of `|H t_x| / |H|` and the same for `t_y`.
    pub translation_defect: f64,
}

/// Empirical continuity of the Hessian blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityProbe {
    pub n: usize,
    pub rows: Vec<DriftRow>,
    /// Least-squares slope of `log max_drift` against `log eps`.
    pub exponent: f64,
}

impl ContinuityProbe {
    pub fn to_csv(&self) -> String {
        use crate::report::{fmt_sig, hex};
        let mut s = String::from("eps,max_drift,mean_drift,translation_defect,max_drift_hex\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_sig(r.eps),
                fmt_sig(r.max_drift),
                fmt_sig(r.mean_drift),
                fmt_sig(r.translation_defect),
                hex(r.max_drift)
            ));
        }
        s
    }
}

/// Samples `samples` random unit displacement patterns, scales each by every
/// `eps` in `eps_list`, and records the entrywise drift of the Hessian of `J`.
/// Perturbed polygons are meshed by morphing the `levels`-refined ear-clip
/// mesh of the regular polygon. No certification is implied.
pub fn hessian_continuity_probe(n: usize, eps_list: &[f64], samples: usize, seed: u64, levels: usize) -> Result<ContinuityProbe> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("empty eps list".into()));
    }
    let reg = regular_polygon(n)?;
    let mesh = fan_refined_mesh(&reg, levels)?;
    let hats = HatFunctionSet::with_weights(mesh.coarse.clone(), HatWeights::BalancedFan)?;
    let base = hessian_blocks_direct(&ShapeState::new(mesh.clone(), HatWeights::BalancedFan, None)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let d: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = (0..n).map(|i| d[2 * i].hypot(d[2 * i + 1])).fold(0.0, f64::max);
            d.iter().map(|x| x / m).collect()
        })
        .collect();
    let kb = kernel_basis(n)?;
    let rows = eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0 && eps <= epsilon0(n)) {
                return Err(Error::InvalidArgument(format!("eps = {eps} outside (0, eps0]")));
            }
            let drifts: Vec<(f64, f64)> = patterns
                .par_iter()
                .map(|pat| {
                    let d: Vec<f64> = pat.iter().map(|x| x * eps).collect();
                    let p = reg.displaced(&d)?;
                    if !p.is_convex() {
                        return Err(Error::InvalidArgument("perturbed polygon is not convex".into()));
                    }
                    let hb = hessian_blocks_direct(&ShapeState::new(morph_mesh(&mesh, &hats, &d)?, HatWeights::BalancedFan, None)?)?;
                    let drift = (&hb.hess_j - &base.hess_j).amax();
                    let norm = hb.hess_j.norm();
                    let tdef = kb.vectors()[..2].iter().map(|v| (&hb.hess_j * *v).norm() / (norm * v.norm())).fold(0.0, f64::max);
                    Ok((drift, tdef))
                })
                .collect::<Result<_>>()?;
            Ok(DriftRow {
                eps,
                max_drift: drifts.iter().map(|d| d.0).fold(0.0, f64::max),
                mean_drift: drifts.iter().map(|d| d.0).sum::<f64>() / drifts.len() as f64,
                translation_defect: drifts.iter().map(|d| d.1).fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_drift.ln()).collect();
    let exponent = if rows.len() > 1 {
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    Ok(ContinuityProbe { n, rows, exponent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::symmetric_mesh;
    use crate::polygeom::polygon_area;
    use crate::torsion::solve_torsion;

    fn budget(eps: f64) -> PerturbationBudget {
        let ls = Interval::new(7.9, 7.96).unwrap();
        let l1 = Interval::new(7.9, 7.97).unwrap();
        let l2 = Interval::new(19.9, 20.1).unwrap();
        PerturbationBudget::new(eps, 5, ls, l1, Some(l2), 1.91).unwrap()
    }

    #[test]
    fn zero_perturbation_gives_zero_bounds() {
        let e = e_bounds(&budget(0.0)).unwrap();
        assert_eq!(e.e1, 0.0);
        assert!(e.e2 < 1e-14 && e.e3 < 1e-13 && e.e4 < 1e-14, "{e:?}");
    }

    #[test]
    fn bounds_are_nondecreasing_in_eps() {
        let grid: Vec<f64> = (0..20).map(|i| epsilon0(5) * i as f64 / 19.0).collect();
        let es: Vec<EBounds> = grid.iter().map(|&e| e_bounds(&budget(e)).unwrap()).collect();
        for w in es.windows(2) {
            assert!(w[1].e1 >= w[0].e1 && w[1].e2 >= w[0].e2 && w[1].e3 >= w[0].e3 && w[1].e4 >= w[0].e4);
        }
    }

    #[test]
    fn e1_matches_direct_evaluation() {
        let b = budget(1e-3);
        let e = e_bounds(&b).unwrap();
        let ls: f64 = 7.96;
        let direct = 1e-3 * ls.powi(3) * (2.0 * PI + 2.0 * PI * 1.001f64.powi(3));
        assert!(e.e1 >= direct && e.e1 < direct * (1.0 + 1e-14));
    }

    #[test]
    fn fallback_gap_and_eps_range() {
        let ls = Interval::new(7.9, 7.96).unwrap();
        let b = PerturbationBudget::new(1e-3, 5, ls, ls, None, 1.91).unwrap();
        assert!(e_bounds(&b).unwrap().e2.is_finite());
        assert!(PerturbationBudget::new(epsilon0(5) * 1.01, 5, ls, ls, None, 1.91).is_err());
        let overlap = Some(Interval::new(7.0, 8.0).unwrap());
        let rescued = PerturbationBudget::new(1e-3, 5, ls, ls, overlap, 1.91).unwrap();
        assert!(e_bounds(&rescued).is_ok());
        let bad = PerturbationBudget::new(1e-3, 5, ls, ls, overlap, f64::INFINITY).unwrap();
        assert!(matches!(e_bounds(&bad), Err(Error::BoundUnavailable(_))));
    }

    #[test]
    fn measured_drift_is_below_bound() {
        for eps in [1e-4, 1e-3] {
            for t in stability_trials(5, eps, 4, 11, 3).unwrap() {
                assert!(t.holds(), "{t:?}");
            }
        }
    }

    #[test]
    fn torsion_gap_bound_dominates_nested_pentagons() {
        assert_eq!(torsion_gap(1.0, [1.0, 1.0], [1.0, 1.0], 0.0), 0.0);
        let g1 = torsion_gap(1.0, [2.0, 1.5], [1.9, 1.8], 1e-3);
        let g2 = torsion_gap(1.0, [2.0, 1.5], [1.9, 1.8], 2e-3);
        assert!((g2 / g1 - 2.0).abs() < 1e-12);
        // For nested domains int |grad v_a - grad v_b|^2 = T_a - T_b.
        let s: f64 = 1.0 - 1e-3;
        let mesh = symmetric_mesh(5, 32).unwrap();
        let ta = solve_torsion(&mesh).unwrap().t;
        let tb = ta * s.powi(4);
        let p = regular_polygon(5).unwrap();
        let a = polygon_area(&p);
        let bound = torsion_gap(1.0, [a, a * s * s], [p.diameter(), p.diameter() * s], 1e-3);
        assert!(ta - tb <= bound, "{} {bound}", ta - tb);
    }

    #[test]
    fn hessian_drift_shrinks_and_translations_stay_in_kernel() {
        let probe = hessian_continuity_probe(5, &[4e-3, 2e-3, 1e-3], 3, 5, 2).unwrap();
        for w in probe.rows.windows(2) {
            assert!(w[1].max_drift < w[0].max_drift);
        }
        for r in &probe.rows {
            assert!(r.translation_defect < 1e-8, "{r:?}");
        }
        assert!(probe.exponent > 0.5, "{}", probe.exponent);
    }
}
