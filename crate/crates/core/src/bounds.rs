//! Analytic constants for the reduction of the polygonal problem to finitely
//! many computations: surgery constants and the maximal diameter, the Makai
//! inradius threshold, the eigenvalue Lipschitz estimate, the minimal edge
//! threshold and the covering count.

use std::f64::consts::{LN_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::certify::Interval;
use crate::error::{Error, Result};
use crate::stability::J01;

fn exp_enclosure(x: Interval) -> Interval {
    Interval { lo: Interval::around(x.lo.exp(), 2).lo, hi: Interval::around(x.hi.exp(), 2).hi }
}

/// `e^{1/(4 pi)}`.
fn exp_quarter_pi() -> Interval {
    exp_enclosure(Interval::point(1.0) / (4.0 * Interval::pi()))
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {x}")))
    }
}

/// Constants of the surgery argument bounding the diameter of an optimal
/// polygon, for an upper bound `K >= l_n^* / pi`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurgeryConstants {
    pub k_bound: f64,
    pub c: Interval,
    /// Largest float with `C0 (C0 + 1) <= c` certified.
    pub c0: f64,
    pub r0: f64,
    /// `|C0^2 + C0 - c|` bounded in interval arithmetic.
    pub residual: f64,
    /// Strip count `floor(1 / (16 C0^4)) + 1`.
    pub k: u128,
    /// True when the floor was resolved by the enclosure of `1 / (16 C0^4)`.
    pub k_exact: bool,
    pub e_star: f64,
    pub d_star: Interval,
}

/// Evaluates the surgery constants for `K > 0`.
pub fn surgery_constants(k_bound: f64) -> Result<SurgeryConstants> {
    check_positive("K", k_bound)?;
    let kk = Interval::point(k_bound);
    let ln2 = Interval::around(LN_2, 1);
    let den = 2.0 * Interval::pi() * (8.0 + 12.0 * ln2) * exp_quarter_pi() * kk.sqr();
    let c = den.recip();
    let cm = c.mid();
    let mut c0 = 2.0 * cm / (1.0 + (1.0 + 4.0 * cm).sqrt());
    while (Interval::point(c0) * (Interval::point(c0) + 1.0)).hi > c.lo {
        c0 = c0.next_down();
    }
    let c0i = Interval::point(c0);
    let residual = (c0i * (c0i + 1.0) - c).abs().hi;

    let q = (16.0 * c0i.sqr().sqr()).recip();
    if !(q.hi < 2f64.powi(120)) {
        return Err(Error::BoundUnavailable(format!("strip count overflows for K = {k_bound}")));
    }
    let (fl, fh) = (q.lo.floor(), q.hi.floor());
    let k = fh as u128 + 1;

    // Largest dyadic e with 2 sqrt(2) sqrt(e) < C0^2, then halved.
    let target = c0i.sqr();
    let holds = |j: i32| (2.0 * Interval::around(SQRT_2, 1) * Interval::point(2f64.powi(j)).sqrt()).hi < target.lo;
    let mut j = (c0.powi(4) / 8.0).log2().floor() as i32 + 1;
    while !holds(j) {
        j -= 1;
    }
    while holds(j + 1) {
        j += 1;
    }
    let e_star = 2f64.powi(j - 1);
    let d_star = Interval::pi() / e_star;
    Ok(SurgeryConstants { k_bound, c, c0, r0: c0, residual, k, k_exact: fl == fh, e_star, d_star })
}

impl SurgeryConstants {
    /// `D_max(n) = 2 d* + (k + n - 2) 8 C0`, as an enclosure.
    pub fn d_max_interval(&self, n: usize) -> Interval {
        let strips = Interval::around((self.k + n as u128 - 2) as f64, 1);
        2.0 * self.d_star + strips * 8.0 * Interval::point(self.c0)
    }

    /// Upper end of the `D_max(n)` enclosure.
    pub fn d_max(&self, n: usize) -> f64 {
        self.d_max_interval(n).hi
    }

    /// Certified `C0 (C0 + 1) <= c` and `2 sqrt(2) sqrt(e*) < C0^2`.
    pub fn invariants_hold(&self) -> bool {
        let c0 = Interval::point(self.c0);
        let quad = (c0 * (c0 + 1.0)).hi <= self.c.lo;
        let strict = (2.0 * Interval::around(SQRT_2, 1) * Interval::point(self.e_star).sqrt()).hi < c0.sqr().lo;
        quad && strict && self.r0 == self.c0
    }
}

/// Makai threshold: a polygon of the given area with inradius below
/// `sqrt(area / (4 l*))` has `|P| lambda_1(P) > l*`.
pub fn inradius_min(l_star_upper: f64, area: f64) -> Result<f64> {
    check_positive("l_star_upper", l_star_upper)?;
    check_positive("area", area)?;
    Ok((area / (4.0 * l_star_upper)).sqrt())
}

/// Lipschitz estimate `4 sqrt(2) pi e^{1/(4 pi)} max(lP, lQ)^2 lcap sqrt(delta)`
/// for polygons with vertices at distance at most `delta`.
pub fn lambda_lipschitz(lambda_p: f64, lambda_q: f64, lambda_cap: f64, delta: f64) -> Result<f64> {
    check_positive("lambda_p", lambda_p)?;
    check_positive("lambda_q", lambda_q)?;
    check_positive("lambda_cap", lambda_cap)?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
    }
    let m = Interval::point(lambda_p.max(lambda_q));
    let b = 4.0 * Interval::around(SQRT_2, 1) * Interval::pi() * exp_quarter_pi() * m.sqr() * lambda_cap
        * Interval::point(delta).sqrt();
    Ok(b.hi)
}

/// `delta_0 = ((l_prev - l) / C)^2`.
pub fn min_edge_threshold(l_star_prev: f64, l_star: f64, c: f64) -> Result<f64> {
    check_positive("C", c)?;
    let gap = l_star_prev - l_star;
    if !(gap > 0.0) {
        return Err(Error::InvalidArgument(format!("l_star_prev - l_star must be positive, got {gap}")));
    }
    Ok((gap / c).powi(2))
}

/// Constant of the minimal edge estimate for edges up to `delta0`, at area
/// `pi`: `pi 4 sqrt(2) pi e^{1/(4 pi)} (lambda_1(B_1) / (rho - 2 delta0)^2)^3`
/// with `rho = sqrt(pi / (4 l_prev))`.
pub fn edge_constant(l_star_prev: f64, delta0: f64) -> Result<f64> {
    let rho = inradius_min(l_star_prev, PI)?;
    if !(delta0 >= 0.0 && 2.0 * delta0 < rho) {
        return Err(Error::InvalidArgument(format!("delta0 must lie in [0, {}), got {delta0}", rho / 2.0)));
    }
    let r = Interval::point(rho) - 2.0 * Interval::point(delta0);
    let lb1 = Interval::around(J01, 1).sqr();
    let cube = (lb1 / r.sqr()).powf(3.0);
    let c = Interval::pi() * 4.0 * Interval::around(SQRT_2, 1) * Interval::pi() * exp_quarter_pi() * cube;
    Ok(c.hi)
}

/// Self-consistent threshold: `C` is evaluated at `((l_prev - l) / C(0))^2`,
/// which dominates the resulting `delta_0`.
pub fn edge_threshold_from_proof(l_star_prev: f64, l_star: f64) -> Result<(f64, f64)> {
    let d1 = min_edge_threshold(l_star_prev, l_star, edge_constant(l_star_prev, 0.0)?)?;
    let c = edge_constant(l_star_prev, d1)?;
    Ok((min_edge_threshold(l_star_prev, l_star, c)?, c))
}

/// Upper bound on the number of `delta`-balls covering the reduced
/// configuration space, `c_{2n-4} (D/delta)^{2n-4}` with
/// `c_{2n-4} = (sqrt(2n-4) D / (2 delta))^{2n-4}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringPlan {
    pub n: usize,
    pub d_max: f64,
    pub delta: f64,
    pub log10_count: f64,
    /// Count as `mantissa * 10^exponent`, `1 <= mantissa < 10`.
    pub mantissa: f64,
    pub exponent: i64,
}

pub fn covering_plan(d_max: f64, delta: f64, n: usize) -> Result<CoveringPlan> {
    check_positive("d_max", d_max)?;
    check_positive("delta", delta)?;
    if n < 3 {
        return Err(Error::InvalidArgument(format!("n must be at least 3, got {n}")));
    }
    let dim = (2 * n - 4) as f64;
    let ratio = d_max / delta;
    let base = dim.sqrt() / 2.0 * ratio * ratio;
    let log10_count = dim * base.log10();
    let exponent = log10_count.floor();
    Ok(CoveringPlan {
        n,
        d_max,
        delta,
        log10_count,
        mantissa: 10f64.powf(log10_count - exponent),
        exponent: exponent as i64,
    })
}

/// All constants for one `(K, n)` pair, as printed by the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsReport {
    pub n: usize,
    pub constants: SurgeryConstants,
    pub d_max: f64,
    pub inradius_min: f64,
    pub covering: CoveringPlan,
}

/// Report for `K`, `n` and a covering radius `delta`; the inradius threshold
/// uses `l* = pi K` at area `pi`.
pub fn bounds_report(k_bound: f64, n: usize, delta: f64) -> Result<BoundsReport> {
    let constants = surgery_constants(k_bound)?;
    let d_max = constants.d_max(n);
    Ok(BoundsReport {
        n,
        inradius_min: inradius_min(PI * k_bound, PI)?,
        covering: covering_plan(d_max, delta, n)?,
        d_max,
        constants,
    })
}
