//! A priori error cascade for the eigenpair, the material derivative fields
//! and the circulant coefficients, evaluated in interval arithmetic, and the
//! local-minimality verdict built from the enclosures of the Hessian
//! eigenvalues.

use std::f64::consts::{PI, SQRT_2};
use std::ops::{Add, Div, Mul, Neg, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::segment_mass;
use crate::hessian::SymmetricState;
use crate::meshgen::mesh_constant_c1;
use crate::polygeom::HatWeights;

/// Closed interval `[lo, hi]` with outward rounding: every primitive result
/// is widened by one ulp on each side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn down(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x.next_down()
    }
}

fn up(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x.next_up()
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidArgument(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn entire() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    /// `x` widened by `ulps` units in the last place on each side, for
    /// library functions with a known error bound.
    pub fn around(x: f64, ulps: u32) -> Self {
        let (mut lo, mut hi) = (x, x);
        for _ in 0..ulps {
            lo = down(lo);
            hi = up(hi);
        }
        Self { lo, hi }
    }

    /// `x (1 -+ rel)` rounded outward.
    pub fn relative(x: f64, rel: f64) -> Self {
        let d = up(x.abs() * rel);
        Self { lo: down(x - d), hi: up(x + d) }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn hull(&self, o: &Interval) -> Interval {
        Interval { lo: self.lo.min(o.lo), hi: self.hi.max(o.hi) }
    }

    pub fn intersect(&self, o: &Interval) -> Option<Interval> {
        let (lo, hi) = (self.lo.max(o.lo), self.hi.min(o.hi));
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn abs(&self) -> Interval {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            -*self
        } else {
            Interval { lo: 0.0, hi: (-self.lo).max(self.hi) }
        }
    }

    pub fn sqr(&self) -> Interval {
        let a = self.abs();
        Interval { lo: down(a.lo * a.lo).max(0.0), hi: up(a.hi * a.hi) }
    }

    /// Square root of the nonnegative part.
    pub fn sqrt(&self) -> Interval {
        if self.hi < 0.0 {
            return Interval { lo: f64::NAN, hi: f64::NAN };
        }
        let hi = if self.hi == 0.0 { 0.0 } else { up(self.hi.sqrt()) };
        Interval { lo: down(self.lo.max(0.0).sqrt()).max(0.0), hi }
    }

    /// `x^p` for `x >= 0`; `powf` is taken to be accurate to 2 ulps.
    pub fn powf(&self, p: f64) -> Interval {
        let lo = self.lo.max(0.0);
        let (a, b) = (lo.powf(p), self.hi.powf(p));
        let (a, b) = if p >= 0.0 { (a, b) } else { (b, a) };
        Interval { lo: Interval::around(a, 2).lo.max(0.0), hi: Interval::around(b, 2).hi }
    }

    pub fn recip(&self) -> Interval {
        Interval::point(1.0) / *self
    }

    pub fn max(&self, o: &Interval) -> Interval {
        Interval { lo: self.lo.max(o.lo), hi: self.hi.max(o.hi) }
    }

    /// `cos(x)` of a point argument; libm cos is taken to be accurate to 1 ulp.
    pub fn cos(x: f64) -> Interval {
        let c = x.cos();
        Interval { lo: (c - 2.0 * f64::EPSILON).max(-1.0), hi: (c + 2.0 * f64::EPSILON).min(1.0) }
    }

    pub fn sin(x: f64) -> Interval {
        let s = x.sin();
        Interval { lo: (s - 2.0 * f64::EPSILON).max(-1.0), hi: (s + 2.0 * f64::EPSILON).min(1.0) }
    }

    /// `pi` enclosure.
    pub fn pi() -> Interval {
        Interval { lo: down(PI), hi: up(PI) }
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval { lo: down(self.lo + o.lo), hi: up(self.hi + o.hi) }
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, o: Interval) -> Interval {
        Interval { lo: down(self.lo - o.hi), hi: up(self.hi - o.lo) }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

/// Corner product as `(lower, upper)`; products with an exact zero are exact
/// and `0 * inf` counts as 0.
fn prod(a: f64, b: f64) -> (f64, f64) {
    if a == 0.0 || b == 0.0 {
        (0.0, 0.0)
    } else {
        let p = a * b;
        (down(p), up(p))
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        let p = [prod(self.lo, o.lo), prod(self.lo, o.hi), prod(self.hi, o.lo), prod(self.hi, o.hi)];
        let lo = p.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let hi = p.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }
}

impl Div for Interval {
    type Output = Interval;
    fn div(self, o: Interval) -> Interval {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Interval::entire();
        }
        let q = [self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi];
        let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo: down(lo), hi: up(hi) }
    }
}

macro_rules! scalar_ops {
    ($($tr:ident $f:ident),*) => {$(
        impl $tr<f64> for Interval {
            type Output = Interval;
            fn $f(self, o: f64) -> Interval {
                $tr::$f(self, Interval::point(o))
            }
        }
        impl $tr<Interval> for f64 {
            type Output = Interval;
            fn $f(self, o: Interval) -> Interval {
                $tr::$f(Interval::point(self), o)
            }
        }
    )*};
}
scalar_ops!(Add add, Sub sub, Mul mul, Div div);

/// Relative error bound assumed for the Gamma function evaluation.
pub const GAMMA_REL_ERR: f64 = 1e-12;

fn gamma_enclosure(x: f64) -> Interval {
    Interval::relative(statrs::function::gamma::gamma(x), GAMMA_REL_ERR)
}

/// Trace constant `C_gamma = sqrt(Gamma(gamma) / (2 sqrt(pi) Gamma(1/2 + gamma)))`.
pub fn c_gamma(gamma: f64) -> Result<Interval> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1/2), got {gamma}")));
    }
    let num = gamma_enclosure(gamma);
    let den = 2.0 * Interval::pi().sqrt() * gamma_enclosure(0.5 + gamma);
    Ok((num / den).sqrt())
}

/// Guaranteed enclosure `[lambda_h / (1 + C1^2 h^2 lambda_h^2), lambda_h]`.
pub fn eigenvalue_interval(lambda_h: f64, c1: f64, h: f64) -> Result<Interval> {
    if !(lambda_h > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_h must be positive, got {lambda_h}")));
    }
    let l = Interval::point(lambda_h);
    let ch = Interval::point(c1) * h;
    let lower = l / (1.0 + ch.sqr() * l.sqr());
    Ok(Interval { lo: lower.lo.min(lambda_h), hi: lambda_h })
}

/// Scalars of a symmetric discrete solution entering the error cascade.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteData {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub c1: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub area: f64,
    /// `||u_h||_{L^2(S_0)}` on the segment from the center to vertex 0.
    pub u_s0: f64,
    pub a_xx: f64,
    pub a_yy: f64,
    /// Per `k`: `[alpha, beta, gamma (first formula), gamma (second formula)]`.
    pub coefficients: Vec<[f64; 4]>,
}

impl DiscreteData {
    /// Extracts the data from a symmetric state built with center-free hats.
    pub fn from_state(st: &SymmetricState) -> Result<Self> {
        if st.shape.weights != HatWeights::SliceFan {
            return Err(Error::InvalidArgument("certification requires center-free hats".into()));
        }
        let mesh = &st.shape.mesh;
        let center = mesh.coarse.nodes[st.n];
        let v0 = mesh.coarse.nodes[0];
        let u_s0 = segment_mass(mesh, &st.shape.u, center, v0)?.sqrt();
        let a = st.slice_integrals();
        let coefficients = (0..st.n)
            .into_par_iter()
            .map(|k| {
                let t = st.theorem_coefficients(k);
                [t.alpha, t.beta, t.gamma1, t.gamma2]
            })
            .collect();
        Ok(Self {
            n: st.n,
            m: st.m,
            h: mesh.h,
            c1: mesh_constant_c1(mesh)?,
            lambda1: st.shape.lambda,
            lambda2: st.shape.lambda2,
            area: st.shape.area,
            u_s0,
            a_xx: a[0][0],
            a_yy: a[1][1],
            coefficients,
        })
    }
}

/// Step 1: eigenpair error terms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenBudget {
    pub lambda1: Interval,
    pub lambda2: Interval,
    /// `|lambda_1 - lambda_1h|`.
    pub e1: f64,
    /// `|lambda_2 - lambda_2h|`.
    pub e2: f64,
    /// `||grad(u_1 - P_h u_1)||`.
    pub grad_proj: f64,
    /// `||u_1 - P_h u_1||`.
    pub l2_proj: f64,
    /// `||grad p_bar||`.
    pub grad_pbar: f64,
    pub l2_pbar: f64,
    /// `|1 - alpha|`.
    pub one_minus_alpha: f64,
    /// `||grad u_1 - grad u_1h||`.
    pub e3: f64,
    /// `||u_1 - u_1h||`.
    pub e4: f64,
    /// Upper bound of `||u_1||_{L^2(S_0)}`.
    pub u_s0: f64,
}

/// Norm bounds of a right-hand side `f = f_reg + f_sing`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RhsBounds {
    /// `||f||_{H^-1}`.
    pub h_minus1: f64,
    /// `||f_reg||_{L^2}`.
    pub reg: f64,
    /// `||f_sing||_{H^{-1/2-gamma}}`.
    pub sing: f64,
    /// `||f - f_h||_{H^-1}`.
    pub diff: f64,
}

/// Step 2: bounds for a material derivative type solution `U`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UBounds {
    pub grad_u: f64,
    pub l2_u: f64,
    /// `||lambda_1 U + f_reg||`.
    pub reg_source: f64,
    /// `||grad(U - V)||`.
    pub grad_uv: f64,
    pub l2_uv: f64,
    pub l2_v: f64,
    /// `||grad(V - V_tilde)||`.
    pub grad_vt: f64,
    pub l2_vt: f64,
    /// `||grad(V_tilde - U_h)||`.
    pub grad_vt_uh: f64,
    pub grad_uh: f64,
    /// `||grad U - grad U_h||`.
    pub grad_err: f64,
    /// `||U - U_h||`.
    pub l2_err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefficientKind {
    Alpha,
    Beta,
    Gamma1,
    Gamma2,
}

/// Enclosure of one coefficient and its three-term error split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientBound {
    pub kind: CoefficientKind,
    pub k: usize,
    pub value: f64,
    pub rhs: RhsBounds,
    pub w: UBounds,
    /// Slice-integral part `q_k |A - A_h|`.
    pub slice_term: f64,
    pub first: f64,
    pub second: f64,
    pub third: f64,
    pub radius: f64,
    pub interval: Interval,
}

/// All bound terms for one `gamma`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub gamma: f64,
    pub c_gamma: Interval,
    pub eigen: EigenBudget,
    /// Right-hand sides and solution bounds of `U_0^1`, `U_0^2`.
    pub rhs_u0: [RhsBounds; 2],
    pub u0: [UBounds; 2],
    pub coefficients: Vec<CoefficientBound>,
}

fn hi(x: Interval) -> f64 {
    x.hi
}

fn pos(x: Interval, what: &str) -> Result<Interval> {
    if x.lo > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::BoundUnavailable(format!("{what} is not bounded away from zero")))
    }
}

/// Eigenvalue and eigenfunction error chain.
pub fn eigenfunction_error(d: &DiscreteData) -> Result<EigenBudget> {
    if !(d.lambda2 > d.lambda1) {
        return Err(Error::BoundUnavailable("lambda_2h must exceed lambda_1h".into()));
    }
    let lam1 = eigenvalue_interval(d.lambda1, d.c1, d.h)?;
    let lam2 = eigenvalue_interval(d.lambda2, d.c1, d.h)?;
    let l1h = Interval::point(d.lambda1);
    let l2h = Interval::point(d.lambda2);
    let ch = Interval::point(d.c1) * d.h;
    let e1 = (l1h - Interval::point(lam1.lo)).abs();
    let e2 = (l2h - Interval::point(lam2.lo)).abs();
    let grad_proj = ch * lam1.hi;
    let l2_proj = ch.sqr() * lam1.hi;
    let gap_h = pos(l2h - l1h, "discrete spectral gap")?;
    let grad_pbar = l2h.sqrt() / gap_h * (e1 + l1h * l2_proj);
    let l2_pbar = grad_pbar / l2h.sqrt();
    let one_minus_alpha = l2_pbar.sqr() + l2_proj * (2.0 + l2_proj);
    let alpha_lo = pos(1.0 - one_minus_alpha, "alpha lower bound")?;
    let p_l2 = 1.0 + l2_proj;
    let p_grad = (Interval::point(lam1.hi) * p_l2).sqrt();
    let e3 = grad_proj + one_minus_alpha / alpha_lo * p_grad + grad_pbar / alpha_lo;
    let e4 = l2_proj + one_minus_alpha / alpha_lo * p_l2 + l2_pbar / alpha_lo;
    let n = d.n as f64;
    let share = Interval::point(((d.n + 1) / 2) as f64) / (2.0 * n);
    let u_s0 = Interval::point(d.u_s0) + share.sqrt() * e3;
    Ok(EigenBudget {
        lambda1: lam1,
        lambda2: lam2,
        e1: hi(e1),
        e2: hi(e2),
        grad_proj: hi(grad_proj),
        l2_proj: hi(l2_proj),
        grad_pbar: hi(grad_pbar),
        l2_pbar: hi(l2_pbar),
        one_minus_alpha: hi(one_minus_alpha),
        e3: hi(e3),
        e4: hi(e4),
        u_s0: hi(u_s0),
    })
}

struct Consts {
    n: Interval,
    sin_t: Interval,
    cos_t: Interval,
    cot_t: Interval,
    lam1: Interval,
    sqrt_lam1: Interval,
    e1: Interval,
    e3: Interval,
    e4: Interval,
    l1h: Interval,
    u_s0: Interval,
    cg: Interval,
}

impl Consts {
    fn new(d: &DiscreteData, eb: &EigenBudget, cg: Interval) -> Self {
        let th = 2.0 * PI / d.n as f64;
        let (sin_t, cos_t) = (Interval::sin(th), Interval::cos(th));
        let lam1 = eb.lambda1;
        Self {
            n: Interval::point(d.n as f64),
            sin_t,
            cos_t,
            cot_t: cos_t / sin_t,
            lam1,
            sqrt_lam1: lam1.sqrt(),
            e1: Interval::point(eb.e1),
            e3: Interval::point(eb.e3),
            e4: Interval::point(eb.e4),
            l1h: Interval::point(d.lambda1),
            u_s0: Interval::point(eb.u_s0),
            cg,
        }
    }

    /// `(|lambda_1 - lambda_1h| + lambda_1h ||u_1 - u_1h||)`.
    fn eig_mix(&self) -> Interval {
        self.e1 + self.l1h * self.e4
    }

    fn poincare(&self) -> Interval {
        (1.0 + self.lam1).sqrt().recip()
    }
}

/// Right-hand side bounds of `U_0^1` and `U_0^2`.
fn u0_rhs(d: &DiscreteData, c: &Consts) -> [RhsBounds; 2] {
    let sqrt_n = c.n.sqrt();
    let gx = Interval::point(d.a_xx).sqrt() + c.e3 / sqrt_n;
    let gy = Interval::point(d.a_yy).sqrt() + c.e3 / sqrt_n;
    let two_l_n = (2.0 * c.lam1 / c.n).sqrt();
    let reg_fac = 2.0 * (2.0 * c.lam1).sqrt() / c.sin_t;
    let s = 2.0 * c.lam1 / c.n;
    let ds = 2.0 / c.n * c.e1;
    let diff = 2.0 * SQRT_2 / (sqrt_n * c.sin_t) * c.e3 + c.poincare() * (ds + s * c.e4);
    let sing_base = c.sqrt_lam1 * c.u_s0 * c.cg;
    [
        RhsBounds {
            h_minus1: hi(2.0 * SQRT_2 * gx + c.cot_t * two_l_n),
            reg: hi(reg_fac * gx + s),
            sing: hi(2.0 * (1.0 + c.cos_t) / c.sin_t * sing_base),
            diff: hi(diff),
        },
        RhsBounds {
            h_minus1: hi(2.0 * SQRT_2 * c.cot_t * gy + two_l_n),
            reg: hi(reg_fac * gy),
            sing: hi(2.0 * sing_base),
            diff: hi(diff),
        },
    ]
}

/// Right-hand side bounds of the combination `W` for the given kind and `k`.
pub fn rhs_norm_bounds(d: &DiscreteData, eb: &EigenBudget, gamma: f64, kind: CoefficientKind, k: usize) -> Result<RhsBounds> {
    let c = Consts::new(d, eb, c_gamma(gamma)?);
    Ok(w_rhs(d, &c, kind, k))
}

fn w_rhs(d: &DiscreteData, c: &Consts, kind: CoefficientKind, k: usize) -> RhsBounds {
    let n = d.n;
    let th = 2.0 * PI / n as f64;
    let ck = Interval::cos(k as f64 * th);
    let (one_p, one_m) = if k % n == 0 {
        (Interval::point(2.0), Interval::point(0.0))
    } else {
        ((1.0 + ck).max(&Interval::point(0.0)), (1.0 - ck).max(&Interval::point(0.0)))
    };
    let lam = c.lam1;
    let trig_sum = |f: fn(f64) -> Interval| {
        if k % n == 0 {
            return Interval::point(0.0);
        }
        (0..n).fold(Interval::point(0.0), |acc, j| acc + (f(((j * k) % n) as f64 * th) * one_m).abs())
    };
    let sing_base = 2.0 * c.sqrt_lam1 * c.u_s0 * c.cg;
    let grad_part = (lam * one_m).sqrt() / c.sin_t;
    let reg_grad = SQRT_2 / c.sin_t * one_m.sqrt() * lam;
    let diff_grad = one_m.sqrt() / c.sin_t * c.e3;
    let (h1, reg, sing, diff) = match kind {
        CoefficientKind::Alpha | CoefficientKind::Gamma2 => {
            let s = if kind == CoefficientKind::Alpha { trig_sum(Interval::cos) } else { trig_sum(Interval::sin) };
            (
                lam * (one_p / (1.0 + lam)).sqrt() + grad_part,
                one_p.sqrt() * lam + reg_grad,
                c.cot_t * s * sing_base,
                (one_p / (1.0 + lam)).sqrt() * c.eig_mix() + diff_grad,
            )
        }
        CoefficientKind::Beta | CoefficientKind::Gamma1 => {
            let s = if kind == CoefficientKind::Beta { trig_sum(Interval::cos) } else { trig_sum(Interval::sin) };
            (
                lam * c.cot_t * (one_m / (1.0 + lam)).sqrt() + grad_part,
                c.cot_t * one_m.sqrt() * lam + reg_grad,
                s * sing_base,
                c.cot_t * (one_m / (1.0 + lam)).sqrt() * c.eig_mix() + diff_grad,
            )
        }
    };
    RhsBounds { h_minus1: hi(h1), reg: hi(reg), sing: hi(sing), diff: hi(diff) }
}

/// Bounds for `U - U_h` from the regular/singular splitting of the source.
pub fn u_error_bounds(d: &DiscreteData, eb: &EigenBudget, f: &RhsBounds, gamma: f64) -> Result<UBounds> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1/2), got {gamma}")));
    }
    let lam1 = eb.lambda1;
    let lam2 = eb.lambda2;
    let gap = pos(lam2 - lam1, "spectral gap")?;
    let l1h = Interval::point(d.lambda1);
    let l2h = Interval::point(d.lambda2);
    let gap_h = pos(l2h - l1h, "discrete spectral gap")?;
    let ch = Interval::point(d.c1) * d.h;
    let e1 = Interval::point(eb.e1);
    let e4 = Interval::point(eb.e4);
    let [h1, reg, sing, diff] = [f.h_minus1, f.reg, f.sing, f.diff].map(Interval::point);

    let grad_u = (lam2 * (lam2 + 1.0)).sqrt() / gap * h1;
    let l2_u = grad_u / lam2.sqrt();
    let reg_source = lam1 * l2_u + reg;
    let lift = (1.0 + lam1.recip()).powf(0.5 + gamma);
    let grad_uv = ch * reg_source + sing * ch.powf(0.5 - gamma) * lift;
    let l2_uv = ch.sqr() * reg_source + sing * ch.powf(1.5 - gamma) * lift;
    let l2_v = grad_u / lam1.sqrt();
    let l2_vt = l2_uv + l2_v * e4;
    let grad_vt = l1h.sqrt() * l2_vt;
    let grad_vt_uh = l2h.sqrt() / gap_h * (e1 * l2_u + l1h * l2_uv + (1.0 + l2h).sqrt() * diff);
    let grad_uh = (l2h * (1.0 + l2h)).sqrt() / gap_h * (h1 + diff);
    let grad_err = grad_uv + grad_vt + grad_vt_uh;
    let l2_err = 2.0 * ch * grad_uv + l2_v * e4 + grad_vt_uh / l2h.sqrt();
    let out = UBounds {
        grad_u: hi(grad_u),
        l2_u: hi(l2_u),
        reg_source: hi(reg_source),
        grad_uv: hi(grad_uv),
        l2_uv: hi(l2_uv),
        l2_v: hi(l2_v),
        grad_vt: hi(grad_vt),
        l2_vt: hi(l2_vt),
        grad_vt_uh: hi(grad_vt_uh),
        grad_uh: hi(grad_uh),
        grad_err: hi(grad_err),
        l2_err: hi(l2_err),
    };
    Ok(out)
}

/// Three-term bound of `|a(U^a, U^b) - a_h(U^a_h, U^b_h)|`. With `shortcut`
/// the singular part of `f^b` vanishes against `U^a - V^a` by parity.
pub fn form_error(lam1: f64, e1: f64, a: &UBounds, b: &UBounds, shortcut: bool) -> [f64; 3] {
    let p = Interval::point;
    let l = p(lam1);
    let cross = if shortcut { p(b.reg_source) * a.l2_uv } else { p(a.grad_uv) * b.grad_uv };
    let first = cross + l * b.l2_v * a.l2_uv + l * a.l2_u * b.l2_uv;
    let second = p(a.grad_u) * b.grad_vt
        + p(b.grad_u) * a.grad_vt
        + p(e1) * a.l2_v * b.l2_v
        + l * b.l2_v * a.l2_vt
        + l * a.l2_v * b.l2_vt;
    let third = p(a.grad_u) * b.grad_vt_uh + p(b.grad_uh) * a.grad_vt_uh;
    [first.hi, second.hi, third.hi]
}

/// `q_k = 2n (1 - cos k theta) / sin theta`.
fn q_k(n: usize, k: usize) -> Interval {
    let th = 2.0 * PI / n as f64;
    2.0 * n as f64 * (1.0 - Interval::cos(k as f64 * th)) / Interval::sin(th)
}

/// Enclosures of `alpha_k`, `beta_k` and `gamma_k` (both formulas).
pub fn coefficient_intervals(d: &DiscreteData, eb: &EigenBudget, gamma: f64, k: usize) -> Result<Vec<CoefficientBound>> {
    let cg = c_gamma(gamma)?;
    let c = Consts::new(d, eb, cg);
    let rhs0 = u0_rhs(d, &c);
    let u0 = [u_error_bounds(d, eb, &rhs0[0], gamma)?, u_error_bounds(d, eb, &rhs0[1], gamma)?];
    coefficients_with(d, eb, &c, &u0, gamma, k)
}

fn coefficients_with(
    d: &DiscreteData,
    eb: &EigenBudget,
    c: &Consts,
    u0: &[UBounds; 2],
    gamma: f64,
    k: usize,
) -> Result<Vec<CoefficientBound>> {
    let vals = d.coefficients.get(k).ok_or_else(|| Error::InvalidArgument(format!("no coefficients for k = {k}")))?;
    let two_area = 2.0 * Interval::point(d.area);
    let slice_err = |a_h: f64| {
        let es = c.e3 / c.n.sqrt();
        es * (2.0 * Interval::point(a_h).sqrt() + es)
    };
    let kinds = [
        (CoefficientKind::Alpha, 0usize, false, Some(d.a_xx)),
        (CoefficientKind::Beta, 1, true, Some(d.a_yy)),
        (CoefficientKind::Gamma1, 0, true, None),
        (CoefficientKind::Gamma2, 1, false, None),
    ];
    let mut out = Vec::with_capacity(4);
    for (q, (kind, a, shortcut, slice)) in kinds.into_iter().enumerate() {
        let value = vals[q];
        if k == 0 {
            // alpha_0 = beta_0 = gamma_0 = 0 exactly.
            let interval = Interval::point(0.0).hull(&Interval::point(value));
            let zero = RhsBounds { h_minus1: 0.0, reg: 0.0, sing: 0.0, diff: 0.0 };
            let w = u_error_bounds(d, eb, &zero, gamma)?;
            out.push(CoefficientBound {
                kind,
                k,
                value,
                rhs: zero,
                w,
                slice_term: 0.0,
                first: 0.0,
                second: 0.0,
                third: 0.0,
                radius: value.abs(),
                interval,
            });
            continue;
        }
        let rhs = w_rhs(d, c, kind, k);
        let w = u_error_bounds(d, eb, &rhs, gamma)?;
        let [first, second, third] = form_error(d.lambda1, eb.e1, &u0[a], &w, shortcut);
        let slice_term = match slice {
            Some(a_h) => (q_k(d.n, k) * slice_err(a_h)).hi,
            None => 0.0,
        };
        let radius = (Interval::point(slice_term) + two_area * (Interval::point(first) + second + third)).hi;
        let interval = Interval { lo: down(value - radius), hi: up(value + radius) };
        out.push(CoefficientBound { kind, k, value, rhs, w, slice_term, first, second, third, radius, interval });
    }
    Ok(out)
}

/// Group of a budget term for convergence checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermGroup {
    /// Eigenvalue and eigenfunction errors.
    Eigen,
    /// Energy-norm errors of material derivative fields.
    FieldGradient,
    /// `L^2` errors of material derivative fields and coefficient errors.
    Field,
}

impl TermGroup {
    /// Convergence order guaranteed by the bounds as `h -> 0`.
    pub fn nominal_order(&self, gamma: f64) -> f64 {
        match self {
            TermGroup::Eigen => 1.0,
            TermGroup::FieldGradient => 0.5 - gamma,
            TermGroup::Field => 1.0 - 2.0 * gamma,
        }
    }
}

/// Named error term of a budget.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetTerm {
    pub name: String,
    pub group: TermGroup,
    pub value: f64,
}

impl ErrorBudget {
    /// All error terms that vanish as `h -> 0`. Norms of exact solutions and
    /// the structurally zero `k = 0` coefficients are excluded.
    pub fn terms(&self) -> Vec<BudgetTerm> {
        let mut out = Vec::new();
        let mut push = |name: String, group, value| out.push(BudgetTerm { name, group, value });
        let e = &self.eigen;
        for (name, v) in [
            ("e1", e.e1),
            ("e2", e.e2),
            ("grad_proj", e.grad_proj),
            ("l2_proj", e.l2_proj),
            ("grad_pbar", e.grad_pbar),
            ("l2_pbar", e.l2_pbar),
            ("one_minus_alpha", e.one_minus_alpha),
            ("e3", e.e3),
            ("e4", e.e4),
        ] {
            push(name.to_string(), TermGroup::Eigen, v);
        }
        for (a, u) in self.u0.iter().enumerate() {
            for (name, group, v) in [
                ("grad_uv", TermGroup::FieldGradient, u.grad_uv),
                ("l2_uv", TermGroup::Field, u.l2_uv),
                ("grad_vt_uh", TermGroup::FieldGradient, u.grad_vt_uh),
                ("grad_err", TermGroup::FieldGradient, u.grad_err),
                ("l2_err", TermGroup::Field, u.l2_err),
            ] {
                push(format!("u0_{}_{name}", a + 1), group, v);
            }
        }
        for c in self.coefficients.iter().filter(|c| c.k != 0) {
            let tag = format!("{:?}_{}", c.kind, c.k).to_lowercase();
            for (name, v) in [("first", c.first), ("second", c.second), ("third", c.third), ("radius", c.radius)] {
                push(format!("{tag}_{name}"), TermGroup::Field, v);
            }
        }
        out
    }
}

/// Empirical order of one term across a refinement sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermOrder {
    pub name: String,
    pub group: TermGroup,
    pub values: Vec<f64>,
    /// Least-squares slope of `log value` against `log h`.
    pub order: f64,
}

/// Fits convergence orders of all budget terms over `(h, budget)` pairs
/// computed with the same `gamma`.
pub fn empirical_orders(runs: &[(f64, ErrorBudget)]) -> Result<Vec<TermOrder>> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two refinement levels".into()));
    }
    let terms: Vec<Vec<BudgetTerm>> = runs.iter().map(|(_, b)| b.terms()).collect();
    let xs: Vec<f64> = runs.iter().map(|(h, _)| h.ln()).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    (0..terms[0].len())
        .map(|i| {
            let values: Vec<f64> = terms.iter().map(|t| t[i].value).collect();
            if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::BoundUnavailable(format!("term {} is not finite and positive", terms[0][i].name)));
            }
            let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            let ym = ys.iter().sum::<f64>() / ys.len() as f64;
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
            Ok(TermOrder { name: terms[0][i].name.clone(), group: terms[0][i].group, values, order: sxy / sxx })
        })
        .collect()
}

/// Full budget for one `gamma`.
pub fn error_budget(d: &DiscreteData, gamma: f64) -> Result<ErrorBudget> {
    let eb = eigenfunction_error(d)?;
    let cg = c_gamma(gamma)?;
    let c = Consts::new(d, &eb, cg);
    let rhs_u0 = u0_rhs(d, &c);
    let u0 = [u_error_bounds(d, &eb, &rhs_u0[0], gamma)?, u_error_bounds(d, &eb, &rhs_u0[1], gamma)?];
    let mut coefficients = Vec::new();
    for k in 0..d.n {
        coefficients.extend(coefficients_with(d, &eb, &c, &u0, gamma, k)?);
    }
    Ok(ErrorBudget { gamma, c_gamma: cg, eigen: eb, rhs_u0, u0, coefficients })
}

/// Enclosure of one Hessian eigenvalue.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuInterval {
    pub k: usize,
    /// 0 for the smaller root, 1 for the larger.
    pub branch: usize,
    pub value: f64,
    pub interval: Interval,
}

/// `mu = (alpha + beta -+ sqrt((alpha - beta)^2 + 4 gamma^2)) / 2` over intervals.
pub fn mu_intervals(alpha: Interval, beta: Interval, gamma: Interval) -> [Interval; 2] {
    let disc = ((alpha - beta).sqr() + 4.0 * gamma.sqr()).sqrt();
    let s = alpha + beta;
    [0.5 * (s - disc), 0.5 * (s + disc)]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    pub mu: Vec<MuInterval>,
    pub zero_containing: usize,
    pub positive: usize,
    pub certified: bool,
    pub budget: ErrorBudget,
}

impl Verdict {
    pub fn total_width(&self) -> f64 {
        self.mu.iter().map(|m| m.interval.width()).sum()
    }
}

/// Verdict for one `gamma`.
pub fn verdict_for(d: &DiscreteData, gamma: f64) -> Result<Verdict> {
    let budget = error_budget(d, gamma)?;
    let mut mu = Vec::with_capacity(2 * d.n);
    for k in 0..d.n {
        let c = &budget.coefficients[4 * k..4 * k + 4];
        let g = c[2].interval.intersect(&c[3].interval).unwrap_or_else(|| c[2].interval.hull(&c[3].interval));
        let iv = mu_intervals(c[0].interval, c[1].interval, g);
        let gp = 0.5 * (c[2].value + c[3].value);
        let (lo, hi) = crate::hessian::CirculantBlock::mu_from(c[0].value, c[1].value, gp);
        mu.push(MuInterval { k, branch: 0, value: lo, interval: iv[0] });
        mu.push(MuInterval { k, branch: 1, value: hi, interval: iv[1] });
    }
    let zero_containing = mu.iter().filter(|m| m.interval.contains_zero()).count();
    let positive = mu.iter().filter(|m| m.interval.lo > 0.0).count();
    let certified = zero_containing == 4 && positive == mu.len() - 4;
    Ok(Verdict { n: d.n, m: d.m, gamma, mu, zero_containing, positive, certified, budget })
}

/// Default grid: 49 points uniform on `[0.01, 0.49]`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..49).map(|i| 0.01 + 0.01 * i as f64).collect()
}

/// Grid search over `gamma`: fewest zero-containing intervals, then smallest total width.
pub fn best_verdict(d: &DiscreteData, grid: &[f64]) -> Result<Verdict> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    let verdicts: Vec<Verdict> = grid.par_iter().map(|&g| verdict_for(d, g)).collect::<Result<_>>()?;
    verdicts
        .into_iter()
        .min_by(|a, b| a.zero_containing.cmp(&b.zero_containing).then(a.total_width().total_cmp(&b.total_width())))
        .ok_or_else(|| Error::InvalidArgument("empty gamma grid".into()))
}

/// Solves on `symmetric_mesh(n, m)` with center-free hats and certifies.
pub fn certify_local_min(n: usize, m: usize, grid: &[f64]) -> Result<Verdict> {
    if n < 5 {
        return Err(Error::InvalidArgument(format!("certification needs n >= 5, got {n}")));
    }
    let st = SymmetricState::new(n, m, HatWeights::SliceFan)?;
    best_verdict(&DiscreteData::from_state(&st)?, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::{Signed, Zero};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    fn random_f64(rng: &mut ChaCha8Rng) -> f64 {
        let m: f64 = rng.gen_range(-1.0..1.0);
        let e: i32 = rng.gen_range(-30..30);
        m * 2f64.powi(e)
    }

    fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
        let (a, b) = (random_f64(rng), random_f64(rng));
        if rng.gen_bool(0.2) {
            Interval::point(a)
        } else {
            Interval { lo: a.min(b), hi: a.max(b) }
        }
    }

    fn inside(iv: &Interval, x: &BigRational) -> bool {
        (!iv.lo.is_finite() || q(iv.lo) <= *x) && (!iv.hi.is_finite() || *x <= q(iv.hi))
    }

    #[test]
    fn interval_containment_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let ops = 1_000_000;
        for _ in 0..ops {
            let a = random_interval(&mut rng);
            let b = random_interval(&mut rng);
            // Exact values at random points of the operands.
            let ta: f64 = rng.gen_range(0.0..=1.0);
            let tb: f64 = rng.gen_range(0.0..=1.0);
            let xa = q(a.lo) + (q(a.hi) - q(a.lo)) * q(ta);
            let xb = q(b.lo) + (q(b.hi) - q(b.lo)) * q(tb);
            match rng.gen_range(0..6) {
                0 => assert!(inside(&(a + b), &(&xa + &xb))),
                1 => assert!(inside(&(a - b), &(&xa - &xb))),
                2 => assert!(inside(&(a * b), &(&xa * &xb))),
                3 => {
                    if !xb.is_zero() {
                        assert!(inside(&(a / b), &(&xa / &xb)));
                    }
                }
                4 => assert!(inside(&a.sqr(), &(&xa * &xa))),
                _ => {
                    let r = a.abs().sqrt();
                    let x = xa.abs();
                    let lo = q(r.lo);
                    let hi = q(r.hi);
                    assert!(&lo * &lo <= x && x <= &hi * &hi);
                }
            }
        }
    }

    #[test]
    fn interval_basics() {
        let a = Interval::new(1.0, 2.0).unwrap();
        assert!(Interval::new(2.0, 1.0).is_err());
        let s = a + a;
        assert!(s.lo < 2.0 && s.hi > 4.0 && s.width() < 2.0 + 1e-14);
        assert!((a / Interval::new(-1.0, 1.0).unwrap()).lo.is_infinite());
        assert!(Interval::new(-1.0, 2.0).unwrap().sqr().contains(0.0));
        assert!(!Interval::new(1.0, 2.0).unwrap().contains_zero());
        assert_eq!(Interval::new(-3.0, 2.0).unwrap().abs(), Interval { lo: 0.0, hi: 3.0 });
    }

    /// Gamma via upward recurrence and the Stirling series, independent of statrs.
    fn gamma_oracle(x: f64) -> f64 {
        let mut z = x;
        let mut log_prefix = 0.0;
        while z < 30.0 {
            log_prefix -= z.ln();
            z += 1.0;
        }
        let z2 = z * z;
        let series = 1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z2 * z2 * z) - 1.0 / (1680.0 * z2 * z2 * z2 * z);
        (log_prefix + (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln() + series).exp()
    }

    #[test]
    fn c_gamma_values() {
        let c = c_gamma(0.25).unwrap();
        let oracle = (gamma_oracle(0.25) / (2.0 * PI.sqrt() * gamma_oracle(0.75))).sqrt();
        assert!(c.contains(oracle), "{c:?} {oracle}");
        assert!((c.mid() - 0.9136).abs() < 1e-4);
        assert!(c.width() < 1e-10);
        assert!(c_gamma(1e-6).unwrap().lo > 100.0);
        let grid: Vec<f64> = (0..41).map(|i| 0.05 + 0.01 * i as f64).collect();
        for w in grid.windows(2) {
            assert!(c_gamma(w[1]).unwrap().hi < c_gamma(w[0]).unwrap().lo);
        }
        for g in [0.0, 0.5, -0.1, f64::NAN] {
            assert!(matches!(c_gamma(g), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn eigenvalue_interval_width() {
        let (l, c1, h) = (19.8, 0.5, 1.0 / 64.0);
        let iv = eigenvalue_interval(l, c1, h).unwrap();
        let width = l.powi(3) * c1 * c1 * h * h / (1.0 + c1 * c1 * h * h * l * l);
        assert!((iv.width() - width).abs() < 1e-12 * width);
        assert_eq!(iv.hi, l);
        let tiny = eigenvalue_interval(l, c1, 1e-9).unwrap();
        assert!(tiny.width() < 1e-12);
    }

    #[test]
    fn trig_sum_factor_for_pentagon() {
        // sum_j |cos(2 pi j / 5)| = 1 + 2 cos(2pi/5) + 2 |cos(4 pi/5)|.
        let th = 2.0 * PI / 5.0;
        let exact = 1.0 + 2.0 * th.cos() + 2.0 * (2.0 * th).cos().abs();
        let s = (0..5).fold(Interval::point(0.0), |acc, j| acc + Interval::cos(j as f64 * th).abs());
        assert!(s.contains(exact) && s.width() < 1e-14);
    }

    fn data(m: usize) -> DiscreteData {
        let st = SymmetricState::new(5, m, HatWeights::SliceFan).unwrap();
        DiscreteData::from_state(&st).unwrap()
    }

    #[test]
    fn k_zero_has_no_singular_part_and_point_values_are_enclosed() {
        let d = data(32);
        let eb = eigenfunction_error(&d).unwrap();
        let r = rhs_norm_bounds(&d, &eb, 0.3, CoefficientKind::Alpha, 0).unwrap();
        assert_eq!(r.sing, 0.0);
        let v = verdict_for(&d, 0.3).unwrap();
        for m in &v.mu {
            assert!(m.interval.contains(m.value), "{m:?}");
        }
        assert!(v.zero_containing >= 4);
        assert!(!v.certified);
        let b = &v.budget;
        for c in &b.coefficients {
            assert!(c.interval.contains(c.value));
            assert!(c.radius.is_finite() && c.radius >= 0.0);
        }
    }

    #[test]
    fn singular_term_scales_with_resolution() {
        let d = data(16);
        let eb = eigenfunction_error(&d).unwrap();
        let f = RhsBounds { h_minus1: 1.0, reg: 0.0, sing: 1.0, diff: 0.0 };
        let g = 0.3;
        let a = u_error_bounds(&d, &eb, &f, g).unwrap();
        let mut d2 = d.clone();
        d2.h *= 0.5;
        let b = u_error_bounds(&d2, &eb, &f, g).unwrap();
        let reg_a = Interval::point(d.c1 * d.h) * a.reg_source;
        let ratio = (b.grad_uv - 0.5 * reg_a.mid()) / (a.grad_uv - reg_a.mid());
        assert!((ratio - 2f64.powf(-(0.5 - g))).abs() < 1e-9, "{ratio}");
        let f0 = RhsBounds { sing: 0.0, ..f };
        let c = u_error_bounds(&d, &eb, &f0, g).unwrap();
        assert!((c.grad_uv - d.c1 * d.h * c.reg_source).abs() < 1e-12 * c.grad_uv);
    }

    #[test]
    fn budget_terms_converge_at_nominal_rates() {
        let gamma = 0.25;
        let runs: Vec<(f64, ErrorBudget)> = [64, 128, 256]
            .into_iter()
            .map(|m| {
                let d = data(m);
                (d.h, error_budget(&d, gamma).unwrap())
            })
            .collect();
        let orders = empirical_orders(&runs).unwrap();
        assert!(orders.len() > 50);
        for t in &orders {
            assert!(t.values.windows(2).all(|w| w[1] < w[0]), "{t:?}");
            assert!(t.order >= t.group.nominal_order(gamma) - 0.1, "{t:?}");
        }
    }
}
