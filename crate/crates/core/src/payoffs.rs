//! Terminal payoff of the long-Z / short-alpha-Y package and its image in the
//! solver coordinates, kept in symbolic piecewise form.

use crate::error::{Error, Result};
use crate::special::heat_kernel;
use crate::params::{from_solver_coords, CorrelationGeometry, ExpansionKind, MarketParams};

pub const EXPONENT_GUARD: f64 = 700.0;

pub fn portfolio_payoff(y_t: f64, z_t: f64, k_y: f64, k_z: f64, alpha: f64) -> f64 {
    z_t.min(k_z) - alpha * y_t.min(k_y)
}

pub fn terminal_g(h: f64, s: f64, gamma: f64, k_y: f64, k_z: f64, alpha: f64) -> f64 {
    (-gamma * (k_z * s.min(0.0).exp() - alpha * k_y * h.min(0.0).exp())).exp()
}

/// `phi(x, y) = exp(-g (K_z e^{pz min(x + a1 y, 0)} - alpha K_y e^{py min(x + a2 y, 0)}))`
/// where `(x, y)` is `(u, vbar)` for the mu-expansion and `(w, v)` for the eps-expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffSpec {
    pub k_y: f64,
    pub k_z: f64,
    pub alpha: f64,
    /// Risk aversion in the exponent: gamma for the raw payoff, gamma(1 - rho^2) once distorted.
    pub gamma_bar: f64,
    pub zeta: f64,
    pub pz: f64,
    pub py: f64,
    /// Breakpoint slopes: omega1 = a1*y, omega2 = a2*y.
    pub a1: f64,
    pub a2: f64,
    pub include_z: bool,
}

impl PayoffSpec {
    /// Raw payoff `exp(-gamma Pi)` in solver coordinates.
    pub fn raw(p: &MarketParams, g: &CorrelationGeometry, kind: ExpansionKind) -> Result<Self> {
        if !(g.beta > 0.0) {
            return Err(Error::DegenerateGeometry(format!("beta = rho_xy/rho_xz = {} must be positive", g.beta)));
        }
        let (zeta, a1, a2) = match kind {
            ExpansionKind::MuExpansion => {
                let r2 = g.theta2.sqrt();
                (1.0 / r2, g.theta1 / r2, g.theta3 / (g.beta * r2))
            }
            ExpansionKind::EpsilonExpansion => (1.0 / g.beta, 1.0, 0.0),
        };
        let spec = PayoffSpec {
            k_y: p.k_y,
            k_z: p.k_z,
            alpha: p.alpha,
            gamma_bar: p.gamma,
            zeta,
            pz: zeta * p.sigma_z,
            py: zeta * g.beta * p.sigma_y,
            a1,
            a2,
            include_z: true,
        };
        spec.check_guard()?;
        Ok(spec)
    }

    /// Hopf-Cole distorted payoff `phi = Phi(.,.,0)^{1 - rho^2}`.
    pub fn distorted(p: &MarketParams, g: &CorrelationGeometry, kind: ExpansionKind) -> Result<Self> {
        let rho_sq = g.rho_sq(kind);
        if rho_sq >= 1.0 {
            return Err(Error::DegenerateGeometry(format!("rho^2 = {rho_sq} leaves no positive distorted risk aversion")));
        }
        let mut spec = Self::raw(p, g, kind)?;
        spec.gamma_bar = p.gamma * (1.0 - rho_sq);
        Ok(spec)
    }

    pub fn without_z_leg(mut self) -> Self {
        self.include_z = false;
        self
    }

    pub fn with_gamma_bar(mut self, gamma_bar: f64) -> Self {
        self.gamma_bar = gamma_bar;
        self
    }

    fn check_guard(&self) -> Result<()> {
        let top = self.gamma_bar * self.alpha * self.k_y;
        if top > EXPONENT_GUARD {
            return Err(Error::ExponentOverflow(top));
        }
        Ok(())
    }

    fn cz(&self) -> f64 {
        if self.include_z { self.gamma_bar * self.k_z } else { 0.0 }
    }

    fn cy(&self) -> f64 {
        self.gamma_bar * self.alpha * self.k_y
    }

    pub fn omega1(&self, y: f64) -> f64 {
        self.a1 * y
    }

    pub fn omega2(&self, y: f64) -> f64 {
        self.a2 * y
    }

    pub fn exponent(&self, x: f64, y: f64) -> f64 {
        let z = self.cz() * (self.pz * (x + self.omega1(y)).min(0.0)).exp();
        let w = self.cy() * (self.py * (x + self.omega2(y)).min(0.0)).exp();
        w - z
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.exponent(x, y).exp()
    }

    /// The three branches at fixed `y`: both legs active, one leg capped, both capped.
    pub fn regions(&self, y: f64) -> Vec<Region> {
        let z_break = -self.omega1(y);
        let y_break = -self.omega2(y);
        let cz = self.cz();
        let cy = self.cy();
        let d = -cz * (self.pz * self.omega1(y)).exp();
        let b = cy * (self.py * self.omega2(y)).exp();
        let dz = self.pz * self.a1;
        let dy = self.py * self.a2;
        let z_leg = Leg { coef: d, rate: self.pz, dlog: dz, cap: -cz, slope: -self.a1 };
        let y_leg = Leg { coef: b, rate: self.py, dlog: dy, cap: cy, slope: -self.a2 };
        let (first, second, lo, hi) = if z_break <= y_break { (z_leg, y_leg, z_break, y_break) } else { (y_leg, z_leg, y_break, z_break) };
        // The middle region is kept even when empty so that both breakpoints carry
        // their own velocity.
        vec![
            Region::new(f64::NEG_INFINITY, lo, 0.0, Some(z_leg), Some(y_leg), first.slope),
            Region::new(lo, hi, first.cap, None, Some(second), second.slope),
            Region::new(hi, f64::INFINITY, first.cap + second.cap, None, None, 0.0),
        ]
    }

    /// Interior breakpoints with their y-velocities, ordered as in `regions`.
    pub fn breakpoints(&self, y: f64) -> [(f64, f64); 2] {
        let rs = self.regions(y);
        [(rs[0].hi, rs[0].hi_slope), (rs[1].hi, rs[1].hi_slope)]
    }

    /// Constant values of the payoff far left and far right.
    pub fn tails(&self) -> (f64, f64) {
        (1.0, (-self.cz() + self.cy()).exp())
    }

    /// Largest magnitude of the variable part of the exponent on the active legs.
    pub fn exponent_scale(&self) -> f64 {
        self.cz() + self.cy()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    /// Coefficient of e^{rate*x} at the current y.
    pub coef: f64,
    pub rate: f64,
    /// d(ln coef)/dy.
    pub dlog: f64,
    /// Exponent contribution once the leg is capped.
    pub cap: f64,
    /// d(breakpoint)/dy.
    pub slope: f64,
}

/// One branch `exp(c0 + d e^{p x} + b e^{q x})` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub lo: f64,
    pub hi: f64,
    pub c0: f64,
    pub d: f64,
    pub p: f64,
    pub b: f64,
    pub q: f64,
    pub dv: f64,
    pub dvv: f64,
    pub bv: f64,
    pub bvv: f64,
    pub hi_slope: f64,
}

/// Value and first/second derivatives of a branch at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Derivs {
    pub f: f64,
    pub u: f64,
    pub v: f64,
    pub uu: f64,
    pub uv: f64,
    pub vv: f64,
}

impl Region {
    fn new(lo: f64, hi: f64, c0: f64, z: Option<Leg>, y: Option<Leg>, hi_slope: f64) -> Self {
        // The single active leg of a middle region is stored in the b slot.
        let (d, p, dl) = z.map_or((0.0, 0.0, 0.0), |l| (l.coef, l.rate, l.dlog));
        let (b, q, bl) = y.map_or((0.0, 0.0, 0.0), |l| (l.coef, l.rate, l.dlog));
        Region { lo, hi, c0, d, p, b, q, dv: dl * d, dvv: dl * dl * d, bv: bl * b, bvv: bl * bl * b, hi_slope }
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.c0 + self.d * (self.p * x).exp() + self.b * (self.q * x).exp()).exp()
    }

    pub fn derivs(&self, x: f64) -> Derivs {
        let ep = (self.p * x).exp();
        let eq = (self.q * x).exp();
        let f = (self.c0 + self.d * ep + self.b * eq).exp();
        let gu = self.p * self.d * ep + self.q * self.b * eq;
        let gv = self.dv * ep + self.bv * eq;
        let guu = self.p * self.p * self.d * ep + self.q * self.q * self.b * eq;
        let guv = self.p * self.dv * ep + self.q * self.bv * eq;
        let gvv = self.dvv * ep + self.bvv * eq;
        Derivs { f, u: f * gu, v: f * gv, uu: f * (gu * gu + guu), uv: f * (gu * gv + guv), vv: f * (gv * gv + gvv) }
    }
}

/// Second-derivative contributions of the moving breakpoints to the heat average
/// of a piecewise payoff: the first derivatives jump across each breakpoint.
pub fn kink_terms(regions: &[Region], u: f64, tau: f64) -> Derivs {
    let mut out = Derivs::default();
    for w in regions.windows(2) {
        let (l, r) = (&w[0], &w[1]);
        let c = l.hi;
        let n = heat_kernel(c - u, tau);
        let dl = l.derivs(c);
        let dr = r.derivs(c);
        out.uu += n * (dr.u - dl.u);
        out.uv += n * (dr.v - dl.v);
        out.vv += n * l.hi_slope * (dl.v - dr.v);
    }
    out
}

/// `initial_phi_distorted(u, v)`: the distorted payoff evaluated in solver coordinates.
pub fn initial_phi_distorted(x: f64, y: f64, spec: &PayoffSpec) -> Result<f64> {
    let e = spec.exponent(x, y);
    if e > EXPONENT_GUARD {
        return Err(Error::ExponentOverflow(e));
    }
    Ok(e.exp())
}

/// Raw payoff through the market-coordinate chain, used to cross-check `PayoffSpec::raw`.
pub fn raw_payoff_via_market(x: f64, y: f64, p: &MarketParams, g: &CorrelationGeometry, kind: ExpansionKind) -> Result<f64> {
    let (h, s) = from_solver_coords(x, y, 0.0, p, g, kind)?;
    Ok(terminal_g(h, s, p.gamma, p.k_y, p.k_z, p.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::geometry_from_params;

    #[test]
    fn payoff_examples() {
        assert_eq!(portfolio_payoff(100.0, 120.0, 90.0, 110.0, 1.0), 20.0);
        assert_eq!(portfolio_payoff(100.0, 100.0, 90.0, 110.0, 0.0), 100.0);
        assert_eq!(portfolio_payoff(100.0, 100.0, 90.0, 110.0, 1.0), 10.0);
        assert!((terminal_g(0.0, 0.0, 0.03, 90.0, 110.0, 1.0) - (-0.6f64).exp()).abs() < 1e-15);
        assert!((terminal_g(0.5, 1.0, 0.03, 90.0, 110.0, 1.0) - (-0.6f64).exp()).abs() < 1e-15);
        assert!((terminal_g(0.0, -800.0, 0.03, 90.0, 110.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_branch_and_continuity() {
        let p = MarketParams::test1();
        let g = geometry_from_params(&p).unwrap();
        for kind in [ExpansionKind::MuExpansion, ExpansionKind::EpsilonExpansion] {
            let spec = PayoffSpec::distorted(&p, &g, kind).unwrap();
            for &v in &[-2.0, 0.0, 1.0, 3.5] {
                let rs = spec.regions(v);
                let top = rs.last().unwrap().lo;
                let flat = (-spec.gamma_bar * (p.k_z - p.alpha * p.k_y)).exp();
                assert!((spec.value(top + 0.1, v) - flat).abs() < 1e-15);
                assert!((spec.value(top + 40.0, v) - flat).abs() < 1e-15);
                for w in rs.windows(2) {
                    let c = w[0].hi;
                    assert!((w[0].value(c) - w[1].value(c)).abs() < 1e-12);
                    assert!((w[0].value(c) - spec.value(c, v)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn branch_one_value() {
        let p = MarketParams::test1();
        let g = geometry_from_params(&p).unwrap();
        let spec = PayoffSpec::distorted(&p, &g, ExpansionKind::MuExpansion).unwrap();
        let (u, v) = (-5.0, 1.0);
        let r = spec.regions(v)[0];
        assert!(u < r.hi);
        let gb = p.gamma * (1.0 - g.rho_bar_xz_sq);
        let r2 = g.theta2.sqrt();
        let e = -gb * p.k_z * ((p.sigma_z / r2) * (u + v * g.theta1 / r2)).exp()
            + gb * p.k_y * ((p.sigma_y * g.beta / r2) * (u + v * g.theta3 / (g.beta * r2))).exp();
        assert!((r.value(u) - e.exp()).abs() < 1e-14);
        assert!((spec.value(u, v) - e.exp()).abs() < 1e-14);
    }

    #[test]
    fn raw_payoff_matches_market_chain() {
        for p in [MarketParams::test1(), MarketParams::test2()] {
            let g = geometry_from_params(&p).unwrap();
            for kind in [ExpansionKind::MuExpansion, ExpansionKind::EpsilonExpansion] {
                let raw = PayoffSpec::raw(&p, &g, kind).unwrap();
                let dist = PayoffSpec::distorted(&p, &g, kind).unwrap();
                let k = 1.0 / (1.0 - g.rho_sq(kind));
                for &(x, y) in &[(-3.0, 0.4), (0.2, -2.0), (5.0, 1.0), (-20.0, 7.0)] {
                    let chain = raw_payoff_via_market(x, y, &p, &g, kind).unwrap();
                    assert!((raw.value(x, y) - chain).abs() < 1e-10 * chain);
                    assert!((dist.value(x, y).powf(k) - chain).abs() < 1e-10 * chain);
                }
            }
        }
    }

    #[test]
    fn overflow_guard() {
        let mut p = MarketParams::test1();
        p.gamma = 5.0;
        p.alpha = 2.0;
        let g = geometry_from_params(&p).unwrap();
        assert!(matches!(PayoffSpec::raw(&p, &g, ExpansionKind::MuExpansion), Err(Error::ExponentOverflow(_))));
    }

    #[test]
    fn region_derivatives_match_differences() {
        let p = MarketParams::test2();
        let g = geometry_from_params(&p).unwrap();
        let spec = PayoffSpec::distorted(&p, &g, ExpansionKind::MuExpansion).unwrap();
        let (x, y) = (-4.0, 0.7);
        let h = 1e-4;
        let r0 = spec.regions(y)[0];
        let d = r0.derivs(x);
        let f = |x: f64, y: f64| spec.regions(y)[0].value(x);
        let fv = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        let fvv = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
        let fuv = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h);
        assert!((d.v - fv).abs() < 1e-7 * fv.abs().max(1.0));
        assert!((d.vv - fvv).abs() < 1e-5 * fvv.abs().max(1.0));
        assert!((d.uv - fuv).abs() < 1e-5 * fuv.abs().max(1.0));
    }
}
