//! Indifference price of the long-Z / short-alpha-Y package, the optimal
//! static hedge and the optimal index holding.

use crate::error::{Error, Result};
use crate::params::MarketParams;
use crate::solver::{phi_at_states, PhiProblem, PhiSolver, PhiValues};
use crate::special::norm_cdf;

/// Merton value `-exp(-gamma x e^{r tau} - eta_s^2 tau / 2)`.
pub fn merton_value(x: f64, tau: f64, p: &MarketParams) -> f64 {
    let eta = p.eta_s();
    -(-p.gamma * x * (p.r * tau).exp() - 0.5 * eta * eta * tau).exp()
}

pub fn bs_put(spot: f64, strike: f64, vol: f64, r: f64, tau: f64) -> f64 {
    let df = (-r * tau).exp();
    if strike <= 0.0 {
        return 0.0;
    }
    let sd = vol * tau.max(0.0).sqrt();
    if sd <= 0.0 {
        return (strike * df - spot).max(0.0);
    }
    let d1 = ((spot / strike).ln() + (r + 0.5 * vol * vol) * tau) / sd;
    let d2 = d1 - sd;
    strike * df * norm_cdf(-d2) - spot * norm_cdf(-d1)
}

/// Where the price of the hedge instrument comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HedgePrice {
    /// The shorted claim `min(Y_T, K_y)`: `K_y e^{-r tau} - put`.
    CappedClaim,
    /// The Black-Scholes put alone.
    Put,
    Quote(f64),
}

impl HedgePrice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "capped" => Ok(HedgePrice::CappedClaim),
            "put" => Ok(HedgePrice::Put),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .map(HedgePrice::Quote)
                .ok_or_else(|| Error::InvalidParams(format!("p_y source '{s}' is neither capped, put nor a price"))),
        }
    }
}

pub fn p_y(p: &MarketParams, tau: f64, source: HedgePrice) -> f64 {
    p_y_at(p, p.y0, tau, source)
}

/// `p_y` with the Y spot at `y`.
pub fn p_y_at(p: &MarketParams, y: f64, tau: f64, source: HedgePrice) -> f64 {
    let put = bs_put(y, p.k_y, p.sigma_y, p.r, tau);
    match source {
        HedgePrice::CappedClaim => p.k_y * (-p.r * tau).exp() - put,
        HedgePrice::Put => put,
        HedgePrice::Quote(q) => q,
    }
}

/// `g = -(1/gamma) e^{-r tau} ln Phi + alpha p_Y`.
pub fn indifference_price(phi_value: f64, alpha: f64, p_y: f64, gamma: f64, r: f64, tau: f64) -> f64 {
    -(-r * tau).exp() * phi_value.ln() / gamma + alpha * p_y
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaOptimum {
    pub alpha: f64,
    pub g: f64,
    /// The maximum sits on an end of the bracket.
    pub edge: bool,
    pub evaluations: usize,
    pub bracket: (f64, f64),
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Maximiser of `f` on `[lo, hi]` by Brent's parabolic/golden search.
pub fn optimal_alpha<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<AlphaOptimum> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidParams(format!("alpha bracket [{lo}, {hi}]")));
    }
    let mut evals = 0;
    let mut eval = |x: f64, evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let y = f(x)?;
        if !y.is_finite() {
            return Err(Error::EvaluationFailure(format!("g({x}) = {y}")));
        }
        Ok(-y)
    };
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x, &mut evals)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = tol * (x.abs() + (hi - lo)) + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = eval(u, &mut evals)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    // one parabola through x and x +- delta; exact for quadratics, and not
    // limited by the square-root-of-epsilon flatness of the bracketing
    let delta = 1e-4 * (hi - lo);
    if x - delta > lo && x + delta < hi {
        let fm = eval(x - delta, &mut evals)?;
        let fp = eval(x + delta, &mut evals)?;
        let curv = fp - 2.0 * fx + fm;
        if curv > 0.0 {
            let u = x - 0.5 * delta * (fp - fm) / curv;
            if (u - x).abs() < delta {
                let fu = eval(u, &mut evals)?;
                if fu <= fx {
                    (x, fx) = (u, fu);
                }
            }
        }
    }
    let flo = eval(lo, &mut evals)?;
    let fhi = eval(hi, &mut evals)?;
    let near = 10.0 * (tol * (x.abs() + (hi - lo)) + 1e-12);
    let (mut best, mut fbest, mut edge) = (x, fx, (x - lo) < near || (hi - x) < near);
    if flo <= fbest {
        (best, fbest, edge) = (lo, flo, true);
    }
    if fhi < fbest {
        (best, fbest, edge) = (hi, fhi, true);
    }
    Ok(AlphaOptimum { alpha: best, g: -fbest, edge, evaluations: evals, bracket: (lo, hi) })
}

/// `pi* = e^{-r tau} / (gamma sigma_x) (eta_s + rho_xy sigma_y d_h ln Phi + rho_xz sigma_z d_s ln Phi)`:
/// the index amount maximising the generator once `V_x`, `V_xx` are taken
/// from the exponential ansatz and `y V_xy`, `z V_xz` from `Phi` through `h`, `s`.
pub fn optimal_pi(grad_ln_phi: (f64, f64), tau: f64, p: &MarketParams) -> Result<f64> {
    let rho_xy = p.effective_rho_xy()?;
    let denom = p.gamma * p.sigma_x;
    if !(denom.abs() > 0.0) {
        return Err(Error::ZeroConvexity);
    }
    let (dh, ds) = grad_ln_phi;
    Ok((-p.r * tau).exp() / denom * (p.eta_s() + rho_xy * p.sigma_y * dh + p.rho_xz * p.sigma_z * ds))
}

/// Central differences of `ln Phi` in `(h, s)` with step `delta`.
pub fn ln_phi_gradient(solver: &dyn PhiSolver, problem: &PhiProblem, h: f64, s: f64, tau: f64, delta: f64) -> Result<(f64, f64)> {
    let states = [(h + delta, s), (h - delta, s), (h, s + delta), (h, s - delta)];
    let v = phi_at_states(solver, problem, tau, &states)?.phi;
    Ok(((v[0].ln() - v[1].ln()) / (2.0 * delta), (v[2].ln() - v[3].ln()) / (2.0 * delta)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceReport {
    pub g_alpha: f64,
    pub alpha: f64,
    pub alpha_star: Option<AlphaOptimum>,
    pub p_y: f64,
    pub phi_at_spot: f64,
    pub phi0_at_spot: f64,
    pub expansion: &'static str,
    pub solver: &'static str,
    pub iterations: Vec<usize>,
}

/// `g` at the spot for a given `alpha`, priced with `solver`.
pub fn price_at_spot(solver: &dyn PhiSolver, problem: &PhiProblem, alpha: f64, source: HedgePrice) -> Result<PriceReport> {
    let pr = problem.with_alpha(alpha);
    let p = &pr.params;
    let tau = p.maturity;
    let out = phi_at_states(solver, &pr, tau, &[pr.spot()])?;
    let py = p_y(p, tau, source);
    Ok(PriceReport {
        g_alpha: indifference_price(out.phi[0], alpha, py, p.gamma, p.r, tau),
        alpha,
        alpha_star: None,
        p_y: py,
        phi_at_spot: out.phi[0],
        phi0_at_spot: out.terms[0][0],
        expansion: pr.kind.name(),
        solver: solver.name(),
        iterations: out.iterations,
    })
}

/// Price with the optimal static hedge in `[lo, hi]`; a capital limit further
/// restricts `alpha <= capital / p_Y`.
pub fn price_with_optimal_hedge(solver: &dyn PhiSolver, problem: &PhiProblem, bracket: (f64, f64), capital: Option<f64>, source: HedgePrice) -> Result<PriceReport> {
    let tau = problem.params.maturity;
    let py = p_y(&problem.params, tau, source);
    let hi = match capital {
        Some(c) if py > 0.0 => bracket.1.min(c / py),
        _ => bracket.1,
    };
    let opt = optimal_alpha(|a| price_at_spot(solver, problem, a, source).map(|r| r.g_alpha), bracket.0, hi, 1e-6)?;
    let mut rep = price_at_spot(solver, problem, opt.alpha, source)?;
    rep.alpha_star = Some(opt);
    Ok(rep)
}

/// Price at one solver-coordinate point.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePoint {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub s: f64,
    pub phi: f64,
    /// `Phi` truncated after each order; one entry for FD.
    pub partials: Vec<f64>,
    pub p_y: f64,
    pub g: f64,
}

/// `g` at solver-coordinate `points` for a fixed `alpha`, from one solve.
/// `p_Y` follows the Y spot of each point.
pub fn price_at_points(solver: &dyn PhiSolver, problem: &PhiProblem, alpha: f64, tau: f64, points: &[(f64, f64)], source: HedgePrice) -> Result<(Vec<PricePoint>, PhiValues)> {
    let pr = problem.with_alpha(alpha);
    let p = &pr.params;
    let out = solver.evaluate(&pr, tau, points)?;
    let mut rows = Vec::with_capacity(points.len());
    for (i, &(x, y)) in points.iter().enumerate() {
        let phi = out.phi[i];
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::EvaluationFailure(format!("{} returned Phi = {phi} at ({x}, {y})", solver.name())));
        }
        let (h, s) = crate::params::from_solver_coords(x, y, tau, p, &pr.geometry, pr.kind)?;
        let py = p_y_at(p, p.k_y * h.exp(), tau, source);
        let partials = (0..out.terms.len()).map(|n| out.terms.iter().take(n + 1).map(|t| t[i]).sum()).collect();
        rows.push(PricePoint { x, y, h, s, phi, partials, p_y: py, g: indifference_price(phi, alpha, py, p.gamma, p.r, tau) });
    }
    Ok((rows, out))
}

/// Optimal static hedge at one solver-coordinate point.
pub fn optimal_hedge_at(solver: &dyn PhiSolver, problem: &PhiProblem, tau: f64, point: (f64, f64), bracket: (f64, f64), source: HedgePrice) -> Result<AlphaOptimum> {
    optimal_alpha(|a| price_at_points(solver, problem, a, tau, &[point], source).map(|(r, _)| r[0].g), bracket.0, bracket.1, 1e-6)
}
