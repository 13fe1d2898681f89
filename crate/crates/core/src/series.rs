//! Closed-form Gaussian averages of the piecewise payoff: the Omega double
//! series, its derivative companion, and the J transforms with their
//! u/v derivatives.

use crate::error::{Error, Result};
use crate::payoffs::{kink_terms, Derivs, PayoffSpec, Region};
use crate::special::{ln_exp_integral, Accumulator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesControl {
    pub i_max: usize,
    /// Early stop once a whole degree-i group is below this fraction of the running sum.
    pub term_tol: f64,
    /// The series is rejected if, at `i_max`, the last group still exceeds this fraction.
    pub divergence_tol: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl { i_max: 10, term_tol: 1e-14, divergence_tol: 1e-6 }
    }
}

impl SeriesControl {
    pub fn with_i_max(i_max: usize) -> Self {
        SeriesControl { i_max, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaArgs {
    pub a: f64,
    pub delta: f64,
    pub p: f64,
    pub beta_coef: f64,
    pub q: f64,
    pub u: f64,
    pub tau: f64,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

fn split(x: f64) -> (f64, f64) {
    (x.abs().ln(), if x < 0.0 { -1.0 } else { 1.0 })
}

/// `∫_lo^hi e^{k x} exp(d e^{p x} + b e^{q x}) N(x; u, tau) dx` by expanding the
/// exponential in a double power series, summed degree by degree.
#[allow(clippy::too_many_arguments)]
pub fn exp_series_integral(d: f64, p: f64, b: f64, q: f64, k: f64, lo: f64, hi: f64, u: f64, tau: f64, ctrl: &SeriesControl) -> Result<f64> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    if d == 0.0 && b == 0.0 {
        return Ok(ln_exp_integral(k, lo, hi, u, tau).exp());
    }
    let lf = ln_factorials(ctrl.i_max);
    let (ld, sd) = split(d);
    let (lb, sb) = split(b);
    let mut total = Accumulator::default();
    let mut last = 0.0;
    for i in 0..=ctrl.i_max {
        let mut group = Accumulator::default();
        let mut group_abs = 0.0;
        for j in 0..=i {
            let m = i - j;
            if (m > 0 && d == 0.0) || (j > 0 && b == 0.0) {
                continue;
            }
            let mut lc = -lf[m] - lf[j];
            if m > 0 {
                lc += m as f64 * ld;
            }
            if j > 0 {
                lc += j as f64 * lb;
            }
            let sign = if m % 2 == 1 { sd } else { 1.0 } * if j % 2 == 1 { sb } else { 1.0 };
            let big_a = m as f64 * p + j as f64 * q + k;
            let t = (lc + ln_exp_integral(big_a, lo, hi, u, tau)).exp();
            if !t.is_finite() {
                return Err(Error::SeriesDivergence { i_max: ctrl.i_max, last: f64::INFINITY });
            }
            group.add(sign * t);
            group_abs += t;
        }
        let g = group.value();
        total.add(g);
        last = group_abs;
        if i > 0 && group_abs <= ctrl.term_tol * total.value().abs() {
            return Ok(total.value());
        }
    }
    let s = total.value();
    if last > ctrl.divergence_tol * s.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::SeriesDivergence { i_max: ctrl.i_max, last: last / s.abs().max(f64::MIN_POSITIVE) });
    }
    Ok(s)
}

/// `Ω = ∫_{-∞}^a exp(δ e^{p x} + β e^{q x}) N(x; u, tau) dx`.
pub fn omega(args: &OmegaArgs, ctrl: &SeriesControl) -> Result<f64> {
    exp_series_integral(args.delta, args.p, args.beta_coef, args.q, 0.0, f64::NEG_INFINITY, args.a, args.u, args.tau, ctrl)
}

/// `Ω₁ = ∫_{-∞}^a ∂_x[e^{p x} exp(δ e^{p x} + β e^{q x})] N(x; u, tau) dx`
/// = `p M(p) + p δ M(2p) + q β M(p+q)`.
pub fn omega1(args: &OmegaArgs, ctrl: &SeriesControl) -> Result<f64> {
    let m = |k: f64| exp_series_integral(args.delta, args.p, args.beta_coef, args.q, k, f64::NEG_INFINITY, args.a, args.u, args.tau, ctrl);
    let mut out = args.p * m(args.p)?;
    if args.delta != 0.0 {
        out += args.p * args.delta * m(2.0 * args.p)?;
    }
    if args.beta_coef != 0.0 {
        out += args.q * args.beta_coef * m(args.p + args.q)?;
    }
    Ok(out)
}

/// Expansion radius of each piece: the exponent varies by at most this much
/// around the piece centre.
const PIECE_RADIUS: f64 = 0.5;
/// Re-expanding powers of `(E - E_m)` into exponentials loses about `e^{2S}`
/// digits where `S` bounds the exponent; beyond this the series is refused.
const SCALE_CAP: f64 = 9.0;

/// One interval of a branch with its exponential-monomial expansion:
/// `phi ≈ scale * Σ coef_k e^{rate_k x}` on `[lo, hi]`.
#[derive(Debug, Clone)]
struct Piece {
    lo: f64,
    hi: f64,
    terms: Vec<(f64, f64)>,
}

impl Piece {
    fn moment(&self, k: f64, u: f64, tau: f64) -> f64 {
        let mut acc = Accumulator::default();
        for &(rate, c) in &self.terms {
            acc.add(c * ln_exp_integral(rate + k, self.lo, self.hi, u, tau).exp());
        }
        acc.value()
    }
}

/// Pieces of one branch together with the branch data.
#[derive(Debug, Clone)]
struct BranchPlan {
    region: Region,
    pieces: Vec<Piece>,
}

/// Precomputed closed-form expansion of the payoff at fixed `v`, reusable for any
/// `(u, tau)`.
///
/// Each branch `exp(c0 + d e^{px} + b e^{qx})` is cut where the exponent varies by
/// at most `PIECE_RADIUS`; on each piece the exponential is expanded to total
/// degree `i_max` around the piece centre (around zero on the left tail, which
/// is the plain double series of `omega`).
#[derive(Debug, Clone)]
pub struct JPlan {
    branches: Vec<BranchPlan>,
}

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0; n + 1];
    for k in 1..n {
        row[k] = row[k - 1] * (n - k + 1) as f64 / k as f64;
    }
    row
}

/// `a[m][k]`: coefficient of `E^k` in `c^m (E - e)^m / m!`.
fn leg_table(c: f64, e: f64, n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n + 1);
    let mut cm = 1.0;
    for m in 0..=n {
        if m > 0 {
            cm *= c / m as f64;
        }
        let bin = binomial_row(m);
        let mut row = vec![0.0; m + 1];
        for k in 0..=m {
            row[k] = cm * bin[k] * (-e).powi((m - k) as i32);
        }
        out.push(row);
    }
    out
}

fn truncation_degree(rho: f64, ctrl: &SeriesControl) -> Result<usize> {
    let mut t = 1.0;
    for i in 0..=ctrl.i_max {
        t *= rho / (i + 1) as f64;
        if t <= ctrl.term_tol {
            return Ok(i);
        }
    }
    if t > ctrl.divergence_tol {
        return Err(Error::SeriesDivergence { i_max: ctrl.i_max, last: t });
    }
    Ok(ctrl.i_max)
}

fn expand_piece(r: &Region, lo: f64, hi: f64, centre: Option<f64>, ctrl: &SeriesControl) -> Result<Piece> {
    let (ep, eq, xm) = match centre {
        Some(m) => {
            let ep = (r.p * m).exp();
            let eq = (r.q * m).exp();
            (ep, eq, r.d * ep + r.b * eq)
        }
        None => (0.0, 0.0, 0.0),
    };
    let s = |x: f64| r.d.abs() * (r.p * x).exp() + r.b.abs() * (r.q * x).exp();
    let rho = match centre {
        Some(_) => (s(hi) - s(lo)).max(0.0),
        None => s(hi),
    };
    let n = truncation_degree(rho, ctrl)?;
    let a = leg_table(r.d, ep, n);
    let b = leg_table(r.b, eq, n);
    let scale = (r.c0 + xm).exp();
    let mut terms = Vec::new();
    for k in 0..=n {
        for l in 0..=(n - k) {
            if (k > 0 && r.d == 0.0) || (l > 0 && r.b == 0.0) {
                continue;
            }
            let mut acc = Accumulator::default();
            for m in k..=n {
                for j in l..=(n - m) {
                    acc.add(a[m][k] * b[j][l]);
                }
            }
            let c = acc.value();
            if c != 0.0 {
                terms.push((k as f64 * r.p + l as f64 * r.q, scale * c));
            }
        }
    }
    Ok(Piece { lo, hi, terms })
}

/// Smallest `x` in `[a, b]` with `s(x) >= target` for increasing `s`.
fn solve_increasing<F: Fn(f64) -> f64>(s: F, target: f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if s(m) >= target {
            b = m;
        } else {
            a = m;
        }
        if b - a < 1e-13 * (1.0 + b.abs()) {
            break;
        }
    }
    b
}

fn plan_branch(r: &Region, ctrl: &SeriesControl) -> Result<BranchPlan> {
    let mut pieces = Vec::new();
    if r.d == 0.0 && r.b == 0.0 {
        pieces.push(Piece { lo: r.lo, hi: r.hi, terms: vec![(0.0, r.c0.exp())] });
        return Ok(BranchPlan { region: *r, pieces });
    }
    if !(r.hi > r.lo) {
        return Ok(BranchPlan { region: *r, pieces });
    }
    let s = |x: f64| r.d.abs() * (r.p * x).exp() + r.b.abs() * (r.q * x).exp();
    if !r.hi.is_finite() {
        return Err(Error::EvaluationFailure("unbounded branch with active legs".into()));
    }
    let top = s(r.hi);
    if top > SCALE_CAP {
        return Err(Error::SeriesDivergence { i_max: ctrl.i_max, last: top });
    }
    let mut a = r.lo;
    if !a.is_finite() {
        // Left tail: plain series around zero while the exponent stays small.
        if top <= PIECE_RADIUS {
            pieces.push(expand_piece(r, r.lo, r.hi, None, ctrl)?);
            return Ok(BranchPlan { region: *r, pieces });
        }
        let mut left = r.hi - 1.0;
        while s(left) > PIECE_RADIUS {
            left -= 2.0 * (r.hi - left);
        }
        let cut = solve_increasing(s, PIECE_RADIUS, left, r.hi);
        pieces.push(expand_piece(r, f64::NEG_INFINITY, cut, None, ctrl)?);
        a = cut;
    }
    while a < r.hi {
        let target = s(a) + 2.0 * PIECE_RADIUS;
        let b = if s(r.hi) <= target { r.hi } else { solve_increasing(s, target, a, r.hi) };
        pieces.push(expand_piece(r, a, b, Some(0.5 * (a + b)), ctrl)?);
        a = b;
    }
    Ok(BranchPlan { region: *r, pieces })
}

impl JPlan {
    pub fn new(spec: &PayoffSpec, v: f64, ctrl: &SeriesControl) -> Result<Self> {
        let branches = spec.regions(v).iter().map(|r| plan_branch(r, ctrl)).collect::<Result<Vec<_>>>()?;
        Ok(JPlan { branches })
    }

    fn moment(&self, b: &BranchPlan, k: f64, u: f64, tau: f64) -> f64 {
        b.pieces.iter().map(|p| p.moment(k, u, tau)).sum()
    }

    pub fn value(&self, u: f64, tau: f64) -> f64 {
        let mut acc = Accumulator::default();
        for b in &self.branches {
            for p in &b.pieces {
                acc.add(p.moment(0.0, u, tau));
            }
        }
        acc.value()
    }

    /// `J` and its first and second derivatives in `u` and `v`.
    ///
    /// Branch coefficients depend on `v` and so do the breakpoints; the moving
    /// breakpoints contribute Gaussian-weighted jump terms to the second derivatives.
    pub fn derivs(&self, u: f64, tau: f64) -> Derivs {
        let mut out = Derivs::default();
        for br in &self.branches {
            let r = &br.region;
            let (d, p, b, q) = (r.d, r.p, r.b, r.q);
            let has_d = d != 0.0;
            let has_b = b != 0.0;
            let m = |k: f64| self.moment(br, k, u, tau);
            let m0 = m(0.0);
            let mp = if has_d { m(p) } else { 0.0 };
            let mq = if has_b { m(q) } else { 0.0 };
            let m2p = if has_d { m(2.0 * p) } else { 0.0 };
            let mpq = if has_d && has_b { m(p + q) } else { 0.0 };
            let m2q = if has_b { m(2.0 * q) } else { 0.0 };
            out.f += m0;
            out.u += p * d * mp + q * b * mq;
            out.v += r.dv * mp + r.bv * mq;
            out.uu += p * p * d * d * m2p + 2.0 * p * q * d * b * mpq + q * q * b * b * m2q + p * p * d * mp + q * q * b * mq;
            out.uv += p * d * r.dv * m2p + (p * d * r.bv + q * b * r.dv) * mpq + q * b * r.bv * m2q + p * r.dv * mp + q * r.bv * mq;
            out.vv += r.dv * r.dv * m2p + 2.0 * r.dv * r.bv * mpq + r.bv * r.bv * m2q + r.dvv * mp + r.bvv * mq;
        }
        let regions: Vec<Region> = self.branches.iter().map(|b| b.region).collect();
        let k = kink_terms(&regions, u, tau);
        out.uu += k.uu;
        out.uv += k.uv;
        out.vv += k.vv;
        out
    }
}

/// `J(u, v, tau)`: heat-kernel average of the distorted payoff.
pub fn j_sum(u: f64, v: f64, spec: &PayoffSpec, tau: f64, ctrl: &SeriesControl) -> Result<f64> {
    Ok(JPlan::new(spec, v, ctrl)?.value(u, tau))
}

/// `J` with its first and second `u`/`v` derivatives.
pub fn j_derivs(u: f64, v: f64, spec: &PayoffSpec, tau: f64, ctrl: &SeriesControl) -> Result<Derivs> {
    Ok(JPlan::new(spec, v, ctrl)?.derivs(u, tau))
}

pub fn j_derivative_uv(u: f64, v: f64, spec: &PayoffSpec, tau: f64, ctrl: &SeriesControl) -> Result<f64> {
    j_derivs(u, v, spec, tau, ctrl).map(|d| d.uv)
}

pub fn j_derivative_vv(u: f64, v: f64, spec: &PayoffSpec, tau: f64, ctrl: &SeriesControl) -> Result<f64> {
    j_derivs(u, v, spec, tau, ctrl).map(|d| d.vv)
}
