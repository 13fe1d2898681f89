//! Implicit finite-difference solver for the reduced nonlinear equation
//!
//! `Phi_t = 1/2 Phi_uu + 1/2 a_vv Phi_vv + a_uv Phi_uv - 1/2 c Phi_u^2 / Phi`
//!
//! on a sinh-stretched grid with zero-gradient edges. Each implicit Euler
//! step is closed by a fixed-point iteration on the nonlinear term; every
//! iterate is a banded linear solve.

use crate::asymptotic::SolutionOrder;
use crate::error::{Error, Result};
use crate::grid::{stretched_axis, GridFunction};
use crate::params::{CorrelationGeometry, ExpansionKind};
use crate::kernel::ZeroOrderKernel;
use crate::payoffs::PayoffSpec;
use crate::special::{gauss_legendre, heat_kernel};
use rayon::prelude::*;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearization {
    /// Nonlinear term evaluated with the gradient of the previous iterate.
    Frozen,
    /// Linearised around the previous iterate.
    Newton,
}

impl Linearization {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Linearization::Frozen),
            "newton" => Ok(Linearization::Newton),
            _ => Err(Error::Unknown { kind: "linearization", name: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdConfig {
    pub nu: usize,
    pub nv: usize,
    pub u_range: (f64, f64),
    pub v_range: (f64, f64),
    pub dt: f64,
    /// sinh-stretch scales for `u` and `v` around the origin; `None` is uniform.
    pub stretch: Option<(f64, f64)>,
    pub max_fixed_point_iters: usize,
    pub fp_tol: f64,
    pub solve_in_log: bool,
    pub linearization: Linearization,
    pub psi_cap: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            nu: 50,
            nv: 50,
            u_range: (-50.0, 50.0),
            v_range: (-30.0, 30.0),
            dt: 0.1,
            stretch: Some((5.0, 5.0)),
            max_fixed_point_iters: 50,
            fp_tol: 1e-8,
            solve_in_log: true,
            linearization: Linearization::Newton,
            psi_cap: 50.0,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nu < 8 || self.nv < 8 {
            return Err(Error::InvalidParams(format!("fd grid {}x{} is below 8x8", self.nu, self.nv)));
        }
        if !(self.dt > 0.0) || !(self.fp_tol > 0.0) || self.max_fixed_point_iters == 0 {
            return Err(Error::InvalidParams("dt, fp_tol and max_fixed_point_iters must be positive".into()));
        }
        let contains = |r: (f64, f64)| r.0 < 0.0 && r.1 > 0.0;
        if !contains(self.u_range) || !contains(self.v_range) {
            return Err(Error::InvalidParams("fd ranges must contain the kink at the origin".into()));
        }
        Ok(())
    }

    pub fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        let (su, sv) = match self.stretch {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        (
            stretched_axis(self.u_range.0, self.u_range.1, self.nu, 0.0, su),
            stretched_axis(self.v_range.0, self.v_range.1, self.nv, 0.0, sv),
        )
    }
}

/// Coefficients of the equation being marched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdEquation {
    pub a_vv: f64,
    pub a_uv: f64,
    /// Coefficient `c` of `-1/2 c Phi_u^2 / Phi`.
    pub c_nl: f64,
}

impl FdEquation {
    /// `(u, vbar)` form for the mu-expansion, `(w, v)` form with the mixed
    /// derivative for the eps-expansion. `vv_multiplier` scales the `vv` term.
    pub fn for_expansion(g: &CorrelationGeometry, kind: ExpansionKind, vv_multiplier: f64) -> Self {
        match kind {
            ExpansionKind::MuExpansion => FdEquation { a_vv: vv_multiplier * g.theta2, a_uv: 0.0, c_nl: g.rho_bar_xz_sq },
            ExpansionKind::EpsilonExpansion => FdEquation {
                a_vv: vv_multiplier * g.eps * g.eps * g.theta2,
                a_uv: g.eps * g.theta3,
                c_nl: g.rho_xy * g.rho_xy,
            },
        }
    }

    pub fn with_nonlinear(mut self, c: f64) -> Self {
        self.c_nl = c;
        self
    }
}

#[derive(Debug, Clone)]
pub struct FdSolveReport {
    pub solution: GridFunction,
    pub tau: f64,
    pub iterations: Vec<usize>,
    /// Update norms of every fixed-point iterate, per time step.
    pub residuals: Vec<Vec<f64>>,
    pub wall_time: f64,
}

impl FdSolveReport {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn median_iterations(&self) -> f64 {
        let mut v = self.iterations.clone();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_unstable();
        let n = v.len();
        if n % 2 == 1 { v[n / 2] as f64 } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) as f64 }
    }
}

/// Three-point weights `(left, centre, right)` on a non-uniform axis.
#[derive(Debug, Clone, Copy, Default)]
struct Stencil {
    d1: [f64; 3],
    d2: [f64; 3],
    /// One-sided first derivatives for upwinding.
    back: [f64; 3],
    fwd: [f64; 3],
    h: f64,
}

fn stencils(x: &[f64]) -> Vec<Stencil> {
    let n = x.len();
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                // zero-gradient edge through a mirrored ghost node
                let hb = if i == 0 { x[1] - x[0] } else { x[n - 1] - x[n - 2] };
                let w = 2.0 / (hb * hb);
                let d2 = if i == 0 { [0.0, -w, w] } else { [w, -w, 0.0] };
                return Stencil { d2, h: hb, ..Default::default() };
            }
            let hm = x[i] - x[i - 1];
            let hp = x[i + 1] - x[i];
            let s = hm + hp;
            Stencil {
                d1: [-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s)],
                d2: [2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s)],
                back: [-1.0 / hm, 1.0 / hm, 0.0],
                fwd: [0.0, -1.0 / hp, 1.0 / hp],
                h: 0.5 * s,
            }
        })
        .collect()
}

/// Square band matrix, LU-factorised in place without pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, x: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        let k = self.idx(i, j);
        self.data[k] += x;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..n {
            let p = self.data[self.idx(k, k)];
            if !(p.abs() > 1e-14 * scale) {
                return Err(Error::SingularSystem(p));
            }
            for i in k + 1..(k + kl + 1).min(n) {
                let ik = self.idx(i, k);
                let l = self.data[ik] / p;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..(k + ku + 1).min(n) {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(())
    }

    /// Solves with a factorised matrix.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(kl)..i {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + ku + 1).min(n) {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

struct Operator<'a> {
    su: &'a [Stencil],
    sv: &'a [Stencil],
    nu: usize,
    nv: usize,
    eq: FdEquation,
}

/// Difference stencil chosen per node and direction for one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Central,
    Back,
    Fwd,
}

struct Sides {
    u: Vec<Side>,
    v: Vec<Side>,
}

fn weights(s: &Stencil, side: Side) -> [f64; 3] {
    match side {
        Side::Central => s.d1,
        Side::Back => s.back,
        Side::Fwd => s.fwd,
    }
}

fn pick(s: &Stencil, b: f64, diff: f64) -> Side {
    if b.abs() * s.h <= 2.0 * diff {
        Side::Central
    } else if b > 0.0 {
        Side::Fwd
    } else {
        Side::Back
    }
}

impl Operator<'_> {
    fn central(&self) -> Sides {
        let n = self.nu * self.nv;
        Sides { u: vec![Side::Central; n], v: vec![Side::Central; n] }
    }

    /// Upwinds where the cell Peclet number of the advection `(bu, bv)` exceeds two.
    fn sides(&self, bu: &[f64], bv: &[f64]) -> Sides {
        let (nu, nv) = (self.nu, self.nv);
        let mut out = self.central();
        for j in 0..nv {
            for i in 0..nu {
                let k = j * nu + i;
                out.u[k] = pick(&self.su[i], bu[k], 0.5);
                out.v[k] = pick(&self.sv[j], bv[k], 0.5 * self.eq.a_vv);
            }
        }
        out
    }

    fn grad(&self, f: &[f64], sides: &Sides) -> (Vec<f64>, Vec<f64>) {
        let (nu, nv) = (self.nu, self.nv);
        let mut gu = vec![0.0; nu * nv];
        let mut gv = vec![0.0; nu * nv];
        for j in 0..nv {
            for i in 0..nu {
                let k = j * nu + i;
                if i > 0 && i < nu - 1 {
                    let w = weights(&self.su[i], sides.u[k]);
                    gu[k] = w[0] * f[k - 1] + w[1] * f[k] + w[2] * f[k + 1];
                }
                if j > 0 && j < nv - 1 {
                    let w = weights(&self.sv[j], sides.v[k]);
                    gv[k] = w[0] * f[k - nu] + w[1] * f[k] + w[2] * f[k + nu];
                }
            }
        }
        (gu, gv)
    }

    /// `I/dt - L - b_u D_u - b_v D_v - r`.
    fn assemble(&self, dt: f64, bu: &[f64], bv: &[f64], react: Option<&[f64]>, sides: &Sides) -> BandMatrix {
        let (nu, nv) = (self.nu, self.nv);
        let mut m = BandMatrix::zeros(nu * nv, nu + 1, nu + 1);
        let dvv = 0.5 * self.eq.a_vv;
        for j in 0..nv {
            for i in 0..nu {
                let k = j * nu + i;
                m.add(k, k, 1.0 / dt);
                if let Some(r) = react {
                    m.add(k, k, -r[k]);
                }
                let su = &self.su[i];
                let sv = &self.sv[j];
                for (o, w) in [-1i64, 0, 1].iter().zip(su.d2) {
                    if w != 0.0 {
                        m.add(k, (k as i64 + o) as usize, -0.5 * w);
                    }
                }
                if dvv != 0.0 {
                    for (o, w) in [-1i64, 0, 1].iter().zip(sv.d2) {
                        if w != 0.0 {
                            m.add(k, (k as i64 + o * nu as i64) as usize, -dvv * w);
                        }
                    }
                }
                if i > 0 && i < nu - 1 && bu[k] != 0.0 {
                    for (o, x) in [-1i64, 0, 1].iter().zip(weights(su, sides.u[k])) {
                        m.add(k, (k as i64 + o) as usize, -bu[k] * x);
                    }
                }
                if j > 0 && j < nv - 1 && bv[k] != 0.0 {
                    for (o, x) in [-1i64, 0, 1].iter().zip(weights(sv, sides.v[k])) {
                        m.add(k, (k as i64 + o * nu as i64) as usize, -bv[k] * x);
                    }
                }
                if self.eq.a_uv != 0.0 && i > 0 && i < nu - 1 && j > 0 && j < nv - 1 {
                    for (a, wu) in [-1i64, 0, 1].iter().zip(su.d1) {
                        for (b, wv) in [-1i64, 0, 1].iter().zip(sv.d1) {
                            let x = wu * wv;
                            if x != 0.0 {
                                m.add(k, (k as i64 + a + b * nu as i64) as usize, -self.eq.a_uv * x);
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// Advection coefficients of the log iterate at gradient `(gu, gv)`.
    fn log_advection(&self, gu: &[f64], gv: &[f64], lin: Linearization) -> (Vec<f64>, Vec<f64>) {
        let e = self.eq;
        let cu = 1.0 - e.c_nl;
        let f = if lin == Linearization::Newton { 1.0 } else { 0.5 };
        let bu = gu.iter().zip(gv).map(|(a, b)| f * (cu * a + e.a_uv * b)).collect();
        let bv = gu.iter().zip(gv).map(|(a, b)| f * (e.a_vv * b + e.a_uv * a)).collect();
        (bu, bv)
    }

    fn plain_advection(&self, gu: &[f64], f: &[f64], lin: Linearization) -> Vec<f64> {
        let k = if lin == Linearization::Newton { 1.0 } else { 0.5 };
        gu.iter().zip(f).map(|(g, x)| -k * self.eq.c_nl * g / x).collect()
    }

    /// Stencil sides for a whole step, taken from the previous time level so
    /// the fixed-point map keeps one discretisation across its iterates.
    fn step_sides(&self, prev: &[f64], log: bool, lin: Linearization) -> Sides {
        let (gu, gv) = self.grad(prev, &self.central());
        if log {
            let (bu, bv) = self.log_advection(&gu, &gv, lin);
            self.sides(&bu, &bv)
        } else {
            let bu = self.plain_advection(&gu, prev, lin);
            self.sides(&bu, &vec![0.0; prev.len()])
        }
    }
}

/// Marches the payoff `spec` (undistorted) to `tau_final`.
pub fn fd_solve(spec: &PayoffSpec, eq: &FdEquation, tau_final: f64, cfg: &FdConfig) -> Result<FdSolveReport> {
    cfg.validate()?;
    let psi = spec.gamma_bar * spec.k_z;
    if psi > cfg.psi_cap {
        return Err(Error::PsiTooLarge { psi, cap: cfg.psi_cap });
    }
    if !(tau_final >= 0.0) {
        return Err(Error::InvalidParams(format!("tau_final = {tau_final}")));
    }
    let start = Instant::now();
    let (u, v) = cfg.axes();
    let (nu, nv) = (u.len(), v.len());
    let su = stencils(&u);
    let sv = stencils(&v);
    let op = Operator { su: &su, sv: &sv, nu, nv, eq: *eq };

    let steps = (tau_final / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let dt = if steps > 0 { tau_final / steps as f64 } else { cfg.dt };

    let mut f: Vec<f64> = Vec::with_capacity(nu * nv);
    for &y in &v {
        for &x in &u {
            f.push(if cfg.solve_in_log { spec.exponent(x, y) } else { spec.value(x, y) });
        }
    }
    let mut iterations = Vec::with_capacity(steps);
    let mut residuals = Vec::with_capacity(steps);
    for step in 0..steps {
        let prev = f.clone();
        let mut cur = f.clone();
        let mut history = Vec::new();
        let mut growing = 0;
        let sides = op.step_sides(&prev, cfg.solve_in_log, cfg.linearization);
        loop {
            let next = if cfg.solve_in_log {
                log_iterate(&op, &prev, &cur, dt, cfg.linearization, &sides)?
            } else {
                plain_iterate(&op, &prev, &cur, dt, cfg.linearization, &sides)?
            };
            let upd = if cfg.solve_in_log {
                next.iter().zip(&cur).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            } else {
                let top = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                next.iter().zip(&cur).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / top
            };
            if !upd.is_finite() {
                return Err(Error::FixedPointDiverged { step, iters: history.len() + 1 });
            }
            if let Some(&last) = history.last() {
                growing = if upd > last { growing + 1 } else { 0 };
            }
            history.push(upd);
            cur = next;
            if upd < cfg.fp_tol {
                break;
            }
            if growing >= 3 || history.len() >= cfg.max_fixed_point_iters {
                return Err(Error::FixedPointDiverged { step, iters: history.len() });
            }
        }
        iterations.push(history.len());
        residuals.push(history);
        f = cur;
    }
    let values = if cfg.solve_in_log { f.iter().map(|x| x.exp()).collect() } else { f };
    Ok(FdSolveReport {
        solution: GridFunction::new(u, v, values),
        tau: tau_final,
        iterations,
        residuals,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// One iterate for `psi = log Phi`:
/// `psi_t = L psi + 1/2 (1 - c) psi_u^2 + 1/2 a_vv psi_v^2 + a_uv psi_u psi_v`.
fn log_iterate(op: &Operator, prev: &[f64], cur: &[f64], dt: f64, lin: Linearization, sides: &Sides) -> Result<Vec<f64>> {
    let (gu, gv) = op.grad(cur, sides);
    let (bu, bv) = op.log_advection(&gu, &gv, lin);
    let e = op.eq;
    let mut rhs: Vec<f64> = prev.iter().map(|x| x / dt).collect();
    if lin == Linearization::Newton {
        for (k, r) in rhs.iter_mut().enumerate() {
            let (a, b) = (gu[k], gv[k]);
            *r -= 0.5 * (1.0 - e.c_nl) * a * a + 0.5 * e.a_vv * b * b + e.a_uv * a * b;
        }
    }
    let mut m = op.assemble(dt, &bu, &bv, None, sides);
    m.factor()?;
    m.solve(&mut rhs);
    Ok(rhs)
}

/// One iterate for `Phi` itself.
fn plain_iterate(op: &Operator, prev: &[f64], cur: &[f64], dt: f64, lin: Linearization, sides: &Sides) -> Result<Vec<f64>> {
    let (gu, _) = op.grad(cur, sides);
    let bu = op.plain_advection(&gu, cur, lin);
    let react: Option<Vec<f64>> = (lin == Linearization::Newton).then(|| {
        let c = op.eq.c_nl;
        gu.iter().zip(cur).map(|(g, f)| 0.5 * c * (g / f) * (g / f)).collect()
    });
    let mut rhs: Vec<f64> = prev.iter().map(|x| x / dt).collect();
    let mut m = op.assemble(dt, &bu, &vec![0.0; prev.len()], react.as_deref(), sides);
    m.factor()?;
    m.solve(&mut rhs);
    Ok(rhs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareWindow {
    pub u_max: f64,
    pub v: f64,
    /// Highest asymptotic order included ("0" is 0, "0+1" is 1).
    pub order: usize,
    /// Local `|Phi_1| / Phi_0` above which the expansion is flagged.
    pub breakdown_ratio: f64,
}

impl Default for CompareWindow {
    fn default() -> Self {
        CompareWindow { u_max: 20.0, v: 0.0, order: 1, breakdown_ratio: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub sup_rel: f64,
    pub l2_rel: f64,
    pub points: usize,
    /// Largest `|s Phi_1| / Phi_0` in the window.
    pub max_correction_ratio: f64,
    pub breakdown: bool,
    /// u-nodes where the correction ratio exceeds the threshold.
    pub breakdown_u: Vec<f64>,
}

/// Sup-norm and L2 relative differences between the FD field and the
/// assembled asymptotic solution on the FD u-nodes of the window.
pub fn fd_vs_asymptotic(report: &FdSolveReport, sol: &SolutionOrder, win: &CompareWindow) -> Result<Discrepancy> {
    let fd = &report.solution;
    let (lo, hi) = (sol.orders[0].u[0], sol.orders[0].u[sol.orders[0].nu() - 1]);
    let mut sup = 0.0f64;
    let mut top = 0.0f64;
    let mut se = 0.0;
    let mut sf = 0.0;
    let mut ratio = 0.0f64;
    let mut bad = Vec::new();
    let mut points = 0;
    for &u in fd.u.iter().filter(|u| u.abs() <= win.u_max && **u >= lo && **u <= hi) {
        let f = fd.interpolate(u, win.v)?;
        let mut a = 0.0;
        for n in 0..=win.order.min(sol.orders.len() - 1) {
            a += sol.weight(n) * sol.orders[n].interpolate(u, win.v)?;
        }
        if sol.orders.len() > 1 {
            let p0 = sol.orders[0].interpolate(u, win.v)?;
            let r = (sol.weight(1) * sol.orders[1].interpolate(u, win.v)?).abs() / p0.abs();
            ratio = ratio.max(r);
            if r > win.breakdown_ratio {
                bad.push(u);
            }
        }
        sup = sup.max((a - f).abs());
        top = top.max(f.abs());
        se += (a - f) * (a - f);
        sf += f * f;
        points += 1;
    }
    if points == 0 {
        return Err(Error::InvalidParams("comparison window holds no grid nodes".into()));
    }
    Ok(Discrepancy {
        sup_rel: sup / top,
        l2_rel: (se / sf).sqrt(),
        points,
        max_correction_ratio: ratio,
        breakdown: !bad.is_empty(),
        breakdown_u: bad,
    })
}

/// Exact solution of the linear problem (`c = 0`, no mixed term): the `u`
/// heat average of the payoff from `kernel`, then a Gauss-Legendre average
/// over `v` against the `a_vv tau` heat kernel.
pub fn linear_heat_field(spec: &PayoffSpec, a_vv: f64, u: &[f64], v: &[f64], tau: f64, kernel: &dyn ZeroOrderKernel) -> Result<GridFunction> {
    if tau <= 0.0 {
        return Ok(GridFunction::from_fn(u.to_vec(), v.to_vec(), |x, y| spec.value(x, y)));
    }
    let s2 = a_vv * tau;
    let sigma = s2.sqrt();
    let lo = v[0] - 9.0 * sigma;
    let hi = v[v.len() - 1] + 9.0 * sigma;
    let panels = ((hi - lo) / 0.25).ceil() as usize;
    let width = (hi - lo) / panels as f64;
    let mut nodes = Vec::new();
    for k in 0..panels {
        let a = lo + k as f64 * width;
        let (x, w) = gauss_legendre(8, a, a + width);
        nodes.extend(x.into_iter().zip(w));
    }
    let slices: Vec<Vec<f64>> = nodes.par_iter().map(|&(y, _)| kernel.values(spec, y, u, tau)).collect::<Result<_>>()?;
    let mut out = GridFunction::zeros(u.to_vec(), v.to_vec());
    for (j, &y) in v.iter().enumerate() {
        let row = out.row_mut(j);
        for ((yn, w), s) in nodes.iter().zip(&slices) {
            let kw = w * heat_kernel(y - yn, s2);
            if kw == 0.0 {
                continue;
            }
            for (r, x) in row.iter_mut().zip(s) {
                *r += kw * x;
            }
        }
    }
    Ok(out)
}

/// Same comparison between two FD fields; used for refinement studies.
pub fn fd_vs_fd(a: &FdSolveReport, b: &FdSolveReport, u_max: f64, v: f64) -> Result<f64> {
    let mut sup = 0.0f64;
    let mut top = 0.0f64;
    for &u in a.solution.u.iter().filter(|u| u.abs() <= u_max) {
        let x = a.solution.interpolate(u, v)?;
        let y = b.solution.interpolate(u, v)?;
        sup = sup.max((x - y).abs());
        top = top.max(y.abs());
    }
    Ok(sup / top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{geometry_from_params, MarketParams};

    fn test1() -> (PayoffSpec, CorrelationGeometry) {
        let p = MarketParams::test1();
        let g = geometry_from_params(&p).unwrap();
        (PayoffSpec::raw(&p, &g, ExpansionKind::MuExpansion).unwrap(), g)
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let n = 9;
        let mut m = BandMatrix::zeros(n, 2, 3);
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 4).min(n) {
                m.add(i, j, if i == j { 6.0 } else { 0.3 * (i as f64 - 0.5 * j as f64).sin() });
            }
        }
        let x: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.25).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m.get(i, j) * x[j]).sum()).collect();
        m.factor().unwrap();
        m.solve(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_singular() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.add(0, 0, 1.0);
        m.add(2, 2, 1.0);
        assert!(matches!(m.factor(), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn nonuniform_stencils_are_exact_for_quadratics() {
        let x = stretched_axis(-4.0, 5.0, 11, 0.0, Some(1.5));
        let s = stencils(&x);
        let f = |t: f64| 1.0 - 2.0 * t + 0.7 * t * t;
        for i in 1..10 {
            let d1: f64 = (0..3).map(|k| s[i].d1[k] * f(x[i + k - 1])).sum();
            let d2: f64 = (0..3).map(|k| s[i].d2[k] * f(x[i + k - 1])).sum();
            assert!((d1 - (-2.0 + 1.4 * x[i])).abs() < 1e-10);
            assert!((d2 - 1.4).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_payoff_stays_constant() {
        let (spec, g) = test1();
        let spec = spec.without_z_leg().with_gamma_bar(0.0);
        for log in [true, false] {
            for kind in [ExpansionKind::MuExpansion, ExpansionKind::EpsilonExpansion] {
                let cfg = FdConfig { solve_in_log: log, ..FdConfig::default() };
                let r = fd_solve(&spec, &FdEquation::for_expansion(&g, kind, 1.0), 1.0, &cfg).unwrap();
                assert!(r.solution.values.iter().all(|x| (x - 1.0).abs() < 1e-12));
                assert!(r.iterations.iter().all(|&k| k >= 1));
            }
        }
    }

    #[test]
    fn log_and_plain_agree() {
        let (spec, g) = test1();
        let eq = FdEquation::for_expansion(&g, ExpansionKind::MuExpansion, 1.0);
        let a = fd_solve(&spec, &eq, 1.0, &FdConfig::default()).unwrap();
        let b = fd_solve(&spec, &eq, 1.0, &FdConfig { solve_in_log: false, ..FdConfig::default() }).unwrap();
        let d = fd_vs_fd(&a, &b, 20.0, 0.0).unwrap();
        assert!(d < 3e-3, "{d}");
    }

    #[test]
    fn frozen_and_newton_reach_the_same_fixed_point() {
        let (spec, g) = test1();
        let eq = FdEquation::for_expansion(&g, ExpansionKind::MuExpansion, 1.0);
        let a = fd_solve(&spec, &eq, 0.5, &FdConfig { linearization: Linearization::Frozen, ..FdConfig::default() }).unwrap();
        let b = fd_solve(&spec, &eq, 0.5, &FdConfig::default()).unwrap();
        assert!(fd_vs_fd(&a, &b, 50.0, 0.0).unwrap() < 1e-7);
        assert!(b.max_iterations() <= a.max_iterations());
    }

    #[test]
    fn psi_cap_is_enforced() {
        let (spec, g) = test1();
        let spec = spec.with_gamma_bar(1.0);
        let eq = FdEquation::for_expansion(&g, ExpansionKind::MuExpansion, 1.0);
        assert!(matches!(fd_solve(&spec, &eq, 1.0, &FdConfig::default()), Err(Error::PsiTooLarge { .. })));
    }

    #[test]
    fn exhausted_iterations_report_divergence() {
        let (spec, g) = test1();
        let eq = FdEquation::for_expansion(&g, ExpansionKind::MuExpansion, 1.0);
        let cfg = FdConfig { max_fixed_point_iters: 1, fp_tol: 1e-300, ..FdConfig::default() };
        assert!(matches!(fd_solve(&spec, &eq, 0.2, &cfg), Err(Error::FixedPointDiverged { step: 0, iters: 1 })));
    }

    #[test]
    fn zero_time_returns_payoff() {
        let (spec, g) = test1();
        let eq = FdEquation::for_expansion(&g, ExpansionKind::MuExpansion, 1.0);
        let r = fd_solve(&spec, &eq, 0.0, &FdConfig::default()).unwrap();
        let s = &r.solution;
        for j in [0, 17, 49] {
            for i in [0, 20, 33] {
                assert!((s.at(i, j) - spec.value(s.u[i], s.v[j])).abs() < 1e-14 * spec.value(s.u[i], s.v[j]).max(1.0));
            }
        }
        assert!(r.iterations.is_empty());
    }
}
