//! Perturbative solution of the reduced value-function equation
//!
//! `Phi_t = 1/2 Phi_uu + s-terms - 1/2 rho^2 Phi_u^2 / Phi`,
//!
//! with `s = mu` (multiplying `1/2 theta2 Phi_vv`) or `s = eps` (multiplying
//! `theta3 Phi_uv` and, squared, `1/2 theta2 Phi_vv`). The zero order is the
//! power `J^k`, `k = 1/(1 - rho^2)`, of the heat average `J` of the distorted
//! payoff; every correction solves the same linearised problem with a source
//! `Theta_n` built from lower orders, so
//! `Phi_n(t) = Phi_0(t)^{rho^2} ∫_0^t G_{t-chi} * (Theta_n Phi_0^{-rho^2})(chi) dchi`.

use crate::error::{Error, Result};
use crate::gauss::{gauss_transform, GaussTransformPlan};
use crate::grid::{uniform_axis, GridFunction};
use crate::kernel::{kernel_registry, KernelOptions, ZeroOrderKernel};
use crate::params::{CorrelationGeometry, ExpansionKind};
use crate::payoffs::{Derivs, PayoffSpec};
use crate::special::{erf, gauss_legendre};
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

pub const MAX_ORDER: usize = 3;

#[derive(Debug, Clone)]
pub struct AsymptoticConfig {
    /// Kernel for fields at the requested time.
    pub kernel: String,
    /// Kernel for the many intermediate-time slices inside the Duhamel integrals.
    pub bulk_kernel: String,
    pub kernel_options: KernelOptions,
    /// Gauss-Legendre nodes for every Duhamel time integral.
    pub time_nodes: usize,
    /// Keep the nonlinear part of the first correction (the `J_v^2/J` or `J_u J_v/J` integral).
    pub include_i2: bool,
    pub u_range: (f64, f64),
    pub nu: usize,
    /// Step of the 5-point `v` stencil used for derivatives of corrections.
    pub v_step: f64,
    /// Use the Hermite-expansion transform for the spatial convolutions.
    pub fast: bool,
    pub max_order: usize,
    /// Precision used by the slow-convergence warning.
    pub tolerance: f64,
}

impl Default for AsymptoticConfig {
    fn default() -> Self {
        AsymptoticConfig {
            kernel: "auto".into(),
            bulk_kernel: "gauss".into(),
            kernel_options: KernelOptions::default(),
            time_nodes: 16,
            include_i2: true,
            u_range: (-50.0, 50.0),
            nu: 401,
            v_step: 0.05,
            fast: true,
            max_order: MAX_ORDER,
            tolerance: 0.1,
        }
    }
}

/// `Phi_0, Phi_1, ...` on a shared grid.
#[derive(Debug, Clone)]
pub struct SolutionOrder {
    pub expansion: ExpansionKind,
    pub orders: Vec<GridFunction>,
    pub tau: f64,
    pub rho_sq_used: f64,
    pub small_param_value: f64,
    /// Part of `Phi_1` coming from the nonlinear integral, when computed.
    pub i2: Option<GridFunction>,
}

impl SolutionOrder {
    /// Weight of order `n` at assembly: `mu` is set to one, `eps` keeps its value.
    pub fn weight(&self, n: usize) -> f64 {
        match self.expansion {
            ExpansionKind::MuExpansion => 1.0,
            ExpansionKind::EpsilonExpansion => self.small_param_value.powi(n as i32),
        }
    }

    pub fn assembled(&self) -> GridFunction {
        let mut out = self.orders[0].clone();
        for (n, g) in self.orders.iter().enumerate().skip(1) {
            let w = self.weight(n);
            for (a, b) in out.values.iter_mut().zip(&g.values) {
                *a += w * b;
            }
        }
        out
    }
}

/// `Phi = Σ_k s^k Phi_k` at one point, bilinear between nodes.
pub fn assemble(sol: &SolutionOrder, u: f64, v: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (n, g) in sol.orders.iter().enumerate() {
        acc += sol.weight(n) * g.interpolate(u, v)?;
    }
    Ok(acc)
}

/// Rough number of orders needed for `precision`: `s^m = precision` for the
/// eps-expansion, `s^{m+1} = precision` for the mu-expansion.
pub fn terms_needed(kind: ExpansionKind, small: f64, precision: f64) -> f64 {
    let m = precision.ln() / small.ln();
    match kind {
        ExpansionKind::MuExpansion => m - 1.0,
        ExpansionKind::EpsilonExpansion => m,
    }
}

/// `[s^n] D(s)^2 / P(s)` with the order-`n` terms of `P` and `D` left out.
/// `p[i]`, `d[i]` are `Phi_i` and `Phi_{i,u}` at one point, `i < n`.
pub fn xi_series(n: usize, p: &[f64], d: &[f64]) -> f64 {
    let at = |v: &[f64], i: usize| if i < n && i < v.len() { v[i] } else { 0.0 };
    let mut q = vec![0.0; n + 1];
    for m in 0..=n {
        let mut num = 0.0;
        for i in 0..=m {
            num += at(d, i) * at(d, m - i);
        }
        for i in 1..=m {
            num -= at(p, i) * q[m - i];
        }
        q[m] = num / p[0];
    }
    q[n]
}

/// `Xi_2 = Phi_0 ((Phi_1 / Phi_0)_u)^2`.
pub fn xi2(p0: f64, p0u: f64, p1: f64, p1u: f64) -> f64 {
    let r = p1u / p0 - p1 * p0u / (p0 * p0);
    p0 * r * r
}

/// Third-order coefficient in closed form.
pub fn xi3(p0: f64, p0u: f64, p1: f64, p1u: f64, p2: f64, p2u: f64) -> f64 {
    (-p1 * p0u + p0 * p1u) * (p1 * p1 * p0u - p0 * p1 * p1u + 2.0 * p0 * (-p2 * p0u + p0 * p2u)) / p0.powi(4)
}

pub struct AsymptoticSolver {
    pub spec: PayoffSpec,
    pub geometry: CorrelationGeometry,
    pub kind: ExpansionKind,
    pub cfg: AsymptoticConfig,
    kernel: Box<dyn ZeroOrderKernel>,
    bulk: Box<dyn ZeroOrderKernel>,
    u: Vec<f64>,
    h: f64,
    rho_sq: f64,
    k: f64,
    j_cache: Mutex<HashMap<(bool, u64, u64), Arc<Vec<Derivs>>>>,
    phi_cache: Mutex<HashMap<(usize, bool, u64, u64), Arc<Vec<f64>>>>,
}

impl std::fmt::Debug for AsymptoticSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsymptoticSolver").field("kind", &self.kind).field("kernel", &self.kernel.name()).field("cfg", &self.cfg).finish()
    }
}

impl AsymptoticSolver {
    /// `spec` is the distorted payoff for `kind`.
    pub fn new(spec: PayoffSpec, geometry: CorrelationGeometry, kind: ExpansionKind, cfg: AsymptoticConfig) -> Result<Self> {
        let registry = kernel_registry();
        let kernel = registry.create(&cfg.kernel, &cfg.kernel_options)?;
        let bulk = registry.create(&cfg.bulk_kernel, &KernelOptions { gauss_fast: Some(true), ..cfg.kernel_options.clone() })?;
        if cfg.nu < 8 || !(cfg.u_range.1 > cfg.u_range.0) {
            return Err(Error::InvalidParams("asymptotic grid needs nu >= 8 and a non-empty u range".into()));
        }
        if cfg.time_nodes == 0 || !(cfg.v_step > 0.0) {
            return Err(Error::InvalidParams("time_nodes and v_step must be positive".into()));
        }
        let u = uniform_axis(cfg.u_range.0, cfg.u_range.1, cfg.nu);
        let h = u[1] - u[0];
        let rho_sq = geometry.rho_sq(kind);
        Ok(AsymptoticSolver {
            spec,
            geometry,
            kind,
            cfg,
            kernel,
            bulk,
            u,
            h,
            rho_sq,
            k: 1.0 / (1.0 - rho_sq),
            j_cache: Mutex::new(HashMap::new()),
            phi_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn u_axis(&self) -> &[f64] {
        &self.u
    }

    pub fn kernel_name(&self) -> &'static str {
        self.kernel.name()
    }

    pub fn rho_sq(&self) -> f64 {
        self.rho_sq
    }

    /// `J` slice; `bulk` selects the kernel for intermediate times.
    fn j(&self, v: f64, t: f64, bulk: bool) -> Result<Arc<Vec<Derivs>>> {
        let key = (bulk, v.to_bits(), t.to_bits());
        if let Some(x) = self.j_cache.lock().unwrap().get(&key) {
            return Ok(x.clone());
        }
        let k = if bulk { &self.bulk } else { &self.kernel };
        let d = Arc::new(k.slice(&self.spec, v, &self.u, t)?);
        self.j_cache.lock().unwrap().insert(key, d.clone());
        Ok(d)
    }

    /// `Phi_0 = J^k` and its derivatives.
    fn phi0_derivs(&self, v: f64, t: f64, bulk: bool) -> Result<Vec<Derivs>> {
        let k = self.k;
        Ok(self
            .j(v, t, bulk)?
            .iter()
            .map(|d| {
                let f = d.f.powf(k);
                let a = k * f / d.f;
                let b = k * (k - 1.0) * f / (d.f * d.f);
                Derivs { f, u: a * d.u, v: a * d.v, uu: a * d.uu + b * d.u * d.u, uv: a * d.uv + b * d.u * d.v, vv: a * d.vv + b * d.v * d.v }
            })
            .collect())
    }

    /// Heat semigroup `G_{s2} *` on the solver's u-grid, values held flat beyond the ends.
    fn heat(&self, f: &[f64], s2: f64) -> Result<Vec<f64>> {
        if s2 <= 0.0 {
            return Ok(f.to_vec());
        }
        if s2.sqrt() >= 1.5 * self.h {
            // Pad flat on the same lattice so that no target sees the truncated
            // rule; the analytic tails then start where the kernel is negligible.
            let m = (12.0 * s2.sqrt() / self.h).ceil() as usize;
            let n = self.u.len();
            let (a, b) = (self.u[0], self.u[n - 1]);
            let mut x = Vec::with_capacity(n + 2 * m);
            let mut y = Vec::with_capacity(n + 2 * m);
            for i in (1..=m).rev() {
                x.push(a - i as f64 * self.h);
                y.push(f[0]);
            }
            x.extend_from_slice(&self.u);
            y.extend_from_slice(f);
            for i in 1..=m {
                x.push(b + i as f64 * self.h);
                y.push(f[n - 1]);
            }
            let plan = GaussTransformPlan::trapezoid(x)?.with_tails(Some(f[0]), Some(f[n - 1])).with_fast(self.cfg.fast);
            return gauss_transform(&y, &self.u, s2, &plan);
        }
        Ok(hat_convolution(&self.u, f, s2))
    }

    /// `∫_0^t G_{t-chi} * F(chi) dchi` by Gauss-Legendre in time.
    fn duhamel<F>(&self, t: f64, forcing: F) -> Result<Vec<f64>>
    where
        F: Fn(f64) -> Result<Vec<f64>> + Sync,
    {
        let mut out = vec![0.0; self.u.len()];
        if t <= 0.0 {
            return Ok(out);
        }
        let (x, w) = gauss_legendre(self.cfg.time_nodes, 0.0, t);
        let parts: Vec<Vec<f64>> = x.par_iter().map(|&chi| self.heat(&forcing(chi)?, t - chi)).collect::<Result<_>>()?;
        for (p, wi) in parts.iter().zip(&w) {
            for (o, y) in out.iter_mut().zip(p) {
                *o += wi * y;
            }
        }
        Ok(out)
    }

    /// Zero order on `u_axis() x vs`.
    pub fn zero_order(&self, vs: &[f64], t: f64) -> Result<GridFunction> {
        let rows: Vec<Vec<f64>> = vs.par_iter().map(|&v| self.phi(0, v, t, false).map(|x| x.to_vec())).collect::<Result<_>>()?;
        let g = GridFunction::new(self.u.clone(), vs.to_vec(), rows.concat());
        if g.values.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::EvaluationFailure("zero-order solution is not positive and finite".into()));
        }
        Ok(g)
    }

    /// Closed-form first correction at one slice, returned with its nonlinear-integral part.
    fn first_order_slice(&self, v: f64, t: f64, bulk: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let jd = self.j(v, t, bulk)?;
        let k = self.k;
        let (coef, lin): (f64, Box<dyn Fn(&Derivs) -> f64>) = match self.kind {
            ExpansionKind::MuExpansion => (0.5 * self.geometry.theta2 * k, Box::new(|d: &Derivs| d.vv)),
            ExpansionKind::EpsilonExpansion => (self.geometry.theta3 * k, Box::new(|d: &Derivs| d.uv)),
        };
        let i2 = if self.cfg.include_i2 && k != 1.0 {
            let kind = self.kind;
            self.duhamel(t, |chi| {
                let d = self.j(v, chi, true)?;
                Ok(d.iter()
                    .map(|d| match kind {
                        ExpansionKind::MuExpansion => d.v * d.v / d.f,
                        ExpansionKind::EpsilonExpansion => d.u * d.v / d.f,
                    })
                    .collect())
            })?
        } else {
            vec![0.0; self.u.len()]
        };
        let mut total = Vec::with_capacity(self.u.len());
        let mut nonlinear = Vec::with_capacity(self.u.len());
        for (d, i) in jd.iter().zip(&i2) {
            let pre = d.f.powf(k * self.rho_sq) * coef;
            let nl = pre * (k - 1.0) * i;
            total.push(pre * t * lin(d) + nl);
            nonlinear.push(nl);
        }
        Ok((total, nonlinear))
    }

    /// First correction on `u_axis() x vs`; the second grid is its nonlinear-integral part.
    pub fn first_order(&self, vs: &[f64], t: f64) -> Result<(GridFunction, GridFunction)> {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = vs.par_iter().map(|&v| self.first_order_slice(v, t, false)).collect::<Result<_>>()?;
        let (a, b): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Ok((GridFunction::new(self.u.clone(), vs.to_vec(), a.concat()), GridFunction::new(self.u.clone(), vs.to_vec(), b.concat())))
    }

    /// `Phi_m` on the u-grid at `(v, t)`; order one uses the closed form.
    fn phi(&self, m: usize, v: f64, t: f64, bulk: bool) -> Result<Arc<Vec<f64>>> {
        let key = (m, bulk, v.to_bits(), t.to_bits());
        if let Some(x) = self.phi_cache.lock().unwrap().get(&key) {
            return Ok(x.clone());
        }
        let val = match m {
            0 => self.j(v, t, bulk)?.iter().map(|d| d.f.powf(self.k)).collect(),
            1 => self.first_order_slice(v, t, bulk)?.0,
            _ => self.correction_slice(m, v, t, bulk)?,
        };
        let val = Arc::new(val);
        self.phi_cache.lock().unwrap().insert(key, val.clone());
        Ok(val)
    }

    fn phi_vv(&self, m: usize, v: f64, t: f64) -> Result<Vec<f64>> {
        if m == 0 {
            return Ok(self.phi0_derivs(v, t, true)?.iter().map(|d| d.vv).collect());
        }
        let h = self.cfg.v_step;
        let s: Vec<Arc<Vec<f64>>> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|o| self.phi(m, v + o * h, t, true)).collect::<Result<_>>()?;
        Ok((0..self.u.len()).map(|i| (-s[4][i] + 16.0 * s[3][i] - 30.0 * s[2][i] + 16.0 * s[1][i] - s[0][i]) / (12.0 * h * h)).collect())
    }

    fn phi_uv(&self, m: usize, v: f64, t: f64) -> Result<Vec<f64>> {
        if m == 0 {
            return Ok(self.phi0_derivs(v, t, true)?.iter().map(|d| d.uv).collect());
        }
        let h = self.cfg.v_step;
        let s: Vec<Arc<Vec<f64>>> = [-2.0, -1.0, 1.0, 2.0].iter().map(|o| self.phi(m, v + o * h, t, true)).collect::<Result<_>>()?;
        let pv: Vec<f64> = (0..self.u.len()).map(|i| (-s[3][i] + 8.0 * s[2][i] - 8.0 * s[1][i] + s[0][i]) / (12.0 * h)).collect();
        Ok(diff_u(&pv, self.h))
    }

    /// Source term of order `n` at `(v, chi)`.
    pub fn theta_n(&self, n: usize, v: f64, chi: f64) -> Result<Vec<f64>> {
        if n == 0 || n > self.cfg.max_order {
            return Err(Error::UnsupportedOrder(n, self.cfg.max_order));
        }
        let g = &self.geometry;
        let mut out = match self.kind {
            ExpansionKind::MuExpansion => self.phi_vv(n - 1, v, chi)?.into_iter().map(|x| 0.5 * g.theta2 * x).collect::<Vec<_>>(),
            ExpansionKind::EpsilonExpansion => {
                let mut a: Vec<f64> = self.phi_uv(n - 1, v, chi)?.into_iter().map(|x| g.theta3 * x).collect();
                if n >= 2 {
                    for (o, x) in a.iter_mut().zip(self.phi_vv(n - 2, v, chi)?) {
                        *o += 0.5 * g.theta2 * x;
                    }
                }
                a
            }
        };
        if n >= 2 {
            let d0 = self.phi0_derivs(v, chi, true)?;
            let mut p: Vec<Arc<Vec<f64>>> = vec![Arc::new(d0.iter().map(|d| d.f).collect())];
            let mut du: Vec<Vec<f64>> = vec![d0.iter().map(|d| d.u).collect()];
            for m in 1..n {
                let f = self.phi(m, v, chi, true)?;
                du.push(diff_u(&f, self.h));
                p.push(f);
            }
            let mut pi = vec![0.0; n];
            let mut di = vec![0.0; n];
            for (i, o) in out.iter_mut().enumerate() {
                for m in 0..n {
                    pi[m] = p[m][i];
                    di[m] = du[m][i];
                }
                *o -= 0.5 * self.rho_sq * xi_series(n, &pi, &di);
            }
        }
        Ok(out)
    }

    fn correction_slice(&self, n: usize, v: f64, t: f64, bulk: bool) -> Result<Vec<f64>> {
        let r = self.rho_sq;
        let forcing = self.duhamel(t, |chi| {
            let th = self.theta_n(n, v, chi)?;
            let p0 = self.phi(0, v, chi, true)?;
            Ok(th.iter().zip(p0.iter()).map(|(a, b)| a * b.powf(-r)).collect())
        })?;
        let p0 = self.phi(0, v, t, bulk)?;
        Ok(forcing.iter().zip(p0.iter()).map(|(a, b)| a * b.powf(r)).collect())
    }

    /// Order-`n` correction through the generic quadrature path (also for `n = 1`).
    pub fn nth_order(&self, n: usize, vs: &[f64], t: f64) -> Result<GridFunction> {
        if n == 0 || n > self.cfg.max_order {
            return Err(Error::UnsupportedOrder(n, self.cfg.max_order));
        }
        let rows: Vec<Vec<f64>> = vs.par_iter().map(|&v| self.correction_slice(n, v, t, false)).collect::<Result<_>>()?;
        Ok(GridFunction::new(self.u.clone(), vs.to_vec(), rows.concat()))
    }

    /// Orders `0..=order` on `u_axis() x vs`.
    pub fn solve(&self, vs: &[f64], t: f64, order: usize) -> Result<SolutionOrder> {
        if order > self.cfg.max_order {
            return Err(Error::UnsupportedOrder(order, self.cfg.max_order));
        }
        let small = self.geometry.small_param(self.kind);
        let small_eff = small.abs();
        if small_eff.powi(order as i32 + 1) > self.cfg.tolerance {
            log::warn!(
                "{} = {small:.3}: order {order} leaves an estimated error {:.2e} above {:.2e}; about {:.1} orders needed",
                self.kind.name(),
                small_eff.powi(order as i32 + 1),
                self.cfg.tolerance,
                terms_needed(self.kind, small_eff, self.cfg.tolerance)
            );
        }
        let mut orders = vec![self.zero_order(vs, t)?];
        let mut i2 = None;
        if order >= 1 {
            let (f, nl) = self.first_order(vs, t)?;
            orders.push(f);
            if self.cfg.include_i2 {
                i2 = Some(nl);
            }
        }
        for n in 2..=order {
            orders.push(self.nth_order(n, vs, t)?);
        }
        Ok(SolutionOrder { expansion: self.kind, orders, tau: t, rho_sq_used: self.rho_sq, small_param_value: small, i2 })
    }

    pub fn clear_cache(&self) {
        self.j_cache.lock().unwrap().clear();
        self.phi_cache.lock().unwrap().clear();
    }
}

/// Fourth-order central first difference on a uniform grid, second order at the ends.
pub fn diff_u(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = if i >= 2 && i + 2 < n {
            (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h)
        } else if i == 0 {
            (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
        } else if i + 1 == n {
            (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h)
        } else {
            (f[i + 1] - f[i - 1]) / (2.0 * h)
        };
    }
    out
}

/// Exact heat flow of the piecewise-linear interpolant (flat outside the grid);
/// used when the kernel is narrower than the grid can resolve.
fn hat_convolution(x: &[f64], f: &[f64], s2: f64) -> Vec<f64> {
    let s = s2.sqrt();
    let n = x.len();
    let cdf = |z: f64| 0.5 * (1.0 + erf(z / (s * std::f64::consts::SQRT_2)));
    let dens = |z: f64| (-z * z / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt();
    x.iter()
        .map(|&t| {
            let lo = x.partition_point(|&y| y < t - 38.6 * s).saturating_sub(1);
            let hi = (x.partition_point(|&y| y <= t + 38.6 * s) + 1).min(n);
            let mut acc = f[0] * cdf(x[0] - t) + f[n - 1] * (1.0 - cdf(x[n - 1] - t));
            for i in lo..hi.saturating_sub(1) {
                let (a, b) = (x[i], x[i + 1]);
                let w = b - a;
                let p = cdf(b - t) - cdf(a - t);
                let m1 = s2 * (dens(a - t) - dens(b - t));
                acc += f[i] * p + (f[i + 1] - f[i]) / w * (m1 + (t - a) * p);
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{geometry_from_params, MarketParams};

    fn solver(kind: ExpansionKind, gamma: f64, cfg: AsymptoticConfig) -> AsymptoticSolver {
        let mut p = MarketParams::test1();
        p.gamma = gamma;
        let g = geometry_from_params(&p).unwrap();
        let spec = PayoffSpec::distorted(&p, &g, kind).unwrap();
        AsymptoticSolver::new(spec, g, kind, cfg).unwrap()
    }

    fn small_cfg() -> AsymptoticConfig {
        AsymptoticConfig { u_range: (-40.0, 40.0), nu: 401, time_nodes: 8, kernel: "gauss".into(), ..Default::default() }
    }

    #[test]
    fn xi_series_matches_closed_forms() {
        let (p0, p0u, p1, p1u, p2, p2u) = (1.3, -0.4, 0.21, 0.17, -0.05, 0.033);
        assert!((xi_series(2, &[p0, p1], &[p0u, p1u]) - xi2(p0, p0u, p1, p1u)).abs() < 1e-14);
        assert!((xi_series(3, &[p0, p1, p2], &[p0u, p1u, p2u]) - xi3(p0, p0u, p1, p1u, p2, p2u)).abs() < 1e-14);
        assert_eq!(xi_series(1, &[p0], &[p0u]), 0.0);
    }

    #[test]
    fn xi_series_matches_brute_force_expansion() {
        // Coefficient of s^3 of D(s)^2/P(s) by finite differences in s.
        let (p, d) = ([1.1, 0.3, -0.2], [0.5, -0.25, 0.12]);
        let q = |s: f64| {
            let pp = p[0] + p[1] * s + p[2] * s * s;
            let dd = d[0] + d[1] * s + d[2] * s * s;
            dd * dd / pp
        };
        let h = 0.02;
        let c3 = (q(2.0 * h) - 2.0 * q(h) + 2.0 * q(-h) - q(-2.0 * h)) / (2.0 * h.powi(3)) / 6.0;
        assert!((xi_series(3, &p, &d) - c3).abs() < 2e-3 * c3.abs().max(1.0), "{} vs {c3}", xi_series(3, &p, &d));
    }

    #[test]
    fn hat_convolution_limits() {
        let x = uniform_axis(-5.0, 5.0, 101);
        let f: Vec<f64> = x.iter().map(|&y| 2.0 + 0.5 * y).collect();
        let out = hat_convolution(&x, &f, 1e-3);
        for i in 10..90 {
            assert!((out[i] - f[i]).abs() < 1e-12);
        }
        let c = hat_convolution(&x, &vec![3.0; 101], 0.04);
        assert!(c.iter().all(|v| (v - 3.0).abs() < 1e-13));
    }

    #[test]
    fn zero_order_limits() {
        let s = solver(ExpansionKind::MuExpansion, 0.03, small_cfg());
        let z = s.zero_order(&[0.4], 1e-8).unwrap();
        for (i, &u) in s.u_axis().iter().enumerate() {
            if (u - s.spec.breakpoints(0.4)[0].0).abs() > 1e-2 && (u - s.spec.breakpoints(0.4)[1].0).abs() > 1e-2 {
                let want = s.spec.value(u, 0.4).powf(s.k);
                assert!((z.at(i, 0) - want).abs() < 1e-7 * want, "{u}");
            }
        }
        let z = s.zero_order(&[0.4], 3.0).unwrap();
        let samples: Vec<f64> = (0..20001).map(|i| s.spec.value(-100.0 + 0.01 * i as f64, 0.4).powf(s.k)).collect();
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(0.0, f64::max);
        assert!(z.values.iter().all(|&x| x >= lo * (1.0 - 1e-12) && x <= hi * (1.0 + 1e-12)));
    }

    #[test]
    fn constant_payoff_has_no_corrections() {
        let mut s = solver(ExpansionKind::MuExpansion, 0.03, small_cfg());
        s.spec = s.spec.with_gamma_bar(0.0);
        let sol = s.solve(&[0.0, 1.0], 3.0, 2).unwrap();
        assert!(sol.orders[0].values.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(sol.orders[1].max_abs() < 1e-12);
        assert!(sol.orders[2].max_abs() < 1e-12);
    }

    #[test]
    fn constant_source_gives_linear_growth() {
        let s = solver(ExpansionKind::MuExpansion, 0.03, small_cfg());
        let out = s.duhamel(2.5, |_| Ok(vec![0.7; s.u_axis().len()])).unwrap();
        let worst = out.iter().fold(0.0f64, |m, v| m.max((v - 0.7 * 2.5).abs()));
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn corrections_vanish_at_zero_time() {
        let s = solver(ExpansionKind::EpsilonExpansion, 0.03, small_cfg());
        let (f, _) = s.first_order(&[0.2], 0.0).unwrap();
        assert!(f.max_abs() == 0.0);
        assert!(s.nth_order(2, &[0.2], 0.0).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn generic_first_order_matches_closed_form() {
        let s = solver(ExpansionKind::MuExpansion, 0.03, AsymptoticConfig { time_nodes: 16, ..small_cfg() });
        let (closed, _) = s.first_order(&[1.22], 10.0).unwrap();
        let generic = s.nth_order(1, &[1.22], 10.0).unwrap();
        let scale = closed.max_abs();
        let mut worst: f64 = 0.0;
        for (i, &u) in s.u_axis().iter().enumerate() {
            if u.abs() <= 10.0 {
                worst = worst.max((closed.at(i, 0) - generic.at(i, 0)).abs() / scale);
            }
        }
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn first_order_is_a_small_correction_near_the_money() {
        let s = solver(ExpansionKind::MuExpansion, 0.03, small_cfg());
        let sol = s.solve(&[1.22], 10.0, 1).unwrap();
        let ratio = sol.orders[1].max_abs() / sol.orders[0].max_abs();
        assert!(ratio < 0.2, "{ratio}");
        // The correction peaks in the transition region, not in the flat tails.
        let (i, _) = sol.orders[1].values.iter().enumerate().fold((0, 0.0), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        assert!(s.u_axis()[i].abs() < 15.0);
    }

    #[test]
    fn third_order_runs_in_both_expansions() {
        for kind in [ExpansionKind::MuExpansion, ExpansionKind::EpsilonExpansion] {
            let cfg = AsymptoticConfig { time_nodes: 3, nu: 161, u_range: (-40.0, 40.0), kernel: "gauss".into(), ..Default::default() };
            let s = solver(kind, 0.03, cfg);
            let sol = s.solve(&[0.5], 3.0, 3).unwrap();
            assert_eq!(sol.orders.len(), 4);
            assert!(sol.orders.iter().all(|g| g.values.iter().all(|x| x.is_finite())));
            assert!(matches!(s.solve(&[0.5], 3.0, 4), Err(Error::UnsupportedOrder(4, 3))));
        }
    }

    #[test]
    fn truncation_counts() {
        assert!((terms_needed(ExpansionKind::EpsilonExpansion, 0.6, 0.1) - 4.5).abs() < 0.01);
        assert!((terms_needed(ExpansionKind::MuExpansion, 0.36, 0.1) - 1.25).abs() < 0.01);
        assert!((terms_needed(ExpansionKind::MuExpansion, 0.36, 0.01) - 3.5).abs() < 0.01);
    }
}
