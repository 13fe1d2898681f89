//! Zero-order kernels: the heat-kernel average `J` of the distorted payoff along
//! a fixed-`v` slice, with the derivatives the correction terms need.

use crate::error::{Error, Result};
use crate::gauss::{gauss_transform, panel_nodes, GaussTransformPlan};
use crate::payoffs::{kink_terms, Derivs, PayoffSpec, Region};
use crate::registry::Registry;
use crate::series::{JPlan, SeriesControl};

const PANEL_ORDER: usize = 8;
const UNDERFLOW_SIGMAS: f64 = 38.6;
/// Variable part of the exponent below which the left branch counts as flat.
const FLAT_LEVEL: f64 = 1e-17;

pub trait ZeroOrderKernel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    /// `J(u, v, tau)` at each `u`.
    fn values(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<f64>>;

    /// `J` with first and second `u`/`v` derivatives at each `u`.
    fn slice(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<Derivs>>;
}

#[derive(Debug, Clone, Default)]
pub struct KernelOptions {
    pub series: SeriesControl,
    pub gauss_step: Option<f64>,
    pub gauss_fast: Option<bool>,
}

pub fn kernel_registry() -> Registry<dyn ZeroOrderKernel, KernelOptions> {
    let mut r: Registry<dyn ZeroOrderKernel, KernelOptions> = Registry::new("zero-order kernel");
    r.register("series", |o: &KernelOptions| Ok(Box::new(SeriesKernel { ctrl: o.series.clone() }) as Box<dyn ZeroOrderKernel>));
    r.register("gauss", |o: &KernelOptions| Ok(Box::new(GaussKernel::from_options(o)) as Box<dyn ZeroOrderKernel>));
    r.register("auto", |o: &KernelOptions| {
        Ok(Box::new(AutoKernel { series: SeriesKernel { ctrl: o.series.clone() }, gauss: GaussKernel::from_options(o) }) as Box<dyn ZeroOrderKernel>)
    });
    r
}

fn payoff_at(spec: &PayoffSpec, v: f64, u: f64) -> Derivs {
    let rs = spec.regions(v);
    let r = rs.iter().find(|r| u < r.hi).unwrap_or(&rs[rs.len() - 1]);
    r.derivs(u)
}

/// Closed-form series through `JPlan`.
#[derive(Debug, Clone, Default)]
pub struct SeriesKernel {
    pub ctrl: SeriesControl,
}

impl ZeroOrderKernel for SeriesKernel {
    fn name(&self) -> &'static str {
        "series"
    }

    fn values(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<f64>> {
        if tau <= 0.0 {
            return Ok(us.iter().map(|&u| payoff_at(spec, v, u).f).collect());
        }
        let plan = JPlan::new(spec, v, &self.ctrl)?;
        Ok(us.iter().map(|&u| plan.value(u, tau)).collect())
    }

    fn slice(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<Derivs>> {
        if tau <= 0.0 {
            return Ok(us.iter().map(|&u| payoff_at(spec, v, u)).collect());
        }
        let plan = JPlan::new(spec, v, &self.ctrl)?;
        Ok(us.iter().map(|&u| plan.derivs(u, tau)).collect())
    }
}

/// Composite Gauss-Legendre quadrature on each payoff branch followed by a Gauss
/// transform; the flat far-left and right branches enter as analytic tails.
#[derive(Debug, Clone)]
pub struct GaussKernel {
    pub step: f64,
    pub fast: bool,
}

impl Default for GaussKernel {
    fn default() -> Self {
        GaussKernel { step: 0.02, fast: false }
    }
}

impl GaussKernel {
    fn from_options(o: &KernelOptions) -> Self {
        let d = GaussKernel::default();
        GaussKernel { step: o.gauss_step.unwrap_or(d.step), fast: o.gauss_fast.unwrap_or(d.fast) }
    }

    fn run(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64, derivs: bool) -> Result<Vec<Derivs>> {
        if us.is_empty() {
            return Ok(Vec::new());
        }
        if tau <= 0.0 {
            return Ok(us.iter().map(|&u| payoff_at(spec, v, u)).collect());
        }
        let sigma = tau.sqrt();
        let umin = us.iter().cloned().fold(f64::INFINITY, f64::min);
        let umax = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let wlo = umin - UNDERFLOW_SIGMAS * sigma;
        let whi = umax + UNDERFLOW_SIGMAS * sigma;
        let regions = spec.regions(v);
        let last = regions.len() - 1;

        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut owner = Vec::new();
        let mut support = (f64::INFINITY, f64::NEG_INFINITY);
        for (k, r) in regions.iter().enumerate() {
            if k == last && r.d == 0.0 && r.b == 0.0 {
                break;
            }
            let mut lo = r.lo;
            if !lo.is_finite() {
                lo = flat_cut(r);
            }
            let lo = lo.max(wlo);
            let hi = r.hi.min(whi);
            if !(hi > lo) {
                continue;
            }
            let s = r.d.abs() * (r.p * hi).exp() + r.b.abs() * (r.q * hi).exp();
            let rate = r.p.max(r.q);
            let h = self.step.min(sigma / 8.0).min(0.2 / (rate * s).max(1e-300));
            let (x, w) = panel_nodes(&[lo, hi], h, PANEL_ORDER);
            support = (support.0.min(lo), support.1.max(hi));
            owner.extend(std::iter::repeat(k).take(x.len()));
            nodes.extend(x);
            weights.extend(w);
        }
        if nodes.is_empty() {
            nodes.push(umin.clamp(wlo, whi));
            weights.push(0.0);
            owner.push(regions.iter().position(|r| umin < r.hi).unwrap_or(last));
            support = (nodes[0], nodes[0]);
        }
        // Outside the node range the payoff is flat: 1 on the far left (or
        // negligible), the right branch constant on the far right.
        let first = &regions[owner[0]];
        let left_value = if owner[0] == 0 { first.c0.exp() } else { first.value(support.0) };
        let tail_region = &regions[*owner.last().unwrap()];
        let right_value = if regions[last].lo <= support.1 { regions[last].c0.exp() } else { tail_region.value(support.1) };

        let fields: Vec<Derivs> = nodes.iter().zip(&owner).map(|(&x, &k)| regions[k].derivs(x)).collect();
        let plan = GaussTransformPlan::new(nodes, weights)?.with_fast(self.fast).with_support(support.0, support.1);
        let f: Vec<f64> = fields.iter().map(|d| d.f).collect();
        let jf = gauss_transform(&f, us, tau, &plan.clone().with_tails(Some(left_value), Some(right_value)))?;
        if !derivs {
            return Ok(jf.into_iter().map(|f| Derivs { f, ..Default::default() }).collect());
        }
        let zero = plan.with_tails(Some(0.0), Some(0.0));
        let take = |g: fn(&Derivs) -> f64| -> Result<Vec<f64>> {
            let vals: Vec<f64> = fields.iter().map(g).collect();
            gauss_transform(&vals, us, tau, &zero)
        };
        let ju = take(|d| d.u)?;
        let jv = take(|d| d.v)?;
        let juu = take(|d| d.uu)?;
        let juv = take(|d| d.uv)?;
        let jvv = take(|d| d.vv)?;
        Ok(us
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let k = kink_terms(&regions, u, tau);
                Derivs { f: jf[i], u: ju[i], v: jv[i], uu: juu[i] + k.uu, uv: juv[i] + k.uv, vv: jvv[i] + k.vv }
            })
            .collect())
    }
}

/// Point left of which the variable part of the left branch exponent is below `FLAT_LEVEL`.
fn flat_cut(r: &Region) -> f64 {
    let s = r.d.abs() * (r.p * r.hi).exp() + r.b.abs() * (r.q * r.hi).exp();
    let rate = match (r.d != 0.0, r.b != 0.0) {
        (true, true) => r.p.min(r.q),
        (true, false) => r.p,
        (false, true) => r.q,
        (false, false) => return r.hi,
    };
    if s <= FLAT_LEVEL || rate <= 0.0 {
        return r.hi;
    }
    r.hi + (FLAT_LEVEL / s).ln() / rate
}

impl ZeroOrderKernel for GaussKernel {
    fn name(&self) -> &'static str {
        "gauss"
    }

    fn values(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<f64>> {
        Ok(self.run(spec, v, us, tau, false)?.into_iter().map(|d| d.f).collect())
    }

    fn slice(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<Derivs>> {
        self.run(spec, v, us, tau, true)
    }
}

/// Series where it converges, Gauss transform otherwise.
#[derive(Debug, Clone, Default)]
pub struct AutoKernel {
    pub series: SeriesKernel,
    pub gauss: GaussKernel,
}

impl ZeroOrderKernel for AutoKernel {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn values(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<f64>> {
        match self.series.values(spec, v, us, tau) {
            Err(Error::SeriesDivergence { .. }) => self.gauss.values(spec, v, us, tau),
            other => other,
        }
    }

    fn slice(&self, spec: &PayoffSpec, v: f64, us: &[f64], tau: f64) -> Result<Vec<Derivs>> {
        match self.series.slice(spec, v, us, tau) {
            Err(Error::SeriesDivergence { .. }) => self.gauss.slice(spec, v, us, tau),
            other => other,
        }
    }
}
