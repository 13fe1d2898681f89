//! Interchangeable solvers for the reduced value function `Phi`, selected by name.

use crate::asymptotic::{AsymptoticConfig, AsymptoticSolver};
use crate::error::{Error, Result};
use crate::fd::{fd_solve, FdConfig, FdEquation};
use crate::params::{geometry_from_params, select_expansion, to_solver_coords, CorrelationGeometry, ExpansionKind, MarketParams, DEFAULT_EXPANSION_THRESHOLD, DEGENERATE_EPS};
use crate::payoffs::PayoffSpec;
use crate::registry::Registry;
use std::time::Instant;

/// Market parameters with the expansion they are solved in.
#[derive(Debug, Clone)]
pub struct PhiProblem {
    pub params: MarketParams,
    pub geometry: CorrelationGeometry,
    pub kind: ExpansionKind,
    /// Drop the Z leg from the payoff.
    pub without_z: bool,
}

impl PhiProblem {
    /// `kind = None` picks the expansion from the geometry.
    pub fn new(params: MarketParams, kind: Option<ExpansionKind>) -> Result<Self> {
        let geometry = geometry_from_params(&params)?;
        let kind = kind.unwrap_or_else(|| select_expansion(&geometry, DEFAULT_EXPANSION_THRESHOLD));
        Ok(PhiProblem { params, geometry, kind, without_z: false })
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        let mut p = self.clone();
        p.params.alpha = alpha;
        p
    }

    pub fn spot(&self) -> (f64, f64) {
        ((self.params.y0 / self.params.k_y).ln(), (self.params.z0 / self.params.k_z).ln())
    }

    /// Solver coordinates of the market state `(h, s)` at `tau`.
    pub fn coords(&self, h: f64, s: f64, tau: f64) -> Result<(f64, f64)> {
        to_solver_coords(h, s, tau, &self.params, &self.geometry, self.kind)
    }

    fn payoff(&self, distorted: bool) -> Result<PayoffSpec> {
        let spec = if distorted {
            PayoffSpec::distorted(&self.params, &self.geometry, self.kind)?
        } else {
            PayoffSpec::raw(&self.params, &self.geometry, self.kind)?
        };
        Ok(if self.without_z { spec.without_z_leg() } else { spec })
    }
}

/// `Phi` at requested points, with its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiValues {
    pub phi: Vec<f64>,
    /// Weighted order contributions `s^n Phi_n`; a single entry for FD.
    pub terms: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub wall_time: f64,
}

impl PhiValues {
    /// Sum of the first `n + 1` terms.
    pub fn partial(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.phi.len()];
        for t in self.terms.iter().take(n + 1) {
            for (o, x) in out.iter_mut().zip(t) {
                *o += x;
            }
        }
        out
    }
}

pub trait PhiSolver: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    /// `Phi` at solver-coordinate points `(x, y)` and time-to-maturity `tau`.
    fn evaluate(&self, problem: &PhiProblem, tau: f64, points: &[(f64, f64)]) -> Result<PhiValues>;
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub order: usize,
    pub asymptotic: AsymptoticConfig,
    pub fd: FdConfig,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { order: 1, asymptotic: AsymptoticConfig::default(), fd: FdConfig::default() }
    }
}

pub fn solver_registry() -> Registry<dyn PhiSolver, SolverOptions> {
    let mut r: Registry<dyn PhiSolver, SolverOptions> = Registry::new("solver");
    r.register("asym", |o: &SolverOptions| Ok(Box::new(AsymptoticPhi { order: o.order, cfg: o.asymptotic.clone() }) as Box<dyn PhiSolver>));
    r.register("fd", |o: &SolverOptions| Ok(Box::new(FdPhi { cfg: o.fd.clone() }) as Box<dyn PhiSolver>));
    r
}

#[derive(Debug, Clone)]
pub struct AsymptoticPhi {
    pub order: usize,
    pub cfg: AsymptoticConfig,
}

impl PhiSolver for AsymptoticPhi {
    fn name(&self) -> &'static str {
        "asym"
    }

    fn evaluate(&self, problem: &PhiProblem, tau: f64, points: &[(f64, f64)]) -> Result<PhiValues> {
        let start = Instant::now();
        let mut vs: Vec<f64> = points.iter().map(|p| p.1).collect();
        vs.sort_by(|a, b| a.total_cmp(b));
        vs.dedup();
        let solver = AsymptoticSolver::new(problem.payoff(true)?, problem.geometry, problem.kind, self.cfg.clone())?;
        let sol = solver.solve(&vs, tau, self.order)?;
        let mut terms = vec![Vec::with_capacity(points.len()); sol.orders.len()];
        for &(x, y) in points {
            for (n, t) in terms.iter_mut().enumerate() {
                t.push(sol.weight(n) * sol.orders[n].interpolate_cubic_u(x, y)?);
            }
        }
        let phi = (0..points.len()).map(|i| terms.iter().map(|t| t[i]).sum()).collect();
        Ok(PhiValues { phi, terms, iterations: Vec::new(), wall_time: start.elapsed().as_secs_f64() })
    }
}

#[derive(Debug, Clone)]
pub struct FdPhi {
    pub cfg: FdConfig,
}

impl PhiSolver for FdPhi {
    fn name(&self) -> &'static str {
        "fd"
    }

    /// Marches in `(u, vbar)`; with `eps` near zero that map is singular and
    /// the `(w, v)` form with the mixed derivative is used.
    fn evaluate(&self, problem: &PhiProblem, tau: f64, points: &[(f64, f64)]) -> Result<PhiValues> {
        let mut pr = problem.clone();
        if problem.geometry.eps < DEGENERATE_EPS {
            pr.kind = ExpansionKind::EpsilonExpansion;
        } else {
            pr.kind = ExpansionKind::MuExpansion;
        }
        let eq = FdEquation::for_expansion(&pr.geometry, pr.kind, 1.0);
        let report = fd_solve(&pr.payoff(false)?, &eq, tau, &self.cfg)?;
        let mut phi = Vec::with_capacity(points.len());
        for &(x, y) in points {
            // points arrive in the problem's coordinates
            let (a, b) = if pr.kind == problem.kind { (x, y) } else { convert(problem, &pr, x, y, tau)? };
            phi.push(report.solution.interpolate(a, b)?);
        }
        Ok(PhiValues { terms: vec![phi.clone()], phi, iterations: report.iterations, wall_time: report.wall_time })
    }
}

fn convert(from: &PhiProblem, to: &PhiProblem, x: f64, y: f64, tau: f64) -> Result<(f64, f64)> {
    let (h, s) = crate::params::from_solver_coords(x, y, tau, &from.params, &from.geometry, from.kind)?;
    to.coords(h, s, tau)
}

/// `Phi` at market states `(h, s)`.
pub fn phi_at_states(solver: &dyn PhiSolver, problem: &PhiProblem, tau: f64, states: &[(f64, f64)]) -> Result<PhiValues> {
    let pts: Vec<(f64, f64)> = states.iter().map(|&(h, s)| problem.coords(h, s, tau)).collect::<Result<_>>()?;
    let out = solver.evaluate(problem, tau, &pts)?;
    if let Some(bad) = out.phi.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::EvaluationFailure(format!("{} returned Phi = {bad}", solver.name())));
    }
    Ok(out)
}
