//! The subcommands. Each returns a table plus notes for stderr; the caller
//! writes the table as CSV.

use crate::config::{RunConfig, SolverChoice, SweepAxis};
use proxyhedge::asymptotic::AsymptoticSolver;
use proxyhedge::fd::{fd_solve, fd_vs_asymptotic, fd_vs_fd, CompareWindow, FdEquation};
use proxyhedge::params::*;
use proxyhedge::payoffs::PayoffSpec;
use proxyhedge::pricing::*;
use proxyhedge::solver::{phi_at_states, solver_registry, PhiProblem, PhiSolver};
use proxyhedge::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::time::Instant;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 64,
            CliError::Solver(Error::FixedPointDiverged { .. }) => 3,
            CliError::Solver(
                Error::InvalidParams(_) | Error::InvalidTriple(_) | Error::DegenerateGeometry(_) | Error::Unknown { .. } | Error::PsiTooLarge { .. } | Error::UnsupportedOrder(..),
            ) => 64,
            CliError::Solver(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "config error: {s}"),
            CliError::Solver(e @ Error::FixedPointDiverged { .. }) => write!(f, "solver diverged: {e}; try a smaller fd.dt or linearization = newton"),
            CliError::Solver(e) => write!(f, "{e}"),
            CliError::Io(s) => write!(f, "{s}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Solver(e)
    }
}

type Res<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Lines written after the records, each starting with `#`.
    pub trailer: Vec<String>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    ThresholdFailed,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub status: Status,
    pub notes: Vec<String>,
}

/// Shortest round-trip form, scientific for very small or large magnitudes.
pub fn num(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-5 || x.abs() >= 1e15) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn partial_names(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("phi{}", (0..=k).map(|i| i.to_string()).collect::<String>())).collect()
}

fn pool(workers: usize) -> Res<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| CliError::Io(e.to_string()))
}

fn problem(cfg: &RunConfig) -> Res<PhiProblem> {
    let mut pr = PhiProblem::new(cfg.market.clone(), cfg.expansion)?;
    pr.without_z = !cfg.z_leg;
    Ok(pr)
}

struct Solvers {
    asym: Option<Box<dyn PhiSolver>>,
    fd: Option<Box<dyn PhiSolver>>,
}

fn solvers(cfg: &RunConfig) -> Res<Solvers> {
    let r = solver_registry();
    Ok(Solvers {
        asym: if cfg.solver.asym() { Some(r.create("asym", &cfg.options)?) } else { None },
        fd: if cfg.solver.fd() { Some(r.create("fd", &cfg.options)?) } else { None },
    })
}

/// Column names for one priced point under the chosen solvers.
fn price_columns(cfg: &RunConfig) -> Vec<String> {
    let mut c = Vec::new();
    if cfg.solver.asym() {
        c.extend(partial_names(cfg.options.order + 1));
        c.push("g".into());
    }
    if cfg.solver.fd() {
        c.push("phi_fd".into());
        c.push(if cfg.solver == SolverChoice::Fd { "g".into() } else { "g_fd".into() });
    }
    c.push("p_y".into());
    c
}

/// Prices `points` with every selected solver; one column block per solver.
fn price_block(cfg: &RunConfig, sv: &Solvers, pr: &PhiProblem, alpha: f64, tau: f64, points: &[(f64, f64)], notes: &mut Vec<String>) -> Res<(Vec<Vec<String>>, Vec<PricePoint>)> {
    let mut cols: Vec<Vec<String>> = vec![Vec::new(); points.len()];
    let mut base = None;
    if let Some(a) = &sv.asym {
        let (rows, out) = price_at_points(a.as_ref(), pr, alpha, tau, points, cfg.p_y)?;
        notes.push(format!("asym {} expansion, {:.2} s", pr.kind.name(), out.wall_time));
        for (c, r) in cols.iter_mut().zip(&rows) {
            c.extend(r.partials.iter().map(|x| num(*x)));
            c.push(num(r.g));
        }
        base = Some(rows);
    }
    if let Some(f) = &sv.fd {
        let (rows, out) = price_at_points(f.as_ref(), pr, alpha, tau, points, cfg.p_y)?;
        let max = out.iterations.iter().max().copied().unwrap_or(0);
        notes.push(format!("fd {:.2} s, fixed-point iterations max {max}", out.wall_time));
        for (c, r) in cols.iter_mut().zip(&rows) {
            c.push(num(r.phi));
            c.push(num(r.g));
        }
        base.get_or_insert(rows);
    }
    let base = base.expect("at least one solver");
    for (c, r) in cols.iter_mut().zip(&base) {
        c.push(num(r.p_y));
    }
    Ok((cols, base))
}

fn market_state(pr: &PhiProblem, r: &PricePoint) -> (String, String) {
    (num(pr.params.k_y * r.h.exp()), num(pr.params.k_z * r.s.exp()))
}

pub fn price(cfg: &RunConfig) -> Res<Outcome> {
    let pr = problem(cfg)?;
    let sv = solvers(cfg)?;
    let tau = cfg.market.maturity;
    let points: Vec<(f64, f64)> = cfg.u_values().into_iter().map(|u| (u, cfg.v)).collect();
    let mut notes = Vec::new();
    let (cols, base) = price_block(cfg, &sv, &pr, cfg.market.alpha, tau, &points, &mut notes)?;
    let mut header: Vec<String> = ["scenario", "u", "v", "y", "z"].iter().map(|s| s.to_string()).collect();
    header.extend(price_columns(cfg));
    let mut table = Table { header, ..Default::default() };
    for (c, r) in cols.into_iter().zip(&base) {
        let (y, z) = market_state(&pr, r);
        let mut row = vec![cfg.name.clone(), num(r.x), num(r.y), y, z];
        row.extend(c);
        table.rows.push(row);
    }
    Ok(Outcome { table, status: Status::Ok, notes })
}

pub fn validate(cfg: &RunConfig) -> Res<Outcome> {
    let pr = problem(cfg)?;
    let p = &pr.params;
    let tau = p.maturity;
    let mut raw = PayoffSpec::raw(p, &pr.geometry, pr.kind)?;
    let mut distorted = PayoffSpec::distorted(p, &pr.geometry, pr.kind)?;
    if pr.without_z {
        raw = raw.without_z_leg();
        distorted = distorted.without_z_leg();
    }
    let eq = FdEquation::for_expansion(&pr.geometry, pr.kind, 1.0);
    let start = Instant::now();
    let fd = fd_solve(&raw, &eq, tau, &cfg.options.fd)?;
    let mut notes = vec![format!("fd {:.2} s, fixed-point iterations max {} median {}", start.elapsed().as_secs_f64(), fd.max_iterations(), fd.median_iterations())];
    let mut table = Table::new(&["scenario", "candidate", "sup_rel", "l2_rel", "points", "max_correction_ratio", "breakdown", "fd_max_iters", "fd_median_iters"]);
    let iters = [fd.max_iterations().to_string(), num(fd.median_iterations())];
    let judged;
    if cfg.solver == SolverChoice::Fd {
        let again = fd_solve(&raw, &eq, tau, &cfg.options.fd)?;
        let d = fd_vs_fd(&fd, &again, 20.0, cfg.v)?;
        table.rows.push([vec![cfg.name.clone(), "fd".into(), num(d), String::new(), String::new(), String::new(), "false".into()], iters.to_vec()].concat());
        judged = d;
    } else {
        let order = cfg.options.order.max(1);
        let s = AsymptoticSolver::new(distorted, pr.geometry, pr.kind, cfg.options.asymptotic.clone())?;
        let start = Instant::now();
        let sol = s.solve(&[cfg.v], tau, order)?;
        notes.push(format!("asym {} expansion up to order {order}, {:.2} s", pr.kind.name(), start.elapsed().as_secs_f64()));
        let mut last = 0.0;
        for n in 0..=order {
            let d = fd_vs_asymptotic(&fd, &sol, &CompareWindow { v: cfg.v, order: n, ..Default::default() })?;
            let label = (0..=n).map(|i| i.to_string()).collect::<Vec<_>>().join("+");
            if n >= 1 && d.breakdown {
                notes.push(format!("order {label}: first correction exceeds half of the zero order at {} u-nodes (largest ratio {:.2})", d.breakdown_u.len(), d.max_correction_ratio));
            }
            table.rows.push(
                [vec![cfg.name.clone(), label, num(d.sup_rel), num(d.l2_rel), d.points.to_string(), num(d.max_correction_ratio), d.breakdown.to_string()], iters.to_vec()].concat(),
            );
            last = d.sup_rel;
        }
        judged = if cfg.options.order == 0 { table.rows[0][2].parse().unwrap_or(f64::INFINITY) } else { last };
    }
    let status = if judged <= cfg.threshold { Status::Ok } else { Status::ThresholdFailed };
    notes.push(format!("sup discrepancy {} against threshold {}: {}", num(judged), num(cfg.threshold), if status == Status::Ok { "pass" } else { "FAIL" }));
    Ok(Outcome { table, status, notes })
}

pub fn hedge(cfg: &RunConfig) -> Res<Outcome> {
    let pr = problem(cfg)?;
    let r = solver_registry();
    let name = if cfg.solver == SolverChoice::Fd { "fd" } else { "asym" };
    let solver = r.create(name, &cfg.options)?;
    let tau = cfg.market.maturity;
    let us = cfg.u_values();
    let rows: Vec<Res<Vec<String>>> = pool(cfg.workers)?.install(|| {
        us.par_iter()
            .map(|&u| {
                let point = (u, cfg.v);
                let (h, s) = from_solver_coords(u, cfg.v, tau, &pr.params, &pr.geometry, pr.kind)?;
                let py = p_y_at(&pr.params, pr.params.k_y * h.exp(), tau, cfg.p_y);
                let hi = match cfg.capital {
                    Some(c) if py > 0.0 => cfg.bracket.1.min(c / py),
                    _ => cfg.bracket.1,
                };
                if !(hi > cfg.bracket.0) {
                    return Err(CliError::Config(format!("capital limit leaves an empty alpha bracket at u = {u}")));
                }
                let o = optimal_hedge_at(solver.as_ref(), &pr, tau, point, (cfg.bracket.0, hi), cfg.p_y)?;
                Ok(vec![
                    cfg.name.clone(),
                    num(u),
                    num(cfg.v),
                    num(pr.params.k_y * h.exp()),
                    num(pr.params.k_z * s.exp()),
                    num(o.alpha),
                    num(o.g),
                    o.edge.to_string(),
                    o.evaluations.to_string(),
                    num(py),
                ])
            })
            .collect()
    });
    let mut table = Table::new(&["scenario", "u", "v", "y", "z", "alpha_star", "g_star", "edge", "evaluations", "p_y"]);
    for r in rows {
        table.rows.push(r?);
    }
    let edges = table.rows.iter().filter(|r| r[7] == "true").count();
    Ok(Outcome { table, status: Status::Ok, notes: vec![format!("{name} solver, {edges} of {} points at the edge of the bracket", us.len())] })
}

fn apply_axis(cfg: &RunConfig, axis: SweepAxis, x: f64) -> Res<RunConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Alpha => c.market.alpha = x,
        SweepAxis::Gamma => c.market.gamma = x,
        SweepAxis::Maturity => c.market.maturity = x,
        SweepAxis::RhoYz => c.market.rho_yz = x,
    }
    c.market.validate()?;
    Ok(c)
}

pub fn sweep(cfg: &RunConfig) -> Res<Outcome> {
    let spec = cfg.sweep.clone().ok_or_else(|| CliError::Config("sweep needs a [sweep] section with an axis".into()))?;
    if spec.values.len() > cfg.max_points {
        return Err(CliError::Config(format!("sweep has {} points, budget is {}", spec.values.len(), cfg.max_points)));
    }
    let rows: Vec<Res<(Vec<String>, f64, Vec<String>)>> = pool(cfg.workers)?.install(|| {
        spec.values
            .par_iter()
            .map(|&x| {
                let c = apply_axis(cfg, spec.axis, x)?;
                let pr = problem(&c)?;
                let (h, s) = pr.spot();
                let tau = c.market.maturity;
                let point = pr.coords(h, s, tau)?;
                let sv = solvers(&c)?;
                let mut notes = Vec::new();
                let (cols, base) = price_block(&c, &sv, &pr, c.market.alpha, tau, &[point], &mut notes)?;
                let mut row = vec![cfg.name.clone(), spec.axis.name().to_string(), num(x), pr.kind.name().to_string(), num(point.0), num(point.1)];
                row.extend(cols.into_iter().next().expect("one point"));
                Ok((row, base[0].g, notes))
            })
            .collect()
    });
    let mut header: Vec<String> = ["scenario", "axis", "value", "expansion", "u", "v"].iter().map(|s| s.to_string()).collect();
    header.extend(price_columns(cfg));
    let mut table = Table { header, ..Default::default() };
    let mut gs = Vec::new();
    let mut notes = Vec::new();
    for r in rows {
        let (row, g, n) = r?;
        table.rows.push(row);
        gs.push(g);
        notes.extend(n);
    }
    if spec.axis == SweepAxis::Alpha && gs.len() >= 3 {
        let scale = gs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lo = gs.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).fold(f64::INFINITY, f64::min);
        let hi = gs.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).fold(f64::NEG_INFINITY, f64::max);
        let convex = lo >= -1e-6 * scale;
        let concave = hi <= 1e-6 * scale;
        table.trailer.push(format!("# convexity min_second_difference={} max_second_difference={} scale={} convex={convex} concave={concave}", num(lo), num(hi), num(scale)));
    }
    Ok(Outcome { table, status: Status::Ok, notes })
}

struct Check {
    name: &'static str,
    cases: usize,
    worst: f64,
    limit: f64,
}

/// Seeded property checks and closed-form limits.
pub fn selftest(cfg: Option<&RunConfig>, seed: u64) -> Res<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = cfg.map(|c| c.market.clone()).unwrap_or_else(MarketParams::test1);
    let mut checks = Vec::new();

    let (mut geo, mut round, mut sign, mut positive) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let n = 64;
    let mut drawn = 0;
    while drawn < n {
        let rho_xz = rng.gen_range(0.05..0.95);
        let rho_yz: f64 = rng.gen_range(-0.95..0.95);
        let cos = rng.gen_range(-0.99..0.99);
        // only geometries with a positive beta are admissible
        let Ok(g) = CorrelationGeometry::from_angle(rho_xz, rho_yz, cos, base.eta_s()) else { continue };
        if g.beta <= 0.0 {
            continue;
        }
        drawn += 1;
        geo = geo.max((g.theta2 - 1.0 - g.theta1 * g.theta1).abs()).max((g.beta - rho_yz - g.eps * g.theta1).abs());
        geo = geo.max((g.eps * g.eps + rho_yz * rho_yz - 1.0).abs());
        let back = cosine_law_cos_phi(rho_xy_from_cos(cos, rho_xz, rho_yz), rho_xz, rho_yz)?;
        geo = geo.max((back - cos).abs());
        if let Ok(flipped) = CorrelationGeometry::from_angle(rho_xz, -rho_yz, cos, base.eta_s()) {
            sign = sign.max((flipped.mu_small - g.mu_small).abs());
        }
        let mut p = base.clone();
        p.rho_xz = rho_xz;
        p.rho_yz = rho_yz;
        p.cos_phi_xy = Some(cos);
        let tau = rng.gen_range(0.1..10.0);
        let (h, s) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let gp = geometry_from_params(&p)?;
        for kind in [ExpansionKind::MuExpansion, ExpansionKind::EpsilonExpansion] {
            let (x, y) = to_solver_coords(h, s, tau, &p, &gp, kind)?;
            let (a, b) = from_solver_coords(x, y, tau, &p, &gp, kind)?;
            round = round.max((a - h).abs()).max((b - s).abs());
            let spec = PayoffSpec::raw(&p, &gp, kind)?;
            let v = spec.value(x, y);
            if !(v > 0.0 && v.is_finite()) {
                positive = f64::INFINITY;
            }
        }
    }
    checks.push(Check { name: "geometry identities", cases: n, worst: geo, limit: 1e-12 });
    checks.push(Check { name: "mu independent of the sign of rho_yz", cases: n, worst: sign, limit: 1e-12 });
    checks.push(Check { name: "coordinate round trip", cases: 2 * n, worst: round, limit: 1e-9 });
    checks.push(Check { name: "payoff positive and finite", cases: 2 * n, worst: positive, limit: 0.0 });

    let r = solver_registry();
    let opts = cfg.map(|c| c.options.clone()).unwrap_or_default();
    let (asym, fd) = (r.create("asym", &opts)?, r.create("fd", &opts)?);
    let mut flat = PhiProblem::new(base.clone(), None)?.with_alpha(0.0);
    flat.without_z = true;
    let (h, s) = flat.spot();
    let mut drift = 0.0f64;
    for sv in [asym.as_ref(), fd.as_ref()] {
        for x in phi_at_states(sv, &flat, 3.0, &[(h, s), (h - 0.4, s + 0.2)])?.phi {
            drift = drift.max((x - 1.0).abs());
        }
    }
    checks.push(Check { name: "constant payoff propagates unchanged", cases: 4, worst: drift, limit: 1e-12 });

    let merton = base.eta_s() * (-base.r * 3.0f64).exp() / (base.gamma * base.sigma_x);
    let pi = optimal_pi(ln_phi_gradient(asym.as_ref(), &flat, h, s, 3.0, 0.01)?, 3.0, &flat.params)?;
    checks.push(Check { name: "Merton holding without a claim", cases: 1, worst: ((pi - merton) / merton).abs(), limit: 1e-9 });

    let mut short = base.clone();
    short.maturity = 1e-6;
    let pr = PhiProblem::new(short.clone(), None)?;
    let g = price_at_spot(asym.as_ref(), &pr, short.alpha, HedgePrice::CappedClaim)?.g_alpha;
    checks.push(Check { name: "expiry price is the capped Z payoff", cases: 1, worst: (g - short.z0.min(short.k_z)).abs(), limit: 1e-3 });

    let mut table = Table::new(&["check", "cases", "worst", "limit", "pass"]);
    let mut failed = 0;
    for c in &checks {
        let pass = c.worst <= c.limit;
        failed += usize::from(!pass);
        table.rows.push(vec![c.name.to_string(), c.cases.to_string(), num(c.worst), num(c.limit), pass.to_string()]);
    }
    let status = if failed == 0 { Status::Ok } else { Status::ThresholdFailed };
    Ok(Outcome { table, status, notes: vec![format!("seed {seed}: {} of {} checks passed", checks.len() - failed, checks.len())] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_round_trips() {
        for x in [0.0, 1.0, -30.0, 88.75967, 1.5e-9, 2.0e20, -0.123456789012345] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(-30.0), "-30");
        assert_eq!(num(1.5e-9), "1.5e-9");
    }

    #[test]
    fn partial_sum_names() {
        assert_eq!(partial_names(3), vec!["phi0", "phi01", "phi012"]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 64);
        assert_eq!(CliError::Solver(Error::FixedPointDiverged { step: 3, iters: 50 }).exit_code(), 3);
        assert_eq!(CliError::Solver(Error::InvalidTriple("det".into())).exit_code(), 64);
        assert_eq!(CliError::Solver(Error::OutOfDomain(1.0, 0.0)).exit_code(), 1);
    }
}
