//! Run configuration: `key = value` lines under `[section]` headers.
//!
//! `#` and `;` start comments. Unknown sections, unknown keys and repeated
//! keys are errors. Every `[market]` key except `cos_phi_xy` and the hedge
//! `gamma` must be given; everything else has a default.

use proxyhedge::asymptotic::AsymptoticConfig;
use proxyhedge::fd::{FdConfig, Linearization};
use proxyhedge::params::{ExpansionKind, MarketParams};
use proxyhedge::pricing::HedgePrice;
use proxyhedge::solver::SolverOptions;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Res<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Res<T> {
    Err(ConfigError(msg.into()))
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("scenario", &["name"]),
    ("market", &["mu_x", "mu_y", "mu_z", "sigma_x", "sigma_y", "sigma_z", "rho_xy", "rho_xz", "rho_yz", "cos_phi_xy", "r", "k_y", "k_z", "y0", "z0"]),
    ("hedge", &["gamma", "alpha", "alpha_lo", "alpha_hi", "capital", "p_y", "z_leg"]),
    ("run", &["maturity", "order", "solver", "expansion", "threshold", "v", "u_min", "u_max", "u_points", "workers", "seed"]),
    ("asymptotic", &["kernel", "bulk_kernel", "time_nodes", "nu", "u_min", "u_max", "v_step", "include_i2", "fast"]),
    ("fd", &["nu", "nv", "u_min", "u_max", "v_min", "v_max", "dt", "stretch_u", "stretch_v", "linearization", "fp_tol", "max_iters", "solve_in_log", "psi_cap"]),
    ("sweep", &["axis", "values", "from", "to", "points", "max_points"]),
];

const REQUIRED: &[(&str, &str)] = &[
    ("market", "mu_x"),
    ("market", "mu_y"),
    ("market", "mu_z"),
    ("market", "sigma_x"),
    ("market", "sigma_y"),
    ("market", "sigma_z"),
    ("market", "rho_xy"),
    ("market", "rho_xz"),
    ("market", "rho_yz"),
    ("market", "r"),
    ("market", "k_y"),
    ("market", "k_z"),
    ("market", "y0"),
    ("market", "z0"),
    ("hedge", "gamma"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Asym,
    Fd,
    Both,
}

impl SolverChoice {
    pub fn parse(s: &str) -> Res<Self> {
        match s {
            "asym" => Ok(SolverChoice::Asym),
            "fd" => Ok(SolverChoice::Fd),
            "both" => Ok(SolverChoice::Both),
            _ => err(format!("solver must be asym, fd or both, got '{s}'")),
        }
    }

    pub fn asym(self) -> bool {
        self != SolverChoice::Fd
    }

    pub fn fd(self) -> bool {
        self != SolverChoice::Asym
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Gamma,
    Maturity,
    RhoYz,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Res<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "gamma" => Ok(SweepAxis::Gamma),
            "T" => Ok(SweepAxis::Maturity),
            "rho_yz" => Ok(SweepAxis::RhoYz),
            _ => err(format!("sweep axis must be alpha, gamma, T or rho_yz, got '{s}'")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Maturity => "T",
            SweepAxis::RhoYz => "rho_yz",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    /// Market data with gamma, alpha and the maturity filled in.
    pub market: MarketParams,
    pub bracket: (f64, f64),
    pub capital: Option<f64>,
    pub p_y: HedgePrice,
    pub z_leg: bool,
    /// `None` lets the geometry choose.
    pub expansion: Option<ExpansionKind>,
    pub solver: SolverChoice,
    pub options: SolverOptions,
    pub threshold: f64,
    pub v: f64,
    pub u_grid: (f64, f64, usize),
    pub workers: usize,
    pub seed: u64,
    pub sweep: Option<SweepSpec>,
    pub max_points: usize,
}

impl RunConfig {
    pub fn u_values(&self) -> Vec<f64> {
        let (a, b, n) = self.u_grid;
        if n == 1 {
            return vec![a];
        }
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }
}

/// Raw `section.key -> value` map with source line numbers.
#[derive(Debug, Clone, Default)]
struct Entries(BTreeMap<(String, String), (String, usize)>);

impl Entries {
    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.0.remove(&(section.to_string(), key.to_string()))
    }

    fn f64(&mut self, section: &str, key: &str) -> Res<Option<f64>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((s, line)) => match s.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => err(format!("line {line}: {section}.{key} = '{s}' is not a finite number")),
            },
        }
    }

    fn usize(&mut self, section: &str, key: &str) -> Res<Option<usize>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((s, line)) => s.parse::<usize>().map(Some).map_err(|_| ConfigError(format!("line {line}: {section}.{key} = '{s}' is not a non-negative integer"))),
        }
    }

    fn bool(&mut self, section: &str, key: &str) -> Res<Option<bool>> {
        match self.take(section, key) {
            None => Ok(None),
            Some((s, line)) => match s.as_str() {
                "true" | "on" | "yes" => Ok(Some(true)),
                "false" | "off" | "no" => Ok(Some(false)),
                _ => err(format!("line {line}: {section}.{key} = '{s}' is not a boolean")),
            },
        }
    }

    fn string(&mut self, section: &str, key: &str) -> Option<String> {
        self.take(section, key).map(|(s, _)| s)
    }
}

fn lex(text: &str) -> Res<Entries> {
    let mut out = Entries::default();
    let mut section: Option<&str> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split(['#', ';']).next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError(format!("line {line}: unterminated section header")))?.trim();
            match SCHEMA.iter().find(|(s, _)| *s == name) {
                Some((s, _)) => section = Some(s),
                None => return err(format!("line {line}: unknown section [{name}]")),
            }
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError(format!("line {line}: expected key = value")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| ConfigError(format!("line {line}: '{key}' appears before any section header")))?;
        let keys = SCHEMA.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !keys.contains(&key) {
            return err(format!("line {line}: unknown key '{key}' in [{sec}]"));
        }
        if value.is_empty() {
            return err(format!("line {line}: {sec}.{key} has no value"));
        }
        if out.0.insert((sec.to_string(), key.to_string()), (value.to_string(), line)).is_some() {
            return err(format!("line {line}: {sec}.{key} given twice"));
        }
    }
    Ok(out)
}

fn list(s: &str) -> Res<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ConfigError(format!("'{x}' in sweep values is not a number"))))
        .collect()
}

pub fn parse(text: &str) -> Res<RunConfig> {
    let mut e = lex(text)?;
    for (sec, key) in REQUIRED {
        if !e.0.contains_key(&(sec.to_string(), key.to_string())) {
            return err(format!("missing {sec}.{key}"));
        }
    }
    let mut req = |sec: &str, key: &str| -> Res<f64> { e.f64(sec, key).map(|x| x.expect("checked above")) };
    let mut market = MarketParams {
        mu_x: req("market", "mu_x")?,
        mu_y: req("market", "mu_y")?,
        mu_z: req("market", "mu_z")?,
        sigma_x: req("market", "sigma_x")?,
        sigma_y: req("market", "sigma_y")?,
        sigma_z: req("market", "sigma_z")?,
        rho_xy: req("market", "rho_xy")?,
        rho_xz: req("market", "rho_xz")?,
        rho_yz: req("market", "rho_yz")?,
        r: req("market", "r")?,
        k_y: req("market", "k_y")?,
        k_z: req("market", "k_z")?,
        y0: req("market", "y0")?,
        z0: req("market", "z0")?,
        gamma: req("hedge", "gamma")?,
        alpha: 1.0,
        maturity: 3.0,
        cos_phi_xy: None,
    };
    market.cos_phi_xy = e.f64("market", "cos_phi_xy")?;
    if let Some(a) = e.f64("hedge", "alpha")? {
        market.alpha = a;
    }
    if let Some(t) = e.f64("run", "maturity")? {
        market.maturity = t;
    }
    let bracket = (e.f64("hedge", "alpha_lo")?.unwrap_or(0.0), e.f64("hedge", "alpha_hi")?.unwrap_or(3.0));
    if !(bracket.1 > bracket.0) {
        return err(format!("alpha bracket [{}, {}] is empty", bracket.0, bracket.1));
    }
    let capital = e.f64("hedge", "capital")?;
    if capital.is_some_and(|c| c <= 0.0) {
        return err("hedge.capital must be positive");
    }
    let p_y = match e.string("hedge", "p_y") {
        None => HedgePrice::CappedClaim,
        Some(s) => HedgePrice::parse(&s).map_err(|x| ConfigError(x.to_string()))?,
    };
    let z_leg = e.bool("hedge", "z_leg")?.unwrap_or(true);

    let mut options = SolverOptions::default();
    if let Some(n) = e.usize("run", "order")? {
        options.order = n;
    }
    let solver = match e.string("run", "solver") {
        None => SolverChoice::Asym,
        Some(s) => SolverChoice::parse(&s)?,
    };
    let expansion = match e.string("run", "expansion").as_deref() {
        None | Some("auto") => None,
        Some("mu") => Some(ExpansionKind::MuExpansion),
        Some("epsilon") => Some(ExpansionKind::EpsilonExpansion),
        Some(s) => return err(format!("run.expansion must be auto, mu or epsilon, got '{s}'")),
    };
    let threshold = e.f64("run", "threshold")?.unwrap_or(0.05);
    let v = e.f64("run", "v")?.unwrap_or(1.22);
    let u_grid = (e.f64("run", "u_min")?.unwrap_or(-30.0), e.f64("run", "u_max")?.unwrap_or(10.0), e.usize("run", "u_points")?.unwrap_or(41));
    if u_grid.2 == 0 || u_grid.1 < u_grid.0 {
        return err("run.u_points must be positive and u_min <= u_max");
    }
    let workers = e.usize("run", "workers")?.unwrap_or(1);
    let seed = e.usize("run", "seed")?.unwrap_or(0) as u64;

    let a = &mut options.asymptotic;
    *a = AsymptoticConfig {
        kernel: e.string("asymptotic", "kernel").unwrap_or(a.kernel.clone()),
        bulk_kernel: e.string("asymptotic", "bulk_kernel").unwrap_or(a.bulk_kernel.clone()),
        time_nodes: e.usize("asymptotic", "time_nodes")?.unwrap_or(a.time_nodes),
        nu: e.usize("asymptotic", "nu")?.unwrap_or(a.nu),
        u_range: (e.f64("asymptotic", "u_min")?.unwrap_or(a.u_range.0), e.f64("asymptotic", "u_max")?.unwrap_or(a.u_range.1)),
        v_step: e.f64("asymptotic", "v_step")?.unwrap_or(a.v_step),
        include_i2: e.bool("asymptotic", "include_i2")?.unwrap_or(a.include_i2),
        fast: e.bool("asymptotic", "fast")?.unwrap_or(a.fast),
        ..a.clone()
    };
    let f = &mut options.fd;
    let stretch = match (e.f64("fd", "stretch_u")?, e.f64("fd", "stretch_v")?) {
        (None, None) => f.stretch,
        (a, b) => {
            let d = f.stretch.unwrap_or((5.0, 5.0));
            let s = (a.unwrap_or(d.0), b.unwrap_or(d.1));
            if s.0 > 0.0 && s.1 > 0.0 {
                Some(s)
            } else {
                None
            }
        }
    };
    let linearization = match e.string("fd", "linearization") {
        None => f.linearization,
        Some(s) => Linearization::parse(&s).map_err(|x| ConfigError(x.to_string()))?,
    };
    *f = FdConfig {
        nu: e.usize("fd", "nu")?.unwrap_or(f.nu),
        nv: e.usize("fd", "nv")?.unwrap_or(f.nv),
        u_range: (e.f64("fd", "u_min")?.unwrap_or(f.u_range.0), e.f64("fd", "u_max")?.unwrap_or(f.u_range.1)),
        v_range: (e.f64("fd", "v_min")?.unwrap_or(f.v_range.0), e.f64("fd", "v_max")?.unwrap_or(f.v_range.1)),
        dt: e.f64("fd", "dt")?.unwrap_or(f.dt),
        stretch,
        max_fixed_point_iters: e.usize("fd", "max_iters")?.unwrap_or(f.max_fixed_point_iters),
        fp_tol: e.f64("fd", "fp_tol")?.unwrap_or(f.fp_tol),
        solve_in_log: e.bool("fd", "solve_in_log")?.unwrap_or(f.solve_in_log),
        linearization,
        psi_cap: e.f64("fd", "psi_cap")?.unwrap_or(f.psi_cap),
    };
    options.fd.validate().map_err(|x| ConfigError(x.to_string()))?;

    let max_points = e.usize("sweep", "max_points")?.unwrap_or(200);
    let axis = e.string("sweep", "axis");
    let values = e.string("sweep", "values");
    let range = (e.f64("sweep", "from")?, e.f64("sweep", "to")?, e.usize("sweep", "points")?);
    let sweep = match axis {
        None => {
            if values.is_some() || range != (None, None, None) {
                return err("sweep values given without sweep.axis");
            }
            None
        }
        Some(axis) => {
            let axis = SweepAxis::parse(&axis)?;
            let values = match (values, range) {
                (Some(v), (None, None, None)) => list(&v)?,
                (None, (Some(a), Some(b), Some(n))) if n >= 1 => {
                    if n == 1 {
                        vec![a]
                    } else {
                        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
                    }
                }
                _ => return err("sweep needs either values or from, to and points"),
            };
            Some(SweepSpec { axis, values })
        }
    };

    let name = e.string("scenario", "name").unwrap_or_else(|| "run".to_string());
    if name.contains(',') || name.contains('"') {
        return err("scenario.name may not contain commas or quotes");
    }
    market.validate().map_err(|x| ConfigError(x.to_string()))?;
    Ok(RunConfig { name, market, bracket, capital, p_y, z_leg, expansion, solver, options, threshold, v, u_grid, workers, seed, sweep, max_points })
}

pub fn load(path: &Path) -> Res<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|x| ConfigError(format!("{}: {x}", path.display())))?;
    parse(&text).map_err(|x| ConfigError(format!("{}: {x}", path.display())))
}
