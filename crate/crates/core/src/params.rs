//! Market parameters, correlation geometry and the coordinate changes of the
//! reduced value-function PDE.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_z: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub rho_xy: f64,
    pub rho_xz: f64,
    pub rho_yz: f64,
    pub r: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub k_y: f64,
    pub k_z: f64,
    pub y0: f64,
    pub z0: f64,
    pub maturity: f64,
    /// Overrides `rho_xy` through the cosine law when set. Needed at |rho_yz| = 1.
    pub cos_phi_xy: Option<f64>,
}

impl MarketParams {
    /// First reference market: Z below its cap, Y above its cap; gamma = 0.03, alpha = 1, T = 3.
    pub fn test1() -> Self {
        MarketParams {
            mu_x: 0.04,
            mu_y: 0.03,
            mu_z: 0.05,
            sigma_x: 0.25,
            sigma_y: 0.3,
            sigma_z: 0.2,
            rho_xy: 0.3,
            rho_xz: 0.4,
            rho_yz: 0.8,
            r: 0.02,
            gamma: 0.03,
            alpha: 1.0,
            k_y: 90.0,
            k_z: 110.0,
            y0: 100.0,
            z0: 100.0,
            maturity: 3.0,
            cos_phi_xy: None,
        }
    }

    /// Second reference market: Z deep below its cap, weaker correlations.
    pub fn test2() -> Self {
        MarketParams { sigma_z: 0.3, rho_xz: 0.3, rho_xy: 0.2, z0: 50.0, ..Self::test1() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_z", self.sigma_z),
            ("gamma", self.gamma),
            ("K_y", self.k_y),
            ("K_z", self.k_z),
            ("y0", self.y0),
            ("z0", self.z0),
            ("T", self.maturity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu_x", self.mu_x), ("mu_y", self.mu_y), ("mu_z", self.mu_z), ("r", self.r), ("alpha", self.alpha)] {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} is not finite")));
            }
        }
        let rho_xy = self.effective_rho_xy()?;
        for (name, v) in [("rho_xy", rho_xy), ("rho_xz", self.rho_xz), ("rho_yz", self.rho_yz)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!("{name} = {v} outside [-1, 1]")));
            }
        }
        let det = 1.0 + 2.0 * rho_xy * self.rho_xz * self.rho_yz
            - rho_xy * rho_xy
            - self.rho_xz * self.rho_xz
            - self.rho_yz * self.rho_yz;
        if det < -1e-12 {
            return Err(Error::InvalidTriple(format!("det = {det:.3e}")));
        }
        Ok(())
    }

    pub fn effective_rho_xy(&self) -> Result<f64> {
        match self.cos_phi_xy {
            Some(c) => {
                if !(-1.0..=1.0).contains(&c) {
                    return Err(Error::InvalidTriple(format!("cos_phi_xy = {c}")));
                }
                Ok(rho_xy_from_cos(c, self.rho_xz, self.rho_yz))
            }
            None => Ok(self.rho_xy),
        }
    }

    pub fn eta_s(&self) -> f64 {
        (self.mu_x - self.r) / self.sigma_x
    }

    pub fn mu_hat_y(&self) -> f64 {
        let rho_xy = self.effective_rho_xy().unwrap_or(self.rho_xy);
        self.mu_y - 0.5 * self.sigma_y * self.sigma_y - self.eta_s() * rho_xy * self.sigma_y
    }

    pub fn mu_hat_z(&self) -> f64 {
        self.mu_z - 0.5 * self.sigma_z * self.sigma_z - self.eta_s() * self.rho_xz * self.sigma_z
    }

    pub fn psi(&self) -> f64 {
        self.gamma * self.k_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpansionKind {
    MuExpansion,
    EpsilonExpansion,
}

impl ExpansionKind {
    pub fn name(self) -> &'static str {
        match self {
            ExpansionKind::MuExpansion => "mu",
            ExpansionKind::EpsilonExpansion => "eps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationGeometry {
    pub eps: f64,
    pub cos_phi_xy: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub beta: f64,
    pub mu_small: f64,
    pub eta_s: f64,
    pub rho_bar_xz_sq: f64,
    pub rho_xy: f64,
    pub rho_xz: f64,
    pub rho_yz: f64,
}

impl CorrelationGeometry {
    /// Builds the geometry from the independent parameterization (rho_xz, rho_yz, cos phi).
    pub fn from_angle(rho_xz: f64, rho_yz: f64, cos_phi_xy: f64, eta_s: f64) -> Result<Self> {
        if rho_xz == 0.0 {
            return Err(Error::DegenerateGeometry("rho_xz = 0 leaves theta1 undefined".into()));
        }
        if rho_xz.abs() >= 1.0 || rho_yz.abs() > 1.0 {
            return Err(Error::DegenerateGeometry(format!("rho_xz = {rho_xz}, rho_yz = {rho_yz}")));
        }
        if !(-1.0..=1.0).contains(&cos_phi_xy) {
            return Err(Error::InvalidTriple(format!("cos_phi_xy = {cos_phi_xy}")));
        }
        let eps = (1.0 - rho_yz * rho_yz).max(0.0).sqrt();
        let theta1 = (1.0 - rho_xz * rho_xz).sqrt() / rho_xz * cos_phi_xy;
        let theta2 = 1.0 + theta1 * theta1;
        // Signed rho_yz in place of sqrt(1 - eps^2) keeps rho_xy = rho_xz*beta for rho_yz < 0.
        let beta = rho_yz + eps * theta1;
        let theta3 = rho_yz * theta1 - eps;
        Ok(CorrelationGeometry {
            eps,
            cos_phi_xy,
            theta1,
            theta2,
            theta3,
            beta,
            mu_small: theta1 * theta1,
            eta_s,
            rho_bar_xz_sq: theta2 * rho_xz * rho_xz,
            rho_xy: rho_xy_from_cos(cos_phi_xy, rho_xz, rho_yz),
            rho_xz,
            rho_yz,
        })
    }

    pub fn from_triple(rho_xy: f64, rho_xz: f64, rho_yz: f64, eta_s: f64) -> Result<Self> {
        let c = cosine_law_cos_phi(rho_xy, rho_xz, rho_yz)?;
        let mut g = Self::from_angle(rho_xz, rho_yz, c, eta_s)?;
        g.rho_xy = rho_xy;
        Ok(g)
    }

    /// The squared correlation entering the Hopf-Cole distortion for the given expansion.
    pub fn rho_sq(&self, kind: ExpansionKind) -> f64 {
        match kind {
            ExpansionKind::MuExpansion => self.rho_bar_xz_sq,
            ExpansionKind::EpsilonExpansion => self.rho_xz * self.rho_xz,
        }
    }

    /// Value of the formal small parameter used at assembly.
    pub fn small_param(&self, kind: ExpansionKind) -> f64 {
        match kind {
            ExpansionKind::MuExpansion => self.mu_small,
            ExpansionKind::EpsilonExpansion => self.eps,
        }
    }
}

pub fn cosine_law_cos_phi(rho_xy: f64, rho_xz: f64, rho_yz: f64) -> Result<f64> {
    if rho_yz.abs() >= 1.0 || rho_xz.abs() >= 1.0 {
        return Err(Error::DegenerateGeometry(format!("|rho_yz| = {} or |rho_xz| = {} is 1", rho_yz.abs(), rho_xz.abs())));
    }
    let c = (rho_xy - rho_yz * rho_xz) / ((1.0 - rho_yz * rho_yz) * (1.0 - rho_xz * rho_xz)).sqrt();
    if c.abs() > 1.0 + 1e-9 {
        return Err(Error::InvalidTriple(format!("cos phi = {c}")));
    }
    Ok(c.clamp(-1.0, 1.0))
}

pub fn rho_xy_from_cos(cos_phi: f64, rho_xz: f64, rho_yz: f64) -> f64 {
    rho_yz * rho_xz + cos_phi * ((1.0 - rho_yz * rho_yz) * (1.0 - rho_xz * rho_xz)).sqrt()
}

pub fn geometry_from_params(p: &MarketParams) -> Result<CorrelationGeometry> {
    p.validate()?;
    match p.cos_phi_xy {
        Some(c) => CorrelationGeometry::from_angle(p.rho_xz, p.rho_yz, c, p.eta_s()),
        None => CorrelationGeometry::from_triple(p.rho_xy, p.rho_xz, p.rho_yz, p.eta_s()),
    }
}

pub const DEFAULT_EXPANSION_THRESHOLD: f64 = 0.1;
pub const DEGENERATE_EPS: f64 = 1e-6;

pub fn select_expansion(g: &CorrelationGeometry, threshold: f64) -> ExpansionKind {
    if g.eps < DEGENERATE_EPS {
        ExpansionKind::EpsilonExpansion
    } else if g.mu_small < threshold {
        ExpansionKind::MuExpansion
    } else {
        ExpansionKind::EpsilonExpansion
    }
}

pub fn log_moneyness(p: &MarketParams) -> (f64, f64) {
    ((p.y0 / p.k_y).ln(), (p.z0 / p.k_z).ln())
}

fn drift_coupling(p: &MarketParams) -> Result<f64> {
    if p.rho_xz == 0.0 || p.sigma_z == 0.0 || p.sigma_y == 0.0 {
        return Err(Error::DegenerateGeometry("zero divisor in (h,s) -> (w,v)".into()));
    }
    Ok(p.effective_rho_xy()? / (p.rho_xz * p.sigma_z))
}

pub fn forward_transform_hs_to_wv(h: f64, s: f64, tau: f64, p: &MarketParams) -> Result<(f64, f64)> {
    let c = drift_coupling(p)?;
    let my = p.mu_hat_y();
    let mz = p.mu_hat_z();
    let w = h / p.sigma_y + tau * my / p.sigma_y;
    let v = -h / p.sigma_y + s * c + tau * (-my / p.sigma_y + mz * c);
    Ok((w, v))
}

pub fn inverse_transform_wv_to_hs(w: f64, v: f64, tau: f64, p: &MarketParams) -> Result<(f64, f64)> {
    let c = drift_coupling(p)?;
    let my = p.mu_hat_y();
    let mz = p.mu_hat_z();
    let h = p.sigma_y * w - tau * my;
    let s = (v + h / p.sigma_y - tau * (-my / p.sigma_y + mz * c)) / c;
    Ok((h, s))
}

pub fn forward_transform_wv_to_uvbar(w: f64, v: f64, g: &CorrelationGeometry) -> Result<(f64, f64)> {
    if g.eps < DEGENERATE_EPS || g.beta == 0.0 {
        return Err(Error::DegenerateGeometry(format!("(u, vbar) map singular: eps = {}, beta = {}", g.eps, g.beta)));
    }
    let u = (g.theta2 * w - g.theta3 / g.eps * v) / (g.theta2.sqrt() * g.beta);
    Ok((u, v / g.eps))
}

pub fn inverse_transform_uvbar_to_wv(u: f64, vbar: f64, g: &CorrelationGeometry) -> Result<(f64, f64)> {
    if g.beta == 0.0 {
        return Err(Error::DegenerateGeometry("beta = 0".into()));
    }
    let w = (g.theta2.sqrt() * g.beta * u + g.theta3 * vbar) / g.theta2;
    Ok((w, g.eps * vbar))
}

/// Maps a market state `(h, s)` at time-to-maturity `tau` into the solver
/// coordinates of the given expansion: `(u, vbar)` or `(w, v)`.
pub fn to_solver_coords(h: f64, s: f64, tau: f64, p: &MarketParams, g: &CorrelationGeometry, kind: ExpansionKind) -> Result<(f64, f64)> {
    let (w, v) = forward_transform_hs_to_wv(h, s, tau, p)?;
    match kind {
        ExpansionKind::MuExpansion => forward_transform_wv_to_uvbar(w, v, g),
        ExpansionKind::EpsilonExpansion => Ok((w, v)),
    }
}

pub fn from_solver_coords(x: f64, y: f64, tau: f64, p: &MarketParams, g: &CorrelationGeometry, kind: ExpansionKind) -> Result<(f64, f64)> {
    let (w, v) = match kind {
        ExpansionKind::MuExpansion => inverse_transform_uvbar_to_wv(x, y, g)?,
        ExpansionKind::EpsilonExpansion => (x, y),
    };
    inverse_transform_wv_to_hs(w, v, tau, p)
}
