//! Discrete Gaussian-kernel convolution `(1/sqrt(2 pi tau)) ∫ e^{-(x-u)^2/(2 tau)} f(x) dx`
//! over quadrature nodes, direct or through truncated Hermite expansions.

use crate::error::{Error, Result};
use crate::special::{erfc, gauss_legendre};
use std::f64::consts::PI;

/// Beyond this many standard deviations the kernel underflows to zero.
const UNDERFLOW_SIGMAS: f64 = 38.6;
/// Required clearance, in standard deviations, from an uncorrected boundary.
const BOUNDARY_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone)]
pub struct GaussTransformPlan {
    /// Non-decreasing; a node may repeat where the integrand jumps.
    pub source_nodes: Vec<f64>,
    pub source_weights: Vec<f64>,
    pub fast: bool,
    pub expansion_order: usize,
    /// Box half-width in units of `sqrt(tau)`.
    pub cluster_radius: f64,
    /// Interaction cutoff in units of `sqrt(tau)`.
    pub cutoff: f64,
    /// Interval covered by the quadrature; the tails start at its ends.
    pub support: (f64, f64),
    /// Constant values of `f` beyond the support, if known.
    pub left_tail: Option<f64>,
    pub right_tail: Option<f64>,
}

impl GaussTransformPlan {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::InvalidParams("nodes and weights must be non-empty and of equal length".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidParams("source nodes must be sorted".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParams("quadrature weights must be nonnegative".into()));
        }
        let support = (nodes[0], nodes[nodes.len() - 1]);
        Ok(GaussTransformPlan {
            support,
            source_nodes: nodes,
            source_weights: weights,
            fast: false,
            expansion_order: 10,
            cluster_radius: 0.25,
            cutoff: 8.0,
            left_tail: None,
            right_tail: None,
        })
    }

    /// Trapezoid weights on arbitrary sorted nodes.
    pub fn trapezoid(nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        let mut w = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let h = 0.5 * (nodes[i + 1] - nodes[i]);
            w[i] += h;
            w[i + 1] += h;
        }
        Self::new(nodes, w)
    }

    /// Composite Simpson on each segment `[breaks[i], breaks[i+1]]` with step at most `h`.
    /// Interior breaks appear twice so that one-sided values can be supplied.
    pub fn simpson(breaks: &[f64], h: f64) -> Result<Self> {
        let (nodes, weights) = simpson_nodes(breaks, h);
        Self::new(nodes, weights)
    }

    pub fn panels(breaks: &[f64], h: f64, order: usize) -> Result<Self> {
        let (nodes, weights) = panel_nodes(breaks, h, order);
        Ok(Self::new(nodes, weights)?.with_support(breaks[0], breaks[breaks.len() - 1]))
    }

    pub fn with_tails(mut self, left: Option<f64>, right: Option<f64>) -> Self {
        self.left_tail = left;
        self.right_tail = right;
        self
    }

    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.support = (lo, hi);
        self
    }

    pub fn with_fast(mut self, fast: bool) -> Self {
        self.fast = fast;
        self
    }

    pub fn with_expansion_order(mut self, order: usize) -> Self {
        self.expansion_order = order.max(4);
        self
    }

    fn check(&self, f: &[f64], targets: &[f64], tau: f64) -> Result<()> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParams(format!("tau must be positive, got {tau}")));
        }
        if f.len() != self.source_nodes.len() {
            return Err(Error::InvalidParams("one value per source node expected".into()));
        }
        let s = tau.sqrt();
        let (lo, hi) = self.support;
        for &t in targets {
            if self.left_tail.is_none() && t - lo < BOUNDARY_SIGMAS * s {
                return Err(Error::DomainTooNarrow { target: t });
            }
            if self.right_tail.is_none() && hi - t < BOUNDARY_SIGMAS * s {
                return Err(Error::DomainTooNarrow { target: t });
            }
        }
        Ok(())
    }

    fn tail_terms(&self, t: f64, tau: f64) -> f64 {
        let s = (2.0 * tau).sqrt();
        let mut out = 0.0;
        if let Some(l) = self.left_tail {
            out += l * 0.5 * erfc((t - self.support.0) / s);
        }
        if let Some(r) = self.right_tail {
            out += r * 0.5 * erfc((self.support.1 - t) / s);
        }
        out
    }
}

/// Nodes and weights of composite Simpson rules on consecutive segments.
pub fn simpson_nodes(breaks: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let mut n = ((b - a) / h).ceil() as usize;
        n = n.max(2);
        if n % 2 == 1 {
            n += 1;
        }
        let step = (b - a) / n as f64;
        for i in 0..=n {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            nodes.push(if i == n { b } else { a + i as f64 * step });
            weights.push(c * step / 3.0);
        }
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre panels of `order` nodes and width at most `order * h`
/// on consecutive segments.
pub fn panel_nodes(breaks: &[f64], h: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (x0, w0) = gauss_legendre(order, 0.0, 1.0);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let n = ((b - a) / (order as f64 * h)).ceil().max(1.0) as usize;
        let step = (b - a) / n as f64;
        for k in 0..n {
            let left = a + k as f64 * step;
            for (x, wt) in x0.iter().zip(&w0) {
                nodes.push(left + x * step);
                weights.push(wt * step);
            }
        }
    }
    (nodes, weights)
}

pub fn gauss_transform(f: &[f64], targets: &[f64], tau: f64, plan: &GaussTransformPlan) -> Result<Vec<f64>> {
    if plan.fast {
        fast_gauss_transform(f, targets, tau, plan)
    } else {
        direct_gauss_transform(f, targets, tau, plan)
    }
}

/// Direct summation. Sources beyond the underflow radius are skipped, which does
/// not change the result in double precision.
pub fn direct_gauss_transform(f: &[f64], targets: &[f64], tau: f64, plan: &GaussTransformPlan) -> Result<Vec<f64>> {
    plan.check(f, targets, tau)?;
    let nodes = &plan.source_nodes;
    let s = tau.sqrt();
    let norm = 1.0 / (2.0 * PI * tau).sqrt();
    let inv = 0.5 / tau;
    Ok(targets
        .iter()
        .map(|&t| {
            let i0 = nodes.partition_point(|&x| x < t - UNDERFLOW_SIGMAS * s);
            let i1 = nodes.partition_point(|&x| x <= t + UNDERFLOW_SIGMAS * s);
            let mut acc = 0.0;
            for i in i0..i1 {
                let d = nodes[i] - t;
                acc += plan.source_weights[i] * f[i] * (-d * d * inv).exp();
            }
            norm * acc + plan.tail_terms(t, tau)
        })
        .collect())
}

struct Cluster {
    centre: f64,
    moments: Vec<f64>,
}

/// Hermite-expansion transform: sources are binned into boxes of half-width
/// `cluster_radius * sqrt(tau)`, each box is replaced by its Hermite moments, and
/// every target sums the expansions of the boxes within `cutoff * sqrt(tau)`.
/// Cost is linear in the numbers of sources and targets.
pub fn fast_gauss_transform(f: &[f64], targets: &[f64], tau: f64, plan: &GaussTransformPlan) -> Result<Vec<f64>> {
    plan.check(f, targets, tau)?;
    let nodes = &plan.source_nodes;
    let p = plan.expansion_order.max(4);
    let scale = (2.0 * tau).sqrt();
    let width = 2.0 * plan.cluster_radius * tau.sqrt();
    let origin = nodes[0];

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut i = 0;
    while i < nodes.len() {
        let b = ((nodes[i] - origin) / width).floor();
        let centre = origin + (b + 0.5) * width;
        let mut moments = vec![0.0; p];
        while i < nodes.len() && ((nodes[i] - origin) / width).floor() == b {
            let q = plan.source_weights[i] * f[i];
            let t = (nodes[i] - centre) / scale;
            let mut tn = q;
            for (n, m) in moments.iter_mut().enumerate() {
                *m += tn;
                tn *= t / (n + 1) as f64;
            }
            i += 1;
        }
        clusters.push(Cluster { centre, moments });
    }

    let norm = 1.0 / (2.0 * PI * tau).sqrt();
    let reach = plan.cutoff * tau.sqrt() + 0.5 * width;
    let mut h = vec![0.0; p];
    Ok(targets
        .iter()
        .map(|&y| {
            let c0 = clusters.partition_point(|c| c.centre < y - reach);
            let mut acc = 0.0;
            for c in clusters[c0..].iter().take_while(|c| c.centre <= y + reach) {
                let t = (y - c.centre) / scale;
                hermite_functions(t, &mut h);
                acc += c.moments.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            norm * acc + plan.tail_terms(y, tau)
        })
        .collect())
}

/// `h_n(t) = (-1)^n d^n/dt^n e^{-t^2}` for `n < out.len()`.
fn hermite_functions(t: f64, out: &mut [f64]) {
    let e = (-t * t).exp();
    out[0] = e;
    if out.len() > 1 {
        out[1] = 2.0 * t * e;
    }
    for n in 1..out.len() - 1 {
        out[n + 1] = 2.0 * t * out[n] - 2.0 * n as f64 * out[n - 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_is_preserved() {
        let plan = GaussTransformPlan::trapezoid(uniform(-50.0, 50.0, 2001)).unwrap().with_tails(Some(2.5), Some(2.5));
        let f = vec![2.5; 2001];
        let t = uniform(-10.0, 10.0, 41);
        for fast in [false, true] {
            let out = gauss_transform(&f, &t, 3.0, &plan.clone().with_fast(fast)).unwrap();
            for v in out {
                assert!((v - 2.5).abs() < 1e-10 * 2.5, "{v}");
            }
        }
    }

    #[test]
    fn gaussian_convolution() {
        let s2 = 0.7;
        let tau = 1.3;
        let plan = GaussTransformPlan::simpson(&[-30.0, 30.0], 0.01).unwrap();
        let f: Vec<f64> = plan.source_nodes.iter().map(|&x| (-x * x / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt()).collect();
        let t = uniform(-3.0, 3.0, 13);
        let out = gauss_transform(&f, &t, tau, &plan).unwrap();
        for (y, v) in t.iter().zip(out) {
            let want = (-y * y / (2.0 * (s2 + tau))).exp() / (2.0 * PI * (s2 + tau)).sqrt();
            assert!((v - want).abs() < 1e-10, "{y}: {v} vs {want}");
        }
    }

    #[test]
    fn flat_tails_give_erfc_step() {
        // f = 0 on the grid, 1 to the right of it: result is the normal CDF.
        let plan = GaussTransformPlan::trapezoid(uniform(-20.0, 0.0, 101)).unwrap().with_tails(Some(0.0), Some(1.0));
        let f = vec![0.0; 101];
        let out = gauss_transform(&f, &[0.0, 1.0], 2.0, &plan).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - crate::special::norm_cdf(1.0 / 2f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn narrow_domain_rejected() {
        let plan = GaussTransformPlan::trapezoid(uniform(-5.0, 5.0, 101)).unwrap();
        let f = vec![1.0; 101];
        assert!(matches!(gauss_transform(&f, &[0.0], 1.0, &plan), Err(Error::DomainTooNarrow { .. })));
    }

    #[test]
    fn semigroup() {
        let plan = GaussTransformPlan::simpson(&[-40.0, 40.0], 0.02).unwrap();
        let f: Vec<f64> = plan.source_nodes.iter().map(|&x| 1.0 / (1.0 + x * x / 4.0)).collect();
        let tails = plan.clone().with_tails(Some(0.0), Some(0.0));
        let once = gauss_transform(&f, &plan.source_nodes, 0.5, &tails).unwrap();
        let twice = gauss_transform(&once, &[-2.0, 0.0, 1.5], 0.7, &tails).unwrap();
        let direct = gauss_transform(&f, &[-2.0, 0.0, 1.5], 1.2, &tails).unwrap();
        for (a, b) in twice.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-6 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn fast_matches_direct_on_kinked_data() {
        let nodes = uniform(-50.0, 50.0, 1000);
        let f: Vec<f64> = nodes.iter().map(|&x| if x < 0.0 { 1.0 + 0.3 * (x / 3.0).sin() } else { (-(x * 0.1)).exp() * 0.7 + 0.05 }).collect();
        let plan = GaussTransformPlan::trapezoid(nodes.clone()).unwrap().with_tails(Some(1.0), Some(0.05));
        let d = direct_gauss_transform(&f, &nodes, 2.0, &plan).unwrap();
        let q = fast_gauss_transform(&f, &nodes, 2.0, &plan).unwrap();
        let worst = d.iter().zip(&q).map(|(a, b)| ((a - b) / a).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn hermite_generating_function() {
        let mut h = vec![0.0; 30];
        let (t, b) = (0.8, 0.15);
        hermite_functions(t, &mut h);
        let mut sum = 0.0;
        let mut bn = 1.0;
        for (n, v) in h.iter().enumerate() {
            sum += bn * v;
            bn *= b / (n + 1) as f64;
        }
        assert!((sum - (-(t - b) * (t - b)).exp()).abs() < 1e-15);
    }
}
