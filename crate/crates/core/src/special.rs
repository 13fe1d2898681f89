//! Error functions, the scaled Gaussian-tail kernel and small numeric helpers.

use errorfunctions::RealErrorFunctions;
use std::f64::consts::{PI, SQRT_2};

pub fn erfc(x: f64) -> f64 {
    RealErrorFunctions::erfc(x)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    RealErrorFunctions::erfcx(x)
}

pub fn erf(x: f64) -> f64 {
    RealErrorFunctions::erf(x)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Heat kernel with variance `tau` evaluated at `x`.
pub fn heat_kernel(x: f64, tau: f64) -> f64 {
    (-x * x / (2.0 * tau)).exp() / (2.0 * PI * tau).sqrt()
}

/// `ln[ exp(A(u + A tau/2)) Erfc((u - a + A tau)/sqrt(2 tau)) ]`.
///
/// For positive Erfc arguments the exponent and the Gaussian tail are fused,
/// which keeps the product finite when `A(u + A tau/2)` is huge.
pub fn ln_lambda(big_a: f64, a: f64, u: f64, tau: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a == f64::INFINITY {
        return big_a * (u + 0.5 * big_a * tau) + 2f64.ln();
    }
    let s = (2.0 * tau).sqrt();
    let z = (u - a + big_a * tau) / s;
    if z > 0.0 {
        let d = u - a;
        big_a * a - d * d / (2.0 * tau) + erfcx(z).ln()
    } else {
        big_a * (u + 0.5 * big_a * tau) + erfc(z).ln()
    }
}

/// `ln ∫_lo^hi e^{A x} N(x; u, tau) dx` with `N` the heat kernel centred at `u`.
///
/// The integral equals `e^{A(u + A tau/2)} P(lo < X < hi)` for `X ~ N(u + A tau, tau)`;
/// tails are evaluated through `erfcx` with the Gaussian factor fused into the
/// exponent, so neither overflow nor cancellation against 1 occurs.
pub fn ln_exp_integral(big_a: f64, lo: f64, hi: f64, u: f64, tau: f64) -> f64 {
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    let c = u + big_a * tau;
    let s = (2.0 * tau).sqrt();
    if lo >= c {
        let zl = (lo - c) / s;
        let tail = if hi.is_finite() {
            let zh = (hi - c) / s;
            erfcx(zh) * (-(zh - zl) * (zh + zl)).exp()
        } else {
            0.0
        };
        let d = lo - u;
        big_a * lo - d * d / (2.0 * tau) + (0.5 * (erfcx(zl) - tail)).ln()
    } else if hi <= c {
        let zh = (c - hi) / s;
        let tail = if lo.is_finite() {
            let zl = (c - lo) / s;
            erfcx(zl) * (-(zl - zh) * (zl + zh)).exp()
        } else {
            0.0
        };
        let d = hi - u;
        big_a * hi - d * d / (2.0 * tau) + (0.5 * (erfcx(zh) - tail)).ln()
    } else {
        let eh = if hi.is_finite() { erf((hi - c) / s) } else { 1.0 };
        let el = if lo.is_finite() { erf((c - lo) / s) } else { 1.0 };
        big_a * (u + 0.5 * big_a * tau) + (0.5 * (eh + el)).ln()
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    for i in 0..(n + 1) / 2 {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = mid - half * t;
        x[n - 1 - i] = mid + half * t;
        w[i] = half * wi;
        w[n - 1 - i] = half * wi;
    }
    (x, w)
}

/// Composite Gauss-Legendre quadrature of `f` over `[a, b]` split into `pieces`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize, order: usize) -> f64 {
    let (xs, ws) = gauss_legendre(order, 0.0, 1.0);
    let h = (b - a) / pieces as f64;
    let mut acc = Accumulator::default();
    for k in 0..pieces {
        let lo = a + k as f64 * h;
        for (x, w) in xs.iter().zip(&ws) {
            acc.add(w * h * f(lo + x * h));
        }
    }
    acc.value()
}
