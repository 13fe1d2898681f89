//! Tensor-product `(u, v)` grids and fields sampled on them.

use crate::error::{Error, Result};

/// Nodes on `[a, b]` concentrated around `centre`: `x = centre + scale * sinh(xi)`
/// with `xi` uniform. `scale = None` gives a uniform grid.
pub fn stretched_axis(a: f64, b: f64, n: usize, centre: f64, scale: Option<f64>) -> Vec<f64> {
    assert!(n >= 2 && b > a);
    match scale {
        Some(s) if s > 0.0 => {
            let xa = ((a - centre) / s).asinh();
            let xb = ((b - centre) / s).asinh();
            let mut out: Vec<f64> = (0..n).map(|i| centre + s * (xa + (xb - xa) * i as f64 / (n - 1) as f64).sinh()).collect();
            out[0] = a;
            out[n - 1] = b;
            out
        }
        _ => uniform_axis(a, b, n),
    }
}

pub fn uniform_axis(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

/// Values stored with `u` varying fastest: `values[j * nu + i] = f(u[i], v[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(u: Vec<f64>, v: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(u.len() * v.len(), values.len());
        GridFunction { u, v, values }
    }

    pub fn zeros(u: Vec<f64>, v: Vec<f64>) -> Self {
        let n = u.len() * v.len();
        GridFunction { u, v, values: vec![0.0; n] }
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(u: Vec<f64>, v: Vec<f64>, f: F) -> Self {
        let mut values = Vec::with_capacity(u.len() * v.len());
        for &y in &v {
            for &x in &u {
                values.push(f(x, y));
            }
        }
        GridFunction { u, v, values }
    }

    pub fn nu(&self) -> usize {
        self.u.len()
    }

    pub fn nv(&self) -> usize {
        self.v.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.u.len() + i]
    }

    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        let nu = self.u.len();
        self.values[j * nu + i] = x;
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let nu = self.u.len();
        &self.values[j * nu..(j + 1) * nu]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        let nu = self.u.len();
        &mut self.values[j * nu..(j + 1) * nu]
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        GridFunction { u: self.u.clone(), v: self.v.clone(), values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Bilinear interpolation; a single-node axis is treated as constant along it.
    pub fn interpolate(&self, u: f64, v: f64) -> Result<f64> {
        let (i, s) = locate(&self.u, u)?;
        let (j, t) = locate(&self.v, v)?;
        let i1 = (i + 1).min(self.nu() - 1);
        let j1 = (j + 1).min(self.nv() - 1);
        let f00 = self.at(i, j);
        let f10 = self.at(i1, j);
        let f01 = self.at(i, j1);
        let f11 = self.at(i1, j1);
        Ok((1.0 - s) * (1.0 - t) * f00 + s * (1.0 - t) * f10 + (1.0 - s) * t * f01 + s * t * f11)
    }
}

impl GridFunction {
    /// Four-point Lagrange in `u`, linear in `v`.
    pub fn interpolate_cubic_u(&self, u: f64, v: f64) -> Result<f64> {
        let n = self.nu();
        if n < 4 {
            return self.interpolate(u, v);
        }
        let (i, _) = locate(&self.u, u)?;
        let (j, t) = locate(&self.v, v)?;
        let i0 = i.saturating_sub(1).min(n - 4);
        let xs = &self.u[i0..i0 + 4];
        let row = |j: usize| -> f64 {
            let mut acc = 0.0;
            for a in 0..4 {
                let mut l = 1.0;
                for b in 0..4 {
                    if a != b {
                        l *= (u - xs[b]) / (xs[a] - xs[b]);
                    }
                }
                acc += l * self.at(i0 + a, j);
            }
            acc
        };
        let j1 = (j + 1).min(self.nv() - 1);
        Ok(if t == 0.0 { row(j) } else { (1.0 - t) * row(j) + t * row(j1) })
    }
}

fn locate(axis: &[f64], x: f64) -> Result<(usize, f64)> {
    let n = axis.len();
    if n == 1 {
        return if x == axis[0] { Ok((0, 0.0)) } else { Err(Error::OutOfDomain(x, axis[0])) };
    }
    let (a, b) = (axis[0], axis[n - 1]);
    let tol = 1e-12 * (b - a);
    if x < a - tol {
        return Err(Error::OutOfDomain(x, a));
    }
    if x > b + tol {
        return Err(Error::OutOfDomain(x, b));
    }
    let k = axis.partition_point(|&y| y <= x).clamp(1, n - 1) - 1;
    let t = ((x - axis[k]) / (axis[k + 1] - axis[k])).clamp(0.0, 1.0);
    Ok((k, t))
}
