//! Leading spectra and Perron roots of discretized kernels.

use nalgebra::DMatrix;
use serde::Serialize;

use super::kernel::DiscretizedKernel;
use crate::error::{Error, Result};
use crate::linalg::eigenvalues_real;
use crate::projective::C64;

/// Largest kernel size handled by the dense eigensolver.
pub const DENSE_LIMIT: usize = 2000;

pub const MAX_COUNT: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    /// Sorted by decreasing modulus.
    pub eigenvalues: Vec<C64>,
    /// `1 - |λ₂| / |λ₁|`.
    pub gap: f64,
    /// Number of distinct eigenvalues with `|λ| > |λ₁| (1 - gap_tol)`, values
    /// closer than `|λ₁| gap_tol` counted once.
    pub period_estimate: usize,
    pub method: String,
}

#[derive(Clone, Copy, Debug)]
pub struct IterationOptions {
    pub max_iterations: usize,
    pub tol: f64,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tol: 1e-12,
        }
    }
}

fn sort_by_modulus(v: &mut [C64]) {
    v.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)).then(b.im.total_cmp(&a.im)));
}

fn report(mut vals: Vec<C64>, count: usize, gap_tol: f64, method: &str) -> SpectrumReport {
    sort_by_modulus(&mut vals);
    let lead = vals.first().map(|z| z.norm()).unwrap_or(0.0);
    let second = vals.get(1).map(|z| z.norm()).unwrap_or(0.0);
    let gap = if lead > 0.0 { 1.0 - second / lead } else { 0.0 };
    let mut distinct: Vec<C64> = Vec::new();
    for z in vals.iter().filter(|z| z.norm() > lead * (1.0 - gap_tol)) {
        if distinct.iter().all(|d| (d - z).norm() > lead * gap_tol) {
            distinct.push(*z);
        }
    }
    let period_estimate = distinct.len();
    vals.truncate(count);
    SpectrumReport {
        eigenvalues: vals,
        gap,
        period_estimate,
        method: method.to_string(),
    }
}

/// The `count` eigenvalues of largest modulus; `gap_tol` sets the peripheral
/// window for the period estimate.
pub fn leading_spectrum(kernel: &DiscretizedKernel, count: usize, gap_tol: f64) -> Result<SpectrumReport> {
    leading_spectrum_with(kernel, count, gap_tol, IterationOptions::default())
}

pub fn leading_spectrum_with(
    kernel: &DiscretizedKernel,
    count: usize,
    gap_tol: f64,
    opts: IterationOptions,
) -> Result<SpectrumReport> {
    if count == 0 || count > MAX_COUNT {
        return Err(Error::Precondition(format!(
            "count must lie in 1..={MAX_COUNT}, got {count}"
        )));
    }
    let n = kernel.len();
    if n <= DENSE_LIMIT {
        let vals = eigenvalues_real(n, &kernel.to_dense())?;
        Ok(report(vals, count.max(2), gap_tol, "dense").truncated(count))
    } else {
        let vals = arnoldi_leading(kernel, count.max(2) + 2, opts)?;
        Ok(report(vals, count.max(2), gap_tol, "arnoldi").truncated(count))
    }
}

impl SpectrumReport {
    fn truncated(mut self, count: usize) -> Self {
        self.eigenvalues.truncate(count);
        self
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leading Ritz values from restarted Arnoldi with a deterministic start.
fn arnoldi_leading(kernel: &DiscretizedKernel, want: usize, opts: IterationOptions) -> Result<Vec<C64>> {
    let n = kernel.len();
    let m = (8 * want).clamp(40, 160).min(n);
    let mut start: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    let mut prev: Option<Vec<C64>> = None;
    let restarts = (opts.max_iterations / m).max(1);
    let mut last_change = f64::INFINITY;
    for _ in 0..restarts {
        let (h, basis, kdim) = arnoldi(kernel, &start, m);
        let hm = DMatrix::<C64>::from_fn(kdim, kdim, |i, j| C64::new(h[(i, j)], 0.0));
        let (vals, vecs) = crate::linalg::eigen_complex(&hm)?;
        let mut idx: Vec<usize> = (0..kdim).collect();
        idx.sort_by(|&a, &b| vals[b].norm().total_cmp(&vals[a].norm()));
        let ritz: Vec<C64> = idx.iter().take(want).map(|&i| vals[i]).collect();
        if kdim < m {
            return Ok(ritz);
        }
        if let Some(p) = &prev {
            last_change = ritz
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if last_change < opts.tol.max(1e-10) {
                return Ok(ritz);
            }
        }
        prev = Some(ritz);
        // Restart from the real combination of the wanted Ritz vectors.
        let mut next = vec![0.0; n];
        for &i in idx.iter().take(want) {
            let y = vecs.column(i);
            for (j, col) in basis.iter().enumerate().take(kdim) {
                let c = y[j];
                let w = c.re + c.im;
                for (t, v) in next.iter_mut().zip(col) {
                    *t += w * v;
                }
            }
        }
        let nn = dot(&next, &next).sqrt();
        if nn == 0.0 || !nn.is_finite() {
            break;
        }
        start = next.into_iter().map(|v| v / nn).collect();
    }
    Err(Error::NotConverged {
        iterations: opts.max_iterations,
        last_change,
    })
}

/// Arnoldi factorization of size `m`; returns `H`, the basis and the
/// achieved dimension (smaller on breakdown).
fn arnoldi(kernel: &DiscretizedKernel, start: &[f64], m: usize) -> (DMatrix<f64>, Vec<Vec<f64>>, usize) {
    let n = kernel.len();
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let nn = dot(start, start).sqrt();
    basis.push(start.iter().map(|v| v / nn).collect());
    let mut w = vec![0.0; n];
    for j in 0..m {
        kernel.apply_into(&basis[j], &mut w);
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c = dot(&w, b);
                h[(i, j)] += c;
                for (t, v) in w.iter_mut().zip(b) {
                    *t -= c * v;
                }
            }
        }
        let nw = dot(&w, &w).sqrt();
        h[(j + 1, j)] = nw;
        if nw < 1e-13 {
            return (h.view((0, 0), (j + 1, j + 1)).into_owned(), basis, j + 1);
        }
        basis.push(w.iter().map(|v| v / nw).collect());
    }
    (h.view((0, 0), (m, m)).into_owned(), basis, m)
}

/// Perron root and nonnegative right eigenvector by shifted power iteration.
pub fn perron_root(
    kernel: &DiscretizedKernel,
    init: Option<&[f64]>,
    opts: IterationOptions,
) -> Result<(f64, Vec<f64>)> {
    let n = kernel.len();
    let sums = kernel.row_sums();
    let mut shift = sums.iter().sum::<f64>() / n as f64;
    if !(shift > 0.0) {
        shift = 1.0;
    }
    let mut v: Vec<f64> = match init {
        Some(x) if x.len() == n && x.iter().all(|&t| t > 0.0) => x.to_vec(),
        _ => vec![1.0; n],
    };
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|t| *t /= total);
    let mut w = vec![0.0; n];
    let mut est = f64::NAN;
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        kernel.apply_into(&v, &mut w);
        let kv: f64 = w.iter().sum();
        let lam = kv;
        for (t, x) in w.iter_mut().zip(&v) {
            *t += shift * x;
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Eigensolver("power iteration collapsed".into()));
        }
        for (x, t) in v.iter_mut().zip(&w) {
            *x = t / s;
        }
        if est.is_finite() {
            last_change = ((lam - est) / lam).abs();
            if last_change < opts.tol {
                let mut r = vec![0.0; n];
                kernel.apply_into(&v, &mut r);
                let rho = r.iter().sum::<f64>();
                return Ok((rho, v));
            }
        }
        est = lam;
    }
    Err(Error::NotConverged {
        iterations: opts.max_iterations,
        last_change,
    })
}
