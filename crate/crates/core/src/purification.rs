//! The contraction diagnostic `g(n) = ∫ ||∧²W_n|| dμ^{⊗n}` and a
//! three-valued purification verdict built on it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::projective::{wedge_norm, ComplexMatrix, C64};

/// Maximal number of index sequences enumerated by [`g_exact`].
pub const G_EXACT_BUDGET: f64 = 1e7;

const MC_CHUNK: usize = 1024;

/// Floor on the decay margin so exact non-decaying series are not flagged
/// by rounding.
const DECAY_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum GMethod {
    Exact,
    MonteCarlo { stderr: Vec<f64> },
}

#[derive(Clone, Debug, Serialize)]
pub struct GSeries {
    /// `g(1), …, g(N)`.
    pub values: Vec<f64>,
    pub method: GMethod,
    pub lambda_hat: f64,
    pub decaying: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PurDiagnostic {
    pub decaying: bool,
    pub lambda_hat: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct PurVerdict {
    pub verdict: Verdict,
    pub witness: Option<ComplexMatrix>,
    /// True when the verdict rests on the decay fit rather than an exact argument.
    pub heuristic: bool,
    pub diagnostic: Option<PurDiagnostic>,
}

fn check_budget(ins: &Instrument, n: usize) -> Result<()> {
    let requested = (ins.len() as f64).powi(n as i32);
    if requested > G_EXACT_BUDGET {
        return Err(Error::BudgetExceeded {
            requested,
            budget: G_EXACT_BUDGET,
        });
    }
    Ok(())
}

/// Depth-first accumulation of `Σ ∏w ||∧²W_j||` into `acc[j-1]`, `j ≤ acc.len()`.
fn accumulate(ins: &Instrument, w: &DMatrix<C64>, weight: f64, depth: usize, acc: &mut [f64]) {
    if depth == acc.len() {
        return;
    }
    for a in ins.atoms() {
        let next = a.matrix.matrix() * w;
        let wt = weight * a.weight;
        acc[depth] += wt * wedge_norm(&next);
        accumulate(ins, &next, wt, depth + 1, acc);
    }
}

/// Exact `g(1), …, g(nmax)` by enumeration of all index sequences.
pub fn g_series_exact(ins: &Instrument, nmax: usize) -> Result<Vec<f64>> {
    check_budget(ins, nmax)?;
    if nmax == 0 {
        return Ok(Vec::new());
    }
    let partial: Vec<Vec<f64>> = ins
        .atoms()
        .par_iter()
        .map(|a| {
            let mut acc = vec![0.0; nmax];
            let w = a.matrix.matrix().clone();
            acc[0] += a.weight * wedge_norm(&w);
            accumulate(ins, &w, a.weight, 1, &mut acc);
            acc
        })
        .collect();
    let mut out = vec![0.0; nmax];
    for p in partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out)
}

/// `g(n)`; `g(0) = ||∧² Id||`.
pub fn g_exact(ins: &Instrument, n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(wedge_norm(&DMatrix::identity(ins.dim(), ins.dim())));
    }
    Ok(*g_series_exact(ins, n)?.last().expect("n >= 1"))
}

/// One draw of `||∧²W_n|| k / tr(W_n* W_n)` under the trace-tilted law.
fn g_mc_draw(ins: &Instrument, n: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = ins.dim();
    let mut w = DMatrix::<C64>::identity(k, k);
    let mut probs = vec![0.0; ins.len()];
    let mut cands: Vec<DMatrix<C64>> = Vec::with_capacity(ins.len());
    for _ in 0..n {
        cands.clear();
        let mut total = 0.0;
        for (i, a) in ins.atoms().iter().enumerate() {
            let c = a.matrix.matrix() * &w;
            probs[i] = a.weight * c.norm_squared();
            total += probs[i];
            cands.push(c);
        }
        if !(total > 0.0) {
            return Err(Error::Degenerate("all propagation weights vanish".into()));
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut idx = ins.len() - 1;
        let mut cum = 0.0;
        for (i, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                idx = i;
                break;
            }
        }
        w = cands.swap_remove(idx);
        let f = w.norm();
        if !(1e-50..=1e50).contains(&f) {
            w /= C64::new(f, 0.0);
        }
    }
    let tr = w.norm_squared();
    Ok(wedge_norm(&w) * k as f64 / tr)
}

/// Importance-sampled `g(n)` with its standard error.
pub fn g_mc(ins: &Instrument, n: usize, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 100 {
        return Err(Error::Precondition(format!(
            "g_mc needs at least 100 samples, got {samples}"
        )));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..count {
                let x = g_mc_draw(ins, n, &mut rng)?;
                s += x;
                s2 += x * x;
            }
            Ok((s, s2))
        })
        .collect::<Result<_>>()?;
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let m = samples as f64;
    let mean = s / m;
    let var = ((s2 / m - mean * mean) * m / (m - 1.0)).max(0.0);
    Ok((mean, (var / m).sqrt()))
}

/// Log-linear least squares on the tail half of `g(1..N)`.
pub fn pur_diagnostic(values: &[f64]) -> Result<PurDiagnostic> {
    let len = values.len();
    if len < 6 {
        return Err(Error::Precondition(format!(
            "decay fit needs at least 6 values, got {len}"
        )));
    }
    if let Some(i) = values.iter().position(|&g| !(g > 0.0)) {
        return Err(Error::NonPositive { n: i + 1 });
    }
    let start = len / 2;
    let pts: Vec<(f64, f64)> = (start..len)
        .map(|i| ((i + 1) as f64, values[i].ln()))
        .collect();
    let m = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se_slope = if m > 2.0 {
        (rss / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let lambda_hat = slope.exp();
    let stderr = lambda_hat * se_slope;
    Ok(PurDiagnostic {
        decaying: lambda_hat < 1.0 - (3.0 * stderr).max(DECAY_FLOOR),
        lambda_hat,
        stderr,
    })
}

impl GSeries {
    pub fn exact(ins: &Instrument, nmax: usize) -> Result<Self> {
        let values = g_series_exact(ins, nmax)?;
        Self::from_values(values, GMethod::Exact)
    }

    pub fn monte_carlo(ins: &Instrument, nmax: usize, samples: usize, seed: u64) -> Result<Self> {
        let mut values = Vec::with_capacity(nmax);
        let mut errs = Vec::with_capacity(nmax);
        for n in 1..=nmax {
            let (g, e) = g_mc(ins, n, samples, seed.wrapping_add(n as u64))?;
            values.push(g);
            errs.push(e);
        }
        Self::from_values(values, GMethod::MonteCarlo { stderr: errs })
    }

    fn from_values(values: Vec<f64>, method: GMethod) -> Result<Self> {
        let diag = if values.len() >= 6 && values.iter().all(|&g| g > 0.0) {
            pur_diagnostic(&values)?
        } else {
            PurDiagnostic {
                decaying: values.iter().any(|&g| g == 0.0),
                lambda_hat: f64::NAN,
                stderr: f64::NAN,
            }
        };
        Ok(Self {
            values,
            method,
            lambda_hat: diag.lambda_hat,
            decaying: diag.decaying,
        })
    }
}

/// Every atom acting conformally (`v*v ∝ Id`) witnesses failure with `π = Id`;
/// exact vanishing or geometric decay of `g` is taken as evidence for it.
pub fn pur_necessary_check(ins: &Instrument) -> PurVerdict {
    let k = ins.dim();
    let conformal = ins.atoms().iter().all(|a| {
        let m = a.matrix.matrix();
        let g = m.adjoint() * m;
        let c = g.trace() / C64::new(k as f64, 0.0);
        (g - DMatrix::<C64>::identity(k, k) * c).norm() <= 1e-10 * (1.0 + c.norm())
    });
    if conformal && k >= 2 {
        return PurVerdict {
            verdict: Verdict::Fails,
            witness: Some(ComplexMatrix::identity(k)),
            heuristic: false,
            diagnostic: None,
        };
    }
    let mut n = 8;
    while n >= 6 && check_budget(ins, n).is_err() {
        n -= 1;
    }
    let series = match g_series_exact(ins, n) {
        Ok(s) if n >= 6 => s,
        _ => {
            return PurVerdict {
                verdict: Verdict::Inconclusive,
                witness: None,
                heuristic: true,
                diagnostic: None,
            }
        }
    };
    if series.iter().any(|&g| g == 0.0) {
        return PurVerdict {
            verdict: Verdict::Holds,
            witness: None,
            heuristic: false,
            diagnostic: None,
        };
    }
    match pur_diagnostic(&series) {
        Ok(d) => PurVerdict {
            verdict: if d.decaying {
                Verdict::Holds
            } else {
                Verdict::Inconclusive
            },
            witness: None,
            heuristic: true,
            diagnostic: Some(d),
        },
        Err(_) => PurVerdict {
            verdict: Verdict::Inconclusive,
            witness: None,
            heuristic: true,
            diagnostic: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{builtin, projective_measurement, standard_builtins};

    #[test]
    fn g_exact_examples() {
        let uni = builtin("UNI", &[0.7]).unwrap();
        for v in g_series_exact(&uni, 6).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let ad = builtin("AD", &[0.36]).unwrap();
        let s = g_series_exact(&ad, 12).unwrap();
        for (i, v) in s.iter().enumerate() {
            assert!((v - 0.8f64.powi(i as i32 + 1)).abs() < 1e-12);
        }
        assert!(matches!(
            g_exact(&ad, 24),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn sub_multiplicative_and_moment_bound() {
        for ins in standard_builtins() {
            let g = g_series_exact(&ins, 8).unwrap();
            let moment = ins.second_moment();
            for m in 1..8 {
                for n in 1..=(8 - m) {
                    assert!(g[m + n - 1] <= g[m - 1] * g[n - 1] + 1e-10, "{}", ins.label());
                }
            }
            for (i, v) in g.iter().enumerate() {
                assert!(*v <= moment.powi(i as i32 + 1) + 1e-12);
            }
        }
    }

    #[test]
    fn g_mc_examples() {
        let ad = builtin("AD", &[0.36]).unwrap();
        let (g, se) = g_mc(&ad, 10, 10_000, 4).unwrap();
        assert!((g - 0.8f64.powi(10)).abs() <= 3.0 * se, "{g} {se}");

        let uni = builtin("UNI", &[0.7]).unwrap();
        let (g, se) = g_mc(&uni, 25, 200, 1).unwrap();
        assert!((g - 1.0).abs() < 1e-12 && se < 1e-12);

        for ins in standard_builtins() {
            for n in [1, 3, 6] {
                let exact = g_exact(&ins, n).unwrap();
                let (g, se) = g_mc(&ins, n, 4000, 9).unwrap();
                assert!((g - exact).abs() <= 3.0 * se + 1e-12, "{} n={n}", ins.label());
            }
        }
        assert_eq!(g_mc(&ad, 5, 3000, 2).unwrap(), g_mc(&ad, 5, 3000, 2).unwrap());
        assert!(matches!(g_mc(&ad, 5, 10, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn diagnostic_examples() {
        let ad = GSeries::exact(&builtin("AD", &[0.36]).unwrap(), 12).unwrap();
        assert!(ad.decaying);
        assert!((ad.lambda_hat - 0.8).abs() < 0.01);
        let uni = GSeries::exact(&builtin("UNI", &[0.7]).unwrap(), 12).unwrap();
        assert!(!uni.decaying);
        assert!((uni.lambda_hat - 1.0).abs() < 1e-9);
        let pndm = GSeries::exact(&builtin("PNDM", &[0.3]).unwrap(), 10).unwrap();
        assert!(pndm.decaying);
        assert!(pur_diagnostic(&[1.0; 5]).is_err());
        assert!(matches!(
            pur_diagnostic(&[1.0, 0.5, 0.0, 0.1, 0.1, 0.1]),
            Err(Error::NonPositive { n: 3 })
        ));
    }

    #[test]
    fn verdict_examples() {
        let uni = pur_necessary_check(&builtin("UNI", &[0.7]).unwrap());
        assert_eq!(uni.verdict, Verdict::Fails);
        assert_eq!(uni.witness.unwrap(), ComplexMatrix::identity(2));
        assert_eq!(
            pur_necessary_check(&builtin("AD", &[0.36]).unwrap()).verdict,
            Verdict::Holds
        );
        let pvm = pur_necessary_check(&projective_measurement());
        assert_eq!(pvm.verdict, Verdict::Holds);
        assert!(!pvm.heuristic);
        assert_eq!(g_exact(&projective_measurement(), 3).unwrap(), 0.0);
    }
}
