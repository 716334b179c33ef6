//! Limit-theorem harness: cumulant curves and their Legendre transforms,
//! variance and Lyapunov-exponent estimators, CLT / Berry–Esseen / large
//! deviation verdicts, the log-moment inequality scan and the scalar
//! function bounds used for the norm tilt.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::operator::{perron_root, scgf_at, IterationOptions, KernelSkeleton, ScgfEvaluator, Tilt, TiltDomain, TiltFamily};
use crate::projective::{op_norm, projector, ComplexMatrix, ProjectivePoint, C64};
use crate::sampler::{self, trajectory_rng, EnsembleStats, Initial, Observable, RunConfig, Stepper};
use crate::stats::{ks_critical_1pct, ks_distance, ks_null_level, mean_var, normal_cdf};

/// Step of the finite differences at 0.
pub const DERIVATIVE_STEP: f64 = 1e-3;

/// Second differences below `-CONVEXITY_TOL` reject a curve.
pub const CONVEXITY_TOL: f64 = 1e-8;

/// Variances at or below this are treated as a point mass.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

/// Smallest admissible eigenvalue of the averaged projector of a sample.
pub const HYPERPLANE_TOL: f64 = 1e-8;

/// Richardson-extrapolated first and second derivatives at 0, with the
/// difference to the plain central difference as error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Derivatives {
    pub d1: f64,
    pub d1_err: f64,
    pub d2: f64,
    pub d2_err: f64,
}

pub fn derivatives_at_zero<F: FnMut(f64) -> Result<f64>>(mut f: F, h: f64) -> Result<Derivatives> {
    let f0 = f(0.0)?;
    let (p1, m1, p2, m2) = (f(h)?, f(-h)?, f(2.0 * h)?, f(-2.0 * h)?);
    let c1 = (p1 - m1) / (2.0 * h);
    let c1_2 = (p2 - m2) / (4.0 * h);
    let d1 = (4.0 * c1 - c1_2) / 3.0;
    let c2 = (p1 - 2.0 * f0 + m1) / (h * h);
    let c2_2 = (p2 - 2.0 * f0 + m2) / (4.0 * h * h);
    let d2 = (4.0 * c2 - c2_2) / 3.0;
    Ok(Derivatives {
        d1,
        d1_err: (d1 - c1).abs(),
        d2,
        d2_err: (d2 - c2).abs(),
    })
}

/// A sampled cumulant generating function `Λ` or `Υ`.
#[derive(Clone, Debug, Serialize)]
pub struct CumulantCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub derivatives: Option<Derivatives>,
}

impl CumulantCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if grid.len() < 3 {
            return Err(Error::Precondition("a curve needs at least 3 grid points".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("grid must be strictly increasing".into()));
        }
        Ok(Self {
            grid,
            values,
            derivatives: None,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Vec<f64>, f: F) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    /// Normalized second differences `(s_i - s_{i-1}) (g_{i+1} - g_{i-1}) / 2`.
    pub fn second_differences(&self) -> Vec<f64> {
        let g = &self.grid;
        let v = &self.values;
        (1..g.len() - 1)
            .map(|i| {
                let s0 = (v[i] - v[i - 1]) / (g[i] - g[i - 1]);
                let s1 = (v[i + 1] - v[i]) / (g[i + 1] - g[i]);
                (s1 - s0) * (g[i + 1] - g[i - 1]) / 2.0
            })
            .collect()
    }

    pub fn check_convex(&self, tol: f64) -> Result<()> {
        for (i, d) in self.second_differences().into_iter().enumerate() {
            if d < -tol {
                return Err(Error::NonConvex(d, i + 1));
            }
        }
        Ok(())
    }

    /// Slopes at the two grid ends.
    pub fn end_slopes(&self) -> (f64, f64) {
        let g = &self.grid;
        let v = &self.values;
        let n = g.len();
        (
            (v[1] - v[0]) / (g[1] - g[0]),
            (v[n - 1] - v[n - 2]) / (g[n - 1] - g[n - 2]),
        )
    }

    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.grid
            .iter()
            .position(|&g| g == t)
            .map(|i| self.values[i])
    }
}

/// Tilt family curve with Richardson derivatives at 0.
pub fn cumulant_curve(
    skel: &KernelSkeleton,
    family: &TiltFamily,
    grid: &[f64],
    domain: &TiltDomain,
) -> Result<CumulantCurve> {
    let pts = crate::operator::scgf_curve_on(skel, family, grid, domain)?;
    let mut c = CumulantCurve::new(
        pts.iter().map(|p| p.0).collect(),
        pts.iter().map(|p| p.1).collect(),
    )?;
    c.derivatives = Some(derivatives_at_zero(
        |t| scgf_at(skel, family, t, domain),
        DERIVATIVE_STEP,
    )?);
    Ok(c)
}

#[derive(Clone, Debug, Serialize)]
pub struct RateFunction {
    pub x: Vec<f64>,
    /// `+∞` outside the restricted domain.
    pub values: Vec<f64>,
    pub maximizer: Vec<f64>,
    /// Slopes of the curve at its grid ends.
    pub domain: (f64, f64),
    /// The maximizer sits on a grid end, so the value is a lower bound.
    pub at_endpoint: Vec<bool>,
}

/// `sup_θ θx - Λ(θ)` over the grid, with its maximizer index.
fn grid_sup(curve: &CumulantCurve, x: f64) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, (&t, &v)) in curve.grid.iter().zip(&curve.values).enumerate() {
        let val = t * x - v;
        if val > best {
            best = val;
            arg = i;
        }
    }
    (best, arg)
}

pub fn legendre_transform(curve: &CumulantCurve, x_grid: &[f64]) -> Result<RateFunction> {
    curve.check_convex(CONVEXITY_TOL)?;
    let (lo, hi) = curve.end_slopes();
    let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let last = curve.grid.len() - 1;
    let mut values = Vec::with_capacity(x_grid.len());
    let mut maximizer = Vec::with_capacity(x_grid.len());
    let mut at_endpoint = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        if x < lo - slack || x > hi + slack {
            values.push(f64::INFINITY);
            maximizer.push(f64::NAN);
            at_endpoint.push(true);
            continue;
        }
        let (v, i) = grid_sup(curve, x);
        values.push(v.max(0.0));
        maximizer.push(curve.grid[i]);
        at_endpoint.push(i == 0 || i == last);
    }
    Ok(RateFunction {
        x: x_grid.to_vec(),
        values,
        maximizer,
        domain: (lo, hi),
        at_endpoint,
    })
}

/// `I(x)` and `θ*(x)` from a continuous golden-section search of the concave
/// objective `θx - Λ(θ)` on `bracket`.
pub fn rate_at<F: FnMut(f64) -> Result<f64>>(mut lambda: F, x: f64, bracket: (f64, f64)) -> Result<(f64, f64)> {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = bracket;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = c * x - lambda(c)?;
    let mut fd = d * x - lambda(d)?;
    for _ in 0..80 {
        if (b - a).abs() < 1e-7 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = c * x - lambda(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = d * x - lambda(d)?;
        }
    }
    let t = (a + b) / 2.0;
    Ok(((t * x - lambda(t)?).max(0.0), t))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Sigma2Estimates {
    pub batch: f64,
    pub batch_err: f64,
    pub spectral: f64,
    pub spectral_err: f64,
    pub agree: bool,
}

/// Post-burn-in `Var(S_n)/n` across trajectories against `Λ''(0)`.
pub fn sigma2_estimates(stats: &EnsembleStats, spectral: &Derivatives) -> Sigma2Estimates {
    let len = (stats.n_steps - stats.burn_in) as f64;
    let xs: Vec<f64> = stats
        .trajectories
        .iter()
        .map(|r| r.sum_h - r.sum_h_burn)
        .collect();
    let (_, var) = mean_var(&xs);
    let m = xs.len() as f64;
    let batch = var / len;
    let batch_err = batch * (2.0 / (m - 1.0).max(1.0)).sqrt();
    let diff = (batch - spectral.d2).abs();
    let budget = (3.0 * (batch_err.powi(2) + spectral.d2_err.powi(2)).sqrt())
        .max(0.05 * spectral.d2.abs())
        .max(1e-12);
    Sigma2Estimates {
        batch,
        batch_err,
        spectral: spectral.d2,
        spectral_err: spectral.d2_err,
        agree: diff <= budget,
    }
}

/// `Σ_i w_i ||v_i x||² log ||v_i x||` averaged over `points`; the standard
/// error treats each source trajectory as one batch.
pub fn gamma_integral(ins: &Instrument, points: &[ProjectivePoint], sources: &[usize]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::Empty("occupation sample"));
    }
    let mut st = Stepper::new(ins);
    let vals: Vec<f64> = points
        .iter()
        .map(|p| {
            st.compute(p.coords());
            st.probs
                .iter()
                .zip(&st.norms)
                .filter(|(&q, _)| q > 0.0)
                .map(|(q, n)| q * n.ln())
                .sum()
        })
        .collect();
    let (mean, var) = mean_var(&vals);
    let mut batches: Vec<(f64, usize)> = Vec::new();
    let mut last = usize::MAX;
    for (v, &s) in vals.iter().zip(sources) {
        if s != last {
            batches.push((0.0, 0));
            last = s;
        }
        let b = batches.last_mut().expect("pushed");
        b.0 += v;
        b.1 += 1;
    }
    let err = if batches.len() >= 2 && sources.len() == vals.len() {
        let means: Vec<f64> = batches.iter().map(|(s, c)| s / *c as f64).collect();
        let (_, bv) = mean_var(&means);
        (bv / means.len() as f64).sqrt()
    } else {
        (var / vals.len() as f64).sqrt()
    };
    Ok((mean, err))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GammaEstimates {
    pub traj: f64,
    pub traj_err: f64,
    pub integral: f64,
    pub integral_err: f64,
    pub slope: f64,
    pub slope_err: f64,
    /// Largest pairwise discrepancy divided by its budget.
    pub worst_ratio: f64,
    pub consistent: bool,
}

/// Pairwise agreement within `max(3 × combined stderr, floor)`.
fn consistency(estimates: &[(f64, f64)], floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..estimates.len() {
        for j in (i + 1)..estimates.len() {
            let (a, ea) = estimates[i];
            let (b, eb) = estimates[j];
            let budget = (3.0 * (ea * ea + eb * eb).sqrt()).max(floor);
            worst = worst.max((a - b).abs() / budget);
        }
    }
    worst
}

pub fn gamma_estimates(ins: &Instrument, stats: &EnsembleStats, slope: &Derivatives) -> Result<GammaEstimates> {
    let (traj, traj_err) = sampler::lyapunov_estimate(stats)?;
    let (integral, integral_err) = gamma_integral(ins, &stats.occupation, &stats.occupation_source)?;
    let worst = consistency(
        &[
            (traj, traj_err),
            (integral, integral_err),
            (slope.d1, slope.d1_err),
        ],
        1e-3,
    );
    Ok(GammaEstimates {
        traj,
        traj_err,
        integral,
        integral_err,
        slope: slope.d1,
        slope_err: slope.d1_err,
        worst_ratio: worst,
        consistent: worst <= 1.0,
    })
}

/// `Σ w |log ||v||| ||v||²`.
pub fn log_moment(ins: &Instrument) -> f64 {
    ins.atoms()
        .iter()
        .map(|a| {
            let n = op_norm(&a.matrix);
            if n > 0.0 {
                a.weight * n.ln().abs() * n * n
            } else {
                0.0
            }
        })
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub n: Option<usize>,
    pub sample_count: usize,
    pub sigma2: f64,
    pub ks: f64,
    pub threshold: f64,
    pub pass: bool,
    pub degenerate: bool,
}

/// KS test of `samples` against `N(0, σ²)` at level 1%; `σ² ≈ 0` tests a
/// point mass at 0.
pub fn clt_check(samples: &[f64], sigma2: f64) -> Result<CltReport> {
    if samples.is_empty() {
        return Err(Error::Empty("CLT samples"));
    }
    let threshold = ks_critical_1pct(samples.len());
    let degenerate = sigma2 <= DEGENERATE_VARIANCE;
    let ks = if degenerate {
        let snapped: Vec<f64> = samples
            .iter()
            .map(|&x| if x.abs() <= 1e-8 { 0.0 } else { x })
            .collect();
        ks_distance(&snapped, |x| if x < 0.0 { 0.0 } else { 1.0 })
    } else {
        let sd = sigma2.sqrt();
        ks_distance(samples, |x| normal_cdf(x / sd))
    };
    Ok(CltReport {
        n: None,
        sample_count: samples.len(),
        sigma2,
        ks,
        threshold,
        pass: ks <= threshold,
        degenerate,
    })
}

/// `(x_j - mean)/√n` for terminal values `x_j` of length-`n` sums.
pub fn normalized_statistics(values: &[f64], n: usize) -> Vec<f64> {
    let (mean, _) = mean_var(values);
    let s = (n as f64).sqrt();
    values.iter().map(|x| (x - mean) / s).collect()
}

#[derive(Clone, Debug)]
pub enum BeMode {
    Observable(Observable),
    Lyapunov,
    /// i.i.d. centered ±1 steps, a reference with known Berry–Esseen behaviour.
    IidCoin,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BeRow {
    pub n: usize,
    pub distance: f64,
    pub scaled: f64,
    /// `max(0, distance - null level) × scale`: the part not explained by
    /// sampling noise of the empirical CDF.
    pub excess: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BeSeries {
    pub statistic: String,
    /// Scaling exponent: distances are multiplied by `n^exponent`.
    pub exponent: f64,
    pub rows: Vec<BeRow>,
    pub bounded: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BerryEsseenReport {
    pub samples: usize,
    pub null_level: f64,
    pub degenerate: bool,
    pub series: Vec<BeSeries>,
}

/// Growth is flagged only when the noise-corrected scaled column increases
/// strictly at every step and at least doubles overall.
pub fn scaled_column_bounded(rows: &[BeRow]) -> bool {
    if rows.len() < 2 {
        return true;
    }
    let strictly = rows.windows(2).all(|w| w[1].excess > w[0].excess);
    let first = rows[0].excess;
    let last = rows[rows.len() - 1].excess;
    !(strictly && last >= 2.0 * first && last > 0.0)
}

fn be_series(name: &str, exponent: f64, by_n: &[(usize, Vec<f64>)], null: f64, known: Option<(f64, f64)>) -> (BeSeries, bool) {
    let mut degenerate = false;
    let rows: Vec<BeRow> = by_n
        .iter()
        .map(|(n, xs)| {
            let (mean, sd) = match known {
                Some((m, v)) => (m * *n as f64, (v * *n as f64).sqrt()),
                None => {
                    let (m, v) = mean_var(xs);
                    (m, v.sqrt())
                }
            };
            if !(sd > DEGENERATE_VARIANCE.sqrt() * (1.0 + mean.abs())) {
                degenerate = true;
                return BeRow {
                    n: *n,
                    distance: f64::NAN,
                    scaled: f64::NAN,
                    excess: f64::NAN,
                };
            }
            let d = ks_distance(xs, |x| normal_cdf((x - mean) / sd));
            let scale = (*n as f64).powf(exponent);
            BeRow {
                n: *n,
                distance: d,
                scaled: d * scale,
                excess: (d - null).max(0.0) * scale,
            }
        })
        .collect();
    let bounded = !degenerate && scaled_column_bounded(&rows);
    (
        BeSeries {
            statistic: name.to_string(),
            exponent,
            rows,
            bounded,
        },
        degenerate,
    )
}

/// Sup-distance to the normal law of standardized sums at each `n`.
pub fn berry_esseen_scan(
    ins: Option<&Instrument>,
    mode: &BeMode,
    n_list: &[usize],
    m: usize,
    seed: u64,
) -> Result<BerryEsseenReport> {
    if n_list.is_empty() {
        return Err(Error::Empty("n list"));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let nmax = *ns.last().expect("nonempty");
    let null = ks_null_level(m);
    let mut series = Vec::new();
    let mut degenerate = false;
    match mode {
        BeMode::IidCoin => {
            let sums: Vec<Vec<i64>> = (0..m)
                .into_par_iter()
                .map(|j| {
                    let mut rng = trajectory_rng(seed, j);
                    let mut out = Vec::with_capacity(ns.len());
                    let mut s = 0i64;
                    let mut done = 0usize;
                    for &n in &ns {
                        while done < n {
                            let take = (n - done).min(64);
                            let bits = rng.next_u64();
                            let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
                            let ones = (bits & mask).count_ones() as i64;
                            s += 2 * ones - take as i64;
                            done += take;
                        }
                        out.push(s);
                    }
                    out
                })
                .collect();
            let by_n: Vec<(usize, Vec<f64>)> = ns
                .iter()
                .enumerate()
                .map(|(c, &n)| (n, sums.iter().map(|v| v[c] as f64).collect()))
                .collect();
            let (s, d) = be_series("iid-coin", 0.5, &by_n, null, Some((0.0, 1.0)));
            degenerate |= d;
            series.push(s);
        }
        BeMode::Observable(_) | BeMode::Lyapunov => {
            let ins = ins.ok_or_else(|| Error::Precondition("instrument required".into()))?;
            let mut cfg = RunConfig::new(nmax, m, seed);
            cfg.checkpoints = ns.clone();
            cfg.occupation_budget = 0;
            cfg.initial = Initial::Haar;
            let lyap = matches!(mode, BeMode::Lyapunov);
            cfg.track_product = lyap;
            if let BeMode::Observable(h) = mode {
                cfg.observable = h.clone();
            }
            let stats = sampler::run(ins, &cfg)?;
            let column = |f: &dyn Fn(&sampler::Checkpoint) -> f64| -> Vec<(usize, Vec<f64>)> {
                ns.iter()
                    .enumerate()
                    .map(|(c, &n)| {
                        (
                            n,
                            stats.trajectories.iter().map(|r| f(&r.checkpoints[c])).collect(),
                        )
                    })
                    .collect()
            };
            if lyap {
                let (s, d) = be_series("log_norm_wx", 0.5, &column(&|c| c.log_norm), null, None);
                degenerate |= d;
                series.push(s);
                let (s, d) = be_series(
                    "log_norm_w",
                    0.25,
                    &column(&|c| c.log_op_norm.expect("tracked")),
                    null,
                    None,
                );
                degenerate |= d;
                series.push(s);
            } else {
                let (s, d) = be_series("sum_h", 0.5, &column(&|c| c.sum_h), null, None);
                degenerate |= d;
                series.push(s);
            }
        }
    }
    Ok(BerryEsseenReport {
        samples: m,
        null_level: null,
        degenerate,
        series,
    })
}

#[derive(Clone, Debug)]
pub enum LdpMode {
    Observable(Observable),
    Lyapunov,
}

impl LdpMode {
    pub fn family(&self) -> TiltFamily {
        match self {
            LdpMode::Observable(h) => TiltFamily::Observable(h.clone()),
            LdpMode::Lyapunov => TiltFamily::Lyapunov,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LdpMethod {
    Direct,
    ImportanceSampling,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LdpRow {
    pub n: usize,
    pub method: LdpMethod,
    pub p_hat: f64,
    pub p_stderr: f64,
    pub hits: usize,
    /// `-(1/n) log p_hat`.
    pub rate_hat: f64,
    pub rate: f64,
    pub rel_err: f64,
    pub unreachable: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpReport {
    pub a: f64,
    pub rate: f64,
    pub theta_star: f64,
    /// Slopes of the cumulant curve at the ends of the tilt bracket.
    pub restricted_domain: (f64, f64),
    pub in_domain: bool,
    pub rows: Vec<LdpRow>,
    /// Relative error at the largest `n` with a reachable estimate.
    pub final_rel_err: Option<f64>,
    pub within_target: bool,
}

pub const LDP_TARGET: f64 = 0.15;

/// Mesh data for one exponential change of measure.
struct Proposal<'a> {
    skel: &'a KernelSkeleton,
    theta: f64,
    /// Log of the right Perron vector of the tilted kernel at the nodes.
    log_r: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Increment {
    Observable,
    LogNorm,
}

/// One path of length `n` under the (possibly tilted) proposal; returns the
/// sum and the log likelihood ratio `log dP/dQ`.
fn ldp_path(
    st: &mut Stepper<'_>,
    h: Option<&Observable>,
    kind: Increment,
    prop: Option<&Proposal<'_>>,
    x: &mut Vec<C64>,
    n: usize,
    rng: &mut ChaCha8Rng,
    buf: &mut PathBuffers,
) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut log_lr = 0.0;
    for _ in 0..n {
        let total = st.compute(x);
        if total < 1e-14 {
            return Err(Error::Degenerate("transition weights vanish".into()));
        }
        buf.q.clear();
        buf.inc.clear();
        buf.lr.clear();
        let mut z = 0.0;
        for i in 0..st.probs.len() {
            let p = st.probs[i];
            if p <= 0.0 {
                buf.q.push(0.0);
                buf.inc.push(0.0);
                buf.lr.push(0.0);
                continue;
            }
            let inv = 1.0 / st.norms[i];
            buf.y.clear();
            buf.y.extend(st.images[i].iter().map(|c| c * inv));
            let inc = match kind {
                Increment::LogNorm => st.norms[i].ln(),
                Increment::Observable => h.expect("observable").eval_coords(&buf.y),
            };
            let (q, lr) = match prop {
                None => (p, 0.0),
                Some(pr) => {
                    let lr = pr.log_r[pr.skel.mesh().nearest_coords(&buf.y)];
                    (p * (pr.theta * inc + lr).exp(), lr)
                }
            };
            z += q;
            buf.q.push(q);
            buf.inc.push(inc);
            buf.lr.push(lr);
        }
        let u: f64 = rng.random();
        let i = sampler::choose_index(&buf.q, u * z);
        if let Some(pr) = prop {
            log_lr += z.ln() - pr.theta * buf.inc[i] - buf.lr[i];
        }
        sum += buf.inc[i];
        st.move_to(i, x);
    }
    Ok((sum, log_lr))
}

#[derive(Default)]
struct PathBuffers {
    y: Vec<C64>,
    q: Vec<f64>,
    inc: Vec<f64>,
    lr: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn ldp_estimate(
    ins: &Instrument,
    mode: &LdpMode,
    a: f64,
    n: usize,
    m: usize,
    seed: u64,
    prop: Option<&Proposal<'_>>,
) -> Result<(f64, f64, usize)> {
    let (h, kind) = match mode {
        LdpMode::Observable(h) => (Some(h), Increment::Observable),
        LdpMode::Lyapunov => (None, Increment::LogNorm),
    };
    let k = ins.dim();
    let vals: Vec<(f64, bool)> = (0..m)
        .into_par_iter()
        .map_init(
            || (Stepper::new(ins), PathBuffers::default()),
            |(st, scratch), j| {
                let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
                init.set_stream(j as u64);
                let mut x = ProjectivePoint::haar(k, &mut init).coords().to_vec();
                let mut rng = trajectory_rng(seed, j);
                let (s, log_lr) = ldp_path(st, h, kind, prop, &mut x, n, &mut rng, scratch)?;
                let hit = s >= n as f64 * a;
                Ok((if hit { log_lr.exp() } else { 0.0 }, hit))
            },
        )
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let hits = vals.iter().filter(|v| v.1).count();
    let (mean, var) = mean_var(&xs);
    Ok((mean, (var / m as f64).sqrt(), hits))
}

/// Empirical decay rates of `P[S_n/n ≥ a]` against the Legendre rate,
/// directly and under the exponential change of measure at `θ*(a)`.
#[allow(clippy::too_many_arguments)]
pub fn ldp_check(
    ins: &Instrument,
    mode: &LdpMode,
    a: f64,
    n_list: &[usize],
    m: usize,
    seed: u64,
    skel: &KernelSkeleton,
    bracket: (f64, f64),
    domain: &TiltDomain,
    methods: &[LdpMethod],
) -> Result<LdpReport> {
    let mut lam = ScgfEvaluator::new(skel, mode.family(), *domain);
    let e = 1e-4;
    let lo = (lam.eval(bracket.0 + 2.0 * e)? - lam.eval(bracket.0)?) / (2.0 * e);
    let hi = (lam.eval(bracket.1)? - lam.eval(bracket.1 - 2.0 * e)?) / (2.0 * e);
    let slack = 1e-9 * (1.0 + a.abs());
    let in_domain = a >= lo - slack && a <= hi + slack;
    let (rate, theta_star) = if in_domain {
        rate_at(|t| lam.eval(t), a, bracket)?
    } else {
        (f64::INFINITY, f64::NAN)
    };
    let proposal = if in_domain && methods.contains(&LdpMethod::ImportanceSampling) {
        let tilt = match mode {
            LdpMode::Observable(h) => Tilt::Observable {
                theta: theta_star,
                h: h.clone(),
            },
            LdpMode::Lyapunov => Tilt::Lyapunov { s: theta_star },
        };
        let kern = skel.tilted(tilt, domain)?;
        let (_, r) = perron_root(&kern, None, IterationOptions::default())?;
        if r.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Eigensolver("Perron vector is not positive".into()));
        }
        Some(Proposal {
            skel,
            theta: theta_star,
            log_r: r.iter().map(|v| v.ln()).collect(),
        })
    } else {
        None
    };
    let mut rows = Vec::new();
    for &method in methods {
        for &n in n_list {
            let prop = match method {
                LdpMethod::Direct => None,
                LdpMethod::ImportanceSampling => match &proposal {
                    Some(p) => Some(p),
                    None => continue,
                },
            };
            let (p, se, hits) = ldp_estimate(ins, mode, a, n, m, seed, prop)?;
            let unreachable = hits < 10 || !(p > 0.0);
            let rate_hat = if p > 0.0 { -p.ln() / n as f64 } else { f64::INFINITY };
            let rel_err = if rate > 0.0 && rate.is_finite() {
                (rate_hat - rate).abs() / rate
            } else {
                rate_hat.abs()
            };
            rows.push(LdpRow {
                n,
                method,
                p_hat: p,
                p_stderr: se,
                hits,
                rate_hat,
                rate,
                rel_err,
                unreachable,
            });
        }
    }
    let final_rel_err = rows
        .iter()
        .filter(|r| !r.unreachable)
        .max_by_key(|r| (r.n, r.method == LdpMethod::ImportanceSampling))
        .map(|r| r.rel_err);
    Ok(LdpReport {
        a,
        rate,
        theta_star,
        restricted_domain: (lo, hi),
        in_domain,
        rows,
        final_rel_err,
        within_target: final_rel_err.is_some_and(|e| e <= LDP_TARGET),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct IneqLogReport {
    pub s: f64,
    pub trials: usize,
    pub min_r: f64,
    pub max_r: f64,
    pub argmin: ComplexMatrix,
    pub argmax: ComplexMatrix,
    pub smallest_eigenvalue: f64,
}

/// Smallest eigenvalue of `(1/N) Σ π_x̂`; errors when the sample sits in a
/// hyperplane.
pub fn hyperplane_check(points: &[ProjectivePoint], tol: f64) -> Result<f64> {
    let first = points.first().ok_or(Error::Empty("sample"))?;
    let k = first.dim();
    let mut acc = DMatrix::<C64>::zeros(k, k);
    for p in points {
        acc += projector(p).matrix();
    }
    acc /= C64::new(points.len() as f64, 0.0);
    let (vals, _) = crate::linalg::hermitian_eigen(&acc);
    let smallest = *vals.last().expect("k >= 1");
    if smallest <= tol {
        return Err(Error::HyperplaneDegenerate(smallest));
    }
    Ok(smallest)
}

/// `R_s(v) = ∫||vx||^{s+2} dν / (||v||^s ∫||vx||² dν)` over random unit-norm `v`.
pub fn ineqlog_scan(points: &[ProjectivePoint], s: f64, trials: usize, seed: u64) -> Result<IneqLogReport> {
    if !(s > -2.0) {
        return Err(Error::Precondition(format!("s must exceed -2, got {s}")));
    }
    if trials == 0 {
        return Err(Error::Empty("trials"));
    }
    let smallest = hyperplane_check(points, HYPERPLANE_TOL)?;
    let k = points[0].dim();
    let results: Vec<(f64, ComplexMatrix)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trajectory_rng(seed, t);
            let raw = DMatrix::<C64>::from_fn(k, k, |_, _| {
                C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let v = ComplexMatrix::new(raw).expect("finite");
            let v = v.scale_real(1.0 / op_norm(&v));
            let (mut num, mut den) = (0.0, 0.0);
            for p in points {
                let n2: f64 = v.apply(p.coords()).iter().map(|z| z.norm_sqr()).sum();
                den += n2;
                num += n2.powf((s + 2.0) / 2.0);
            }
            (num / den, v)
        })
        .collect();
    let (imin, imax) = results.iter().enumerate().fold((0, 0), |(lo, hi), (i, r)| {
        (
            if r.0 < results[lo].0 { i } else { lo },
            if r.0 > results[hi].0 { i } else { hi },
        )
    });
    Ok(IneqLogReport {
        s,
        trials,
        min_r: results[imin].0,
        max_r: results[imax].0,
        argmin: results[imin].1.clone(),
        argmax: results[imax].1.clone(),
        smallest_eigenvalue: smallest,
    })
}

/// `F_{n,z}(t) = log^n t · e^{z log t}`, continued by `F(0) = 0`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScalarF {
    pub n: u32,
    pub z: C64,
}

impl ScalarF {
    pub fn new(n: u32, z: C64) -> Result<Self> {
        if !(z.re > 0.0) {
            return Err(Error::Precondition(format!("Re z must be positive, got {}", z.re)));
        }
        Ok(Self { n, z })
    }

    pub fn eval(&self, t: f64) -> C64 {
        if t == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let l = t.ln();
        (self.z * l).exp() * l.powi(self.n as i32)
    }

    /// `F'(t) = log^{n-1} t · e^{(z-1) log t} (z log t + n)`.
    pub fn derivative(&self, t: f64) -> C64 {
        let l = t.ln();
        let base = ((self.z - 1.0) * l).exp() * (self.z * l + self.n as f64);
        if self.n == 0 {
            return ((self.z - 1.0) * l).exp() * self.z;
        }
        base * l.powi(self.n as i32 - 1)
    }
}

/// `K(n,z,t,θ) = n^n e^{-(n-1)} max(2|z| (Re z - 1)^{-n}, (|z|+θ) t^{Re z - 1 + θ} θ^{-n})`.
pub fn k_constant(n: u32, z: C64, t: f64, theta: f64) -> f64 {
    let nf = n as f64;
    let pre = nf.powf(nf) * (-(nf - 1.0)).exp();
    let a = 2.0 * z.norm() * (z.re - 1.0).powf(-nf);
    let b = (z.norm() + theta) * t.powf(z.re - 1.0 + theta) * theta.powf(-nf);
    pre * a.max(b)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub checked: usize,
    /// Largest `lhs / rhs` seen.
    pub worst_ratio: f64,
    pub pass: bool,
    pub skipped: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalarReport {
    pub checks: Vec<BoundCheck>,
    pub pass: bool,
}

struct Tally {
    checked: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self { checked: 0, worst: 0.0 }
    }

    fn add(&mut self, lhs: f64, rhs: f64) {
        self.checked += 1;
        let r = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        self.worst = self.worst.max(r);
    }

    fn finish(self, name: &str) -> BoundCheck {
        BoundCheck {
            name: name.to_string(),
            checked: self.checked,
            worst_ratio: self.worst,
            pass: self.worst <= 1.0 + 1e-12,
            skipped: false,
        }
    }
}

fn skipped(name: &str) -> BoundCheck {
    BoundCheck {
        name: name.to_string(),
        checked: 0,
        worst_ratio: 0.0,
        pass: true,
        skipped: true,
    }
}

/// Checks the sup bound, the derivative bound (when `Re z > 1`), the Hölder
/// bound for each `r` in `r_list` and the Hölder bound of `t ↦ t^z` on
/// `t_grid`, for `1 ≤ n ≤ n_max`.
pub fn scalar_f_checks(n_max: u32, z: C64, theta: f64, t_grid: &[f64], r_list: &[f64]) -> Result<ScalarReport> {
    if !(z.re > 0.0) {
        return Err(Error::Precondition(format!("Re z must be positive, got {}", z.re)));
    }
    if !(theta > 0.0) {
        return Err(Error::Precondition(format!("θ must be positive, got {theta}")));
    }
    if let Some(&r) = r_list.iter().find(|&&r| !(r > 0.0 && r <= 1.0 && z.re > r)) {
        return Err(Error::Precondition(format!(
            "Hölder exponent r = {r} needs 0 < r <= 1 and r < Re z = {}",
            z.re
        )));
    }
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Precondition("t grid must be positive".into()));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let nf = |n: u32| n as f64;

    let mut sup = Tally::new();
    for n in 1..=n_max {
        let f = ScalarF::new(n, z)?;
        let peak = (-nf(n) / z.re).exp();
        for &t in &grid {
            let mut lhs = 0.0f64;
            for &s in grid.iter().take_while(|&&s| s <= t) {
                lhs = lhs.max(f.eval(s).norm());
            }
            if peak <= t {
                lhs = lhs.max(f.eval(peak).norm());
            }
            let e = (-nf(n)).exp();
            let rhs = (e * (nf(n) / z.re).powf(nf(n)))
                .max(e * (nf(n) / theta).powf(nf(n)) * t.powf(z.re + theta));
            sup.add(lhs, rhs);
        }
    }

    let deriv = if z.re > 1.0 {
        let mut d = Tally::new();
        for n in 1..=n_max {
            let f = ScalarF::new(n, z)?;
            for &t in &grid {
                for &s in grid.iter().take_while(|&&s| s < t) {
                    d.add(f.derivative(s).norm(), k_constant(n, z, t, theta));
                }
            }
        }
        d.finish("derivative")
    } else {
        skipped("derivative")
    };

    let mut holder = Tally::new();
    for &r in r_list {
        for n in 1..=n_max {
            let f = ScalarF::new(n, z)?;
            for (j, &t) in grid.iter().enumerate() {
                let kc = r.powf(-nf(n)) * k_constant(n, z / r, t.powf(r), theta);
                for s in std::iter::once(0.0).chain(grid[..j].iter().copied()) {
                    holder.add((f.eval(t) - f.eval(s)).norm(), kc * (t - s).powf(r));
                }
            }
        }
    }

    let alpha = z.re.min(1.0);
    let beta = z.re.max(1.0);
    let tmax = *grid.last().expect("nonempty");
    let coef = z.norm() / alpha * tmax.powf(beta - 1.0);
    let mut power = Tally::new();
    let pw = |t: f64| if t == 0.0 { C64::new(0.0, 0.0) } else { (z * t.ln()).exp() };
    for (j, &t) in grid.iter().enumerate() {
        for s in std::iter::once(0.0).chain(grid[..j].iter().copied()) {
            power.add((pw(t) - pw(s)).norm(), coef * (t - s).powf(alpha));
        }
    }

    let checks = vec![
        sup.finish("sup"),
        deriv,
        if r_list.is_empty() {
            skipped("holder")
        } else {
            holder.finish("holder")
        },
        power.finish("power-holder"),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(ScalarReport { checks, pass })
}
