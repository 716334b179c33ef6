//! Simulation of the chain `x̂_{n+1} = V_n · x̂_n`, products `W_n`, the sums
//! `S_n(h)` and `log ||W_n x||`, occupation samples, and exact enumeration
//! of small-`n` laws.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::QuadraticObservable;
use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::operator::mesh::Mesh;
use crate::projective::{norm, ComplexMatrix, ProjectivePoint, C64, NULL_IMAGE_THRESHOLD};

/// Budget for [`enumerate_exact`].
pub const ENUMERATION_BUDGET: f64 = 1e6;

/// Default cap on the number of stored occupation points.
pub const DEFAULT_OCCUPATION_BUDGET: usize = 100_000;

const DEGENERATE_MASS: f64 = 1e-14;

/// Seed offset for initial-point draws so they do not share streams with steps.
const INITIAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug)]
enum ObservableKind {
    Constant(f64),
    Quadratic(QuadraticObservable),
    Mesh { mesh: Arc<Mesh>, values: Arc<Vec<f64>> },
}

/// A real function `h` on `P(C^k)`, minus an optional centering offset.
#[derive(Clone, Debug)]
pub struct Observable {
    kind: ObservableKind,
    offset: f64,
}

impl Observable {
    pub fn constant(c: f64) -> Self {
        Self {
            kind: ObservableKind::Constant(c),
            offset: 0.0,
        }
    }

    /// `h = Re ⟨x, A x⟩`.
    pub fn quadratic(a: ComplexMatrix) -> Self {
        Self {
            kind: ObservableKind::Quadratic(QuadraticObservable::new(a)),
            offset: 0.0,
        }
    }

    /// Piecewise-constant function taking `values[b]` on the cell of node `b`.
    pub fn mesh(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::DimensionMismatch {
                expected: mesh.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            kind: ObservableKind::Mesh {
                mesh,
                values: Arc::new(values),
            },
            offset: 0.0,
        })
    }

    /// `h - c`.
    pub fn centered(mut self, c: f64) -> Self {
        self.offset += c;
        self
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, ObservableKind::Constant(_))
    }

    /// Value at a unit representative (any phase).
    #[inline]
    pub fn eval_coords(&self, x: &[C64]) -> f64 {
        let raw = match &self.kind {
            ObservableKind::Constant(c) => *c,
            ObservableKind::Quadratic(q) => q.eval_coords(x).re,
            ObservableKind::Mesh { mesh, values } => values[mesh.nearest_coords(x)],
        };
        raw - self.offset
    }

    pub fn eval(&self, x: &ProjectivePoint) -> f64 {
        self.eval_coords(x.coords())
    }

    /// `sup |h|` when it is available in closed form.
    pub fn sup_bound(&self) -> f64 {
        match &self.kind {
            ObservableKind::Constant(c) => (c - self.offset).abs(),
            ObservableKind::Quadratic(q) => {
                crate::projective::op_norm(q.matrix()) + self.offset.abs()
            }
            ObservableKind::Mesh { values, .. } => values
                .iter()
                .map(|v| (v - self.offset).abs())
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Initial {
    Fixed(ProjectivePoint),
    Haar,
    /// Trajectory `i` starts at `points[i mod len]`.
    Samples(Arc<Vec<ProjectivePoint>>),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n_steps: usize,
    pub n_traj: usize,
    pub seed: u64,
    pub initial: Initial,
    pub track_product: bool,
    pub burn_in: usize,
    pub observable: Observable,
    /// Step counts at which `S_n`, `log ||W_n x||` and `log ||W_n||` are recorded.
    pub checkpoints: Vec<usize>,
    /// Occupation stride; `None` means `max(1, n_steps / 1000)`.
    pub occupation_stride: Option<usize>,
    pub occupation_budget: usize,
}

impl RunConfig {
    pub fn new(n_steps: usize, n_traj: usize, seed: u64) -> Self {
        Self {
            n_steps,
            n_traj,
            seed,
            initial: Initial::Haar,
            track_product: false,
            burn_in: 0,
            observable: Observable::constant(0.0),
            checkpoints: Vec::new(),
            occupation_stride: None,
            occupation_budget: DEFAULT_OCCUPATION_BUDGET,
        }
    }

    pub fn stride(&self) -> usize {
        self.occupation_stride
            .unwrap_or_else(|| (self.n_steps / 1000).max(1))
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.n_steps == 0 || self.n_traj == 0 {
            return Err(Error::Precondition(
                "n_steps and n_traj must be at least 1".into(),
            ));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::Precondition(format!(
                "burn-in {} must be smaller than n_steps {}",
                self.burn_in, self.n_steps
            )));
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.n_steps) {
            return Err(Error::Precondition(format!(
                "checkpoint {c} outside 1..={}",
                self.n_steps
            )));
        }
        match &self.initial {
            Initial::Fixed(p) if p.dim() != k => Err(Error::DimensionMismatch {
                expected: k,
                found: p.dim(),
            }),
            Initial::Samples(s) if s.is_empty() => Err(Error::Empty("initial samples")),
            Initial::Samples(s) if s[0].dim() != k => Err(Error::DimensionMismatch {
                expected: k,
                found: s[0].dim(),
            }),
            _ => Ok(()),
        }
    }
}

/// State of one trajectory after `step` steps.
#[derive(Clone, Debug)]
pub struct TrajectoryState {
    pub step: usize,
    pub point: ProjectivePoint,
    pub sum_h: f64,
    pub log_norm: f64,
    /// `W_n / scale`.
    pub product: Option<ComplexMatrix>,
    pub log_scale: f64,
}

impl TrajectoryState {
    pub fn start(x0: ProjectivePoint, track_product: bool) -> Self {
        let k = x0.dim();
        Self {
            step: 0,
            point: x0,
            sum_h: 0.0,
            log_norm: 0.0,
            product: track_product.then(|| ComplexMatrix::identity(k)),
            log_scale: 0.0,
        }
    }

    /// `log ||W_n||`, when the product is tracked.
    pub fn log_op_norm(&self) -> Option<f64> {
        self.product
            .as_ref()
            .map(|p| crate::projective::op_norm(p).ln() + self.log_scale)
    }
}

/// Row-major copies of the atoms plus scratch space for one chain.
pub(crate) struct Stepper<'a> {
    ins: &'a Instrument,
    k: usize,
    mats: Vec<Vec<C64>>,
    weights: Vec<f64>,
    /// `v_i x` for the current point.
    pub images: Vec<Vec<C64>>,
    /// `||v_i x||`.
    pub norms: Vec<f64>,
    /// `w_i ||v_i x||²`.
    pub probs: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(ins: &'a Instrument) -> Self {
        let k = ins.dim();
        let mats = ins
            .atoms()
            .iter()
            .map(|a| {
                let m = a.matrix.matrix();
                (0..k * k).map(|t| m[(t / k, t % k)]).collect()
            })
            .collect();
        let n = ins.len();
        Self {
            ins,
            k,
            mats,
            weights: ins.atoms().iter().map(|a| a.weight).collect(),
            images: vec![vec![C64::new(0.0, 0.0); k]; n],
            norms: vec![0.0; n],
            probs: vec![0.0; n],
        }
    }

    /// Fills `images`, `norms`, `probs` for `x`; returns `Σ probs`.
    #[inline]
    pub fn compute(&mut self, x: &[C64]) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for (i, m) in self.mats.iter().enumerate() {
            let img = &mut self.images[i];
            let mut s = 0.0;
            for r in 0..k {
                let row = &m[r * k..(r + 1) * k];
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..k {
                    acc += row[c] * x[c];
                }
                img[r] = acc;
                s += acc.norm_sqr();
            }
            self.norms[i] = s.sqrt();
            let p = self.weights[i] * s;
            self.probs[i] = p;
            total += p;
        }
        total
    }

    /// Index drawn from `probs` with the uniform `u ∈ [0,1)`.
    #[inline]
    pub fn choose(&self, u: f64, total: f64) -> usize {
        choose_index(&self.probs, u * total)
    }

    /// Overwrites `x` with the normalized image under atom `i`.
    #[inline]
    pub fn move_to(&self, i: usize, x: &mut [C64]) {
        let inv = 1.0 / self.norms[i];
        for (d, s) in x.iter_mut().zip(&self.images[i]) {
            *d = s * inv;
        }
    }

    pub fn atom_matrix(&self, i: usize) -> &DMatrix<C64> {
        self.ins.atoms()[i].matrix.matrix()
    }
}

#[inline]
pub(crate) fn choose_index(weights: &[f64], target: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in weights.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if target < cum {
                return i;
            }
        }
    }
    last
}

/// Multiplies `w` on the left by `v` and rescales by the max-abs entry.
fn push_product(v: &DMatrix<C64>, w: &mut DMatrix<C64>, log_scale: &mut f64) {
    *w = v * &*w;
    let s = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if s > 0.0 && s.is_finite() {
        *w /= C64::new(s, 0.0);
        *log_scale += s.ln();
    }
}

fn product_log_op_norm(w: &DMatrix<C64>, log_scale: f64) -> f64 {
    let sv = if w.nrows() == 2 {
        let f = w.norm_squared();
        let det = (w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)]).norm();
        let disc = (f * f - 4.0 * det * det).max(0.0).sqrt();
        ((f + disc) / 2.0).sqrt()
    } else {
        w.clone().singular_values().iter().cloned().fold(0.0, f64::max)
    };
    sv.ln() + log_scale
}

/// One transition from `s` driven by the uniform `u ∈ [0,1)`.
pub fn step(ins: &Instrument, h: &Observable, s: &TrajectoryState, u: f64) -> Result<TrajectoryState> {
    let mut st = Stepper::new(ins);
    if s.point.dim() != ins.dim() {
        return Err(Error::DimensionMismatch {
            expected: ins.dim(),
            found: s.point.dim(),
        });
    }
    let total = st.compute(s.point.coords());
    if total < DEGENERATE_MASS {
        return Err(Error::Degenerate(format!(
            "transition weights sum to {total:e}"
        )));
    }
    let i = st.choose(u, total);
    let mut x = s.point.coords().to_vec();
    st.move_to(i, &mut x);
    let point = ProjectivePoint::from_unit_unchecked(x);
    let mut product = s.product.as_ref().map(|p| p.matrix().clone());
    let mut log_scale = s.log_scale;
    if let Some(w) = product.as_mut() {
        push_product(st.atom_matrix(i), w, &mut log_scale);
    }
    Ok(TrajectoryState {
        step: s.step + 1,
        sum_h: s.sum_h + h.eval(&point),
        log_norm: s.log_norm + st.norms[i].ln(),
        point,
        product: product.map(|p| ComplexMatrix::new(p)).transpose()?,
        log_scale,
    })
}

/// Values recorded at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub n: usize,
    pub sum_h: f64,
    pub log_norm: f64,
    pub log_op_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub sum_h: f64,
    pub sum_h_burn: f64,
    pub log_norm: f64,
    pub log_norm_burn: f64,
    pub log_op_norm: Option<f64>,
    pub checkpoints: Vec<Checkpoint>,
    #[serde(skip)]
    pub final_point: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean_sum_h_per_step: f64,
    pub var_sum_h: f64,
    pub mean_log_norm_per_step: f64,
    pub var_log_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub n_steps: usize,
    pub burn_in: usize,
    pub trajectories: Vec<TrajectoryRecord>,
    pub occupation: Vec<ProjectivePoint>,
    /// Trajectory index of each occupation point.
    pub occupation_source: Vec<usize>,
    pub occupation_weights: Vec<f64>,
    pub summary: Summary,
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs.iter().copied());
    (m, (v / xs.len() as f64).sqrt())
}

fn initial_point(cfg: &RunConfig, k: usize, traj: usize) -> ProjectivePoint {
    match &cfg.initial {
        Initial::Fixed(p) => p.clone(),
        Initial::Samples(s) => s[traj % s.len()].clone(),
        Initial::Haar => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INITIAL_SEED_SALT);
            rng.set_stream(traj as u64);
            ProjectivePoint::haar(k, &mut rng)
        }
    }
}

/// The RNG stream of trajectory `traj`.
pub(crate) fn trajectory_rng(seed: u64, traj: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj as u64);
    rng
}

fn run_one(
    ins: &Instrument,
    cfg: &RunConfig,
    traj: usize,
    occupation_points: usize,
) -> Result<(TrajectoryRecord, Vec<Vec<C64>>)> {
    let k = ins.dim();
    let mut st = Stepper::new(ins);
    let mut rng = trajectory_rng(cfg.seed, traj);
    let mut x = initial_point(cfg, k, traj).coords().to_vec();
    let h = &cfg.observable;
    let stride = cfg.stride();
    let mut product = cfg.track_product.then(|| DMatrix::<C64>::identity(k, k));
    let mut log_scale = 0.0;
    let mut sum_h = 0.0;
    let mut log_norm = 0.0;
    let mut rec = TrajectoryRecord {
        sum_h: 0.0,
        sum_h_burn: 0.0,
        log_norm: 0.0,
        log_norm_burn: 0.0,
        log_op_norm: None,
        checkpoints: Vec::with_capacity(cfg.checkpoints.len()),
        final_point: Vec::new(),
    };
    let mut occ = Vec::with_capacity(occupation_points);
    let mut next_cp = 0;
    let mut cps = cfg.checkpoints.clone();
    cps.sort_unstable();
    for n in 1..=cfg.n_steps {
        let total = st.compute(&x);
        if total < DEGENERATE_MASS {
            return Err(Error::Degenerate(format!(
                "transition weights sum to {total:e} at step {n} of trajectory {traj}"
            )));
        }
        let u: f64 = rng.random();
        let i = st.choose(u, total);
        st.move_to(i, &mut x);
        log_norm += st.norms[i].ln();
        sum_h += h.eval_coords(&x);
        if let Some(w) = product.as_mut() {
            push_product(st.atom_matrix(i), w, &mut log_scale);
            if !log_scale.is_finite() {
                return Err(Error::Overflow(n));
            }
        }
        if n == cfg.burn_in {
            rec.sum_h_burn = sum_h;
            rec.log_norm_burn = log_norm;
        }
        if n > cfg.burn_in && (n - cfg.burn_in) % stride == 0 && occ.len() < occupation_points {
            occ.push(x.clone());
        }
        while next_cp < cps.len() && cps[next_cp] == n {
            rec.checkpoints.push(Checkpoint {
                n,
                sum_h,
                log_norm,
                log_op_norm: product.as_ref().map(|w| product_log_op_norm(w, log_scale)),
            });
            next_cp += 1;
        }
    }
    rec.sum_h = sum_h;
    rec.log_norm = log_norm;
    rec.log_op_norm = product.as_ref().map(|w| product_log_op_norm(w, log_scale));
    rec.final_point = x;
    Ok((rec, occ))
}

/// Independent trajectories, deterministic in `cfg`.
pub fn run(ins: &Instrument, cfg: &RunConfig) -> Result<EnsembleStats> {
    cfg.validate(ins.dim())?;
    let stride = cfg.stride();
    let per_traj = (cfg.n_steps - cfg.burn_in) / stride;
    let mut remaining = cfg.occupation_budget;
    let quotas: Vec<usize> = (0..cfg.n_traj)
        .map(|_| {
            let q = per_traj.min(remaining);
            remaining -= q;
            q
        })
        .collect();
    let results: Vec<(TrajectoryRecord, Vec<Vec<C64>>)> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|t| run_one(ins, cfg, t, quotas[t]))
        .collect::<Result<_>>()?;
    let mut trajectories = Vec::with_capacity(cfg.n_traj);
    let mut occupation = Vec::new();
    let mut occupation_source = Vec::new();
    for (t, (rec, occ)) in results.into_iter().enumerate() {
        for p in occ {
            occupation.push(ProjectivePoint::from_unit_unchecked(p));
            occupation_source.push(t);
        }
        trajectories.push(rec);
    }
    let n = cfg.n_steps as f64;
    let (mh, vh) = mean_var(trajectories.iter().map(|r| r.sum_h));
    let (ml, vl) = mean_var(trajectories.iter().map(|r| r.log_norm));
    let w = if occupation.is_empty() {
        Vec::new()
    } else {
        vec![1.0 / occupation.len() as f64; occupation.len()]
    };
    Ok(EnsembleStats {
        n_steps: cfg.n_steps,
        burn_in: cfg.burn_in,
        trajectories,
        occupation,
        occupation_source,
        occupation_weights: w,
        summary: Summary {
            mean_sum_h_per_step: mh / n,
            var_sum_h: vh,
            mean_log_norm_per_step: ml / n,
            var_log_norm: vl,
        },
    })
}

/// One enumerated path of length `n`.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub prob: f64,
    pub point: ProjectivePoint,
    pub sum_h: f64,
    pub log_norm: f64,
    /// `log ||W_n||`.
    pub log_op_norm: f64,
}

/// Every atom sequence of length `n` from `x̂0` with its probability
/// `∏w · ||W_n x0||²`; zero-probability branches are dropped.
pub fn enumerate_exact(
    ins: &Instrument,
    x0: &ProjectivePoint,
    n: usize,
    h: &Observable,
) -> Result<Vec<Outcome>> {
    let requested = (ins.len() as f64).powi(n as i32);
    if requested > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            requested,
            budget: ENUMERATION_BUDGET,
        });
    }
    if x0.dim() != ins.dim() {
        return Err(Error::DimensionMismatch {
            expected: ins.dim(),
            found: x0.dim(),
        });
    }
    let k = ins.dim();
    let mut out = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn rec(
        ins: &Instrument,
        h: &Observable,
        x: &[C64],
        w: &DMatrix<C64>,
        prob: f64,
        sum_h: f64,
        log_norm: f64,
        left: usize,
        out: &mut Vec<Outcome>,
    ) {
        if left == 0 {
            out.push(Outcome {
                prob,
                point: ProjectivePoint::from_unit_unchecked(x.to_vec()),
                sum_h,
                log_norm,
                log_op_norm: product_log_op_norm(w, 0.0),
            });
            return;
        }
        for a in ins.atoms() {
            let y = a.matrix.apply(x);
            let ny = norm(&y);
            if ny <= NULL_IMAGE_THRESHOLD {
                continue;
            }
            let p = prob * a.weight * ny * ny;
            if p == 0.0 {
                continue;
            }
            let y: Vec<C64> = y.iter().map(|z| z / ny).collect();
            let wn = a.matrix.matrix() * w;
            rec(ins, h, &y, &wn, p, sum_h + h.eval_coords(&y), log_norm + ny.ln(), left - 1, out);
        }
    }
    rec(
        ins,
        h,
        x0.coords(),
        &DMatrix::identity(k, k),
        1.0,
        0.0,
        0.0,
        n,
        &mut out,
    );
    Ok(out)
}

/// `(γ̂, stderr)`: mean post-burn-in growth rate of `log ||W_n x||`.
pub fn lyapunov_estimate(stats: &EnsembleStats) -> Result<(f64, f64)> {
    if stats.n_steps < 10 * stats.burn_in {
        return Err(Error::Precondition(format!(
            "n_steps {} must be at least 10 × burn-in {}",
            stats.n_steps, stats.burn_in
        )));
    }
    let len = (stats.n_steps - stats.burn_in) as f64;
    let rates: Vec<f64> = stats
        .trajectories
        .iter()
        .map(|r| (r.log_norm - r.log_norm_burn) / len)
        .collect();
    Ok(mean_stderr(&rates))
}

/// `log ||W_n||` per trajectory; needs a tracked product.
pub fn op_norm_log(stats: &EnsembleStats) -> Result<Vec<f64>> {
    stats
        .trajectories
        .iter()
        .map(|r| {
            r.log_op_norm.ok_or_else(|| {
                Error::Precondition("op_norm_log needs track_product = true".into())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::builtin;

    fn pndm_h() -> Observable {
        Observable::quadratic(ComplexMatrix::diag_real(&[-1.0, 1.0]))
    }

    #[test]
    fn step_examples() {
        let ad = builtin("AD", &[0.36]).unwrap();
        let h = Observable::constant(0.0);
        let mut s = TrajectoryState::start(ProjectivePoint::basis(2, 0), true);
        for j in 0..20 {
            s = step(&ad, &h, &s, (j as f64) / 20.0).unwrap();
            assert_eq!(s.point, ProjectivePoint::basis(2, 0));
            assert_eq!(s.log_norm, 0.0);
        }
        let uni = builtin("UNI", &[0.9]).unwrap();
        let mut s = TrajectoryState::start(ProjectivePoint::from_real(&[0.6, 0.8]).unwrap(), true);
        for _ in 0..50 {
            s = step(&uni, &h, &s, 0.5).unwrap();
            assert!(s.log_norm.abs() < 1e-12);
            assert!(s.log_op_norm().unwrap().abs() < 1e-12);
        }
        let pndm = builtin("PNDM", &[0.3]).unwrap();
        for u in [0.1, 0.9] {
            let s = TrajectoryState::start(ProjectivePoint::basis(2, 0), false);
            let s = step(&pndm, &h, &s, u).unwrap();
            assert_eq!(s.point, ProjectivePoint::basis(2, 1));
        }
    }

    #[test]
    fn step_tracks_product() {
        let dr = builtin("DR", &[0.3, 1.0]).unwrap();
        let h = Observable::constant(1.0);
        let x0 = ProjectivePoint::from_real(&[0.3, 0.7]).unwrap();
        let mut s = TrajectoryState::start(x0.clone(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=500 {
            s = step(&dr, &h, &s, rng.random()).unwrap();
            let p = s.product.as_ref().unwrap();
            let lhs = norm(&p.apply(x0.coords())).ln() + s.log_scale;
            assert!((s.log_norm - lhs).abs() < 1e-8 * (n as f64 + 1.0));
            assert!(s.log_op_norm().unwrap() >= s.log_norm - 1e-9);
        }
        assert_eq!(s.sum_h, 500.0);
    }

    #[test]
    fn degenerate_step() {
        let zero = Instrument::unitary("0", ComplexMatrix::zeros(2)).unwrap();
        let s = TrajectoryState::start(ProjectivePoint::basis(2, 0), false);
        assert!(matches!(
            step(&zero, &Observable::constant(0.0), &s, 0.3),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn run_basics() {
        let dr = builtin("DR", &[0.3, 1.0]).unwrap();
        let mut cfg = RunConfig::new(200, 16, 77);
        cfg.observable = Observable::constant(1.0);
        cfg.track_product = true;
        cfg.checkpoints = vec![50, 200];
        let a = run(&dr, &cfg).unwrap();
        assert_eq!(a.summary.mean_sum_h_per_step, 1.0);
        assert_eq!(a, run(&dr, &cfg).unwrap());
        let ws: f64 = a.occupation_weights.iter().sum();
        assert!((ws - 1.0).abs() < 1e-12);
        for r in &a.trajectories {
            assert!(r.log_op_norm.unwrap() >= r.log_norm - 1e-9);
            assert_eq!(r.checkpoints.len(), 2);
            assert_eq!(r.checkpoints[1].log_norm, r.log_norm);
        }
        let mut other = cfg.clone();
        other.seed = 78;
        assert_ne!(a.trajectories, run(&dr, &other).unwrap().trajectories);
    }

    #[test]
    fn run_validation() {
        let dr = builtin("DR", &[0.3, 1.0]).unwrap();
        let mut cfg = RunConfig::new(10, 1, 0);
        cfg.burn_in = 10;
        assert!(run(&dr, &cfg).is_err());
        let mut cfg = RunConfig::new(10, 1, 0);
        cfg.initial = Initial::Fixed(ProjectivePoint::basis(3, 0));
        assert!(matches!(run(&dr, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn occupation_budget_is_respected() {
        let dr = builtin("DR", &[0.3, 1.0]).unwrap();
        let mut cfg = RunConfig::new(1000, 10, 1);
        cfg.occupation_stride = Some(1);
        cfg.occupation_budget = 2500;
        let s = run(&dr, &cfg).unwrap();
        assert_eq!(s.occupation.len(), 2500);
        assert_eq!(*s.occupation_source.last().unwrap(), 2);
    }

    #[test]
    fn enumeration_examples() {
        let ad = builtin("AD", &[0.36]).unwrap();
        let h = Observable::constant(0.0);
        let out = enumerate_exact(&ad, &ProjectivePoint::basis(2, 1), 10, &h).unwrap();
        let total: f64 = out.iter().map(|o| o.prob).sum();
        assert!((total - 1.0).abs() < 1e-10);

        let uni = builtin("UNI", &[0.4]).unwrap();
        let out = enumerate_exact(&uni, &ProjectivePoint::basis(2, 0), 7, &h).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].prob - 1.0).abs() < 1e-12);
        assert!(matches!(
            enumerate_exact(&ad, &ProjectivePoint::basis(2, 0), 21, &h),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn enumeration_matches_simulation() {
        let pndm = builtin("PNDM", &[0.3]).unwrap();
        let x0 = ProjectivePoint::from_real(&[0.8, 0.6]).unwrap();
        let out = enumerate_exact(&pndm, &x0, 8, &pndm_h()).unwrap();
        let exact: f64 = out.iter().map(|o| o.prob * o.sum_h).sum();
        let mut cfg = RunConfig::new(8, 20_000, 5);
        cfg.initial = Initial::Fixed(x0);
        cfg.observable = pndm_h();
        let s = run(&pndm, &cfg).unwrap();
        let sums: Vec<f64> = s.trajectories.iter().map(|r| r.sum_h).collect();
        let (m, se) = mean_stderr(&sums);
        assert!((m - exact).abs() < 3.0 * se + 1e-12, "{m} {exact} {se}");
    }

    #[test]
    fn lyapunov_examples() {
        let uni = builtin("UNI", &[0.4]).unwrap();
        let mut cfg = RunConfig::new(100, 4, 3);
        cfg.burn_in = 10;
        let s = run(&uni, &cfg).unwrap();
        let (g, _) = lyapunov_estimate(&s).unwrap();
        assert!(g.abs() < 1e-14);

        let ad = builtin("AD", &[0.36]).unwrap();
        cfg.initial = Initial::Fixed(ProjectivePoint::basis(2, 0));
        let s = run(&ad, &cfg).unwrap();
        assert_eq!(lyapunov_estimate(&s).unwrap(), (0.0, 0.0));
        assert!(op_norm_log(&s).is_err());

        cfg.burn_in = 50;
        let s = run(&ad, &cfg).unwrap();
        assert!(lyapunov_estimate(&s).is_err());
    }

    #[test]
    fn k_frame_bound() {
        let pndm = builtin("PNDM", &[0.3]).unwrap();
        let x0 = ProjectivePoint::from_real(&[0.8, 0.6]).unwrap();
        let out = enumerate_exact(&pndm, &x0, 8, &Observable::constant(0.0)).unwrap();
        let e: f64 = out
            .iter()
            .map(|o| o.prob * (o.log_norm - o.log_op_norm).abs())
            .sum();
        assert!(e <= 2.0);
        assert!(out.iter().all(|o| o.log_op_norm >= o.log_norm - 1e-12));
    }
}
