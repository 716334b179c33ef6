use nalgebra::DMatrix;
use proptest::prelude::*;

use qtraj::channel::phi_apply;
use qtraj::instrument::{builtin, Atom, Instrument};
use qtraj::limits::{clt_check, legendre_transform, normalized_statistics, CumulantCurve};
use qtraj::linalg::hermitian_eigen;
use qtraj::purification::g_series_exact;
use qtraj::sampler::{run, Observable, RunConfig};
use qtraj::stats::{ks_distance, mean_var, normal_cdf};
use qtraj::{ComplexMatrix, ProjectivePoint, C64};

fn matrix(k: usize) -> impl Strategy<Value = DMatrix<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), k * k)
        .prop_map(move |v| DMatrix::from_iterator(k, k, v.into_iter().map(|(a, b)| C64::new(a, b))))
}

/// Kraus family `A_i S^{-1/2}` with `S = Σ A_i* A_i`.
fn instrument(k: usize, atoms: usize) -> impl Strategy<Value = Instrument> {
    prop::collection::vec(matrix(k), atoms).prop_filter_map("singular effect sum", move |ms| {
        let s = ms.iter().fold(DMatrix::<C64>::zeros(k, k), |acc, m| acc + m.adjoint() * m);
        let (vals, vecs) = hermitian_eigen(&s);
        if vals.iter().any(|&v| v < 1e-3) {
            return None;
        }
        let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            k,
            vals.iter().map(|v| C64::new(v.powf(-0.5), 0.0)),
        ));
        let root = &vecs * inv_sqrt * vecs.adjoint();
        let atoms = ms
            .iter()
            .map(|m| Atom {
                weight: 1.0,
                matrix: ComplexMatrix::new(m * &root).unwrap(),
            })
            .collect();
        Instrument::new("random", atoms).ok()
    })
}

fn point(k: usize) -> impl Strategy<Value = ProjectivePoint> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), k)
        .prop_filter_map("zero vector", |v| ProjectivePoint::new(v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_families_are_stochastic(ins in instrument(3, 3)) {
        prop_assert!(ins.validate(1e-9).passed);
    }

    #[test]
    fn kernel_of_quadratic_is_quadratic(ins in instrument(2, 3), a in matrix(2), x in point(2)) {
        let a = ComplexMatrix::new(a).unwrap();
        let lhs = ins.kernel_sum(&x, |y| a.quadratic_form(y.coords())).unwrap();
        let rhs = phi_apply(&ins, &a, false).unwrap().quadratic_form(x.coords());
        prop_assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn g_is_submultiplicative(ins in instrument(2, 2)) {
        let g = g_series_exact(&ins, 6).unwrap();
        for m in 1..6 {
            for n in 1..=(6 - m) {
                prop_assert!(g[m + n - 1] <= g[m - 1] * g[n - 1] + 1e-10);
            }
        }
    }

    #[test]
    fn rate_function_is_nonnegative_and_convex(c in -1.0f64..1.0, s in 0.1f64..2.0, q in 0.0f64..1.0) {
        let grid: Vec<f64> = (0..=200).map(|i| -2.0 + 0.02 * i as f64).collect();
        let curve = CumulantCurve::from_fn(grid, |t| c * t + s * t * t / 2.0 + q * (t.cosh().ln())).unwrap();
        let (lo, hi) = curve.end_slopes();
        let xs: Vec<f64> = (0..=50).map(|i| lo + (hi - lo) * i as f64 / 50.0).collect();
        let r = legendre_transform(&curve, &xs).unwrap();
        prop_assert!(r.values.iter().all(|&v| v >= 0.0));
        for w in r.values.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] > -1e-6);
        }
        let at_mean = legendre_transform(&curve, &[c]).unwrap().values[0];
        prop_assert!(at_mean < 1e-3);
    }

    #[test]
    fn ks_distance_is_a_probability(xs in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let d = ks_distance(&xs, normal_cdf);
        prop_assert!((0.0..=1.0).contains(&d));
    }
}

#[test]
fn centered_sums_have_zero_mean() {
    let ins = builtin("DR", &[0.3, 1.0]).unwrap();
    let h0 = Observable::quadratic(ComplexMatrix::diag_real(&[1.0, -1.0]));
    let mut pilot = RunConfig::new(4000, 400, 1);
    pilot.burn_in = 200;
    let p = run(&ins, &pilot).unwrap();
    let c = p.occupation.iter().map(|x| h0.eval(x)).sum::<f64>() / p.occupation.len() as f64;
    let mut cfg = RunConfig::new(2000, 2000, 2);
    cfg.observable = h0.clone().centered(c);
    let stats = run(&ins, &cfg).unwrap();
    let per_step: Vec<f64> = stats.trajectories.iter().map(|r| r.sum_h / 2000.0).collect();
    let (m, v) = mean_var(&per_step);
    let se = (v / per_step.len() as f64).sqrt();
    // The pilot estimate of the centre has its own error.
    let pilot_se = (h0.sup_bound() / (p.occupation.len() as f64).sqrt()).max(se);
    assert!(m.abs() <= 3.0 * (se * se + pilot_se * pilot_se).sqrt(), "{m} {se} {pilot_se}");
}

#[test]
fn norm_and_vector_statistics_share_a_limit() {
    let ins = builtin("DR", &[0.3, 1.0]).unwrap();
    let mut cfg = RunConfig::new(3000, 3000, 3);
    cfg.track_product = true;
    cfg.occupation_budget = 0;
    let stats = run(&ins, &cfg).unwrap();
    let vec_stat: Vec<f64> = stats.trajectories.iter().map(|r| r.log_norm).collect();
    let op_stat: Vec<f64> = stats.trajectories.iter().map(|r| r.log_op_norm.unwrap()).collect();
    let a = normalized_statistics(&vec_stat, 3000);
    let b = normalized_statistics(&op_stat, 3000);
    let (_, va) = mean_var(&a);
    let ra = clt_check(&a, va).unwrap();
    let rb = clt_check(&b, va).unwrap();
    assert!(ra.pass && rb.pass, "{ra:?} {rb:?}");
    assert!((ra.ks - rb.ks).abs() < ra.threshold);
}

#[test]
fn stationary_start_keeps_the_occupation_law() {
    let ins = builtin("DR", &[0.3, 1.0]).unwrap();
    let h = Observable::quadratic(ComplexMatrix::diag_real(&[1.0, -1.0]));
    let mut warm = RunConfig::new(500, 2000, 4);
    warm.occupation_budget = 0;
    let w = run(&ins, &warm).unwrap();
    let starts: Vec<ProjectivePoint> = w
        .trajectories
        .iter()
        .map(|r| ProjectivePoint::new(r.final_point.clone()).unwrap())
        .collect();
    let before: Vec<f64> = starts.iter().map(|x| h.eval(x)).collect();
    let mut cfg = RunConfig::new(7, 2000, 5);
    cfg.initial = qtraj::sampler::Initial::Samples(std::sync::Arc::new(starts));
    cfg.occupation_budget = 0;
    let s = run(&ins, &cfg).unwrap();
    let after: Vec<f64> = s
        .trajectories
        .iter()
        .map(|r| h.eval(&ProjectivePoint::new(r.final_point.clone()).unwrap()))
        .collect();
    let (mb, vb) = mean_var(&before);
    let (ma, va) = mean_var(&after);
    let se = ((vb + va) / 2000.0).sqrt();
    assert!((mb - ma).abs() <= 4.0 * se, "{mb} {ma} {se}");
}
