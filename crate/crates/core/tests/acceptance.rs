//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qtraj::channel::{peripheral_eigenfunction, period_and_cycles, phi_apply};
use qtraj::instrument::{builtin, standard_builtins, Instrument};
use qtraj::limits::{
    berry_esseen_scan, clt_check, derivatives_at_zero, gamma_estimates, hyperplane_check, ineqlog_scan,
    ldp_check, legendre_transform, normalized_statistics, scalar_f_checks, BeMode, CumulantCurve, LdpMethod,
    LdpMode, DERIVATIVE_STEP, HYPERPLANE_TOL,
};
use qtraj::operator::{
    build_mesh, discretize, gamma_series_check, leading_spectrum, node_values, KernelSkeleton, Mesh, MeshKind,
    ScgfEvaluator, Tilt, TiltDomain, TiltFamily,
};
use qtraj::purification::{g_mc, g_series_exact};
use qtraj::sampler::{run, Initial, Observable, RunConfig};
use qtraj::stats::mean_var;
use qtraj::{ComplexMatrix, Error, ProjectivePoint, C64};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Instant, budget: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= budget, format!("{:.2}s of {:.0}s", e.as_secs_f64(), budget.as_secs_f64()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_hermitian(k: usize, r: &mut ChaCha8Rng) -> ComplexMatrix {
    let m = DMatrix::from_fn(k, k, |_, _| C64::new(r.sample(StandardNormal), r.sample(StandardNormal)));
    ComplexMatrix::new((&m + m.adjoint()) * C64::new(0.5, 0.0)).unwrap()
}

fn sigma_z() -> ComplexMatrix {
    ComplexMatrix::diag_real(&[1.0, -1.0])
}

fn fib(n: usize) -> Arc<Mesh> {
    Arc::new(build_mesh(2, n, MeshKind::FibonacciSphere, 0).unwrap())
}

fn dr() -> Instrument {
    builtin("DR", &[0.3, 1.0]).unwrap()
}

fn pndm() -> Instrument {
    builtin("PNDM", &[0.3]).unwrap()
}

fn c1_peripheral() -> Outcome {
    let t = Instant::now();
    let ins = pndm();
    let cd = period_and_cycles(&ins, 1e-9).unwrap();
    let mut r = rng(1);
    let pts: Vec<ProjectivePoint> = (0..1000).map(|_| ProjectivePoint::haar(2, &mut r)).collect();
    let mut err = 0.0f64;
    for l in 0..cd.m {
        let f = peripheral_eigenfunction(&cd, l).unwrap();
        let eig = C64::from_polar(1.0, std::f64::consts::PI * l as f64);
        for x in &pts {
            let lhs = ins.kernel_sum(x, |y| f.eval(y)).unwrap();
            err = err.max((lhs - eig * f.eval(x)).norm());
        }
    }
    let (fast, time) = within(t, Duration::from_secs(1));
    outcome(cd.m == 2 && err < 1e-10 && fast, format!("m = {}, max error {err:.2e}, {time}", cd.m))
}

fn c2_quadratic_action() -> Outcome {
    let mut r = rng(2);
    let mut err = 0.0f64;
    for ins in standard_builtins() {
        let k = ins.dim();
        let pts: Vec<ProjectivePoint> = (0..500).map(|_| ProjectivePoint::haar(k, &mut r)).collect();
        for _ in 0..100 {
            let a = random_hermitian(k, &mut r);
            let phi_a = phi_apply(&ins, &a, false).unwrap();
            for x in &pts {
                let lhs = ins.kernel_sum(x, |y| qf(&a, y)).unwrap();
                err = err.max((lhs - qf(&phi_a, x)).norm());
            }
        }
    }
    outcome(err < 1e-10, format!("max error {err:.2e} over 5 built-ins x 100 A x 500 x"))
}

fn qf(a: &ComplexMatrix, x: &ProjectivePoint) -> C64 {
    a.quadratic_form(x.coords())
}

fn c3_g_closed_form() -> Outcome {
    let t = Instant::now();
    let ins = builtin("AD", &[0.36]).unwrap();
    let series = g_series_exact(&ins, 12).unwrap();
    let err = series
        .iter()
        .enumerate()
        .map(|(i, g)| (g - 0.8f64.powi(i as i32 + 1)).abs())
        .fold(0.0, f64::max);
    let (mc, se) = g_mc(&ins, 10, 10_000, 3).unwrap();
    let z = (mc - 0.8f64.powi(10)).abs() / se;
    let (fast, time) = within(t, Duration::from_secs(10));
    outcome(
        err < 1e-12 && z <= 3.0 && fast,
        format!("max |g - 0.8^n| {err:.2e}; g_mc(10) off by {z:.2} stderr; {time}"),
    )
}

fn c4_submultiplicative() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for ins in standard_builtins() {
        let g = g_series_exact(&ins, 8).unwrap();
        let gn = |n: usize| g[n - 1];
        for m in 1..8 {
            for n in 1..=(8 - m) {
                worst = worst.max(gn(m + n) - gn(m) * gn(n));
            }
        }
    }
    outcome(worst <= 1e-10, format!("max g(m+n) - g(m)g(n) = {worst:.2e}"))
}

fn c5_spectral_gap() -> Outcome {
    let t = Instant::now();
    let ins = dr();
    let a = leading_spectrum(&discretize(&ins, fib(1500), Tilt::None).unwrap(), 4, 1e-6).unwrap();
    let b = leading_spectrum(&discretize(&ins, fib(3000), Tilt::None).unwrap(), 4, 1e-6).unwrap();
    let lead = (a.eigenvalues[0] - C64::new(1.0, 0.0)).norm();
    let (l2a, l2b) = (a.eigenvalues[1].norm(), b.eigenvalues[1].norm());
    let drift = (l2a - l2b).abs() / l2a;
    let (fast, time) = within(t, Duration::from_secs(60));
    outcome(
        lead < 1e-10 && a.gap > 0.01 && drift < 0.05 && fast,
        format!(
            "|λ1 - 1| = {lead:.1e}, |λ2| = {l2a:.5} ({}) -> {l2b:.5} ({}), drift {:.2}%, {time}",
            a.method,
            b.method,
            100.0 * drift
        ),
    )
}

fn c6_period() -> Outcome {
    let cd = period_and_cycles(&pndm(), 1e-9).unwrap();
    let target = [ComplexMatrix::diag_real(&[1.0, 0.0]), ComplexMatrix::diag_real(&[0.0, 1.0])];
    let m_err = if cd.m == 2 {
        cd.m_r.iter().zip(&target).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let m_ad = period_and_cycles(&builtin("AD", &[0.36]).unwrap(), 1e-9).unwrap().m;
    let m_dr = period_and_cycles(&dr(), 1e-9).unwrap().m;
    let spec = leading_spectrum(&discretize(&pndm(), fib(1500), Tilt::None).unwrap(), 4, 1e-3).unwrap();
    let hit = |v: f64| spec.eigenvalues.iter().map(|z| (z - C64::new(v, 0.0)).norm()).fold(f64::INFINITY, f64::min);
    let (d1, dm1) = (hit(1.0), hit(-1.0));
    outcome(
        cd.m == 2 && m_err < 1e-8 && m_ad == 1 && m_dr == 1 && d1 < 1e-3 && dm1 < 1e-3,
        format!(
            "PNDM m = {}, M_r error {m_err:.1e}; AD m = {m_ad}, DR m = {m_dr}; mesh distance to 1: {d1:.1e}, to -1: {dm1:.1e}",
            cd.m
        ),
    )
}

fn c7_gamma_series() -> Outcome {
    let mesh = fib(1500);
    let h = Observable::quadratic(sigma_z());
    let f = node_values(&mesh, |p| h.eval(p));
    let rep = gamma_series_check(
        &dr(),
        mesh,
        C64::new(0.0, 0.0),
        C64::new(0.2, 0.0),
        20,
        &f,
        &TiltDomain::default(),
    )
    .unwrap();
    let last = *rep.errors.last().unwrap();
    // Geometric decay: each partial sum improves until the rounding floor.
    let floor = 1e-13;
    let monotone = rep.errors.windows(2).all(|w| w[1] < w[0] || w[1] < floor);
    let early: Vec<f64> = rep.errors.iter().take(8).copied().collect();
    let ratio = (early[7] / early[1]).powf(1.0 / 6.0);
    outcome(
        last < 1e-8 && monotone && ratio < 1.0,
        format!("sup error after 20 terms {last:.2e}, mean ratio {ratio:.3} per term over terms 1..7"),
    )
}

fn lyap_slope(ins: &Instrument, n: usize) -> qtraj::limits::Derivatives {
    let skel = KernelSkeleton::new(ins, fib(n)).unwrap();
    let mut ev = ScgfEvaluator::new(&skel, TiltFamily::Lyapunov, TiltDomain::default());
    derivatives_at_zero(|s| ev.eval(s), DERIVATIVE_STEP).unwrap()
}

fn c8_gamma_consistency() -> Outcome {
    let t = Instant::now();
    let ins = dr();
    let mut cfg = RunConfig::new(10_000, 10_000, 8);
    cfg.burn_in = 100;
    let stats = run(&ins, &cfg).unwrap();
    let g = gamma_estimates(&ins, &stats, &lyap_slope(&ins, 1500)).unwrap();
    let mut zero_ok = true;
    let mut zeros = Vec::new();
    for (ins, init) in [
        (builtin("UNI", &[]).unwrap(), Initial::Haar),
        (builtin("AD", &[0.36]).unwrap(), Initial::Fixed(ProjectivePoint::basis(2, 0))),
    ] {
        let mut cfg = RunConfig::new(1000, 100, 8);
        cfg.initial = init;
        let stats = run(&ins, &cfg).unwrap();
        let z = gamma_estimates(&ins, &stats, &lyap_slope(&ins, 1500)).unwrap();
        let worst = z.traj.abs().max(z.integral.abs()).max(z.slope.abs());
        zero_ok &= worst <= 1e-3 && z.consistent;
        zeros.push(format!("{} max |γ̂| {worst:.1e}", ins.label()));
    }
    let (fast, time) = within(t, Duration::from_secs(120));
    outcome(
        g.consistent && zero_ok && fast,
        format!(
            "DR γ̂ traj {:.6}±{:.1e}, integral {:.6}±{:.1e}, slope {:.6}; worst/budget {:.2}; {}; {time}",
            g.traj,
            g.traj_err,
            g.integral,
            g.integral_err,
            g.slope,
            g.worst_ratio,
            zeros.join(", ")
        ),
    )
}

fn c9_clt() -> Outcome {
    let ins = dr();
    // Center h on a pilot estimate of its invariant mean.
    let mut pilot = RunConfig::new(2000, 500, 90);
    pilot.burn_in = 200;
    let p = run(&ins, &pilot).unwrap();
    let h0 = Observable::quadratic(sigma_z());
    let c = p.occupation.iter().map(|x| h0.eval(x)).sum::<f64>() / p.occupation.len() as f64;
    let mut cfg = RunConfig::new(10_000, 10_000, 9);
    cfg.observable = h0.centered(c);
    cfg.occupation_budget = 0;
    let stats = run(&ins, &cfg).unwrap();
    let n = cfg.n_steps;
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, xs) in [
        ("S_n", stats.trajectories.iter().map(|r| r.sum_h).collect::<Vec<_>>()),
        ("log|W_n x|", stats.trajectories.iter().map(|r| r.log_norm).collect()),
    ] {
        let s = normalized_statistics(&xs, n);
        let (_, var) = mean_var(&s);
        let rep = clt_check(&s, var).unwrap();
        pass &= rep.pass;
        parts.push(format!("{name}: KS {:.4} vs {:.4} (σ̂² {:.4})", rep.ks, rep.threshold, rep.sigma2));
    }
    outcome(pass, parts.join("; "))
}

fn c10_berry_esseen() -> Outcome {
    let ins = dr();
    let ns = [100, 400, 1600, 6400];
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [BeMode::Observable(Observable::quadratic(sigma_z())), BeMode::Lyapunov] {
        let rep = berry_esseen_scan(Some(&ins), &mode, &ns, 10_000, 10).unwrap();
        pass &= !rep.degenerate;
        for s in &rep.series {
            pass &= s.bounded;
            let col: Vec<String> = s.rows.iter().map(|r| format!("{:.3}", r.scaled)).collect();
            parts.push(format!("{} x n^{}: [{}]", s.statistic, s.exponent, col.join(", ")));
        }
    }
    outcome(pass, parts.join("; "))
}

fn c11_ldp() -> Outcome {
    let grid: Vec<f64> = (0..=400).map(|i| -2.0 + 0.01 * i as f64).collect();
    let curve = CumulantCurve::from_fn(grid, |t| t * t / 2.0).unwrap();
    let xs: Vec<f64> = (0..=300).map(|i| -1.5 + 0.01 * i as f64).collect();
    let rate = legendre_transform(&curve, &xs).unwrap();
    let closed = xs
        .iter()
        .zip(&rate.values)
        .map(|(x, v)| (v - x * x / 2.0).abs())
        .fold(0.0, f64::max);

    let ins = dr();
    let h = Observable::quadratic(sigma_z());
    let skel = KernelSkeleton::new(&ins, fib(1500)).unwrap();
    let domain = TiltDomain::default();
    let mode = LdpMode::Observable(h);
    let mut ev = ScgfEvaluator::new(&skel, mode.family(), domain);
    let d = derivatives_at_zero(|t| ev.eval(t), DERIVATIVE_STEP).unwrap();
    let a = d.d1 + 0.5 * d.d2.sqrt();
    let rep = ldp_check(
        &ins,
        &mode,
        a,
        &[200],
        100_000,
        11,
        &skel,
        (-5.0, 5.0),
        &domain,
        &[LdpMethod::ImportanceSampling],
    )
    .unwrap();
    let row = rep.rows[0];
    outcome(
        closed < 1e-3 && rep.within_target,
        format!(
            "closed-form conjugate error {closed:.1e}; a = {a:.5}, I(a) = {:.5}, -(1/200) log P̂ = {:.5} (P̂ = {:.3e}), relative error {:.1}%",
            rep.rate,
            row.rate_hat,
            row.p_hat,
            100.0 * row.rel_err
        ),
    )
}

fn c12_appendix() -> Outcome {
    let grid: Vec<f64> = (1..=400).map(|i| 0.025 * i as f64).collect();
    let scalar = scalar_f_checks(12, C64::new(1.5, 0.0), 0.5, &grid, &[0.5, 1.0]).unwrap();
    let mut r = rng(12);
    let sample: Vec<ProjectivePoint> = (0..1000).map(|_| ProjectivePoint::haar(2, &mut r)).collect();
    let mut mins = Vec::new();
    let mut ineq_ok = true;
    for s in [-1.0, 1.0] {
        let rep = ineqlog_scan(&sample, s, 10_000, 12).unwrap();
        ineq_ok &= rep.min_r > 0.0 && rep.max_r.is_finite();
        mins.push(format!("min R_{s} = {:.4}", rep.min_r));
    }
    let flat = vec![ProjectivePoint::basis(2, 0); 100];
    let degenerate = matches!(hyperplane_check(&flat, HYPERPLANE_TOL), Err(Error::HyperplaneDegenerate(_)))
        && matches!(ineqlog_scan(&flat, 1.0, 10, 1), Err(Error::HyperplaneDegenerate(_)));
    let worst: Vec<String> = scalar
        .checks
        .iter()
        .map(|c| format!("{} {:.3}", c.name, c.worst_ratio))
        .collect();
    outcome(
        scalar.pass && scalar.checks.iter().all(|c| !c.skipped) && ineq_ok && degenerate,
        format!(
            "worst lhs/rhs: {}; {}; hyperplane error raised: {degenerate}",
            worst.join(", "),
            mins.join(", ")
        ),
    )
}

fn c13_cycle_convergence() -> Outcome {
    let ins = pndm();
    let cd = period_and_cycles(&ins, 1e-9).unwrap();
    let mut r = rng(13);
    let a = random_hermitian(2, &mut r);
    let x = ProjectivePoint::haar(2, &mut r);
    let limit: f64 = (0..cd.m)
        .map(|j| (qf(&cd.m_r[j], &x) * (cd.rho[j].matrix() * a.matrix()).trace()).re)
        .sum();
    let mut power = a.clone();
    let mut devs = Vec::new();
    for _ in 1..=20 {
        for _ in 0..cd.m {
            power = phi_apply(&ins, &power, false).unwrap();
        }
        devs.push((qf(&power, &x).re - limit).abs());
    }
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    let mut cfg = RunConfig::new(2 * 20, 10_000, 13);
    cfg.initial = Initial::Fixed(x.clone());
    cfg.occupation_budget = 0;
    let stats = run(&ins, &cfg).unwrap();
    let vals: Vec<f64> = stats
        .trajectories
        .iter()
        .map(|t| a.quadratic_form(&t.final_point).re)
        .collect();
    let (mean, var) = mean_var(&vals);
    let se = (var / vals.len() as f64).sqrt();
    let mc_gap = (mean - limit).abs();
    outcome(
        decreasing && mc_gap <= 3.0 * se,
        format!(
            "exact deviation n=1: {:.2e}, n=20: {:.2e}, decreasing: {decreasing}; MC Π^40 f(x) = {mean:.4} ± {se:.4} vs limit {limit:.4}",
            devs[0], devs[19]
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("exact peripheral eigenfunctions (PNDM)", c1_peripheral),
        ("quadratic-action identity", c2_quadratic_action),
        ("g(n) closed form for AD(0.36)", c3_g_closed_form),
        ("sub-multiplicativity of g", c4_submultiplicative),
        ("spectral gap of the DR kernel", c5_spectral_gap),
        ("period detection", c6_period),
        ("norm-tilt series", c7_gamma_series),
        ("Lyapunov exponent cross-consistency", c8_gamma_consistency),
        ("central limit theorem", c9_clt),
        ("Berry-Esseen scaling", c10_berry_esseen),
        ("restricted large deviations", c11_ldp),
        ("scalar bounds and log-moment inequality", c12_appendix),
        ("convergence of Π^{mn}", c13_cycle_convergence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|s| *s == id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("[{tag}] {id:>2} {name}: {} ({:.1}s)", o.detail, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
