//! Property tests for the module invariants.

use gpcouple::bench::modal::ModalBasis;
use gpcouple::bench::velocity::{eval_parabola, parabola_from_inputs};
use gpcouple::bench::{build_benchmark_problem, BenchmarkSettings, SurrogateMode};
use gpcouple::bounds::deviation_radius;
use gpcouple::config::{parse_config, write_config, ExperimentConfig, ExperimentKind};
use gpcouple::coupling::{fixed_point, scalar_grid, estimate_contraction};
use gpcouple::design::{fill_distance, lhs, Design};
use gpcouple::gp::GpModel;
use gpcouple::kernels::{KernelFamily, LmcKernel, ScalarKernel};
use gpcouple::model_io::{read_model, write_model};
use gpcouple::report::fmt17;
use gpcouple::rng;
use gpcouple::sensitivity::{saltelli_matrices, Factor, InputSpec, Marginal};
use gpcouple::stats::{ks_two_sample, student_t_two_sided, welch_t};
use gpcouple::uq::{run_method2, run_method3};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Matern52),
        Just(KernelFamily::Matern32),
        Just(KernelFamily::SquaredExponential),
    ]
}

fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..1.0f64, d), 1..=n)
}

/// A 2-output LMC kernel with two latents and random PSD coregionalization.
fn lmc() -> impl Strategy<Value = LmcKernel> {
    (
        family(),
        family(),
        0.1..1.0f64,
        0.1..1.0f64,
        prop::collection::vec(-1.0..1.0f64, 4),
        prop::collection::vec(-1.0..1.0f64, 4),
    )
        .prop_map(|(f1, f2, l1, l2, a1, a2)| {
            let b = |a: Vec<f64>| {
                let m = DMatrix::from_row_slice(2, 2, &a);
                &m * m.transpose() + DMatrix::identity(2, 2) * 1e-3
            };
            LmcKernel::new(
                vec![
                    ScalarKernel::isotropic(f1, l1, 1.0).unwrap(),
                    ScalarKernel::isotropic(f2, l2, 0.5).unwrap(),
                ],
                vec![b(a1), b(a2)],
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lmc_symmetric_and_stationary(k in lmc(), x in points(1, 2), y in points(1, 2), s in prop::collection::vec(-2.0..2.0f64, 2)) {
        let (x, y) = (&x[0], &y[0]);
        let kxy = k.eval(x, y).unwrap();
        let kyx = k.eval(y, x).unwrap();
        prop_assert!((&kxy - kyx.transpose()).amax() <= 1e-14);
        let xs: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let ys: Vec<f64> = y.iter().zip(&s).map(|(a, b)| a + b).collect();
        prop_assert!((k.eval(&xs, &ys).unwrap() - kxy).amax() <= 1e-12);
    }

    #[test]
    fn gram_block_psd(k in lmc(), pts in points(20, 2), v in prop::collection::vec(-1.0..1.0f64, 40)) {
        let g = k.gram_block(&pts).unwrap();
        let mut v = DVector::from_iterator(g.nrows(), v.into_iter().take(g.nrows()));
        if v.norm() > 0.0 {
            v /= v.norm();
        }
        prop_assert!((v.transpose() * &g * &v)[(0, 0)] >= -1e-8);
    }

    #[test]
    fn gp_interpolates_and_variance_is_dominated(k in lmc(), pts in points(12, 2), probe in points(1, 2)) {
        let mut r = rng::stream(7, &[pts.len() as u64]);
        let obs: Vec<f64> = (0..2 * pts.len()).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let m = match GpModel::fit(k.clone(), 2, pts.clone(), obs.clone(), 1e-12, None) {
            Ok(m) => m,
            Err(gpcouple::Error::SingularDesign { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for (i, x) in pts.iter().enumerate() {
            let mu = m.posterior_mean(x).unwrap();
            for l in 0..2 {
                prop_assert!((mu[l] - obs[2 * i + l]).abs() <= 1e-6);
            }
        }
        let x = &probe[0];
        let mut diff = k.eval(x, x).unwrap() - m.posterior_cov(x, x).unwrap();
        gpcouple::linalg::symmetrize(&mut diff);
        prop_assert!(gpcouple::linalg::min_eigenvalue(&diff) >= -1e-8);
    }

    #[test]
    fn conditioning_never_increases_variance(pts in points(10, 1), extra in 0.0..1.0f64, probe in 0.0..1.0f64, ls in 0.1..0.5f64) {
        let k = LmcKernel::scalar(ScalarKernel::isotropic(KernelFamily::Matern52, ls, 1.0).unwrap());
        let z: Vec<f64> = pts.iter().map(|p| p[0].sin()).collect();
        let Ok(small) = GpModel::fit(k.clone(), 1, pts.clone(), z.clone(), 1e-12, None) else { return Ok(()) };
        let mut more = pts.clone();
        more.push(vec![extra]);
        let mut z2 = z;
        z2.push(extra.sin());
        let Ok(big) = GpModel::fit(k, 1, more, z2, 1e-12, None) else { return Ok(()) };
        let x = [probe];
        prop_assert!(big.posterior_cov(&x, &x).unwrap()[(0, 0)] <= small.posterior_cov(&x, &x).unwrap()[(0, 0)] + 1e-8);
    }

    #[test]
    fn fill_distance_refinement_monotone(pts in points(15, 2), extra in points(5, 2)) {
        let bounds = vec![(0.0, 1.0); 2];
        let a = Design::new(pts.clone(), bounds.clone()).unwrap();
        let mut all = pts;
        all.extend(extra);
        let b = Design::new(all, bounds).unwrap();
        prop_assert!(fill_distance(&b, 64).unwrap() <= fill_distance(&a, 64).unwrap());
    }

    #[test]
    fn lhs_is_latin_and_csv_round_trips(n in 1usize..40, d in 1usize..4, seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[]);
        let des = lhs(n, &vec![(-1.0, 2.0); d], &mut r).unwrap();
        prop_assert!(des.is_latin());
        prop_assert_eq!(Design::from_csv(&des.to_csv()).unwrap(), des);
    }

    #[test]
    fn radius_monotone(l_h in 0.0..3.0f64, rho in 0.0..0.9f64, t in prop::collection::vec(0.0..1.0f64, 2), bump in 0.0..0.5f64) {
        let l = [0.5, 0.5];
        let base = deviation_radius(l_h, rho, &l, &t).unwrap();
        prop_assert!(deviation_radius(l_h + bump, rho, &l, &t).unwrap() >= base);
        prop_assert!(deviation_radius(l_h, (rho + bump).min(0.99), &l, &t).unwrap() >= base);
        let t2 = [t[0] + bump, t[1]];
        prop_assert!(deviation_radius(l_h, rho, &l, &t2).unwrap() >= base);
    }

    #[test]
    fn saltelli_plan_size(n_s in 2usize..200, k in 1usize..6, vector in 1usize..3) {
        let u = Marginal::Uniform { lo: 0.0, hi: 1.0 };
        let factors = (0..k).map(|i| Factor::vector(format!("f{i}"), vec![u; vector])).collect();
        let spec = InputSpec::new(factors, vec![("c".into(), 1.0)]).unwrap();
        let mut r = rng::stream(1, &[]);
        let plan = saltelli_matrices(&spec, n_s, &mut r).unwrap();
        prop_assert_eq!(plan.len(), n_s * (k + 2));
    }

    #[test]
    fn welch_antisymmetric_ks_symmetric(a in prop::collection::vec(-5.0..5.0f64, 3..30), b in prop::collection::vec(-5.0..5.0f64, 3..30)) {
        if let (Ok(x), Ok(y)) = (welch_t(&a, &b), welch_t(&b, &a)) {
            prop_assert!((x.statistic + y.statistic).abs() <= 1e-12 * x.statistic.abs().max(1.0));
        }
        let k1 = ks_two_sample(&a, &b).unwrap();
        let k2 = ks_two_sample(&b, &a).unwrap();
        prop_assert_eq!(k1.statistic, k2.statistic);
        let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 3.0 + 1.0).collect::<Vec<_>>();
        prop_assert_eq!(ks_two_sample(&f(&a), &f(&b)).unwrap().statistic, k1.statistic);
    }

    #[test]
    fn t_pvalue_monotone(t in 0.0..10.0f64, dt in 0.0..5.0f64, df in 1.0..200.0f64) {
        prop_assert!(student_t_two_sided(t + dt, df) <= student_t_two_sided(t, df) + 1e-15);
    }

    #[test]
    fn modal_projection_left_inverse(c in prop::collection::vec(-5.0..5.0f64, 3)) {
        let b = ModalBasis::standard();
        let back = b.project(b.synthesize(&c).as_slice()).unwrap();
        for k in 0..3 {
            prop_assert!((back[k] - c[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn parabola_constraints(mean in 4.0..6.0f64, dev in -0.2..0.2f64, off in -0.3..0.3f64, len in 0.5..3.0f64) {
        let off = off * len;
        let p = parabola_from_inputs(mean, dev, off, len).unwrap();
        let (a, b, c) = p;
        let avg = a * len * len / 3.0 + b * len / 2.0 + c;
        prop_assert!((avg - mean).abs() <= 1e-10);
        let xv = len / 2.0 + off;
        prop_assert!((eval_parabola(p, xv) - mean - dev).abs() <= 1e-10);
        if a != 0.0 {
            prop_assert!((2.0 * a * xv + b).abs() <= 1e-10 * (a.abs() + b.abs()).max(1.0));
        }
    }

    #[test]
    fn fmt17_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), kind in 0usize..8, reps in 2usize..5000, beta in 0.001..0.999f64, sizes in prop::collection::vec(3usize..500, 1..4)) {
        let mut c = ExperimentConfig::new(ExperimentKind::ALL[kind], seed);
        c.uq.replications = reps;
        c.bounds.beta = beta;
        c.benchmark.doe_sizes = sizes;
        let text = write_config(&c).unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), c);
    }

    #[test]
    fn model_text_round_trips(pts in points(8, 2), ls in prop::collection::vec(0.1..2.0f64, 2), var in 0.1..3.0f64) {
        let k = LmcKernel::scalar(ScalarKernel::new(KernelFamily::Matern32, ls, var).unwrap());
        let z: Vec<f64> = pts.iter().map(|p| p[0] - p[1]).collect();
        let Ok(m) = GpModel::fit(k, 2, pts, z, 1e-10, Some(vec![0.25])) else { return Ok(()) };
        let text = write_model(&m);
        let back = read_model(&text).unwrap();
        prop_assert_eq!(write_model(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ensembles_deterministic_and_prefix_stable(seed in any::<u64>()) {
        let bp = build_benchmark_problem(&BenchmarkSettings::default(), SurrogateMode::GpMean).unwrap();
        for run in [run_method2, run_method3] {
            let a = run(&bp.problem, 12, seed).unwrap();
            let b = run(&bp.problem, 12, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let c = run(&bp.problem, 6, seed).unwrap();
            prop_assert_eq!(&a.samples[..6], &c.samples[..]);
        }
    }
}

#[test]
fn benchmark_residuals_follow_contraction_envelope() {
    let p = build_benchmark_problem(&BenchmarkSettings::default(), SurrogateMode::Exact).unwrap();
    let rho = estimate_contraction(&p.problem, &scalar_grid(0.0, 1.0, 1001)).unwrap();
    let fp = fixed_point(&p.problem).unwrap();
    let r = fp.path.residuals();
    for w in r.windows(2) {
        assert!(w[1] <= rho * w[0] * (1.0 + 1e-6), "{} > {rho} * {}", w[1], w[0]);
    }
    let bound = (1e-8 / r[0]).ln() / rho.ln();
    assert!((fp.path.iterations as f64) <= bound.ceil() + 2.0);
}

#[test]
fn variance_shrinks_with_design_density() {
    let small = build_benchmark_problem(&BenchmarkSettings::default(), SurrogateMode::GpMean).unwrap();
    let large = build_benchmark_problem(
        &BenchmarkSettings {
            doe_size: 200,
            ..Default::default()
        },
        SurrogateMode::GpMean,
    )
    .unwrap();
    let var = |e: &gpcouple::uq::McEnsemble| gpcouple::uq::ensemble_stats(e).unwrap().variance[0];
    let vs = var(&run_method3(&small.problem, 200, 3).unwrap());
    let e2 = run_method2(&large.problem, 200, 3).unwrap();
    let e3 = run_method3(&large.problem, 200, 3).unwrap();
    assert!(var(&e3) * 1e3 <= vs);
    let m = |e: &gpcouple::uq::McEnsemble| gpcouple::uq::ensemble_stats(e).unwrap().mean[0];
    assert!((m(&e2) - m(&e3)).abs() <= 1e-4);
}
