//! End-to-end checks across modules.

use gpcouple::bench::analog::{build_synthetic_analog, AnalogConfig, AnalogMode};
use gpcouple::bench::{build_benchmark_problem, BenchmarkSettings, SurrogateMode, BENCHMARK_FIXED_POINT};
use gpcouple::coupling::{fixed_point, Direct};
use gpcouple::model_io::{read_model, write_model};
use gpcouple::reference::{additive, additive_spec};
use gpcouple::rng;
use gpcouple::sensitivity::{bootstrap_se, evaluate_plan, saltelli_matrices, sobol_indices};
use gpcouple::uq::{ensemble_stats, run_method2_cycle, run_method3_cycle, Method3Plan};

fn settings(n: usize) -> BenchmarkSettings {
    BenchmarkSettings {
        doe_size: n,
        ..Default::default()
    }
}

#[test]
fn gp_mean_fixed_points_near_reference() {
    for (n, tol) in [(20, 0.02), (200, 5e-4)] {
        let bp = build_benchmark_problem(&settings(n), SurrogateMode::GpMean).unwrap();
        let fp = fixed_point(&bp.problem).unwrap();
        let y = bp.problem.output(&fp.u)[0];
        assert!((y - BENCHMARK_FIXED_POINT).abs() <= tol, "n={n}: {y}");
    }
}

#[test]
fn surrogate_survives_text_round_trip() {
    let bp = build_benchmark_problem(&settings(20), SurrogateMode::GpMean).unwrap();
    for m in bp.models.unwrap() {
        let back = read_model(&write_model(&m)).unwrap();
        for x in [0.0, 0.123, 0.5, 0.987] {
            assert_eq!(m.posterior_mean(&[x]).unwrap(), back.posterior_mean(&[x]).unwrap());
        }
    }
}

fn small_analog() -> AnalogConfig {
    AnalogConfig {
        assemblies: 3,
        steps: 2,
        hydraulic_train: 30,
        mechanical_train: 15,
        ..Default::default()
    }
}

#[test]
fn analog_cycle_methods_agree_roughly() {
    let a = build_synthetic_analog(&small_analog(), AnalogMode::GpMean).unwrap();
    let e3 = run_method3_cycle(&a.cycle, 40, 5).unwrap();
    let e2 = run_method2_cycle(&a.cycle, 40, 5).unwrap();
    let (s2, s3) = (ensemble_stats(&e2).unwrap(), ensemble_stats(&e3).unwrap());
    assert_eq!(s3.mean.len(), 2 * 3);
    let mean_path = a.cycle.run(&mut Direct).unwrap().flat_output();
    for l in 0..s3.mean.len() {
        let sd = s3.variance[l].max(s2.variance[l]).sqrt();
        assert!((s3.mean[l] - mean_path[l]).abs() <= 4.0 * sd + 1e-9);
        assert!((s2.mean[l] - s3.mean[l]).abs() <= 6.0 * sd + 1e-9);
    }
}

#[test]
fn analog_zero_offsets_reproduce_mean_cycle() {
    let a = build_synthetic_analog(&small_analog(), AnalogMode::GpMean).unwrap();
    let plan = Method3Plan::new(a.cycle.clone()).unwrap();
    let y = plan.replicate_with_offsets(&plan.zero_offsets()).unwrap().unwrap();
    assert_eq!(y, a.cycle.run(&mut Direct).unwrap().flat_output());
}

#[test]
fn additive_indices_sum_to_one_and_bootstrap_error_shrinks() {
    let spec = additive_spec();
    let names = vec!["x1".to_string(), "x2".to_string()];
    let mut se = Vec::new();
    for n_s in [1000, 10_000] {
        let mut r = rng::stream(11, &[n_s as u64]);
        let plan = saltelli_matrices(&spec, n_s, &mut r).unwrap();
        let out = evaluate_plan(&plan, |t| Ok(vec![additive(t)])).unwrap();
        let res = sobol_indices(&out, &names).unwrap();
        let o = &res.outputs[0];
        let (s, st) = (o.first.as_ref().unwrap(), o.total.as_ref().unwrap());
        if n_s == 10_000 {
            assert!((s.iter().sum::<f64>() - 1.0).abs() <= 0.05);
            for i in 0..2 {
                assert!(st[i] - s[i] <= 0.05);
            }
        }
        se.push(bootstrap_se(&out, 200, 3).unwrap()[0][1]);
    }
    assert!(se[1] < se[0], "{se:?}");
}
