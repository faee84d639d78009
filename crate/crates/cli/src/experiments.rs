//! One function per experiment kind; each returns the report body, data files
//! and threshold checks.

use gpcouple::bench::analog::{analog_groups, build_synthetic_analog, AnalogMode};
use gpcouple::bench::modal::{deformation_field, noisy_projection_variance, ModalBasis};
use gpcouple::bench::velocity::{propagate_velocity_uncertainty, ProfileInputs};
use gpcouple::bench::{build_benchmark_problem, g1, g2, SurrogateMode, BENCHMARK_FIXED_POINT};
use gpcouple::bounds::{
    bound_ratios, calibrate_constant, empirical_coverage, evaluate_bounds, offset_lipschitz, uniform_ladder,
    variance_decay_slope, BoundInputs, ConstantSource, LatentBound, SolverBoundInputs,
};
use gpcouple::config::{ExperimentConfig, ExperimentKind, ProfileKind, SobolModel};
use gpcouple::coupling::{estimate_contraction, fixed_point, scalar_grid, Direct};
use gpcouple::design::fill_distance;
use gpcouple::gp::GpModel;
use gpcouple::kernels::{KernelFamily, ScalarKernel};
use gpcouple::reference::{
    additive, additive_spec, ishigami, ishigami_indices, ADDITIVE_FIRST, ISHIGAMI_A, ISHIGAMI_B,
};
use gpcouple::rng::{self, tag};
use gpcouple::sensitivity::{
    aggregated_indices, bootstrap_se, evaluate_plan, saltelli_matrices, singleton_groups, sobol_indices, InputSpec,
    PlanOutputs,
};
use gpcouple::stats::{ks_two_sample, welch_t};
use gpcouple::uq::{ensemble_stats, run_method2, run_method3, run_method3_cycle, sample_stats, McEnsemble, Method};
use gpcouple::{linalg, Error, Result};
use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use crate::Artifacts;

/// Stream tag for the method-agreement repetitions.
const AGREEMENT: u64 = 0x4147_5245;

/// Significance level of the agreement test and the required passing share.
const AGREEMENT_ALPHA: f64 = 0.01;
const AGREEMENT_SHARE: f64 = 0.8;

/// Tolerance of Sobol indices against closed-form values.
const SOBOL_TOL: f64 = 0.05;

/// Relative tolerance on projected modal variances.
const MODAL_REL_TOL: f64 = 0.03;

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    match cfg.experiment.kind {
        ExperimentKind::Benchmark => benchmark(cfg, true),
        ExperimentKind::Uq => benchmark(cfg, false),
        ExperimentKind::CycleUq => cycle_uq(cfg),
        ExperimentKind::Sobol => sobol(cfg),
        ExperimentKind::Bounds => bounds(cfg),
        ExperimentKind::Slopes => slopes(cfg),
        ExperimentKind::Velocity => velocity(cfg),
        ExperimentKind::Modal => modal(cfg),
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    scalar_grid(lo, hi, n).into_iter().map(|p| p[0]).collect()
}

fn max_interpolation_error(model: &GpModel, g: fn(f64) -> f64) -> f64 {
    let mut out = [0.0];
    model
        .design()
        .iter()
        .map(|x| {
            model.mean_into(x, &mut out);
            (out[0] - g(x[0])).abs()
        })
        .fold(0.0, f64::max)
}

fn run_method(m: Method, problem: &gpcouple::coupling::CouplingProblem, n: usize, seed: u64) -> Result<McEnsemble> {
    match m {
        Method::TrajectoryConditioned => run_method2(problem, n, seed),
        Method::MeanPathOffsets => run_method3(problem, n, seed),
    }
}

fn first_output(e: &McEnsemble) -> Vec<f64> {
    e.converged_samples().iter().map(|s| s[0]).collect()
}

/// Benchmark ensembles for every DOE size; with `full` also the exact fixed
/// point, the contraction estimate and the reference envelopes.
fn benchmark(cfg: &ExperimentConfig, full: bool) -> Result<Artifacts> {
    let b = &cfg.benchmark;
    let seed = cfg.experiment.master_seed;
    let mut art = Artifacts::default();
    let mut results = Map::new();

    if full {
        let exact = build_benchmark_problem(&b.settings(b.doe_sizes[0]), SurrogateMode::Exact)?;
        let fp = fixed_point(&exact.problem)?;
        let y = exact.problem.output(&fp.u)[0];
        let rho = estimate_contraction(&exact.problem, &scalar_grid(0.0, 1.0, b.contraction_grid))?;
        art.file("exact_path.csv", fp.path.to_csv());
        results.insert(
            "exact".into(),
            json!({
                "fixed_point": y,
                "iterations": fp.path.iterations,
                "reference": BENCHMARK_FIXED_POINT,
                "abs_error": (y - BENCHMARK_FIXED_POINT).abs(),
            }),
        );
        results.insert("contraction".into(), json!({"grid": b.contraction_grid, "rho": rho}));
        art.check(
            "exact_fixed_point",
            (y - BENCHMARK_FIXED_POINT).abs() <= 1e-6,
            format!("|{y} - {BENCHMARK_FIXED_POINT}| <= 1e-6"),
        );
        art.check("contraction", in_range(rho, 0.25, 0.31), format!("rho = {rho} in [0.25, 0.31]"));
    }

    let mut does = Vec::new();
    for &n in &b.doe_sizes {
        let bp = build_benchmark_problem(&b.settings(n), SurrogateMode::GpMean)?;
        let models = bp.models.as_ref().expect("gp-mean mode has models");
        let interp = [
            max_interpolation_error(&models[0], g1),
            max_interpolation_error(&models[1], g2),
        ];
        let gp_fp = fixed_point(&bp.problem)?;
        let mut entry = Map::new();
        entry.insert("n".into(), json!(n));
        entry.insert("doe_seed".into(), json!(b.doe_seed));
        if full {
            entry.insert("interpolation_max_error".into(), json!(interp));
            entry.insert(
                "gp_mean_fixed_point".into(),
                json!({"value": bp.problem.output(&gp_fp.u)[0], "iterations": gp_fp.path.iterations}),
            );
            art.check(
                format!("interpolation_n{n}"),
                interp.iter().all(|e| *e <= 1e-6),
                format!("max training residual {:e} <= 1e-6", interp[0].max(interp[1])),
            );
        }
        if let Some(d) = &bp.designs {
            art.file(format!("design_g1_n{n}.csv"), d[0].to_csv());
            art.file(format!("design_g2_n{n}.csv"), d[1].to_csv());
        }

        let mut methods = Map::new();
        let mut ensembles = Vec::new();
        for &m in &cfg.uq.methods {
            let e = run_method(m, &bp.problem, cfg.uq.replications, seed)?;
            let st = ensemble_stats(&e)?;
            art.file(format!("ensemble_{}_n{n}.csv", m.tag()), e.to_csv());
            let mean_iter = e.iterations.iter().sum::<usize>() as f64 / e.len() as f64;
            methods.insert(
                m.tag().into(),
                json!({
                    "replications": e.len(),
                    "excluded": e.excluded(),
                    "mean": st.mean[0],
                    "variance": st.variance[0],
                    "q025": st.q025[0],
                    "q975": st.q975[0],
                    "mean_iterations": mean_iter,
                    "offset_reuse": e.offset_reuse,
                    "repeats": e.repeats,
                }),
            );
            if full {
                envelope_checks(&mut art, m, n, st.mean[0], st.variance[0]);
            }
            ensembles.push(e);
        }
        entry.insert("methods".into(), Value::Object(methods));

        if let [a, c] = ensembles.as_slice() {
            let (xa, xc) = (first_output(a), first_output(c));
            entry.insert("welch".into(), serde_json::to_value(welch_t(&xa, &xc)?).expect("serializable"));
            entry.insert("ks".into(), serde_json::to_value(ks_two_sample(&xa, &xc)?).expect("serializable"));
            if cfg.uq.agreement_repeats > 0 {
                let (ma, mc) = (a.method, c.method);
                let mut p_values = Vec::new();
                for r in 0..cfg.uq.agreement_repeats as u64 {
                    let s = rng::derive_seed(seed, &[AGREEMENT, r]);
                    let ea = run_method(ma, &bp.problem, cfg.uq.replications, s)?;
                    let ec = run_method(mc, &bp.problem, cfg.uq.replications, s)?;
                    p_values.push(welch_t(&first_output(&ea), &first_output(&ec))?.p_value);
                }
                let passing = p_values.iter().filter(|p| **p > AGREEMENT_ALPHA).count();
                let need = (AGREEMENT_SHARE * p_values.len() as f64).ceil() as usize;
                entry.insert(
                    "agreement".into(),
                    json!({"alpha": AGREEMENT_ALPHA, "p_values": p_values, "passing": passing, "required": need}),
                );
                if full {
                    art.check(
                        format!("method_agreement_n{n}"),
                        passing >= need,
                        format!("{passing} of {} Welch p-values > {AGREEMENT_ALPHA}", p_values.len()),
                    );
                }
            }
        }
        does.push(Value::Object(entry));
    }
    results.insert("doe".into(), Value::Array(does));
    art.results = Value::Object(results);
    Ok(art)
}

/// Reference envelopes for the small (n = 20) and large (n = 200) designs.
fn envelope_checks(art: &mut Artifacts, m: Method, n: usize, mean: f64, var: f64) {
    let t = m.tag();
    match n {
        20 => {
            art.check(format!("{t}_mean_n20"), in_range(mean, 0.34, 0.37), format!("mean {mean} in [0.34, 0.37]"));
            art.check(
                format!("{t}_variance_n20"),
                in_range(var, 7e-5, 6e-4),
                format!("variance {var:e} in [7e-5, 6e-4]"),
            );
        }
        200 => {
            let d = (mean - BENCHMARK_FIXED_POINT).abs();
            art.check(format!("{t}_mean_n200"), d <= 5e-4, format!("|mean - y*| = {d:e} <= 5e-4"));
            art.check(format!("{t}_variance_n200"), var <= 1e-8, format!("variance {var:e} <= 1e-8"));
        }
        _ => {}
    }
}

/// Method 3 over the synthetic analog cycle, with the gp-mean and exact-code
/// cycles for reference.
fn cycle_uq(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let a = &cfg.analog;
    let mut art = Artifacts {
        non_paper: a.non_paper,
        ..Default::default()
    };
    let gp = build_synthetic_analog(a, AnalogMode::GpMean)?;
    let exact = build_synthetic_analog(a, AnalogMode::Exact)?;
    let mean_run = gp.cycle.run(&mut Direct)?;
    let exact_run = exact.cycle.run(&mut Direct)?;
    let gp_exact_diff = linalg::euclidean(&mean_run.flat_output(), &exact_run.flat_output());
    let max_abs_diff = mean_run
        .flat_output()
        .iter()
        .zip(exact_run.flat_output())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let last = exact.cycle.problems.len() - 1;
    let u = exact_run.steps[last].u.clone();
    let probes: Vec<Vec<f64>> = (0..3)
        .map(|i| u.iter().map(|v| v + 0.05 * (i as f64 - 1.0)).collect())
        .collect();
    let rho = estimate_contraction(&exact.cycle.problems[last], &probes)?;
    art.check("analog_contraction", rho < 1.0, format!("rho = {rho} < 1"));

    let e = run_method3_cycle(&gp.cycle, cfg.uq.replications, cfg.experiment.master_seed)?;
    let st = sample_stats(&e.converged_samples())?;
    art.file("ensemble_M3_cycle.csv", e.to_csv());
    let per_step = a.assemblies;
    let mut steps = Vec::new();
    let mut max_sd = 0.0f64;
    let mut csv = String::from("step,assembly,mean,sd,gp_mean,exact\n");
    let (gp_flat, ex_flat) = (mean_run.flat_output(), exact_run.flat_output());
    for t in 0..a.steps {
        let idx = t * per_step..(t + 1) * per_step;
        let sd: Vec<f64> = st.variance[idx.clone()].iter().map(|v| v.max(0.0).sqrt()).collect();
        let step_max = sd.iter().copied().fold(0.0, f64::max);
        max_sd = max_sd.max(step_max);
        for (k, i) in idx.clone().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t + 1,
                k + 1,
                gpcouple::report::fmt17(st.mean[i]),
                gpcouple::report::fmt17(sd[k]),
                gpcouple::report::fmt17(gp_flat[i]),
                gpcouple::report::fmt17(ex_flat[i]),
            ));
        }
        steps.push(json!({
            "step": t + 1,
            "iterations": mean_run.steps[t].path.iterations,
            "mean": &st.mean[idx.clone()],
            "sd": sd,
            "max_sd": step_max,
        }));
    }
    art.file("cycle_steps.csv", csv);
    let all_finite = st.mean.iter().chain(&st.variance).all(|v| v.is_finite());
    art.check("cycle_stats_finite", all_finite, "all per-step means and variances finite");
    art.check(
        "cycle_exclusions",
        e.excluded() as f64 <= gpcouple::uq::MAX_EXCLUDED_FRACTION * e.len() as f64,
        format!("{} of {} replications excluded", e.excluded(), e.len()),
    );
    art.results = json!({
        "assemblies": a.assemblies,
        "steps_count": a.steps,
        "replications": e.len(),
        "excluded": e.excluded(),
        "offset_reuse": e.offset_reuse,
        "mean_path_length": mean_run.path_len(),
        "max_sd": max_sd,
        "rho_exact": rho,
        "gp_vs_exact": {"euclidean": gp_exact_diff, "max_abs": max_abs_diff},
        "steps": steps,
    });
    Ok(art)
}

fn index_checks(art: &mut Artifacts, label: &str, est: &[f64], exact: &[f64]) {
    for (i, (e, x)) in est.iter().zip(exact).enumerate() {
        art.check(
            format!("{label}_{}", i + 1),
            (e - x).abs() <= SOBOL_TOL,
            format!("{e} vs {x} (tol {SOBOL_TOL})"),
        );
    }
}

fn sobol(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let s = &cfg.sobol;
    let seed = cfg.experiment.master_seed;
    let mut art = Artifacts::default();
    let mut r = rng::stream(seed, &[tag::SOBOL]);
    let (spec, groups, out): (InputSpec, _, PlanOutputs) = match s.model {
        SobolModel::Analog => {
            art.non_paper = cfg.analog.non_paper;
            let ap = build_synthetic_analog(&cfg.analog, AnalogMode::GpMean)?;
            let plan = saltelli_matrices(&ap.spec, s.n_s, &mut r)?;
            art.file("saltelli_plan.csv", plan.to_csv());
            let out = evaluate_plan(&plan, |theta| Ok(ap.with_theta(theta)?.run(&mut Direct)?.flat_output()))?;
            (ap.spec.clone(), analog_groups(&ap.spec), out)
        }
        SobolModel::Additive => {
            let spec = additive_spec();
            let plan = saltelli_matrices(&spec, s.n_s, &mut r)?;
            let out = evaluate_plan(&plan, |t| Ok(vec![additive(t)]))?;
            let names = names(&spec);
            (spec, singleton_groups(&names), out)
        }
        SobolModel::Ishigami => {
            let spec = gpcouple::reference::ishigami_spec();
            let plan = saltelli_matrices(&spec, s.n_s, &mut r)?;
            let out = evaluate_plan(&plan, |t| Ok(vec![ishigami(t, ISHIGAMI_A, ISHIGAMI_B)]))?;
            let names = names(&spec);
            (spec, singleton_groups(&names), out)
        }
    };
    let names = names(&spec);
    let res = sobol_indices(&out, &names)?;
    let expected = s.n_s * (spec.n_factors() + 2);
    art.check(
        "evaluation_count",
        res.evaluations == expected,
        format!("{} evaluations, expected n_s (n_x + 2) = {expected}", res.evaluations),
    );
    match s.model {
        SobolModel::Additive => {
            let first = res.outputs[0].first.clone().unwrap_or_default();
            index_checks(&mut art, "first_order", &first, &ADDITIVE_FIRST);
        }
        SobolModel::Ishigami => {
            let (f, t) = ishigami_indices(ISHIGAMI_A, ISHIGAMI_B);
            let first = res.outputs[0].first.clone().unwrap_or_default();
            let total = res.outputs[0].total.clone().unwrap_or_default();
            index_checks(&mut art, "first_order", &first, &f);
            index_checks(&mut art, "total", &total, &t);
        }
        SobolModel::Analog => {}
    }
    let shares = aggregated_indices(&res, &groups)?;
    let mut pie = String::from("output,label,share\n");
    for (l, sh) in shares.iter().enumerate() {
        if let Some(sh) = sh {
            for (lab, v) in sh.labels.iter().zip(&sh.normalized) {
                pie.push_str(&format!("{},{lab},{}\n", l + 1, gpcouple::report::fmt17(*v)));
            }
        }
    }
    art.file("pie.csv", pie);
    let mut csv = String::from("output,factor,first,total,first_clipped,total_clipped\n");
    for (l, o) in res.outputs.iter().enumerate() {
        if let (Some(f), Some(t), Some(fc), Some(tc)) = (&o.first, &o.total, &o.first_clipped, &o.total_clipped) {
            for i in 0..names.len() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    l + 1,
                    names[i],
                    gpcouple::report::fmt17(f[i]),
                    gpcouple::report::fmt17(t[i]),
                    gpcouple::report::fmt17(fc[i]),
                    gpcouple::report::fmt17(tc[i]),
                ));
            }
        }
    }
    art.file("indices.csv", csv);
    let degenerate = res.outputs.iter().filter(|o| o.is_degenerate()).count();
    let mut results = json!({
        "model": s.model,
        "n_s": res.n_s,
        "n_x": spec.n_factors(),
        "evaluations": res.evaluations,
        "degenerate_outputs": degenerate,
        "indices": res,
        "shares": shares,
    });
    if s.bootstrap > 0 {
        results["bootstrap_se"] = json!(bootstrap_se(&out, s.bootstrap, seed)?);
    }
    art.results = results;
    Ok(art)
}

fn names(spec: &InputSpec) -> Vec<String> {
    spec.factors.iter().map(|f| f.name.clone()).collect()
}

fn latent_bound(family: KernelFamily, constant: f64, h0: f64) -> Result<LatentBound> {
    let s = family.sobolev_order(1).ok_or_else(|| {
        Error::HypothesisViolation(format!("kernel family '{}' has no finite Sobolev order", family.name()))
    })?;
    Ok(LatentBound {
        smoothness: s,
        constant,
        h0,
    })
}

/// Deviation bound and per-replication coverage on the benchmark.
fn bounds(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let b = &cfg.benchmark;
    let bd = &cfg.bounds;
    let seed = cfg.experiment.master_seed;
    let n = b.doe_sizes[0];
    let mut art = Artifacts::default();
    let bp = build_benchmark_problem(&b.settings(n), SurrogateMode::GpMean)?;
    let models = bp.models.as_ref().expect("gp-mean mode has models");
    let designs = bp.designs.as_ref().expect("gp-mean mode has designs");
    let rho = estimate_contraction(&bp.problem, &scalar_grid(0.0, 1.0, b.contraction_grid))?;
    let probes = scalar_grid(0.0, 1.0, 11);
    let l_c: Vec<f64> = (0..models.len())
        .map(|k| offset_lipschitz(&bp.problem, &probes, 0, Some(k)))
        .collect::<Result<_>>()?;

    let kernel = ScalarKernel::isotropic(b.family, b.lengthscale, b.variance)?;
    let (constant, calibration) = match bd.constants {
        ConstantSource::UserSupplied => (bd.constant, Value::Null),
        ConstantSource::CalibratedOnCoarsest => {
            let ladder = uniform_ladder(&cfg.slopes.sizes)?;
            let rep = variance_decay_slope(&kernel, &ladder, b.nugget, bd.probe_resolution)?;
            let exponent = rep.theory.ok_or_else(|| {
                Error::HypothesisViolation(format!("kernel family '{}' has no finite Sobolev order", b.family.name()))
            })?;
            let c = calibrate_constant(&rep.rows[0], exponent, b.variance);
            let ratios = bound_ratios(&rep, c, exponent, b.variance);
            (c, json!({"ladder": rep.rows, "exponent": exponent, "ratios": ratios}))
        }
    };
    let latent = latent_bound(b.family, constant, bd.h0)?;
    let mut solvers = Vec::new();
    for (k, (m, d)) in models.iter().zip(designs).enumerate() {
        solvers.push(SolverBoundInputs {
            name: format!("g{}", k + 1),
            output_dim: m.output_dim(),
            input_dim: m.input_dim(),
            latents: vec![latent],
            lambda_max: linalg::max_eigenvalue(&m.kernel().prior_at_origin()),
            fill_distance: fill_distance(d, bd.probe_resolution)?,
            lipschitz: l_c[k],
        });
    }
    let report = evaluate_bounds(&BoundInputs {
        solvers,
        rho,
        l_h: bd.l_h,
        beta: bd.beta,
        constants: bd.constants,
    })?;
    let cov = empirical_coverage(&bp.problem, rho, bd.l_h, &l_c, bd.coverage_replications, seed, bd.radius_scale)?;
    let halved = empirical_coverage(
        &bp.problem,
        rho,
        bd.l_h,
        &l_c,
        bd.coverage_replications,
        seed,
        0.5 * bd.radius_scale,
    )?;
    if bd.radius_scale >= 1.0 {
        art.check(
            "coverage",
            cov.covered + cov.excluded == cov.n && cov.excluded < cov.n,
            format!("{} of {} replications within radius", cov.covered, cov.n - cov.excluded),
        );
    }
    art.results = json!({
        "n": n,
        "rho": rho,
        "l_h": bd.l_h,
        "l_c": l_c,
        "constant": constant,
        "calibration": calibration,
        "bound": report,
        "coverage": cov,
        "coverage_half_radius": halved,
    });
    Ok(art)
}

fn slopes(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let s = &cfg.slopes;
    let mut art = Artifacts::default();
    let kernel = ScalarKernel::isotropic(s.family, s.lengthscale, s.variance)?;
    let ladder = uniform_ladder(&s.sizes)?;
    let rep = variance_decay_slope(&kernel, &ladder, s.nugget, s.probe_resolution)?;
    art.file("slopes.csv", rep.to_csv());
    let ratios = rep.theory.map(|t| {
        let c = calibrate_constant(&rep.rows[0], t, s.variance);
        (c, bound_ratios(&rep, c, t, s.variance))
    });
    if let Some(t) = rep.theory {
        art.check(
            "slope",
            in_range(rep.slope, t - 1.5, t + 1.0),
            format!("slope {} in [{}, {}]", rep.slope, t - 1.5, t + 1.0),
        );
    }
    art.results = json!({
        "family": s.family,
        "lengthscale": s.lengthscale,
        "slope": rep.slope,
        "theory": rep.theory,
        "rows": rep.rows,
        "calibrated_constant": ratios.as_ref().map(|r| r.0),
        "bound_ratios": ratios.as_ref().map(|r| &r.1),
    });
    Ok(art)
}

fn velocity(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let v = &cfg.velocity;
    let mut art = Artifacts::default();
    let inputs = match v.profile {
        ProfileKind::Inlet => ProfileInputs::inlet(v.length),
        ProfileKind::Outlet => ProfileInputs::outlet(v.length),
    };
    let z = linspace(0.0, v.length, v.points);
    let field = propagate_velocity_uncertainty(&inputs, v.samples, &z, cfg.experiment.master_seed)?;
    art.file("velocity_field.csv", field.to_csv());
    let ok = field.mean.iter().chain(&field.variance).all(|x| x.is_finite()) && field.variance.iter().all(|x| *x >= 0.0);
    art.check("field_valid", ok, "finite mean, non-negative variance at every node");
    art.results = json!({"profile": v.profile, "inputs": inputs, "samples": v.samples, "field": field});
    Ok(art)
}

fn modal(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let m = &cfg.modal;
    let mut art = Artifacts::default();
    let basis = ModalBasis::new(m.nodes, m.modes)?;
    let mut r = rng::stream(cfg.experiment.master_seed, &[tag::MODAL]);
    let c: Vec<f64> = (0..m.modes).map(|k| 1.0 / (k + 1) as f64).collect();
    let var = noisy_projection_variance(&basis, &c, m.sigma, m.draws, &mut r)?;
    let target = m.sigma * m.sigma;
    for (k, v) in var.iter().enumerate() {
        art.check(
            format!("projected_variance_{}", k + 1),
            (v - target).abs() <= MODAL_REL_TOL * target,
            format!("{v} within 3% of {target}"),
        );
    }
    let cov = DMatrix::identity(m.modes, m.modes) * target;
    let field = deformation_field(&basis, &c, &cov, &linspace(0.0, 1.0, m.field_points))?;
    art.file("deformation_field.csv", field.to_csv());
    art.results = json!({
        "sigma": m.sigma,
        "draws": m.draws,
        "coefficients": c,
        "projected_variance": var,
        "target": target,
        "field": field,
    });
    Ok(art)
}
