//! Synthetic multi-output coupled analog of a hydraulic–mechanical
//! fuel-assembly bow computation.
//!
//! All dynamics and all numbers here are invented stand-ins, not physics.
//!
//! * Interface state: modal coefficients `c_a ∈ ℝ^K` of every assembly `a`.
//! * Local inlet flow `v_a = v̄ (1 + tilt (pos_a − ½) + profile cos(2π pos_a))`.
//! * Hydraulic code (per assembly, input `(c_a, v_a, h)`): lateral force at
//!   each spacer grid `z_k`,
//!   `f_k = h (v_a/v_ref)² [drift sin(πz_k) − κ tanh(w_k)]`, `w = M c_a`.
//! * Modal projection of the forces: `p_a = Mᵀ f_a`.
//! * Mechanical code (per assembly, input `p_a`): `d_i = λ_i tanh(p_i)`.
//! * Deformation update at step `t`:
//!   `c_a ← b_a + compliance (1 + creep t)/(MSI · clamping) d_a + growth t e₁`,
//!   with `b_a` the initial bow of the assembly's core region.
//!
//! The restoring term makes each step a contraction with modulus roughly
//! `compliance · max λ · κ`. Consecutive steps are warm-started from the
//! previous fixed point.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::modal::ModalBasis;
use crate::coupling::{carry_over, CouplingProblem, SolverBox, SurrogateSolver, Transfer};
use crate::design::{lhs, Design};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::kernels::{KernelFamily, LmcKernel, ScalarKernel};
use crate::rng::{self, tag};
use crate::sensitivity::{Factor, Group, InputSpec, Marginal};
use crate::uq::Cycle;

/// Reference inlet velocity used to normalize the hydraulic load.
const V_REF: f64 = 5.0;
/// Number of core regions sharing one initial-bow amplitude.
pub const REGIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalogConfig {
    pub assemblies: usize,
    pub grids: usize,
    pub modes: usize,
    pub steps: usize,
    pub hydraulic_train: usize,
    pub mechanical_train: usize,
    pub doe_seed: u64,
    pub restoring: f64,
    pub drift: f64,
    /// Fixed relative radial inlet-flow variation `cos(2π pos)` across the core.
    pub flow_profile: f64,
    pub mechanical_gain: Vec<f64>,
    pub compliance: f64,
    pub creep_rate: f64,
    pub growth_rate: f64,
    /// Half widths of the hydraulic training box in each modal coordinate.
    pub mode_box: Vec<f64>,
    pub flow_box: (f64, f64),
    pub loss_box: (f64, f64),
    /// Half width of the mechanical training box in each modal force.
    pub force_box: f64,
    /// GP lengthscales as a fraction of each training-box width.
    pub lengthscale_fraction: f64,
    pub hydraulic_variance: f64,
    pub mechanical_variance: f64,
    /// Correlation length of the between-grid coregionalization `exp(−|Δz|/ℓ_B)`.
    pub coreg_length: f64,
    pub nugget: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub sigma_c: f64,
    pub sigma_s: f64,
    pub sigma_w: f64,
    pub clamping_mean: f64,
    pub clamping_sd: f64,
    /// Set while any distribution above is a placeholder rather than a sourced value.
    pub non_paper: bool,
}

impl Default for AnalogConfig {
    fn default() -> Self {
        Self {
            assemblies: 15,
            grids: 10,
            modes: 3,
            steps: 5,
            hydraulic_train: 80,
            mechanical_train: 40,
            doe_seed: 0,
            restoring: 0.5,
            drift: 0.2,
            flow_profile: 0.04,
            mechanical_gain: vec![0.4, 0.3, 0.2],
            compliance: 1.0,
            creep_rate: 0.1,
            growth_rate: 0.05,
            mode_box: vec![4.0, 3.0, 2.0],
            flow_box: (4.5, 5.5),
            loss_box: (0.8, 1.2),
            force_box: 2.5,
            lengthscale_fraction: 0.5,
            hydraulic_variance: 0.25,
            mechanical_variance: 0.25,
            coreg_length: 0.3,
            nugget: 1e-12,
            tolerance: 1e-6,
            max_iter: 200,
            sigma_c: 0.5,
            sigma_s: 0.3,
            sigma_w: 0.2,
            clamping_mean: 1.0,
            clamping_sd: 0.1,
            non_paper: true,
        }
    }
}

impl AnalogConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("analog: {name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        pos("assemblies", self.assemblies)?;
        pos("grids", self.grids)?;
        pos("modes", self.modes)?;
        pos("steps", self.steps)?;
        if self.modes > self.grids {
            return Err(Error::Config("analog: modes must not exceed grids".into()));
        }
        if self.hydraulic_train < 2 || self.mechanical_train < 2 {
            return Err(Error::Config("analog: training designs need >= 2 points".into()));
        }
        if self.mechanical_gain.len() != self.modes || self.mode_box.len() != self.modes {
            return Err(Error::Config(format!(
                "analog: mechanical_gain and mode_box need {} entries",
                self.modes
            )));
        }
        let mut positive = vec![
            ("compliance", self.compliance),
            ("force_box", self.force_box),
            ("lengthscale_fraction", self.lengthscale_fraction),
            ("hydraulic_variance", self.hydraulic_variance),
            ("mechanical_variance", self.mechanical_variance),
            ("coreg_length", self.coreg_length),
            ("tolerance", self.tolerance),
            ("sigma_c", self.sigma_c),
            ("sigma_s", self.sigma_s),
            ("sigma_w", self.sigma_w),
            ("clamping_sd", self.clamping_sd),
        ];
        positive.extend(self.mode_box.iter().map(|v| ("mode_box", *v)));
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("analog: {name} must be finite and > 0, got {v}")));
            }
        }
        for (name, (lo, hi)) in [("flow_box", self.flow_box), ("loss_box", self.loss_box)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi && lo > 0.0) {
                return Err(Error::Config(format!("analog: {name} needs 0 < lo < hi")));
            }
        }
        if !(self.nugget >= 0.0) {
            return Err(Error::Config("analog: nugget must be >= 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("analog: max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub fn interface_dim(&self) -> usize {
        self.assemblies * self.modes
    }

    /// Uncertain inputs: three vector bow factors, one boundary-condition
    /// vector and five scalars; three fixed constants follow in `θ`.
    pub fn input_spec(&self) -> Result<InputSpec> {
        let bow = |sd: f64| vec![Marginal::Normal { mean: 0.0, sd }; REGIONS];
        let unit = Marginal::Uniform { lo: 0.9, hi: 1.1 };
        let coef = Marginal::Uniform { lo: 0.8, hi: 1.2 };
        InputSpec::new(
            vec![
                Factor::vector("C", bow(self.sigma_c)),
                Factor::vector("S", bow(self.sigma_s)),
                Factor::vector("W", bow(self.sigma_w)),
                Factor::vector(
                    "BC",
                    vec![
                        Marginal::Normal { mean: V_REF, sd: 0.05 },
                        Marginal::Normal { mean: 0.0, sd: 0.1 },
                    ],
                ),
                Factor::scalar("h_l", unit),
                Factor::scalar("MSI", unit),
                Factor::scalar(
                    "grid_clamping",
                    Marginal::Normal {
                        mean: self.clamping_mean,
                        sd: self.clamping_sd,
                    },
                ),
                Factor::scalar("C_creep", coef),
                Factor::scalar("C_growth", coef),
            ],
            vec![
                ("inlet_temperature".into(), 1.0),
                ("axial_grid_resistance".into(), 1.0),
                ("fast_flux".into(), 1.0),
            ],
        )
    }

    fn modal(&self) -> Result<ModalBasis> {
        ModalBasis::new(self.grids, self.modes)
    }

    fn hydraulic_box(&self) -> Vec<(f64, f64)> {
        let mut b: Vec<(f64, f64)> = self.mode_box.iter().map(|&h| (-h, h)).collect();
        b.push(self.flow_box);
        b.push(self.loss_box);
        b
    }

    fn mechanical_box(&self) -> Vec<(f64, f64)> {
        vec![(-self.force_box, self.force_box); self.modes]
    }
}

/// Positions of the named scalars inside `θ` (see `AnalogConfig::input_spec`).
#[derive(Debug, Clone, Copy)]
struct ThetaLayout;

impl ThetaLayout {
    const C: usize = 0;
    const BC: usize = 3 * REGIONS;
    const H_L: usize = Self::BC + 2;
    const MSI: usize = Self::H_L + 1;
    const CLAMP: usize = Self::MSI + 1;
    const CREEP: usize = Self::CLAMP + 1;
    const GROWTH: usize = Self::CREEP + 1;
    const TEMPERATURE: usize = Self::GROWTH + 1;
    const RESISTANCE: usize = Self::TEMPERATURE + 1;
    const FLUX: usize = Self::RESISTANCE + 1;
    const LEN: usize = Self::FLUX + 1;
}

fn region(a: usize, assemblies: usize) -> usize {
    (a * REGIONS / assemblies).min(REGIONS - 1)
}

/// Exact hydraulic code for one assembly: `(c, v, h) ↦ f ∈ ℝ^G`.
fn hydraulic_code(cfg: &AnalogConfig, basis: &ModalBasis, x: &[f64]) -> Vec<f64> {
    let k = cfg.modes;
    let c = DVector::from_column_slice(&x[..k]);
    let (v, h) = (x[k], x[k + 1]);
    let w = &basis.modes * c;
    let q = h * (v / V_REF).powi(2);
    basis
        .nodes
        .iter()
        .zip(w.iter())
        .map(|(z, wk)| q * (cfg.drift * (PI * z).sin() - cfg.restoring * wk.tanh()))
        .collect()
}

/// Exact mechanical code for one assembly: `p ↦ d ∈ ℝ^K`.
fn mechanical_code(cfg: &AnalogConfig, p: &[f64]) -> Vec<f64> {
    p.iter().zip(&cfg.mechanical_gain).map(|(p, l)| l * p.tanh()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalogMode {
    Exact,
    GpMean,
}

pub struct AnalogProblem {
    pub config: AnalogConfig,
    pub spec: InputSpec,
    pub cycle: Cycle,
    /// Hydraulic and mechanical surrogates (gp-mean mode only).
    pub models: Option<[Arc<GpModel>; 2]>,
}

impl AnalogProblem {
    /// The same cycle with parameters `θ` frozen in every step.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Cycle> {
        if theta.len() != ThetaLayout::LEN {
            return Err(Error::Config(format!(
                "analog expects theta of length {}, got {}",
                ThetaLayout::LEN,
                theta.len()
            )));
        }
        let mut c = self.cycle.clone();
        for p in &mut c.problems {
            p.theta = theta.to_vec();
        }
        Ok(c)
    }
}

fn fit_hydraulic(cfg: &AnalogConfig, basis: &ModalBasis) -> Result<GpModel> {
    let bounds = cfg.hydraulic_box();
    let mut r = rng::stream(cfg.doe_seed, &[tag::DESIGN, cfg.hydraulic_train as u64, 1]);
    let design = lhs(cfg.hydraulic_train, &bounds, &mut r)?;
    let z: Vec<f64> = design.points.iter().flat_map(|x| hydraulic_code(cfg, basis, x)).collect();
    let kernel = ScalarKernel::new(
        KernelFamily::Matern52,
        widths(&design, cfg.lengthscale_fraction),
        1.0,
    )?;
    let g = cfg.grids;
    let b = DMatrix::from_fn(g, g, |i, j| {
        cfg.hydraulic_variance * (-(basis.nodes[i] - basis.nodes[j]).abs() / cfg.coreg_length).exp()
    });
    GpModel::fit(
        LmcKernel::separable(kernel, b)?,
        cfg.modes + 2,
        design.points,
        z,
        cfg.nugget,
        None,
    )
}

fn fit_mechanical(cfg: &AnalogConfig) -> Result<GpModel> {
    let bounds = cfg.mechanical_box();
    let mut r = rng::stream(cfg.doe_seed, &[tag::DESIGN, cfg.mechanical_train as u64, 2]);
    let design = lhs(cfg.mechanical_train, &bounds, &mut r)?;
    let z: Vec<f64> = design.points.iter().flat_map(|p| mechanical_code(cfg, p)).collect();
    let kernel = ScalarKernel::new(
        KernelFamily::Matern52,
        widths(&design, cfg.lengthscale_fraction),
        1.0,
    )?;
    let b = DMatrix::identity(cfg.modes, cfg.modes) * cfg.mechanical_variance;
    GpModel::fit(LmcKernel::separable(kernel, b)?, cfg.modes, design.points, z, cfg.nugget, None)
}

fn widths(design: &Design, fraction: f64) -> Vec<f64> {
    design.bounds.iter().map(|(lo, hi)| fraction * (hi - lo)).collect()
}

/// Build the `T`-step analog cycle; `θ` starts at the nominal parameter values.
pub fn build_synthetic_analog(cfg: &AnalogConfig, mode: AnalogMode) -> Result<AnalogProblem> {
    cfg.validate()?;
    let basis = Arc::new(cfg.modal()?);
    let spec = cfg.input_spec()?;
    let theta = spec.nominal();
    let (na, k, g) = (cfg.assemblies, cfg.modes, cfg.grids);
    let hyd_in = k + 2;

    let (hyd, mech, models) = match mode {
        AnalogMode::Exact => {
            let (c1, b1) = (cfg.clone(), basis.clone());
            let c2 = cfg.clone();
            let hyd = SolverBox::exact("hydraulic", na * hyd_in, na * g, move |x, _| {
                Ok(x.chunks(hyd_in).flat_map(|xa| hydraulic_code(&c1, &b1, xa)).collect())
            });
            let mech = SolverBox::exact("mechanical", na * k, na * k, move |x, _| {
                Ok(x.chunks(k).flat_map(|p| mechanical_code(&c2, p)).collect())
            });
            (hyd, mech, None)
        }
        AnalogMode::GpMean => {
            let mh = Arc::new(fit_hydraulic(cfg, &basis)?);
            let mm = Arc::new(fit_mechanical(cfg)?);
            let hyd = SolverBox::surrogate("hydraulic", SurrogateSolver::new(vec![mh.clone()], na)?);
            let mech = SolverBox::surrogate("mechanical", SurrogateSolver::new(vec![mm.clone()], na)?);
            (hyd, mech, Some([mh, mm]))
        }
    };

    let profile = cfg.flow_profile;
    let to_hydraulic = {
        Transfer::map(na * k, na * hyd_in, move |u, th| {
            let mut x = Vec::with_capacity(na * hyd_in);
            let h = th[ThetaLayout::H_L] * th[ThetaLayout::RESISTANCE];
            for a in 0..na {
                let pos = (a as f64 + 0.5) / na as f64;
                let v = th[ThetaLayout::BC] * (1.0 + th[ThetaLayout::BC + 1] * (pos - 0.5) + profile * (2.0 * PI * pos).cos());
                x.extend_from_slice(&u[a * k..(a + 1) * k]);
                x.push(v);
                x.push(h);
            }
            x
        })
    };
    let mut projection = DMatrix::zeros(na * k, na * g);
    for a in 0..na {
        projection
            .view_mut((a * k, a * g), (k, g))
            .copy_from(&basis.modes.transpose());
    }
    let to_mechanical = Transfer::Affine {
        matrix: projection,
        offset: DVector::zeros(na * k),
    };

    let mid = basis.eval(0.5);
    let mut problems = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let (creep, growth, compliance) = (cfg.creep_rate, cfg.growth_rate, cfg.compliance);
        let update = Transfer::map(na * k, na * k, move |d, th| {
            let tf = t as f64;
            let scale = compliance * (1.0 + creep * th[ThetaLayout::CREEP] * th[ThetaLayout::FLUX] * tf)
                / (th[ThetaLayout::MSI] * th[ThetaLayout::CLAMP]);
            let shift = growth * th[ThetaLayout::GROWTH] * th[ThetaLayout::TEMPERATURE] * tf;
            let mut u = Vec::with_capacity(na * k);
            for a in 0..na {
                let r = region(a, na);
                for i in 0..k {
                    let bow = if i < 3 { th[ThetaLayout::C + i * REGIONS + r] } else { 0.0 };
                    let e1 = if i == 0 { shift } else { 0.0 };
                    u.push(bow + scale * d[a * k + i] + e1);
                }
            }
            u
        });
        let mid = mid.clone();
        let post = Transfer::map(na * k, na, move |u, _| {
            u.chunks(k).map(|c| c.iter().zip(mid.iter()).map(|(c, m)| c * m).sum()).collect()
        });
        let p = CouplingProblem::new(
            vec![hyd.clone(), mech.clone()],
            vec![to_hydraulic.clone(), to_mechanical.clone(), update],
            vec![0.0; na * k],
        )?
        .with_tolerance(cfg.tolerance)?
        .with_max_iter(cfg.max_iter)?
        .with_post_map(post)?
        .with_theta(theta.clone());
        problems.push(p);
    }
    Ok(AnalogProblem {
        config: cfg.clone(),
        spec,
        cycle: Cycle {
            problems,
            initial: vec![0.0; na * k],
            transition: Arc::new(carry_over),
        },
        models,
    })
}

/// Singleton groups over the nine analog factors.
pub fn analog_groups(spec: &InputSpec) -> Vec<Group> {
    crate::sensitivity::singleton_groups(&spec.factors.iter().map(|f| f.name.clone()).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{estimate_contraction, Direct};

    fn small() -> AnalogConfig {
        AnalogConfig {
            assemblies: 3,
            steps: 2,
            hydraulic_train: 30,
            mechanical_train: 15,
            ..Default::default()
        }
    }

    #[test]
    fn spec_has_nine_factors() {
        let s = AnalogConfig::default().input_spec().unwrap();
        assert_eq!(s.n_factors(), 9);
        assert_eq!(s.theta_dim(), ThetaLayout::LEN);
    }

    #[test]
    fn exact_cycle_converges_and_contracts() {
        let a = build_synthetic_analog(&small(), AnalogMode::Exact).unwrap();
        let r = a.cycle.run(&mut Direct).unwrap();
        assert_eq!(r.steps.len(), 2);
        assert!(r.steps.iter().all(|s| s.path.converged));
        let p = &a.cycle.problems[1];
        let u = r.steps[1].u.clone();
        let grid: Vec<Vec<f64>> = (0..5).map(|i| u.iter().map(|v| v + 0.1 * (i as f64 - 2.0)).collect()).collect();
        assert!(estimate_contraction(p, &grid).unwrap() < 1.0);
    }

    #[test]
    fn theta_length_checked() {
        let a = build_synthetic_analog(&small(), AnalogMode::Exact).unwrap();
        assert!(a.with_theta(&[0.0; 3]).is_err());
        assert!(a.with_theta(&a.spec.nominal()).is_ok());
    }

    #[test]
    fn rejects_bad_config() {
        let c = AnalogConfig {
            mechanical_gain: vec![0.1],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
