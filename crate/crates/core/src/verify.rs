//! The full check pipeline: eigenproblem, stationary profile, moment
//! relaxation and time evolution, aggregated into one report.

use std::sync::Arc;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{InitialData, SolverConfig};
use crate::dynamics::{
    calibrate_c_squared, convergence_to_profile, moment_ode_solve, moment_relaxation, project_c_squared, decay_rate_bound,
    Evolver, RateReport, Trajectory,
};
use crate::eigen::{perturbation_series, solve_eigenproblem_tol, verify_eigen_bounds, EigenSolution, EigenBounds};
use crate::error::{Error, Result};
use crate::field::FourierField;
use crate::gain::GainOperator;
use crate::kernel::{make_sphere_quadrature, Kernel};
use crate::matrix::{operator_norm, Mat, SymMat};
use crate::output::json_sha256;
use crate::profile::{
    check_fourth_order, extract_b_with, solve_profile_with, FourthOrderReport, ProfileResult, FOURTH_ORDER_MIN_SLOPE,
};

/// Radii of the fourth-order residual check.
pub const FOURTH_ORDER_RADII: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.4];
/// Largest admissible Tr-normalized `B` mismatch between profile and eigensolver.
pub const B_CONSISTENCY_TOL: f64 = 1e-3;
/// Largest admissible PDE/ODE second-moment mismatch.
pub const MOMENT_CONSISTENCY_TOL: f64 = 1e-4;
/// Window end of the PDE/ODE moment comparison.
pub const MOMENT_CONSISTENCY_T: f64 = 10.0;
/// Largest admissible relative standard error of a relaxation-rate fit.
pub const RATE_FIT_REL_UNCERTAINTY: f64 = 0.05;
/// Order of the perturbation series compared to the direct eigensolve.
pub const SERIES_ORDER: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    AtMost,
    AtLeast,
}

/// One measured quantity against its threshold. Checks that are not
/// `enforced` are reported but do not decide the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub measured: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub passes: bool,
    pub enforced: bool,
}

impl Check {
    pub fn new(measured: f64, threshold: f64, relation: Relation, enforced: bool) -> Self {
        let passes = match relation {
            Relation::Below => measured < threshold,
            Relation::AtMost => measured <= threshold,
            Relation::AtLeast => measured >= threshold,
        };
        Check {
            measured,
            threshold,
            relation,
            passes,
            enforced,
        }
    }

    pub fn fails(&self) -> bool {
        self.enforced && !self.passes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeSummary {
    pub norm_a: f64,
    pub q: f64,
    pub theta: f64,
    /// `||A|| < theta / 6`.
    pub series_condition: Check,
    /// `||A|| < q / 24`.
    pub contraction_condition: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenSummary {
    pub beta: f64,
    pub b: SymMat,
    pub spectral_gap: f64,
    pub residual: f64,
    pub bounds: EigenBounds,
    pub bound_beta: Check,
    pub bound_gap: Check,
    pub bound_b: Check,
    /// Order-6 series against the direct `beta`, threshold `10 eps^7 theta`.
    pub series: Option<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSummary {
    pub iterations: usize,
    pub converged: bool,
    pub mean_contraction: f64,
    pub residuals: Vec<f64>,
    pub final_residual: Check,
    pub fitted_b: SymMat,
    /// `||B_fit d / Tr B_fit - B||`.
    pub b_consistency: Check,
    pub fourth_order: FourthOrderReport,
    pub p_slope: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub samples: usize,
    pub rates: Vec<f64>,
    pub uncertainties: Vec<f64>,
    /// Slowest fitted rate of `||G(t) - c^2 B||` against `q / 12`.
    pub min_rate: Check,
    /// Largest relative fit uncertainty.
    pub rate_uncertainty: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsSummary {
    pub g0: Option<SymMat>,
    pub c_squared: f64,
    pub c_squared_calibrated: f64,
    pub mu: f64,
    pub convergence: RateReport,
    /// `||G_fit(t) - c^2 B||` per snapshot.
    pub moment_distances: Vec<f64>,
    /// `max_{t <= 10} ||G_fit(t) - G_ode(t)||`.
    pub moment_consistency: Option<Check>,
    pub rate: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config_sha256: String,
    pub config: SolverConfig,
    pub regime: RegimeSummary,
    pub eigen: EigenSummary,
    pub profile: Option<ProfileSummary>,
    pub moments: MomentSummary,
    pub dynamics: Option<DynamicsSummary>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl VerifyReport {
    /// Every check with its dotted name.
    pub fn named_checks(&self) -> Vec<(&'static str, &Check)> {
        let mut names = vec![
            ("regime.series_condition", &self.regime.series_condition),
            ("regime.contraction_condition", &self.regime.contraction_condition),
            ("eigen.bound_beta", &self.eigen.bound_beta),
            ("eigen.bound_gap", &self.eigen.bound_gap),
            ("eigen.bound_b", &self.eigen.bound_b),
            ("moments.min_rate", &self.moments.min_rate),
            ("moments.rate_uncertainty", &self.moments.rate_uncertainty),
        ];
        if let Some(s) = &self.eigen.series {
            names.push(("eigen.series", s));
        }
        if let Some(p) = &self.profile {
            names.extend([
                ("profile.final_residual", &p.final_residual),
                ("profile.b_consistency", &p.b_consistency),
                ("profile.p_slope", &p.p_slope),
            ]);
        }
        if let Some(d) = &self.dynamics {
            names.push(("dynamics.rate", &d.rate));
            if let Some(m) = &d.moment_consistency {
                names.push(("dynamics.moment_consistency", m));
            }
        }
        names
    }

    /// Names of the enforced checks that failed.
    pub fn failures(&self) -> Vec<String> {
        self.named_checks()
            .into_iter()
            .filter(|(_, c)| c.fails())
            .map(|(n, _)| n.to_string())
            .collect()
    }
}

/// Shared stages of the pipeline, also used by the individual subcommands.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: SolverConfig,
    pub a: Mat,
    pub kernel: Kernel,
    pub norm_a: f64,
}

#[derive(Debug, Clone)]
pub struct DynamicsRun {
    pub g0: Option<SymMat>,
    pub c_squared: f64,
    pub c_squared_calibrated: f64,
    pub trajectory: Trajectory,
    pub reference: Trajectory,
    pub convergence: RateReport,
    pub moment_distances: Vec<f64>,
    pub moment_errors: Option<Vec<f64>>,
}

impl Pipeline {
    pub fn new(config: SolverConfig) -> Result<Self> {
        let a = config.matrix()?;
        let kernel = config.kernel()?;
        let norm_a = operator_norm(&a);
        Ok(Pipeline {
            config,
            a,
            kernel,
            norm_a,
        })
    }

    pub fn theta(&self) -> f64 {
        self.kernel.theta()
    }

    /// `||A|| < q / 24`.
    pub fn in_regime(&self) -> bool {
        self.norm_a < self.kernel.q() / 24.0
    }

    pub fn eigen(&self) -> Result<EigenSolution> {
        solve_eigenproblem_tol(&self.a, self.theta(), self.config.tolerances.eigen).map_err(|e| e.at("eigen"))
    }

    pub fn profile(&self, eig: &EigenSolution) -> Result<ProfileResult> {
        solve_profile_with(&self.a, &self.kernel, &self.config.profile_setup(), eig).map_err(|e| e.at("profile"))
    }

    fn gain(&self, field: &FourierField) -> Result<GainOperator> {
        let quad = make_sphere_quadrature(self.config.d, self.config.sphere_order())?;
        GainOperator::new(Arc::clone(field.grid()), &self.kernel, &quad)
    }

    /// Random positive-definite `G0` for the relaxation sweep.
    pub fn random_g0(&self, rng: &mut ChaCha8Rng) -> SymMat {
        let d = self.config.d;
        let m: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        let g = &m * m.transpose() + DMatrix::identity(d, d) * 0.1;
        SymMat::new(g.clone() * (d as f64 / g.trace())).expect("symmetric by construction")
    }

    pub fn moments(&self, eig: &EigenSolution) -> Result<MomentSummary> {
        let mc = &self.config.moments;
        let steps = (mc.t_final / mc.sample_every).round() as usize;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * mc.t_final / steps as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut rates = Vec::with_capacity(mc.samples);
        let mut uncertainties = Vec::with_capacity(mc.samples);
        for _ in 0..mc.samples {
            let g0 = self.random_g0(&mut rng);
            let rep = moment_relaxation(&g0, &self.a, eig.beta, self.theta(), &eig.b, &times).map_err(|e| e.at("moments"))?;
            rates.push(rep.rate);
            uncertainties.push(rep.uncertainty);
        }
        let q = self.kernel.q();
        let min_rate = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let rel = rates
            .iter()
            .zip(&uncertainties)
            .map(|(r, s)| s / r.abs())
            .fold(0.0, f64::max);
        let enforced = self.in_regime() && mc.samples > 0;
        Ok(MomentSummary {
            samples: mc.samples,
            rates,
            uncertainties,
            min_rate: Check::new(min_rate, q / 12.0, Relation::AtLeast, enforced),
            rate_uncertainty: Check::new(rel, RATE_FIT_REL_UNCERTAINTY, Relation::AtMost, enforced),
        })
    }

    /// Initial field and `G0` (for Gaussian data) from the configuration.
    pub fn initial_field(&self, eig: &EigenSolution, psi: &FourierField) -> Result<(FourierField, Option<SymMat>)> {
        let init = &self.config.dynamics.initial;
        match init.g0(&eig.b)? {
            Some(g0) => Ok((FourierField::gaussian(Arc::clone(psi.grid()), &g0)?, Some(g0))),
            None => {
                let InitialData::Profile { c } = init else {
                    unreachable!("non-Gaussian initial data is a profile")
                };
                Ok((psi.scale_argument(*c), None))
            }
        }
    }

    pub fn dynamics(&self, eig: &EigenSolution, psi: &FourierField) -> Result<DynamicsRun> {
        let theta = self.theta();
        let (phi0, g0) = self.initial_field(eig, psi).map_err(|e| e.at("dynamics"))?;
        let (c2, c2_cal) = match (&g0, &self.config.dynamics.initial) {
            (Some(g), _) => {
                let c2 = project_c_squared(g, &self.a, eig.beta, theta).map_err(|e| e.at("dynamics"))?;
                let cal = calibrate_c_squared(&phi0, psi, &self.a, eig.beta, theta, &self.config.fit)
                    .map_err(|e| e.at("dynamics"))?;
                (c2, cal)
            }
            (None, InitialData::Profile { c }) => (c * c, c * c),
            (None, _) => unreachable!("Gaussian initial data carries G0"),
        };
        let gain = self.gain(psi).map_err(|e| e.at("dynamics"))?;
        let opts = self.config.evolve_options();
        let evolver = Evolver::new(gain, &self.a, eig.beta, opts.scheme).map_err(|e| e.at("dynamics"))?;
        info!("evolving to t = {} with dt = {}", opts.t_final, opts.dt);
        let trajectory = evolver.run(&phi0, &opts).map_err(|e| e.at("dynamics"))?;
        let start = psi.scale_argument(c2_cal.sqrt());
        info!("evolving the reference trajectory");
        let reference = evolver.run(&start, &opts).map_err(|e| e.at("dynamics"))?;
        let mu = decay_rate_bound(self.kernel.q(), self.norm_a);
        let convergence = convergence_to_profile(
            &trajectory,
            psi,
            c2_cal.sqrt(),
            mu,
            Some(&reference),
            &self.config.convergence_options(),
        )
        .map_err(|e| e.at("dynamics"))?;
        let target = eig.b.scaled(c2);
        let moment_distances = trajectory.moment_states.iter().map(|m| m.g.sub(&target).norm()).collect();
        let moment_errors = match &g0 {
            Some(g) => {
                let early: Vec<&crate::dynamics::MomentState> = trajectory
                    .moment_states
                    .iter()
                    .filter(|m| m.t <= MOMENT_CONSISTENCY_T + 1e-9)
                    .collect();
                let times: Vec<f64> = early.iter().map(|m| m.t).collect();
                let ode = moment_ode_solve(g, &self.a, eig.beta, theta, &times).map_err(|e| e.at("dynamics"))?;
                Some(early.iter().zip(&ode).map(|(p, o)| p.g.sub(&o.g).norm()).collect())
            }
            None => None,
        };
        Ok(DynamicsRun {
            g0,
            c_squared: c2,
            c_squared_calibrated: c2_cal,
            trajectory,
            reference,
            convergence,
            moment_distances,
            moment_errors,
        })
    }
}

fn regime_summary(p: &Pipeline) -> RegimeSummary {
    let (q, theta) = (p.kernel.q(), p.theta());
    RegimeSummary {
        norm_a: p.norm_a,
        q,
        theta,
        series_condition: Check::new(p.norm_a, theta / 6.0, Relation::Below, false),
        contraction_condition: Check::new(p.norm_a, q / 24.0, Relation::Below, false),
    }
}

fn eigen_summary(p: &Pipeline, eig: &EigenSolution) -> Result<EigenSummary> {
    let theta = p.theta();
    let bounds = verify_eigen_bounds(&p.a, theta, eig);
    let on = eig.series_condition;
    let conv = |b: &crate::eigen::Bound, relation| Check {
        measured: b.measured,
        threshold: b.threshold,
        relation,
        passes: b.holds,
        enforced: on,
    };
    let series = if p.norm_a > 0.0 && on {
        let s = perturbation_series(&p.a, theta, SERIES_ORDER).map_err(|e| e.at("eigen"))?;
        let diff = (s.beta_sum(SERIES_ORDER) - eig.beta).abs();
        Some(Check::new(diff, 10.0 * s.epsilon.powi(7) * theta, Relation::AtMost, true))
    } else {
        None
    };
    Ok(EigenSummary {
        beta: eig.beta,
        b: eig.b.clone(),
        spectral_gap: eig.spectral_gap,
        residual: eig.residual,
        bounds,
        bound_beta: conv(&bounds.beta_bound, Relation::Below),
        bound_gap: conv(&bounds.gap_bound, Relation::AtLeast),
        bound_b: conv(&bounds.b_bound, Relation::Below),
        series,
    })
}

fn profile_summary(p: &Pipeline, eig: &EigenSolution, res: &ProfileResult) -> Result<ProfileSummary> {
    let enforced = p.in_regime();
    let fit = extract_b_with(&res.psi, &p.config.fit).map_err(|e| e.at("profile"))?;
    let consistency = fit.normalized().sub(&eig.b).norm();
    let fourth = check_fourth_order(&res.psi, &fit.b, &FOURTH_ORDER_RADII);
    Ok(ProfileSummary {
        iterations: res.iterations,
        converged: res.converged,
        mean_contraction: res.mean_contraction(),
        residuals: res.residuals.clone(),
        final_residual: Check::new(res.final_residual, p.config.tolerances.fixed_point, Relation::AtMost, enforced),
        fitted_b: fit.b,
        b_consistency: Check::new(consistency, B_CONSISTENCY_TOL, Relation::AtMost, enforced),
        p_slope: Check::new(fourth.slope, FOURTH_ORDER_MIN_SLOPE, Relation::AtLeast, enforced),
        fourth_order: fourth,
    })
}

fn dynamics_summary(p: &Pipeline, run: DynamicsRun) -> DynamicsSummary {
    let conv = run.convergence;
    let enforced = p.in_regime() && conv.mu > 0.0 && !conv.indeterminate;
    let rate = Check::new(conv.fitted_rate, conv.mu - conv.uncertainty, Relation::AtLeast, enforced);
    let moment_consistency = run.moment_errors.map(|errs| {
        let worst = errs.iter().copied().fold(0.0, f64::max);
        Check::new(worst, MOMENT_CONSISTENCY_TOL, Relation::AtMost, true)
    });
    DynamicsSummary {
        g0: run.g0,
        c_squared: run.c_squared,
        c_squared_calibrated: run.c_squared_calibrated,
        mu: conv.mu,
        moment_distances: run.moment_distances,
        rate,
        moment_consistency,
        convergence: conv,
    }
}

/// Runs every stage the configuration supports. Outside `||A|| < q / 24` the
/// profile and dynamics checks are reported in warn mode and their
/// numerical failures become warnings.
pub fn run_verify(config: &SolverConfig) -> Result<VerifyReport> {
    let config_sha256 = json_sha256(config)?;
    let p = Pipeline::new(config.clone())?;
    let mut warnings = Vec::new();
    let regime = regime_summary(&p);
    if !regime.series_condition.passes {
        warnings.push(format!(
            "||A|| = {:.6e} >= theta/6 = {:.6e}: eigenvalue bounds are reported without enforcement",
            p.norm_a,
            regime.series_condition.threshold
        ));
    }
    if !regime.contraction_condition.passes {
        warnings.push(format!(
            "||A|| = {:.6e} >= q/24 = {:.6e}: profile and dynamics checks run in warn mode",
            p.norm_a,
            regime.contraction_condition.threshold
        ));
    }
    let eig = p.eigen()?;
    let eigen = eigen_summary(&p, &eig)?;
    let moments = p.moments(&eig)?;

    let mut profile = None;
    let mut dynamics = None;
    if p.kernel.is_abstract() {
        warnings.push("abstract kernel: profile and dynamics stages skipped".into());
    } else {
        match p.profile(&eig) {
            Ok(res) => {
                profile = Some(profile_summary(&p, &eig, &res)?);
                if config.dynamics.enabled.unwrap_or(config.d == 2) {
                    match p.dynamics(&eig, &res.psi) {
                        Ok(run) => {
                            if run.convergence.indeterminate {
                                warnings.push(
                                    "distance to the profile never clears the noise floor: rate check not enforced".into(),
                                );
                            }
                            dynamics = Some(dynamics_summary(&p, run));
                        }
                        Err(e) if !p.in_regime() => warnings.push(format!("dynamics failed in warn mode: {e}")),
                        Err(e) => return Err(e),
                    }
                }
            }
            Err(e) if !p.in_regime() => warnings.push(format!("profile failed in warn mode: {e}")),
            Err(e) => return Err(e),
        }
    }
    let mut report = VerifyReport {
        config_sha256,
        config: config.clone(),
        regime,
        eigen,
        profile,
        moments,
        dynamics,
        warnings,
        passed: false,
    };
    report.passed = report.failures().is_empty();
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(report)
}

/// Process exit code for a pipeline error: 2 for configuration and I/O
/// problems, 3 for numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config { .. } | Error::Parse { .. } | Error::Io { .. } => 2,
        _ => 3,
    }
}
