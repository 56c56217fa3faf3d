//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line with its
//! measured value, threshold and runtime; the process fails if any fails.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssbolt::config::{InitialData, KernelSpec, MatrixSpec, SolverConfig};
use ssbolt::eigen::{perturbation_series, solve_eigenproblem, verify_eigen_bounds};
use ssbolt::field::{FourierField, GridSpec, PolarGrid};
use ssbolt::gain::gain;
use ssbolt::kernel::{compute_q, compute_theta, make_sphere_quadrature, Kernel, KernelProfile};
use ssbolt::matrix::{operator_norm, Mat, SymMat};
use ssbolt::profile::{check_fourth_order, extract_b_with, solve_profile, ProfileSetup, FOURTH_ORDER_MIN_SLOPE};
use ssbolt::verify::{Pipeline, B_CONSISTENCY_TOL, FOURTH_ORDER_RADII, MOMENT_CONSISTENCY_TOL, RATE_FIT_REL_UNCERTAINTY};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

type Criterion = fn() -> Outcome;

fn shear(a: f64) -> Mat {
    Mat::shear(2, a).unwrap()
}

fn uniform(d: usize) -> Kernel {
    Kernel::new(&KernelProfile::Uniform, d).unwrap()
}

fn shear_config() -> SolverConfig {
    SolverConfig::new(2, MatrixSpec::Shear { a: 0.01 }, KernelSpec::Uniform).unwrap()
}

fn kernel_scalars() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in [2usize, 3] {
        let k = uniform(d);
        let q = compute_q(&k);
        let theta = compute_theta(q, d);
        let quad = make_sphere_quadrature(d, if d == 2 { 64 } else { 24 }).unwrap();
        let g = k.eval(0.0).unwrap();
        let q_sphere = quad.integrate(|w| g * (1.0 - w[0] * w[0]));
        worst = worst
            .max((q_sphere - q).abs())
            .max((q - (1.0 - 1.0 / d as f64)).abs())
            .max((theta - 0.25).abs())
            .max((k.q() - q).abs())
            .max((k.theta() - theta).abs());
    }
    Outcome::new(worst <= 1e-10, format!("max error {worst:.3e} <= 1e-10"))
}

fn isotropic_exact() -> Outcome {
    let a = Mat::isotropic(2, 0.02).unwrap();
    let kernel = uniform(2);
    let eig = solve_eigenproblem(&a, kernel.theta()).unwrap();
    let beta_err = (eig.beta + 0.02).abs();
    let b_err = eig.b.sub(&SymMat::identity(2)).norm();
    let res = solve_profile(&a, &kernel, &ProfileSetup::default_for(2).unwrap()).unwrap();
    let maxwellian = FourierField::gaussian(Arc::clone(res.psi.grid()), &SymMat::identity(2)).unwrap();
    let sup = res.psi.sup_distance(&maxwellian);
    Outcome::new(
        beta_err <= 1e-12 && b_err <= 1e-12 && sup <= 1e-6,
        format!("|beta + a| {beta_err:.3e} <= 1e-12, ||B - I|| {b_err:.3e} <= 1e-12, sup |Psi - G| {sup:.3e} <= 1e-6"),
    )
}

fn eigen_bounds_sweep() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    let mut total = 0;
    for d in [2usize, 3] {
        let theta = uniform(d).theta();
        for _ in 0..100 {
            let rows: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let raw = Mat::from_rows(&rows).unwrap();
            let a = raw.scaled(0.9 * theta / 6.0 / operator_norm(&raw));
            total += 1;
            match solve_eigenproblem(&a, theta) {
                Ok(sol) if verify_eigen_bounds(&a, theta, &sol).all_hold() => {}
                _ => failures += 1,
            }
        }
    }
    Outcome::new(failures == 0, format!("{failures} of {total} matrices violate a bound"))
}

fn series_agreement() -> Outcome {
    let theta = 0.25;
    let mut passed = true;
    let mut parts = Vec::new();
    for eps in [0.02, 0.05, 0.1] {
        let a = shear(eps * theta);
        let direct = solve_eigenproblem(&a, theta).unwrap().beta;
        let s = perturbation_series(&a, theta, 6).unwrap();
        let diff = (s.beta_sum(6) - direct).abs();
        let tol = 10.0 * eps.powi(7) * theta;
        passed &= diff <= tol;
        parts.push(format!("eps {eps}: {diff:.2e} <= {tol:.2e}"));
    }
    Outcome::new(passed, parts.join(", "))
}

fn shear_cubic() -> Outcome {
    let (a, theta) = (0.01, 0.25);
    let beta = solve_eigenproblem(&shear(a), theta).unwrap().beta;
    let residual = (beta * (beta + theta).powi(2) - theta * a * a / 4.0).abs();
    Outcome::new(residual <= 1e-12, format!("beta {beta:.12e}, cubic residual {residual:.3e} <= 1e-12"))
}

fn gain_fixed_points() -> Outcome {
    let kernel = uniform(2);
    let quad = make_sphere_quadrature(2, 64).unwrap();
    let grid = Arc::new(PolarGrid::new(GridSpec::default_for(2).unwrap()).unwrap());
    let one = gain(&FourierField::constant_one(Arc::clone(&grid)), &kernel, &quad).unwrap();
    let exact_one = one.values().iter().all(|&v| v == 1.0);
    let mut worst: f64 = 0.0;
    for sigma in [0.25, 0.5, 1.0] {
        let g = FourierField::gaussian(Arc::clone(&grid), &SymMat::identity(2).scaled(2.0 * sigma)).unwrap();
        worst = worst.max(gain(&g, &kernel, &quad).unwrap().sup_distance(&g));
    }
    Outcome::new(
        exact_one && worst <= 1e-8,
        format!("Gamma(1) == 1: {exact_one}, Gaussian sup error {worst:.3e} <= 1e-8"),
    )
}

fn profile_consistency() -> Outcome {
    let p = Pipeline::new(shear_config()).unwrap();
    let eig = p.eigen().unwrap();
    let res = p.profile(&eig).unwrap();
    let fit = extract_b_with(&res.psi, &p.config.fit).unwrap();
    let err = fit.normalized().sub(&eig.b).norm();
    let slope = check_fourth_order(&res.psi, &fit.b, &FOURTH_ORDER_RADII).slope;
    Outcome::new(
        err <= B_CONSISTENCY_TOL && slope >= FOURTH_ORDER_MIN_SLOPE,
        format!("||B_fit - B|| {err:.3e} <= {B_CONSISTENCY_TOL:e}, p-slope {slope:.3} >= {FOURTH_ORDER_MIN_SLOPE}"),
    )
}

fn moment_relaxation() -> Outcome {
    let p = Pipeline::new(shear_config()).unwrap();
    let eig = p.eigen().unwrap();
    let m = p.moments(&eig).unwrap();
    Outcome::new(
        m.samples == 20 && !m.min_rate.fails() && !m.rate_uncertainty.fails(),
        format!(
            "{} samples, slowest rate {:.4} >= {:.4}, worst relative uncertainty {:.2e} <= {RATE_FIT_REL_UNCERTAINTY}",
            m.samples, m.min_rate.measured, m.min_rate.threshold, m.rate_uncertainty.measured
        ),
    )
}

fn profile_rate(config: SolverConfig, limit: Duration) -> Outcome {
    let start = Instant::now();
    let p = Pipeline::new(config).unwrap();
    let eig = p.eigen().unwrap();
    let res = p.profile(&eig).unwrap();
    let run = match p.dynamics(&eig, &res.psi) {
        Ok(run) => run,
        Err(e) => return Outcome::new(false, format!("evolution failed: {e}")),
    };
    let elapsed = start.elapsed();
    let c = &run.convergence;
    let [t0, t1] = c.window;
    Outcome::new(
        c.passes && elapsed < limit,
        format!(
            "rate {:.4} +- {:.4} >= mu {:.5} over [{t0}, {t1}] ({} samples), {:.0} s < {} s",
            c.fitted_rate,
            c.uncertainty,
            c.mu,
            c.samples_used,
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn profile_rate_default() -> Outcome {
    profile_rate(shear_config(), Duration::from_secs(30 * 60))
}

fn profile_rate_smoke() -> Outcome {
    let mut c = shear_config();
    c.grid.n_radial = Some(32);
    c.dynamics.t_final = 60.0;
    profile_rate(c.resolve().unwrap(), Duration::from_secs(3 * 60))
}

fn pde_ode_moments() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, a) in [("A = 0", MatrixSpec::Isotropic { a: 0.0 }), ("shear", MatrixSpec::Shear { a: 0.01 })] {
        let mut c = SolverConfig::new(2, a, KernelSpec::Uniform).unwrap();
        c.dynamics.t_final = 10.0;
        c.dynamics.snapshot_every = 1.0;
        c.dynamics.initial = InitialData::Gaussian {
            g0: vec![vec![1.2, 0.15], vec![0.15, 0.8]],
        };
        let p = Pipeline::new(c.resolve().unwrap()).unwrap();
        let eig = p.eigen().unwrap();
        let res = p.profile(&eig).unwrap();
        let run = p.dynamics(&eig, &res.psi).unwrap();
        let errs = run.moment_errors.unwrap();
        let t_last = run.trajectory.times[errs.len() - 1];
        let worst = errs.iter().copied().fold(0.0, f64::max);
        passed &= worst <= MOMENT_CONSISTENCY_TOL && t_last >= 10.0 - 1e-9;
        parts.push(format!("{name}: {worst:.3e}"));
    }
    Outcome::new(passed, format!("{} <= {MOMENT_CONSISTENCY_TOL:e} through t = 10", parts.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut c = shear_config();
    c.dynamics.enabled = Some(false);
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_ssbolt"))
            .arg("verify")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return Outcome::new(false, format!("verify exited with {status}"));
        }
        outputs.push(std::fs::read(out.join("verify.json")).unwrap());
    }
    let same = outputs[0] == outputs[1];
    Outcome::new(same, format!("two verify reports of {} bytes identical: {same}", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, Criterion, Duration); 12] = [
        ("1", "kernel scalars", kernel_scalars, Duration::from_secs(1)),
        ("2", "isotropic exact case", isotropic_exact, Duration::from_secs(30)),
        ("3", "eigenvalue bounds sweep", eigen_bounds_sweep, Duration::from_secs(10)),
        ("4", "series against direct solve", series_agreement, Duration::from_secs(5)),
        ("5", "shear cubic", shear_cubic, Duration::from_secs(1)),
        ("6", "gain fixed points", gain_fixed_points, Duration::from_secs(10)),
        ("7", "profile consistency", profile_consistency, Duration::from_secs(5 * 60)),
        ("8", "moment relaxation", moment_relaxation, Duration::from_secs(10)),
        ("9", "profile convergence rate, default grid", profile_rate_default, Duration::from_secs(30 * 60)),
        ("9s", "profile convergence rate, smoke grid", profile_rate_smoke, Duration::from_secs(3 * 60)),
        ("10", "PDE/ODE moment consistency", pde_ode_moments, Duration::from_secs(5 * 60)),
        ("11", "deterministic verify report", determinism, Duration::MAX),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let passed = outcome.passed && elapsed < limit;
        if !passed {
            failed += 1;
        }
        let budget = if limit == Duration::MAX {
            String::new()
        } else {
            format!(" < {} s", limit.as_secs())
        };
        println!(
            "{} criterion {id:>3} {name}: {} [{:.2} s{budget}]",
            if passed { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
