use std::io::BufReader;
use std::sync::Arc;

use ssbolt::config::{parse_config, InitialData, KernelSpec, MatrixSpec, SolverConfig};
use ssbolt::dynamics::{evolve, EvolveOptions};
use ssbolt::field::{FourierField, GridSpec, PolarGrid};
use ssbolt::kernel::make_sphere_quadrature;
use ssbolt::matrix::SymMat;
use ssbolt::output::{field_csv, write_results, Format};
use ssbolt::verify::{run_verify, Pipeline};

fn quick(a: MatrixSpec) -> SolverConfig {
    let mut c = SolverConfig::new(2, a, KernelSpec::Uniform).unwrap();
    c.dynamics.enabled = Some(false);
    c
}

#[test]
fn profile_is_stationary_under_evolution() {
    let c = SolverConfig::new(2, MatrixSpec::Shear { a: 0.01 }, KernelSpec::Uniform).unwrap();
    let p = Pipeline::new(c).unwrap();
    let eig = p.eigen().unwrap();
    let psi = p.profile(&eig).unwrap().psi;
    let quad = make_sphere_quadrature(2, p.config.sphere_order()).unwrap();
    let opts = EvolveOptions {
        t_final: 10.0,
        snapshot_every: 1.0,
        ..EvolveOptions::default()
    };
    let traj = evolve(&psi, &p.a, eig.beta, &p.kernel, &quad, &opts).unwrap();
    let worst = traj.fields.iter().map(|f| f.sup_distance(&psi)).fold(0.0, f64::max);
    assert_eq!(traj.times.last().copied(), Some(10.0));
    assert!(worst <= 5e-5, "sup |phi(t) - Psi| = {worst:e}");
}

#[test]
fn degenerate_gaussian_moments_follow_the_ode() {
    let mut c = SolverConfig::new(2, MatrixSpec::Isotropic { a: 0.0 }, KernelSpec::Uniform).unwrap();
    c.dynamics.t_final = 10.0;
    c.dynamics.snapshot_every = 2.0;
    c.dynamics.initial = InitialData::Gaussian {
        g0: vec![vec![2.0, 0.0], vec![0.0, 1e-3]],
    };
    let p = Pipeline::new(c.resolve().unwrap()).unwrap();
    let eig = p.eigen().unwrap();
    let psi = p.profile(&eig).unwrap().psi;
    let run = p.dynamics(&eig, &psi).unwrap();
    let worst = run.moment_errors.unwrap().into_iter().fold(0.0, f64::max);
    assert!(worst <= 1e-4, "moment mismatch {worst:e}");
    assert!((run.c_squared - 1.0005).abs() < 1e-12);
}

#[test]
fn isotropic_preset_passes_exactly() {
    let r = run_verify(&quick(MatrixSpec::Isotropic { a: 0.02 })).unwrap();
    assert!(r.passed, "{:?}", r.failures());
    let prof = r.profile.unwrap();
    assert!(prof.b_consistency.measured < 1e-8);
    assert_eq!(r.config_sha256.len(), 64);
}

#[test]
fn strong_drift_loads_then_warns() {
    let c = parse_config(r#"{"d": 2, "A": {"preset": "shear", "a": 0.05}, "kernel": {"type": "uniform"}, "dynamics": {"enabled": false}}"#)
        .unwrap();
    let r = run_verify(&c).unwrap();
    assert!(!r.regime.contraction_condition.passes);
    assert!((r.regime.contraction_condition.threshold - 1.0 / 48.0).abs() < 1e-15);
    assert!(r.warnings.iter().any(|w| w.contains("warn mode")));
}

#[test]
fn reports_write_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_verify(&quick(MatrixSpec::Shear { a: 0.01 })).unwrap();
    for format in [Format::Json, Format::Csv] {
        let a = dir.path().join(format!("a.{format:?}"));
        let b = dir.path().join(format!("nested/b.{format:?}"));
        write_results(&r, &a, format).unwrap();
        write_results(&r, &b, format).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

#[test]
fn field_csv_round_trips() {
    let spec = GridSpec {
        n_radial: 24,
        n_angular: 12,
        ..GridSpec::default_for(2).unwrap()
    };
    let grid = Arc::new(PolarGrid::new(spec).unwrap());
    let b = SymMat::from_rows(&[vec![1.1, 0.2], vec![0.2, 0.9]]).unwrap();
    let f = FourierField::gaussian(grid, &b).unwrap();
    let text = field_csv(&f);
    let back = FourierField::read_csv(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(back.grid().spec(), f.grid().spec());
    assert_eq!(back.grid().radii(), f.grid().radii());
    assert_eq!(back.values(), f.values());
    assert_eq!(back.tail(), f.tail());
    assert_eq!(field_csv(&back), text);
}
