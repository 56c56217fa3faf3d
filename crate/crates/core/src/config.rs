//! JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ConvergenceOptions, EvolveOptions, Scheme};
use crate::error::{Error, Result};
use crate::field::{GridSpec, PolarGrid, RadialSpacing};
use crate::kernel::{Kernel, KernelProfile};
use crate::matrix::{Mat, SymMat};
use crate::profile::{FitOptions, ProfileOptions, ProfileSetup};

/// The drift matrix `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    /// `A = a I`.
    Isotropic { a: f64 },
    /// `a_12 = a`, all other entries zero.
    Shear { a: f64 },
    Diagonal { values: Vec<f64> },
    Dense { entries: Vec<Vec<f64>> },
}

impl MatrixSpec {
    pub fn build(&self, d: usize) -> Result<Mat> {
        let field = "A";
        let m = match self {
            MatrixSpec::Isotropic { a } => Mat::isotropic(d, *a),
            MatrixSpec::Shear { a } => Mat::shear(d, *a),
            MatrixSpec::Diagonal { values } => {
                if values.len() != d {
                    return Err(Error::config("A.values", format!("expected {d} entries, got {}", values.len())));
                }
                Mat::diagonal(values)
            }
            MatrixSpec::Dense { entries } => {
                if entries.len() != d || entries.iter().any(|r| r.len() != d) {
                    return Err(Error::config("A.entries", format!("expected a {d}x{d} array")));
                }
                Mat::from_rows(entries)
            }
        };
        m.map_err(|e| Error::config(field, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Uniform,
    /// `(eta, value)` samples covering `[-1, 1]`.
    Table { points: Vec<[f64; 2]> },
    /// `(1 - eta)^(-exponent)`, clipped at `eta_cut`.
    PowerLaw {
        exponent: f64,
        eta_cut: f64,
        #[serde(default = "default_power_samples")]
        samples: usize,
    },
    /// Only `q` is known: eigenproblem and moment equations only.
    AbstractQ { q: f64 },
}

fn default_power_samples() -> usize {
    201
}

impl KernelSpec {
    pub fn profile(&self) -> Result<KernelProfile> {
        Ok(match self {
            KernelSpec::Uniform => KernelProfile::Uniform,
            KernelSpec::Table { points } => KernelProfile::Table(points.clone()),
            KernelSpec::PowerLaw {
                exponent,
                eta_cut,
                samples,
            } => KernelProfile::truncated_power_law(*exponent, *eta_cut, *samples)
                .map_err(|e| Error::config("kernel", e.to_string()))?,
            KernelSpec::AbstractQ { q } => KernelProfile::AbstractQ(*q),
        })
    }
}

/// Grid parameters; unset entries take the defaults for `d`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_radial: Option<usize>,
    pub n_angular: Option<usize>,
    pub n_polar: Option<usize>,
    pub k_max: Option<f64>,
    pub spacing: Option<RadialSpacing>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Sphere rule order (points on the circle; polar nodes for `d = 3`).
    pub sphere: Option<usize>,
    /// Gauss-Laguerre order of the time integral.
    pub time: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub fixed_point: f64,
    pub max_iterations: usize,
    /// Separation below which the two leading eigenvalues count as tied.
    pub eigen: f64,
    /// Pin the argument scale of the profile iterates.
    pub fix_scale: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        let p = ProfileOptions::default();
        Tolerances {
            fixed_point: p.tol,
            max_iterations: p.max_iter,
            eigen: crate::eigen::DEGENERACY_TOL,
            fix_scale: p.fix_scale,
        }
    }
}

/// Initial data for the time-dependent problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `exp(-1/2 G0:kk)` with `G0 = scale R B R^T`, `R` a rotation by
    /// `angle_deg` in the `(k_1, k_2)` plane.
    RotatedEigen { scale: f64, angle_deg: f64 },
    /// `exp(-1/2 G0:kk)`.
    Gaussian { g0: Vec<Vec<f64>> },
    /// The computed profile `Psi(ck)`.
    Profile { c: f64 },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::RotatedEigen {
            scale: 1.5,
            angle_deg: 20.0,
        }
    }
}

impl InitialData {
    /// `G0` for Gaussian data, given the eigenmatrix `B`; `None` for profile data.
    pub fn g0(&self, b: &SymMat) -> Result<Option<SymMat>> {
        let g0 = match self {
            InitialData::RotatedEigen { scale, angle_deg } => {
                let d = b.dim();
                let (s, c) = angle_deg.to_radians().sin_cos();
                let mut r = nalgebra::DMatrix::identity(d, d);
                r[(0, 0)] = c;
                r[(0, 1)] = -s;
                r[(1, 0)] = s;
                r[(1, 1)] = c;
                b.congruence(&r.transpose()).scaled(*scale)
            }
            InitialData::Gaussian { g0 } => {
                SymMat::from_rows(g0).map_err(|e| Error::config("dynamics.initial.g0", e.to_string()))?
            }
            InitialData::Profile { .. } => return Ok(None),
        };
        if !g0.is_positive_definite() {
            return Err(Error::config("dynamics.initial", "G0 must be positive definite"));
        }
        Ok(Some(g0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// Run the time-dependent stage in `verify`; defaults to `d == 2`.
    pub enabled: Option<bool>,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_every: f64,
    pub scheme: Scheme,
    pub initial: InitialData,
    pub r_min: f64,
    pub r_max_fraction: f64,
    pub noise_floor: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let c = ConvergenceOptions::default();
        DynamicsConfig {
            enabled: None,
            dt: 0.1,
            t_final: 200.0,
            snapshot_every: 5.0,
            scheme: Scheme::CharacteristicRk4,
            initial: InitialData::default(),
            r_min: c.r_min,
            r_max_fraction: c.r_max_fraction,
            noise_floor: c.noise_floor,
        }
    }
}

/// Randomized second-moment relaxation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsConfig {
    pub samples: usize,
    pub t_final: f64,
    pub sample_every: f64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            samples: 20,
            t_final: 40.0,
            sample_every: 0.5,
        }
    }
}

/// A validated configuration. After [`SolverConfig::resolve`] every optional
/// entry is filled, so the serialized form is the complete configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub d: usize,
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    2024
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {x}")))
    }
}

impl SolverConfig {
    /// A configuration with every other entry at its default.
    pub fn new(d: usize, a: MatrixSpec, kernel: KernelSpec) -> Result<Self> {
        SolverConfig {
            d,
            a,
            kernel,
            grid: GridConfig::default(),
            quadrature: QuadratureConfig::default(),
            tolerances: Tolerances::default(),
            fit: FitOptions::default(),
            dynamics: DynamicsConfig::default(),
            moments: MomentsConfig::default(),
            seed: default_seed(),
        }
        .resolve()
    }

    /// Fills `d`-dependent defaults and validates every field.
    pub fn resolve(mut self) -> Result<Self> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::config("d", format!("must be 2 or 3, got {}", self.d)));
        }
        let d = self.d;
        let base = GridSpec::default_for(d)?;
        let g = &mut self.grid;
        g.n_radial.get_or_insert(base.n_radial);
        g.n_angular.get_or_insert(base.n_angular);
        g.n_polar.get_or_insert(base.n_polar);
        g.k_max.get_or_insert(base.k_max);
        g.spacing.get_or_insert(base.spacing);
        let setup = ProfileSetup::default_for(d)?;
        self.quadrature.sphere.get_or_insert(setup.sphere_order);
        self.dynamics.enabled.get_or_insert(d == 2);
        self.quadrature.time.get_or_insert(setup.options.time_order);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.matrix()?;
        self.kernel()?;
        PolarGrid::new(self.grid_spec())?;
        let sphere = self.sphere_order();
        if sphere < 4 {
            return Err(Error::config("quadrature.sphere", format!("must be >= 4, got {sphere}")));
        }
        let time = self.time_order();
        if !(4..=128).contains(&time) {
            return Err(Error::config("quadrature.time", format!("must lie in [4, 128], got {time}")));
        }
        let t = &self.tolerances;
        positive("tolerances.fixed_point", t.fixed_point)?;
        positive("tolerances.eigen", t.eigen)?;
        if t.max_iterations == 0 {
            return Err(Error::config("tolerances.max_iterations", "must be >= 1"));
        }
        positive("fit.radius", self.fit.radius)?;
        if self.fit.shells < 2 {
            return Err(Error::config("fit.shells", format!("must be >= 2, got {}", self.fit.shells)));
        }
        if self.fit.max_degree < 2 || self.fit.max_degree % 2 != 0 {
            return Err(Error::config(
                "fit.max_degree",
                format!("must be even and >= 2, got {}", self.fit.max_degree),
            ));
        }
        let dy = &self.dynamics;
        positive("dynamics.dt", dy.dt)?;
        if dy.dt > crate::dynamics::MAX_DT {
            return Err(Error::config(
                "dynamics.dt",
                format!("must be <= {}, got {}", crate::dynamics::MAX_DT, dy.dt),
            ));
        }
        positive("dynamics.t_final", dy.t_final)?;
        positive("dynamics.snapshot_every", dy.snapshot_every)?;
        positive("dynamics.r_min", dy.r_min)?;
        positive("dynamics.r_max_fraction", dy.r_max_fraction)?;
        positive("dynamics.noise_floor", dy.noise_floor)?;
        match &dy.initial {
            InitialData::RotatedEigen { scale, angle_deg } => {
                positive("dynamics.initial.scale", *scale)?;
                if !angle_deg.is_finite() {
                    return Err(Error::config("dynamics.initial.angle_deg", "must be finite"));
                }
            }
            InitialData::Gaussian { g0 } => {
                if g0.len() != self.d {
                    return Err(Error::config("dynamics.initial.g0", format!("expected a {0}x{0} array", self.d)));
                }
                let g = SymMat::from_rows(g0).map_err(|e| Error::config("dynamics.initial.g0", e.to_string()))?;
                if !g.is_positive_definite() {
                    return Err(Error::config("dynamics.initial.g0", "must be positive definite"));
                }
            }
            InitialData::Profile { c } => positive("dynamics.initial.c", *c)?,
        }
        let m = &self.moments;
        positive("moments.t_final", m.t_final)?;
        positive("moments.sample_every", m.sample_every)?;
        if m.t_final / m.sample_every < 10.0 {
            return Err(Error::config("moments.sample_every", "need at least 10 samples up to moments.t_final"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Result<Mat> {
        self.a.build(self.d)
    }

    pub fn kernel_profile(&self) -> Result<KernelProfile> {
        self.kernel.profile()
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::new(&self.kernel_profile()?, self.d).map_err(|e| Error::config("kernel", e.to_string()))
    }

    pub fn grid_spec(&self) -> GridSpec {
        let base = GridSpec::default_for(self.d).expect("dimension validated");
        GridSpec {
            dim: self.d,
            n_radial: self.grid.n_radial.unwrap_or(base.n_radial),
            n_angular: self.grid.n_angular.unwrap_or(base.n_angular),
            n_polar: self.grid.n_polar.unwrap_or(base.n_polar),
            k_max: self.grid.k_max.unwrap_or(base.k_max),
            spacing: self.grid.spacing.unwrap_or(base.spacing),
        }
    }

    pub fn sphere_order(&self) -> usize {
        self.quadrature
            .sphere
            .unwrap_or_else(|| if self.d == 2 { 64 } else { 24 })
    }

    pub fn time_order(&self) -> usize {
        self.quadrature.time.unwrap_or(ProfileOptions::default().time_order)
    }

    pub fn profile_setup(&self) -> ProfileSetup {
        ProfileSetup {
            grid: self.grid_spec(),
            sphere_order: self.sphere_order(),
            options: ProfileOptions {
                time_order: self.time_order(),
                tol: self.tolerances.fixed_point,
                max_iter: self.tolerances.max_iterations,
                fix_scale: self.tolerances.fix_scale,
            },
        }
    }

    pub fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions {
            dt: self.dynamics.dt,
            t_final: self.dynamics.t_final,
            snapshot_every: self.dynamics.snapshot_every,
            scheme: self.dynamics.scheme,
            check_initial: true,
            fit: self.fit,
        }
    }

    pub fn convergence_options(&self) -> ConvergenceOptions {
        ConvergenceOptions {
            r_min: self.dynamics.r_min,
            r_max_fraction: self.dynamics.r_max_fraction,
            noise_floor: self.dynamics.noise_floor,
            ..ConvergenceOptions::default()
        }
    }

    /// The named example configurations.
    pub fn preset(name: &str, d: usize) -> Result<Self> {
        let a = match name {
            "isotropic" => MatrixSpec::Isotropic { a: 0.02 },
            "shear" => MatrixSpec::Shear { a: 0.01 },
            "diagonal" => MatrixSpec::Diagonal {
                values: (0..d).map(|i| 0.01 * (i as f64 - 0.5 * (d as f64 - 1.0))).collect(),
            },
            other => return Err(Error::config("preset", format!("unknown preset `{other}`"))),
        };
        SolverConfig::new(d, a, KernelSpec::Uniform)
    }
}

/// Parses and validates a JSON configuration.
pub fn parse_config(text: &str) -> Result<SolverConfig> {
    let raw: SolverConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.resolve()
}

pub fn load_config(path: &Path) -> Result<SolverConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"d": 2, "A": {"preset": "shear", "a": 0.01}, "kernel": {"type": "uniform"}}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.grid.n_radial, Some(64));
        assert_eq!(c.grid.n_angular, Some(32));
        assert_eq!(c.quadrature.sphere, Some(64));
        assert_eq!(c.quadrature.time, Some(32));
        assert_eq!(c.tolerances.fixed_point, 1e-8);
        assert_eq!(c.dynamics.t_final, 200.0);
        assert_eq!(c.dynamics.enabled, Some(true));
        assert_eq!(c.moments.samples, 20);
        assert_eq!(c.matrix().unwrap().to_rows(), vec![vec![0.0, 0.01], vec![0.0, 0.0]]);
        let again = parse_config(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn presets_expand() {
        let iso = MatrixSpec::Isotropic { a: 0.02 }.build(3).unwrap();
        assert_eq!(iso.to_rows(), vec![vec![0.02, 0.0, 0.0], vec![0.0, 0.02, 0.0], vec![0.0, 0.0, 0.02]]);
        let sh = MatrixSpec::Shear { a: 0.03 }.build(3).unwrap();
        assert_eq!(sh.get(0, 1), 0.03);
        assert_eq!(sh.to_rows().iter().flatten().filter(|x| **x != 0.0).count(), 1);
        let dg = MatrixSpec::Diagonal { values: vec![0.1, -0.1] }.build(2).unwrap();
        assert_eq!(dg.to_rows(), vec![vec![0.1, 0.0], vec![0.0, -0.1]]);
        for name in ["isotropic", "shear", "diagonal"] {
            for d in [2, 3] {
                SolverConfig::preset(name, d).unwrap();
            }
        }
    }

    #[test]
    fn large_shear_still_loads() {
        let c = parse_config(r#"{"d": 2, "A": {"preset": "shear", "a": 0.05}, "kernel": {"type": "uniform"}}"#).unwrap();
        let k = c.kernel().unwrap();
        assert!(crate::matrix::operator_norm(&c.matrix().unwrap()) >= k.q() / 24.0);
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_the_field() {
        let cases = [
            (r#""tolerances": {"fixed_point": -1e-8}"#, "tolerances.fixed_point"),
            (r#""tolerances": {"eigen": 0}"#, "tolerances.eigen"),
            (r#""grid": {"n_radial": 2}"#, "grid.n_radial"),
            (r#""dynamics": {"dt": 0.5}"#, "dynamics.dt"),
            (r#""fit": {"max_degree": 3}"#, "fit.max_degree"),
            (r#""quadrature": {"time": 1000}"#, "quadrature.time"),
        ];
        for (extra, field) in cases {
            let text = format!(
                r#"{{"d": 2, "A": {{"preset": "shear", "a": 0.01}}, "kernel": {{"type": "uniform"}}, {extra}}}"#
            );
            assert_eq!(field_of(parse_config(&text).unwrap_err()), field, "{extra}");
        }
        let bad_d = r#"{"d": 4, "A": {"preset": "shear", "a": 0.01}, "kernel": {"type": "uniform"}}"#;
        assert_eq!(field_of(parse_config(bad_d).unwrap_err()), "d");
        let bad_a = r#"{"d": 2, "A": {"preset": "diagonal", "values": [1]}, "kernel": {"type": "uniform"}}"#;
        assert_eq!(field_of(parse_config(bad_a).unwrap_err()), "A.values");
    }

    #[test]
    fn unknown_keys_and_syntax_errors_carry_lines() {
        let text = "{\n  \"d\": 2,\n  \"A\": {\"preset\": \"shear\", \"a\": 0.01},\n  \"kernel\": {\"type\": \"uniform\"},\n  \"colour\": 3\n}";
        match parse_config(text).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("colour"));
            }
            other => panic!("{other:?}"),
        }
        match parse_config("{\n\"d\": 2,\n\"A\": }").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rotated_initial_data() {
        let b = SymMat::from_diagonal(&[1.2, 0.8]).unwrap();
        let g0 = InitialData::RotatedEigen {
            scale: 1.5,
            angle_deg: 90.0,
        }
        .g0(&b)
        .unwrap()
        .unwrap();
        let expected = SymMat::from_diagonal(&[1.2, 1.8]).unwrap();
        assert!(g0.sub(&expected).norm() < 1e-14);
    }
}
