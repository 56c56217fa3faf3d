//! Self-similar profile `Psi = int_0^inf E_beta(t) Gamma(Psi) dt` by
//! fixed-point iteration, with Gauss-Laguerre time quadrature for the
//! `e^{-t}` damping of the semigroup
//! `E_beta(t) phi(k) = e^{-t} phi(e^{-beta t} e^{-tA} k)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigen::{solve_eigenproblem, EigenSolution};
use crate::error::{Error, Result};
use crate::field::{FourierField, GridSpec, PolarGrid};
use crate::gain::GainOperator;
use crate::kernel::{make_sphere_quadrature, Kernel};
use crate::matrix::{operator_norm, sym_index, sym_len, Mat, SymMat};
use crate::quadrature::gauss_laguerre;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl TimeQuadrature {
    /// Polynomials up to this degree are integrated exactly.
    pub fn exactness_degree(&self) -> usize {
        2 * self.order - 1
    }

    /// `int_0^inf e^{-t} h(t) dt`.
    pub fn integrate(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, w)| w * h(t)).sum()
    }
}

pub fn make_time_quadrature(order: usize) -> Result<TimeQuadrature> {
    if !(4..=128).contains(&order) {
        return Err(Error::InvalidInput(format!("time quadrature order must be in 4..=128, got {order}")));
    }
    let (nodes, weights) = gauss_laguerre(order);
    Ok(TimeQuadrature { nodes, weights, order })
}

/// `e^{-beta t} e^{-tA}`.
pub fn flow_matrix(a: &Mat, beta: f64, t: f64) -> Result<DMatrix<f64>> {
    Ok(crate::matrix::mat_exp(a, -t)?.into_matrix() * (-beta * t).exp())
}

/// `E_beta(t) field`. The result carries `e^{-t}` at the origin, so it is
/// not itself a characteristic function.
pub fn apply_semigroup(field: &FourierField, beta: f64, a: &Mat, t: f64) -> Result<FourierField> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("semigroup time must be >= 0, got {t}")));
    }
    if a.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            actual: a.dim(),
        });
    }
    if t == 0.0 {
        return Ok(field.clone());
    }
    let damping = (-t).exp();
    Ok(field.compose_linear(&flow_matrix(a, beta, t)?).map_values(|v| damping * v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileOptions {
    pub time_order: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Rescale `k` after every sweep so the fitted `Tr B` keeps its
    /// starting value.
    pub fix_scale: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            time_order: 32,
            tol: 1e-8,
            max_iter: 200,
            fix_scale: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub psi: FourierField,
    pub beta: f64,
    pub b_used: SymMat,
    pub iterations: usize,
    /// Sup over the grid of `|Psi_{n+1} - Psi_n|` at the last sweep.
    pub final_residual: f64,
    pub residuals: Vec<f64>,
    pub contraction_estimates: Vec<f64>,
    pub converged: bool,
    pub norm_a: f64,
    /// `q / 24`.
    pub threshold: f64,
    /// `||A|| < q / 24`.
    pub regime_valid: bool,
}

impl ProfileResult {
    pub fn mean_contraction(&self) -> f64 {
        let r = &self.contraction_estimates;
        if r.is_empty() {
            f64::NAN
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }
}

/// Precomputed pieces of one profile sweep.
#[derive(Debug, Clone)]
pub struct ProfileSolver {
    gain: GainOperator,
    beta: f64,
    flows: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
}

impl ProfileSolver {
    pub fn new(gain: GainOperator, a: &Mat, beta: f64, time: &TimeQuadrature) -> Result<Self> {
        let flows = time
            .nodes
            .iter()
            .map(|&t| flow_matrix(a, beta, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProfileSolver {
            gain,
            beta,
            flows,
            weights: time.weights.clone(),
        })
    }

    pub fn gain(&self) -> &GainOperator {
        &self.gain
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `sum_j w_j Gamma(psi)(e^{-beta t_j} e^{-t_j A} k)`, with `Psi(0) = 1`.
    pub fn sweep(&self, psi: &FourierField) -> FourierField {
        let g = self.gain.apply(psi);
        let mut acc = vec![0.0; g.values().len()];
        for (m, w) in self.flows.iter().zip(&self.weights) {
            let shifted = g.compose_linear(m);
            for (a, v) in acc.iter_mut().zip(shifted.values()) {
                *a += w * v;
            }
        }
        let n = g.grid().n_rad();
        for chunk in acc.chunks_mut(n) {
            chunk[0] = 1.0;
        }
        FourierField::from_values(Arc::clone(g.grid()), acc, psi.tail().clone())
            .expect("sweep output keeps grid shape and unit origin")
    }

    /// One sweep, then the argument rescaling that restores the fitted
    /// trace `target_trace` when given.
    pub fn step(&self, psi: &FourierField, target_trace: Option<f64>) -> Result<FourierField> {
        let mut next = self.sweep(psi);
        if let Some(target) = target_trace {
            let trace = extract_b_with(&next, &FitOptions::default())?.trace;
            next = next.scale_argument((target / trace).sqrt());
            next.force_origin();
        }
        Ok(next)
    }

    /// Iterates from `start` until the sup residual drops below `tol`.
    pub fn iterate(&self, start: FourierField, opts: &ProfileOptions, norm_a: f64, threshold: f64) -> Result<IterationOutcome> {
        // Psi(ck) solves the same equation for every c > 0; discretization
        // error pushes the iterates along that family unless the scale is pinned
        let target = if opts.fix_scale {
            Some(extract_b_with(&start, &FitOptions::default())?.trace)
        } else {
            None
        };
        let mut psi = start;
        let mut residuals = Vec::new();
        let mut ratios = Vec::new();
        let mut rising = 0;
        for it in 1..=opts.max_iter {
            let next = self.step(&psi, target)?;
            let res = next.sup_distance(&psi);
            psi = next;
            if let Some(&prev) = residuals.last() {
                let ratio: f64 = res / prev;
                ratios.push(ratio);
                if ratio >= 1.0 && res > opts.tol {
                    rising += 1;
                    if rising >= 3 {
                        return Err(Error::Divergence {
                            iterations: it,
                            norm_a,
                            threshold,
                            margin: threshold - norm_a,
                        });
                    }
                } else {
                    rising = 0;
                }
            }
            residuals.push(res);
            log::debug!("profile sweep {it}: residual {res:.3e}");
            if res <= opts.tol {
                return Ok(IterationOutcome {
                    psi,
                    residuals,
                    ratios,
                    converged: true,
                });
            }
        }
        Ok(IterationOutcome {
            psi,
            residuals,
            ratios,
            converged: false,
        })
    }
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub psi: FourierField,
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
}

/// Problem setup for [`solve_profile`].
#[derive(Debug, Clone)]
pub struct ProfileSetup {
    pub grid: GridSpec,
    pub sphere_order: usize,
    pub options: ProfileOptions,
}

impl ProfileSetup {
    pub fn default_for(dim: usize) -> Result<Self> {
        Ok(ProfileSetup {
            grid: GridSpec::default_for(dim)?,
            sphere_order: if dim == 2 { 64 } else { 24 },
            options: ProfileOptions::default(),
        })
    }
}

pub fn solve_profile(a: &Mat, kernel: &Kernel, setup: &ProfileSetup) -> Result<ProfileResult> {
    let eig = solve_eigenproblem(a, kernel.theta()).map_err(|e| e.at("eigenproblem"))?;
    solve_profile_with(a, kernel, setup, &eig)
}

/// As [`solve_profile`], reusing an eigen solution.
pub fn solve_profile_with(a: &Mat, kernel: &Kernel, setup: &ProfileSetup, eig: &EigenSolution) -> Result<ProfileResult> {
    let d = a.dim();
    if setup.grid.dim != d || kernel.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: setup.grid.dim,
        });
    }
    let norm_a = operator_norm(a);
    let threshold = kernel.q() / 24.0;
    let regime_valid = norm_a < threshold;
    if !regime_valid {
        log::warn!("||A|| = {norm_a} >= q/24 = {threshold}; attempting the profile iteration anyway");
    }
    let grid = Arc::new(PolarGrid::new(setup.grid)?);
    let quad = make_sphere_quadrature(d, setup.sphere_order)?;
    let gain = GainOperator::new(Arc::clone(&grid), kernel, &quad)?;
    let time = make_time_quadrature(setup.options.time_order)?;
    let solver = ProfileSolver::new(gain, a, eig.beta, &time)?;
    let start = FourierField::gaussian(grid, &eig.b)?;
    let out = solver.iterate(start, &setup.options, norm_a, threshold)?;
    if !out.converged {
        log::warn!(
            "profile iteration stopped at {} sweeps with residual {:.3e}",
            out.residuals.len(),
            out.residuals.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(ProfileResult {
        psi: out.psi,
        beta: eig.beta,
        b_used: eig.b.clone(),
        iterations: out.residuals.len(),
        final_residual: out.residuals.last().copied().unwrap_or(f64::NAN),
        residuals: out.residuals,
        contraction_estimates: out.ratios,
        converged: out.converged,
        norm_a,
        threshold,
        regime_valid,
    })
}

/// Least-squares model `1 - phi(k) = sum_{even p <= max_degree} c_p(k)`,
/// sampled on `shells` radii in `(0, radius]` along every grid direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub radius: f64,
    pub shells: usize,
    pub max_degree: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            radius: 0.2,
            shells: 8,
            max_degree: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticFit {
    pub b: SymMat,
    pub trace: f64,
    pub rms_residual: f64,
    pub points: usize,
}

impl QuadraticFit {
    /// `B d / Tr B`.
    pub fn normalized(&self) -> SymMat {
        self.b.scaled(self.b.dim() as f64 / self.trace)
    }
}

/// Exponent vectors of all monomials of total degree `deg` in `d` variables.
fn monomials(d: usize, deg: usize) -> Vec<Vec<usize>> {
    if d == 1 {
        return vec![vec![deg]];
    }
    let mut out = Vec::new();
    for first in (0..=deg).rev() {
        for mut rest in monomials(d - 1, deg - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

pub fn extract_b(field: &FourierField, fit_radius: f64) -> Result<SymMat> {
    let opts = FitOptions {
        radius: fit_radius,
        ..FitOptions::default()
    };
    Ok(extract_b_with(field, &opts)?.b)
}

pub fn extract_b_with(field: &FourierField, opts: &FitOptions) -> Result<QuadraticFit> {
    if !(opts.radius > 0.0 && opts.radius <= field.grid().k_max()) {
        return Err(Error::Fit(format!("fit radius {} outside (0, k_max]", opts.radius)));
    }
    if opts.max_degree < 2 || opts.max_degree % 2 != 0 {
        return Err(Error::Fit(format!("max_degree must be even and >= 2, got {}", opts.max_degree)));
    }
    if opts.shells < 3 {
        return Err(Error::Fit(format!("need at least 3 shells, got {}", opts.shells)));
    }
    let grid = field.grid();
    let d = grid.dim();
    let quad_pairs = sym_index(d);
    let mut columns: Vec<Vec<usize>> = Vec::new();
    for &(i, j) in &quad_pairs {
        let mut e = vec![0; d];
        e[i] += 1;
        e[j] += 1;
        columns.push(e);
    }
    for deg in (4..=opts.max_degree).step_by(2) {
        columns.extend(monomials(d, deg));
    }
    let n_dir = grid.n_directions();
    let n_rows = n_dir * opts.shells;
    let mut design = DMatrix::zeros(n_rows, columns.len());
    let mut rhs = DVector::zeros(n_rows);
    let mut row = 0;
    for j in 0..n_dir {
        let u = grid.direction(j);
        let ray = field.ray(u);
        for s in 1..=opts.shells {
            let rho = opts.radius * s as f64 / opts.shells as f64;
            // unknowns are coefficients in the scaled variable k / radius
            let x: Vec<f64> = u.iter().map(|c| c * rho / opts.radius).collect();
            for (c, e) in columns.iter().enumerate() {
                design[(row, c)] = e.iter().zip(&x).map(|(&p, v)| v.powi(p as i32)).product();
            }
            rhs[row] = 1.0 - ray.eval(rho);
            row += 1;
        }
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Fit(format!(
            "rank-deficient design ({} points, {} unknowns, condition {:.2e})",
            n_rows,
            columns.len(),
            smax / smin
        )));
    }
    let coef = svd.solve(&rhs, 1e-14 * smax).map_err(|e| Error::Fit(e.to_string()))?;
    let resid = &design * &coef - &rhs;
    let scale = opts.radius * opts.radius;
    let mut b = DMatrix::zeros(d, d);
    for (c, &(i, j)) in quad_pairs.iter().enumerate() {
        // 1 - phi = 1/2 B:kk, so diagonal c = B_ii / 2 and off-diagonal c = B_ij
        let v = if i == j { 2.0 * coef[c] } else { coef[c] } / scale;
        b[(i, j)] = v;
        b[(j, i)] = v;
    }
    let b = SymMat::from_upper(b);
    let trace = b.trace();
    debug_assert_eq!(quad_pairs.len(), sym_len(d));
    Ok(QuadraticFit {
        b,
        trace,
        rms_residual: (resid.norm_squared() / n_rows as f64).sqrt(),
        points: n_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourthOrderReport {
    pub radii: Vec<f64>,
    pub residuals: Vec<f64>,
    pub slope: f64,
    pub passes: bool,
    /// Residual identically zero to round-off; no slope can be fitted.
    pub degenerate_exact: bool,
}

pub const FOURTH_ORDER_MIN_SLOPE: f64 = 3.7;

pub fn check_fourth_order(field: &FourierField, b: &SymMat, radii: &[f64]) -> FourthOrderReport {
    let grid = field.grid();
    let residuals: Vec<f64> = radii
        .iter()
        .map(|&r| {
            (0..grid.n_directions())
                .map(|j| {
                    let u = grid.direction(j);
                    let k: Vec<f64> = u.iter().map(|c| c * r).collect();
                    (field.eval(&k) - (1.0 - 0.5 * b.contract(&k))).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let degenerate = residuals.iter().all(|&x| x < 1e-14);
    let slope = if degenerate {
        f64::NAN
    } else {
        let pts: Vec<(f64, f64)> = radii
            .iter()
            .zip(&residuals)
            .filter(|(_, &v)| v > 0.0)
            .map(|(&r, &v)| (r.ln(), v.ln()))
            .collect();
        linear_slope(&pts)
    };
    FourthOrderReport {
        radii: radii.to_vec(),
        residuals,
        slope,
        passes: !degenerate && slope >= FOURTH_ORDER_MIN_SLOPE,
        degenerate_exact: degenerate,
    }
}

fn linear_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Sup over grid nodes with `|k| <= radius_limit` of
/// `|(1 + A_beta k . d/dk) Psi - Gamma(Psi)|`, with the directional
/// derivative by centred differences of step `h`.
pub fn differential_residual(psi: &FourierField, gamma_psi: &FourierField, a: &Mat, beta: f64, h: f64, radius_limit: f64) -> f64 {
    let grid = psi.grid();
    let d = grid.dim();
    let a_beta = a.as_matrix() + DMatrix::identity(d, d) * beta;
    let mut worst: f64 = 0.0;
    for j in 0..grid.n_directions() {
        for (i, &r) in grid.radii().iter().enumerate().skip(1) {
            if r > radius_limit {
                break;
            }
            let k = DVector::from_vec(grid.point(j, i));
            let v = &a_beta * &k;
            let fwd = psi.eval((&k + &v * h).as_slice());
            let bwd = psi.eval((&k - &v * h).as_slice());
            let lhs = psi.value(j, i) + (fwd - bwd) / (2.0 * h);
            worst = worst.max((lhs - gamma_psi.value(j, i)).abs());
        }
    }
    worst
}
