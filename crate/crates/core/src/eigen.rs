//! The matrix eigenvalue problem
//! `beta B + theta (B - (Tr B / d) I) + <BA> = 0` for the self-similar
//! scaling rate `beta` and the second-moment matrix `B`, solved directly on
//! the vectorized linear map and by its perturbation series in
//! `eps = ||A|| / theta`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{operator_norm, sym_index, sym_len, sym_product, Mat, SymMat};

/// Real parts closer than this are treated as a tie for the dominant
/// eigenvalue.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Largest perturbation order accepted by [`perturbation_series`].
pub const MAX_SERIES_ORDER: usize = 20;

/// Matrix of `L(B) = theta (B - (Tr B / d) I) + <BA>` in the
/// [`SymVec`](crate::matrix::SymVec) basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedMap {
    pub dim: usize,
    pub matrix: DMatrix<f64>,
}

impl VectorizedMap {
    pub fn apply(&self, b: &SymMat) -> SymMat {
        let v = b.to_symvec();
        SymMat::from_symvec(&crate::matrix::SymVec {
            dim: self.dim,
            coords: &self.matrix * v.coords,
        })
    }
}

pub fn build_vectorized_map(a: &Mat, theta: f64) -> Result<VectorizedMap> {
    if !theta.is_finite() || theta < 0.0 {
        return Err(Error::InvalidInput(format!("theta must be finite and >= 0, got {theta}")));
    }
    let d = a.dim();
    let n = sym_len(d);
    let mut matrix = DMatrix::zeros(n, n);
    for (c, (i, j)) in sym_index(d).into_iter().enumerate() {
        let mut e = DMatrix::zeros(d, d);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        let basis = SymMat::from_upper(e);
        let image = basis.deviatoric().scaled(theta).add(&sym_product(&basis, a)?);
        matrix.set_column(c, &image.to_symvec().coords);
    }
    Ok(VectorizedMap { dim: d, matrix })
}

/// Dominant solution `(beta, B)` with `Tr B = d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenSolution {
    pub beta: f64,
    pub b: SymMat,
    /// `beta - max Re beta'` over the remaining eigenvalues.
    pub spectral_gap: f64,
    /// All eigenvalues `beta' = -lambda(L)`, dominant first, as `[re, im]`.
    pub all_eigenvalues: Vec<[f64; 2]>,
    /// Operator norm of `beta B + L(B)`.
    pub residual: f64,
    pub norm_a: f64,
    pub theta: f64,
    /// `||A|| < theta / 6`.
    pub series_condition: bool,
}

pub fn solve_eigenproblem(a: &Mat, theta: f64) -> Result<EigenSolution> {
    solve_eigenproblem_tol(a, theta, DEGENERACY_TOL)
}

/// As [`solve_eigenproblem`], with `tol` the separation below which two
/// leading eigenvalues count as tied.
pub fn solve_eigenproblem_tol(a: &Mat, theta: f64, tol: f64) -> Result<EigenSolution> {
    let map = build_vectorized_map(a, theta)?;
    let d = a.dim();
    let n = map.matrix.nrows();
    let norm_a = operator_norm(a);

    let mut betas: Vec<Complex<f64>> = map.matrix.clone().complex_eigenvalues().iter().map(|l| -l).collect();
    betas.sort_by(|x, y| y.re.total_cmp(&x.re).then(x.im.abs().total_cmp(&y.im.abs())));
    let top = betas[0];
    if top.im.abs() > tol {
        return Err(Error::DegenerateEigenvalue(format!(
            "dominant eigenvalue {} {:+}i is complex; its conjugate ties in real part",
            top.re, top.im
        )));
    }
    if betas[1].re > top.re - tol {
        return Err(Error::DegenerateEigenvalue(format!(
            "eigenvalues {} and {} tie within {tol:e}",
            top.re, betas[1].re
        )));
    }
    let beta = top.re;

    let shifted = &map.matrix + DMatrix::identity(n, n) * beta;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty spectrum");
    let coords: DVector<f64> = v_t.row(idx).transpose();
    let trace: f64 = sym_index(d)
        .into_iter()
        .zip(coords.iter())
        .filter(|((i, j), _)| i == j)
        .map(|(_, c)| c)
        .sum();
    if trace.abs() < 1e-12 * coords.norm() {
        return Err(Error::OutsideRegime(
            "dominant eigenvector is traceless and cannot be normalized to Tr B = d".into(),
        ));
    }
    let b = SymMat::from_symvec(&crate::matrix::SymVec {
        dim: d,
        coords: coords * (d as f64 / trace),
    });
    let min_eig = b.min_eigenvalue();
    if min_eig <= 0.0 {
        return Err(Error::OutsideRegime(format!(
            "B is not positive definite (min eigenvalue {min_eig:e}, ||A|| = {norm_a}, theta/6 = {})",
            theta / 6.0
        )));
    }
    let residual = b.scaled(beta).add(&map.apply(&b)).norm();

    Ok(EigenSolution {
        beta,
        b,
        spectral_gap: beta - betas[1].re,
        all_eigenvalues: betas.iter().map(|z| [z.re, z.im]).collect(),
        residual,
        norm_a,
        theta,
        series_condition: norm_a < theta / 6.0,
    })
}

/// Coefficients of `beta = theta sum_n beta_n eps^n` and
/// `B = sum_n B_n eps^n` with `B_0 = I` and `A = theta eps (A / ||A||)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationSeries {
    pub epsilon: f64,
    pub theta: f64,
    /// `beta_0 .. beta_N`, with `beta_0 = 0`.
    pub beta_coeffs: Vec<f64>,
    /// `B_0 .. B_N`.
    pub b_coeffs: Vec<SymMat>,
    pub order: usize,
    /// `eps <= 1/6`.
    pub convergence_guaranteed: bool,
}

impl PerturbationSeries {
    /// Partial sum of `beta` through `order` (clamped to the computed order).
    pub fn beta_sum(&self, order: usize) -> f64 {
        let order = order.min(self.order);
        let mut total = 0.0;
        let mut power = 1.0;
        for n in 0..=order {
            total += self.beta_coeffs[n] * power;
            power *= self.epsilon;
        }
        self.theta * total
    }

    pub fn b_sum(&self, order: usize) -> SymMat {
        let order = order.min(self.order);
        let mut total = SymMat::zeros(self.b_coeffs[0].dim());
        let mut power = 1.0;
        for n in 0..=order {
            total = total.add(&self.b_coeffs[n].scaled(power));
            power *= self.epsilon;
        }
        total
    }
}

/// Order-by-order substitution. At order `n >= 1`, the trace of the
/// equation fixes `beta_n` (because `Tr B_n = 0`), and the `A = 0`
/// operator, which is the identity on traceless matrices, yields `B_n`.
pub fn perturbation_series(a: &Mat, theta: f64, order: usize) -> Result<PerturbationSeries> {
    let norm = operator_norm(a);
    if norm == 0.0 {
        return Err(Error::InvalidInput("perturbation series needs ||A|| > 0".into()));
    }
    if order > MAX_SERIES_ORDER {
        return Err(Error::InvalidInput(format!("series order must be <= {MAX_SERIES_ORDER}, got {order}")));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidInput(format!("theta must be positive, got {theta}")));
    }
    let d = a.dim();
    let a_hat = a.scaled(1.0 / norm);
    let epsilon = norm / theta;
    let mut beta_coeffs = vec![0.0];
    let mut b_coeffs = vec![SymMat::identity(d)];
    for n in 1..=order {
        let coupling = sym_product(&b_coeffs[n - 1], &a_hat)?;
        let beta_n = -coupling.trace() / d as f64;
        let mut rhs = coupling.add(&SymMat::identity(d).scaled(beta_n));
        for m in 1..n {
            rhs = rhs.add(&b_coeffs[n - m].scaled(beta_coeffs[m]));
        }
        beta_coeffs.push(beta_n);
        b_coeffs.push(rhs.deviatoric().scaled(-1.0));
    }
    Ok(PerturbationSeries {
        epsilon,
        theta,
        beta_coeffs,
        b_coeffs,
        order,
        convergence_guaranteed: epsilon <= 1.0 / 6.0,
    })
}

/// A measured quantity against its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub measured: f64,
    pub threshold: f64,
    pub holds: bool,
}

impl Bound {
    pub fn below(measured: f64, threshold: f64) -> Self {
        Bound {
            measured,
            threshold,
            holds: measured < threshold,
        }
    }

    pub fn at_least(measured: f64, threshold: f64) -> Self {
        Bound {
            measured,
            threshold,
            holds: measured >= threshold,
        }
    }

    pub fn margin(&self) -> f64 {
        (self.threshold - self.measured).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenBounds {
    /// `||A||` against `theta / 6`.
    pub condition: Bound,
    /// `|beta|` against `2 ||A||`.
    pub beta_bound: Bound,
    /// Spectral gap against `theta - 5 ||A||`.
    pub gap_bound: Bound,
    /// `||B - I||` against 1.
    pub b_bound: Bound,
}

impl EigenBounds {
    pub fn all_hold(&self) -> bool {
        self.beta_bound.holds && self.gap_bound.holds && self.b_bound.holds
    }
}

pub fn verify_eigen_bounds(a: &Mat, theta: f64, sol: &EigenSolution) -> EigenBounds {
    let norm = operator_norm(a);
    let d = sol.b.dim();
    EigenBounds {
        condition: Bound::below(norm, theta / 6.0),
        beta_bound: if norm == 0.0 {
            // |beta| < 0 cannot hold strictly; beta = 0 is the exact answer
            Bound {
                measured: sol.beta.abs(),
                threshold: 0.0,
                holds: sol.beta.abs() <= DEGENERACY_TOL,
            }
        } else {
            Bound::below(sol.beta.abs(), 2.0 * norm)
        },
        gap_bound: Bound::at_least(sol.spectral_gap, theta - 5.0 * norm),
        b_bound: Bound::below(sol.b.sub(&SymMat::identity(d)).norm(), 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const THETA: f64 = 0.25;

    fn random_matrix(d: usize, norm: f64, rng: &mut ChaCha8Rng) -> Mat {
        let m = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        let a = Mat::new(m).unwrap();
        let s = norm / operator_norm(&a);
        a.scaled(s)
    }

    #[test]
    fn zero_matrix_map() {
        let map = build_vectorized_map(&Mat::zeros(3).unwrap(), THETA).unwrap();
        assert!(map.apply(&SymMat::identity(3)).norm() < 1e-16);
        let dev = SymMat::from_rows(&[vec![1.0, 0.3, 0.0], vec![0.3, -0.4, 0.2], vec![0.0, 0.2, -0.6]]).unwrap();
        let image = map.apply(&dev);
        assert!(image.sub(&dev.scaled(THETA)).norm() < 1e-15);
    }

    #[test]
    fn shear_map_matches_hand_computation() {
        let a = 0.01;
        let map = build_vectorized_map(&Mat::shear(2, a).unwrap(), THETA).unwrap();
        let t = THETA;
        let expected = DMatrix::from_row_slice(3, 3, &[t / 2.0, 0.0, -t / 2.0, a / 2.0, t, 0.0, -t / 2.0, a, t / 2.0]);
        assert!((map.matrix - expected).amax() < 1e-16);
    }

    #[test]
    fn isotropic_map_is_shifted_projector() {
        let a = 0.03;
        let map = build_vectorized_map(&Mat::isotropic(3, a).unwrap(), THETA).unwrap();
        let zero = build_vectorized_map(&Mat::zeros(3).unwrap(), THETA).unwrap();
        let expected = zero.matrix + DMatrix::identity(6, 6) * a;
        assert!((map.matrix - expected).amax() < 1e-16);
    }

    #[test]
    fn isotropic_solution_is_exact() {
        for a in [-0.02, 0.01, 0.04] {
            let sol = solve_eigenproblem(&Mat::isotropic(2, a).unwrap(), THETA).unwrap();
            assert!((sol.beta + a).abs() < 1e-14);
            assert!(sol.b.sub(&SymMat::identity(2)).norm() < 1e-13);
            assert!((sol.spectral_gap - THETA).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_matrix_solution() {
        let sol = solve_eigenproblem(&Mat::zeros(3).unwrap(), THETA).unwrap();
        assert!(sol.beta.abs() < 1e-15);
        assert!(sol.b.sub(&SymMat::identity(3)).norm() < 1e-14);
        assert!((sol.spectral_gap - THETA).abs() < 1e-14);
    }

    #[test]
    fn diagonal_traceless_closed_form() {
        // B = diag(1 + x, 1 - x): a x^2 - theta x - a = 0, beta = -a x
        let a = 0.025;
        let x = (THETA - (THETA * THETA + 4.0 * a * a).sqrt()) / (2.0 * a);
        let beta = ((THETA * THETA + 4.0 * a * a).sqrt() - THETA) / 2.0;
        assert!((beta + a * x).abs() < 1e-16);
        let sol = solve_eigenproblem(&Mat::diagonal(&[a, -a]).unwrap(), THETA).unwrap();
        assert!((sol.beta - beta).abs() < 1e-14);
        assert!((sol.beta - 2.47549e-3).abs() < 1e-8);
        assert!((sol.b.get(0, 0) - (1.0 + x)).abs() < 1e-12);
        assert!((sol.b.get(1, 1) - (1.0 - x)).abs() < 1e-12);
        assert!(sol.b.get(0, 1).abs() < 1e-13);
        assert!((sol.b.get(0, 0) - 0.90098).abs() < 1e-5);
    }

    #[test]
    fn shear_beta_solves_cubic() {
        let a = 0.01;
        let sol = solve_eigenproblem(&Mat::shear(2, a).unwrap(), THETA).unwrap();
        let b = sol.beta;
        assert!((b * (b + THETA).powi(2) - THETA * a * a / 4.0).abs() < 1e-12);
        assert!((b - a * a / (4.0 * THETA)).abs() < 1e-6);
        assert!(sol.residual < 1e-12);
        assert!((sol.b.trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn complex_tie_is_degenerate() {
        // for A = -theta I... build an A whose L has a dominant complex pair:
        // rotation generator with large norm flips the order.
        let a = Mat::from_rows(&[vec![0.0, 2.0], vec![-2.0, 0.0]]).unwrap();
        let map = build_vectorized_map(&a, THETA).unwrap();
        let ev = map.matrix.complex_eigenvalues();
        let min_re = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let complex_at_min = ev.iter().any(|z| (z.re - min_re).abs() < 1e-12 && z.im.abs() > 1e-6);
        let result = solve_eigenproblem(&a, THETA);
        if complex_at_min {
            assert!(matches!(result, Err(Error::DegenerateEigenvalue(_))));
        } else {
            assert!(result.is_ok());
        }
    }

    #[test]
    fn series_isotropic_coefficients() {
        let a = 0.02;
        let s = perturbation_series(&Mat::isotropic(2, a).unwrap(), THETA, 6).unwrap();
        assert!((s.epsilon - a / THETA).abs() < 1e-16);
        assert_eq!(s.beta_coeffs[1], -1.0);
        for n in 2..=6 {
            assert!(s.beta_coeffs[n].abs() < 1e-16);
        }
        assert!((s.beta_sum(6) + a).abs() < 1e-16);
    }

    #[test]
    fn series_shear_coefficients() {
        let s = perturbation_series(&Mat::shear(2, 0.01).unwrap(), THETA, 8).unwrap();
        assert!(s.beta_coeffs[1].abs() < 1e-16);
        assert!((s.beta_coeffs[2] - 0.25).abs() < 1e-15);
        for b in &s.b_coeffs[1..] {
            assert!(b.trace().abs() < 1e-15);
        }
        assert!((s.beta_sum(2) - 0.01f64.powi(2) / (4.0 * THETA)).abs() < 1e-18);
        let direct = solve_eigenproblem(&Mat::shear(2, 0.01).unwrap(), THETA).unwrap();
        assert!((s.beta_sum(8) - direct.beta).abs() < 1e-12);
    }

    #[test]
    fn series_error_scales_with_next_order() {
        let n = 4;
        let mut ratios = Vec::new();
        for eps in [0.02, 0.05, 0.1] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let a = random_matrix(3, eps * THETA, &mut rng);
            let s = perturbation_series(&a, THETA, n).unwrap();
            let direct = solve_eigenproblem(&a, THETA).unwrap();
            let err = (s.beta_sum(n) - direct.beta).abs();
            ratios.push(err / (THETA * eps.powi(n as i32 + 1)));
            let b_err = s.b_sum(n).sub(&direct.b).norm();
            assert!(b_err < 50.0 * eps.powi(n as i32 + 1));
        }
        for r in &ratios {
            assert!(*r < 10.0, "ratios {ratios:?}");
        }
    }

    #[test]
    fn series_rejects_bad_input() {
        assert!(perturbation_series(&Mat::zeros(2).unwrap(), THETA, 4).is_err());
        assert!(perturbation_series(&Mat::shear(2, 0.01).unwrap(), THETA, 21).is_err());
        let wide = perturbation_series(&Mat::shear(2, 0.05).unwrap(), THETA, 4).unwrap();
        assert!(!wide.convergence_guaranteed);
    }

    #[test]
    fn eigen_bounds_isotropic() {
        let a = THETA / 10.0;
        let m = Mat::isotropic(3, a).unwrap();
        let sol = solve_eigenproblem(&m, THETA).unwrap();
        let report = verify_eigen_bounds(&m, THETA, &sol);
        assert!(report.condition.holds);
        assert!(report.all_hold());
        assert!((report.gap_bound.measured - THETA).abs() < 1e-13);
        assert!(report.b_bound.measured < 1e-13);
    }

    #[test]
    fn eigen_bounds_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let a = random_matrix(3, 0.9 * THETA / 6.0, &mut rng);
            let sol = solve_eigenproblem(&a, THETA).unwrap();
            assert!(sol.residual < 1e-10);
            assert!((sol.b.trace() - 3.0).abs() < 1e-12);
            assert!(verify_eigen_bounds(&a, THETA, &sol).all_hold());
        }
    }

    #[test]
    fn eigen_bounds_shear_near_threshold() {
        let m = Mat::shear(2, THETA / 6.0 * 0.99).unwrap();
        let sol = solve_eigenproblem(&m, THETA).unwrap();
        let r = verify_eigen_bounds(&m, THETA, &sol);
        assert!(r.all_hold());
        assert!(r.beta_bound.margin() > 0.0 && r.gap_bound.margin() > 0.0 && r.b_bound.margin() > 0.0);
    }

    proptest! {
        #[test]
        fn scaling_covariance(entries in prop::collection::vec(-1.0..1.0f64, 4), c in 0.2..5.0f64) {
            let a = Mat::new(DMatrix::from_row_slice(2, 2, &entries)).unwrap();
            let a = a.scaled(0.8 * THETA / 6.0 / operator_norm(&a).max(1e-3));
            let base = solve_eigenproblem(&a, THETA).unwrap();
            let scaled = solve_eigenproblem(&a.scaled(c), c * THETA).unwrap();
            prop_assert!((scaled.beta - c * base.beta).abs() < 1e-10);
            prop_assert!(scaled.b.sub(&base.b).norm() < 1e-10);
        }

        #[test]
        fn solution_invariants(entries in prop::collection::vec(-1.0..1.0f64, 9)) {
            let a = Mat::new(DMatrix::from_row_slice(3, 3, &entries)).unwrap();
            let a = a.scaled(0.95 * THETA / 6.0 / operator_norm(&a).max(1e-3));
            let sol = solve_eigenproblem(&a, THETA).unwrap();
            prop_assert!(sol.residual < 1e-10);
            prop_assert!((sol.b.trace() - 3.0).abs() < 1e-12);
            prop_assert!(sol.b.is_positive_definite());
            prop_assert!(sol.spectral_gap >= THETA - 5.0 * sol.norm_a);
        }
    }
}
