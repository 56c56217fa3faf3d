//! Angular collision kernel `g(eta)`, its normalization over the unit
//! sphere, the derived scalars `q` and `theta`, and sphere quadrature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Gauss-Legendre order used per polar-angle panel in kernel integrals.
const PANEL_ORDER: usize = 24;
/// Minimum number of polar-angle panels in kernel integrals.
const MIN_PANELS: usize = 16;

/// How the kernel's angular profile is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelProfile {
    /// Constant on the sphere (Maxwell pseudo-molecules).
    Uniform,
    /// Sampled `(eta, value)` pairs covering `[-1, 1]`, interpolated by a
    /// monotone cubic; scaled afterwards to unit mass.
    Table(Vec<[f64; 2]>),
    /// Only the scalar `q` is known. Enough for the eigenproblem and the
    /// moment equations, which see `g` only through `theta`.
    AbstractQ(f64),
}

impl KernelProfile {
    /// `(1 - eta)^(-s)` clipped at `eta_cut`, tabulated on `samples`
    /// equispaced points in `eta`.
    pub fn truncated_power_law(exponent: f64, eta_cut: f64, samples: usize) -> Result<Self> {
        if !(-1.0..1.0).contains(&eta_cut) || samples < 2 || !exponent.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "power law needs eta_cut in [-1, 1), samples >= 2, finite exponent; got eta_cut = {eta_cut}, samples = {samples}"
            )));
        }
        let floor = 1.0 - eta_cut;
        let table = (0..samples)
            .map(|i| {
                let eta = if i + 1 == samples {
                    1.0
                } else {
                    -1.0 + 2.0 * i as f64 / (samples - 1) as f64
                };
                [eta, (1.0 - eta).max(floor).powf(-exponent)]
            })
            .collect();
        Ok(KernelProfile::Table(table))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Uniform,
    Table(MonotoneCubic),
    Abstract,
}

/// A normalized angular kernel: `int_{S^{d-1}} g(omega . n) dn = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    dim: usize,
    shape: Shape,
    normalization: f64,
    q: f64,
}

impl Kernel {
    /// Builds and normalizes a kernel in dimension `d`.
    pub fn new(profile: &KernelProfile, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidKernel(format!("dimension must be >= 2, got {d}")));
        }
        match profile {
            KernelProfile::Uniform => {
                let normalization = 1.0 / sphere_area(d - 1);
                let mut kernel = Kernel {
                    dim: d,
                    shape: Shape::Uniform,
                    normalization,
                    q: 0.0,
                };
                kernel.q = kernel.integrate(|eta| 1.0 - eta * eta);
                Ok(kernel)
            }
            KernelProfile::Table(points) => {
                let spline = MonotoneCubic::new(points)?;
                let mut kernel = Kernel {
                    dim: d,
                    shape: Shape::Table(spline),
                    normalization: 1.0,
                    q: 0.0,
                };
                let mass = kernel.integrate(|_| 1.0);
                if !(mass > 0.0) || !mass.is_finite() {
                    return Err(Error::InvalidKernel(format!("total mass must be positive, got {mass}")));
                }
                kernel.normalization = 1.0 / mass;
                kernel.q = kernel.integrate(|eta| 1.0 - eta * eta);
                Ok(kernel)
            }
            KernelProfile::AbstractQ(q) => {
                if !(0.0..=1.0).contains(q) {
                    return Err(Error::InvalidKernel(format!("q must lie in [0, 1], got {q}")));
                }
                Ok(Kernel {
                    dim: d,
                    shape: Shape::Abstract,
                    normalization: f64::NAN,
                    q: *q,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Scale applied to the raw profile; NaN for an abstract kernel.
    pub fn normalization_constant(&self) -> f64 {
        self.normalization
    }

    pub fn is_abstract(&self) -> bool {
        matches!(self.shape, Shape::Abstract)
    }

    /// `g(eta)`; `None` for an abstract kernel.
    pub fn eval(&self, eta: f64) -> Option<f64> {
        let eta = eta.clamp(-1.0, 1.0);
        match &self.shape {
            Shape::Uniform => Some(self.normalization),
            Shape::Table(spline) => Some(self.normalization * spline.eval(eta)),
            Shape::Abstract => None,
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn theta(&self) -> f64 {
        compute_theta(self.q, self.dim)
    }

    /// `int_{S^{d-1}} g(omega . n) f(omega . n) dn`, reduced to the polar
    /// angle between `omega` and `n`.
    fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let breaks = match &self.shape {
            Shape::Table(spline) => spline.knots.clone(),
            _ => Vec::new(),
        };
        let d = self.dim;
        let g = |eta: f64| self.eval(eta).unwrap_or(0.0);
        sphere_area(d - 2) * polar_integral(d, &breaks, |eta| g(eta) * f(eta))
    }
}

/// `int_0^pi F(cos phi) sin^{d-2} phi dphi` by composite Gauss-Legendre on
/// panels whose ends include `arccos` of every breakpoint.
fn polar_integral(d: usize, eta_breaks: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut cuts: Vec<f64> = (0..=MIN_PANELS).map(|i| PI * i as f64 / MIN_PANELS as f64).collect();
    cuts.extend(eta_breaks.iter().map(|e| e.clamp(-1.0, 1.0).acos()));
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let (x, w) = gauss_legendre(PANEL_ORDER);
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut panel = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            let phi = mid + half * xi;
            panel += wi * f(phi.cos()) * phi.sin().powi(d as i32 - 2);
        }
        total += half * panel;
    }
    total
}

/// Surface area of the unit sphere `S^m` in `R^{m+1}`.
pub fn sphere_area(m: usize) -> f64 {
    match m {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (m as f64 - 1.0) * sphere_area(m - 2),
    }
}

pub fn compute_q(kernel: &Kernel) -> f64 {
    kernel.q()
}

/// `theta = q d / (4 (d - 1))`.
pub fn compute_theta(q: f64, d: usize) -> f64 {
    q * d as f64 / (4.0 * (d as f64 - 1.0))
}

/// Fritsch-Carlson monotone piecewise cubic Hermite interpolant.
#[derive(Debug, Clone, PartialEq)]
struct MonotoneCubic {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    fn new(points: &[[f64; 2]]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidKernel("table needs at least two points".into()));
        }
        let knots: Vec<f64> = points.iter().map(|p| p[0]).collect();
        let values: Vec<f64> = points.iter().map(|p| p[1]).collect();
        if (knots[0] + 1.0).abs() > 1e-12 || (knots[knots.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel("table must span eta = -1 to eta = 1".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidKernel("table eta values must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidKernel("table values must be finite and non-negative".into()));
        }
        let n = knots.len();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (values[i + 1] - values[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(MonotoneCubic { knots, values, slopes })
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => return self.values[i],
            Err(0) => 0,
            Err(i) if i >= n => n - 2,
            Err(i) => i - 1,
        };
        let h = self.knots[i + 1] - self.knots[i];
        let s = (x - self.knots[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s).powi(2);
        let h10 = s * (1.0 - s).powi(2);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.values[i] + h10 * h * self.slopes[i] + h01 * self.values[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

/// One-sided three-point end slope with shape-preserving limits.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

/// Quadrature on `S^{d-1}` for `d in {2, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereQuadrature {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    exactness: usize,
}

impl SphereQuadrature {
    /// `n` equispaced angles with weight `2 pi / n` each.
    pub fn circle(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidInput(format!("circle quadrature needs n >= 4, got {n}")));
        }
        let mut nodes = Vec::with_capacity(2 * n);
        for j in 0..n {
            let phi = 2.0 * PI * j as f64 / n as f64;
            nodes.push(phi.cos());
            nodes.push(phi.sin());
        }
        Ok(SphereQuadrature {
            dim: 2,
            nodes,
            weights: vec![2.0 * PI / n as f64; n],
            exactness: n - 1,
        })
    }

    /// Gauss-Legendre in the polar cosine times a uniform azimuth rule.
    pub fn product(n_polar: usize, n_azimuth: usize) -> Result<Self> {
        if n_polar < 2 || n_azimuth < 4 {
            return Err(Error::InvalidInput(format!(
                "product quadrature needs n_polar >= 2 and n_azimuth >= 4, got {n_polar} x {n_azimuth}"
            )));
        }
        let (x, w) = gauss_legendre(n_polar);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(3 * n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (xi, wi) in x.iter().zip(&w) {
            let s = (1.0 - xi * xi).max(0.0).sqrt();
            for j in 0..n_azimuth {
                let phi = dphi * j as f64;
                nodes.extend_from_slice(&[s * phi.cos(), s * phi.sin(), *xi]);
                weights.push(wi * dphi);
            }
        }
        Ok(SphereQuadrature {
            dim: 3,
            nodes,
            weights,
            exactness: (2 * n_polar - 1).min(n_azimuth - 1),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exactness_degree(&self) -> usize {
        self.exactness
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.node(i))).sum()
    }
}

/// `d = 2`: `order` equispaced angles. `d = 3`: `order` Gauss-Legendre
/// polar nodes times `2 order` azimuths.
pub fn make_sphere_quadrature(d: usize, order: usize) -> Result<SphereQuadrature> {
    if order < 4 {
        return Err(Error::InvalidInput(format!("sphere quadrature order must be >= 4, got {order}")));
    }
    match d {
        2 => SphereQuadrature::circle(order),
        3 => SphereQuadrature::product(order, 2 * order),
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_mean_q(kernel: &Kernel, quad: &SphereQuadrature, omega: &[f64]) -> f64 {
        quad.integrate(|n| {
            let eta: f64 = n.iter().zip(omega).map(|(a, b)| a * b).sum();
            kernel.eval(eta).unwrap() * (1.0 - eta * eta)
        })
    }

    #[test]
    fn uniform_kernel_values() {
        let k3 = Kernel::new(&KernelProfile::Uniform, 3).unwrap();
        assert!((k3.eval(0.3).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-16);
        let k2 = Kernel::new(&KernelProfile::Uniform, 2).unwrap();
        assert!((k2.eval(-0.7).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn linear_table_normalization_matches_oracle() {
        // g ~ (1 - eta): d = 3 surface measure is 2 pi d eta, d = 2 is
        // 2 d eta / sqrt(1 - eta^2). Oracles by high-order Gauss-Legendre
        // in eta (d = 3) and in the angle (d = 2).
        let table: Vec<[f64; 2]> = (0..=8).map(|i| {
            let eta = -1.0 + i as f64 * 0.25;
            [eta, 1.0 - eta]
        }).collect();
        let (x, w) = gauss_legendre(64);
        let mass3: f64 = 2.0 * PI * x.iter().zip(&w).map(|(e, w)| w * (1.0 - e)).sum::<f64>();
        let k3 = Kernel::new(&KernelProfile::Table(table.clone()), 3).unwrap();
        assert!((k3.normalization_constant() - 1.0 / mass3).abs() < 1e-10);

        let mass2: f64 = PI * x.iter().zip(&w).map(|(t, w)| {
            let phi = PI * (t + 1.0) / 2.0;
            w * (1.0 - phi.cos())
        }).sum::<f64>();
        let k2 = Kernel::new(&KernelProfile::Table(table), 2).unwrap();
        assert!((k2.normalization_constant() - 1.0 / mass2).abs() < 1e-10);
        assert!((mass2 - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_kernel_rejected() {
        let table = vec![[-1.0, 0.0], [1.0, 0.0]];
        assert!(matches!(Kernel::new(&KernelProfile::Table(table), 3), Err(Error::InvalidKernel(_))));
        let negative = vec![[-1.0, 1.0], [0.0, -0.5], [1.0, 1.0]];
        assert!(Kernel::new(&KernelProfile::Table(negative), 3).is_err());
    }

    #[test]
    fn uniform_q_and_theta() {
        for d in 2..=5 {
            let k = Kernel::new(&KernelProfile::Uniform, d).unwrap();
            assert!((k.q() - (1.0 - 1.0 / d as f64)).abs() < 1e-13, "d = {d}");
            assert!((k.theta() - 0.25).abs() < 1e-13, "d = {d}");
        }
    }

    #[test]
    fn theta_substitution() {
        assert_eq!(compute_theta(2.0 / 3.0, 3), 0.25);
        assert_eq!(compute_theta(0.5, 2), 0.25);
        assert_eq!(compute_theta(0.0, 3), 0.0);
    }

    #[test]
    fn forward_peaked_kernel_has_small_q() {
        let mut last = 1.0;
        for cut in [0.9, 0.99, 0.999] {
            let table = vec![[-1.0, 0.0], [cut, 0.0], [1.0, 1.0]];
            let k = Kernel::new(&KernelProfile::Table(table), 3).unwrap();
            assert!(k.q() < last);
            last = k.q();
        }
        assert!(last < 2e-3);
    }

    #[test]
    fn q_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let profile = KernelProfile::truncated_power_law(0.5, 0.95, 41).unwrap();
        let kernel = Kernel::new(&profile, 3).unwrap();
        let quad = make_sphere_quadrature(3, 64).unwrap();
        for _ in 0..4 {
            let mut omega: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = omega.iter().map(|x| x * x).sum::<f64>().sqrt();
            omega.iter_mut().for_each(|x| *x /= n);
            let q = sphere_mean_q(&kernel, &quad, &omega);
            assert!((q - kernel.q()).abs() < 2e-4, "q = {q} vs {}", kernel.q());
        }
        let k2 = Kernel::new(&profile, 2).unwrap();
        let quad2 = make_sphere_quadrature(2, 512).unwrap();
        for angle in [0.1, 1.3, 2.9] {
            let q = sphere_mean_q(&k2, &quad2, &[f64::cos(angle), f64::sin(angle)]);
            assert!((q - k2.q()).abs() < 2e-4);
        }
    }

    #[test]
    fn thresholds_are_ordered() {
        for d in 2..=4 {
            for profile in [KernelProfile::Uniform, KernelProfile::truncated_power_law(1.0, 0.5, 21).unwrap()] {
                let k = Kernel::new(&profile, d).unwrap();
                assert!(k.q() / 24.0 <= k.theta() / 6.0);
                assert!(k.q() >= 0.0 && k.q() <= 1.0);
            }
        }
    }

    #[test]
    fn circle_weights_sum() {
        let q = make_sphere_quadrature(2, 8).unwrap();
        assert!((q.weights().iter().sum::<f64>() - 2.0 * PI).abs() < 1e-14);
        assert_eq!(q.exactness_degree(), 7);
    }

    #[test]
    fn sphere_moments() {
        let q = make_sphere_quadrature(3, 16).unwrap();
        assert!((q.integrate(|_| 1.0) - 4.0 * PI).abs() < 1e-13);
        for i in 0..3 {
            for j in 0..3 {
                let m = q.integrate(|n| n[i] * n[j]);
                let target = if i == j { 4.0 * PI / 3.0 } else { 0.0 };
                assert!((m - target).abs() < 1e-12);
            }
        }
        for i in 0..q.len() {
            let n = q.node(i);
            assert!((n.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn unsupported_dimension() {
        assert!(matches!(make_sphere_quadrature(4, 8), Err(Error::UnsupportedDimension(4))));
        assert!(make_sphere_quadrature(3, 3).is_err());
    }
}
