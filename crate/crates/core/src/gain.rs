//! The Fourier-space gain operator
//! `Gamma(phi)(k) = int g(k^ . n) phi(k+) phi(k-) dn`,
//! `k+- = (k +- |k| n) / 2`, by a fixed sphere quadrature.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FourierField, PolarGrid};
use crate::kernel::{Kernel, SphereQuadrature};

/// Gain operator bound to one grid, kernel and quadrature. Kernel values
/// `w_n g(u_j . n_n)` are cached per grid direction and rescaled so that
/// they sum to one, which makes `Gamma(1) = 1` hold to round-off.
#[derive(Debug, Clone)]
pub struct GainOperator {
    grid: Arc<PolarGrid>,
    nodes: Vec<f64>,
    n_nodes: usize,
    weights: Vec<f64>,
    raw_mass: Vec<f64>,
}

impl GainOperator {
    pub fn new(grid: Arc<PolarGrid>, kernel: &Kernel, quad: &SphereQuadrature) -> Result<Self> {
        let d = grid.dim();
        if quad.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: quad.dim(),
            });
        }
        if kernel.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: kernel.dim(),
            });
        }
        if kernel.is_abstract() {
            return Err(Error::InvalidKernel("an abstract kernel has no pointwise values to integrate".into()));
        }
        // n and -n swap k+ and k-, so antipodal node pairs share one term
        let groups = antipodal_groups(quad);
        let n_nodes = groups.len();
        let nodes: Vec<f64> = groups.iter().flat_map(|g| quad.node(g[0]).to_vec()).collect();
        let mut weights = vec![0.0; grid.n_directions() * n_nodes];
        let mut raw_mass = vec![0.0; grid.n_directions()];
        for j in 0..grid.n_directions() {
            let u = grid.direction(j);
            let row = &mut weights[j * n_nodes..(j + 1) * n_nodes];
            for (slot, group) in row.iter_mut().zip(&groups) {
                *slot = group
                    .iter()
                    .map(|&n| {
                        let eta: f64 = u.iter().zip(quad.node(n)).map(|(a, b)| a * b).sum();
                        quad.weight(n) * kernel.eval(eta).expect("concrete kernel")
                    })
                    .sum();
            }
            let mass: f64 = row.iter().sum();
            if !(mass > 0.0) {
                return Err(Error::InvalidKernel(format!(
                    "quadrature misses the kernel support along grid direction {j}"
                )));
            }
            row.iter_mut().for_each(|w| *w /= mass);
            raw_mass[j] = mass;
        }
        Ok(GainOperator {
            grid,
            nodes,
            n_nodes,
            weights,
            raw_mass,
        })
    }

    pub fn grid(&self) -> &Arc<PolarGrid> {
        &self.grid
    }

    /// Unnormalized quadrature sums of `g` per grid direction (ideally 1).
    pub fn raw_mass(&self) -> &[f64] {
        &self.raw_mass
    }

    pub fn apply(&self, field: &FourierField) -> FourierField {
        let grid = &self.grid;
        debug_assert!(Arc::ptr_eq(grid, field.grid()) || grid.as_ref() == field.grid().as_ref());
        let d = grid.dim();
        let nr = grid.n_rad();
        let radii = grid.radii();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(nr).enumerate().for_each(|(j, out)| {
            let u = grid.direction(j);
            let mut acc = vec![0.0; nr];
            let mut plus = vec![0.0; d];
            let mut minus = vec![0.0; d];
            for n in 0..self.n_nodes {
                let w = self.weights[j * self.n_nodes + n];
                if w == 0.0 {
                    continue;
                }
                let node = &self.nodes[n * d..(n + 1) * d];
                for c in 0..d {
                    plus[c] = u[c] + node[c];
                    minus[c] = u[c] - node[c];
                }
                let lp = norm(&plus);
                let lm = norm(&minus);
                let ray_p = (lp > 1e-12).then(|| {
                    plus.iter_mut().for_each(|x| *x /= lp);
                    field.ray(&plus)
                });
                let ray_m = (lm > 1e-12).then(|| {
                    minus.iter_mut().for_each(|x| *x /= lm);
                    field.ray(&minus)
                });
                let (sp, sm) = (0.5 * lp, 0.5 * lm);
                for (i, a) in acc.iter_mut().enumerate().skip(1) {
                    let vp = ray_p.as_ref().map_or(1.0, |r| r.eval(radii[i] * sp));
                    let vm = ray_m.as_ref().map_or(1.0, |r| r.eval(radii[i] * sm));
                    *a += w * (vp * vm - 1.0);
                }
            }
            out[0] = 1.0;
            for i in 1..nr {
                out[i] = 1.0 + acc[i];
            }
        });
        FourierField::from_values(Arc::clone(grid), values, field.tail().clone())
            .expect("gain output keeps grid shape and unit origin")
    }
}

fn antipodal_groups(quad: &SphereQuadrature) -> Vec<Vec<usize>> {
    let n = quad.len();
    let mut taken = vec![false; n];
    let mut groups = Vec::with_capacity(n / 2 + 1);
    for a in 0..n {
        if taken[a] {
            continue;
        }
        taken[a] = true;
        let partner = (a + 1..n).find(|&b| {
            !taken[b] && quad.node(a).iter().zip(quad.node(b)).all(|(x, y)| (x + y).abs() < 1e-13)
        });
        match partner {
            Some(b) => {
                taken[b] = true;
                groups.push(vec![a, b]);
            }
            None => groups.push(vec![a]),
        }
    }
    groups
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-shot `Gamma(field)`.
pub fn gain(field: &FourierField, kernel: &Kernel, quad: &SphereQuadrature) -> Result<FourierField> {
    let op = GainOperator::new(Arc::clone(field.grid()), kernel, quad)?;
    Ok(op.apply(field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GridSpec, RadialSpacing, VALUE_SLACK};
    use crate::kernel::{make_sphere_quadrature, KernelProfile};
    use crate::matrix::SymMat;
    use std::f64::consts::PI;

    fn default_grid(d: usize) -> Arc<PolarGrid> {
        Arc::new(PolarGrid::new(GridSpec::default_for(d).unwrap()).unwrap())
    }

    fn uniform_op(grid: &Arc<PolarGrid>, order: usize) -> GainOperator {
        let d = grid.dim();
        let kernel = Kernel::new(&KernelProfile::Uniform, d).unwrap();
        let quad = make_sphere_quadrature(d, order).unwrap();
        GainOperator::new(Arc::clone(grid), &kernel, &quad).unwrap()
    }

    #[test]
    fn constant_is_fixed_exactly() {
        let g = default_grid(2);
        let one = FourierField::constant_one(Arc::clone(&g));
        let out = uniform_op(&g, 64).apply(&one);
        assert!(out.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn isotropic_gaussians_are_fixed() {
        let g = default_grid(2);
        let op = uniform_op(&g, 64);
        for sigma in [0.25, 0.5, 1.0] {
            let f = FourierField::gaussian(Arc::clone(&g), &SymMat::identity(2).scaled(2.0 * sigma)).unwrap();
            let err = op.apply(&f).sup_distance(&f);
            assert!(err < 1e-8, "sigma {sigma}: {err:e}");
        }
    }

    #[test]
    fn anisotropic_gaussian_matches_direct_quadrature() {
        let g = default_grid(2);
        let b = SymMat::from_rows(&[vec![0.9, 0.0], vec![0.0, 1.1]]).unwrap();
        let f = FourierField::gaussian(Arc::clone(&g), &b).unwrap();
        let out = uniform_op(&g, 64).apply(&f);
        // k = (1, 0) is radial node 8 on direction 0
        assert_eq!(g.point(0, 8), vec![1.0, 0.0]);
        let k = [1.0, 0.0];
        let n = 2048;
        let phi = |x: &[f64]| (-0.5 * b.contract(x)).exp();
        let oracle: f64 = (0..n)
            .map(|m| {
                let a = 2.0 * PI * m as f64 / n as f64;
                let (c, s) = (a.cos(), a.sin());
                let kp = [0.5 * (k[0] + c), 0.5 * (k[1] + s)];
                let km = [0.5 * (k[0] - c), 0.5 * (k[1] - s)];
                phi(&kp) * phi(&km) / (2.0 * PI) * (2.0 * PI / n as f64)
            })
            .sum();
        assert!((out.value(0, 8) - oracle).abs() < 1e-8, "{} vs {oracle}", out.value(0, 8));
    }

    #[test]
    fn positivity_and_bound() {
        let g = default_grid(2);
        let b = SymMat::from_rows(&[vec![1.4, 0.3], vec![0.3, 0.6]]).unwrap();
        let f = FourierField::gaussian(Arc::clone(&g), &b).unwrap();
        let out = uniform_op(&g, 64).apply(&f);
        assert!(out.values().iter().all(|&v| v >= -VALUE_SLACK && v <= 1.0 + VALUE_SLACK));
    }

    #[test]
    fn rotation_equivariance() {
        let g = default_grid(2);
        let op = uniform_op(&g, 64);
        let b = SymMat::from_rows(&[vec![0.9, 0.1], vec![0.1, 1.2]]).unwrap();
        // rotating by one grid step permutes grid directions
        let t = 2.0 * PI / 32.0;
        let rot = nalgebra::DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let f = FourierField::gaussian(Arc::clone(&g), &b).unwrap();
        let fr = FourierField::gaussian(Arc::clone(&g), &b.congruence(&rot)).unwrap();
        let (gf, gfr) = (op.apply(&f), op.apply(&fr));
        // fr(k) = f(R k) and R u_j = u_{j+1}
        let mut worst: f64 = 0.0;
        for j in 0..32 {
            for i in 0..g.n_rad() {
                worst = worst.max((gfr.value(j, i) - gf.value((j + 1) % 32, i)).abs());
            }
        }
        assert!(worst < 1e-8, "{worst:e}");
    }

    #[test]
    fn quadrature_refinement_converges() {
        let g = default_grid(2);
        let b = SymMat::from_rows(&[vec![0.8, 0.2], vec![0.2, 1.3]]).unwrap();
        let f = FourierField::gaussian(Arc::clone(&g), &b).unwrap();
        let reference = uniform_op(&g, 256).apply(&f);
        let errs: Vec<f64> = [8, 16, 32].iter().map(|&o| uniform_op(&g, o).apply(&f).sup_distance(&reference)).collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn three_dimensional_fixed_point() {
        let g = Arc::new(
            PolarGrid::new(GridSpec {
                dim: 3,
                n_radial: 24,
                n_angular: 12,
                n_polar: 6,
                k_max: 6.0,
                spacing: RadialSpacing::Uniform,
            })
            .unwrap(),
        );
        let op = uniform_op(&g, 12);
        let f = FourierField::gaussian(Arc::clone(&g), &SymMat::identity(3)).unwrap();
        let err = op.apply(&f).sup_distance(&f);
        assert!(err < 1e-6, "{err:e}");
        let one = FourierField::constant_one(Arc::clone(&g));
        assert!(op.apply(&one).values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn table_kernel_preserves_gaussians() {
        let g = default_grid(2);
        let kernel = Kernel::new(&KernelProfile::Table(vec![[-1.0, 0.2], [0.0, 1.0], [1.0, 2.0]]), 2).unwrap();
        let quad = make_sphere_quadrature(2, 128).unwrap();
        let op = GainOperator::new(Arc::clone(&g), &kernel, &quad).unwrap();
        let raw: f64 = op.raw_mass().iter().fold(0.0, |m, x| m.max((x - 1.0).abs()));
        assert!(raw < 1e-3);
        let f = FourierField::gaussian(Arc::clone(&g), &SymMat::identity(2)).unwrap();
        assert!(op.apply(&f).sup_distance(&f) < 1e-8);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = default_grid(2);
        let kernel = Kernel::new(&KernelProfile::Uniform, 2).unwrap();
        let quad3 = make_sphere_quadrature(3, 8).unwrap();
        assert!(GainOperator::new(Arc::clone(&g), &kernel, &quad3).is_err());
        let abs = Kernel::new(&KernelProfile::AbstractQ(0.5), 2).unwrap();
        let quad = make_sphere_quadrature(2, 16).unwrap();
        assert!(matches!(GainOperator::new(g, &abs, &quad), Err(Error::InvalidKernel(_))));
    }
}
