//! Real characteristic functions sampled on a polar grid.
//!
//! Values are stored direction-major (`values[j * n_rad + i]` is the value
//! at radius `r_i` along grid direction `j`). Off-grid evaluation goes ray by
//! ray: angular interpolation collapses the field onto a 1-D profile along a
//! direction `u`, and a local barycentric Lagrange stencil interpolates that
//! profile in radius. The profile is continued to negative radius through the
//! antipodal direction, so stencils near the origin stay centred.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sym_len, SymMat, SymVec};
use crate::quadrature::gauss_legendre;

/// Default bound on `|phi|` allowed for interpolation overshoot.
pub const VALUE_SLACK: f64 = 1e-8;

const RADIAL_STENCIL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadialSpacing {
    Uniform,
    /// `r_i = k_max (ratio^i - 1) / (ratio^Nr - 1)`.
    Geometric { ratio: f64 },
}

/// Grid parameters. For `dim = 2`, `n_angular` equispaced angles; for
/// `dim = 3`, `n_polar` Gauss-Legendre polar angles times `n_angular`
/// equispaced azimuths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n_radial: usize,
    pub n_angular: usize,
    #[serde(default)]
    pub n_polar: usize,
    pub k_max: f64,
    pub spacing: RadialSpacing,
}

impl GridSpec {
    pub fn default_for(dim: usize) -> Result<Self> {
        match dim {
            2 => Ok(GridSpec {
                dim,
                n_radial: 64,
                n_angular: 32,
                n_polar: 0,
                k_max: 8.0,
                spacing: RadialSpacing::Uniform,
            }),
            3 => Ok(GridSpec {
                dim,
                n_radial: 48,
                n_angular: 32,
                n_polar: 16,
                k_max: 8.0,
                spacing: RadialSpacing::Uniform,
            }),
            d => Err(Error::UnsupportedDimension(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RadialInterp {
    /// `-r_m, ..., -r_1, r_0, ..., r_Nr`.
    nodes: Vec<f64>,
    mirror: usize,
    stencil: usize,
    /// Barycentric weights per stencil start.
    bary: Vec<Vec<f64>>,
}

impl RadialInterp {
    fn new(radii: &[f64]) -> Self {
        let stencil = if radii.len() >= RADIAL_STENCIL { RADIAL_STENCIL } else { 8 };
        let mirror = stencil / 2;
        let mut nodes: Vec<f64> = (1..=mirror).rev().map(|i| -radii[i]).collect();
        nodes.extend_from_slice(radii);
        let bary = (0..=nodes.len() - stencil)
            .map(|s| {
                let xs = &nodes[s..s + stencil];
                (0..stencil)
                    .map(|k| {
                        let p: f64 = (0..stencil).filter(|&l| l != k).map(|l| xs[k] - xs[l]).product();
                        1.0 / p
                    })
                    .collect()
            })
            .collect();
        RadialInterp {
            nodes,
            mirror,
            stencil,
            bary,
        }
    }

    /// `pos[i]` is the profile at `r_i`, `neg[i]` at `-r_i` (for `i <= mirror`).
    fn eval(&self, x: f64, pos: &[f64], neg: &[f64]) -> f64 {
        let m = self.mirror;
        let value = |e: usize| if e < m { neg[m - e] } else { pos[e - m] };
        let above = self.nodes.partition_point(|&n| n <= x);
        let start = above.saturating_sub(self.stencil / 2).min(self.nodes.len() - self.stencil);
        let w = &self.bary[start];
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..self.stencil {
            let dx = x - self.nodes[start + k];
            if dx == 0.0 {
                return value(start + k);
            }
            let c = w[k] / dx;
            num += c * value(start + k);
            den += c;
        }
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Angular {
    Circle {
        n: usize,
    },
    Sphere {
        /// Polar angles, ascending.
        polar: Vec<f64>,
        n_azimuth: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    spec: GridSpec,
    radii: Vec<f64>,
    directions: Vec<f64>,
    angular: Angular,
    radial: RadialInterp,
}

impl PolarGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if !(spec.k_max.is_finite() && spec.k_max > 0.0) {
            return Err(Error::config("grid.k_max", format!("must be positive, got {}", spec.k_max)));
        }
        if spec.n_radial < 8 {
            return Err(Error::config("grid.n_radial", format!("must be >= 8, got {}", spec.n_radial)));
        }
        if spec.n_angular < 4 || spec.n_angular % 2 != 0 {
            return Err(Error::config(
                "grid.n_angular",
                format!("must be even and >= 4, got {}", spec.n_angular),
            ));
        }
        let nr = spec.n_radial;
        let radii: Vec<f64> = match spec.spacing {
            RadialSpacing::Uniform => (0..=nr).map(|i| spec.k_max * i as f64 / nr as f64).collect(),
            RadialSpacing::Geometric { ratio } => {
                if !(ratio.is_finite() && ratio > 1.0) {
                    return Err(Error::config("grid.spacing.ratio", format!("must be > 1, got {ratio}")));
                }
                let denom = ratio.powi(nr as i32) - 1.0;
                if !denom.is_finite() {
                    return Err(Error::config("grid.spacing.ratio", "ratio^n_radial overflows"));
                }
                (0..=nr).map(|i| spec.k_max * (ratio.powi(i as i32) - 1.0) / denom).collect()
            }
        };
        let (angular, directions) = match spec.dim {
            2 => {
                let n = spec.n_angular;
                let dirs = (0..n)
                    .flat_map(|j| {
                        let a = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                        [a.cos(), a.sin()]
                    })
                    .collect();
                (Angular::Circle { n }, dirs)
            }
            3 => {
                if spec.n_polar < 4 {
                    return Err(Error::config("grid.n_polar", format!("must be >= 4, got {}", spec.n_polar)));
                }
                let (x, _) = gauss_legendre(spec.n_polar);
                let polar: Vec<f64> = x.iter().rev().map(|c| c.acos()).collect();
                let q = spec.n_angular;
                let mut dirs = Vec::with_capacity(3 * polar.len() * q);
                for &t in &polar {
                    for k in 0..q {
                        let p = 2.0 * std::f64::consts::PI * k as f64 / q as f64;
                        dirs.extend_from_slice(&[t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]);
                    }
                }
                (Angular::Sphere { polar, n_azimuth: q }, dirs)
            }
            d => return Err(Error::UnsupportedDimension(d)),
        };
        let radial = RadialInterp::new(&radii);
        Ok(PolarGrid {
            spec,
            radii,
            directions,
            angular,
            radial,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn k_max(&self) -> f64 {
        self.spec.k_max
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Radial nodes per direction, `Nr + 1`.
    pub fn n_rad(&self) -> usize {
        self.radii.len()
    }

    pub fn n_directions(&self) -> usize {
        self.directions.len() / self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.n_rad() * self.n_directions()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn direction(&self, j: usize) -> &[f64] {
        let d = self.spec.dim;
        &self.directions[j * d..(j + 1) * d]
    }

    pub fn point(&self, j: usize, i: usize) -> Vec<f64> {
        self.direction(j).iter().map(|u| u * self.radii[i]).collect()
    }

    /// Angle coordinates of direction `j`: `[alpha]` or `[polar, azimuth]`.
    pub fn angles(&self, j: usize) -> Vec<f64> {
        match &self.angular {
            Angular::Circle { n } => vec![2.0 * std::f64::consts::PI * j as f64 / *n as f64],
            Angular::Sphere { polar, n_azimuth } => vec![
                polar[j / n_azimuth],
                2.0 * std::f64::consts::PI * (j % n_azimuth) as f64 / *n_azimuth as f64,
            ],
        }
    }

    /// Index of the direction `-u_j`.
    pub fn antipode(&self, j: usize) -> usize {
        match &self.angular {
            Angular::Circle { n } => (j + n / 2) % n,
            Angular::Sphere { polar, n_azimuth } => {
                let (p, q) = (j / n_azimuth, j % n_azimuth);
                (polar.len() - 1 - p) * n_azimuth + (q + n_azimuth / 2) % n_azimuth
            }
        }
    }

    /// Interpolation weights over grid directions for the unit vector `u`.
    pub fn angular_weights(&self, u: &[f64]) -> Vec<(usize, f64)> {
        match &self.angular {
            Angular::Circle { n } => trig_weights(*n, u[1].atan2(u[0])),
            Angular::Sphere { polar, n_azimuth } => sphere_weights(polar, *n_azimuth, u),
        }
    }
}

/// Trigonometric interpolation weights on `n` (even) equispaced angles.
fn trig_weights(n: usize, alpha: f64) -> Vec<(usize, f64)> {
    let nf = n as f64;
    let step = 2.0 * std::f64::consts::PI / nf;
    let nearest = (alpha / step).round();
    if (alpha - nearest * step).abs() < 1e-14 {
        return vec![((nearest as i64).rem_euclid(n as i64) as usize, 1.0)];
    }
    let s_half = (nf * alpha / 2.0).sin();
    (0..n)
        .map(|j| {
            let delta = alpha - step * j as f64;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let w = sign * s_half * (delta / 2.0).cos() / ((delta / 2.0).sin() * nf);
            (j, w)
        })
        .collect()
}

fn lagrange4(nodes: &[f64], x: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for k in 0..4 {
        for l in 0..4 {
            if l != k {
                w[k] *= (x - nodes[l]) / (nodes[k] - nodes[l]);
            }
        }
    }
    w
}

/// Tensor 4x4 Lagrange weights in (polar, azimuth); polar stencils crossing
/// a pole continue on the meridian half a turn away.
fn sphere_weights(polar: &[f64], n_az: usize, u: &[f64]) -> Vec<(usize, f64)> {
    use std::f64::consts::PI;
    let p = polar.len();
    let theta = u[2].clamp(-1.0, 1.0).acos();
    let phi = u[1].atan2(u[0]).rem_euclid(2.0 * PI);

    // extended polar nodes: (angle, grid row, half-turn shift)
    let mut ext: Vec<(f64, usize, bool)> = vec![(-polar[1], 1, true), (-polar[0], 0, true)];
    ext.extend(polar.iter().enumerate().map(|(i, &t)| (t, i, false)));
    ext.push((2.0 * PI - polar[p - 1], p - 1, true));
    ext.push((2.0 * PI - polar[p - 2], p - 2, true));
    let above = ext.partition_point(|e| e.0 <= theta);
    let start = above.saturating_sub(2).min(ext.len() - 4);
    let pn: Vec<f64> = ext[start..start + 4].iter().map(|e| e.0).collect();
    let wp = lagrange4(&pn, theta);

    let step = 2.0 * PI / n_az as f64;
    let base = (phi / step).floor();
    let t = phi / step - base;
    let wa = lagrange4(&[-1.0, 0.0, 1.0, 2.0], t);

    let mut out = Vec::with_capacity(16);
    for (a, &(_, row, shift)) in ext[start..start + 4].iter().enumerate() {
        if wp[a] == 0.0 {
            continue;
        }
        for (b, &wb) in wa.iter().enumerate() {
            if wb == 0.0 {
                continue;
            }
            let mut q = base as i64 - 1 + b as i64;
            if shift {
                q += (n_az / 2) as i64;
            }
            let q = q.rem_euclid(n_az as i64) as usize;
            out.push((row * n_az + q, wp[a] * wb));
        }
    }
    out
}

/// A field collapsed onto one ray, ready for radial evaluation.
#[derive(Debug, Clone)]
pub struct RayProfile<'a> {
    grid: &'a PolarGrid,
    pos: Vec<f64>,
    neg: Vec<f64>,
    tail_rate: f64,
}

impl RayProfile<'_> {
    /// Value at distance `rho >= 0` from the origin along the ray.
    pub fn eval(&self, rho: f64) -> f64 {
        let k_max = self.grid.k_max();
        if rho <= k_max {
            self.grid.radial.eval(rho, &self.pos, &self.neg)
        } else {
            let edge = *self.pos.last().expect("non-empty profile");
            edge * (-0.5 * (rho * rho - k_max * k_max) * self.tail_rate).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierField {
    grid: Arc<PolarGrid>,
    values: Vec<f64>,
    tail: SymMat,
}

impl FourierField {
    /// Builds a field from node values. The origin entries must equal 1 to
    /// within 1e-12 and are then set to exactly 1.
    pub fn from_values(grid: Arc<PolarGrid>, mut values: Vec<f64>, tail: SymMat) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if tail.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                actual: tail.dim(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInitialData(format!("non-finite value at node {bad}")));
        }
        let n = grid.n_rad();
        for j in 0..grid.n_directions() {
            let v0 = values[j * n];
            if (v0 - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInitialData(format!("phi(0) = {v0} along direction {j}; must be 1")));
            }
            values[j * n] = 1.0;
        }
        Ok(FourierField { grid, values, tail })
    }

    pub fn from_fn(grid: Arc<PolarGrid>, tail: SymMat, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let n = grid.n_rad();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            let mut k = vec![0.0; grid.dim()];
            for (i, slot) in row.iter_mut().enumerate() {
                for (c, u) in k.iter_mut().zip(grid.direction(j)) {
                    *c = u * grid.radii[i];
                }
                *slot = f(&k);
            }
        });
        Self::from_values(grid, values, tail)
    }

    /// `exp(-1/2 B : k k)`, with `B` as its tail model.
    pub fn gaussian(grid: Arc<PolarGrid>, b: &SymMat) -> Result<Self> {
        let bb = b.clone();
        Self::from_fn(grid, b.clone(), move |k| (-0.5 * bb.contract(k)).exp())
    }

    pub fn constant_one(grid: Arc<PolarGrid>) -> Self {
        let d = grid.dim();
        let values = vec![1.0; grid.len()];
        FourierField {
            grid,
            values,
            tail: SymMat::zeros(d),
        }
    }

    pub fn grid(&self) -> &Arc<PolarGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail(&self) -> &SymMat {
        &self.tail
    }

    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.grid.n_rad() + i]
    }

    pub fn with_tail(mut self, tail: SymMat) -> Self {
        self.tail = tail;
        self
    }

    /// Values along grid direction `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.n_rad();
        &self.values[j * n..(j + 1) * n]
    }

    /// Collapses the field onto the ray through unit vector `u`.
    pub fn ray(&self, u: &[f64]) -> RayProfile<'_> {
        let weights = self.grid.angular_weights(u);
        self.ray_from_weights(&weights, u)
    }

    pub(crate) fn ray_from_weights(&self, weights: &[(usize, f64)], u: &[f64]) -> RayProfile<'_> {
        let n = self.grid.n_rad();
        let m = self.grid.radial.mirror;
        let mut pos = vec![0.0; n];
        let mut neg = vec![0.0; m + 1];
        let mut total = 0.0;
        for &(j, w) in weights {
            total += w;
            for (p, v) in pos.iter_mut().zip(self.row(j)) {
                *p += w * v;
            }
            let back = self.row(self.grid.antipode(j));
            for (p, v) in neg.iter_mut().zip(back) {
                *p += w * v;
            }
        }
        // dividing by the weight sum makes constants exact
        for p in pos.iter_mut().chain(neg.iter_mut()) {
            *p /= total;
        }
        RayProfile {
            grid: &self.grid,
            pos,
            neg,
            tail_rate: self.tail.contract(u),
        }
    }

    /// Point evaluation. Total: returns 1 at the origin and uses the
    /// Gaussian tail beyond `k_max`.
    pub fn eval(&self, k: &[f64]) -> f64 {
        let rho = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rho == 0.0 {
            return 1.0;
        }
        let u: Vec<f64> = k.iter().map(|x| x / rho).collect();
        self.ray(&u).eval(rho)
    }

    /// The field `k -> phi(M k)` on the same grid.
    pub fn compose_linear(&self, m: &DMatrix<f64>) -> FourierField {
        let grid = &self.grid;
        let n = grid.n_rad();
        let d = grid.dim();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            let mu = m * nalgebra::DVector::from_column_slice(grid.direction(j));
            let s = mu.norm();
            if s == 0.0 {
                row.fill(self.values[0]);
                return;
            }
            let u: Vec<f64> = mu.iter().map(|x| x / s).collect();
            let ray = self.ray(&u);
            for (slot, r) in row.iter_mut().zip(&grid.radii) {
                *slot = ray.eval(r * s);
            }
        });
        debug_assert_eq!(m.nrows(), d);
        FourierField {
            grid: Arc::clone(grid),
            values,
            tail: self.tail.congruence(m),
        }
    }

    /// `k -> phi(c k)`.
    pub fn scale_argument(&self, c: f64) -> FourierField {
        let d = self.dim();
        self.compose_linear(&(DMatrix::identity(d, d) * c))
    }

    /// `a * self + b * other`, keeping this field's tail.
    pub fn lin_comb(&self, a: f64, other: &FourierField, b: f64) -> FourierField {
        debug_assert!(Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid);
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        FourierField {
            grid: Arc::clone(&self.grid),
            values,
            tail: self.tail.clone(),
        }
    }

    /// Applies `f` to every node value, without touching the tail.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> FourierField {
        FourierField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
            tail: self.tail.clone(),
        }
    }

    /// Sets every origin entry to exactly 1.
    pub fn force_origin(&mut self) {
        let n = self.grid.n_rad();
        for chunk in self.values.chunks_mut(n) {
            chunk[0] = 1.0;
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &FourierField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Finite values, `phi(0) = 1` and `|phi| <= 1 + slack`.
    pub fn check_invariants(&self, slack: f64) -> Result<()> {
        let n = self.grid.n_rad();
        for (idx, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidInitialData(format!("non-finite value at node {idx}")));
            }
            if idx % n == 0 && v != 1.0 {
                return Err(Error::InvalidInitialData(format!("phi(0) = {v} at node {idx}")));
            }
            if v.abs() > 1.0 + slack {
                return Err(Error::InvalidInitialData(format!(
                    "|phi| = {} exceeds 1 + {slack:e} at node {idx}",
                    v.abs()
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let spec = self.grid.spec();
        let mut header = String::new();
        let _ = writeln!(header, "# ssbolt-field v1");
        let _ = writeln!(header, "# dim={}", spec.dim);
        let _ = writeln!(header, "# n_radial={}", spec.n_radial);
        let _ = writeln!(header, "# n_angular={}", spec.n_angular);
        let _ = writeln!(header, "# n_polar={}", spec.n_polar);
        let _ = writeln!(header, "# k_max={}", fmt17(spec.k_max));
        match spec.spacing {
            RadialSpacing::Uniform => {
                let _ = writeln!(header, "# spacing=uniform");
            }
            RadialSpacing::Geometric { ratio } => {
                let _ = writeln!(header, "# spacing=geometric:{}", fmt17(ratio));
            }
        }
        let tail: Vec<String> = self.tail.to_symvec().coords.iter().map(|&x| fmt17(x)).collect();
        let _ = writeln!(header, "# tail={}", tail.join(" "));
        let cols = if spec.dim == 2 { "r,angle,value" } else { "r,polar,azimuth,value" };
        let _ = writeln!(header, "{cols}");
        out.write_all(header.as_bytes())?;
        let n = self.grid.n_rad();
        for j in 0..self.grid.n_directions() {
            let angles: Vec<String> = self.grid.angles(j).into_iter().map(fmt17).collect();
            let angles = angles.join(",");
            for i in 0..n {
                writeln!(out, "{},{},{}", fmt17(self.grid.radii[i]), angles, fmt17(self.value(j, i)))?;
            }
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<FourierField> {
        let bad = |msg: String| Error::InvalidInput(format!("field csv: {msg}"));
        let mut lines = input.lines();
        let mut meta = std::collections::BTreeMap::new();
        let mut columns = None;
        for line in lines.by_ref() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            } else {
                columns = Some(line);
                break;
            }
        }
        let columns = columns.ok_or_else(|| bad("missing column header".into()))?;
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing `{k}` in header")));
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let float = |s: &str| -> Result<f64> { s.trim().parse().map_err(|_| bad(format!("bad number `{s}`"))) };
        let spacing = match get("spacing")?.as_str() {
            "uniform" => RadialSpacing::Uniform,
            s => match s.strip_prefix("geometric:") {
                Some(r) => RadialSpacing::Geometric { ratio: float(r)? },
                None => return Err(bad(format!("unknown spacing `{s}`"))),
            },
        };
        let spec = GridSpec {
            dim: int("dim")?,
            n_radial: int("n_radial")?,
            n_angular: int("n_angular")?,
            n_polar: int("n_polar")?,
            k_max: float(get("k_max")?)?,
            spacing,
        };
        let grid = Arc::new(PolarGrid::new(spec)?);
        let tail_coords: Vec<f64> = get("tail")?.split_whitespace().map(float).collect::<Result<_>>()?;
        if tail_coords.len() != sym_len(spec.dim) {
            return Err(bad("tail has wrong length".into()));
        }
        let tail = SymMat::from_symvec(&SymVec::new(spec.dim, tail_coords.into())?);
        let n_cols = columns.split(',').count();
        if n_cols != spec.dim + 1 {
            return Err(bad(format!("expected {} columns, got {n_cols}", spec.dim + 1)));
        }
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n_cols {
                return Err(bad(format!("row {} has {} columns", values.len(), fields.len())));
            }
            let idx = values.len();
            if idx >= grid.len() {
                return Err(bad("too many rows".into()));
            }
            let i = idx % grid.n_rad();
            if float(fields[0])? != grid.radii[i] {
                return Err(bad(format!("row {idx}: radius does not match the grid")));
            }
            values.push(float(fields[n_cols - 1])?);
        }
        FourierField::from_values(grid, values, tail)
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
