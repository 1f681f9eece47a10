//! Periodic discretization of the box `[0, L)^d`.
//!
//! Spectral coefficients use the convention `f(x) = sum_k c_k exp(i xi_k . x)`
//! with `xi_k = 2 pi k / L` and `k` in `{-N/2, ..., N/2 - 1}^d`, stored in FFT
//! order (index `j >= N/2` means `k = j - N`). Storage is row-major with the
//! last axis fastest.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};

struct GridInner {
    dim: usize,
    points: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid with `points` nodes per axis.
#[derive(Clone)]
pub struct TorusGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.dim())
            .field("points", &self.points())
            .field("length", &self.length())
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.dim() == other.dim() && self.points() == other.points() && self.length() == other.length())
    }
}

/// Direction of a spectral transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Grid values to coefficients `c_k` (normalized by `N^d`).
    Forward,
    /// Coefficients to grid values (plain sum over modes).
    Inverse,
}

/// Weight used by [`ScalarField::sobolev_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolevFlavor {
    /// `<xi> = (1 + |xi|^2)^{1/2}`.
    Inhomogeneous,
    /// `|xi|`; for `alpha < 0` the zero mode is dropped.
    Homogeneous,
}

impl TorusGrid {
    pub fn new(dim: usize, points: usize, length: f64) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::DimensionError(format!("grid dimension {dim} not in 1..=3")));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::GridResolutionError(format!(
                "points per dimension must be a power of two >= 4, got {points}"
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::GridResolutionError(format!("box length must be positive, got {length}")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(points);
        let inverse = planner.plan_fft_inverse(points);
        Ok(TorusGrid { inner: Arc::new(GridInner { dim, points, length, forward, inverse }) })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn points(&self) -> usize {
        self.inner.points
    }

    pub fn length(&self) -> f64 {
        self.inner.length
    }

    pub fn spacing(&self) -> f64 {
        self.inner.length / self.inner.points as f64
    }

    /// Total number of nodes, `N^d`.
    pub fn len(&self) -> usize {
        self.inner.points.pow(self.inner.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `L^d`.
    pub fn volume(&self) -> f64 {
        self.inner.length.powi(self.inner.dim as i32)
    }

    /// Quadrature weight of one node, `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim() as i32)
    }

    /// Signed integer wavenumber of a 1-D FFT index.
    pub fn mode_number(&self, index: usize) -> i64 {
        let n = self.points();
        if index < n / 2 {
            index as i64
        } else {
            index as i64 - n as i64
        }
    }

    /// Per-axis indices of a flat index.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        let n = self.points();
        for a in (0..self.dim()).rev() {
            out[a] = flat % n;
            flat /= n;
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points() + i)
    }

    /// Physical coordinates of node `flat`.
    pub fn position(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; 3];
        self.unflatten(flat, &mut idx[..self.dim()]);
        let dx = self.spacing();
        for a in 0..self.dim() {
            out[a] = idx[a] as f64 * dx;
        }
    }

    /// Wavevector `xi_k` of spectral slot `flat`.
    pub fn wavevector(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; 3];
        self.unflatten(flat, &mut idx[..self.dim()]);
        let base = 2.0 * std::f64::consts::PI / self.length();
        for a in 0..self.dim() {
            out[a] = base * self.mode_number(idx[a]) as f64;
        }
    }

    /// `|xi_k|^2` for every slot.
    pub fn xi_squared(&self) -> Vec<f64> {
        let mut xi = [0.0; 3];
        (0..self.len())
            .map(|k| {
                self.wavevector(k, &mut xi);
                xi[..self.dim()].iter().map(|v| v * v).sum()
            })
            .collect()
    }

    /// Largest retained integer wavenumber under the 2/3 rule. Triple
    /// products of retained modes never alias onto the grid.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.points() as i64 - 1) / 3
    }

    /// `true` for slots kept by the 2/3 rule (per-axis cutoff).
    pub fn dealias_mask(&self) -> Vec<bool> {
        let cut = self.dealias_cutoff();
        let mut idx = [0usize; 3];
        (0..self.len())
            .map(|k| {
                self.unflatten(k, &mut idx[..self.dim()]);
                idx[..self.dim()].iter().all(|&i| self.mode_number(i).abs() <= cut)
            })
            .collect()
    }

    /// Largest wavenumber magnitude on the grid (Nyquist along one axis).
    pub fn xi_max(&self) -> f64 {
        std::f64::consts::PI * self.points() as f64 / self.length()
    }

    /// In-place spectral transform. `Forward` divides by `N^d`.
    pub fn transform(&self, buf: &mut [Complex64], direction: Direction) {
        assert_eq!(buf.len(), self.len(), "buffer does not match grid");
        let plan = match direction {
            Direction::Forward => &self.inner.forward,
            Direction::Inverse => &self.inner.inverse,
        };
        let n = self.points();
        let dim = self.dim();
        // last axis is contiguous
        plan.process(buf);
        if dim > 1 {
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            for axis in 0..dim - 1 {
                let stride = n.pow((dim - 1 - axis) as u32);
                let block = stride * n;
                for start in (0..buf.len()).step_by(block) {
                    for offset in 0..stride {
                        let base = start + offset;
                        for (i, v) in line.iter_mut().enumerate() {
                            *v = buf[base + i * stride];
                        }
                        plan.process(&mut line);
                        for (i, v) in line.iter().enumerate() {
                            buf[base + i * stride] = *v;
                        }
                    }
                }
            }
        }
        if direction == Direction::Forward {
            let scale = 1.0 / self.len() as f64;
            for v in buf.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Coefficients of real grid values.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, Direction::Forward);
        buf
    }

    /// Real part of the grid values of a coefficient array.
    pub fn inverse_real(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.transform(&mut buf, Direction::Inverse);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Index of the spectral slot holding `-k`.
    pub fn negated_slot(&self, flat: usize) -> usize {
        let n = self.points();
        let mut idx = [0usize; 3];
        self.unflatten(flat, &mut idx[..self.dim()]);
        for i in idx[..self.dim()].iter_mut() {
            *i = (n - *i) % n;
        }
        self.flatten(&idx[..self.dim()])
    }
}

/// Largest deviation from `c_{-k} = conj(c_k)`.
pub fn hermitian_defect(grid: &TorusGrid, coeffs: &[Complex64]) -> f64 {
    (0..coeffs.len()).map(|k| (coeffs[grid.negated_slot(k)] - coeffs[k].conj()).norm()).fold(0.0, f64::max)
}

/// Real scalar field on a torus grid with a lazily cached spectrum.
#[derive(Clone)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField").field("grid", &self.grid).field("len", &self.values.len()).finish()
    }
}

impl ScalarField {
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::SizeMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(ScalarField { grid: grid.clone(), values, spectrum: OnceLock::new() })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        ScalarField { grid: grid.clone(), values: vec![0.0; grid.len()], spectrum: OnceLock::new() }
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        ScalarField { grid: grid.clone(), values: vec![value; grid.len()], spectrum: OnceLock::new() }
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = [0.0; 3];
        let values = (0..grid.len())
            .map(|j| {
                grid.position(j, &mut x);
                f(&x[..grid.dim()])
            })
            .collect();
        ScalarField { grid: grid.clone(), values, spectrum: OnceLock::new() }
    }

    /// Builds a field from coefficients; imaginary residue is discarded.
    pub fn from_spectrum(grid: &TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::SizeMismatch { expected: grid.len(), got: coeffs.len() });
        }
        let values = grid.inverse_real(&coeffs);
        Ok(ScalarField { grid: grid.clone(), values, spectrum: OnceLock::new() })
    }

    /// Builds a field from coefficients known to be Hermitian and keeps
    /// them as the cached spectrum.
    pub(crate) fn from_hermitian_spectrum(grid: &TorusGrid, coeffs: Vec<Complex64>) -> Self {
        let values = grid.inverse_real(&coeffs);
        let spectrum = OnceLock::new();
        let _ = spectrum.set(coeffs);
        ScalarField { grid: grid.clone(), values, spectrum }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; drops the cached spectrum.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.spectrum = OnceLock::new();
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Spectral coefficients `c_k`, computed on first use.
    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| self.grid.forward_real(&self.values))
    }

    pub fn has_cached_spectrum(&self) -> bool {
        self.spectrum.get().is_some()
    }

    /// Forward fills the spectrum cache; Inverse re-synthesizes the values
    /// from the cached (or freshly computed) spectrum.
    pub fn transform(mut self, direction: Direction) -> Self {
        match direction {
            Direction::Forward => {
                self.spectrum();
                self
            }
            Direction::Inverse => {
                let coeffs = self.spectrum().to_vec();
                self.values = self.grid.inverse_real(&coeffs);
                self
            }
        }
    }

    /// `int f dx` (trapezoid rule, exact for the periodic interpolant).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(L^d sum_k w(xi_k)^{2 alpha} |c_k|^2)^{1/2}`.
    pub fn sobolev_norm(&self, alpha: f64, flavor: SobolevFlavor) -> f64 {
        let coeffs = self.spectrum();
        let xi2 = self.grid.xi_squared();
        let mut acc = 0.0;
        for (c, &k2) in coeffs.iter().zip(&xi2) {
            let weight = match flavor {
                SobolevFlavor::Inhomogeneous => (1.0 + k2).powf(alpha),
                SobolevFlavor::Homogeneous => {
                    if k2 == 0.0 {
                        if alpha == 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        k2.powf(alpha)
                    }
                }
            };
            acc += weight * c.norm_sqr();
        }
        (self.grid.volume() * acc).sqrt()
    }

    /// Exact heat flow: `c_k -> exp(-D |xi_k|^2 t) c_k`.
    pub fn heat_propagate(&self, diffusivity: f64, t: f64) -> Result<ScalarField> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        if !(diffusivity > 0.0) {
            return Err(Error::DomainError(format!("diffusivity must be positive, got {diffusivity}")));
        }
        let xi2 = self.grid.xi_squared();
        let coeffs: Vec<Complex64> =
            self.spectrum().iter().zip(&xi2).map(|(c, k2)| c * (-diffusivity * k2 * t).exp()).collect();
        Ok(ScalarField::from_hermitian_spectrum(&self.grid, coeffs))
    }

    /// Spectral gradient.
    pub fn gradient(&self) -> VectorField {
        let grid = &self.grid;
        let coeffs = self.spectrum();
        let mut xi = [0.0; 3];
        let components = (0..grid.dim())
            .map(|a| {
                let d: Vec<Complex64> = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        grid.wavevector(k, &mut xi);
                        c * Complex64::new(0.0, xi[a])
                    })
                    .collect();
                grid.inverse_real(&d)
            })
            .collect();
        VectorField { grid: grid.clone(), components }
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self) -> ScalarField {
        let xi2 = self.grid.xi_squared();
        let coeffs: Vec<Complex64> = self.spectrum().iter().zip(&xi2).map(|(c, k2)| -c * *k2).collect();
        ScalarField::from_hermitian_spectrum(&self.grid, coeffs)
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        ScalarField::new(&self.grid, values)
    }

    pub fn scaled(&self, a: f64) -> ScalarField {
        ScalarField::new(&self.grid, self.values.iter().map(|v| a * v).collect()).expect("same grid")
    }

    /// Projection onto the modes kept by the 2/3 rule.
    pub fn dealiased(&self) -> ScalarField {
        let mask = self.grid.dealias_mask();
        let coeffs: Vec<Complex64> = self
            .spectrum()
            .iter()
            .zip(&mask)
            .map(|(c, &keep)| if keep { *c } else { Complex64::new(0.0, 0.0) })
            .collect();
        ScalarField::from_hermitian_spectrum(&self.grid, coeffs)
    }
}

/// Real vector field with `d` components on a torus grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: TorusGrid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: &TorusGrid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::SizeMismatch { expected: grid.dim(), got: components.len() });
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::SizeMismatch { expected: grid.len(), got: c.len() });
            }
        }
        Ok(VectorField { grid: grid.clone(), components })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        VectorField { grid: grid.clone(), components: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn component(&self, a: usize) -> &[f64] {
        &self.components[a]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spectral divergence.
    pub fn divergence(&self) -> ScalarField {
        let grid = &self.grid;
        let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut xi = [0.0; 3];
        for (a, comp) in self.components.iter().enumerate() {
            let c = grid.forward_real(comp);
            for (k, v) in c.iter().enumerate() {
                grid.wavevector(k, &mut xi);
                acc[k] += v * Complex64::new(0.0, xi[a]);
            }
        }
        ScalarField::from_hermitian_spectrum(grid, acc)
    }
}

/// Spec of the diffusively rescaled environment `Q^n(x) = Q(n x)`.
///
/// Simulating with the rescaled spec and initial data `phi` yields
/// `theta_n` directly, without rescaling the grid.
pub fn make_rescaled_spec(spec: &CovarianceSpec, n: u32) -> Result<CovarianceSpec> {
    spec.rescaled(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid1(n: usize, l: f64) -> TorusGrid {
        TorusGrid::new(1, n, l).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::new(1, 100, 1.0).is_err());
        assert!(TorusGrid::new(1, 64, -1.0).is_err());
        assert!(TorusGrid::new(0, 64, 1.0).is_err());
    }

    #[test]
    fn constant_field_has_only_zero_mode() {
        let g = grid1(32, 3.0);
        let f = ScalarField::constant(&g, 1.0);
        let c = f.spectrum();
        assert!((c[0].re - 1.0).abs() < 1e-15);
        assert!(c[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn cosine_splits_into_two_modes() {
        let l = 5.0;
        let g = grid1(64, l);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0] / l).cos());
        let c = f.spectrum();
        assert!((c[1] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((c[63] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        let rest: f64 = c.iter().enumerate().filter(|(k, _)| ![1, 63].contains(k)).map(|(_, v)| v.norm()).sum();
        assert!(rest < 1e-13);
    }

    #[test]
    fn roundtrip_and_parseval_2d() {
        let g = TorusGrid::new(2, 16, 2.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() * (x[1] * x[1]).cos() + 0.3 * x[0]);
        let back = f.clone().transform(Direction::Forward).transform(Direction::Inverse);
        let err = f.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12 * f.sup_norm());
        // direct summation of both sides
        let lhs: f64 = f.values().iter().map(|v| v * v).sum::<f64>() * g.cell_volume();
        let rhs: f64 = g.volume() * f.spectrum().iter().map(|c| c.norm_sqr()).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12 * lhs);
        assert!(hermitian_defect(&g, f.spectrum()) < 1e-14);
    }

    #[test]
    fn sobolev_single_mode_by_hand() {
        let g = grid1(64, 2.0 * PI);
        let f = ScalarField::from_fn(&g, |x| x[0].cos());
        let n = f.sobolev_norm(-1.0, SobolevFlavor::Inhomogeneous);
        assert!((n - (PI / 2.0).sqrt()).abs() < 1e-12);
        let l2 = f.sobolev_norm(0.0, SobolevFlavor::Inhomogeneous);
        assert!((l2 - f.l2_norm()).abs() < 1e-12);
        assert_eq!(ScalarField::zeros(&g).sobolev_norm(-0.75, SobolevFlavor::Homogeneous), 0.0);
    }

    #[test]
    fn sobolev_monotone_on_high_modes() {
        let g = grid1(64, 2.0 * PI);
        let f = ScalarField::from_fn(&g, |x| (5.0 * x[0]).sin() + (9.0 * x[0]).cos());
        let norms: Vec<f64> =
            [-2.0, -1.0, -0.5, 0.0, 0.5].iter().map(|&a| f.sobolev_norm(a, SobolevFlavor::Inhomogeneous)).collect();
        assert!(norms.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn homogeneous_drops_zero_mode_for_negative_alpha() {
        let g = grid1(32, 2.0 * PI);
        let f = ScalarField::from_fn(&g, |x| 1.0 + x[0].cos());
        let h = f.sobolev_norm(-1.0, SobolevFlavor::Homogeneous);
        assert!((h - (PI / 1.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heat_on_single_mode_and_mass() {
        let l = 2.0 * PI;
        let g = grid1(64, l);
        let f = ScalarField::from_fn(&g, |x| 2.0 + (3.0 * x[0]).sin());
        let h = f.heat_propagate(0.7, 0.4).unwrap();
        let decay = (-0.7 * 9.0 * 0.4f64).exp();
        for (j, v) in h.values().iter().enumerate() {
            let x = j as f64 * g.spacing();
            assert!((v - (2.0 + decay * (3.0 * x).sin())).abs() < 1e-12);
        }
        assert!((h.integral() - f.integral()).abs() < 1e-12);
        assert!(matches!(f.heat_propagate(1.0, -0.1), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn heat_matches_direct_convolution() {
        // narrow bump, D = 1, t = 0.1; oracle: direct sum against q_{2Dt}
        let (l, n) = (12.0, 512);
        let g = grid1(n, l);
        let c = l / 2.0;
        let bump = |x: f64| {
            let u = ((x - c) / 0.3).powi(2);
            if u < 1.0 {
                (1.0 - 1.0 / (1.0 - u)).exp()
            } else {
                0.0
            }
        };
        let f = ScalarField::from_fn(&g, |x| bump(x[0]));
        let (d, t) = (1.0, 0.1);
        let h = f.heat_propagate(d, t).unwrap();
        let var = 2.0 * d * t;
        let dx = g.spacing();
        let mut max_rel: f64 = 0.0;
        let peak = h.sup_norm();
        for i in (0..n).step_by(7) {
            let x = i as f64 * dx;
            let mut acc = 0.0;
            for j in 0..n {
                let y = j as f64 * dx;
                let mut r = x - y;
                r -= l * (r / l).round();
                acc += (-r * r / (2.0 * var)).exp() / (2.0 * PI * var).sqrt() * f.values()[j] * dx;
            }
            if acc > 1e-3 * peak {
                max_rel = max_rel.max((acc - h.values()[i]).abs() / acc);
            }
        }
        assert!(max_rel < 1e-6, "max rel err {max_rel}");
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let g = TorusGrid::new(2, 32, 2.0 * PI).unwrap();
        let f = ScalarField::from_fn(&g, |x| (x[0]).sin() * (2.0 * x[1]).cos());
        let a = f.gradient().divergence();
        let b = f.laplacian();
        let err = a.values().iter().zip(b.values()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn dealias_cutoff_keeps_triple_products_exact() {
        let g = grid1(256, 1.0);
        assert_eq!(g.dealias_cutoff(), 85);
        assert!(3 * g.dealias_cutoff() < 256);
        assert_eq!(g.dealias_mask().iter().filter(|&&b| b).count(), 171);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn heat_semigroup(s in 0.0f64..0.5, t in 0.0f64..0.5, seed in 0u64..1000) {
                let g = TorusGrid::new(1, 64, 7.0).unwrap();
                let f = ScalarField::from_fn(&g, |x| ((seed as f64 + 1.0) * x[0]).sin().powi(3) + 0.2);
                let a = f.heat_propagate(0.8, s + t).unwrap();
                let b = f.heat_propagate(0.8, s).unwrap().heat_propagate(0.8, t).unwrap();
                let err = a.values().iter().zip(b.values()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                prop_assert!(err < 1e-12);
            }

            #[test]
            fn real_fields_have_hermitian_spectra(vals in proptest::collection::vec(-5.0f64..5.0, 64)) {
                let g = TorusGrid::new(2, 8, 1.5).unwrap();
                let f = ScalarField::new(&g, vals).unwrap();
                prop_assert!(hermitian_defect(&g, f.spectrum()) < 1e-13);
                let h = f.heat_propagate(0.3, 0.01).unwrap();
                prop_assert!(hermitian_defect(&g, h.spectrum()) < 1e-13);
            }
        }
    }
}
