//! Noise covariance models.
//!
//! Two families are supported:
//!
//! * **Incompressible**: `Q^(xi) = g(|xi|) (I - xi xi^T / |xi|^2)` with a radial
//!   spectral density `g` (power law `g0 <xi>^{-(d+zeta)}` or a tabulated
//!   profile). At `xi = 0` the projector is replaced by its angular average
//!   `(1 - 1/d) I`.
//! * **Compressible**: `Q(x) = amp * rho(|x| / R) * I`, smooth and supported in
//!   `|x| < R`. The default profile `rho` is the normalized self-convolution
//!   of a bump of radius `R/2`, whose transform is `|b^|^2 >= 0`. The plain
//!   bump `exp(1 - 1/(1 - r^2))` is kept for reference; it is *not* a valid
//!   covariance (its transform has negative lobes) and `validate` rejects it.
//!
//! Fourier convention: `f^(xi) = (2 pi)^{-d/2} int exp(-i xi.x) f(x) dx`. On a
//! torus of side `L` the periodized covariance has coefficients
//! `q_k = (2 pi)^{d/2} L^{-d} Q^(xi_k)`.
//!
//! Every spec carries a `scale` factor `n` so that the rescaled environment
//! `Q^n(x) = Q(n x)` is represented without touching the base parameters.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{Direction, TorusGrid};

/// Radial spectral density of an incompressible environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum RadialSpectrum {
    /// `g(r) = g0 (1 + r^2)^{-(d + zeta)/2}`.
    PowerLaw { g0: f64, zeta: f64 },
    /// Piecewise-linear `g` through `(radii[i], values[i])`, zero past the
    /// last radius.
    Table { radii: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressibleProfile {
    ConvolvedBump,
    Bump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovarianceModel {
    Incompressible(RadialSpectrum),
    Compressible { amp: f64, radius: f64, profile: CompressibleProfile },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Incompressible,
    Compressible,
}

/// A two-point profile `w(z)`.
pub type Profile<'a> = &'a dyn Fn(&[f64]) -> f64;

/// Law of the noise: spatial dimension, model and rescaling factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub dim: usize,
    pub model: CovarianceModel,
    /// Rescaling `n` in `Q^n(x) = Q(n x)`; 1 for the base environment.
    pub scale: f64,
}

/// Result of [`CovarianceSpec::validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub nu: f64,
    /// Smallest sampled eigenvalue of `Q^` relative to the largest.
    pub psd_min_relative: f64,
    pub psd_samples: usize,
    /// `|Q(0) - 2 nu I| / (2 nu)` (max entry).
    pub isotropy_error: f64,
    /// `Some(true)` when `Q` vanishes outside its support radius (compressible).
    pub compact_support: Option<bool>,
}

const PSD_TOL: f64 = 1e-10;

impl CovarianceSpec {
    pub fn incompressible(dim: usize, g0: f64, zeta: f64) -> Self {
        CovarianceSpec {
            dim,
            model: CovarianceModel::Incompressible(RadialSpectrum::PowerLaw { g0, zeta }),
            scale: 1.0,
        }
    }

    /// Compressible environment with the self-convolved bump profile.
    pub fn compressible(dim: usize, amp: f64, radius: f64) -> Self {
        CovarianceSpec {
            dim,
            model: CovarianceModel::Compressible { amp, radius, profile: CompressibleProfile::ConvolvedBump },
            scale: 1.0,
        }
    }

    pub fn with_profile(mut self, p: CompressibleProfile) -> Self {
        if let CovarianceModel::Compressible { profile, .. } = &mut self.model {
            *profile = p;
        }
        self
    }

    pub fn kind(&self) -> CovarianceKind {
        match self.model {
            CovarianceModel::Incompressible(_) => CovarianceKind::Incompressible,
            CovarianceModel::Compressible { .. } => CovarianceKind::Compressible,
        }
    }

    /// `true` when `Q` is identically zero.
    pub fn is_trivial(&self) -> bool {
        match &self.model {
            CovarianceModel::Compressible { amp, .. } => *amp == 0.0,
            CovarianceModel::Incompressible(RadialSpectrum::PowerLaw { g0, .. }) => *g0 == 0.0,
            CovarianceModel::Incompressible(RadialSpectrum::Table { values, .. }) => values.iter().all(|v| *v == 0.0),
        }
    }

    /// Support radius of the (rescaled) compressible covariance.
    pub fn support_radius(&self) -> Option<f64> {
        match self.model {
            CovarianceModel::Compressible { radius, .. } => Some(radius / self.scale),
            CovarianceModel::Incompressible(_) => None,
        }
    }

    /// Length below which the grid must place at least 8 nodes.
    pub fn correlation_length(&self) -> f64 {
        self.support_radius().unwrap_or(1.0 / self.scale)
    }

    /// Spec of `Q^n(x) = Q(n x)`.
    pub fn rescaled(&self, n: u32) -> Result<CovarianceSpec> {
        if n == 0 {
            return Err(Error::InvalidParameter("rescaling factor must be >= 1".into()));
        }
        Ok(CovarianceSpec { scale: self.scale * n as f64, ..self.clone() })
    }

    fn check_parameters(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 3 {
            return Err(Error::DimensionError(format!("dimension {} not in 1..=3", self.dim)));
        }
        if !(self.scale >= 1.0) {
            return Err(Error::InvalidParameter(format!("scale must be >= 1, got {}", self.scale)));
        }
        match &self.model {
            CovarianceModel::Incompressible(spectrum) => {
                if self.dim == 1 {
                    return Err(Error::DimensionError(
                        "incompressible noise needs d >= 2 (divergence-free fields in d = 1 are constant)".into(),
                    ));
                }
                match spectrum {
                    RadialSpectrum::PowerLaw { g0, zeta } => {
                        if !(*g0 >= 0.0) {
                            return Err(Error::InvalidParameter(format!("g0 must be >= 0, got {g0}")));
                        }
                        if !(*zeta > 0.0 && *zeta < 2.0) {
                            return Err(Error::InvalidParameter(format!("zeta must lie in (0, 2), got {zeta}")));
                        }
                    }
                    RadialSpectrum::Table { radii, values } => {
                        if radii.len() != values.len() || radii.len() < 2 {
                            return Err(Error::InvalidParameter("g table needs >= 2 matching radii/values".into()));
                        }
                        if radii[0] != 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                            return Err(Error::InvalidParameter("g table radii must start at 0 and increase".into()));
                        }
                    }
                }
            }
            CovarianceModel::Compressible { amp, radius, .. } => {
                if !(*amp >= 0.0) {
                    return Err(Error::InvalidParameter(format!("amp must be >= 0, got {amp}")));
                }
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParameter(format!("radius must be > 0, got {radius}")));
                }
            }
        }
        Ok(())
    }

    /// Base (unscaled) radial density.
    fn g_base(&self, r: f64) -> f64 {
        match &self.model {
            CovarianceModel::Incompressible(RadialSpectrum::PowerLaw { g0, zeta }) => {
                g0 * (1.0 + r * r).powf(-(self.dim as f64 + zeta) / 2.0)
            }
            CovarianceModel::Incompressible(RadialSpectrum::Table { radii, values }) => {
                if r >= *radii.last().unwrap() {
                    return 0.0;
                }
                let i = radii.partition_point(|&x| x <= r) - 1;
                let t = (r - radii[i]) / (radii[i + 1] - radii[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
            CovarianceModel::Compressible { .. } => f64::NAN,
        }
    }

    /// Radial density of the rescaled environment, `n^{-d} g(r / n)`.
    pub fn g(&self, r: f64) -> f64 {
        self.scale.powi(-(self.dim as i32)) * self.g_base(r / self.scale)
    }

    /// `int_{R^d} g(|xi|) d xi` (independent of the rescaling).
    fn g_integral(&self) -> f64 {
        let d = self.dim as f64;
        let sphere = 2.0 * PI.powf(d / 2.0) / gamma(d / 2.0);
        match &self.model {
            CovarianceModel::Incompressible(RadialSpectrum::PowerLaw { g0, zeta }) => {
                sphere * g0 * 0.5 * beta(d / 2.0, zeta / 2.0)
            }
            CovarianceModel::Incompressible(RadialSpectrum::Table { radii, .. }) => {
                let rmax = *radii.last().unwrap();
                let m = 20_000;
                let h = rmax / m as f64;
                let s: f64 = (0..=m)
                    .map(|i| {
                        let r = i as f64 * h;
                        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                        w * self.g_base(r) * r.powf(d - 1.0)
                    })
                    .sum();
                sphere * s * h
            }
            CovarianceModel::Compressible { .. } => f64::NAN,
        }
    }

    /// `nu` with `Q(0) = 2 nu I`.
    pub fn nu(&self) -> f64 {
        match &self.model {
            CovarianceModel::Compressible { amp, .. } => amp / 2.0,
            CovarianceModel::Incompressible(_) => {
                let d = self.dim as f64;
                (2.0 * PI).powf(-d / 2.0) * (1.0 - 1.0 / d) * self.g_integral() / 2.0
            }
        }
    }

    /// Continuum `Q^(xi)` for incompressible specs.
    ///
    /// Compressible transforms are only available on a working grid, see
    /// [`GridCovariance::q_hat`].
    pub fn q_hat(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        self.check_parameters()?;
        if xi.len() != self.dim {
            return Err(Error::SizeMismatch { expected: self.dim, got: xi.len() });
        }
        match self.model {
            CovarianceModel::Incompressible(_) => Ok(incompressible_block(self, xi)),
            CovarianceModel::Compressible { .. } => Err(Error::UnsupportedEvaluation(
                "compressible Q^ is computed on the working grid (GridCovariance::q_hat)".into(),
            )),
        }
    }

    /// Real-space `Q(x)` for compressible specs.
    pub fn q_real(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_parameters()?;
        if x.len() != self.dim {
            return Err(Error::SizeMismatch { expected: self.dim, got: x.len() });
        }
        match self.model {
            CovarianceModel::Compressible { .. } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok(DMatrix::identity(self.dim, self.dim) * self.q_scalar(r))
            }
            CovarianceModel::Incompressible(_) => Err(Error::UnsupportedEvaluation(
                "incompressible Q is only available at grid nodes (GridCovariance::q_real)".into(),
            )),
        }
    }

    /// Scalar profile of a compressible covariance at distance `r`.
    pub fn q_scalar(&self, r: f64) -> f64 {
        match self.model {
            CovarianceModel::Compressible { amp, radius, profile } => {
                let u = r * self.scale / radius;
                if u >= 1.0 {
                    return 0.0;
                }
                amp * match profile {
                    CompressibleProfile::Bump => (1.0 - 1.0 / (1.0 - u * u)).exp(),
                    CompressibleProfile::ConvolvedBump => convolved_bump(self.dim, u),
                }
            }
            CovarianceModel::Incompressible(_) => f64::NAN,
        }
    }

    /// Checks the spec and extracts `nu`.
    pub fn validate(&self) -> Result<ValidationReport> {
        self.check_parameters()?;
        let nu = self.nu();
        match &self.model {
            CovarianceModel::Incompressible(_) => {
                let d = self.dim;
                let directions = sphere_directions(d, 64);
                let mut min_rel = f64::INFINITY;
                let mut count = 0;
                let mut gmax: f64 = 0.0;
                let mut mats = Vec::new();
                for i in 0..=48 {
                    let r = if i == 0 { 0.0 } else { 10f64.powf(-3.0 + 6.0 * i as f64 / 48.0) * self.scale };
                    for dir in &directions {
                        let xi: Vec<f64> = dir.iter().map(|v| v * r).collect();
                        let m = incompressible_block(self, &xi);
                        gmax = gmax.max(self.g(r));
                        mats.push((r, m));
                        count += 1;
                    }
                }
                for (r, m) in &mats {
                    let lo = min_eigenvalue(m);
                    let rel = if gmax > 0.0 { lo / gmax } else { 0.0 };
                    if rel < -PSD_TOL {
                        return Err(Error::NonPositiveSpectrum { eigenvalue: lo, xi_norm: *r });
                    }
                    min_rel = min_rel.min(rel);
                }
                // Q(0) by angular quadrature of the projector
                let mut q0 = DMatrix::<f64>::zeros(d, d);
                for dir in &directions {
                    let w = DMatrix::from_fn(d, d, |a, b| if a == b { 1.0 } else { 0.0 } - dir[a] * dir[b]);
                    q0 += w;
                }
                q0 /= directions.len() as f64;
                q0 *= (2.0 * PI).powf(-(d as f64) / 2.0) * self.g_integral();
                let iso = isotropy_error(&q0, nu);
                Ok(ValidationReport {
                    nu,
                    psd_min_relative: min_rel,
                    psd_samples: count,
                    isotropy_error: iso,
                    compact_support: None,
                })
            }
            CovarianceModel::Compressible { amp, .. } => {
                let radius = self.support_radius().unwrap();
                let per_radius: usize = if self.dim == 1 { 32 } else { 16 };
                let points = (4 * per_radius).next_power_of_two();
                let grid = TorusGrid::new(self.dim, points, 4.0 * radius)?;
                let gc = GridCovariance::build(self, &grid, false)?;
                let q0 = self.q_real(&vec![0.0; self.dim])?;
                let iso = if *amp > 0.0 { isotropy_error(&q0, nu) } else { 0.0 };
                let mut outside = vec![0.0; self.dim];
                outside[0] = radius * (1.0 + 1e-12);
                let far: Vec<f64> = vec![1.5 * radius / (self.dim as f64).sqrt(); self.dim];
                let compact = self.q_real(&outside)?.amax() == 0.0 && self.q_real(&far)?.amax() == 0.0;
                Ok(ValidationReport {
                    nu,
                    psd_min_relative: gc.min_relative_eigenvalue,
                    psd_samples: grid.len(),
                    isotropy_error: iso,
                    compact_support: Some(compact),
                })
            }
        }
    }

    /// `V_eff^2`.
    ///
    /// Incompressible: `(2 pi)^{d/2} g(0) (1 - 1/d) I`. Compressible:
    /// `int w(z) Q(z) dz` by tensor trapezoid quadrature over the support;
    /// `w` is the spatial covariance of the stationary corrector.
    pub fn veff_sq(&self, w: Option<Profile<'_>>) -> Result<DMatrix<f64>> {
        self.check_parameters()?;
        let d = self.dim;
        match &self.model {
            CovarianceModel::Incompressible(_) => {
                let c = (2.0 * PI).powf(d as f64 / 2.0) * self.g(0.0) * (1.0 - 1.0 / d as f64);
                Ok(DMatrix::identity(d, d) * c)
            }
            CovarianceModel::Compressible { .. } => {
                let w = w.ok_or(Error::MissingProfile)?;
                let radius = self.support_radius().unwrap();
                let m: usize = match d {
                    1 => 4000,
                    2 => 400,
                    _ => 80,
                };
                let h = 2.0 * radius / m as f64;
                let mut acc = 0.0;
                let mut idx = vec![0usize; d];
                let mut z = vec![0.0; d];
                let total = (m + 1).pow(d as u32);
                for flat in 0..total {
                    let mut f = flat;
                    for a in (0..d).rev() {
                        idx[a] = f % (m + 1);
                        f /= m + 1;
                    }
                    let mut weight = 1.0;
                    for a in 0..d {
                        z[a] = -radius + idx[a] as f64 * h;
                        if idx[a] == 0 || idx[a] == m {
                            weight *= 0.5;
                        }
                    }
                    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r >= radius {
                        continue;
                    }
                    acc += weight * w(&z) * self.q_scalar(r);
                }
                let v = DMatrix::identity(d, d) * (acc * h.powi(d as i32));
                let lo = min_eigenvalue(&v);
                if lo < -PSD_TOL * v.amax().max(1e-300) {
                    return Err(Error::NotPsd(lo));
                }
                Ok(v)
            }
        }
    }

    /// Closed-form spatial covariance of the stationary corrector in `d = 1`.
    pub fn stationary_w_1d(&self, kappa: f64) -> Result<StationaryProfile> {
        if self.dim != 1 || self.kind() != CovarianceKind::Compressible {
            return Err(Error::DomainError("stationary_w_1d needs a compressible spec in d = 1".into()));
        }
        if !(kappa > 0.0) {
            return Err(Error::DomainError(format!("kappa must be positive, got {kappa}")));
        }
        self.check_parameters()?;
        Ok(StationaryProfile { spec: self.clone(), kappa, level: 1.0 })
    }
}

/// `w(z) = c / (2 (kappa + nu) - Q(z))` with `c = 2 (kappa + nu)` on the line
/// (so `w -> 1` at infinity), or `c` fixed by `int_0^L w = L` on a torus.
#[derive(Debug, Clone)]
pub struct StationaryProfile {
    spec: CovarianceSpec,
    kappa: f64,
    level: f64,
}

impl StationaryProfile {
    pub fn eval(&self, z: f64) -> f64 {
        let two_d = 2.0 * (self.kappa + self.spec.nu());
        self.level * two_d / (two_d - self.spec.q_scalar(z.abs()))
    }

    /// Profile of the stationary state on a torus of side `length`, where
    /// mass conservation forces the spatial average of `w` to be 1.
    pub fn torus_normalized(&self, length: f64) -> StationaryProfile {
        let m = 20_000;
        let h = length / m as f64;
        let base = StationaryProfile { level: 1.0, ..self.clone() };
        let avg: f64 = (0..m)
            .map(|i| {
                let mut z = i as f64 * h;
                if z > length / 2.0 {
                    z -= length;
                }
                base.eval(z)
            })
            .sum::<f64>()
            / m as f64;
        StationaryProfile { level: 1.0 / avg, ..base }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

fn isotropy_error(q0: &DMatrix<f64>, nu: f64) -> f64 {
    let d = q0.nrows();
    let target = DMatrix::<f64>::identity(d, d) * (2.0 * nu);
    if nu == 0.0 {
        return q0.amax();
    }
    (q0 - target).amax() / (2.0 * nu)
}

/// `g(|xi|) (I - xi xi^T/|xi|^2)`, angular average at the origin.
fn incompressible_block(spec: &CovarianceSpec, xi: &[f64]) -> DMatrix<f64> {
    let d = spec.dim;
    let r2: f64 = xi.iter().map(|v| v * v).sum();
    let g = spec.g(r2.sqrt());
    if r2 == 0.0 {
        return DMatrix::identity(d, d) * (g * (1.0 - 1.0 / d as f64));
    }
    DMatrix::from_fn(d, d, |a, b| g * (if a == b { 1.0 } else { 0.0 } - xi[a] * xi[b] / r2))
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Symmetric square root with negative eigenvalues clipped to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(0.0).sqrt());
    }
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let s = eig.eigenvalues.map(|v| if v > 1e-14 * top { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

fn sphere_directions(d: usize, m: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0]],
        2 => (0..m)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / m as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci lattice, symmetrized so the angular sum of x x^T is isotropic
            let golden = PI * (3.0 - 5f64.sqrt());
            let mut out = Vec::new();
            let k = m * 4;
            for i in 0..k {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / k as f64;
                let rho = (1.0 - z * z).sqrt();
                let a = golden * i as f64;
                let v = [rho * a.cos(), rho * a.sin(), z];
                for perm in [[0, 1, 2], [1, 2, 0], [2, 0, 1]] {
                    out.push(vec![v[perm[0]], v[perm[1]], v[perm[2]]]);
                }
            }
            out
        }
    }
}

fn unit_bump(r: f64) -> f64 {
    // radius 1/2
    let u = 4.0 * r * r;
    if u >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u)).exp()
    }
}

/// Normalized self-convolution of a radius-1/2 bump in `R^d`, at distance
/// `u` in `[0, 1)`; equals 1 at the origin.
fn convolved_bump(dim: usize, u: f64) -> f64 {
    if dim == 1 {
        static NORM: OnceLock<f64> = OnceLock::new();
        let norm = *NORM.get_or_init(|| autocorr_1d(0.0));
        return autocorr_1d(u) / norm;
    }
    static TABLES: [OnceLock<Vec<f64>>; 2] = [OnceLock::new(), OnceLock::new()];
    let table = TABLES[dim - 2].get_or_init(|| radial_autocorr_table(dim));
    let m = table.len() - 1;
    let h = 1.0 / m as f64;
    let s = u / h;
    let i = s.floor() as isize;
    let t = s - i as f64;
    let at = |j: isize| -> f64 {
        let j = j.unsigned_abs();
        if j > m {
            0.0
        } else {
            table[j]
        }
    };
    // Catmull-Rom; the profile is even in r so negative nodes reflect
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    let v = p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
    v.max(0.0)
}

/// `int b(y) b(u - y) dy` for the radius-1/2 bump, trapezoid over its
/// support (spectrally accurate for smooth compactly supported integrands).
fn autocorr_1d(u: f64) -> f64 {
    let m = 4096;
    let lo = (u - 0.5).max(-0.5);
    let hi = (u + 0.5).min(0.5);
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / m as f64;
    (1..m)
        .map(|i| {
            let y = lo + i as f64 * h;
            unit_bump(y) * unit_bump(u - y)
        })
        .sum::<f64>()
        * h
}

/// Radial autocorrelation on `r = j/M`, via the discrete autocorrelation of
/// the bump sampled on a fine periodic lattice.
fn radial_autocorr_table(dim: usize) -> Vec<f64> {
    let points = if dim == 2 { 512 } else { 128 };
    let grid = TorusGrid::new(dim, points, 2.0).expect("valid lattice");
    let mut buf: Vec<Complex64> = (0..grid.len())
        .map(|j| {
            let mut idx = [0usize; 3];
            grid.unflatten(j, &mut idx[..dim]);
            let r2: f64 = idx[..dim]
                .iter()
                .map(|&i| {
                    let k = grid.mode_number(i) as f64 * grid.spacing();
                    k * k
                })
                .sum();
            Complex64::new(unit_bump(r2.sqrt()), 0.0)
        })
        .collect();
    grid.transform(&mut buf, Direction::Forward);
    for c in buf.iter_mut() {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    grid.transform(&mut buf, Direction::Inverse);
    let zero = buf[0].re;
    let m = points / 2;
    let stride = points.pow(dim as u32 - 1);
    (0..=m).map(|j| if j == m { 0.0 } else { (buf[j * stride].re / zero).max(0.0) }).collect()
}

/// Covariance of the noise as seen by a torus grid.
///
/// Holds the per-mode covariance `q_k` of the spectral coefficients (per unit
/// time), its PSD square root, and the periodized real-space covariance at
/// every node.
#[derive(Debug, Clone)]
pub struct GridCovariance {
    spec: CovarianceSpec,
    grid: TorusGrid,
    modes: Vec<f64>,
    roots: Vec<f64>,
    real_space: Vec<f64>,
    min_relative_eigenvalue: f64,
    xi_rms: f64,
}

impl GridCovariance {
    /// Builds the grid covariance; fails if the grid does not resolve the
    /// correlation length with 8 nodes or the spectrum is not PSD.
    pub fn new(spec: &CovarianceSpec, grid: &TorusGrid) -> Result<Self> {
        GridCovariance::build(spec, grid, true)
    }

    fn build(spec: &CovarianceSpec, grid: &TorusGrid, check_resolution: bool) -> Result<Self> {
        spec.check_parameters()?;
        if grid.dim() != spec.dim {
            return Err(Error::DimensionError(format!("grid is {}-d but spec is {}-d", grid.dim(), spec.dim)));
        }
        let d = spec.dim;
        let dd = d * d;
        let ell = spec.correlation_length();
        if check_resolution && ell / grid.spacing() < 8.0 - 1e-9 {
            return Err(Error::GridResolutionError(format!(
                "correlation length {ell} spans {:.2} nodes, need >= 8",
                ell / grid.spacing()
            )));
        }
        let n = grid.len();
        let mut modes = vec![0.0; n * dd];
        match spec.model {
            CovarianceModel::Compressible { .. } => {
                let radius = spec.support_radius().unwrap();
                if 2.0 * radius >= grid.length() {
                    return Err(Error::GridResolutionError(format!(
                        "support diameter {} does not fit in box {}",
                        2.0 * radius,
                        grid.length()
                    )));
                }
                let l = grid.length();
                let mut x = [0.0; 3];
                let profile: Vec<f64> = (0..n)
                    .map(|j| {
                        grid.position(j, &mut x);
                        let r2: f64 = x[..d]
                            .iter()
                            .map(|&v| {
                                let w = v - l * (v / l).round();
                                w * w
                            })
                            .sum();
                        spec.q_scalar(r2.sqrt())
                    })
                    .collect();
                let coeffs = grid.forward_real(&profile);
                for (k, c) in coeffs.iter().enumerate() {
                    for a in 0..d {
                        modes[k * dd + a * d + a] = c.re;
                    }
                }
            }
            CovarianceModel::Incompressible(_) => {
                let factor = (2.0 * PI).powf(d as f64 / 2.0) / grid.volume();
                let mut xi = [0.0; 3];
                let mut idx = [0usize; 3];
                let nyquist = grid.points() / 2;
                for k in 0..n {
                    // a real field has no divergence-free Nyquist mode
                    grid.unflatten(k, &mut idx[..d]);
                    if idx[..d].contains(&nyquist) {
                        continue;
                    }
                    grid.wavevector(k, &mut xi);
                    let m = incompressible_block(spec, &xi[..d]);
                    for a in 0..d {
                        for b in 0..d {
                            modes[k * dd + a * d + b] = factor * m[(a, b)];
                        }
                    }
                }
            }
        }
        // PSD check and square roots
        let mut roots = vec![0.0; n * dd];
        let mut max_eig: f64 = 0.0;
        let mut min_eig = f64::INFINITY;
        let mut worst_slot = 0;
        let mut eigs = Vec::with_capacity(n);
        for k in 0..n {
            let m = DMatrix::from_row_slice(d, d, &modes[k * dd..(k + 1) * dd]);
            let lo = min_eigenvalue(&m);
            let hi = m.trace();
            max_eig = max_eig.max(hi);
            if lo < min_eig {
                min_eig = lo;
                worst_slot = k;
            }
            eigs.push(m);
        }
        let min_rel = if max_eig > 0.0 { min_eig / max_eig } else { 0.0 };
        if min_rel < -PSD_TOL * 100.0 {
            let mut xi = [0.0; 3];
            grid.wavevector(worst_slot, &mut xi);
            let xi_norm = xi[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::NonPositiveSpectrum { eigenvalue: min_eig, xi_norm });
        }
        let projector = spec.kind() == CovarianceKind::Incompressible;
        for (k, m) in eigs.iter().enumerate() {
            // q_k = c P with P an orthogonal projector, so its root is sqrt(c) P
            let s = if projector && k > 0 {
                let c = m.trace() / (d - 1) as f64;
                if c > 0.0 {
                    m / c.sqrt()
                } else {
                    m.clone()
                }
            } else {
                psd_sqrt(m)
            };
            for a in 0..d {
                for b in 0..d {
                    roots[k * dd + a * d + b] = s[(a, b)];
                }
            }
        }
        // periodized real-space covariance
        let mut real_space = vec![0.0; n * dd];
        for a in 0..d {
            for b in 0..d {
                let c: Vec<Complex64> = (0..n).map(|k| Complex64::new(modes[k * dd + a * d + b], 0.0)).collect();
                let v = grid.inverse_real(&c);
                for (j, val) in v.into_iter().enumerate() {
                    real_space[j * dd + a * d + b] = val;
                }
            }
        }
        let xi2 = grid.xi_squared();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..n {
            let tr: f64 = (0..d).map(|a| modes[k * dd + a * d + a]).sum::<f64>().max(0.0);
            num += xi2[k] * tr;
            den += tr;
        }
        let xi_rms = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        Ok(GridCovariance {
            spec: spec.clone(),
            grid: grid.clone(),
            modes,
            roots,
            real_space,
            min_relative_eigenvalue: min_rel,
            xi_rms,
        })
    }

    pub fn spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Per-mode coefficient covariance `q_k` (row-major `d x d`).
    pub fn mode_covariance(&self, slot: usize) -> &[f64] {
        let dd = self.spec.dim * self.spec.dim;
        &self.modes[slot * dd..(slot + 1) * dd]
    }

    /// PSD square root of `q_k`.
    pub fn mode_root(&self, slot: usize) -> &[f64] {
        let dd = self.spec.dim * self.spec.dim;
        &self.roots[slot * dd..(slot + 1) * dd]
    }

    /// Continuum-normalized `Q^(xi_k) = L^d (2 pi)^{-d/2} q_k`.
    pub fn q_hat(&self, slot: usize) -> DMatrix<f64> {
        let d = self.spec.dim;
        let f = self.grid.volume() / (2.0 * PI).powf(d as f64 / 2.0);
        DMatrix::from_row_slice(d, d, self.mode_covariance(slot)) * f
    }

    /// Periodized `Q(x_j)` at grid node `j`.
    pub fn q_real(&self, node: usize) -> DMatrix<f64> {
        let d = self.spec.dim;
        let dd = d * d;
        DMatrix::from_row_slice(d, d, &self.real_space[node * dd..(node + 1) * dd])
    }

    /// Periodized `Q_{ab}` at every node.
    pub fn real_component(&self, a: usize, b: usize) -> Vec<f64> {
        let d = self.spec.dim;
        (0..self.grid.len()).map(|j| self.real_space[j * d * d + a * d + b]).collect()
    }

    pub fn min_relative_eigenvalue(&self) -> f64 {
        self.min_relative_eigenvalue
    }

    /// RMS wavenumber of the noise, `(sum |xi|^2 tr q_k / sum tr q_k)^{1/2}`.
    pub fn xi_rms(&self) -> f64 {
        self.xi_rms
    }

    /// `nu` implied by the grid noise: `tr Q_per(0) / (2 d)`.
    pub fn nu_grid(&self) -> f64 {
        let d = self.spec.dim;
        (0..d).map(|a| self.real_space[a * d + a]).sum::<f64>() / (2.0 * d as f64)
    }
}
