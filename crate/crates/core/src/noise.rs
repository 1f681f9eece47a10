//! One-step Gaussian noise increments.
//!
//! Each increment is drawn mode by mode: real white noise on the grid is
//! transformed, and every mode is multiplied by the PSD square root of the
//! per-mode covariance. The resulting real field has
//! `Cov(dW_a(x), dW_b(y)) = Q_ab(x - y) dt` with `Q` periodized on the torus.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::covariance::{CovarianceSpec, GridCovariance};
use crate::error::{Error, Result};
use crate::grid::{Direction, TorusGrid, VectorField};
use crate::rng::StreamKey;

/// Noise increment over one time step.
#[derive(Debug, Clone)]
pub struct NoiseIncrement {
    grid: TorusGrid,
    dt: f64,
    step: u64,
    coeffs: Vec<Vec<Complex64>>,
    values: OnceLock<VectorField>,
}

impl NoiseIncrement {
    /// Increment that is identically zero.
    pub fn zero(grid: &TorusGrid, dt: f64) -> Self {
        NoiseIncrement {
            grid: grid.clone(),
            dt,
            step: 0,
            coeffs: vec![vec![Complex64::new(0.0, 0.0); grid.len()]; grid.dim()],
            values: OnceLock::new(),
        }
    }

    /// Wraps an explicit real field, e.g. for deterministic tests.
    pub fn from_field(field: VectorField, dt: f64) -> Self {
        let grid = field.grid().clone();
        let coeffs = field.components().iter().map(|c| grid.forward_real(c)).collect();
        let values = OnceLock::new();
        let _ = values.set(field);
        NoiseIncrement { grid, dt, step: 0, coeffs, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Step index the increment was drawn for.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Spectral coefficients of component `a`.
    pub fn coefficients(&self, a: usize) -> &[Complex64] {
        &self.coeffs[a]
    }

    /// Real-space field (computed on first use).
    pub fn values(&self) -> &VectorField {
        self.values.get_or_init(|| {
            let comps = self.coeffs.iter().map(|c| self.grid.inverse_real(c)).collect();
            VectorField::new(&self.grid, comps).expect("consistent sizes")
        })
    }

    /// The increment with the sign flipped.
    pub fn negated(&self) -> NoiseIncrement {
        NoiseIncrement {
            grid: self.grid.clone(),
            dt: self.dt,
            step: self.step,
            coeffs: self.coeffs.iter().map(|c| c.iter().map(|v| -v).collect()).collect(),
            values: OnceLock::new(),
        }
    }
}

/// Sampler for a fixed `(spec, grid, dt)`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    cov: Arc<GridCovariance>,
    dt: f64,
    trivial: bool,
}

impl NoiseSampler {
    pub fn new(spec: &CovarianceSpec, grid: &TorusGrid, dt: f64) -> Result<Self> {
        NoiseSampler::from_covariance(Arc::new(GridCovariance::new(spec, grid)?), dt)
    }

    pub fn from_covariance(cov: Arc<GridCovariance>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::DegenerateDt(dt));
        }
        let trivial = cov.spec().is_trivial();
        Ok(NoiseSampler { cov, dt, trivial })
    }

    pub fn covariance(&self) -> &Arc<GridCovariance> {
        &self.cov
    }

    pub fn grid(&self) -> &TorusGrid {
        self.cov.grid()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Draws an increment from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseIncrement {
        let grid = self.cov.grid();
        let d = grid.dim();
        let n = grid.len();
        if self.trivial {
            return NoiseIncrement::zero(grid, self.dt);
        }
        // E|Z_k|^2 = N^-d after the normalized forward transform
        let white: Vec<Vec<Complex64>> = (0..d)
            .map(|_| {
                let mut buf: Vec<Complex64> =
                    (0..n).map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
                grid.transform(&mut buf, Direction::Forward);
                buf
            })
            .collect();
        let amp = (self.dt * n as f64).sqrt();
        let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); n]; d];
        for k in 0..n {
            let root = self.cov.mode_root(k);
            for a in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for b in 0..d {
                    acc += white[b][k] * root[a * d + b];
                }
                coeffs[a][k] = acc * amp;
            }
        }
        NoiseIncrement { grid: grid.clone(), dt: self.dt, step: 0, coeffs, values: OnceLock::new() }
    }

    /// Draws the increment for `step` from the stream `key`.
    pub fn sample_keyed(&self, key: StreamKey, step: u64) -> NoiseIncrement {
        let mut rng = key.rng(step);
        let mut inc = self.sample(&mut rng);
        inc.step = step;
        inc
    }
}

/// One-shot sampling from a spec.
pub fn sample_increment<R: Rng + ?Sized>(
    spec: &CovarianceSpec,
    grid: &TorusGrid,
    dt: f64,
    rng: &mut R,
) -> Result<NoiseIncrement> {
    Ok(NoiseSampler::new(spec, grid, dt)?.sample(rng))
}

/// Sample covariance with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct EmpiricalCov {
    pub cov: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub samples: usize,
}

/// `Cov(dW_a(x0), dW_b(x0 + lag))` over `samples`, with `x0` the origin node
/// and `lag` given in grid nodes per axis.
pub fn empirical_cov(samples: &[NoiseIncrement], lag: &[i64]) -> Result<EmpiricalCov> {
    if samples.len() < 100 {
        return Err(Error::TooFewSamples { needed: 100, got: samples.len() });
    }
    let grid = samples[0].grid().clone();
    if samples.iter().any(|s| *s.grid() != grid) {
        return Err(Error::GridMismatch);
    }
    let d = grid.dim();
    if lag.len() != d {
        return Err(Error::SizeMismatch { expected: d, got: lag.len() });
    }
    let n = grid.points() as i64;
    let idx: Vec<usize> = lag.iter().map(|&l| l.rem_euclid(n) as usize).collect();
    let node = grid.flatten(&idx);
    let m = samples.len();
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| (0..d).map(|a| s.values().component(a)[0]).collect()).collect();
    let ys: Vec<Vec<f64>> = samples.iter().map(|s| (0..d).map(|a| s.values().component(a)[node]).collect()).collect();
    let mut cov = DMatrix::zeros(d, d);
    let mut stderr = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let mx = xs.iter().map(|v| v[a]).sum::<f64>() / m as f64;
            let my = ys.iter().map(|v| v[b]).sum::<f64>() / m as f64;
            let prods: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (x[a] - mx) * (y[b] - my)).collect();
            let c = prods.iter().sum::<f64>() / (m as f64 - 1.0);
            let mean_p = prods.iter().sum::<f64>() / m as f64;
            let var_p = prods.iter().map(|p| (p - mean_p).powi(2)).sum::<f64>() / (m as f64 - 1.0);
            cov[(a, b)] = c;
            stderr[(a, b)] = (var_p / m as f64).sqrt();
        }
    }
    Ok(EmpiricalCov { cov, stderr, samples: m })
}
