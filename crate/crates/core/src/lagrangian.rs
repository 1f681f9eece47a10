//! Particles advected by the noise field: `dX = V dt + sqrt(2 kappa) dB`.
//!
//! Each step moves every particle by the increment field interpolated
//! (periodic multilinear) at its position plus an independent Gaussian
//! kick. Positions are kept wrapped into the box; displacements are tracked
//! unwrapped.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::noise::{NoiseIncrement, NoiseSampler};
use crate::parallel::map_replicas;
use crate::rng::{Purpose, StreamKey};
use crate::stats::{slope_through_origin, Running};

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    grid: TorusGrid,
    kappa: f64,
    key: StreamKey,
    step: u64,
    time: f64,
    positions: Vec<f64>,
    displacement: Vec<f64>,
}

impl ParticleEnsemble {
    /// Places `positions` (flattened `P x d`) on `grid`.
    pub fn at_positions(grid: &TorusGrid, positions: Vec<f64>, kappa: f64, key: StreamKey) -> Result<Self> {
        let d = grid.dim();
        if !positions.len().is_multiple_of(d) {
            return Err(Error::SizeMismatch { expected: d * (positions.len() / d + 1), got: positions.len() });
        }
        if !(kappa >= 0.0) {
            return Err(Error::DomainError(format!("kappa must be >= 0, got {kappa}")));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("particle positions must be finite".into()));
        }
        let l = grid.length();
        let positions: Vec<f64> = positions.into_iter().map(|x| x.rem_euclid(l)).collect();
        let displacement = vec![0.0; positions.len()];
        Ok(ParticleEnsemble {
            grid: grid.clone(),
            kappa,
            key: key.with_purpose(Purpose::Particles),
            step: 0,
            time: 0.0,
            positions,
            displacement,
        })
    }

    /// Draws `count` particles from the density `phi` (cell-wise inverse
    /// CDF, uniform within the cell centred on each node).
    pub fn from_density(phi: &ScalarField, count: usize, kappa: f64, key: StreamKey) -> Result<Self> {
        let grid = phi.grid();
        let v = phi.values();
        let top = phi.sup_norm();
        if v.iter().any(|&x| x < -1e-12 * top) {
            return Err(Error::NotADensity("negative values".into()));
        }
        let mass = phi.integral();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::NotADensity(format!("integral is {mass}")));
        }
        let mut cdf = Vec::with_capacity(v.len());
        let mut acc = 0.0;
        for &x in v {
            acc += x.max(0.0);
            cdf.push(acc);
        }
        let total = acc;
        let d = grid.dim();
        let dx = grid.spacing();
        let mut rng = key.with_purpose(Purpose::ParticleInit).rng(0);
        let mut idx = [0usize; 3];
        let mut positions = Vec::with_capacity(count * d);
        for _ in 0..count {
            let u: f64 = rng.gen::<f64>() * total;
            let j = cdf.partition_point(|&c| c <= u).min(v.len() - 1);
            grid.unflatten(j, &mut idx[..d]);
            for a in 0..d {
                positions.push((idx[a] as f64 + rng.gen::<f64>() - 0.5) * dx);
            }
        }
        ParticleEnsemble::at_positions(grid, positions, kappa, key)
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.grid.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, p: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.positions[p * d..(p + 1) * d]
    }

    /// Moves every particle by one step of `dw`.
    pub fn step(&mut self, dw: &NoiseIncrement) -> Result<()> {
        if dw.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let d = self.grid.dim();
        let field = dw.values();
        let kick = (2.0 * self.kappa * dw.dt()).sqrt();
        let mut rng = self.key.rng(self.step);
        let l = self.grid.length();
        for p in 0..self.len() {
            let mut drift = [0.0; 3];
            interpolate(&self.grid, field.components(), &self.positions[p * d..(p + 1) * d], &mut drift[..d]);
            for a in 0..d {
                let z: f64 = if kick > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                let dxa = drift[a] + kick * z;
                self.displacement[p * d + a] += dxa;
                self.positions[p * d + a] = (self.positions[p * d + a] + dxa).rem_euclid(l);
            }
        }
        self.step += 1;
        self.time += dw.dt();
        Ok(())
    }

    /// Particle average of `g` and its standard error.
    pub fn functional(&self, g: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let d = self.grid.dim();
        let r: Running = (0..self.len()).map(|p| g(&self.positions[p * d..(p + 1) * d])).collect();
        (r.mean(), r.stderr())
    }

    /// `|X_t - X_0|^2` for every particle (unwrapped).
    pub fn squared_displacements(&self) -> Vec<f64> {
        let d = self.grid.dim();
        self.displacement.chunks(d).map(|c| c.iter().map(|v| v * v).sum()).collect()
    }
}

/// Periodic multilinear interpolation of `components` at `x`.
pub fn interpolate(grid: &TorusGrid, components: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let n = grid.points();
    let dx = grid.spacing();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..d {
        let s = x[a] / dx;
        let f = s.floor();
        base[a] = (f as i64).rem_euclid(n as i64) as usize;
        frac[a] = s - f;
    }
    for o in out.iter_mut() {
        *o = 0.0;
    }
    let mut idx = [0usize; 3];
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        for a in 0..d {
            let up = (corner >> a) & 1;
            idx[a] = (base[a] + up) % n;
            w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w == 0.0 {
            continue;
        }
        let flat = grid.flatten(&idx[..d]);
        for (o, comp) in out.iter_mut().zip(components) {
            *o += w * comp[flat];
        }
    }
}

/// Quenched estimate `E_phi[g(X_t) | V]` from an ensemble.
pub fn quenched_functional(ens: &ParticleEnsemble, g: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    ens.functional(g)
}

/// Annealed mean squared displacement.
#[derive(Debug, Clone, Serialize)]
pub struct MsdReport {
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    /// Standard errors from replica-level cluster means.
    pub stderr: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub expected_slope: f64,
    pub samples: usize,
}

/// Runs `replicas` independent environments with `per_replica` particles
/// each, started evenly spaced along the first axis, and fits the slope of
/// the MSD through the origin.
#[allow(clippy::too_many_arguments)]
pub fn annealed_msd(
    spec: &CovarianceSpec,
    grid: &TorusGrid,
    kappa: f64,
    dt: f64,
    record_times: &[f64],
    replicas: u64,
    per_replica: usize,
    seed: u64,
) -> Result<MsdReport> {
    let sampler = NoiseSampler::new(spec, grid, dt)?;
    let steps: Vec<u64> = record_times.iter().map(|&t| crate::spde::steps_for(t, dt)).collect::<Result<_>>()?;
    let last = steps.iter().copied().max().ok_or(Error::EmptyTrajectory)?;
    let d = grid.dim();
    let l = grid.length();
    let per_rep: Vec<Vec<f64>> = map_replicas(replicas, |r| {
        let key = StreamKey::new(seed, r, Purpose::Noise);
        let mut positions = Vec::with_capacity(per_replica * d);
        for p in 0..per_replica {
            positions.push((p as f64 + 0.5) * l / per_replica as f64);
            positions.extend(std::iter::repeat_n(l / 2.0, d - 1));
        }
        let mut ens = ParticleEnsemble::at_positions(grid, positions, kappa, key)?;
        let mut out = Vec::with_capacity(steps.len());
        for m in 0..last {
            let dw = sampler.sample_keyed(key, m);
            ens.step(&dw).map_err(|e| e.in_replica(r, m))?;
            if steps.contains(&(m + 1)) {
                let sq = ens.squared_displacements();
                out.push(sq.iter().sum::<f64>() / sq.len() as f64);
            }
        }
        Ok(out)
    })?;
    let mut msd = Vec::new();
    let mut stderr = Vec::new();
    for k in 0..steps.len() {
        let r: Running = per_rep.iter().map(|v| v[k]).collect();
        msd.push(r.mean());
        stderr.push(r.stderr());
    }
    let (slope, slope_stderr) = slope_through_origin(record_times, &msd);
    let expected_slope = 2.0 * d as f64 * (kappa + spec.nu());
    Ok(MsdReport {
        times: record_times.to_vec(),
        msd,
        stderr,
        slope,
        slope_stderr,
        expected_slope,
        samples: replicas as usize * per_replica,
    })
}
