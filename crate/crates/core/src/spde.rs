//! Pseudo-spectral solver for `d theta + div(theta V) dt = (kappa + nu) Lap theta dt`
//! in Itô form.
//!
//! One step of the mild exponential Euler scheme reads
//! `theta_{m+1} = E_dt theta_m - G_dt div(theta_m dW_m)` with the exact heat
//! multiplier `E_dt = exp(-(kappa + nu) |xi|^2 dt)` and
//! `G_dt = sqrt((1 - E_dt^2) / (2 (kappa + nu) |xi|^2 dt))`, the rms of the
//! heat semigroup over one step. With `G_dt` the second moments relax to
//! the exact translation-invariant stationary state. The product
//! `theta_m dW_m` is formed in physical space from band-limited factors and
//! its divergence is projected back onto the 2/3 band, so the state never
//! leaves the dealiased band.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::covariance::{CovarianceSpec, GridCovariance};
use crate::error::{Error, Result};
use crate::grid::{Direction, ScalarField, TorusGrid};
use crate::noise::{NoiseIncrement, NoiseSampler};
use crate::rng::StreamKey;

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mass: f64,
    pub l2: f64,
    pub min: f64,
    pub sup: f64,
}

impl Diagnostics {
    fn of(theta: &ScalarField) -> Self {
        let c0 = theta.spectrum()[0].re;
        Diagnostics { mass: c0 * theta.grid().volume(), l2: theta.l2_norm(), min: theta.min(), sup: theta.sup_norm() }
    }
}

/// Solution at one time level.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub theta: ScalarField,
    pub time: f64,
    pub step: u64,
    pub diagnostics: Diagnostics,
}

impl SolverState {
    /// Mass from the grid values (the diagnostic uses the zero mode).
    pub fn mass(&self) -> f64 {
        self.theta.integral()
    }
}

/// Recorded snapshots plus per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&ScalarField> {
        self.fields.last()
    }

    /// Largest relative mass change over any single step.
    pub fn max_step_mass_drift(&self) -> f64 {
        self.diagnostics
            .windows(2)
            .map(|w| (w[1].mass - w[0].mass).abs() / w[0].mass.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Time-stepper for one `(spec, grid, kappa, dt)`.
#[derive(Debug, Clone)]
pub struct Solver {
    sampler: NoiseSampler,
    kappa: f64,
    nu: f64,
    dt: f64,
    decay: Vec<f64>,
    smoothing: Vec<f64>,
    mask: Vec<bool>,
    wavevectors: Vec<Vec<f64>>,
    guard: f64,
}

impl Solver {
    pub fn new(spec: &CovarianceSpec, grid: &TorusGrid, kappa: f64, dt: f64) -> Result<Self> {
        let cov = Arc::new(GridCovariance::new(spec, grid)?);
        Solver::from_covariance(cov, kappa, dt)
    }

    pub fn from_covariance(cov: Arc<GridCovariance>, kappa: f64, dt: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::DomainError(format!("kappa must be positive, got {kappa}")));
        }
        let nu = cov.spec().nu();
        let grid = cov.grid().clone();
        let sampler = NoiseSampler::from_covariance(cov, dt)?;
        let xi2 = grid.xi_squared();
        let decay = xi2.iter().map(|k2| (-(kappa + nu) * k2 * dt).exp()).collect();
        let smoothing = xi2
            .iter()
            .map(|k2| {
                let z = 2.0 * (kappa + nu) * k2 * dt;
                if z < 1e-12 {
                    1.0
                } else {
                    (-(-z).exp_m1() / z).sqrt()
                }
            })
            .collect();
        let mut xi = [0.0; 3];
        let mut wavevectors = vec![vec![0.0; grid.len()]; grid.dim()];
        for k in 0..grid.len() {
            grid.wavevector(k, &mut xi);
            for a in 0..grid.dim() {
                wavevectors[a][k] = xi[a];
            }
        }
        Ok(Solver { sampler, kappa, nu, dt, decay, smoothing, mask: grid.dealias_mask(), wavevectors, guard: 1e8 })
    }

    /// Sets the sup-norm guard that triggers [`Error::BlowupDetected`].
    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn grid(&self) -> &TorusGrid {
        self.sampler.grid()
    }

    pub fn sampler(&self) -> &NoiseSampler {
        &self.sampler
    }

    pub fn covariance(&self) -> &Arc<GridCovariance> {
        self.sampler.covariance()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn diffusivity(&self) -> f64 {
        self.kappa + self.nu
    }

    /// Projects `phi` onto the dealiased band.
    pub fn initial_state(&self, phi: &ScalarField) -> Result<SolverState> {
        if phi.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        if phi.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("initial data is not finite".into()));
        }
        let theta = phi.dealiased();
        let diagnostics = Diagnostics::of(&theta);
        Ok(SolverState { theta, time: 0.0, step: 0, diagnostics })
    }

    /// Advances `state` by one step driven by `dw`.
    pub fn step(&self, state: &SolverState, dw: &NoiseIncrement) -> Result<SolverState> {
        let grid = self.grid();
        if dw.grid() != grid || state.theta.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if (dw.dt() - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::TimeMismatch(format!("increment dt {} differs from solver dt {}", dw.dt(), self.dt)));
        }
        let n = grid.len();
        let theta_hat = state.theta.spectrum();
        let theta = state.theta.values();
        let mut div = vec![Complex64::new(0.0, 0.0); n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for a in 0..grid.dim() {
            let c = dw.coefficients(a);
            for k in 0..n {
                buf[k] = if self.mask[k] { c[k] } else { Complex64::new(0.0, 0.0) };
            }
            grid.transform(&mut buf, Direction::Inverse);
            for (b, t) in buf.iter_mut().zip(theta) {
                *b = Complex64::new(b.re * t, 0.0);
            }
            grid.transform(&mut buf, Direction::Forward);
            let xi = &self.wavevectors[a];
            for k in 0..n {
                if self.mask[k] {
                    div[k] += Complex64::new(-xi[k] * buf[k].im, xi[k] * buf[k].re);
                }
            }
        }
        let coeffs: Vec<Complex64> =
            (0..n).map(|k| theta_hat[k] * self.decay[k] - div[k] * self.smoothing[k]).collect();
        let theta = ScalarField::from_hermitian_spectrum(grid, coeffs);
        let diagnostics = Diagnostics::of(&theta);
        let step = state.step + 1;
        if !diagnostics.sup.is_finite() || diagnostics.sup > self.guard {
            return Err(Error::BlowupDetected { step, sup_norm: diagnostics.sup, guard: self.guard });
        }
        Ok(SolverState { theta, time: step as f64 * self.dt, step, diagnostics })
    }

    /// Number of steps that reach `horizon` exactly.
    pub fn steps_for(&self, horizon: f64) -> Result<u64> {
        steps_for(horizon, self.dt)
    }

    /// Runs from `phi` to `horizon`, calling `observer` after every step with
    /// the new state and the increment that produced it.
    pub fn run_with<F>(&self, phi: &ScalarField, horizon: f64, key: StreamKey, mut observer: F) -> Result<SolverState>
    where
        F: FnMut(&SolverState, &NoiseIncrement) -> Result<()>,
    {
        let steps = self.steps_for(horizon)?;
        let mut state = self.initial_state(phi)?;
        for m in 0..steps {
            let dw = self.sampler.sample_keyed(key, m);
            state = self.step(&state, &dw).map_err(|e| e.in_replica(key.replica, m))?;
            observer(&state, &dw).map_err(|e| e.in_replica(key.replica, m))?;
        }
        Ok(state)
    }

    /// Runs from `phi` to `horizon` and records the fields at `record_times`
    /// (which must be multiples of `dt`).
    pub fn run(&self, phi: &ScalarField, horizon: f64, key: StreamKey, record_times: &[f64]) -> Result<Trajectory> {
        let record: Vec<u64> = record_times.iter().map(|&t| steps_for(t, self.dt)).collect::<Result<_>>()?;
        let steps = self.steps_for(horizon)?;
        if record.iter().any(|&s| s > steps) {
            return Err(Error::TimeMismatch("record time beyond horizon".into()));
        }
        let initial = self.initial_state(phi)?;
        let mut traj = Trajectory { times: Vec::new(), fields: Vec::new(), diagnostics: vec![initial.diagnostics] };
        let push = |state: &SolverState, traj: &mut Trajectory| {
            for (&s, &t) in record.iter().zip(record_times) {
                if s == state.step {
                    traj.times.push(t);
                    traj.fields.push(state.theta.clone());
                }
            }
        };
        push(&initial, &mut traj);
        let mut state = initial;
        for m in 0..steps {
            let dw = self.sampler.sample_keyed(key, m);
            state = self.step(&state, &dw).map_err(|e| e.in_replica(key.replica, m))?;
            traj.diagnostics.push(state.diagnostics);
            push(&state, &mut traj);
        }
        Ok(traj)
    }

    /// Approximates the stationary field: starts from `theta = 1` at time
    /// `-burn_in`, and records the field every `every` time units on
    /// `[0, observe]`.
    pub fn run_stationary(&self, burn_in: f64, observe: f64, every: f64, key: StreamKey) -> Result<Trajectory> {
        if burn_in < 0.0 || observe < 0.0 {
            return Err(Error::NegativeTime(burn_in.min(observe)));
        }
        let m0 = self.steps_for(burn_in)?;
        let m1 = self.steps_for(observe)?;
        let stride = steps_for(every, self.dt)?.max(1);
        let one = ScalarField::constant(self.grid(), 1.0);
        let mut state = self.initial_state(&one)?;
        let mut traj = Trajectory { times: Vec::new(), fields: Vec::new(), diagnostics: vec![state.diagnostics] };
        for m in 0..m0 + m1 {
            if m >= m0 && (m - m0) % stride == 0 {
                traj.times.push((m - m0) as f64 * self.dt);
                traj.fields.push(state.theta.clone());
            }
            let dw = self.sampler.sample_keyed(key, m);
            state = self.step(&state, &dw).map_err(|e| e.in_replica(key.replica, m))?;
            traj.diagnostics.push(state.diagnostics);
        }
        if m1 % stride == 0 {
            traj.times.push(m1 as f64 * self.dt);
            traj.fields.push(state.theta.clone());
        }
        Ok(traj)
    }
}

/// `round(t / dt)` if `t` is a multiple of `dt`.
pub fn steps_for(t: f64, dt: f64) -> Result<u64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if !(dt > 0.0) {
        return Err(Error::DegenerateDt(dt));
    }
    let m = (t / dt).round();
    if (m * dt - t).abs() > 1e-9 * t.max(dt) {
        return Err(Error::TimeMismatch(format!("{t} is not a multiple of dt = {dt}")));
    }
    Ok(m as u64)
}

/// Mean of the solution: heat flow at diffusivity `D`.
pub fn mean_heat(phi: &ScalarField, diffusivity: f64, t: f64) -> Result<ScalarField> {
    phi.heat_propagate(diffusivity, t)
}

/// Largest `dt` with `sqrt(2 nu dt) xi_rms <= 0.25`, `xi_rms` being the rms
/// wavenumber of the noise on the grid.
pub fn transport_dt_limit(cov: &GridCovariance) -> f64 {
    let nu = cov.spec().nu();
    let xi = cov.xi_rms();
    if nu == 0.0 || xi == 0.0 {
        return f64::INFINITY;
    }
    0.0625 / (2.0 * nu * xi * xi)
}

/// Fraction of `int |theta|` within `L/8` of the box boundary in any axis.
pub fn tail_mass(theta: &ScalarField) -> f64 {
    let grid = theta.grid();
    let l = grid.length();
    let mut x = [0.0; 3];
    let mut outer = 0.0;
    let mut total = 0.0;
    for (j, v) in theta.values().iter().enumerate() {
        grid.position(j, &mut x);
        let a = v.abs();
        total += a;
        if x[..grid.dim()].iter().any(|&c| c < l / 8.0 || c > 7.0 * l / 8.0) {
            outer += a;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        outer / total
    }
}

/// Normalized Gaussian density centred in the box.
pub fn gaussian_density(grid: &TorusGrid, sigma: f64) -> ScalarField {
    let c = grid.length() / 2.0;
    let d = grid.dim() as i32;
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(d as f64) / 2.0);
    ScalarField::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| (v - c).powi(2)).sum();
        norm * (-r2 / (2.0 * sigma * sigma)).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VectorField;
    use crate::parallel::map_replicas;
    use crate::rng::Purpose;
    use crate::stats::Running;

    fn setup(n: usize, l: f64, dt: f64) -> (Solver, ScalarField) {
        let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
        let grid = TorusGrid::new(1, n, l).unwrap();
        let solver = Solver::new(&spec, &grid, 0.5, dt).unwrap();
        let phi = gaussian_density(&grid, 0.5);
        (solver, phi)
    }

    #[test]
    fn zero_noise_step_is_heat_flow() {
        let (solver, phi) = setup(128, 16.0, 1e-2);
        let s0 = solver.initial_state(&phi).unwrap();
        let s1 = solver.step(&s0, &NoiseIncrement::zero(solver.grid(), 1e-2)).unwrap();
        let heat = mean_heat(&s0.theta, 1.0, 1e-2).unwrap();
        let err = s1.theta.axpby(1.0, &heat, -1.0).unwrap().sup_norm();
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn mass_is_conserved_each_step() {
        let (solver, phi) = setup(256, 16.0, 1e-3);
        let key = StreamKey::new(1, 0, Purpose::Noise);
        let traj = solver.run(&phi, 0.2, key, &[0.2]).unwrap();
        assert!(traj.max_step_mass_drift() < 1e-12);
        let m0 = traj.diagnostics[0].mass;
        assert!((traj.fields[0].integral() - m0).abs() < 1e-12 * m0);
    }

    #[test]
    fn antithetic_pair_averages_to_heat_flow() {
        let (solver, phi) = setup(128, 16.0, 1e-2);
        let s0 = solver.initial_state(&phi).unwrap();
        let dw = solver.sampler().sample_keyed(StreamKey::new(4, 0, Purpose::Noise), 0);
        let a = solver.step(&s0, &dw).unwrap();
        let b = solver.step(&s0, &dw.negated()).unwrap();
        let avg = a.theta.axpby(0.5, &b.theta, 0.5).unwrap();
        let heat = mean_heat(&s0.theta, 1.0, 1e-2).unwrap();
        assert!(avg.axpby(1.0, &heat, -1.0).unwrap().sup_norm() < 1e-13);
        assert!(a.theta.axpby(1.0, &heat, -1.0).unwrap().sup_norm() > 1e-3);
    }

    #[test]
    fn deterministic_given_seed() {
        let (solver, phi) = setup(128, 16.0, 1e-3);
        let key = StreamKey::new(77, 2, Purpose::Noise);
        let a = solver.run(&phi, 0.05, key, &[0.05]).unwrap();
        let b = solver.run(&phi, 0.05, key, &[0.05]).unwrap();
        assert_eq!(a.fields[0].values(), b.fields[0].values());
    }

    #[test]
    fn one_step_ito_isometry() {
        let dt = 1e-2;
        let (solver, phi) = setup(64, 8.0, dt);
        let grid = solver.grid().clone();
        let test = ScalarField::from_fn(&grid, |x| (-(x[0] - 4.3).powi(2) / 2.0).exp());
        let s0 = solver.initial_state(&phi).unwrap();
        let heat = mean_heat(&s0.theta, 1.0, dt).unwrap();
        let base = heat.inner(&test);
        let vals = map_replicas(10_000, |r| {
            let dw = solver.sampler().sample_keyed(StreamKey::new(9, r, Purpose::Noise), 0);
            Ok(solver.step(&s0, &dw)?.theta.inner(&test) - base)
        })
        .unwrap();
        let r: Running = vals.into_iter().collect();
        // f = theta0 * grad(E_dt test), Var = dt sum_x sum_y f(x) Q(x - y) f(y) dx^2
        let g = mean_heat(&test, 1.0, dt).unwrap().gradient();
        let f: Vec<f64> = s0.theta.values().iter().zip(g.component(0)).map(|(a, b)| a * b).collect();
        let q = solver.covariance().real_component(0, 0);
        let n = grid.len();
        let dx = grid.spacing();
        let mut var = 0.0;
        for i in 0..n {
            for j in 0..n {
                var += f[i] * q[(i + n - j) % n] * f[j];
            }
        }
        var *= dt * dx * dx;
        assert!((r.variance() / var - 1.0).abs() < 0.05, "{} vs {}", r.variance(), var);
    }

    #[test]
    fn zero_covariance_stationary_is_one() {
        let spec = CovarianceSpec::compressible(1, 0.0, 1.0);
        let grid = TorusGrid::new(1, 64, 8.0).unwrap();
        let solver = Solver::new(&spec, &grid, 0.5, 1e-2).unwrap();
        let traj = solver.run_stationary(0.5, 0.2, 0.1, StreamKey::new(0, 0, Purpose::Noise)).unwrap();
        assert_eq!(traj.len(), 3);
        for f in &traj.fields {
            assert!(f.values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn incompressible_l2_does_not_grow() {
        let spec = CovarianceSpec::incompressible(2, 1.0, 1.0);
        let grid = TorusGrid::new(2, 32, 4.0).unwrap();
        let solver = Solver::new(&spec, &grid, 0.1, 1e-3).unwrap();
        let phi = gaussian_density(&grid, 0.5);
        let traj = solver.run(&phi, 0.1, StreamKey::new(3, 0, Purpose::Noise), &[]).unwrap();
        let l0 = traj.diagnostics[0].l2;
        assert!(traj.diagnostics.iter().all(|d| d.l2 <= l0 * (1.0 + solver.dt())));
    }

    #[test]
    fn time_grid_errors() {
        assert_eq!(steps_for(1.0, 1e-3).unwrap(), 1000);
        assert!(matches!(steps_for(1.0005, 1e-3), Err(Error::TimeMismatch(_))));
        assert!(matches!(steps_for(-1.0, 1e-3), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn blowup_guard_triggers() {
        let (solver, phi) = setup(128, 16.0, 1e-2);
        let solver = solver.with_guard(0.1);
        let s0 = solver.initial_state(&phi).unwrap();
        let dw = NoiseIncrement::from_field(VectorField::zeros(solver.grid()), 1e-2);
        assert!(matches!(solver.step(&s0, &dw), Err(Error::BlowupDetected { .. })));
    }

    #[test]
    fn noise_weight_matches_semigroup_variance() {
        let (solver, _) = setup(128, 16.0, 1e-2);
        let xi2 = solver.grid().xi_squared();
        let d = solver.diffusivity();
        for k in 0..xi2.len() {
            let z = 2.0 * d * xi2[k] * solver.dt();
            let g2 = solver.smoothing[k] * solver.smoothing[k];
            let e2 = solver.decay[k] * solver.decay[k];
            if xi2[k] == 0.0 {
                assert_eq!(solver.smoothing[k], 1.0);
            } else {
                assert!((g2 * z - (1.0 - e2)).abs() < 1e-14, "{k}");
                assert!(solver.smoothing[k] > solver.decay[k] && solver.smoothing[k] < 1.0);
            }
        }
    }
}
