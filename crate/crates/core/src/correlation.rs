//! Two-point correlation `S2(t, x, y) = E[theta_t(x) theta_t(y)]` in `d = 1`.
//!
//! `S2` solves
//! `dS2/dt = (kappa + nu)(d_xx + d_yy) S2 + beta d_x d_y (Q(x - y) S2)`
//! on the pair torus. With `beta = 1` (the cross term appearing once, which
//! corresponds to off-diagonal blocks `Q/2` in the coefficient matrix) this
//! is the equation obtained from Itô's formula for `theta(x) theta(y)`.
//!
//! Stepping is pseudo-spectral ETD1: the diffusion is integrated exactly and
//! the cross term enters through `phi_1 = (1 - E_dt)/(D |xi|^2)`, which keeps
//! the stationary points of the discrete scheme equal to those of the
//! spatial operator.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::covariance::{min_eigenvalue, CovarianceKind, CovarianceSpec, StationaryProfile};
use crate::error::{Error, Result};
use crate::grid::{Direction, ScalarField, TorusGrid};

/// Off-diagonal convention of the coefficient matrix `C2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CrossWeight {
    /// Off-diagonal blocks `Q/2`: the cross term appears once (`beta = 1`).
    Once,
    /// Off-diagonal blocks `Q` under the ordered trace convention (`beta = 2`).
    Doubled,
}

impl CrossWeight {
    pub fn beta(self) -> f64 {
        match self {
            CrossWeight::Once => 1.0,
            CrossWeight::Doubled => 2.0,
        }
    }
}

/// `C2` sampled on lags `z = x1 - x2`.
#[derive(Debug, Clone, Serialize)]
pub struct C2Field {
    pub lags: Vec<f64>,
    pub diagonal: f64,
    pub off_diagonal: Vec<f64>,
    pub min_eigenvalue: f64,
    pub weight: CrossWeight,
}

impl C2Field {
    /// The full `2d x 2d` block matrix at lag index `i` (here `d = 1`).
    pub fn matrix(&self, i: usize) -> DMatrix<f64> {
        let o = self.off_diagonal[i];
        DMatrix::from_row_slice(2, 2, &[self.diagonal, o, o, self.diagonal])
    }
}

/// Assembles `C2` on `lags` and records its smallest eigenvalue.
pub fn assemble_c2(spec: &CovarianceSpec, kappa: f64, lags: &[f64], weight: CrossWeight) -> Result<C2Field> {
    if spec.dim != 1 || spec.kind() != CovarianceKind::Compressible {
        return Err(Error::DimensionError("assemble_c2 covers compressible d = 1".into()));
    }
    let diagonal = kappa + spec.nu();
    let scale = weight.beta() / 2.0;
    let off_diagonal: Vec<f64> =
        lags.iter().map(|&z| spec.q_real(&[z]).map(|m| scale * m[(0, 0)])).collect::<Result<_>>()?;
    let mut lo = f64::INFINITY;
    for &o in &off_diagonal {
        lo = lo.min(min_eigenvalue(&DMatrix::from_row_slice(2, 2, &[diagonal, o, o, diagonal])));
    }
    Ok(C2Field { lags: lags.to_vec(), diagonal, off_diagonal, min_eigenvalue: lo, weight })
}

/// `S2` snapshots on the pair grid `N x N` (row index `x`, column `y`).
#[derive(Debug, Clone)]
pub struct S2Trajectory {
    pub base: TorusGrid,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    /// `int int S2` at every step.
    pub mass: Vec<f64>,
}

impl S2Trajectory {
    pub fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.fields[k][i * self.base.points() + j]
    }
}

/// ETD1 solver for the pair equation.
#[derive(Debug, Clone)]
pub struct CorrelationSolver {
    base: TorusGrid,
    pair: TorusGrid,
    diffusivity: f64,
    dt: f64,
    beta: f64,
    qlag: Vec<f64>,
    decay: Vec<f64>,
    cross: Vec<f64>,
}

impl CorrelationSolver {
    /// Requires `dt <= dx^2 / (8 (kappa + nu))`.
    pub fn new(spec: &CovarianceSpec, base: &TorusGrid, kappa: f64, dt: f64, weight: CrossWeight) -> Result<Self> {
        if spec.dim != 1 || base.dim() != 1 || spec.kind() != CovarianceKind::Compressible {
            return Err(Error::DimensionError("the pair solver covers compressible d = 1".into()));
        }
        if !(kappa > 0.0) {
            return Err(Error::DomainError(format!("kappa must be positive, got {kappa}")));
        }
        if !(dt > 0.0) {
            return Err(Error::DegenerateDt(dt));
        }
        let diffusivity = kappa + spec.nu();
        let dx = base.spacing();
        let limit = dx * dx / (8.0 * diffusivity);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        let radius = spec.support_radius().unwrap();
        if 2.0 * radius >= base.length() {
            return Err(Error::GridResolutionError("support does not fit in the box".into()));
        }
        let n = base.points();
        // exactly even in the lag index
        let qlag: Vec<f64> = (0..n).map(|m| spec.q_scalar(m.min(n - m) as f64 * dx)).collect();
        let pair = TorusGrid::new(2, n, base.length())?;
        let mut xi = [0.0; 3];
        let mut decay = vec![0.0; pair.len()];
        let mut cross = vec![0.0; pair.len()];
        let beta = weight.beta();
        for k in 0..pair.len() {
            pair.wavevector(k, &mut xi);
            let lam = diffusivity * (xi[0] * xi[0] + xi[1] * xi[1]);
            let e = (-lam * dt).exp();
            decay[k] = e;
            let phi1 = if lam * dt < 1e-10 { dt } else { -(-lam * dt).exp_m1() / lam };
            // d_x d_y <-> -xi_x xi_y
            cross[k] = -beta * xi[0] * xi[1] * phi1;
        }
        Ok(CorrelationSolver { base: base.clone(), pair, diffusivity, dt, beta, qlag, decay, cross })
    }

    pub fn base(&self) -> &TorusGrid {
        &self.base
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    fn step(&self, s: &mut [f64]) {
        let n = self.base.points();
        let mut hat: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.pair.transform(&mut hat, Direction::Forward);
        let mut prod: Vec<Complex64> = (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                Complex64::new(self.qlag[(i + n - j) % n] * s[ij], 0.0)
            })
            .collect();
        self.pair.transform(&mut prod, Direction::Forward);
        for k in 0..hat.len() {
            hat[k] = hat[k] * self.decay[k] + prod[k] * self.cross[k];
        }
        self.pair.transform(&mut hat, Direction::Inverse);
        for (v, h) in s.iter_mut().zip(&hat) {
            *v = h.re;
        }
    }

    /// Evolves `initial` (row-major `N x N`) to `horizon`, recording at
    /// `record_times` (multiples of `dt`).
    pub fn evolve(&self, initial: Vec<f64>, horizon: f64, record_times: &[f64]) -> Result<S2Trajectory> {
        let n = self.base.points();
        if initial.len() != n * n {
            return Err(Error::SizeMismatch { expected: n * n, got: initial.len() });
        }
        let steps = crate::spde::steps_for(horizon, self.dt)?;
        let record: Vec<u64> =
            record_times.iter().map(|&t| crate::spde::steps_for(t, self.dt)).collect::<Result<_>>()?;
        let cell = self.base.spacing().powi(2);
        let mut s = initial;
        let sup0 = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut traj =
            S2Trajectory { base: self.base.clone(), times: Vec::new(), fields: Vec::new(), mass: Vec::new() };
        let push = |m: u64, s: &Vec<f64>, traj: &mut S2Trajectory| {
            traj.mass.push(s.iter().sum::<f64>() * cell);
            for (&r, &t) in record.iter().zip(record_times) {
                if r == m {
                    traj.times.push(t);
                    traj.fields.push(s.clone());
                }
            }
        };
        push(0, &s, &mut traj);
        for m in 1..=steps {
            self.step(&mut s);
            let sup = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !sup.is_finite() || sup > 1e6 * sup0 {
                return Err(Error::BlowupDetected { step: m, sup_norm: sup, guard: 1e6 * sup0 });
            }
            push(m, &s, &mut traj);
        }
        Ok(traj)
    }

    /// `S2(0) = phi (x) phi`.
    pub fn solve_s2(&self, phi: &ScalarField, horizon: f64, record_times: &[f64]) -> Result<S2Trajectory> {
        if phi.grid() != &self.base {
            return Err(Error::GridMismatch);
        }
        let v = phi.values();
        let initial: Vec<f64> = v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        self.evolve(initial, horizon, record_times)
    }

    /// Relaxes `S2 = 1` for time `horizon` and returns the lag profile
    /// `f(z_m) = mean_i S2(x_i, x_i - z_m)`.
    pub fn relax_stationary(&self, horizon: f64) -> Result<Vec<f64>> {
        let n = self.base.points();
        let traj = self.evolve(vec![1.0; n * n], horizon, &[horizon])?;
        let s = &traj.fields[0];
        Ok((0..n).map(|m| (0..n).map(|i| s[i * n + (i + n - m) % n]).sum::<f64>() / n as f64).collect())
    }
}

/// Convenience wrapper: builds a solver and evolves `phi (x) phi`.
pub fn solve_s2(
    spec: &CovarianceSpec,
    kappa: f64,
    phi: &ScalarField,
    horizon: f64,
    dt: f64,
    record_times: &[f64],
) -> Result<S2Trajectory> {
    CorrelationSolver::new(spec, phi.grid(), kappa, dt, CrossWeight::Once)?.solve_s2(phi, horizon, record_times)
}

/// Largest deviation of a lag profile from the torus-normalized closed form.
pub fn stationary_deviation(profile: &[f64], base: &TorusGrid, w: &StationaryProfile) -> f64 {
    let wl = w.torus_normalized(base.length());
    let dx = base.spacing();
    let n = base.points();
    (0..n)
        .map(|m| {
            let z = m.min(n - m) as f64 * dx;
            (profile[m] - wl.eval(z)).abs()
        })
        .fold(0.0, f64::max)
}

/// Ensemble accumulator for `E[theta(x) theta(y)]` with per-point standard
/// errors (Welford per entry, merged in replica order).
#[derive(Debug, Clone)]
pub struct PairMoments {
    base: TorusGrid,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

/// Monte Carlo estimate of `S2`.
#[derive(Debug, Clone)]
pub struct S2Estimate {
    pub base: TorusGrid,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: u64,
}

impl PairMoments {
    pub fn new(base: &TorusGrid) -> Self {
        let n = base.points();
        PairMoments { base: base.clone(), count: 0, mean: vec![0.0; n * n], m2: vec![0.0; n * n] }
    }

    pub fn push(&mut self, theta: &ScalarField) -> Result<()> {
        if theta.grid() != &self.base {
            return Err(Error::GridMismatch);
        }
        self.count += 1;
        let c = self.count as f64;
        let v = theta.values();
        let n = v.len();
        for i in 0..n {
            for j in 0..n {
                let x = v[i] * v[j];
                let k = i * n + j;
                let delta = x - self.mean[k];
                self.mean[k] += delta / c;
                self.m2[k] += delta * (x - self.mean[k]);
            }
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn estimate(&self) -> S2Estimate {
        let c = self.count as f64;
        let stderr = self.m2.iter().map(|m| if self.count < 2 { 0.0 } else { (m / (c - 1.0) / c).sqrt() }).collect();
        S2Estimate { base: self.base.clone(), mean: self.mean.clone(), stderr, samples: self.count }
    }
}

/// `mc_S2` over replica fields at a common time.
pub fn mc_s2(fields: &[ScalarField]) -> Result<S2Estimate> {
    if fields.len() < 200 {
        return Err(Error::TooFewSamples { needed: 200, got: fields.len() });
    }
    let mut acc = PairMoments::new(fields[0].grid());
    for f in fields {
        acc.push(f)?;
    }
    Ok(acc.estimate())
}

/// Outcome of comparing an `S2` estimate to the PDE solution.
#[derive(Debug, Clone, Serialize)]
pub struct S2Comparison {
    pub points: usize,
    pub failures: usize,
    pub worst_ratio: f64,
    pub max_relative: f64,
}

/// Checks `|mc - pde| <= max(rel * |pde|, k * stderr)` on points where the
/// PDE value is at least `floor * max`.
pub fn compare_s2(mc: &S2Estimate, pde: &[f64], rel: f64, k: f64, floor: f64) -> S2Comparison {
    let top = pde.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut points = 0;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for ((m, s), p) in mc.mean.iter().zip(&mc.stderr).zip(pde) {
        if p.abs() < floor * top {
            continue;
        }
        points += 1;
        let tol = (rel * p.abs()).max(k * s);
        let err = (m - p).abs();
        worst = worst.max(err / tol);
        max_rel = max_rel.max(err / p.abs());
        if err > tol {
            failures += 1;
        }
    }
    S2Comparison { points, failures, worst_ratio: worst, max_relative: max_rel }
}

/// Result of a heat-kernel bound check.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// `(c, C)` with `C` the smallest constant for that `c`.
    pub fits: Vec<(f64, f64)>,
    pub c: f64,
    pub constant: f64,
    pub holds: bool,
    pub points: usize,
}

fn envelopes(traj: &S2Trajectory, phi: &ScalarField, c: f64, k: usize) -> Result<Vec<f64>> {
    let t = traj.times[k];
    let abs = ScalarField::new(phi.grid(), phi.values().iter().map(|v| v.abs()).collect())?;
    // Gaussian of variance c t is heat flow with diffusivity c / 2
    Ok(abs.heat_propagate(c / 2.0, t)?.into_values())
}

fn ratio_sup(traj: &S2Trajectory, phi: &ScalarField, c: f64, t_range: (f64, f64), floor: f64) -> Result<(f64, usize)> {
    let n = traj.base.points();
    let mut sup: f64 = 0.0;
    let mut points = 0;
    for (k, &t) in traj.times.iter().enumerate() {
        if t < t_range.0 - 1e-12 || t > t_range.1 + 1e-12 {
            continue;
        }
        let e = envelopes(traj, phi, c, k)?;
        let emax = e.iter().fold(0.0f64, |m, v| m.max(*v));
        let cut = floor * emax * emax;
        for i in 0..n {
            for j in 0..n {
                let env = e[i] * e[j];
                if env < cut {
                    continue;
                }
                points += 1;
                sup = sup.max(traj.fields[k][i * n + j].abs() / env);
            }
        }
    }
    Ok((sup, points))
}

/// Fits the smallest `C` for each candidate `c` such that
/// `|S2(t,x,y)| <= C (q_ct * |phi|)(x) (q_ct * |phi|)(y)` on every recorded
/// time in `t_range`; points where the envelope product is below
/// `1e-6` of its maximum are skipped. `holds` when the best `C` is at most
/// `cap`.
pub fn heat_kernel_bound_check(
    traj: &S2Trajectory,
    phi: &ScalarField,
    candidates: &[f64],
    t_range: (f64, f64),
    cap: f64,
) -> Result<BoundReport> {
    if traj.times.iter().all(|&t| t < t_range.0 - 1e-12 || t > t_range.1 + 1e-12) {
        return Err(Error::EmptyTrajectory);
    }
    let mut fits = Vec::new();
    let mut points = 0;
    for &c in candidates {
        let (sup, p) = ratio_sup(traj, phi, c, t_range, 1e-6)?;
        points = p;
        fits.push((c, sup));
    }
    let &(c, constant) = fits.iter().min_by(|a, b| a.1.total_cmp(&b.1)).ok_or(Error::EmptyTrajectory)?;
    Ok(BoundReport { fits, c, constant, holds: constant <= cap, points })
}

/// Checks the bound for fixed `(c, C)`.
pub fn bound_holds(traj: &S2Trajectory, phi: &ScalarField, c: f64, constant: f64, t_range: (f64, f64)) -> Result<bool> {
    if traj.times.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let (sup, _) = ratio_sup(traj, phi, c, t_range, 1e-6)?;
    Ok(sup <= constant * (1.0 + 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spde::gaussian_density;

    fn setup(amp: f64, n: usize, l: f64) -> (CovarianceSpec, TorusGrid, ScalarField) {
        let spec = CovarianceSpec::compressible(1, amp, 1.0);
        let grid = TorusGrid::new(1, n, l).unwrap();
        let phi = gaussian_density(&grid, 0.5);
        (spec, grid, phi)
    }

    #[test]
    fn c2_blocks() {
        let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
        let lags: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        let once = assemble_c2(&spec, 0.5, &lags, CrossWeight::Once).unwrap();
        let doubled = assemble_c2(&spec, 0.5, &lags, CrossWeight::Doubled).unwrap();
        assert_eq!(once.diagonal, 1.0);
        assert_eq!(doubled.off_diagonal[0], 1.0);
        assert_eq!(once.off_diagonal[0], 0.5);
        assert_eq!(once.off_diagonal[30], 0.0);
        assert!((once.min_eigenvalue - 0.5).abs() < 1e-12);
        // the doubled convention loses ellipticity at kappa = nu
        assert!(doubled.min_eigenvalue.abs() < 1e-12);
    }

    #[test]
    fn initial_condition_and_mass() {
        let (spec, grid, phi) = setup(1.0, 64, 8.0);
        let dt = 1e-3;
        let traj = solve_s2(&spec, 0.5, &phi, 0.2, dt, &[0.0, 0.2]).unwrap();
        for i in [10, 32] {
            for j in [5, 33] {
                assert_eq!(traj.at(0, i, j), phi.values()[i] * phi.values()[j]);
            }
        }
        let m0 = traj.mass[0];
        assert!(traj.mass.iter().all(|m| (m - m0).abs() < 1e-10 * m0));
        // swap symmetry
        let n = grid.points();
        let s = &traj.fields[1];
        let asym = (0..n * n).map(|k| (s[k] - s[(k % n) * n + k / n]).abs()).fold(0.0, f64::max);
        assert!(asym < 1e-13 * s.iter().fold(0.0f64, |a, v| a.max(*v)));
    }

    #[test]
    fn zero_noise_is_product_of_heat_flows() {
        let (spec, grid, phi) = setup(0.0, 64, 8.0);
        let traj = solve_s2(&spec, 0.5, &phi, 0.3, 1e-3, &[0.3]).unwrap();
        let h = phi.heat_propagate(0.5, 0.3).unwrap();
        let n = grid.points();
        let top = h.sup_norm().powi(2);
        for i in 0..n {
            for j in 0..n {
                let want = h.values()[i] * h.values()[j];
                assert!((traj.at(0, i, j) - want).abs() < 1e-6 * top);
            }
        }
    }

    #[test]
    fn cfl_is_enforced() {
        let (spec, grid, _) = setup(1.0, 64, 8.0);
        assert!(matches!(
            CorrelationSolver::new(&spec, &grid, 0.5, 0.01, CrossWeight::Once),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn relaxes_to_closed_form() {
        let (spec, grid, _) = setup(1.0, 128, 8.0);
        let dt = grid.spacing().powi(2) / 8.0;
        let solver = CorrelationSolver::new(&spec, &grid, 0.5, dt, CrossWeight::Once).unwrap();
        let steps = (12.0 / dt).round();
        let profile = solver.relax_stationary(steps * dt).unwrap();
        let w = spec.stationary_w_1d(0.5).unwrap();
        let dev = stationary_deviation(&profile, &grid, &w);
        assert!(dev < 0.02 * 2.0, "deviation {dev}");
        assert!(dev < 1e-3, "deviation {dev}");
    }

    #[test]
    fn bound_with_zero_noise_is_tight() {
        let (spec, _grid, phi) = setup(0.0, 64, 8.0);
        let times: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let traj = solve_s2(&spec, 0.5, &phi, 1.0, 1e-3, &times).unwrap();
        // kappa + nu = 0.5, so c = 2 (kappa + nu) = 1
        let rep = heat_kernel_bound_check(&traj, &phi, &[0.5, 1.0, 2.0], (0.05, 1.0), 10.0).unwrap();
        let (_, c2) = rep.fits[1];
        assert!(c2 <= 1.0 + 1e-6 && c2 > 1.0 - 1e-6, "{c2}");
        assert!(rep.holds);
        assert!(bound_holds(&traj, &phi, 1.0, 1.0 + 1e-6, (0.05, 1.0)).unwrap());
    }

    #[test]
    fn pair_moments_of_deterministic_fields() {
        let grid = TorusGrid::new(1, 16, 4.0).unwrap();
        let phi = gaussian_density(&grid, 0.5);
        let fields = vec![phi.clone(); 200];
        let est = mc_s2(&fields).unwrap();
        assert!(est.stderr.iter().all(|&s| s == 0.0));
        assert_eq!(est.mean[3 * 16 + 7], phi.values()[3] * phi.values()[7]);
        assert!(matches!(mc_s2(&fields[..10]), Err(Error::TooFewSamples { .. })));
    }
}
