//! The limiting additive stochastic heat equation
//! `dU = D Lap U dt + div(theta_bar V_eff xi)`, `U(0) = 0`, with
//! `theta_bar_t` the heat flow of the initial density at diffusivity `D`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::covariance::{min_eigenvalue, psd_sqrt};
use crate::error::{Error, Result};
use crate::grid::{Direction, ScalarField, TorusGrid};
use crate::rng::StreamKey;
use crate::spde::{steps_for, Diagnostics, Trajectory};

/// Parameters of the limit equation.
#[derive(Debug, Clone)]
pub struct LimitSpec {
    diffusivity: f64,
    veff_sq: DMatrix<f64>,
    veff: DMatrix<f64>,
    phi: ScalarField,
}

impl LimitSpec {
    /// `veff_sq` is `V_eff^2`; `phi` the initial mean density.
    pub fn new(diffusivity: f64, veff_sq: DMatrix<f64>, phi: ScalarField) -> Result<Self> {
        let d = phi.grid().dim();
        if veff_sq.nrows() != d || veff_sq.ncols() != d {
            return Err(Error::SizeMismatch { expected: d, got: veff_sq.nrows() });
        }
        if !(diffusivity > 0.0) {
            return Err(Error::DomainError(format!("diffusivity must be positive, got {diffusivity}")));
        }
        if (&veff_sq - veff_sq.transpose()).amax() > 1e-12 * veff_sq.amax().max(1e-300) {
            return Err(Error::NotPsd(f64::NAN));
        }
        let lo = min_eigenvalue(&veff_sq);
        if lo < -1e-12 * veff_sq.amax() {
            return Err(Error::NotPsd(lo));
        }
        let veff = psd_sqrt(&veff_sq);
        Ok(LimitSpec { diffusivity, veff_sq, veff, phi })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.phi.grid()
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    pub fn veff_sq(&self) -> &DMatrix<f64> {
        &self.veff_sq
    }

    pub fn theta_bar(&self, t: f64) -> Result<ScalarField> {
        self.phi.heat_propagate(self.diffusivity, t)
    }

    /// `int theta^2 grad(psi)^T V_eff^2 grad(psi) dx`.
    fn weighted_energy(&self, theta: &ScalarField, psi: &ScalarField) -> f64 {
        let g = psi.gradient();
        let d = self.grid().dim();
        let mut acc = 0.0;
        for (j, th) in theta.values().iter().enumerate() {
            let mut q = 0.0;
            for a in 0..d {
                for b in 0..d {
                    q += g.component(a)[j] * self.veff_sq[(a, b)] * g.component(b)[j];
                }
            }
            acc += th * th * q;
        }
        acc * self.grid().cell_volume()
    }

    fn time_quadrature(&self, t: f64, nodes: usize, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let m = nodes.max(64);
        let h = t / m as f64;
        let mut acc = 0.0;
        for i in 0..=m {
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            acc += w * f(i as f64 * h)?;
        }
        Ok(acc * h)
    }

    /// `Var <U(t), phi_test>` by trapezoid quadrature in time.
    pub fn var_u(&self, phi_test: &ScalarField, t: f64) -> Result<f64> {
        self.var_u_with(phi_test, t, 256)
    }

    pub fn var_u_with(&self, phi_test: &ScalarField, t: f64, nodes: usize) -> Result<f64> {
        if phi_test.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        self.time_quadrature(t, nodes, |s| {
            let theta = self.theta_bar(s)?;
            let psi = phi_test.heat_propagate(self.diffusivity, t - s)?;
            Ok(self.weighted_energy(&theta, &psi))
        })
    }

    /// `int_0^t int theta_bar_r^2 grad(phi)^T V_eff^2 grad(phi) dx dr`.
    pub fn qv_limit(&self, phi_test: &ScalarField, t: f64) -> Result<f64> {
        self.qv_limit_with(phi_test, t, 256)
    }

    pub fn qv_limit_with(&self, phi_test: &ScalarField, t: f64, nodes: usize) -> Result<f64> {
        if phi_test.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        self.time_quadrature(t, nodes, |s| {
            let theta = self.theta_bar(s)?;
            Ok(self.weighted_energy(&theta, phi_test))
        })
    }

    /// Exponential Euler sample of `U` with grid white noise.
    pub fn sample_u(&self, horizon: f64, dt: f64, key: StreamKey, record_times: &[f64]) -> Result<Trajectory> {
        let grid = self.grid().clone();
        let d = grid.dim();
        let n = grid.len();
        let steps = steps_for(horizon, dt)?;
        let record: Vec<u64> = record_times.iter().map(|&t| steps_for(t, dt)).collect::<Result<_>>()?;
        let xi2 = grid.xi_squared();
        let decay: Vec<f64> = xi2.iter().map(|k| (-self.diffusivity * k * dt).exp()).collect();
        let smoothing: Vec<f64> = xi2
            .iter()
            .map(|k| {
                let z = 2.0 * self.diffusivity * k * dt;
                if z < 1e-12 {
                    1.0
                } else {
                    (-(-z).exp_m1() / z).sqrt()
                }
            })
            .collect();
        let mut wv = vec![vec![0.0; n]; d];
        let mut xi = [0.0; 3];
        for k in 0..n {
            grid.wavevector(k, &mut xi);
            for a in 0..d {
                wv[a][k] = xi[a];
            }
        }
        let amp = (dt / grid.cell_volume()).sqrt();
        let mut u = vec![Complex64::new(0.0, 0.0); n];
        let mut traj = Trajectory { times: Vec::new(), fields: Vec::new(), diagnostics: Vec::new() };
        let record_now = |m: u64, u: &Vec<Complex64>, traj: &mut Trajectory| {
            for (&r, &t) in record.iter().zip(record_times) {
                if r == m {
                    let f = ScalarField::from_spectrum(&grid, u.clone()).expect("grid sized");
                    traj.diagnostics.push(Diagnostics { mass: 0.0, l2: f.l2_norm(), min: f.min(), sup: f.sup_norm() });
                    traj.times.push(t);
                    traj.fields.push(f);
                }
            }
        };
        record_now(0, &u, &mut traj);
        for m in 0..steps {
            let theta = self.theta_bar(m as f64 * dt)?;
            let mut rng = key.rng(m);
            let eta: Vec<Vec<f64>> =
                (0..d).map(|_| (0..n).map(|_| amp * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for a in 0..d {
                let mut comp: Vec<Complex64> = (0..n)
                    .map(|j| {
                        let mut v = 0.0;
                        for b in 0..d {
                            v += self.veff[(a, b)] * eta[b][j];
                        }
                        Complex64::new(theta.values()[j] * v, 0.0)
                    })
                    .collect();
                grid.transform(&mut comp, Direction::Forward);
                for k in 0..n {
                    buf[k] += comp[k] * Complex64::new(0.0, wv[a][k]);
                }
            }
            let mut sup: f64 = 0.0;
            for k in 0..n {
                u[k] = u[k] * decay[k] + buf[k] * smoothing[k];
                sup = sup.max(u[k].norm());
            }
            if !sup.is_finite() || sup > 1e12 {
                return Err(
                    Error::BlowupDetected { step: m + 1, sup_norm: sup, guard: 1e12 }.in_replica(key.replica, m)
                );
            }
            record_now(m + 1, &u, &mut traj);
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::map_replicas;
    use crate::rng::Purpose;
    use crate::spde::gaussian_density;
    use crate::stats::{variance, variance_stderr, Running};

    fn setup(v: f64) -> (LimitSpec, ScalarField) {
        let grid = TorusGrid::new(1, 64, 8.0).unwrap();
        let phi = gaussian_density(&grid, 0.5);
        let test = ScalarField::from_fn(&grid, |x| (2.0 * std::f64::consts::PI * x[0] / 8.0).sin());
        (LimitSpec::new(1.0, DMatrix::from_element(1, 1, v), phi).unwrap(), test)
    }

    #[test]
    fn trivial_cases() {
        let (zero, test) = setup(0.0);
        assert_eq!(zero.var_u(&test, 0.5).unwrap(), 0.0);
        assert_eq!(zero.qv_limit(&test, 0.5).unwrap(), 0.0);
        let (one, test) = setup(1.0);
        assert_eq!(one.var_u(&test, 0.0).unwrap(), 0.0);
        assert!(matches!(one.var_u(&test, -1.0), Err(Error::NegativeTime(_))));
        assert!(LimitSpec::new(1.0, DMatrix::from_element(1, 1, -1.0), test.clone()).is_err());
    }

    #[test]
    fn qv_limit_richardson_and_monotone() {
        let (l, test) = setup(1.0);
        let a = l.qv_limit_with(&test, 0.5, 256).unwrap();
        let b = l.qv_limit_with(&test, 0.5, 512).unwrap();
        assert!((a - b).abs() < 1e-4 * b);
        let grid2 = TorusGrid::new(1, 128, 8.0).unwrap();
        let l2 = LimitSpec::new(1.0, DMatrix::from_element(1, 1, 1.0), gaussian_density(&grid2, 0.5)).unwrap();
        let test2 = ScalarField::from_fn(&grid2, |x| (2.0 * std::f64::consts::PI * x[0] / 8.0).sin());
        let c = l2.qv_limit_with(&test2, 0.5, 512).unwrap();
        assert!((a - c).abs() < 1e-4 * c);
        let mut prev = 0.0;
        for k in 1..=5 {
            let q = l.qv_limit(&test, 0.1 * k as f64).unwrap();
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn var_u_envelope() {
        let (l, test) = setup(1.3);
        let t = 0.4;
        let v = l.var_u(&test, t).unwrap();
        let gmax = test.gradient().sup_norm();
        let m = 200;
        let energy: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                w * l.theta_bar(t * i as f64 / m as f64).unwrap().l2_norm().powi(2)
            })
            .sum::<f64>()
            * t
            / m as f64;
        assert!(v > 0.0 && v <= 1.3 * gmax * gmax * energy);
    }

    #[test]
    fn sample_matches_var_u() {
        let (l, test) = setup(1.0);
        let t = 0.25;
        let dt = 2.5e-3;
        let vals = map_replicas(1500, |r| {
            let tr = l.sample_u(t, dt, StreamKey::new(21, r, Purpose::LimitNoise), &[t])?;
            Ok((tr.fields[0].inner(&test), tr.fields[0].spectrum()[0].norm()))
        })
        .unwrap();
        let x: Vec<f64> = vals.iter().map(|v| v.0).collect();
        assert!(vals.iter().all(|v| v.1 < 1e-14));
        let r: Running = x.iter().copied().collect();
        assert!(r.mean().abs() < 3.0 * r.stderr());
        let want = l.var_u(&test, t).unwrap();
        assert!((variance(&x) - want).abs() < 3.0 * variance_stderr(&x), "{} vs {}", variance(&x), want);
    }
}
