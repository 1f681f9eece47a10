//! The additive stochastic heat equation of the fluctuation limit.

use ewfluct::covariance::CovarianceSpec;
use ewfluct::grid::{ScalarField, TorusGrid};
use ewfluct::limit_she::LimitSpec;
use ewfluct::parallel::map_replicas;
use ewfluct::rng::{Purpose, StreamKey};
use ewfluct::spde::gaussian_density;
use ewfluct::stats::{variance, variance_stderr};

fn main() -> ewfluct::Result<()> {
    let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
    let kappa = 0.5;
    let w = spec.stationary_w_1d(kappa)?;
    let veff = spec.veff_sq(Some(&|z: &[f64]| w.eval(z[0])))?;
    let grid = TorusGrid::new(1, 64, 16.0)?;
    let limit = LimitSpec::new(kappa + spec.nu(), veff, gaussian_density(&grid, 0.5))?;
    let test = ScalarField::from_fn(&grid, |x| (2.0 * std::f64::consts::PI * x[0] / 16.0).sin());
    for t in [0.1, 0.25, 0.5] {
        println!("t {t}: var_u {:.5e}, qv_limit {:.5e}", limit.var_u(&test, t)?, limit.qv_limit(&test, t)?);
    }
    let t = 0.25;
    let x = map_replicas(1000, |r| {
        let tr = limit.sample_u(t, 2.5e-3, StreamKey::new(6, r, Purpose::LimitNoise), &[t])?;
        Ok(tr.fields[0].inner(&test))
    })?;
    println!("sampled variance {:.5e} +- {:.1e}", variance(&x), variance_stderr(&x));
    Ok(())
}
