//! Particles in the same environment as the field: annealed MSD and the
//! quenched duality with the field pairing.

use ewfluct::covariance::CovarianceSpec;
use ewfluct::grid::{ScalarField, TorusGrid};
use ewfluct::lagrangian::{annealed_msd, quenched_functional, ParticleEnsemble};
use ewfluct::rng::{Purpose, StreamKey};
use ewfluct::spde::{gaussian_density, Solver};

fn main() -> ewfluct::Result<()> {
    let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
    let grid = TorusGrid::new(1, 256, 16.0)?;
    let kappa = 0.5;
    let times: Vec<f64> = (1..=5).map(|k| k as f64 * 0.2).collect();
    let msd = annealed_msd(&spec, &grid, kappa, 1e-3, &times, 40, 50, 1)?;
    for (t, m) in msd.times.iter().zip(&msd.msd) {
        println!("t {t:.1}: msd {m:.4}");
    }
    println!("slope {:.4} +- {:.4}, expected {}", msd.slope, msd.slope_stderr, msd.expected_slope);

    let dt = 1.25e-4;
    let solver = Solver::new(&spec, &grid, kappa, dt)?;
    let phi = gaussian_density(&grid, 0.5);
    let g = |x: &[f64]| (-(x[0] - 8.0).powi(2)).exp();
    let test = ScalarField::from_fn(&grid, g);
    let key = StreamKey::new(2, 0, Purpose::Noise);
    let mut ens = ParticleEnsemble::from_density(&phi, 5000, kappa, key)?;
    let end = solver.run_with(&phi, 0.5, key, |_, dw| ens.step(dw))?;
    let (est, se) = quenched_functional(&ens, g);
    println!("quenched: particles {est:.5} +- {se:.5}, field {:.5}", end.theta.inner(&test));
    Ok(())
}
