//! The rescaled fluctuation field: pairings, their normality and the decay
//! of the raw fluctuation with n.

use ewfluct::covariance::CovarianceSpec;
use ewfluct::fluctuation::{normality_test, scaling_fit, x_n};
use ewfluct::grid::{ScalarField, SobolevFlavor, TorusGrid};
use ewfluct::parallel::map_replicas;
use ewfluct::rng::{Purpose, StreamKey};
use ewfluct::spde::{gaussian_density, Solver, Trajectory};

fn main() -> ewfluct::Result<()> {
    let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
    let kappa = 0.5;
    let t = 0.5;
    let times = [0.25, 0.5];
    let mut norms = Vec::new();
    let ns = [1u32, 2, 4];
    for (n, points, dt) in [(1, 256, 1e-3), (2, 256, 1e-3), (4, 512, 2.5e-4)] {
        let grid = TorusGrid::new(1, points, 16.0)?;
        let solver = Solver::new(&spec.rescaled(n)?, &grid, kappa, dt)?;
        let phi = gaussian_density(&grid, 0.5);
        let phi0 = solver.initial_state(&phi)?.theta;
        let mean = Trajectory {
            times: times.to_vec(),
            fields: times
                .iter()
                .map(|&s| phi0.heat_propagate(solver.diffusivity(), s))
                .collect::<ewfluct::Result<_>>()?,
            diagnostics: Vec::new(),
        };
        let test = ScalarField::from_fn(&grid, |x| (2.0 * std::f64::consts::PI * x[0] / 16.0).sin());
        let out = map_replicas(100, |r| {
            let traj = solver.run(&phi, t, StreamKey::new(8, ((n as u64) << 32) | r, Purpose::Noise), &times)?;
            let x = x_n(&traj, &mean, n)?;
            let raw = x.fields.iter().map(|f| f.sobolev_norm(-0.75, SobolevFlavor::Inhomogeneous)).fold(0.0, f64::max);
            Ok((x.pairings(&test)[1], raw / (n as f64).sqrt()))
        })?;
        let pairings: Vec<f64> = out.iter().map(|o| o.0).collect();
        let nt = normality_test(&pairings)?;
        println!("n = {n}: Anderson-Darling p = {:.3}", nt.p_value);
        norms.push(out.iter().map(|o| o.1).collect());
    }
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let fit = scaling_fit(&nf, &norms, 500, 1)?;
    println!("slope of sup_t |theta_n - theta_bar|_(-0.75): {:.3} [{:.3}, {:.3}]", fit.slope, fit.ci.0, fit.ci.1);
    Ok(())
}
