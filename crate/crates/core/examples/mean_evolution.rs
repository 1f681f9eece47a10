//! The ensemble mean follows the heat equation with diffusivity kappa + nu.

use ewfluct::covariance::CovarianceSpec;
use ewfluct::grid::TorusGrid;
use ewfluct::io::save_field;
use ewfluct::parallel::map_replicas;
use ewfluct::rng::{Purpose, StreamKey};
use ewfluct::spde::{gaussian_density, mean_heat, Solver};

fn main() -> ewfluct::Result<()> {
    let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
    let grid = TorusGrid::new(1, 256, 16.0)?;
    let solver = Solver::new(&spec, &grid, 0.5, 1e-3)?;
    let phi = gaussian_density(&grid, 0.5);
    let t = 1.0;
    let replicas = 100;
    let ends = map_replicas(replicas, |r| {
        let traj = solver.run(&phi, t, StreamKey::new(5, r, Purpose::Noise), &[t])?;
        println!("replica {r:3}: max step mass drift {:.1e}", traj.max_step_mass_drift());
        Ok(traj.fields[0].clone())
    })?;
    let mut mean = vec![0.0; grid.len()];
    for f in &ends {
        mean.iter_mut().zip(f.values()).for_each(|(m, v)| *m += v / replicas as f64);
    }
    let mean = ewfluct::grid::ScalarField::new(&grid, mean)?;
    let bar = mean_heat(&solver.initial_state(&phi)?.theta, solver.diffusivity(), t)?;
    let err = mean.axpby(1.0, &bar, -1.0)?.l2_norm() / bar.l2_norm();
    println!("relative L2 distance of the ensemble mean to the heat flow: {err:.4}");
    let path = std::env::temp_dir().join("ewfluct_mean.ewf");
    save_field(&path, &mean)?;
    println!("mean written to {}", path.display());
    Ok(())
}
