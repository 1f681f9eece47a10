//! The space-time stationary field started from the constant 1.

use ewfluct::covariance::CovarianceSpec;
use ewfluct::grid::TorusGrid;
use ewfluct::rng::{Purpose, StreamKey};
use ewfluct::spde::Solver;
use ewfluct::stats::Running;

fn main() -> ewfluct::Result<()> {
    let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
    let grid = TorusGrid::new(1, 256, 32.0)?;
    let kappa = 0.5;
    let solver = Solver::new(&spec, &grid, kappa, 2.5e-3)?;
    let traj = solver.run_stationary(20.0, 40.0, 0.5, StreamKey::new(4, 0, Purpose::Noise))?;
    let w = spec.stationary_w_1d(kappa)?.torus_normalized(grid.length());
    let n = grid.points();
    for lag in [0usize, 2, 4, 8, 16, 64] {
        let r: Running = traj
            .fields
            .iter()
            .map(|f| (0..n).map(|i| f.values()[i] * f.values()[(i + lag) % n]).sum::<f64>() / n as f64)
            .collect();
        let z = lag as f64 * grid.spacing();
        println!("lag {z:6.3}: {:.4} (closed form {:.4})", r.mean(), w.eval(z));
    }
    Ok(())
}
