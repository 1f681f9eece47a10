//! Two-point correlation: PDE solution, Monte Carlo estimate and the
//! Gaussian envelope bound.

use ewfluct::correlation::{compare_s2, heat_kernel_bound_check, mc_s2, CorrelationSolver, CrossWeight};
use ewfluct::covariance::CovarianceSpec;
use ewfluct::grid::TorusGrid;
use ewfluct::parallel::map_replicas;
use ewfluct::rng::{Purpose, StreamKey};
use ewfluct::spde::{gaussian_density, Solver};

fn main() -> ewfluct::Result<()> {
    let spec = CovarianceSpec::compressible(1, 0.25, 1.0);
    let grid = TorusGrid::new(1, 128, 8.0)?;
    let kappa = 0.5;
    let t = 0.5;
    let solver = Solver::new(&spec, &grid, kappa, 1e-3)?;
    let phi = solver.initial_state(&gaussian_density(&grid, 0.5))?.theta;
    let times: Vec<f64> = (1..=10).map(|k| k as f64 * t / 10.0).collect();
    let dt_pde = grid.spacing().powi(2) / (8.0 * solver.diffusivity());
    let dt_pde = t / (t / dt_pde).ceil();
    for weight in [CrossWeight::Once, CrossWeight::Doubled] {
        let pde = CorrelationSolver::new(&spec, &grid, kappa, dt_pde, weight)?.solve_s2(&phi, t, &times)?;
        if weight == CrossWeight::Once {
            let candidates: Vec<f64> = [1.0, 1.5, 2.0, 3.0].iter().map(|m| m * 2.0 * solver.diffusivity()).collect();
            let bound = heat_kernel_bound_check(&pde, &phi, &candidates, (0.05, t), 10.0)?;
            println!("bound: c = {:.3}, C = {:.3}, holds {}", bound.c, bound.constant, bound.holds);
        }
        let fields = map_replicas(300, |r| {
            Ok(solver.run(&phi, t, StreamKey::new(3, r, Purpose::Noise), &[t])?.fields.remove(0))
        })?;
        let cmp = compare_s2(&mc_s2(&fields)?, pde.fields.last().unwrap(), 0.05, 3.0, 0.01);
        println!(
            "beta = {}: {} of {} points outside max(5%, 3 stderr), worst ratio {:.2}",
            weight.beta(),
            cmp.failures,
            cmp.points,
            cmp.worst_ratio
        );
    }
    Ok(())
}
