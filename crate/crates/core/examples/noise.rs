//! Sampling the white-in-time environment increments.

use ewfluct::covariance::CovarianceSpec;
use ewfluct::grid::TorusGrid;
use ewfluct::noise::{empirical_cov, NoiseSampler};
use ewfluct::rng::{Purpose, StreamKey};

fn main() -> ewfluct::Result<()> {
    let dt = 1e-3;
    let spec = CovarianceSpec::compressible(1, 1.0, 1.0);
    let grid = TorusGrid::new(1, 128, 8.0)?;
    let sampler = NoiseSampler::new(&spec, &grid, dt)?;
    let key = StreamKey::new(1, 0, Purpose::Noise);
    let draws: Vec<_> = (0..5000).map(|m| sampler.sample_keyed(key, m)).collect();
    for lag in [0i64, 4, 8, 16] {
        let c = empirical_cov(&draws, &[lag])?;
        let z = lag as f64 * grid.spacing();
        println!(
            "lag {z:5.3}: cov {:+.3e} +- {:.1e}, expected {:+.3e}",
            c.cov[(0, 0)],
            c.stderr[(0, 0)],
            spec.q_scalar(z) * dt
        );
    }

    let inc = CovarianceSpec::incompressible(2, 1.0, 1.0);
    let g2 = TorusGrid::new(2, 64, 8.0)?;
    let dw = NoiseSampler::new(&inc, &g2, dt)?.sample_keyed(key, 0);
    println!("incompressible: |div dW| / |dW| = {:.1e}", dw.values().divergence().sup_norm() / dw.values().sup_norm());
    Ok(())
}
