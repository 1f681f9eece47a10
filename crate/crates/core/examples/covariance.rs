//! Covariance models: validation, effective variance and the stationary profile.

use ewfluct::covariance::{CovarianceSpec, GridCovariance};
use ewfluct::grid::TorusGrid;
use ewfluct::spde::transport_dt_limit;

fn main() -> ewfluct::Result<()> {
    let kappa = 0.5;
    let comp = CovarianceSpec::compressible(1, 1.0, 1.0);
    let report = comp.validate()?;
    println!("compressible d=1: nu = {}, psd min {:.2e}", report.nu, report.psd_min_relative);
    for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("  Q({r}) = {:.6}", comp.q_scalar(r));
    }
    let w = comp.stationary_w_1d(kappa)?;
    println!("  w(0) = {:.4}, on a torus of side 16: {:.4}", w.eval(0.0), w.torus_normalized(16.0).eval(0.0));
    let veff = comp.veff_sq(Some(&|z: &[f64]| w.eval(z[0])))?;
    println!("  V_eff^2 = {:.6}", veff[(0, 0)]);

    let inc = CovarianceSpec::incompressible(2, 1.0, 1.0);
    let report = inc.validate()?;
    println!("incompressible d=2: nu = {:.4}, isotropy error {:.1e}", report.nu, report.isotropy_error);
    println!("  V_eff^2 = {}", inc.veff_sq(None)?);

    let grid = TorusGrid::new(1, 256, 16.0)?;
    for n in [1, 2, 4] {
        match GridCovariance::new(&comp.rescaled(n)?, &grid) {
            Ok(g) => println!("n = {n}: xi_rms {:.3}, dt limit {:.3e}", g.xi_rms(), transport_dt_limit(&g)),
            Err(e) => println!("n = {n}: {e}"),
        }
    }
    Ok(())
}
