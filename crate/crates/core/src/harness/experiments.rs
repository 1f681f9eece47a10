//! The seven canonical experiments.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use super::config::{ExperimentConfig, ExperimentKind};
use super::report::{ExperimentReport, FieldArtifact, Metric};
use crate::correlation::{bound_holds, compare_s2, heat_kernel_bound_check, mc_s2, CorrelationSolver, CrossWeight};
use crate::covariance::{CovarianceKind, CovarianceSpec, GridCovariance};
use crate::error::{Error, Result};
use crate::fluctuation::{normality_test, scaling_fit, QvAccumulator};
use crate::grid::{ScalarField, SobolevFlavor, TorusGrid};
use crate::io::{num, Table};
use crate::lagrangian::{annealed_msd, quenched_functional, ParticleEnsemble};
use crate::limit_she::LimitSpec;
use crate::parallel::{map_replicas, with_workers};
use crate::rng::{Purpose, StreamKey};
use crate::spde::{mean_heat, steps_for, transport_dt_limit, Solver};
use crate::stats::{variance, variance_stderr, Running};

/// Runs the configured experiment on `workers` threads (0 = all cores) and
/// writes its artifacts to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = with_workers(workers, || compute(cfg))?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    report.workers = workers;
    report.write(&cfg.output.dir, cfg)?;
    Ok(report)
}

/// Runs the configured experiment without touching the file system.
pub fn compute(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    match cfg.kind() {
        ExperimentKind::Mean => mean(cfg),
        ExperimentKind::Scaling => scaling(cfg),
        ExperimentKind::Qv => qv(cfg),
        ExperimentKind::Clt => clt(cfg),
        ExperimentKind::Corrpde => corrpde(cfg),
        ExperimentKind::Stationary => stationary(cfg),
        ExperimentKind::Msd => msd(cfg),
    }
}

/// Covariance and time step for the rescaled environment `Q(n x)`: the grid
/// is refined by doubling until the noise is resolved, and `dt` halved until
/// the transport rule holds.
pub fn rescaled_setup(spec: &CovarianceSpec, base: &TorusGrid, dt: f64, n: u32) -> Result<(Arc<GridCovariance>, f64)> {
    let spec_n = spec.rescaled(n)?;
    let mut points = base.points();
    let cov = loop {
        let g = TorusGrid::new(base.dim(), points, base.length())?;
        match GridCovariance::new(&spec_n, &g) {
            Ok(c) => break c,
            Err(Error::GridResolutionError(_)) if points < 1 << 16 => points *= 2,
            Err(e) => return Err(e),
        }
    };
    let limit = transport_dt_limit(&cov);
    let mut dt_n = dt;
    while dt_n > limit * (1.0 + 1e-12) {
        dt_n /= 2.0;
    }
    Ok((Arc::new(cov), dt_n))
}

/// `V_eff^2` of the base environment: `int Q` when divergence free, and
/// with the closed-form stationary profile for compressible `d = 1`.
pub fn effective_variance(spec: &CovarianceSpec, kappa: f64) -> Result<DMatrix<f64>> {
    match spec.kind() {
        CovarianceKind::Incompressible => spec.veff_sq(None),
        CovarianceKind::Compressible if spec.dim == 1 => {
            let w = spec.stationary_w_1d(kappa)?;
            spec.veff_sq(Some(&|z: &[f64]| w.eval(z[0])))
        }
        CovarianceKind::Compressible => Err(Error::UnsupportedEvaluation(
            "compressible V_eff^2 needs a stationary profile, available in closed form for d = 1 only".into(),
        )),
    }
}

fn key(cfg: &ExperimentConfig, replica: u64) -> StreamKey {
    StreamKey::new(cfg.statistics.seed, replica, Purpose::Noise)
}

/// `<theta_bar(t), g>` from spectra: `L^d sum_k c_k conj(g_k) exp(-D |xi|^2 t)`.
struct MeanPairing {
    weights: Vec<Complex64>,
    xi2: Vec<f64>,
    diffusivity: f64,
}

impl MeanPairing {
    fn new(phi: &ScalarField, g: &ScalarField, diffusivity: f64) -> Self {
        let vol = phi.grid().volume();
        let weights = phi.spectrum().iter().zip(g.spectrum()).map(|(a, b)| a * b.conj() * vol).collect();
        MeanPairing { weights, xi2: phi.grid().xi_squared(), diffusivity }
    }

    fn at(&self, t: f64) -> f64 {
        self.weights.iter().zip(&self.xi2).map(|(w, k)| w.re * (-self.diffusivity * k * t).exp()).sum()
    }
}

fn mean(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = cfg.covariance_spec()?;
    let grid = cfg.torus()?;
    let dy = &cfg.dynamics;
    let solver = Solver::new(&spec, &grid, dy.kappa, dy.dt)?;
    let phi = cfg.initial_field(&grid)?;
    let phi0 = solver.initial_state(&phi)?.theta;
    let t = dy.horizon;
    let runs = map_replicas(cfg.statistics.replicas, |r| {
        let traj = solver.run(&phi, t, key(cfg, r), &[t])?;
        let min = traj.diagnostics.iter().map(|d| d.min).fold(f64::INFINITY, f64::min);
        Ok((traj.fields[0].values().to_vec(), traj.max_step_mass_drift(), min))
    })?;
    let n = grid.len();
    let mut acc = vec![Running::new(); n];
    for (v, _, _) in &runs {
        for (a, x) in acc.iter_mut().zip(v) {
            a.push(*x);
        }
    }
    let bar = mean_heat(&phi0, solver.diffusivity(), t)?;
    let cell = grid.cell_volume();
    let norm = bar.l2_norm();
    let err = (acc.iter().zip(bar.values()).map(|(a, b)| (a.mean() - b).powi(2)).sum::<f64>() * cell).sqrt() / norm;
    let se = (acc.iter().map(|a| a.stderr().powi(2)).sum::<f64>() * cell).sqrt() / norm;
    let drift = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let min = runs.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let k = cfg.statistics.stderr_factor.unwrap_or(3.0);

    let mut report = ExperimentReport::new(cfg);
    report.metrics.push(Metric::at_most("l2_relative_error", err, k * se));
    report.metrics.push(Metric::info("mc_stderr", se));
    report.metrics.push(Metric::at_most("max_step_mass_drift", drift, 1e-12));
    report.metrics.push(Metric::info("min_theta", min));
    let mut table = Table::new(&["x", "ensemble_mean", "stderr", "theta_bar"]);
    let mut x = [0.0; 3];
    for j in 0..n {
        grid.position(j, &mut x);
        table.push_numbers(&[x[0], acc[j].mean(), acc[j].stderr(), bar.values()[j]]);
    }
    report.tables.push(("mean_profile".into(), table));
    let ens = ScalarField::new(&grid, acc.iter().map(|a| a.mean()).collect())?;
    report.fields.push(("ensemble_mean".into(), FieldArtifact::Field(ens)));
    report.fields.push(("theta_bar".into(), FieldArtifact::Field(bar)));
    Ok(report)
}

fn scaling(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = cfg.covariance_spec()?;
    let base = cfg.torus()?;
    let dy = &cfg.dynamics;
    let st = &cfg.statistics;
    let ns = st.n_list.clone().unwrap_or_default();
    let alphas = st.alpha.clone().unwrap_or_default();
    let times = cfg.record_times(8);
    let d = base.dim() as f64;
    let mut table = Table::new(&["n", "alpha", "points", "dt", "mean_sup_norm", "stderr", "rescaled"]);
    // sups[i][a] holds the per-replica sup norms for n_i and alpha_a
    let mut sups: Vec<Vec<Vec<f64>>> = Vec::new();
    for &n in &ns {
        let (cov, dt_n) = rescaled_setup(&spec, &base, dy.dt, n)?;
        let solver = Solver::from_covariance(cov, dy.kappa, dt_n)?;
        let grid = solver.grid().clone();
        let phi = cfg.initial_field(&grid)?;
        let phi0 = solver.initial_state(&phi)?.theta;
        let means: Vec<ScalarField> =
            times.iter().map(|&t| mean_heat(&phi0, solver.diffusivity(), t)).collect::<Result<_>>()?;
        let per = map_replicas(st.replicas, |r| {
            let traj = solver.run(&phi, dy.horizon, key(cfg, ((n as u64) << 32) | r), &times)?;
            let mut out = vec![0.0f64; alphas.len()];
            for (f, m) in traj.fields.iter().zip(&means) {
                let diff = f.axpby(1.0, m, -1.0)?;
                for (o, &a) in out.iter_mut().zip(&alphas) {
                    *o = o.max(diff.sobolev_norm(-a, SobolevFlavor::Inhomogeneous));
                }
            }
            Ok(out)
        })?;
        let mut cols = Vec::new();
        for (ai, &a) in alphas.iter().enumerate() {
            let col: Vec<f64> = per.iter().map(|v| v[ai]).collect();
            let r: Running = col.iter().copied().collect();
            table.push_numbers(&[
                n as f64,
                a,
                grid.points() as f64,
                dt_n,
                r.mean(),
                r.stderr(),
                r.mean() * (n as f64).powf(d / 2.0),
            ]);
            cols.push(col);
        }
        sups.push(cols);
    }
    let tol = st.tolerance.unwrap_or(0.15);
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut report = ExperimentReport::new(cfg);
    let mut fits = Table::new(&["alpha", "slope", "ci_low", "ci_high", "intercept"]);
    for (ai, &a) in alphas.iter().enumerate() {
        let norms: Vec<Vec<f64>> = sups.iter().map(|c| c[ai].clone()).collect();
        let fit = scaling_fit(&nf, &norms, st.resamples.unwrap_or(1000), st.seed)?;
        report.metrics.push(Metric::within(&format!("slope_alpha_{a}"), fit.slope, -d / 2.0, tol));
        report.metrics.push(Metric::info(&format!("slope_ci_low_alpha_{a}"), fit.ci.0));
        report.metrics.push(Metric::info(&format!("slope_ci_high_alpha_{a}"), fit.ci.1));
        fits.push_numbers(&[a, fit.slope, fit.ci.0, fit.ci.1, fit.intercept]);
    }
    report.tables.push(("scaling".into(), table));
    report.tables.push(("scaling_fit".into(), fits));
    Ok(report)
}

/// Rescaled solver, initial data and test function shared by `qv` and `clt`.
struct Fluct {
    solver: Solver,
    phi: ScalarField,
    phi0: ScalarField,
    test: ScalarField,
    n: u32,
    scale: f64,
    limit: LimitSpec,
}

fn fluct_setup(cfg: &ExperimentConfig) -> Result<Fluct> {
    let spec = cfg.covariance_spec()?;
    let base = cfg.torus()?;
    let dy = &cfg.dynamics;
    let n = cfg.statistics.n.unwrap_or(1);
    let (cov, dt_n) = rescaled_setup(&spec, &base, dy.dt, n)?;
    let solver = Solver::from_covariance(cov, dy.kappa, dt_n)?;
    let grid = solver.grid().clone();
    let phi = cfg.initial_field(&grid)?;
    let phi0 = solver.initial_state(&phi)?.theta;
    let test = cfg.test_field(&grid)?;
    let veff = effective_variance(&spec, dy.kappa)?;
    let limit = LimitSpec::new(solver.diffusivity(), veff, phi0.clone())?;
    let scale = (n as f64).powf(grid.dim() as f64 / 2.0);
    Ok(Fluct { solver, phi, phi0, test, n, scale, limit })
}

fn qv(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let f = fluct_setup(cfg)?;
    let dy = &cfg.dynamics;
    let dt = f.solver.dt();
    let dd = f.solver.diffusivity();
    let lap = f.test.laplacian();
    let bar = MeanPairing::new(&f.phi0, &f.test, dd);
    let bar_lap = MeanPairing::new(&f.phi0, &lap, dd);
    let checkpoints = cfg.record_times(10);
    let check_steps: Vec<u64> = checkpoints.iter().map(|&t| steps_for(t, dt)).collect::<Result<_>>()?;
    let per = map_replicas(cfg.statistics.replicas, |r| {
        let mut acc = QvAccumulator::new();
        acc.push(0.0, 0.0, dt, dd);
        let mut out = Vec::with_capacity(check_steps.len());
        f.solver.run_with(&f.phi, dy.horizon, key(cfg, r), |state, _| {
            let t = state.time;
            let p = f.scale * (state.theta.inner(&f.test) - bar.at(t));
            let l = f.scale * (state.theta.inner(&lap) - bar_lap.at(t));
            acc.push(p, l, dt, dd);
            if check_steps.contains(&state.step) {
                out.push(acc.total());
            }
            Ok(())
        })?;
        Ok(out)
    })?;
    let tol = cfg.statistics.tolerance.unwrap_or(0.10);
    let mut table = Table::new(&["t", "mean_qv", "stderr", "qv_limit"]);
    let mut last = (0.0, 0.0, 0.0);
    for (k, &t) in checkpoints.iter().enumerate() {
        let r: Running = per.iter().map(|v| v[k]).collect();
        let target = f.limit.qv_limit(&f.test, t)?;
        table.push_numbers(&[t, r.mean(), r.stderr(), target]);
        last = (r.mean(), r.stderr(), target);
    }
    let mut report = ExperimentReport::new(cfg);
    report.metrics.push(Metric::relative("qv_at_horizon", last.0, last.2, tol));
    report.metrics.push(Metric::info("qv_stderr", last.1));
    report.metrics.push(Metric::info("n", f.n as f64));
    report.metrics.push(Metric::info("dt", dt));
    report.metrics.push(Metric::info("points", f.solver.grid().points() as f64));
    report.tables.push(("qv_curve".into(), table));
    Ok(report)
}

fn clt(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let f = fluct_setup(cfg)?;
    let t = cfg.dynamics.horizon;
    let bar = MeanPairing::new(&f.phi0, &f.test, f.solver.diffusivity()).at(t);
    let samples = map_replicas(cfg.statistics.replicas, |r| {
        let traj = f.solver.run(&f.phi, t, key(cfg, r), &[t])?;
        Ok(f.scale * (traj.fields[0].inner(&f.test) - bar))
    })?;
    let level = cfg.statistics.level.unwrap_or(0.01);
    let tol = cfg.statistics.tolerance.unwrap_or(0.10);
    let normal = normality_test(&samples)?;
    let target = f.limit.var_u(&f.test, t)?;
    let mut report = ExperimentReport::new(cfg);
    report.metrics.push(Metric::at_least("anderson_darling_p_value", normal.p_value, level));
    report.metrics.push(Metric::info("anderson_darling_statistic", normal.statistic));
    report.metrics.push(Metric::relative("variance_vs_var_u", variance(&samples), target, tol));
    report.metrics.push(Metric::info("variance_stderr", variance_stderr(&samples)));
    report.metrics.push(Metric::info("mean_pairing", crate::stats::mean(&samples)));
    report.metrics.push(Metric::info("n", f.n as f64));
    let mut table = Table::new(&["replica", "pairing"]);
    for (r, s) in samples.iter().enumerate() {
        table.push(vec![r.to_string(), num(*s)]);
    }
    report.tables.push(("pairings".into(), table));
    Ok(report)
}

fn corrpde(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = cfg.covariance_spec()?;
    let grid = cfg.torus()?;
    let dy = &cfg.dynamics;
    let st = &cfg.statistics;
    let t = dy.horizon;
    let solver = Solver::new(&spec, &grid, dy.kappa, dy.dt)?;
    let phi = cfg.initial_field(&grid)?;
    let phi0 = solver.initial_state(&phi)?.theta;
    let dd = solver.diffusivity();
    let dx = grid.spacing();
    let mut dt_pde = dy.dt;
    while dt_pde > dx * dx / (8.0 * dd) * (1.0 + 1e-12) {
        dt_pde /= 2.0;
    }
    let t_min = st.t_min.unwrap_or(0.05);
    let times = cfg.record_times(20);
    let pde = CorrelationSolver::new(&spec, &grid, dy.kappa, dt_pde, CrossWeight::Once)?.solve_s2(&phi0, t, &times)?;
    let doubled =
        CorrelationSolver::new(&spec, &grid, dy.kappa, dt_pde, CrossWeight::Doubled)?.solve_s2(&phi0, t, &[t])?;
    let m0 = pde.mass[0];
    let mass_drift = pde.mass.iter().map(|m| (m - m0).abs() / m0).fold(0.0, f64::max);

    let fields = map_replicas(st.replicas, |r| Ok(solver.run(&phi, t, key(cfg, r), &[t])?.fields.remove(0)))?;
    let mc = mc_s2(&fields)?;
    let last = pde.fields.last().ok_or(Error::EmptyTrajectory)?;
    let rel = st.tolerance.unwrap_or(0.05);
    let k = st.stderr_factor.unwrap_or(3.0);
    let once = compare_s2(&mc, last, rel, k, 0.01);
    let twice = compare_s2(&mc, &doubled.fields[0], rel, k, 0.01);
    let bar = mean_heat(&phi0, dd, t)?;
    let centered: Vec<ScalarField> = fields.iter().map(|f| f.axpby(1.0, &bar, -1.0)).collect::<Result<_>>()?;
    let mut cv = mc_s2(&centered)?;
    let b = bar.values();
    for (i, row) in cv.mean.chunks_mut(b.len()).enumerate() {
        row.iter_mut().zip(b).for_each(|(v, bj)| *v += b[i] * bj);
    }
    let centered_cmp = compare_s2(&cv, last, rel, k, 0.01);

    let candidates: Vec<f64> = [1.0, 1.25, 1.5, 2.0, 3.0, 4.0].iter().map(|m| m * 2.0 * dd).collect();
    let cap = st.bound_cap.unwrap_or(10.0);
    let bound = heat_kernel_bound_check(&pde, &phi0, &candidates, (t_min, t), cap)?;
    let mut inflated = pde.clone();
    for (f, &s) in inflated.fields.iter_mut().zip(&inflated.times) {
        f.iter_mut().for_each(|v| *v *= s.exp());
    }
    let control = bound_holds(&inflated, &phi0, bound.c, bound.constant, (t_min, t))?;

    let mut report = ExperimentReport::new(cfg);
    report.metrics.push(Metric::at_most("s2_failures", once.failures as f64, 0.0));
    report.metrics.push(Metric::info("s2_points", once.points as f64));
    report.metrics.push(Metric::info("s2_worst_ratio", once.worst_ratio));
    report.metrics.push(Metric::info("s2_max_relative", once.max_relative));
    report.metrics.push(Metric::info("s2_failures_centered_estimator", centered_cmp.failures as f64));
    report.metrics.push(Metric::info("s2_worst_ratio_centered_estimator", centered_cmp.worst_ratio));
    report.metrics.push(Metric::info("s2_failures_doubled_weight", twice.failures as f64));
    report.metrics.push(Metric::info("s2_worst_ratio_doubled_weight", twice.worst_ratio));
    report.metrics.push(Metric::at_most("s2_mass_drift", mass_drift, 1e-10));
    report.metrics.push(Metric::flag("bound_holds", bound.holds));
    report.metrics.push(Metric::info("bound_c", bound.c));
    report.metrics.push(Metric::at_most("bound_constant", bound.constant, cap));
    report.metrics.push(Metric::flag("negative_control_fails", !control));

    let n = grid.points();
    let mut slices = Table::new(&["x", "pde_diagonal", "mc_diagonal", "mc_diagonal_stderr", "pde_mid", "mc_mid"]);
    let mut x = [0.0; 1];
    for i in 0..n {
        grid.position(i, &mut x);
        let dgl = i * n + i;
        let mid = i * n + n / 2;
        slices.push_numbers(&[x[0], last[dgl], mc.mean[dgl], mc.stderr[dgl], last[mid], mc.mean[mid]]);
    }
    let mut fits = Table::new(&["c", "constant"]);
    for (c, cst) in &bound.fits {
        fits.push_numbers(&[*c, *cst]);
    }
    report.tables.push(("s2_slices".into(), slices));
    report.tables.push(("bound_fits".into(), fits));
    report.fields.push(("s2_pde".into(), FieldArtifact::Pair { base: grid.clone(), values: last.clone() }));
    report.fields.push(("s2_mc".into(), FieldArtifact::Pair { base: grid, values: mc.mean }));
    Ok(report)
}

/// `(1/N) sum_i f(i) f(i + m)` for every lag `m`.
fn autocorrelation(f: &ScalarField) -> Vec<f64> {
    let power: Vec<Complex64> = f.spectrum().iter().map(|c| Complex64::new(c.norm_sqr(), 0.0)).collect();
    f.grid().inverse_real(&power)
}

fn stationary(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = cfg.covariance_spec()?;
    let grid = cfg.torus()?;
    let dy = &cfg.dynamics;
    let st = &cfg.statistics;
    let solver = Solver::new(&spec, &grid, dy.kappa, dy.dt)?;
    let (m, obs, every) = (st.burn_in.unwrap_or(0.0), st.observe.unwrap_or(0.0), st.every.unwrap_or(0.0));
    let n = grid.points();
    let per = map_replicas(st.replicas, |r| {
        let traj = solver.run_stationary(m, obs, every, key(cfg, r))?;
        let mut prof = vec![0.0; n];
        let mut mean = 0.0;
        for f in &traj.fields {
            for (p, a) in prof.iter_mut().zip(autocorrelation(f)) {
                *p += a;
            }
            mean += f.integral() / grid.volume();
        }
        let c = traj.fields.len() as f64;
        prof.iter_mut().for_each(|p| *p /= c);
        Ok((prof, mean / c))
    })?;
    let mut acc = vec![Running::new(); n];
    for (p, _) in &per {
        for (a, v) in acc.iter_mut().zip(p) {
            a.push(*v);
        }
    }
    // symmetrize in the lag
    let prof: Vec<f64> = (0..n).map(|j| 0.5 * (acc[j].mean() + acc[(n - j) % n].mean())).collect();
    let w = spec.stationary_w_1d(dy.kappa)?.torus_normalized(grid.length());
    let dx = grid.spacing();
    let lag = |j: usize| j.min(n - j) as f64 * dx;
    let w0 = w.eval(0.0);
    let sup = (0..n).map(|j| (prof[j] - w.eval(lag(j))).abs()).fold(0.0, f64::max) / w0;
    let interp = |z: &[f64]| {
        let s = z[0].abs() / dx;
        let j = s.floor() as usize;
        let frac = s - j as f64;
        if j + 1 >= n / 2 {
            return prof[n / 2];
        }
        prof[j] * (1.0 - frac) + prof[j + 1] * frac
    };
    let v_sim = spec.veff_sq(Some(&interp))?[(0, 0)];
    let v_ref = spec.veff_sq(Some(&|z: &[f64]| w.eval(z[0])))?[(0, 0)];
    let tol = st.tolerance.unwrap_or(0.05);
    let space_mean: Running = per.iter().map(|p| p.1).collect();

    let mut report = ExperimentReport::new(cfg);
    report.metrics.push(Metric::relative("lag0_moment", prof[0], w0, tol));
    report.metrics.push(Metric::info("lag0_closed_form_line", (dy.kappa + spec.nu()) / dy.kappa));
    report.metrics.push(Metric::info("lag0_stderr", acc[0].stderr()));
    report.metrics.push(Metric::at_most("profile_sup_error", sup, 0.02));
    report.metrics.push(Metric::relative("veff_sq_from_profile", v_sim, v_ref, tol));
    report.metrics.push(Metric::info("space_mean", space_mean.mean()));
    let mut table = Table::new(&["lag", "empirical", "stderr", "closed_form"]);
    for j in 0..=n / 2 {
        table.push_numbers(&[lag(j), prof[j], acc[j].stderr(), w.eval(lag(j))]);
    }
    report.tables.push(("profile".into(), table));
    Ok(report)
}

fn msd(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = cfg.covariance_spec()?;
    let grid = cfg.torus()?;
    let dy = &cfg.dynamics;
    let st = &cfg.statistics;
    let times = cfg.record_times(10);
    let per_replica = st.particles.unwrap_or(100);
    let annealed = annealed_msd(&spec, &grid, dy.kappa, dy.dt, &times, st.replicas, per_replica, st.seed)?;
    let tol = st.tolerance.unwrap_or(0.05);

    let solver = Solver::new(&spec, &grid, dy.kappa, dy.dt)?;
    let phi = cfg.initial_field(&grid)?;
    let g = cfg.test_closure(&grid)?;
    let test = cfg.test_field(&grid)?;
    let count = st.quenched_particles.unwrap_or(20_000);
    let k = st.stderr_factor.unwrap_or(4.0);
    let paths = map_replicas(st.paths.unwrap_or(5), |p| {
        let key = key(cfg, (1u64 << 40) | p);
        let mut ens = ParticleEnsemble::from_density(&phi, count, dy.kappa, key)?;
        let end = solver.run_with(&phi, dy.horizon, key, |_, dw| ens.step(dw))?;
        let (est, se) = quenched_functional(&ens, |x| g(x));
        Ok((est, se, end.theta.inner(&test)))
    })?;

    let mut report = ExperimentReport::new(cfg);
    report.metrics.push(Metric::relative("msd_slope", annealed.slope, annealed.expected_slope, tol));
    report.metrics.push(Metric::info("msd_slope_stderr", annealed.slope_stderr));
    report.metrics.push(Metric::info("msd_samples", annealed.samples as f64));
    let mut quenched = Table::new(&["path", "particle_estimate", "particle_stderr", "field_pairing", "z"]);
    for (p, (est, se, field)) in paths.iter().enumerate() {
        let z = (est - field).abs() / se;
        report.metrics.push(Metric::at_most(&format!("quenched_path_{p}_z"), z, k));
        quenched.push_numbers(&[p as f64, *est, *se, *field, z]);
    }
    let mut table = Table::new(&["t", "msd", "stderr", "expected"]);
    for ((t, m), s) in annealed.times.iter().zip(&annealed.msd).zip(&annealed.stderr) {
        table.push_numbers(&[*t, *m, *s, annealed.expected_slope * t]);
    }
    report.tables.push(("msd".into(), table));
    report.tables.push(("quenched".into(), quenched));
    Ok(report)
}
