//! Fluctuation fields, scaling fits, quadratic variation and normality.

use rand::Rng;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::rng::{Purpose, StreamKey};
use crate::spde::Trajectory;
use crate::stats::{linear_fit, mean, quantile, variance};

/// `X_n(t) = n^{d/2} (theta_n(t) - theta_bar(t))` at the recorded times.
#[derive(Debug, Clone)]
pub struct FluctuationSample {
    pub n: u32,
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
}

impl FluctuationSample {
    /// `<X_n(t_k), phi>` for every recorded time.
    pub fn pairings(&self, phi: &ScalarField) -> Vec<f64> {
        self.fields.iter().map(|f| f.inner(phi)).collect()
    }
}

/// Builds `X_n` from a trajectory and the mean trajectory on the same times.
pub fn x_n(traj: &Trajectory, mean_traj: &Trajectory, n: u32) -> Result<FluctuationSample> {
    if traj.times.len() != mean_traj.times.len()
        || traj.times.iter().zip(&mean_traj.times).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(Error::TimeMismatch("trajectory and mean are recorded at different times".into()));
    }
    let mut fields = Vec::with_capacity(traj.fields.len());
    for (f, m) in traj.fields.iter().zip(&mean_traj.fields) {
        let scale = (n as f64).powf(f.grid().dim() as f64 / 2.0);
        fields.push(f.axpby(scale, m, -scale)?);
    }
    Ok(FluctuationSample { n, times: traj.times.clone(), fields })
}

/// Log-log slope with a bootstrap confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% percentile interval.
    pub ci: (f64, f64),
    pub means: Vec<f64>,
}

/// Fits `log E[norm] = a + b log n`, where `norms[i]` holds replica samples
/// at `ns[i]`. The CI resamples replicas within every `n`.
pub fn scaling_fit(ns: &[f64], norms: &[Vec<f64>], resamples: usize, seed: u64) -> Result<ScalingFit> {
    if ns.len() != norms.len() {
        return Err(Error::SizeMismatch { expected: ns.len(), got: norms.len() });
    }
    let mut distinct = ns.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateInput("need at least 3 distinct n".into()));
    }
    if ns.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::DegenerateInput("n must be positive".into()));
    }
    if norms.iter().any(|v| v.is_empty() || v.iter().any(|&x| !(x > 0.0) || !x.is_finite())) {
        return Err(Error::DegenerateInput("norms must be positive and finite".into()));
    }
    let logn: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let means: Vec<f64> = norms.iter().map(|v| mean(v)).collect();
    let logm: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let (intercept, slope) = linear_fit(&logn, &logm);
    let mut slopes = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut rng = StreamKey::new(seed, b as u64, Purpose::Bootstrap).rng(0);
        let lm: Vec<f64> = norms
            .iter()
            .map(|v| {
                let s: f64 = (0..v.len()).map(|_| v[rng.gen_range(0..v.len())]).sum();
                (s / v.len() as f64).ln()
            })
            .collect();
        slopes.push(linear_fit(&logn, &lm).1);
    }
    let ci = if slopes.is_empty() { (slope, slope) } else { (quantile(&slopes, 0.025), quantile(&slopes, 0.975)) };
    Ok(ScalingFit { slope, intercept, ci, means })
}

/// Cumulative quadratic variation of the martingale part of a pairing:
/// `sum_m (P_{m+1} - P_m - dt D L_m)^2`, where `P_m = <X(t_m), phi>` and
/// `L_m = <X(t_m), Lap phi>`. Entry `k` covers `[t_0, t_k]`.
pub fn qv_estimate(times: &[f64], pairing: &[f64], pairing_lap: &[f64], diffusivity: f64) -> Result<Vec<f64>> {
    if times.len() != pairing.len() || times.len() != pairing_lap.len() {
        return Err(Error::SizeMismatch { expected: times.len(), got: pairing.len().min(pairing_lap.len()) });
    }
    if times.len() < 2 {
        return Ok(vec![0.0; times.len()]);
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
        return Err(Error::NonUniformTimes);
    }
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    out.push(0.0);
    for m in 0..times.len() - 1 {
        let inc = pairing[m + 1] - pairing[m] - dt * diffusivity * pairing_lap[m];
        acc += inc * inc;
        out.push(acc);
    }
    Ok(out)
}

/// Streaming form of [`qv_estimate`] for use inside a time loop.
#[derive(Debug, Clone, Default)]
pub struct QvAccumulator {
    last: Option<(f64, f64)>,
    total: f64,
}

impl QvAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds `(P_m, L_m)` at consecutive steps of size `dt`.
    pub fn push(&mut self, pairing: f64, pairing_lap: f64, dt: f64, diffusivity: f64) {
        if let Some((p, l)) = self.last {
            let inc = pairing - p - dt * diffusivity * l;
            self.total += inc * inc;
        }
        self.last = Some((pairing, pairing_lap));
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Anderson-Darling test for normality with estimated mean and variance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormalityResult {
    /// Modified statistic `A*^2 = A^2 (1 + 0.75/n + 2.25/n^2)`.
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
}

impl NormalityResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

fn log_norm_cdf(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

pub fn normality_test(samples: &[f64]) -> Result<NormalityResult> {
    let n = samples.len();
    if n < 8 {
        return Err(Error::TooFewSamples { needed: 8, got: n });
    }
    let m = mean(samples);
    let s = variance(samples).sqrt();
    if !(s > 0.0) || s <= 1e-14 * m.abs() {
        return Err(Error::DegenerateSample);
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - m) / s).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let w = (2 * i + 1) as f64;
        acc += w * (log_norm_cdf(z[i]) + log_norm_cdf(-z[n - 1 - i]));
    }
    let a2 = -nf - acc / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    Ok(NormalityResult { statistic: a, p_value: p.clamp(0.0, 1.0), samples: n })
}

/// Mean squared increments `E|P(t + h) - P(t)|^2` for dyadic lags `h`,
/// averaged over start times and replicas, with the fitted `(C, delta)` of
/// `C h^delta`.
#[derive(Debug, Clone, Serialize)]
pub struct IncrementScaling {
    pub lags: Vec<f64>,
    pub moments: Vec<f64>,
    pub constant: f64,
    pub delta: f64,
}

pub fn increment_scaling(series: &[Vec<f64>], dt: f64, max_lag_steps: usize) -> Result<IncrementScaling> {
    if series.is_empty() || series[0].len() < 3 {
        return Err(Error::EmptyTrajectory);
    }
    let len = series[0].len();
    let mut lags = Vec::new();
    let mut moments = Vec::new();
    let mut h = 1;
    while h <= max_lag_steps && h < len {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for s in series {
            for t in (0..len - h).step_by(h) {
                acc += (s[t + h] - s[t]).powi(2);
                cnt += 1;
            }
        }
        lags.push(h as f64 * dt);
        moments.push(acc / cnt as f64);
        h *= 2;
    }
    if lags.len() < 2 || moments.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::DegenerateInput("need two lags with positive moments".into()));
    }
    let ll: Vec<f64> = lags.iter().map(|v| v.ln()).collect();
    let lm: Vec<f64> = moments.iter().map(|v| v.ln()).collect();
    let (a, b) = linear_fit(&ll, &lm);
    Ok(IncrementScaling { lags, moments, constant: a.exp(), delta: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use rand_distr::{Distribution, StandardNormal};

    fn traj(grid: &TorusGrid, vals: &[f64], times: &[f64]) -> Trajectory {
        Trajectory {
            times: times.to_vec(),
            fields: times.iter().map(|_| ScalarField::new(grid, vals.to_vec()).unwrap()).collect(),
            diagnostics: vec![],
        }
    }

    #[test]
    fn x_n_basics() {
        let grid = TorusGrid::new(1, 8, 1.0).unwrap();
        let a = traj(&grid, &[1.0; 8], &[0.0, 0.5]);
        let z = x_n(&a, &a, 4).unwrap();
        assert!(z.fields.iter().all(|f| f.sup_norm() == 0.0));
        let b = traj(&grid, &[3.0; 8], &[0.0, 0.5]);
        let y = x_n(&b, &a, 4).unwrap();
        assert_eq!(y.fields[1].values()[3], 2.0 * 2.0);
        let c = traj(&grid, &[1.0; 8], &[0.0, 0.6]);
        assert!(matches!(x_n(&b, &c, 4), Err(Error::TimeMismatch(_))));
    }

    #[test]
    fn exact_power_law_slope() {
        let ns = [2.0, 4.0, 8.0, 16.0];
        let norms: Vec<Vec<f64>> = ns.iter().map(|n: &f64| vec![3.0 * n.powf(-0.5)]).collect();
        let fit = scaling_fit(&ns, &norms, 0, 1).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law_slope() {
        let ns = [2.0, 4.0, 8.0];
        let mut rng = StreamKey::new(5, 0, Purpose::Calibration).rng(0);
        let norms: Vec<Vec<f64>> = ns
            .iter()
            .map(|n: &f64| {
                (0..50)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        n.powf(-0.5) * (1.0 + 0.05 * z)
                    })
                    .collect()
            })
            .collect();
        let fit = scaling_fit(&ns, &norms, 500, 2).unwrap();
        assert!((fit.slope + 0.5).abs() < 0.1);
        assert!(fit.ci.0 < fit.slope && fit.slope < fit.ci.1);
        assert!(matches!(scaling_fit(&[2.0, 2.0, 2.0], &norms, 0, 1), Err(Error::DegenerateInput(_))));
        let zero = vec![vec![0.0], vec![1.0], vec![1.0]];
        assert!(matches!(scaling_fit(&ns, &zero, 0, 1), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn qv_noise_free_and_additivity() {
        let d = 0.7;
        let dt = 1e-3;
        let times: Vec<f64> = (0..=200).map(|m| m as f64 * dt).collect();
        // P' = D L with L = -P: P = exp(-D t)
        let p: Vec<f64> = times.iter().map(|t| (-d * t).exp()).collect();
        let l: Vec<f64> = p.iter().map(|v| -v).collect();
        let qv = qv_estimate(&times, &p, &l, d).unwrap();
        assert!(qv[200] < 200.0 * (d * dt).powi(4));
        // telescoping
        let mut rng = StreamKey::new(6, 0, Purpose::Calibration).rng(0);
        let q: Vec<f64> = (0..=200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lq: Vec<f64> = q.iter().map(|v| 0.3 * v).collect();
        let full = qv_estimate(&times, &q, &lq, d).unwrap();
        let first = qv_estimate(&times[..101], &q[..101], &lq[..101], d).unwrap();
        let second = qv_estimate(&times[100..], &q[100..], &lq[100..], d).unwrap();
        assert!((full[200] - first[100] - second[100]).abs() < 1e-12 * full[200]);
        let mut acc = QvAccumulator::new();
        for m in 0..=200 {
            acc.push(q[m], lq[m], dt, d);
        }
        assert_eq!(acc.total(), full[200]);
        let mut bad = times.clone();
        bad[5] += 1e-4;
        assert!(matches!(qv_estimate(&bad, &q, &lq, d), Err(Error::NonUniformTimes)));
    }

    #[test]
    fn qv_of_brownian_pairing() {
        // P = sigma B with L = 0: QV(T) -> sigma^2 T
        let dt: f64 = 1e-3;
        let sigma: f64 = 0.8;
        let times: Vec<f64> = (0..=1000).map(|m| m as f64 * dt).collect();
        let mut rng = StreamKey::new(8, 0, Purpose::Calibration).rng(0);
        let mut p = vec![0.0];
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            p.push(p.last().unwrap() + sigma * dt.sqrt() * z);
        }
        let qv = qv_estimate(&times, &p, &vec![0.0; 1001], 1.0).unwrap();
        // relative sd sqrt(2/1000)
        assert!((qv[1000] / (sigma * sigma) - 1.0).abs() < 4.0 * (2.0f64 / 1000.0).sqrt());
    }

    #[test]
    fn anderson_darling_calibration() {
        let mut rejections = 0;
        for rep in 0..200 {
            let mut rng = StreamKey::new(10, rep, Purpose::Calibration).rng(0);
            let x: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            if !normality_test(&x).unwrap().passes(0.01) {
                rejections += 1;
            }
        }
        // Binomial(200, 0.01): P(X >= 8) < 1e-3
        assert!(rejections <= 7, "{rejections}");
        let mut rng = StreamKey::new(11, 0, Purpose::Calibration).rng(0);
        let u: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        assert!(normality_test(&u).unwrap().p_value < 1e-3);
        assert!(matches!(normality_test(&[2.0; 200]), Err(Error::DegenerateSample)));
    }

    #[test]
    fn anderson_darling_known_statistic() {
        // scipy.stats.anderson (unmodified A^2, ddof = 1)
        let x = [-1.2, -0.4, 0.1, 0.3, 0.9, 1.6, -0.7, 0.05, 2.1, -1.9];
        let r = normality_test(&x).unwrap();
        let n = 10.0;
        let a2 = r.statistic / (1.0 + 0.75 / n + 2.25 / (n * n));
        assert!((a2 - A2_ORACLE).abs() < 1e-10, "{a2}");
    }

    const A2_ORACLE: f64 = 0.13496490053547738;

    #[test]
    fn increment_trend() {
        let dt: f64 = 1e-3;
        let mut series = Vec::new();
        for r in 0..20 {
            let mut rng = StreamKey::new(12, r, Purpose::Calibration).rng(0);
            let mut p = vec![0.0];
            for _ in 0..512 {
                let z: f64 = StandardNormal.sample(&mut rng);
                p.push(p.last().unwrap() + dt.sqrt() * z);
            }
            series.push(p);
        }
        let inc = increment_scaling(&series, dt, 64).unwrap();
        assert!((inc.delta - 1.0).abs() < 0.15);
        assert!(inc.moments.windows(2).all(|w| w[1] > w[0]));
    }
}
