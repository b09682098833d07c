//! Retainability against log-time: `𝓡(t) ≈ b − a·ln t`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dynamics::{MetricKind, MetricSample};
use crate::{Depth, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FitError {
    #[error("need at least 3 points with distinct offsets >= 1, got {0}")]
    TooFewPoints(usize),
    #[error("all offsets are equal")]
    RankDeficient,
    #[error("decay constant must be positive for an x-intercept")]
    NonPositiveDecay,
    #[error("token count overflows u64")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t_offset: u64,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainCurve {
    pub scenario: Scenario,
    pub depth: Depth,
    pub points: Vec<CurvePoint>,
    pub tokens_per_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub stderr_a: f64,
    pub r_squared: f64,
    /// `b/a`; `None` unless `a > 0`.
    pub x_intercept_log_steps: Option<f64>,
    pub x_intercept_log_tokens: Option<f64>,
    pub n_points: usize,
}

impl FitResult {
    pub fn intercept_defined(&self) -> bool {
        self.x_intercept_log_steps.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Average 𝓡 across probes per offset, then fit once.
    MeanCurve,
    /// Fit each probe, then average the coefficients.
    PerProbeMean,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::MeanCurve => "mean_curve",
            Estimator::PerProbeMean => "per_probe_mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    /// Weight each point by its sample count.
    pub weighted: bool,
}

/// Least squares of `y` on `x` with optional weights. Returns
/// `(slope, intercept, stderr_slope, r²)`.
pub fn ols(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Result<(f64, f64, f64, f64), FitError> {
    let n = x.len();
    if n < 3 {
        return Err(FitError::TooFewPoints(n));
    }
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(weight).sum();
    let mx = (0..n).map(|i| weight(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| weight(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| weight(i) * (x[i] - mx) * (x[i] - mx)).sum();
    if sxx == 0.0 {
        return Err(FitError::RankDeficient);
    }
    if y.iter().all(|&v| v == y[0]) {
        // Rounding in the mean would otherwise leave a spurious slope.
        return Ok((0.0, y[0], 0.0, 0.0));
    }
    let sxy: f64 = (0..n).map(|i| weight(i) * (x[i] - mx) * (y[i] - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            weight(i) * r * r
        })
        .sum();
    let sst: f64 = (0..n).map(|i| weight(i) * (y[i] - my) * (y[i] - my)).sum();
    let r2 = if sst == 0.0 { 0.0 } else { 1.0 - sse / sst };
    let stderr = libm::sqrt(sse / (n as f64 - 2.0) / sxx);
    Ok((slope, intercept, stderr, r2))
}

/// `(log_steps, log_tokens)` where the fitted line reaches zero.
pub fn x_intercept(fit: &FitResult, tokens_per_step: u64) -> Result<(f64, f64), FitError> {
    if !(fit.a > 0.0) {
        return Err(FitError::NonPositiveDecay);
    }
    let log_steps = fit.b / fit.a;
    Ok((log_steps, log_steps + libm::log(tokens_per_step as f64)))
}

pub fn steps_to_tokens(steps: u64, rows: u64, seq_len: u64) -> Result<u64, FitError> {
    steps.checked_mul(rows).and_then(|x| x.checked_mul(seq_len)).ok_or(FitError::Overflow)
}

fn finish(a: f64, b: f64, stderr_a: f64, r_squared: f64, n_points: usize, tokens_per_step: u64) -> FitResult {
    let mut fit =
        FitResult { a, b, stderr_a, r_squared, x_intercept_log_steps: None, x_intercept_log_tokens: None, n_points };
    if let Ok((s, t)) = x_intercept(&fit, tokens_per_step) {
        fit.x_intercept_log_steps = Some(s);
        fit.x_intercept_log_tokens = Some(t);
    }
    fit
}

/// Fits `𝓡` against `ln t` over points with `t ≥ 1`.
pub fn fit_decay(curve: &RetainCurve, opts: FitOptions) -> Result<FitResult, FitError> {
    let pts: Vec<&CurvePoint> = curve.points.iter().filter(|p| p.t_offset >= 1).collect();
    let x: Vec<f64> = pts.iter().map(|p| libm::log(p.t_offset as f64)).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.mean).collect();
    let w: Vec<f64> = pts.iter().map(|p| p.count as f64).collect();
    let (slope, b, se, r2) = ols(&x, &y, opts.weighted.then_some(&w[..]))?;
    Ok(finish(-slope, b, se, r2, pts.len(), curve.tokens_per_step))
}

/// Mean retainability per offset over unfiltered samples of one group.
pub fn mean_curve(samples: &[MetricSample], scenario: Scenario, depth: Depth, tokens_per_step: u64) -> RetainCurve {
    let mut acc: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for m in samples {
        if m.kind == MetricKind::Retainability && !m.filtered && m.scenario == scenario && m.depth == depth {
            if let Some(t) = m.t_offset {
                acc.entry(t).or_default().push(m.value);
            }
        }
    }
    let points = acc
        .into_iter()
        .map(|(t_offset, mut v)| {
            v.sort_by(f64::total_cmp);
            CurvePoint { t_offset, mean: v.iter().sum::<f64>() / v.len() as f64, count: v.len() }
        })
        .collect();
    RetainCurve { scenario, depth, points, tokens_per_step }
}

/// Averages points into bins of equal width in `ln t`; each bin is placed at
/// the count-weighted geometric centre of its offsets, rounded.
pub fn log_binned(curve: &RetainCurve, bins_per_unit: f64) -> RetainCurve {
    let mut acc: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for p in curve.points.iter().filter(|p| p.t_offset >= 1) {
        let lt = libm::log(p.t_offset as f64);
        let e = acc.entry(libm::floor(lt * bins_per_unit) as i64).or_insert((0.0, 0.0, 0));
        e.0 += lt * p.count as f64;
        e.1 += p.mean * p.count as f64;
        e.2 += p.count;
    }
    let points = acc
        .into_values()
        .filter(|e| e.2 > 0)
        .map(|(slt, sy, c)| CurvePoint {
            t_offset: libm::round(libm::exp(slt / c as f64)).max(1.0) as u64,
            mean: sy / c as f64,
            count: c,
        })
        .collect();
    RetainCurve { points, ..curve.clone() }
}

/// Fits every probe of a group separately and averages the coefficients.
/// `stderr_a` is the standard error of the mean slope across probes.
pub fn fit_per_probe_mean(
    samples: &[MetricSample],
    scenario: Scenario,
    depth: Depth,
    tokens_per_step: u64,
) -> Result<FitResult, FitError> {
    let mut by_probe: BTreeMap<&str, Vec<(u64, f64)>> = BTreeMap::new();
    for m in samples {
        if m.kind == MetricKind::Retainability && !m.filtered && m.scenario == scenario && m.depth == depth {
            if let Some(t) = m.t_offset.filter(|&t| t >= 1) {
                by_probe.entry(&m.probe_id).or_default().push((t, m.value));
            }
        }
    }
    let mut fits = Vec::new();
    let mut used = 0;
    for pts in by_probe.values() {
        let x: Vec<f64> = pts.iter().map(|p| libm::log(p.0 as f64)).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let Ok(f) = ols(&x, &y, None) {
            fits.push(f);
            used += pts.len();
        }
    }
    if fits.is_empty() {
        return Err(FitError::TooFewPoints(0));
    }
    let n = fits.len() as f64;
    let a = fits.iter().map(|f| -f.0).sum::<f64>() / n;
    let b = fits.iter().map(|f| f.1).sum::<f64>() / n;
    let r2 = fits.iter().map(|f| f.3).sum::<f64>() / n;
    let se = if fits.len() > 1 {
        let var = fits.iter().map(|f| (-f.0 - a) * (-f.0 - a)).sum::<f64>() / (n - 1.0);
        libm::sqrt(var / n)
    } else {
        fits[0].2
    };
    Ok(finish(a, b, se, r2, used, tokens_per_step))
}

/// One fit-report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub scenario: Scenario,
    pub depth: Depth,
    pub estimator: Estimator,
    pub fit: FitResult,
}

/// Both estimators for every (scenario, depth) group that has enough data.
pub fn fit_all(samples: &[MetricSample], tokens_per_step: u64, opts: FitOptions) -> (Vec<FitRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for scenario in Scenario::ALL {
        for depth in Depth::ALL {
            let curve = mean_curve(samples, scenario, depth, tokens_per_step);
            match fit_decay(&curve, opts) {
                Ok(fit) => rows.push(FitRow { scenario, depth, estimator: Estimator::MeanCurve, fit }),
                Err(e) => skipped.push(alloc::format!("{scenario}/{depth} mean_curve: {e}")),
            }
            match fit_per_probe_mean(samples, scenario, depth, tokens_per_step) {
                Ok(fit) => rows.push(FitRow { scenario, depth, estimator: Estimator::PerProbeMean, fit }),
                Err(e) => skipped.push(alloc::format!("{scenario}/{depth} per_probe_mean: {e}")),
            }
        }
    }
    (rows, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(f: impl Fn(u64) -> f64, ts: impl Iterator<Item = u64>) -> RetainCurve {
        RetainCurve {
            scenario: Scenario::Duplication,
            depth: Depth::Memorization,
            points: ts.map(|t| CurvePoint { t_offset: t, mean: f(t), count: 1 }).collect(),
            tokens_per_step: 4096,
        }
    }

    #[test]
    fn exact_line_recovered() {
        let c = curve(|t| 1.0 - 0.2 * (t as f64).ln(), 1..=1000);
        let f = fit_decay(&c, FitOptions::default()).unwrap();
        assert!((f.a - 0.2).abs() < 1e-9);
        assert!((f.b - 1.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_curve_has_no_intercept() {
        let c = curve(|_| 0.7, 1..=50);
        let f = fit_decay(&c, FitOptions::default()).unwrap();
        assert!(f.a.abs() < 1e-12);
        assert_eq!(f.r_squared, 0.0);
        assert!(!f.intercept_defined());
    }

    #[test]
    fn offset_zero_excluded_and_degenerate_rejected() {
        let c = curve(|_| 1.0, [0, 5, 5, 5].into_iter());
        assert_eq!(fit_decay(&c, FitOptions::default()), Err(FitError::RankDeficient));
        let c = curve(|_| 1.0, [0, 1, 2].into_iter());
        assert_eq!(fit_decay(&c, FitOptions::default()), Err(FitError::TooFewPoints(2)));
    }

    #[test]
    fn intercept_closed_forms() {
        let f = finish(0.25, 1.0, 0.0, 1.0, 3, 4_194_304);
        let (s, t) = x_intercept(&f, 4_194_304).unwrap();
        assert_eq!(s, 4.0);
        assert!((s.exp() - 54.598).abs() < 1e-3);
        assert!((t - 19.25).abs() < 5e-3);
        let zero = finish(0.25, 0.0, 0.0, 1.0, 3, 1);
        assert_eq!(x_intercept(&zero, 1).unwrap().0, 0.0);
        assert_eq!(x_intercept(&finish(0.0, 1.0, 0.0, 0.0, 3, 1), 1), Err(FitError::NonPositiveDecay));
    }

    #[test]
    fn token_conversion() {
        assert_eq!(steps_to_tokens(1, 2048, 2048), Ok(4_194_304));
        assert_eq!(steps_to_tokens(1, 128, 2048), Ok(262_144));
        assert_eq!(steps_to_tokens(0, 2048, 2048), Ok(0));
        assert_eq!(steps_to_tokens(u64::MAX, 2, 1), Err(FitError::Overflow));
    }

    #[test]
    fn log_bins_keep_line() {
        let c = curve(|t| 1.0 - 0.2 * (t as f64).ln(), 1..=1000);
        let binned = log_binned(&c, 4.0);
        assert!(binned.points.len() < 40);
        let f = fit_decay(&binned, FitOptions { weighted: true }).unwrap();
        assert!((f.a - 0.2).abs() < 0.01);
    }
}
