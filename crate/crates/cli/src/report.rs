//! Summary tables, trend checks and plots over a run's artifacts.

use std::collections::BTreeMap;
use std::fmt::Write;

use factlab_core::acqsim::{SweepRow, Threshold};
use factlab_core::dynamics::{aggregate, GroupBy, GroupKey, GroupStat, MetricKind, MetricSample};
use factlab_core::forgetfit::{Estimator, FitRow};
use factlab_core::tracer::TraceRecord;
use factlab_core::{Depth, Scenario};

use crate::svg::{Plot, Series};

/// Minimum share of first-encounter memorization gains that must be
/// positive.
pub const FIRST_GAIN_SHARE: f64 = 0.9;
/// Minimum R² of the memorization retainability fit at desk scale.
pub const DESK_R2: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn by_scenario_depth(samples: &[MetricSample], kind: MetricKind) -> BTreeMap<(Scenario, Depth), GroupStat> {
    aggregate(samples, GroupBy { scenario: true, depth: true, ..Default::default() })
        .into_iter()
        .filter(|(k, _)| k.kind == kind)
        .map(|(k, v)| ((k.scenario.expect("grouped"), k.depth.expect("grouped")), v))
        .collect()
}

/// Mean effectivity by (scenario, depth) over all encounters, filtered
/// samples excluded.
pub fn mean_effectivity(samples: &[MetricSample]) -> BTreeMap<(Scenario, Depth), GroupStat> {
    by_scenario_depth(samples, MetricKind::Effectivity)
}

/// Mean effectivity by (scenario, depth, encounter).
pub fn effectivity_by_encounter(samples: &[MetricSample]) -> BTreeMap<GroupKey, GroupStat> {
    aggregate(samples, GroupBy { scenario: true, depth: true, encounter: true, t_offset: false })
        .into_iter()
        .filter(|(k, _)| k.kind == MetricKind::Effectivity)
        .collect()
}

/// Share of probes whose first-encounter memorization effectivity is
/// positive; every defined sample counts, outliers included.
pub fn first_gain_share(samples: &[MetricSample]) -> (usize, usize) {
    let first: Vec<f64> = samples
        .iter()
        .filter(|m| m.kind == MetricKind::Effectivity && m.depth == Depth::Memorization && m.encounter_index == 0)
        .map(|m| m.value)
        .filter(|v| v.is_finite())
        .collect();
    (first.iter().filter(|&&v| v > 0.0).count(), first.len())
}

pub fn find_fit(fits: &[FitRow], scenario: Scenario, depth: Depth, est: Estimator) -> Option<&FitRow> {
    fits.iter().find(|r| r.scenario == scenario && r.depth == depth && r.estimator == est)
}

/// Qualitative desk-scale trend checks.
pub fn desk_checks(samples: &[MetricSample], fits: &[FitRow]) -> Vec<Check> {
    let eff = mean_effectivity(samples);
    let mean = |s, d| eff.get(&(s, d)).map(|g| g.mean).unwrap_or(f64::NAN);
    let (pos, total) = first_gain_share(samples);
    let share = if total > 0 { pos as f64 / total as f64 } else { 0.0 };

    let (dm, ds, dc) = (
        mean(Scenario::Duplication, Depth::Memorization),
        mean(Scenario::Duplication, Depth::Semantic),
        mean(Scenario::Duplication, Depth::Composition),
    );
    let (pm, ps) = (mean(Scenario::Paraphrase, Depth::Memorization), mean(Scenario::Paraphrase, Depth::Semantic));

    let fit = find_fit(fits, Scenario::Duplication, Depth::Memorization, Estimator::MeanCurve);
    let (fit_ok, fit_detail) = match fit {
        Some(r) => (
            r.fit.a > 0.0 && r.fit.r_squared >= DESK_R2,
            format!("a = {:.4} ± {:.4}, R² = {:.3} over {} offsets", r.fit.a, r.fit.stderr_a, r.fit.r_squared, r.fit.n_points),
        ),
        None => (false, "no fit".into()),
    };

    vec![
        Check {
            name: "first-encounter memorization gain is positive for ≥90% of probes",
            passed: total > 0 && share >= FIRST_GAIN_SHARE,
            detail: format!("{pos}/{total} = {:.1}%", 100.0 * share),
        },
        Check {
            name: "duplication effectivity: memorization ≥ semantic ≥ composition",
            passed: dm >= ds && ds >= dc,
            detail: format!("{dm:.4} / {ds:.4} / {dc:.4}"),
        },
        Check {
            name: "duplication memorization retainability falls with log-time (R² ≥ 0.6)",
            passed: fit_ok,
            detail: fit_detail,
        },
        Check {
            name: "memorization effectivity: duplication ≥ paraphrase",
            passed: dm >= pm,
            detail: format!("{dm:.4} vs {pm:.4}"),
        },
        Check {
            name: "memorization−semantic gap smaller under paraphrase",
            passed: (pm - ps) < (dm - ds),
            detail: format!("paraphrase {:.4} vs duplication {:.4}", pm - ps, dm - ds),
        },
    ]
}

/// Mean ℓ per (depth, step) for one scenario.
pub fn mean_trajectories(records: &[TraceRecord], scenario: Scenario) -> BTreeMap<Depth, Vec<(u64, f64)>> {
    let mut acc: BTreeMap<(Depth, u64), (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.scenario == scenario) {
        let e = acc.entry((r.depth, r.step)).or_insert((0.0, 0));
        e.0 += r.logprob_sum;
        e.1 += 1;
    }
    let mut out: BTreeMap<Depth, Vec<(u64, f64)>> = BTreeMap::new();
    for ((d, t), (s, n)) in acc {
        out.entry(d).or_default().push((t, s / n as f64));
    }
    out
}

pub fn trajectory_plot(records: &[TraceRecord], scenario: Scenario, injections: &[u64]) -> Plot {
    Plot {
        title: format!("Mean probe log-probability, {scenario} scenario"),
        x_label: "training step".into(),
        y_label: "mean log-probability of target span".into(),
        series: mean_trajectories(records, scenario)
            .into_iter()
            .map(|(d, pts)| Series { name: d.to_string(), points: pts.into_iter().map(|(t, v)| (t as f64, v)).collect() })
            .collect(),
        marks: injections.iter().map(|&t| t as f64).collect(),
    }
}

pub fn retainability_plot(samples: &[MetricSample], scenario: Scenario) -> Plot {
    let stats = aggregate(samples, GroupBy { scenario: true, depth: true, encounter: false, t_offset: true });
    let mut series: BTreeMap<Depth, Vec<(f64, f64)>> = BTreeMap::new();
    for (k, v) in stats {
        if k.kind == MetricKind::Retainability && k.scenario == Some(scenario) {
            if let (Some(d), Some(t)) = (k.depth, k.t_offset) {
                if t >= 1 {
                    series.entry(d).or_default().push(((t as f64).ln(), v.mean));
                }
            }
        }
    }
    Plot {
        title: format!("Retainability after the last encounter, {scenario} scenario"),
        x_label: "ln(steps since last encounter)".into(),
        y_label: "mean retainability".into(),
        series: series.into_iter().map(|(d, points)| Series { name: d.to_string(), points }).collect(),
        marks: Vec::new(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into())
}

/// Inputs for [`render_markdown`].
pub struct ReportInputs<'a> {
    pub samples: &'a [MetricSample],
    pub fits: &'a [FitRow],
    pub sweep: &'a [SweepRow],
    pub zipf: &'a [(usize, u64, bool, bool)],
    pub zipf_buckets: usize,
    pub tokens_per_step: u64,
    pub plots: &'a [String],
}

pub fn render_markdown(inp: &ReportInputs<'_>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Knowledge acquisition report\n");
    let _ = writeln!(s, "Tokens per step: {}\n", inp.tokens_per_step);

    let _ = writeln!(s, "## Effectivity by scenario and depth\n");
    let _ = writeln!(s, "Mean log-probability gain from the step before an injection to its local maximum, all encounters, outliers removed.\n");
    let _ = writeln!(s, "| scenario | depth | mean | stderr | n |");
    let _ = writeln!(s, "|---|---|---:|---:|---:|");
    for ((sc, d), g) in mean_effectivity(inp.samples) {
        let _ = writeln!(s, "| {sc} | {d} | {:.4} | {:.4} | {} |", g.mean, g.stderr, g.count);
    }

    let _ = writeln!(s, "\n## Effectivity by encounter\n");
    let _ = writeln!(s, "| scenario | depth | encounter | mean | stderr | n |");
    let _ = writeln!(s, "|---|---|---:|---:|---:|---:|");
    for (k, g) in effectivity_by_encounter(inp.samples) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.4} | {:.4} | {} |",
            k.scenario.expect("grouped"),
            k.depth.expect("grouped"),
            k.encounter_index.expect("grouped") + 1,
            g.mean,
            g.stderr,
            g.count
        );
    }

    let _ = writeln!(s, "\n## Decay constants of mean retainability\n");
    let _ = writeln!(s, "Fit of retainability against ln(t); a is the negative slope, the x-intercept is where the improvement is fully lost.\n");
    let _ = writeln!(s, "| scenario | depth | estimator | a | stderr | R² | x-intercept ln(steps) | x-intercept ln(tokens) | points |");
    let _ = writeln!(s, "|---|---|---|---:|---:|---:|---:|---:|---:|");
    for r in inp.fits {
        let f = &r.fit;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.4} | {:.4} | {:.3} | {} | {} | {} |",
            r.scenario,
            r.depth,
            r.estimator.as_str(),
            f.a,
            f.stderr_a,
            f.r_squared,
            fmt_opt(f.x_intercept_log_steps),
            fmt_opt(f.x_intercept_log_tokens),
            f.n_points
        );
    }

    let _ = writeln!(s, "\n## Desk-scale trend checks\n");
    for c in desk_checks(inp.samples, inp.fits) {
        let _ = writeln!(s, "- [{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }

    if !inp.sweep.is_empty() {
        let _ = writeln!(s, "\n## Learnability thresholds\n");
        let _ = writeln!(s, "| jump | decay | threshold interval |");
        let _ = writeln!(s, "|---:|---:|---|");
        let mut seen = Vec::new();
        for r in inp.sweep {
            if seen.contains(&(r.jump.to_bits(), r.decay.to_bits())) {
                continue;
            }
            seen.push((r.jump.to_bits(), r.decay.to_bits()));
            let t = match r.threshold {
                Threshold::Unbounded => "unbounded".to_string(),
                Threshold::Unlearnable => "unlearnable".to_string(),
                Threshold::Interval(d) => d.to_string(),
            };
            let _ = writeln!(s, "| {} | {} | {t} |", r.jump, r.decay);
        }
    }

    if !inp.zipf.is_empty() && inp.zipf_buckets > 0 {
        let _ = writeln!(s, "\n## Long-tail popularity\n");
        let _ = writeln!(s, "| rank bucket | ranks | learned | predicted |");
        let _ = writeln!(s, "|---:|---|---:|---:|");
        let n = inp.zipf.len();
        for b in 0..inp.zipf_buckets {
            let (lo, hi) = (b * n / inp.zipf_buckets, (b + 1) * n / inp.zipf_buckets);
            if hi <= lo {
                continue;
            }
            let rows = &inp.zipf[lo..hi];
            let learned = rows.iter().filter(|r| r.2).count() as f64 / rows.len() as f64;
            let predicted = rows.iter().filter(|r| r.3).count() as f64 / rows.len() as f64;
            let _ = writeln!(s, "| {} | {}–{} | {:.2} | {:.2} |", b + 1, lo + 1, hi, learned, predicted);
        }
    }

    if !inp.plots.is_empty() {
        let _ = writeln!(s, "\n## Plots\n");
        for p in inp.plots {
            let _ = writeln!(s, "- [{p}]({p})");
        }
    }
    s
}
