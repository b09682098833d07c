//! Acquisition metrics over probe log-probability series: local acquisition
//! maxima, effectivity and retainability, plus IQR filtering and grouped
//! means.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tracer::TraceRecord;
use crate::{Depth, Scenario};

pub const DEFAULT_IQR_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DynError {
    #[error("probe {probe}: no value at step {step}")]
    MissingStep { probe: String, step: u64 },
    #[error("probe {probe}: encounter {index} out of range")]
    NoEncounter { probe: String, index: usize },
    #[error("probe {0}: no step before the first injection")]
    NoBaseline(String),
    #[error("probe {0}: zero retainability denominator")]
    ZeroDenominator(String),
    #[error("empty group")]
    EmptyGroup,
}

/// One probe's `(step, ℓ)` series with its injection steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSeries {
    pub probe_id: String,
    pub knowledge_id: String,
    pub depth: Depth,
    pub scenario: Scenario,
    /// Strictly increasing steps.
    pub points: Vec<(u64, f64)>,
    pub injection_steps: Vec<u64>,
    pub window: u64,
}

/// Location of a local acquisition maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lam {
    pub step: u64,
    /// The window was cut short by the next injection.
    pub truncated: bool,
}

impl ProbeSeries {
    pub fn value_at(&self, step: u64) -> Option<f64> {
        self.points.binary_search_by_key(&step, |p| p.0).ok().map(|i| self.points[i].1)
    }

    fn need(&self, step: u64) -> Result<f64, DynError> {
        self.value_at(step).ok_or_else(|| DynError::MissingStep { probe: self.probe_id.clone(), step })
    }

    pub fn last_step(&self) -> Option<u64> {
        self.points.last().map(|p| p.0)
    }

    /// `t_pre = min(T_k) − 1`.
    pub fn t_pre(&self) -> Result<u64, DynError> {
        match self.injection_steps.first() {
            Some(&t) if t > 0 => Ok(t - 1),
            _ => Err(DynError::NoBaseline(self.probe_id.clone())),
        }
    }

    /// Window end for encounter `i`: `t_i + t_w`, capped at the next
    /// injection step.
    fn window_end(&self, i: usize) -> Result<(u64, u64, bool), DynError> {
        let t_i = *self
            .injection_steps
            .get(i)
            .ok_or_else(|| DynError::NoEncounter { probe: self.probe_id.clone(), index: i })?;
        let mut end = t_i + self.window;
        let mut truncated = false;
        if let Some(&next) = self.injection_steps.get(i + 1) {
            if next < end {
                end = next;
                truncated = true;
            }
        }
        Ok((t_i, end, truncated))
    }

    pub fn lam(&self, i: usize) -> Result<Lam, DynError> {
        let (t_i, end, truncated) = self.window_end(i)?;
        let mut best: Option<(u64, f64)> = None;
        for t in t_i + 1..=end {
            let v = self.need(t)?;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        let (step, _) = best.expect("window is nonempty");
        Ok(Lam { step, truncated })
    }
}

/// Groups trace records into per-probe series sharing one schedule per
/// scenario.
pub fn series_from_records(
    records: &[TraceRecord],
    injection_steps: &BTreeMap<Scenario, Vec<u64>>,
    window: u64,
) -> Vec<ProbeSeries> {
    let mut by_probe: BTreeMap<&str, ProbeSeries> = BTreeMap::new();
    for r in records {
        let s = by_probe.entry(&r.probe_id).or_insert_with(|| ProbeSeries {
            probe_id: r.probe_id.clone(),
            knowledge_id: r.knowledge_id.clone(),
            depth: r.depth,
            scenario: r.scenario,
            points: Vec::new(),
            injection_steps: injection_steps.get(&r.scenario).cloned().unwrap_or_default(),
            window,
        });
        s.points.push((r.step, r.logprob_sum));
    }
    let mut out: Vec<ProbeSeries> = by_probe.into_values().collect();
    for s in &mut out {
        s.points.sort_by_key(|p| p.0);
        s.points.dedup_by_key(|p| p.0);
    }
    out
}

/// `t_LAM(q, i)`: argmax of ℓ over `(t_i, t_i + t_w]`, earliest on ties.
pub fn local_acquisition_maxima(s: &ProbeSeries, i: usize) -> Result<u64, DynError> {
    Ok(s.lam(i)?.step)
}

/// `ℓ(θ_LAM) − ℓ(θ_{t_i})`.
pub fn effectivity(s: &ProbeSeries, i: usize) -> Result<f64, DynError> {
    let lam = s.lam(i)?;
    Ok(s.need(lam.step)? - s.need(s.injection_steps[i])?)
}

/// `(ℓ(LAM_N + t) − ℓ(t_pre)) / (ℓ(LAM_N) − ℓ(t_pre))`.
pub fn retainability(s: &ProbeSeries, t: u64) -> Result<f64, DynError> {
    let n = s.injection_steps.len().checked_sub(1).ok_or(DynError::NoEncounter { probe: s.probe_id.clone(), index: 0 })?;
    let lam = s.lam(n)?.step;
    let base = s.need(s.t_pre()?)?;
    let den = s.need(lam)? - base;
    if den == 0.0 {
        return Err(DynError::ZeroDenominator(s.probe_id.clone()));
    }
    if t == 0 {
        return Ok(1.0);
    }
    Ok((s.need(lam + t)? - base) / den)
}

/// Quantile by linear interpolation between order statistics (position
/// `q·(n−1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqrOutcome {
    /// Kept values in input order.
    pub kept: Vec<f64>,
    /// Per input value: inside the fences.
    pub mask: Vec<bool>,
    /// Fewer than four values; nothing was filtered.
    pub too_few: bool,
}

/// Keeps values inside `[Q1 − f·IQR, Q3 + f·IQR]`.
pub fn iqr_filter(values: &[f64], factor: f64) -> IqrOutcome {
    if values.len() < 4 {
        return IqrOutcome { kept: values.to_vec(), mask: alloc::vec![true; values.len()], too_few: true };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - factor * iqr, q3 + factor * iqr);
    let mask: Vec<bool> = values.iter().map(|&v| v >= lo && v <= hi).collect();
    let kept = values.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    IqrOutcome { kept, mask, too_few: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Effectivity,
    Retainability,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Effectivity => "effectivity",
            MetricKind::Retainability => "retainability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub kind: MetricKind,
    pub scenario: Scenario,
    pub depth: Depth,
    pub probe_id: String,
    /// Encounter index `i` (effectivity) or the last encounter (retainability).
    pub encounter_index: usize,
    pub t_offset: Option<u64>,
    /// NaN when the sample is undefined (zero denominator).
    pub value: f64,
    /// Excluded by the IQR filter or undefined.
    pub filtered: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricTable {
    pub samples: Vec<MetricSample>,
    /// Probes dropped from retainability for want of acquisition.
    pub zero_denominator: usize,
    /// Probes whose window was cut by the next injection.
    pub truncated_windows: usize,
    /// Groups too small to filter.
    pub unfiltered_groups: usize,
}

/// Computes every effectivity and retainability sample, then applies IQR
/// filtering per (kind, scenario, depth, encounter) and per
/// (kind, scenario, depth, offset) respectively.
pub fn compute_metrics(series: &[ProbeSeries], iqr_factor: f64) -> Result<MetricTable, DynError> {
    let mut table = MetricTable::default();
    for s in series {
        if s.injection_steps.is_empty() {
            continue;
        }
        for i in 0..s.injection_steps.len() {
            if s.lam(i)?.truncated {
                table.truncated_windows += 1;
            }
            table.samples.push(MetricSample {
                kind: MetricKind::Effectivity,
                scenario: s.scenario,
                depth: s.depth,
                probe_id: s.probe_id.clone(),
                encounter_index: i,
                t_offset: None,
                value: effectivity(s, i)?,
                filtered: false,
            });
        }
        let n = s.injection_steps.len() - 1;
        let lam = s.lam(n)?.step;
        let last = s.last_step().unwrap_or(0);
        let mut push = |t: u64, value: f64, filtered: bool| {
            table.samples.push(MetricSample {
                kind: MetricKind::Retainability,
                scenario: s.scenario,
                depth: s.depth,
                probe_id: s.probe_id.clone(),
                encounter_index: n,
                t_offset: Some(t),
                value,
                filtered,
            })
        };
        match retainability(s, 0) {
            Err(DynError::ZeroDenominator(_)) => {
                table.zero_denominator += 1;
                push(0, f64::NAN, true);
            }
            Err(e) => return Err(e),
            Ok(_) => {
                for &(step, _) in s.points.iter().filter(|p| p.0 >= lam && p.0 <= last) {
                    push(step - lam, retainability(s, step - lam)?, false);
                }
            }
        }
    }

    let mut groups: BTreeMap<(MetricKind, Scenario, Depth, usize, Option<u64>), Vec<usize>> = BTreeMap::new();
    for (idx, m) in table.samples.iter().enumerate() {
        if m.filtered {
            continue;
        }
        groups.entry((m.kind, m.scenario, m.depth, m.encounter_index, m.t_offset)).or_default().push(idx);
    }
    for idx in groups.values() {
        let values: Vec<f64> = idx.iter().map(|&i| table.samples[i].value).collect();
        let out = iqr_filter(&values, iqr_factor);
        if out.too_few {
            table.unfiltered_groups += 1;
        }
        for (&i, keep) in idx.iter().zip(out.mask) {
            table.samples[i].filtered = !keep;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupBy {
    pub scenario: bool,
    pub depth: bool,
    pub encounter: bool,
    pub t_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub kind: MetricKind,
    pub scenario: Option<Scenario>,
    pub depth: Option<Depth>,
    pub encounter_index: Option<usize>,
    pub t_offset: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStat {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; 0 for one sample.
    pub stderr: f64,
    pub count: usize,
}

/// Mean and standard error of a set of values, independent of their order.
pub fn mean_stderr(values: &[f64]) -> Result<GroupStat, DynError> {
    if values.is_empty() {
        return Err(DynError::EmptyGroup);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let stderr = if v.len() < 2 {
        0.0
    } else {
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        libm::sqrt(sq.iter().sum::<f64>() / (n - 1.0)) / libm::sqrt(n)
    };
    Ok(GroupStat { mean, stderr, count: v.len() })
}

/// Group statistics over samples that survived filtering.
pub fn aggregate(samples: &[MetricSample], by: GroupBy) -> BTreeMap<GroupKey, GroupStat> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for m in samples.iter().filter(|m| !m.filtered) {
        let key = GroupKey {
            kind: m.kind,
            scenario: by.scenario.then_some(m.scenario),
            depth: by.depth.then_some(m.depth),
            encounter_index: by.encounter.then_some(m.encounter_index),
            t_offset: if by.t_offset { m.t_offset } else { None },
        };
        groups.entry(key).or_default().push(m.value);
    }
    groups.into_iter().map(|(k, v)| (k, mean_stderr(&v).expect("nonempty group"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn series(points: &[(u64, f64)], inj: &[u64], window: u64) -> ProbeSeries {
        ProbeSeries {
            probe_id: "p".into(),
            knowledge_id: "k".into(),
            depth: Depth::Memorization,
            scenario: Scenario::Duplication,
            points: points.to_vec(),
            injection_steps: inj.to_vec(),
            window,
        }
    }

    fn from_fn(n: u64, f: impl Fn(u64) -> f64) -> Vec<(u64, f64)> {
        (0..n).map(|t| (t, f(t))).collect()
    }

    #[test]
    fn lam_examples() {
        let peak = series(&from_fn(30, |t| -((t as f64) - 13.0).abs()), &[10], 10);
        assert_eq!(local_acquisition_maxima(&peak, 0), Ok(13));
        let dec = series(&from_fn(30, |t| -(t as f64)), &[10], 10);
        assert_eq!(local_acquisition_maxima(&dec, 0), Ok(11));
        let flat = series(&from_fn(30, |_| -2.0), &[10], 10);
        assert_eq!(local_acquisition_maxima(&flat, 0), Ok(11));
        assert_eq!(effectivity(&flat, 0), Ok(0.0));
    }

    #[test]
    fn effectivity_arithmetic() {
        let up = series(&[(4, -12.0), (5, -10.0), (6, -6.0), (7, -7.0)], &[5], 2);
        assert_eq!(effectivity(&up, 0), Ok(4.0));
        let down = series(&[(4, -12.0), (5, -10.0), (6, -11.0), (7, -11.5)], &[5], 2);
        assert_eq!(effectivity(&down, 0), Ok(-1.0));
    }

    #[test]
    fn retainability_arithmetic() {
        let s = series(&[(4, -10.0), (5, -10.0), (6, -6.0), (7, -8.0), (8, -10.0)], &[5], 1);
        assert_eq!(retainability(&s, 0), Ok(1.0));
        assert_eq!(retainability(&s, 1), Ok(0.5));
        assert_eq!(retainability(&s, 2), Ok(0.0));
        let flat = series(&[(4, -10.0), (5, -10.0), (6, -10.0)], &[5], 1);
        assert_eq!(retainability(&flat, 0), Err(DynError::ZeroDenominator("p".into())));
    }

    #[test]
    fn missing_window_step_is_an_error() {
        let s = series(&[(4, -1.0), (5, -1.0), (7, -1.0)], &[5], 3);
        assert_eq!(effectivity(&s, 0), Err(DynError::MissingStep { probe: "p".into(), step: 6 }));
    }

    #[test]
    fn window_truncated_at_next_injection() {
        let s = series(&from_fn(20, |t| t as f64), &[2, 5], 10);
        let lam = s.lam(0).unwrap();
        assert_eq!(lam, Lam { step: 5, truncated: true });
    }

    #[test]
    fn iqr_fixtures() {
        let c = vec![3.0; 8];
        assert_eq!(iqr_filter(&c, 1.5).kept, c);
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(quantile_sorted(&sorted, 0.25), 3.25);
        assert_eq!(quantile_sorted(&sorted, 0.75), 7.75);
        let out = iqr_filter(&v, 1.5);
        assert_eq!(out.kept, (1..=9).map(f64::from).collect::<Vec<_>>());
        let sym = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        assert_eq!(iqr_filter(&sym, 1.5).kept, sym);
        assert!(iqr_filter(&[1.0, 50.0, 2.0], 1.5).too_few);
    }

    #[test]
    fn single_sample_group() {
        let st = mean_stderr(&[2.5]).unwrap();
        assert_eq!((st.mean, st.stderr, st.count), (2.5, 0.0, 1));
        assert_eq!(mean_stderr(&[]), Err(DynError::EmptyGroup));
    }
}
