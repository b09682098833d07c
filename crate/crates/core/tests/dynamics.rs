use std::collections::BTreeMap;

use factlab_core::dynamics::*;
use factlab_core::{Depth, Scenario};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random dense series with a random schedule. Values are sometimes
/// quantized so ties and zero denominators occur.
fn random_series(seed: u64) -> ProbeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(1..20u64);
    let interval = rng.random_range(3..30u64);
    let n = rng.random_range(1..6usize);
    let window = rng.random_range(1..40u64);
    let injection_steps: Vec<u64> = (0..n as u64).map(|k| start + k * interval).collect();
    let last = injection_steps[n - 1] + window + rng.random_range(1..60u64);
    let quantize = rng.random_bool(0.3);
    let points = (0..=last)
        .map(|t| {
            let v: f64 = -rng.random_range(0.0..10.0);
            (t, if quantize { (v * 2.0).round() / 2.0 } else { v })
        })
        .collect();
    let depth = Depth::ALL[(seed % 3) as usize];
    let scenario = Scenario::ALL[(seed / 3 % 3) as usize];
    ProbeSeries {
        probe_id: format!("p{seed:03}"),
        knowledge_id: format!("k{seed:03}"),
        depth,
        scenario,
        points,
        injection_steps,
        window,
    }
}

// Straight-from-the-definition versions over a step → value map.

fn naive_lam(v: &BTreeMap<u64, f64>, inj: &[u64], i: usize, w: u64) -> u64 {
    let lo = inj[i] + 1;
    let hi = match inj.get(i + 1) {
        Some(&next) => (inj[i] + w).min(next),
        None => inj[i] + w,
    };
    let mut best = lo;
    for t in lo..=hi {
        if v[&t] > v[&best] {
            best = t;
        }
    }
    best
}

fn naive_effectivity(v: &BTreeMap<u64, f64>, inj: &[u64], i: usize, w: u64) -> f64 {
    v[&naive_lam(v, inj, i, w)] - v[&inj[i]]
}

fn naive_retainability(v: &BTreeMap<u64, f64>, inj: &[u64], w: u64, t: u64) -> Option<f64> {
    let n = inj.len() - 1;
    let lam = naive_lam(v, inj, n, w);
    let pre = v[&(inj[0] - 1)];
    let den = v[&lam] - pre;
    if den == 0.0 {
        return None;
    }
    Some(if t == 0 { 1.0 } else { (v[&(lam + t)] - pre) / den })
}

#[test]
fn metrics_match_naive_oracle_on_100_series() {
    let series: Vec<ProbeSeries> = (0..100).map(random_series).collect();
    let table = compute_metrics(&series, DEFAULT_IQR_FACTOR).unwrap();
    let mut checked = 0;
    for s in &series {
        let v: BTreeMap<u64, f64> = s.points.iter().copied().collect();
        let inj = &s.injection_steps;
        for i in 0..inj.len() {
            assert_eq!(local_acquisition_maxima(s, i).unwrap(), naive_lam(&v, inj, i, s.window));
            let want = naive_effectivity(&v, inj, i, s.window);
            assert!((effectivity(s, i).unwrap() - want).abs() <= 1e-12);
            let sample = table
                .samples
                .iter()
                .find(|m| m.probe_id == s.probe_id && m.kind == MetricKind::Effectivity && m.encounter_index == i)
                .unwrap();
            assert!((sample.value - want).abs() <= 1e-12);
            checked += 1;
        }
        let lam = naive_lam(&v, inj, inj.len() - 1, s.window);
        let last = *v.keys().last().unwrap();
        let rs: Vec<&MetricSample> =
            table.samples.iter().filter(|m| m.probe_id == s.probe_id && m.kind == MetricKind::Retainability).collect();
        match naive_retainability(&v, inj, s.window, 0) {
            None => {
                assert!(matches!(retainability(s, 0), Err(DynError::ZeroDenominator(_))));
                assert!(rs.len() == 1 && rs[0].value.is_nan() && rs[0].filtered);
            }
            Some(one) => {
                assert_eq!(one, 1.0);
                assert_eq!(retainability(s, 0).unwrap(), 1.0);
                assert_eq!(rs.len() as u64, last - lam + 1);
                for m in rs {
                    let t = m.t_offset.unwrap();
                    let want = naive_retainability(&v, inj, s.window, t).unwrap();
                    assert!((m.value - want).abs() <= 1e-12, "{} t={t}", s.probe_id);
                    if t == 0 {
                        assert_eq!(m.value, 1.0);
                    }
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn lam_examples() {
    let mk = |vals: &[f64]| ProbeSeries {
        probe_id: "p".into(),
        knowledge_id: "k".into(),
        depth: Depth::Memorization,
        scenario: Scenario::Once,
        points: vals.iter().enumerate().map(|(t, &v)| (t as u64, v)).collect(),
        injection_steps: vec![1],
        window: 5,
    };
    assert_eq!(local_acquisition_maxima(&mk(&[-9.0, -9.0, -8.0, -7.0, -6.0, -8.0, -8.5]), 0).unwrap(), 4);
    assert_eq!(local_acquisition_maxima(&mk(&[-1.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0]), 0).unwrap(), 2);
    assert_eq!(local_acquisition_maxima(&mk(&[-3.0; 7]), 0).unwrap(), 2);
    assert_eq!(effectivity(&mk(&[-3.0; 7]), 0).unwrap(), 0.0);
    assert_eq!(effectivity(&mk(&[-10.0, -10.0, -8.0, -6.0, -7.0, -9.0, -9.0]), 0).unwrap(), 4.0);
    assert_eq!(effectivity(&mk(&[-10.0, -10.0, -11.0, -12.0, -13.0, -12.0, -11.5]), 0).unwrap(), -1.0);
    let missing = ProbeSeries { points: vec![(0, -1.0), (1, -1.0), (2, -1.0)], ..mk(&[]) };
    assert!(matches!(effectivity(&missing, 0), Err(DynError::MissingStep { step: 3, .. })));
}

#[test]
fn retainability_examples() {
    // t_pre = 0 (ℓ=−10), injection at 1, LAM at 2 (ℓ=−6).
    let s = ProbeSeries {
        probe_id: "p".into(),
        knowledge_id: "k".into(),
        depth: Depth::Memorization,
        scenario: Scenario::Once,
        points: vec![(0, -10.0), (1, -10.0), (2, -6.0), (3, -8.0), (4, -10.0)],
        injection_steps: vec![1],
        window: 1,
    };
    assert_eq!(retainability(&s, 0).unwrap(), 1.0);
    assert_eq!(retainability(&s, 1).unwrap(), 0.5);
    assert_eq!(retainability(&s, 2).unwrap(), 0.0);
}

#[test]
fn iqr_fixtures() {
    let constant = [2.5; 8];
    let out = iqr_filter(&constant, 1.5);
    assert_eq!(out.kept, constant.to_vec());
    assert!(!out.too_few);

    // Sorted {1..9, 100}: Q1 at position 2.25 → 3.25, Q3 at 6.75 → 7.75,
    // IQR 4.5, fences [−3.5, 14.5].
    let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
    v.push(100.0);
    let sorted = v.clone();
    assert_eq!(quantile_sorted(&sorted, 0.25), 3.25);
    assert_eq!(quantile_sorted(&sorted, 0.75), 7.75);
    let out = iqr_filter(&v, 1.5);
    assert_eq!(out.kept, (1..=9).map(f64::from).collect::<Vec<_>>());
    assert_eq!(out.mask.iter().filter(|m| !**m).count(), 1);

    let sym = [-2.0, -1.0, 0.0, 1.0, 2.0];
    assert_eq!(iqr_filter(&sym, 1.5).kept, sym.to_vec());
    let few = iqr_filter(&[1.0, 50.0, 1000.0], 1.5);
    assert!(few.too_few && few.kept.len() == 3);
}

#[test]
fn aggregate_matches_brute_force() {
    let series: Vec<ProbeSeries> = (0..100).map(random_series).collect();
    let table = compute_metrics(&series, DEFAULT_IQR_FACTOR).unwrap();
    let by = GroupBy { scenario: true, depth: true, encounter: true, t_offset: false };
    let got = aggregate(&table.samples, by);
    for (key, stat) in &got {
        let vals: Vec<f64> = table
            .samples
            .iter()
            .filter(|m| {
                !m.filtered
                    && m.kind == key.kind
                    && Some(m.scenario) == key.scenario
                    && Some(m.depth) == key.depth
                    && Some(m.encounter_index) == key.encounter_index
            })
            .map(|m| m.value)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = if vals.len() > 1 { (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        assert_eq!(stat.count, vals.len());
        assert!((stat.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((stat.stderr - sd / n.sqrt()).abs() <= 1e-12 * sd.max(1.0));
    }
    let total: usize = got.values().map(|g| g.count).sum();
    assert_eq!(total, table.samples.iter().filter(|m| !m.filtered).count());
}

#[test]
fn single_sample_group_and_empty() {
    let g = mean_stderr(&[0.75]).unwrap();
    assert_eq!((g.mean, g.stderr, g.count), (0.75, 0.0, 1));
    assert_eq!(mean_stderr(&[]), Err(DynError::EmptyGroup));
}

#[test]
fn series_from_records_roundtrip() {
    use factlab_core::tracer::TraceRecord;
    let s = random_series(5);
    let mut records: Vec<TraceRecord> = s
        .points
        .iter()
        .map(|&(step, v)| TraceRecord {
            step,
            scenario: s.scenario,
            knowledge_id: s.knowledge_id.clone(),
            probe_id: s.probe_id.clone(),
            depth: s.depth,
            logprob_sum: v,
            logprob_mean: v,
            span_len: 1,
        })
        .collect();
    records.reverse();
    let inj = BTreeMap::from([(s.scenario, s.injection_steps.clone())]);
    assert_eq!(series_from_records(&records, &inj, s.window), vec![s]);
}

proptest! {
    #[test]
    fn lam_is_an_earliest_argmax(seed in 0u64..10_000) {
        let s = random_series(seed);
        for i in 0..s.injection_steps.len() {
            let lam = local_acquisition_maxima(&s, i).unwrap();
            let t_i = s.injection_steps[i];
            let end = s.injection_steps.get(i + 1).map_or(t_i + s.window, |&n| n.min(t_i + s.window));
            prop_assert!(lam > t_i && lam <= end);
            let best = s.value_at(lam).unwrap();
            for t in t_i + 1..=end {
                let v = s.value_at(t).unwrap();
                prop_assert!(v <= best);
                if t < lam {
                    prop_assert!(v < best);
                }
            }
            prop_assert!(effectivity(&s, i).unwrap() >= s.value_at(t_i + 1).unwrap() - s.value_at(t_i).unwrap());
        }
    }

    #[test]
    fn effectivity_monotone_in_window(seed in 0u64..10_000, w1 in 1u64..40, extra in 0u64..40) {
        let mut s = random_series(seed);
        s.window = w1;
        // Windows past the end of the series are not comparable.
        let small: Vec<Option<f64>> = (0..s.injection_steps.len()).map(|i| effectivity(&s, i).ok()).collect();
        s.window = w1 + extra;
        for (i, e) in small.iter().enumerate() {
            let Some(e) = e else { continue };
            match effectivity(&s, i) {
                Ok(big) => prop_assert!(big >= *e, "{big} < {e}"),
                Err(DynError::MissingStep { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }

    #[test]
    fn retainability_one_at_zero(seed in 0u64..10_000) {
        let s = random_series(seed);
        match retainability(&s, 0) {
            Ok(r) => prop_assert_eq!(r, 1.0),
            Err(DynError::ZeroDenominator(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn aggregate_permutation_invariant(seed in 0u64..1000, rot in 0usize..500) {
        let series: Vec<ProbeSeries> = (seed..seed + 10).map(random_series).collect();
        let mut samples = compute_metrics(&series, 1.5).unwrap().samples;
        let by = GroupBy { scenario: true, depth: true, encounter: true, t_offset: true };
        let a = aggregate(&samples, by);
        let k = rot % samples.len().max(1);
        samples.rotate_left(k);
        samples.reverse();
        prop_assert_eq!(a, aggregate(&samples, by));
    }

    #[test]
    fn iqr_keeps_the_interquartile_core(mut v in proptest::collection::vec(-1e3f64..1e3, 4..60), f in 0.0f64..3.0) {
        let out = iqr_filter(&v, f);
        v.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75));
        for &x in &v {
            if x >= q1 && x <= q3 {
                prop_assert!(out.kept.contains(&x));
            }
        }
        prop_assert_eq!(out.mask.iter().filter(|m| **m).count(), out.kept.len());
    }
}
