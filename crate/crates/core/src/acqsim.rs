//! Accumulation-and-forgetting simulator.
//!
//! Each encounter adds a jump `E` that then fades as
//! `retained(Δ) = max(0, 1 − a·ln(Δ/Δ0))` for `Δ > Δ0`, reaching zero at the
//! lifetime `τ = Δ0·e^{1/a}`. Contributions add linearly.

use alloc::vec::Vec;

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("jump must be positive and finite, got {0}")]
    BadJump(f64),
    #[error("decay constant must be non-negative and finite, got {0}")]
    BadDecay(f64),
    #[error("unit offset must be at least 1")]
    BadUnitOffset,
    #[error("first-encounter multiplier must be positive and finite, got {0}")]
    BadMultiplier(f64),
    #[error("decode threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("encounter steps must be nonempty and strictly increasing")]
    BadSchedule,
    #[error("horizon {horizon} precedes the last encounter at {last}")]
    ShortHorizon { horizon: u64, last: u64 },
    #[error("zipf exponent must be non-negative, budget and fact count positive")]
    BadZipf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    /// Per-encounter improvement `E`.
    pub jump: f64,
    /// Decay constant `a`; zero means no forgetting.
    pub decay: f64,
    /// `Δ0`: offsets up to this are fully retained.
    pub unit_offset: u64,
    /// Scales the first encounter's jump.
    #[serde(default = "one")]
    pub first_multiplier: f64,
}

fn one() -> f64 {
    1.0
}

impl DecayModel {
    pub fn new(jump: f64, decay: f64) -> Self {
        Self { jump, decay, unit_offset: 1, first_multiplier: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.jump > 0.0 && self.jump.is_finite()) {
            return Err(SimError::BadJump(self.jump));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(SimError::BadDecay(self.decay));
        }
        if self.unit_offset == 0 {
            return Err(SimError::BadUnitOffset);
        }
        if !(self.first_multiplier > 0.0 && self.first_multiplier.is_finite()) {
            return Err(SimError::BadMultiplier(self.first_multiplier));
        }
        Ok(())
    }

    /// `τ = Δ0·e^{1/a}`; infinite when `a = 0`.
    pub fn lifetime(&self) -> f64 {
        if self.decay == 0.0 {
            f64::INFINITY
        } else {
            self.unit_offset as f64 * libm::exp(1.0 / self.decay)
        }
    }

    pub fn retained(&self, delta: u64) -> f64 {
        if delta <= self.unit_offset {
            return 1.0;
        }
        if delta as f64 >= self.lifetime() {
            return 0.0;
        }
        (1.0 - self.decay * libm::log(delta as f64 / self.unit_offset as f64)).max(0.0)
    }

    fn jump_of(&self, encounter: usize) -> f64 {
        if encounter == 0 {
            self.jump * self.first_multiplier
        } else {
            self.jump
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterSchedule {
    pub steps: Vec<u64>,
}

impl EncounterSchedule {
    pub fn new(steps: Vec<u64>) -> Result<Self, SimError> {
        if steps.is_empty() || steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::BadSchedule);
        }
        Ok(Self { steps })
    }

    /// Encounters at `start, start + Δ, …` up to and including `horizon`.
    pub fn periodic(start: u64, interval: u64, horizon: u64) -> Self {
        let interval = interval.max(1);
        Self { steps: (start..=horizon.max(start)).step_by(interval as usize).collect() }
    }

    /// Poisson arrivals with mean gap `mean_interval`, starting at 0.
    pub fn poisson(mean_interval: f64, horizon: u64, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "acqsim.poisson"));
        let exp = Exp::new(1.0 / mean_interval.max(1e-9)).expect("positive rate");
        let mut steps = alloc::vec![0u64];
        let mut t = 0.0f64;
        loop {
            t += exp.sample(&mut rng).max(f64::MIN_POSITIVE);
            let s = libm::ceil(t) as u64;
            if s > horizon {
                break;
            }
            if s > *steps.last().expect("nonempty") {
                steps.push(s);
            }
        }
        Self { steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    /// Improvement at every step `0..=horizon`.
    pub improvement: Vec<f64>,
    pub learned_at: Option<u64>,
}

/// Improvement at step `t` from encounters from `first_alive` on that have
/// already happened.
fn improvement_at(model: &DecayModel, steps: &[u64], first_alive: usize, t: u64) -> f64 {
    steps[first_alive..]
        .iter()
        .enumerate()
        .take_while(|(_, &e)| e <= t)
        .map(|(j, &e)| model.jump_of(first_alive + j) * model.retained(t - e))
        .sum()
}

pub fn simulate_trajectory(
    model: &DecayModel,
    sched: &EncounterSchedule,
    horizon: u64,
    theta_dec: f64,
) -> Result<SimTrajectory, SimError> {
    model.validate()?;
    let last = *sched.steps.last().ok_or(SimError::BadSchedule)?;
    if horizon < last {
        return Err(SimError::ShortHorizon { horizon, last });
    }
    let tau = model.lifetime();
    let mut first_alive = 0;
    let mut improvement = Vec::with_capacity(horizon as usize + 1);
    let mut learned_at = None;
    for t in 0..=horizon {
        while first_alive < sched.steps.len() && sched.steps[first_alive] <= t && (t - sched.steps[first_alive]) as f64 >= tau {
            first_alive += 1;
        }
        let v = improvement_at(model, &sched.steps, first_alive, t);
        if learned_at.is_none() && v >= theta_dec {
            learned_at = Some(t);
        }
        improvement.push(v);
    }
    Ok(SimTrajectory { improvement, learned_at })
}

/// First encounter step at which accumulated improvement reaches
/// `theta_dec`. Improvement only falls between encounters, so checking at
/// encounters suffices.
pub fn first_learned(model: &DecayModel, sched: &EncounterSchedule, theta_dec: f64) -> Option<u64> {
    let tau = model.lifetime();
    let mut first_alive = 0;
    for &t in &sched.steps {
        while (t - sched.steps[first_alive]) as f64 >= tau {
            first_alive += 1;
        }
        if improvement_at(model, &sched.steps, first_alive, t) >= theta_dec {
            return Some(t);
        }
    }
    None
}

/// Peak improvement in the periodic steady state:
/// `E·Σ_k retained(k·Δ)` over live terms. Infinite when `a = 0`.
pub fn saturation_value(model: &DecayModel, interval: u64) -> f64 {
    let tau = model.lifetime();
    if tau.is_infinite() {
        return f64::INFINITY;
    }
    let interval = interval.max(1);
    let mut sum = 0.0;
    let mut k = 0u64;
    loop {
        let delta = k * interval;
        if k > 0 && delta as f64 >= tau {
            break;
        }
        sum += model.retained(delta);
        k += 1;
    }
    model.jump * sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "interval")]
pub enum Threshold {
    /// Learnable at any interval.
    Unbounded,
    /// Not learnable even at interval 1.
    Unlearnable,
    /// Largest learnable interval.
    Interval(u64),
}

impl Threshold {
    /// Whether facts seen every `interval` steps are eventually learned.
    pub fn admits(self, interval: u64) -> bool {
        match self {
            Threshold::Unbounded => true,
            Threshold::Unlearnable => false,
            Threshold::Interval(d) => interval <= d,
        }
    }
}

/// Largest interval whose saturation still reaches `theta_dec`.
pub fn learnability_threshold(model: &DecayModel, theta_dec: f64) -> Result<Threshold, SimError> {
    model.validate()?;
    if !(theta_dec > 0.0) {
        return Err(SimError::BadThreshold(theta_dec));
    }
    if theta_dec <= model.jump || model.lifetime().is_infinite() {
        return Ok(Threshold::Unbounded);
    }
    if saturation_value(model, 1) < theta_dec {
        return Ok(Threshold::Unlearnable);
    }
    // saturation(lo) ≥ θ > E = saturation(hi)
    let mut lo = 1u64;
    let mut hi = libm::ceil(model.lifetime()) as u64 + 1;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if saturation_value(model, mid) >= theta_dec {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Threshold::Interval(lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfConfig {
    pub n_facts: usize,
    pub exponent: f64,
    /// Total encounters shared by all facts.
    pub budget: u64,
    pub horizon: u64,
    pub theta_dec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfOutcome {
    /// Encounter interval of rank `r + 1`.
    pub intervals: Vec<u64>,
    pub learned_at: Vec<Option<u64>>,
    pub learned_fraction: f64,
    pub threshold: Threshold,
    /// Ranks whose interval the threshold admits.
    pub predicted_learned: usize,
}

impl ZipfOutcome {
    pub fn learned(&self) -> Vec<bool> {
        self.learned_at.iter().map(Option::is_some).collect()
    }

    /// Learned fraction in each of `n` contiguous rank buckets.
    pub fn bucket_fractions(&self, n: usize) -> Vec<f64> {
        let len = self.learned_at.len();
        (0..n)
            .map(|b| {
                let (lo, hi) = (b * len / n, (b + 1) * len / n);
                let hits = self.learned_at[lo..hi].iter().filter(|x| x.is_some()).count();
                if hi > lo {
                    hits as f64 / (hi - lo) as f64
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// `interval_r = max(1, round(base·r^s))` with `base = horizon·H(n,s)/budget`,
/// so encounter frequency falls as `r^−s`.
pub fn zipf_intervals(n_facts: usize, exponent: f64, budget: u64, horizon: u64) -> Vec<u64> {
    let h: f64 = (1..=n_facts).map(|r| libm::pow(r as f64, -exponent)).sum();
    let base = horizon as f64 * h / budget as f64;
    (1..=n_facts).map(|r| (libm::round(base * libm::pow(r as f64, exponent)) as u64).max(1)).collect()
}

pub fn zipf_experiment(model: &DecayModel, cfg: &ZipfConfig) -> Result<ZipfOutcome, SimError> {
    model.validate()?;
    if cfg.n_facts == 0 || cfg.budget == 0 || !(cfg.exponent >= 0.0) {
        return Err(SimError::BadZipf);
    }
    let threshold = learnability_threshold(model, cfg.theta_dec)?;
    let intervals = zipf_intervals(cfg.n_facts, cfg.exponent, cfg.budget, cfg.horizon);
    let learned_at: Vec<Option<u64>> = intervals
        .iter()
        .map(|&d| first_learned(model, &EncounterSchedule::periodic(0, d, cfg.horizon), cfg.theta_dec))
        .collect();
    let hits = learned_at.iter().filter(|x| x.is_some()).count();
    let predicted_learned = intervals.iter().filter(|&&d| threshold.admits(d)).count();
    Ok(ZipfOutcome {
        learned_fraction: hits as f64 / cfg.n_facts as f64,
        intervals,
        learned_at,
        threshold,
        predicted_learned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dup: SimTrajectory,
    pub para: SimTrajectory,
    /// First step where the leading trajectory changes.
    pub crossing: Option<u64>,
}

pub fn scenario_compare(
    dup: &DecayModel,
    para: &DecayModel,
    sched: &EncounterSchedule,
    horizon: u64,
) -> Result<Comparison, SimError> {
    let d = simulate_trajectory(dup, sched, horizon, f64::INFINITY)?;
    let p = simulate_trajectory(para, sched, horizon, f64::INFINITY)?;
    let mut lead = 0i8;
    let mut crossing = None;
    for (t, (x, y)) in d.improvement.iter().zip(&p.improvement).enumerate() {
        let s = if x > y {
            1
        } else if x < y {
            -1
        } else {
            0
        };
        if s == 0 {
            continue;
        }
        if lead == 0 {
            lead = s;
        } else if s != lead {
            crossing = Some(t as u64);
            break;
        }
    }
    Ok(Comparison { dup: d, para: p, crossing })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub jump: f64,
    pub decay: f64,
    pub interval: u64,
    pub saturation: f64,
    pub threshold: Threshold,
    /// Learned within `horizon` under periodic encounters.
    pub learned: bool,
}

/// Saturation and threshold over a grid of jumps, decay constants and
/// intervals.
pub fn sweep(
    jumps: &[f64],
    decays: &[f64],
    intervals: &[u64],
    theta_dec: f64,
    horizon: u64,
) -> Result<Vec<SweepRow>, SimError> {
    let mut out = Vec::new();
    for &jump in jumps {
        for &decay in decays {
            let model = DecayModel::new(jump, decay);
            let threshold = learnability_threshold(&model, theta_dec)?;
            for &interval in intervals {
                let learned = first_learned(&model, &EncounterSchedule::periodic(0, interval, horizon), theta_dec).is_some();
                out.push(SweepRow { jump, decay, interval, saturation: saturation_value(&model, interval), threshold, learned });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_encounter_profile() {
        let m = DecayModel::new(1.0, 0.25);
        assert!((m.lifetime() - 54.598_150_033_144_236).abs() < 1e-9);
        let tr = simulate_trajectory(&m, &EncounterSchedule::periodic(0, 1000, 100), 100, 10.0).unwrap();
        assert_eq!(tr.improvement[0], 1.0);
        assert_eq!(tr.improvement[1], 1.0);
        assert!((tr.improvement[20] - (1.0 - 0.25 * 20f64.ln())).abs() < 1e-15);
        assert_eq!(tr.improvement[54], 1.0 - 0.25 * 54f64.ln());
        assert_eq!(tr.improvement[55], 0.0);
        assert_eq!(tr.improvement[60], 0.0);
        assert_eq!(tr.learned_at, None);
    }

    #[test]
    fn saturation_edges() {
        let m = DecayModel::new(1.0, 0.25);
        assert_eq!(saturation_value(&m, 55), 1.0);
        assert_eq!(saturation_value(&m, 1000), 1.0);
        let mut prev = f64::INFINITY;
        for d in 1..80 {
            let s = saturation_value(&m, d);
            assert!(s <= prev);
            prev = s;
        }
        assert!(saturation_value(&DecayModel::new(1.0, 0.0), 7).is_infinite());
    }

    #[test]
    fn threshold_markers() {
        let m = DecayModel::new(1.0, 0.25);
        assert_eq!(learnability_threshold(&m, 0.5), Ok(Threshold::Unbounded));
        assert_eq!(learnability_threshold(&m, 1e6), Ok(Threshold::Unlearnable));
        assert_eq!(learnability_threshold(&m, 0.0), Err(SimError::BadThreshold(0.0)));
    }

    #[test]
    fn bad_models_rejected() {
        assert_eq!(DecayModel::new(0.0, 0.2).validate(), Err(SimError::BadJump(0.0)));
        assert_eq!(DecayModel::new(1.0, -0.1).validate(), Err(SimError::BadDecay(-0.1)));
    }

    #[test]
    fn single_encounter_crossing() {
        let dup = DecayModel::new(1.2, 0.25);
        let para = DecayModel::new(1.0, 0.2);
        let c = scenario_compare(&dup, &para, &EncounterSchedule::new(alloc::vec![0]).unwrap(), 100).unwrap();
        assert_eq!(c.crossing, Some(8));
        let same = scenario_compare(&dup, &dup, &EncounterSchedule::periodic(0, 10, 100), 100).unwrap();
        assert_eq!(same.dup, same.para);
        assert_eq!(same.crossing, None);
    }

    #[test]
    fn uniform_zipf_is_all_or_none() {
        let m = DecayModel::new(1.0, 0.25);
        let cfg = ZipfConfig { n_facts: 20, exponent: 0.0, budget: 2000, horizon: 10_000, theta_dec: 3.0 };
        let out = zipf_experiment(&m, &cfg).unwrap();
        assert!(out.intervals.iter().all(|&d| d == out.intervals[0]));
        assert!(out.learned_fraction == 0.0 || out.learned_fraction == 1.0);
    }

    #[test]
    fn poisson_schedule_is_increasing() {
        let s = EncounterSchedule::poisson(7.0, 1000, 3);
        assert!(EncounterSchedule::new(s.steps.clone()).is_ok());
        assert!(s.steps.len() > 50);
    }
}
