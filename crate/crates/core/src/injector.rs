//! Injection schedules and batch composition.
//!
//! Each schedule covers one scenario's knowledge items. At an injection step
//! every active item takes one batch row: `[BOS] ++ text tokens` followed by
//! the head of the original row, cut from the end so the row keeps its
//! length.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::microlm::tokenizer::{Tokenizer, TokenizerError, BOS};
use crate::synthkb::{KnowledgeSet, N_PARAPHRASES};
use crate::Scenario;

pub const DEFAULT_INTERVAL: u64 = 100;
pub const DEFAULT_REPETITIONS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InjectError {
    #[error("interval and repetitions must be at least 1")]
    ZeroCount,
    #[error("the once scenario injects exactly one time, got {0} repetitions")]
    OnceRepeated(u32),
    #[error("paraphrase scenario supports at most {max} repetitions, got {got}")]
    TooManyParaphrases { got: u32, max: u32 },
    #[error("knowledge {id} is {len} tokens, longer than the sequence length {seq_len}")]
    TooLong { id: String, len: usize, seq_len: usize },
    #[error("{active} items scheduled at step {step} but the batch has {rows} rows")]
    TooManyItems { step: u64, active: usize, rows: usize },
    #[error("unknown knowledge id {0}")]
    UnknownKnowledge(String),
    #[error("knowledge {id} belongs to {actual}, not the {scheduled} schedule")]
    ScenarioMismatch { id: String, scheduled: Scenario, actual: Scenario },
    #[error("base batch has {len} tokens, expected {rows} x {seq_len}")]
    BadBase { len: usize, rows: usize, seq_len: usize },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionSchedule {
    pub scenario: Scenario,
    pub interval_steps: u64,
    pub repetitions: u32,
    pub start_step: u64,
    pub knowledge_ids: Vec<String>,
}

impl InjectionSchedule {
    /// `T_k`, in increasing order.
    pub fn injection_steps(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|j| self.start_step + j * self.interval_steps).collect()
    }

    pub fn last_step(&self) -> u64 {
        self.start_step + (self.repetitions as u64 - 1) * self.interval_steps
    }

    /// Encounter index `j` if `step` is an injection step.
    pub fn encounter_at(&self, step: u64) -> Option<u32> {
        if step < self.start_step {
            return None;
        }
        let off = step - self.start_step;
        if off % self.interval_steps != 0 {
            return None;
        }
        let j = off / self.interval_steps;
        (j < self.repetitions as u64).then_some(j as u32)
    }

    /// Text variant injected at encounter `j`: the passage, except under
    /// paraphrase where encounter `j` uses variant `j`.
    pub fn variant_index(&self, j: u32) -> usize {
        match self.scenario {
            Scenario::Paraphrase => j as usize,
            Scenario::Duplication | Scenario::Once => 0,
        }
    }
}

pub fn plan_injections(
    scenario: Scenario,
    interval_steps: u64,
    repetitions: u32,
    start_step: u64,
    knowledge_ids: Vec<String>,
) -> Result<InjectionSchedule, InjectError> {
    if interval_steps == 0 || repetitions == 0 {
        return Err(InjectError::ZeroCount);
    }
    match scenario {
        Scenario::Once if repetitions != 1 => return Err(InjectError::OnceRepeated(repetitions)),
        Scenario::Paraphrase if repetitions as usize > N_PARAPHRASES + 1 => {
            return Err(InjectError::TooManyParaphrases { got: repetitions, max: N_PARAPHRASES as u32 + 1 })
        }
        _ => {}
    }
    Ok(InjectionSchedule { scenario, interval_steps, repetitions, start_step, knowledge_ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComposeOptions {
    /// Fill every row, cycling through the active items, instead of one row
    /// per item.
    pub inject_all_rows: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedRow {
    pub row: usize,
    pub knowledge_id: String,
    pub variant_index: usize,
    pub scenario: Scenario,
    /// Injected token count, including the leading BOS.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub step: u64,
    pub n_rows: usize,
    pub seq_len: usize,
    /// Row-major `n_rows × seq_len` tokens after injection.
    pub rows: Vec<u32>,
    pub injected: Vec<InjectedRow>,
}

/// Tokens injected for one variant of one item.
pub fn injection_tokens(
    ks: &KnowledgeSet,
    tokenizer: &Tokenizer,
    id: &str,
    variant: usize,
) -> Result<Vec<u32>, InjectError> {
    let k = ks.get(id).ok_or_else(|| InjectError::UnknownKnowledge(id.into()))?;
    let text = k.variant_text(variant).map_err(|_| InjectError::UnknownKnowledge(id.into()))?;
    let mut out = alloc::vec![BOS];
    tokenizer.encode_into(text, &mut out)?;
    Ok(out)
}

/// Checks every item of every schedule against the set and the row length
/// before any training starts.
pub fn validate_schedules(
    schedules: &[InjectionSchedule],
    ks: &KnowledgeSet,
    tokenizer: &Tokenizer,
    rows: usize,
    seq_len: usize,
) -> Result<(), InjectError> {
    for s in schedules {
        for id in &s.knowledge_ids {
            let actual = ks.scenario_of(id).ok_or_else(|| InjectError::UnknownKnowledge(id.clone()))?;
            if actual != s.scenario {
                return Err(InjectError::ScenarioMismatch { id: id.clone(), scheduled: s.scenario, actual });
            }
            for j in 0..s.repetitions {
                let len = injection_tokens(ks, tokenizer, id, s.variant_index(j))?.len();
                if len > seq_len {
                    return Err(InjectError::TooLong { id: id.clone(), len, seq_len });
                }
            }
        }
    }
    let mut steps: Vec<u64> = schedules.iter().flat_map(|s| s.injection_steps()).collect();
    steps.sort_unstable();
    steps.dedup();
    for step in steps {
        let active: usize = schedules.iter().filter(|s| s.encounter_at(step).is_some()).map(|s| s.knowledge_ids.len()).sum();
        if active > rows {
            return Err(InjectError::TooManyItems { step, active, rows });
        }
    }
    Ok(())
}

/// Applies every schedule active at `step` to `base_rows`.
#[allow(clippy::too_many_arguments)]
pub fn compose_batch(
    base_rows: Vec<u32>,
    n_rows: usize,
    seq_len: usize,
    schedules: &[InjectionSchedule],
    step: u64,
    ks: &KnowledgeSet,
    tokenizer: &Tokenizer,
    opts: ComposeOptions,
) -> Result<BatchPlan, InjectError> {
    if base_rows.len() != n_rows * seq_len {
        return Err(InjectError::BadBase { len: base_rows.len(), rows: n_rows, seq_len });
    }
    let mut active: Vec<(Scenario, &String, usize)> = Vec::new();
    for s in schedules {
        if let Some(j) = s.encounter_at(step) {
            for id in &s.knowledge_ids {
                match ks.scenario_of(id) {
                    None => return Err(InjectError::UnknownKnowledge(id.clone())),
                    Some(actual) if actual != s.scenario => {
                        return Err(InjectError::ScenarioMismatch { id: id.clone(), scheduled: s.scenario, actual })
                    }
                    Some(_) => {}
                }
                active.push((s.scenario, id, s.variant_index(j)));
            }
        }
    }
    let mut plan = BatchPlan { step, n_rows, seq_len, rows: base_rows, injected: Vec::new() };
    if active.is_empty() {
        return Ok(plan);
    }
    if active.len() > n_rows {
        return Err(InjectError::TooManyItems { step, active: active.len(), rows: n_rows });
    }
    let filled = if opts.inject_all_rows { n_rows } else { active.len() };
    let mut encoded: Vec<Vec<u32>> = Vec::with_capacity(active.len());
    for &(_, id, variant) in &active {
        let tokens = injection_tokens(ks, tokenizer, id, variant)?;
        if tokens.len() > seq_len {
            return Err(InjectError::TooLong { id: id.clone(), len: tokens.len(), seq_len });
        }
        encoded.push(tokens);
    }
    for row in 0..filled {
        let which = row % active.len();
        let (scenario, id, variant) = active[which];
        let k = &encoded[which];
        let r = &mut plan.rows[row * seq_len..(row + 1) * seq_len];
        r.copy_within(0..seq_len - k.len(), k.len());
        r[..k.len()].copy_from_slice(k);
        plan.injected.push(InjectedRow { row, knowledge_id: id.clone(), variant_index: variant, scenario, len: k.len() });
    }
    Ok(plan)
}
