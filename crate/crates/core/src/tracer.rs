//! Probe evaluation and the training step.
//!
//! `θ_t` is the parameter state before training step `t` runs. A step first
//! records probes (if `t` is an evaluation step), then trains, so the update
//! made at an injection step `t_i` first shows in the record at `t_i + 1`.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusStream};
use crate::injector::{self, ComposeOptions, InjectError, InjectionSchedule};
use crate::microlm::tokenizer::TokenizerError;
use crate::microlm::{MicroLm, ModelError, Real, SpanQuery, TensorMap, Tokenizer, BOS};
use crate::optimizer::{self, AdamWConfig, OptimError, OptimizerState};
use crate::synthkb::KnowledgeSet;
use crate::{Depth, Scenario};

pub const SCHEMA: &str = "trace/1";
pub const DEFAULT_EVAL_STRIDE: u64 = 5;
pub const DEFAULT_WINDOW: u64 = 50;

/// Queries per forward batch during evaluation.
const EVAL_CHUNK: usize = 32;

/// One measurement of one probe at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub scenario: Scenario,
    pub knowledge_id: String,
    pub probe_id: String,
    pub depth: Depth,
    pub logprob_sum: f64,
    pub logprob_mean: f64,
    pub span_len: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("probe {id} needs {len} tokens, context is {max}")]
    ProbeTooLong { id: String, len: usize, max: usize },
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
    #[error("non-finite parameters after step {0}")]
    NonFiniteParams(u64),
    #[error("run already finished at step {0}")]
    Finished(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Inject(#[from] InjectError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// A tokenized probe tied to its scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedProbe {
    pub probe_id: String,
    pub knowledge_id: String,
    pub scenario: Scenario,
    pub depth: Depth,
    pub query: SpanQuery,
}

/// Tokenizes every probe of every scheduled item, sorted by probe id.
/// Fails up front if any probe exceeds the context.
pub fn prepare_probes(
    ks: &KnowledgeSet,
    tokenizer: &Tokenizer,
    schedules: &[InjectionSchedule],
    context_len: usize,
) -> Result<Vec<PreparedProbe>, TraceError> {
    let mut out = Vec::new();
    for s in schedules {
        for id in &s.knowledge_ids {
            let k = ks.get(id).ok_or_else(|| InjectError::UnknownKnowledge(id.clone()))?;
            for p in &k.probes {
                let mut prefix = alloc::vec![BOS];
                tokenizer.encode_into(&p.input_text, &mut prefix)?;
                let span = tokenizer.encode(&p.target_span)?;
                let len = prefix.len() + span.len();
                if len > context_len {
                    return Err(TraceError::ProbeTooLong { id: p.id.clone(), len, max: context_len });
                }
                out.push(PreparedProbe {
                    probe_id: p.id.clone(),
                    knowledge_id: id.clone(),
                    scenario: s.scenario,
                    depth: p.depth,
                    query: SpanQuery { prefix_tokens: prefix, span_tokens: span },
                });
            }
        }
    }
    out.sort_by(|a, b| a.probe_id.cmp(&b.probe_id));
    Ok(out)
}

/// Scores every probe against a frozen model. Probes are batched in probe-id
/// order whatever order they arrive in, so records do not depend on the
/// caller's ordering.
pub fn evaluate_probes<T: Real>(
    model: &MicroLm<T>,
    probes: &[PreparedProbe],
    step: u64,
) -> Result<Vec<TraceRecord>, TraceError> {
    let mut order: Vec<&PreparedProbe> = probes.iter().collect();
    order.sort_by(|a, b| a.probe_id.cmp(&b.probe_id));
    let mut out = Vec::with_capacity(order.len());
    for chunk in order.chunks(EVAL_CHUNK) {
        let queries: Vec<SpanQuery> = chunk.iter().map(|p| p.query.clone()).collect();
        let scores = model.span_logprobs(&queries)?;
        for (p, score) in chunk.iter().zip(scores) {
            let span_len = p.query.span_tokens.len();
            // Stored so that mean * len reproduces the stored sum exactly.
            let logprob_mean = score.sum / span_len as f64;
            out.push(TraceRecord {
                step,
                scenario: p.scenario,
                knowledge_id: p.knowledge_id.clone(),
                probe_id: p.probe_id.clone(),
                depth: p.depth,
                logprob_sum: logprob_mean * span_len as f64,
                logprob_mean,
                span_len,
            });
        }
    }
    Ok(out)
}

/// Steps at which probes are recorded: every `stride`-th step, `t_pre`, each
/// injection step and its window, and the final state at `total_steps`.
pub fn eval_steps(schedules: &[InjectionSchedule], stride: u64, window: u64, total_steps: u64) -> BTreeSet<u64> {
    let stride = stride.max(1);
    let mut out: BTreeSet<u64> = (0..=total_steps).step_by(stride as usize).collect();
    out.insert(total_steps);
    for s in schedules {
        if s.start_step > 0 {
            out.insert(s.start_step - 1);
        }
        for t in s.injection_steps() {
            out.extend((t..=t + window).filter(|&x| x <= total_steps));
        }
    }
    out
}

/// Loss, gradient, and AdamW update for one batch. Leaves the model and
/// optimizer untouched on error.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Real>(
    model: &mut MicroLm<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamWConfig,
    grads: &mut TensorMap<T>,
    batch: &[u32],
    rows: usize,
    step: u64,
) -> Result<f64, TraceError> {
    let loss = model.loss_and_grads_into(batch, rows, grads)?;
    if !loss.is_finite() {
        return Err(TraceError::NonFiniteLoss(step));
    }
    let lr = optimizer::lr_at(&cfg.lr_schedule, step);
    let backup = (model.params.clone(), state.clone());
    optimizer::adamw_step(&mut model.params, grads, state, cfg, lr)?;
    if !model.params.all_finite() {
        model.params = backup.0;
        *state = backup.1;
        return Err(TraceError::NonFiniteParams(step));
    }
    Ok(loss)
}

/// Static description of a training run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub rows: usize,
    pub seq_len: usize,
    pub total_steps: u64,
    pub eval_stride: u64,
    pub window: u64,
    pub schedules: Vec<InjectionSchedule>,
    pub compose: ComposeOptions,
    pub optimizer: AdamWConfig,
}

impl RunPlan {
    pub fn tokens_per_step(&self) -> u64 {
        (self.rows * self.seq_len) as u64
    }
}

/// What one call of [`Trainer::advance`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub step: u64,
    /// `None` on the final, evaluation-only step.
    pub loss: Option<f64>,
    pub injected: usize,
    pub records: Vec<TraceRecord>,
}

/// Training loop state: everything needed to continue a run.
pub struct Trainer<'a, T> {
    pub model: MicroLm<T>,
    pub opt: OptimizerState<T>,
    pub stream: CorpusStream,
    pub step: u64,
    plan: &'a RunPlan,
    ks: &'a KnowledgeSet,
    tokenizer: &'a Tokenizer,
    corpus: &'a Corpus,
    probes: Vec<PreparedProbe>,
    evals: BTreeSet<u64>,
    grads: TensorMap<T>,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Resumes (or starts, with `step = 0`) from the given state.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plan: &'a RunPlan,
        ks: &'a KnowledgeSet,
        tokenizer: &'a Tokenizer,
        corpus: &'a Corpus,
        model: MicroLm<T>,
        opt: OptimizerState<T>,
        stream: CorpusStream,
        step: u64,
    ) -> Result<Self, TraceError> {
        plan.optimizer.validate()?;
        injector::validate_schedules(&plan.schedules, ks, tokenizer, plan.rows, plan.seq_len)?;
        if plan.seq_len > model.config.context_len {
            return Err(ModelError::SequenceTooLong { len: plan.seq_len, max: model.config.context_len }.into());
        }
        let probes = prepare_probes(ks, tokenizer, &plan.schedules, model.config.context_len)?;
        let evals = eval_steps(&plan.schedules, plan.eval_stride, plan.window, plan.total_steps);
        let grads = TensorMap::zeros_like(&model.params);
        Ok(Self { model, opt, stream, step, plan, ks, tokenizer, corpus, probes, evals, grads })
    }

    pub fn probes(&self) -> &[PreparedProbe] {
        &self.probes
    }

    pub fn eval_steps(&self) -> &BTreeSet<u64> {
        &self.evals
    }

    pub fn is_done(&self) -> bool {
        self.step > self.plan.total_steps
    }

    /// Records probes at the current step if scheduled, then trains on the
    /// current batch unless this is the final step.
    pub fn advance(&mut self) -> Result<StepOutcome, TraceError> {
        let t = self.step;
        if self.is_done() {
            return Err(TraceError::Finished(t));
        }
        let records =
            if self.evals.contains(&t) { evaluate_probes(&self.model, &self.probes, t)? } else { Vec::new() };
        let mut outcome = StepOutcome { step: t, loss: None, injected: 0, records };
        if t < self.plan.total_steps {
            let mut stream = self.stream.clone();
            let base = self.corpus.next_batch(&mut stream, self.plan.rows, self.plan.seq_len);
            let batch = injector::compose_batch(
                base,
                self.plan.rows,
                self.plan.seq_len,
                &self.plan.schedules,
                t,
                self.ks,
                self.tokenizer,
                self.plan.compose,
            )?;
            let loss = train_step(
                &mut self.model,
                &mut self.opt,
                &self.plan.optimizer,
                &mut self.grads,
                &batch.rows,
                self.plan.rows,
                t,
            )?;
            self.stream = stream;
            outcome.loss = Some(loss);
            outcome.injected = batch.injected.len();
        }
        self.step += 1;
        Ok(outcome)
    }
}
