//! Experiment configuration: one TOML document, overridable key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use factlab_core::acqsim::DecayModel;
use factlab_core::corpus::CorpusConfig;
use factlab_core::forgetfit::Estimator;
use factlab_core::injector::{self, InjectionSchedule};
use factlab_core::microlm::{DType, ModelConfig};
use factlab_core::optimizer::{AdamWConfig, ScheduleConfig, ScheduleMode};
use factlab_core::{seed, Scenario};

use crate::error::CliError;

pub const OUTPUT_DIR_ENV: &str = "FACTLAB_OUTPUT_DIR";

/// Every configuration key with its meaning; printed by `--help`.
pub const CONFIG_KEYS: &str = "\
CONFIG KEYS (TOML; override any with --set key=value):
  seed                          root seed; every component derives its own from it
  paths.output_dir              artifact directory (env FACTLAB_OUTPUT_DIR overrides)
  paths.knowledge_set           existing knowledge-set JSON; empty = <output_dir>/knowledge.json
  knowledge.n_items             fictional items, split evenly across scenarios
  knowledge.probes_per_depth    probes per depth per item (1..=5)
  corpus.n_orgs                 background organisation names
  corpus.n_places               background place names
  corpus.n_people               background person names
  corpus.composition_rate       share of background documents ending in a two-hop sentence
  model.n_layers                transformer blocks
  model.d_model                 residual width
  model.n_heads                 attention heads (must divide d_model)
  model.d_ff                    feed-forward width
  model.context_len             maximum sequence length
  model.dtype                   f64 or f32
  optimizer.beta1               AdamW first-moment decay
  optimizer.beta2               AdamW second-moment decay
  optimizer.eps                 AdamW denominator offset
  optimizer.weight_decay        decoupled weight decay (matrices only)
  optimizer.peak_lr             peak learning rate
  optimizer.min_lr              final learning rate (cosine)
  optimizer.warmup_steps        linear warmup length
  optimizer.schedule            cosine or constant
  train.rows                    batch rows
  train.seq_len                 tokens per row
  train.pretrain_steps          background-only steps before the first injection
  train.follow_on_steps         steps after the injection phase
  train.eval_stride             probe evaluation stride outside windows
  train.window                  t_w, dense evaluation window after each injection
  train.checkpoint_every        steps between checkpoints
  train.stop_after              stop early after this many steps (0 = run to the end)
  injection.interval            steps between injections
  injection.repetitions         injections for duplication and paraphrase
  injection.scenarios           scenarios to inject
  injection.inject_all_rows     fill every batch row, not one row per item
  analysis.iqr_factor           IQR fence factor
  analysis.estimator            mean_curve or per_probe_mean (both are always reported)
  analysis.weighted             weight fit points by sample count
  sim.jump                      per-encounter improvement E
  sim.decay                     decay constant a
  sim.unit_offset               offset up to which gains are fully retained
  sim.first_multiplier          scale of the first encounter's jump
  sim.theta_dec                 decode threshold
  sim.horizon                   simulated steps
  sim.intervals                 intervals for the sweep table
  sim.jumps                     jump grid for the sweep table
  sim.decays                    decay grid for the sweep table
  sim.zipf_facts                facts in the long-tail experiment
  sim.zipf_exponent             popularity exponent s
  sim.zipf_budget               total encounters shared by all facts
  sim.zipf_buckets              rank buckets in the report
  sim.compare_dup_jump          duplication-like model jump
  sim.compare_dup_decay         duplication-like model decay
  sim.compare_para_jump         paraphrase-like model jump
  sim.compare_para_decay        paraphrase-like model decay
  sim.compare_interval          encounter interval for the comparison
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub output_dir: PathBuf,
    pub knowledge_set: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("runs/desk"), knowledge_set: PathBuf::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnowledgeSection {
    pub n_items: usize,
    pub probes_per_depth: usize,
}

impl Default for KnowledgeSection {
    fn default() -> Self {
        Self { n_items: 24, probes_per_depth: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_orgs: usize,
    pub n_places: usize,
    pub n_people: usize,
    pub composition_rate: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self { n_orgs: c.n_orgs, n_places: c.n_places, n_people: c.n_people, composition_rate: c.composition_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub dtype: DType,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(0, 0);
        Self {
            n_layers: d.n_layers,
            d_model: d.d_model,
            n_heads: d.n_heads,
            d_ff: d.d_ff,
            context_len: d.context_len,
            dtype: DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub schedule: ScheduleMode,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            peak_lr: 3e-3,
            min_lr: 3e-4,
            warmup_steps: 100,
            schedule: ScheduleMode::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub rows: usize,
    pub seq_len: usize,
    pub pretrain_steps: u64,
    pub follow_on_steps: u64,
    pub eval_stride: u64,
    pub window: u64,
    pub checkpoint_every: u64,
    pub stop_after: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            rows: 32,
            seq_len: 128,
            pretrain_steps: 300,
            follow_on_steps: 1500,
            eval_stride: 5,
            window: 50,
            checkpoint_every: 250,
            stop_after: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionSection {
    pub interval: u64,
    pub repetitions: u32,
    pub scenarios: Vec<Scenario>,
    pub inject_all_rows: bool,
}

impl Default for InjectionSection {
    fn default() -> Self {
        Self {
            interval: injector::DEFAULT_INTERVAL,
            repetitions: injector::DEFAULT_REPETITIONS,
            scenarios: Scenario::ALL.to_vec(),
            inject_all_rows: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub iqr_factor: f64,
    pub estimator: Estimator,
    pub weighted: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { iqr_factor: 1.5, estimator: Estimator::MeanCurve, weighted: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub jump: f64,
    pub decay: f64,
    pub unit_offset: u64,
    pub first_multiplier: f64,
    pub theta_dec: f64,
    pub horizon: u64,
    pub intervals: Vec<u64>,
    pub jumps: Vec<f64>,
    pub decays: Vec<f64>,
    pub zipf_facts: usize,
    pub zipf_exponent: f64,
    pub zipf_budget: u64,
    pub zipf_buckets: usize,
    pub compare_dup_jump: f64,
    pub compare_dup_decay: f64,
    pub compare_para_jump: f64,
    pub compare_para_decay: f64,
    pub compare_interval: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            jump: 1.0,
            decay: 0.25,
            unit_offset: 1,
            first_multiplier: 1.0,
            theta_dec: 3.0,
            horizon: 20_000,
            intervals: vec![1, 2, 3, 5, 8, 10, 15, 20, 30, 50, 60],
            jumps: vec![0.5, 1.0, 1.5],
            decays: vec![0.1, 0.15, 0.2, 0.25, 0.3],
            zipf_facts: 200,
            zipf_exponent: 1.0,
            zipf_budget: 500_000,
            zipf_buckets: 20,
            compare_dup_jump: 1.2,
            compare_dup_decay: 0.25,
            compare_para_jump: 1.0,
            compare_para_decay: 0.2,
            compare_interval: 30,
        }
    }
}

impl SimSection {
    pub fn model(&self) -> DecayModel {
        DecayModel {
            jump: self.jump,
            decay: self.decay,
            unit_offset: self.unit_offset,
            first_multiplier: self.first_multiplier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub knowledge: KnowledgeSection,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub train: TrainSection,
    pub injection: InjectionSection,
    pub analysis: AnalysisSection,
    pub sim: SimSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: Paths::default(),
            knowledge: KnowledgeSection::default(),
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            optimizer: OptimizerSection::default(),
            train: TrainSection::default(),
            injection: InjectionSection::default(),
            analysis: AnalysisSection::default(),
            sim: SimSection::default(),
        }
    }
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.trim().split('.').map(String::from).collect(), value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().ok_or_else(|| CliError::Config("empty override key".into()))?;
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (or defaults when `None`), applies overrides and the
    /// output-directory environment variable, and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = parse_override(o)?;
            apply_override(&mut table, &key, value)?;
        }
        let mut cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.paths.output_dir = PathBuf::from(dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.train.window == 0 {
            return bad("train.window must be at least 1".into());
        }
        if self.train.rows == 0 || self.train.seq_len == 0 {
            return bad("train.rows and train.seq_len must be positive".into());
        }
        if self.train.seq_len > self.model.context_len {
            return bad(format!("train.seq_len {} exceeds model.context_len {}", self.train.seq_len, self.model.context_len));
        }
        if self.train.pretrain_steps == 0 {
            return bad("train.pretrain_steps must be at least 1 so t_pre exists".into());
        }
        if self.injection.scenarios.is_empty() {
            return bad("injection.scenarios is empty".into());
        }
        if !(self.analysis.iqr_factor >= 0.0) {
            return bad("analysis.iqr_factor must be non-negative".into());
        }
        self.model_config(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.adamw().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !self.paths.knowledge_set.as_os_str().is_empty() && !self.paths.knowledge_set.exists() {
            return bad(format!("paths.knowledge_set {} does not exist", self.paths.knowledge_set.display()));
        }
        self.schedules(&[]).map(|_| ())
    }

    /// Warnings that do not stop a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.train.window >= self.injection.interval && self.injection.repetitions > 1 {
            w.push(format!(
                "window {} is not shorter than interval {}; windows will be truncated at the next injection",
                self.train.window, self.injection.interval
            ));
        }
        w
    }

    pub fn injection_start(&self) -> u64 {
        self.train.pretrain_steps
    }

    /// Training steps in the whole run; the trace closes with a record at
    /// this step.
    pub fn total_steps(&self) -> u64 {
        self.train.pretrain_steps
            + self.injection.repetitions.max(1) as u64 * self.injection.interval
            + self.train.follow_on_steps
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.model.n_layers,
            d_model: self.model.d_model,
            n_heads: self.model.n_heads,
            d_ff: self.model.d_ff,
            context_len: self.model.context_len,
            vocab_size: vocab_size.max(2),
            seed: seed::derive(self.seed, "model"),
            dtype: self.model.dtype,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        let o = &self.optimizer;
        AdamWConfig {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            lr_schedule: ScheduleConfig {
                peak_lr: o.peak_lr,
                warmup_steps: o.warmup_steps.min(self.total_steps()),
                total_steps: self.total_steps(),
                min_lr: o.min_lr,
                mode: o.schedule,
            },
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: seed::derive(self.seed, "corpus"),
            n_orgs: self.corpus.n_orgs,
            n_places: self.corpus.n_places,
            n_people: self.corpus.n_people,
            composition_rate: self.corpus.composition_rate,
        }
    }

    pub fn knowledge_seed(&self) -> u64 {
        seed::derive(self.seed, "synthkb")
    }

    pub fn stream_seed(&self) -> u64 {
        seed::derive(self.seed, "stream")
    }

    /// One schedule per configured scenario over that scenario's items.
    pub fn schedules(
        &self,
        partition: &[(Scenario, Vec<String>)],
    ) -> Result<Vec<InjectionSchedule>, CliError> {
        self.injection
            .scenarios
            .iter()
            .map(|&s| {
                let reps = if s == Scenario::Once { 1 } else { self.injection.repetitions };
                let ids = partition.iter().find(|(p, _)| *p == s).map(|(_, v)| v.clone()).unwrap_or_default();
                injector::plan_injections(s, self.injection.interval, reps, self.injection_start(), ids)
                    .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect()
    }

    /// Knowledge-set path: explicit, or inside the output directory.
    pub fn knowledge_path(&self) -> PathBuf {
        if self.paths.knowledge_set.as_os_str().is_empty() {
            self.paths.output_dir.join("knowledge.json")
        } else {
            self.paths.knowledge_set.clone()
        }
    }
}
