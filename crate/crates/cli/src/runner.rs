//! Knowledge-set files and the training driver: checkpoints, resume and
//! numerical aborts around [`Trainer`].

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use factlab_core::corpus::{Corpus, CorpusStream};
use factlab_core::injector::ComposeOptions;
use factlab_core::microlm::{DType, MicroLm, Real, Tokenizer};
use factlab_core::optimizer::OptimizerState;
use factlab_core::synthkb::{self, KnowledgeSet};
use factlab_core::tracer::{RunPlan, TraceError, Trainer, SCHEMA};

use crate::checkpoint::{self, OptimMeta};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::hashing;
use crate::tracefile::{self, RunManifest, RunStatus, TraceWriter, MANIFEST_FILE, TRACE_FILE};

pub const KNOWLEDGE_FILE: &str = "knowledge.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const LATEST: &str = "LATEST";

#[derive(Serialize, Deserialize)]
struct KnowledgeFile {
    schema: String,
    #[serde(flatten)]
    set: KnowledgeSet,
}

pub fn write_knowledge(path: &Path, ks: &KnowledgeSet) -> Result<(), CliError> {
    let file = KnowledgeFile { schema: synthkb::SCHEMA.into(), set: ks.clone() };
    let mut text = serde_json::to_string_pretty(&file).expect("knowledge set serialises");
    text.push('\n');
    Ok(checkpoint::write_atomic(path, text.as_bytes())?)
}

pub fn read_knowledge(path: &Path) -> Result<KnowledgeSet, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e} (run `factlab gen` first)", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let schema = v.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
    if schema != synthkb::SCHEMA {
        return Err(CliError::Schema {
            file: path.display().to_string(),
            expected: synthkb::SCHEMA.into(),
            actual: schema.into(),
        });
    }
    let f: KnowledgeFile = serde_json::from_value(v).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for ids in f.set.scenario_partition.values() {
        if let Some(id) = ids.iter().find(|id| f.set.get(id).is_none()) {
            return Err(CliError::Data(format!("{}: partition names unknown item {id}", path.display())));
        }
    }
    Ok(f.set)
}

/// Vocabulary of the knowledge set plus everything the background stream
/// can emit.
pub fn build_tokenizer(cfg: &ExperimentConfig, ks: &KnowledgeSet) -> Tokenizer {
    let mut words = Corpus::words(&cfg.corpus_config());
    words.extend(ks.words());
    Tokenizer::from_words(words)
}

/// Hash of the settings that determine a run's trace; paths and stop
/// points are excluded so relocated or interrupted runs keep their id.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.paths = Default::default();
    c.train.stop_after = 0;
    c.train.checkpoint_every = 0;
    hashing::json_hash(&c)
}

pub fn run_plan(cfg: &ExperimentConfig, ks: &KnowledgeSet) -> Result<RunPlan, CliError> {
    let partition: Vec<_> = ks.scenario_partition.iter().map(|(s, v)| (*s, v.clone())).collect();
    Ok(RunPlan {
        rows: cfg.train.rows,
        seq_len: cfg.train.seq_len,
        total_steps: cfg.total_steps(),
        eval_stride: cfg.train.eval_stride,
        window: cfg.train.window,
        schedules: cfg.schedules(&partition)?,
        compose: ComposeOptions { inject_all_rows: cfg.injection.inject_all_rows },
        optimizer: cfg.adamw(),
    })
}

fn trace_error(e: TraceError) -> CliError {
    match e {
        TraceError::NonFiniteLoss(_) | TraceError::NonFiniteParams(_) => CliError::Numerical(e.to_string()),
        TraceError::ProbeTooLong { .. } | TraceError::Inject(_) => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

pub fn checkpoint_root(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_DIR)
}

/// Directory of the newest complete checkpoint, if any.
pub fn latest_checkpoint(out: &Path) -> Result<Option<PathBuf>, CliError> {
    let root = checkpoint_root(out);
    match fs::read_to_string(root.join(LATEST)) {
        Ok(name) => Ok(Some(root.join(name.trim()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Writes model and optimizer state into a fresh step directory, then
/// repoints `LATEST` and removes older directories.
fn save_checkpoint<T: Real>(out: &Path, trainer: &Trainer<'_, T>, tok: &Tokenizer, plan: &RunPlan) -> Result<(), CliError> {
    let root = checkpoint_root(out);
    let name = format!("step-{:06}", trainer.step);
    let dir = root.join(&name);
    fs::create_dir_all(&dir)?;
    checkpoint::save_model(&dir.join("model.ckpt"), &trainer.model, tok)?;
    let meta = OptimMeta {
        step_count: trainer.opt.step_count,
        next_step: trainer.step,
        optimizer: plan.optimizer.clone(),
        stream: trainer.stream.clone(),
    };
    checkpoint::save_state(&dir.join("optim.state"), &trainer.opt, &meta)?;
    checkpoint::write_atomic(&root.join(LATEST), name.as_bytes())?;
    for entry in fs::read_dir(&root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() && entry.file_name() != name.as_str() {
            fs::remove_dir_all(entry.path())?;
        }
    }
    Ok(())
}

/// Trains per the config, writing trace, manifest and checkpoints into the
/// output directory. With `resume`, continues from the newest checkpoint.
pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<RunManifest, CliError> {
    match cfg.model.dtype {
        DType::F64 => train_typed::<f64>(cfg, resume),
        DType::F32 => train_typed::<f32>(cfg, resume),
    }
}

fn train_typed<T: Real>(cfg: &ExperimentConfig, resume: bool) -> Result<RunManifest, CliError> {
    let out = cfg.paths.output_dir.clone();
    fs::create_dir_all(&out)?;
    let ks = read_knowledge(&cfg.knowledge_path())?;
    let tok = build_tokenizer(cfg, &ks);
    let corpus = Corpus::new(cfg.corpus_config(), &tok).map_err(CliError::data)?;
    let plan = run_plan(cfg, &ks)?;
    let hash = config_hash(cfg);
    let run_id = hash[..16].to_string();
    let trace_path = out.join(TRACE_FILE);
    let manifest_path = out.join(MANIFEST_FILE);

    let (model, opt, stream, step, mut writer) = if resume {
        let prev = RunManifest::read(&manifest_path)?;
        if prev.config_hash != hash {
            return Err(CliError::Config(format!(
                "config differs from the run being resumed (hash {} vs {})",
                &hash[..16],
                &prev.config_hash[..16.min(prev.config_hash.len())]
            )));
        }
        if prev.status == RunStatus::Finished {
            return Ok(prev);
        }
        let dir = latest_checkpoint(&out)?.ok_or_else(|| CliError::Data("no checkpoint to resume from".into()))?;
        let (model, ck_tok) = checkpoint::load_model::<T>(&dir.join("model.ckpt"))?;
        if ck_tok != tok || model.config != cfg.model_config(tok.len()) {
            return Err(CliError::Data("checkpoint does not match the configured model".into()));
        }
        let (opt, meta) = checkpoint::load_state::<T>(&dir.join("optim.state"))?;
        tracefile::truncate_trace(&trace_path, meta.next_step)?;
        (model, opt, meta.stream, meta.next_step, TraceWriter::append(&trace_path, &run_id)?)
    } else {
        let root = checkpoint_root(&out);
        if root.exists() {
            fs::remove_dir_all(&root)?;
        }
        let model = MicroLm::<T>::init(cfg.model_config(tok.len())).map_err(|e| CliError::Config(e.to_string()))?;
        let opt = OptimizerState::new(&model.params);
        let stream = CorpusStream::new(cfg.stream_seed());
        (model, opt, stream, 0, TraceWriter::create(&trace_path, &run_id)?)
    };

    let mut trainer = Trainer::new(&plan, &ks, &tok, &corpus, model, opt, stream, step).map_err(trace_error)?;
    let mut manifest = RunManifest {
        schema: SCHEMA.into(),
        run_id: run_id.clone(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        schedule: plan.schedules.clone(),
        model_config: trainer.model.config.clone(),
        tokenizer_hash: hashing::tokenizer_hash(&tok),
        knowledge_hash: hashing::json_hash(&ks),
        steps_completed: trainer.step.min(plan.total_steps),
        total_steps: plan.total_steps,
        rows: plan.rows,
        seq_len: plan.seq_len,
        tokens_per_step: plan.tokens_per_step(),
        eval_stride: plan.eval_stride,
        window: plan.window,
        cursor: trainer.stream.clone(),
        status: RunStatus::Running,
        message: None,
        timestamp: 0,
    };
    if !resume {
        save_checkpoint(&out, &trainer, &tok, &plan)?;
    }
    manifest.write(&manifest_path)?;

    let started = Instant::now();
    let first = trainer.step;
    let every = cfg.train.checkpoint_every;
    while !trainer.is_done() {
        if cfg.train.stop_after > 0 && trainer.step >= cfg.train.stop_after {
            save_checkpoint(&out, &trainer, &tok, &plan)?;
            manifest.status = RunStatus::Stopped;
            break;
        }
        let outcome = match trainer.advance() {
            Ok(o) => o,
            Err(e) => {
                let err = trace_error(e);
                manifest.status = RunStatus::Aborted;
                manifest.message = Some(err.to_string());
                manifest.write(&manifest_path)?;
                return Err(err);
            }
        };
        writer.write(&outcome.records)?;
        manifest.steps_completed = trainer.step.min(plan.total_steps);
        manifest.cursor = trainer.stream.clone();
        if every > 0 && trainer.step % every == 0 && !trainer.is_done() {
            save_checkpoint(&out, &trainer, &tok, &plan)?;
            manifest.write(&manifest_path)?;
        }
        if outcome.step % 250 == 0 {
            if let Some(loss) = outcome.loss {
                let rate = started.elapsed().as_secs_f64() / (trainer.step - first) as f64;
                eprintln!("step {:>5}/{}  loss {loss:.4}  {rate:.3} s/step", outcome.step, plan.total_steps);
            }
        }
    }
    if trainer.is_done() {
        save_checkpoint(&out, &trainer, &tok, &plan)?;
        manifest.status = RunStatus::Finished;
    }
    manifest.steps_completed = trainer.step.min(plan.total_steps);
    manifest.cursor = trainer.stream.clone();
    manifest.write(&manifest_path)?;
    Ok(manifest)
}

/// Steps at which a finished run's trace must hold records.
pub fn expected_eval_steps(m: &RunManifest) -> BTreeSet<u64> {
    factlab_core::tracer::eval_steps(&m.schedule, m.eval_stride, m.window, m.total_steps)
}
