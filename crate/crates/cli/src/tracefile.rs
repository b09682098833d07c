//! Trace JSONL and the run manifest sidecar.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use factlab_core::corpus::CorpusStream;
use factlab_core::injector::InjectionSchedule;
use factlab_core::microlm::ModelConfig;
use factlab_core::tracer::{TraceRecord, SCHEMA};
use factlab_core::{Depth, Scenario};

use crate::checkpoint::write_atomic;
use crate::error::CliError;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One trace line: the record fields plus the run id, nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLine {
    pub run_id: String,
    pub step: u64,
    pub scenario: Scenario,
    pub knowledge_id: String,
    pub probe_id: String,
    pub depth: Depth,
    pub logprob_sum: f64,
    pub logprob_mean: f64,
    pub span_len: usize,
}

impl TraceLine {
    pub fn new(run_id: &str, r: &TraceRecord) -> Self {
        Self {
            run_id: run_id.to_string(),
            step: r.step,
            scenario: r.scenario,
            knowledge_id: r.knowledge_id.clone(),
            probe_id: r.probe_id.clone(),
            depth: r.depth,
            logprob_sum: r.logprob_sum,
            logprob_mean: r.logprob_mean,
            span_len: r.span_len,
        }
    }

    pub fn record(self) -> TraceRecord {
        TraceRecord {
            step: self.step,
            scenario: self.scenario,
            knowledge_id: self.knowledge_id,
            probe_id: self.probe_id,
            depth: self.depth,
            logprob_sum: self.logprob_sum,
            logprob_mean: self.logprob_mean,
            span_len: self.span_len,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.span_len == 0 {
            return Err("span_len is 0".into());
        }
        if !(self.logprob_sum <= 0.0) {
            return Err(format!("logprob_sum {} is not ≤ 0", self.logprob_sum));
        }
        if self.logprob_mean * self.span_len as f64 != self.logprob_sum {
            return Err("logprob_mean · span_len differs from logprob_sum".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Stopped,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub schedule: Vec<InjectionSchedule>,
    pub model_config: ModelConfig,
    pub tokenizer_hash: String,
    pub knowledge_hash: String,
    pub steps_completed: u64,
    pub total_steps: u64,
    pub rows: usize,
    pub seq_len: usize,
    pub tokens_per_step: u64,
    pub eval_stride: u64,
    pub window: u64,
    pub cursor: CorpusStream,
    pub status: RunStatus,
    pub message: Option<String>,
    /// Seconds since the Unix epoch at the last write; the only field that
    /// differs between identical runs.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let schema = v.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
        if schema != SCHEMA {
            return Err(CliError::Schema { file: path.display().to_string(), expected: SCHEMA.into(), actual: schema.into() });
        }
        let m: RunManifest = serde_json::from_value(v).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if m.tokens_per_step != (m.rows * m.seq_len) as u64 {
            return Err(CliError::Data(format!("{}: tokens_per_step is not rows × seq_len", path.display())));
        }
        Ok(m)
    }

    pub fn write(&mut self, path: &Path) -> Result<(), CliError> {
        self.timestamp =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        Ok(write_atomic(path, text.as_bytes())?)
    }
}

/// Append-only trace writer, flushed after every batch of records.
pub struct TraceWriter {
    out: BufWriter<File>,
    run_id: String,
}

impl TraceWriter {
    pub fn create(path: &Path, run_id: &str) -> Result<Self, CliError> {
        Ok(Self { out: BufWriter::new(File::create(path)?), run_id: run_id.into() })
    }

    pub fn append(path: &Path, run_id: &str) -> Result<Self, CliError> {
        let f = OpenOptions::new().append(true).create(true).open(path)?;
        Ok(Self { out: BufWriter::new(f), run_id: run_id.into() })
    }

    pub fn write(&mut self, records: &[TraceRecord]) -> Result<(), CliError> {
        for r in records {
            serde_json::to_writer(&mut self.out, &TraceLine::new(&self.run_id, r)).map_err(std::io::Error::from)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        Ok(())
    }
}

fn parse_line(line: &str, n: usize, path: &Path) -> Result<TraceLine, CliError> {
    let l: TraceLine =
        serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}:{n}: {e}", path.display())))?;
    l.check().map_err(|e| CliError::Data(format!("{}:{n}: {e}", path.display())))?;
    Ok(l)
}

/// Reads and validates a whole trace. All lines must share one run id.
pub fn read_trace(path: &Path) -> Result<(Option<String>, Vec<TraceRecord>), CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut run_id: Option<String> = None;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let l = parse_line(&line, i + 1, path)?;
        match &run_id {
            None => run_id = Some(l.run_id.clone()),
            Some(id) if *id != l.run_id => {
                return Err(CliError::Data(format!("{}:{}: mixed run ids", path.display(), i + 1)));
            }
            _ => {}
        }
        out.push(l.record());
    }
    Ok((run_id, out))
}

/// Drops records at or after `step`, plus a torn final line left by a
/// crash. Returns the number of records kept.
pub fn truncate_trace(path: &Path, step: u64) -> Result<usize, CliError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut kept = String::with_capacity(text.len());
    let mut n = 0;
    for (i, line) in lines.iter().enumerate() {
        let torn = i + 1 == lines.len() && !complete;
        match parse_line(line, i + 1, path) {
            Ok(l) if l.step < step => {
                kept.push_str(line);
                kept.push('\n');
                n += 1;
            }
            Ok(_) => {}
            Err(_) if torn => {}
            Err(e) => return Err(e),
        }
    }
    write_atomic(path, kept.as_bytes())?;
    Ok(n)
}
