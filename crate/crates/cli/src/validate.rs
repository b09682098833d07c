//! Schema validation of every artifact in an output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use factlab_core::microlm::DType;

use crate::checkpoint;
use crate::commands::{PLOT_DIR, REPORT_FILE};
use crate::error::CliError;
use crate::runner::{self, KNOWLEDGE_FILE};
use crate::tables::{self, COMPARE_FILE, FITS_FILE, METRICS_FILE, SWEEP_FILE, ZIPF_FILE};
use crate::tracefile::{self, RunManifest, RunStatus, MANIFEST_FILE, TRACE_FILE};

fn check_run(dir: &Path) -> Result<(), CliError> {
    let m = RunManifest::read(&dir.join(MANIFEST_FILE))?;
    if m.status != RunStatus::Finished || m.steps_completed != m.total_steps {
        return Err(CliError::Data(format!("run is {:?} at step {}/{}", m.status, m.steps_completed, m.total_steps)));
    }
    let (id, records) = tracefile::read_trace(&dir.join(TRACE_FILE))?;
    if id.as_deref() != Some(m.run_id.as_str()) {
        return Err(CliError::Data("trace run id differs from manifest".into()));
    }
    let mut per_step: BTreeMap<u64, BTreeSet<&str>> = BTreeMap::new();
    for r in &records {
        if !per_step.entry(r.step).or_default().insert(&r.probe_id) {
            return Err(CliError::Data(format!("duplicate record for {} at step {}", r.probe_id, r.step)));
        }
    }
    let want = runner::expected_eval_steps(&m);
    if per_step.keys().copied().collect::<BTreeSet<_>>() != want {
        return Err(CliError::Data("trace steps differ from the evaluation plan".into()));
    }
    let probes = per_step.values().next().map(BTreeSet::len).unwrap_or(0);
    if per_step.values().any(|s| s.len() != probes) {
        return Err(CliError::Data("some steps lack records for some probes".into()));
    }
    let ck = runner::latest_checkpoint(dir)?.ok_or_else(|| CliError::Data("no checkpoint".into()))?;
    match checkpoint::stored_dtype(&ck.join("model.ckpt"))? {
        DType::F64 => {
            checkpoint::load_model::<f64>(&ck.join("model.ckpt"))?;
            checkpoint::load_state::<f64>(&ck.join("optim.state"))?;
        }
        DType::F32 => {
            checkpoint::load_model::<f32>(&ck.join("model.ckpt"))?;
            checkpoint::load_state::<f32>(&ck.join("optim.state"))?;
        }
    }
    Ok(())
}

fn check_svg(path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path)?;
    if text.starts_with("<svg") && text.trim_end().ends_with("</svg>") {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} is not an SVG document", path.display())))
    }
}

/// One result per artifact, in pipeline order.
pub fn validate_dir(dir: &Path) -> Vec<(String, Result<(), CliError>)> {
    let mut out: Vec<(String, Result<(), CliError>)> = vec![
        (KNOWLEDGE_FILE.into(), runner::read_knowledge(&dir.join(KNOWLEDGE_FILE)).map(|_| ())),
        (format!("{MANIFEST_FILE} + {TRACE_FILE} + checkpoints"), check_run(dir)),
        (METRICS_FILE.into(), tables::read_metrics(&dir.join(METRICS_FILE)).map(|_| ())),
        (FITS_FILE.into(), tables::read_fits(&dir.join(FITS_FILE)).map(|_| ())),
        (SWEEP_FILE.into(), tables::read_sweep(&dir.join(SWEEP_FILE)).map(|_| ())),
        (ZIPF_FILE.into(), tables::read_zipf(&dir.join(ZIPF_FILE)).map(|_| ())),
        (COMPARE_FILE.into(), tables::read_compare(&dir.join(COMPARE_FILE)).map(|_| ())),
        (
            REPORT_FILE.into(),
            fs::read_to_string(dir.join(REPORT_FILE)).map_err(CliError::from).and_then(|t| {
                if t.starts_with("# ") {
                    Ok(())
                } else {
                    Err(CliError::Data("report has no title".into()))
                }
            }),
        ),
    ];
    match fs::read_dir(dir.join(PLOT_DIR)) {
        Ok(entries) => {
            let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            paths.sort();
            for p in paths {
                out.push((format!("{PLOT_DIR}/{}", p.file_name().unwrap_or_default().to_string_lossy()), check_svg(&p)));
            }
        }
        Err(e) => out.push((PLOT_DIR.into(), Err(e.into()))),
    }
    out
}
