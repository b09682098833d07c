//! Subcommand bodies. Each reads its inputs from files and writes its
//! outputs into the configured output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use factlab_core::acqsim::{self, DecayModel, EncounterSchedule, ZipfConfig};
use factlab_core::dynamics::{self, compute_metrics};
use factlab_core::forgetfit::{fit_all, FitOptions};
use factlab_core::synthkb::generate_knowledge_set;
use factlab_core::Scenario;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::{self, ReportInputs};
use crate::runner::{self, KNOWLEDGE_FILE};
use crate::svg::{Plot, Series};
use crate::tables::{self, COMPARE_FILE, FITS_FILE, METRICS_FILE, SWEEP_FILE, ZIPF_FILE};
use crate::tracefile::{self, RunManifest, MANIFEST_FILE, TRACE_FILE};

pub const REPORT_FILE: &str = "report.md";
pub const PLOT_DIR: &str = "plots";

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.paths.output_dir)?;
    Ok(cfg.paths.output_dir.clone())
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let ks = generate_knowledge_set(cfg.knowledge_seed(), cfg.knowledge.n_items, cfg.knowledge.probes_per_depth)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let path = out_dir(cfg)?.join(KNOWLEDGE_FILE);
    runner::write_knowledge(&path, &ks)?;
    Ok(path)
}

pub fn cmd_train(cfg: &ExperimentConfig, resume: bool) -> Result<RunManifest, CliError> {
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    runner::train(cfg, resume)
}

/// Metrics from a trace; `trace`/`manifest` default to the output directory.
pub fn cmd_measure(cfg: &ExperimentConfig, trace: Option<&Path>, manifest: Option<&Path>) -> Result<PathBuf, CliError> {
    let out = out_dir(cfg)?;
    let trace = trace.map(Path::to_path_buf).unwrap_or_else(|| out.join(TRACE_FILE));
    let manifest = manifest.map(Path::to_path_buf).unwrap_or_else(|| trace.with_file_name(MANIFEST_FILE));
    let m = RunManifest::read(&manifest)?;
    let (run_id, records) = tracefile::read_trace(&trace)?;
    if let Some(id) = run_id {
        if id != m.run_id {
            return Err(CliError::Data(format!("trace run id {id} does not match manifest {}", m.run_id)));
        }
    }
    let inj: BTreeMap<Scenario, Vec<u64>> = m.schedule.iter().map(|s| (s.scenario, s.injection_steps())).collect();
    let series = dynamics::series_from_records(&records, &inj, m.window);
    let table = compute_metrics(&series, cfg.analysis.iqr_factor).map_err(CliError::data)?;
    if table.zero_denominator > 0 {
        eprintln!("note: {} probes show no net acquisition and are left out of retainability", table.zero_denominator);
    }
    if table.truncated_windows > 0 {
        eprintln!("note: {} windows were cut short by the next injection", table.truncated_windows);
    }
    let path = out.join(METRICS_FILE);
    tables::write_metrics(&path, &table.samples)?;
    Ok(path)
}

pub fn cmd_fit(cfg: &ExperimentConfig, metrics: Option<&Path>) -> Result<PathBuf, CliError> {
    let out = out_dir(cfg)?;
    let metrics = metrics.map(Path::to_path_buf).unwrap_or_else(|| out.join(METRICS_FILE));
    let samples = tables::read_metrics(&metrics)?;
    let tps = (cfg.train.rows * cfg.train.seq_len) as u64;
    let (mut rows, skipped) = fit_all(&samples, tps, FitOptions { weighted: cfg.analysis.weighted });
    for s in skipped {
        eprintln!("note: skipped {s}");
    }
    // The configured estimator leads each group.
    rows.sort_by_key(|r| (r.scenario, r.depth, r.estimator != cfg.analysis.estimator));
    let path = out.join(FITS_FILE);
    tables::write_fits(&path, &rows)?;
    Ok(path)
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let out = out_dir(cfg)?;
    let plots = out.join(PLOT_DIR);
    fs::create_dir_all(&plots)?;
    let sim = &cfg.sim;
    let model = sim.model();
    let cerr = |e: acqsim::SimError| CliError::Config(e.to_string());

    let rows = acqsim::sweep(&sim.jumps, &sim.decays, &sim.intervals, sim.theta_dec, sim.horizon).map_err(cerr)?;
    let sweep_path = out.join(SWEEP_FILE);
    tables::write_sweep(&sweep_path, &rows)?;

    let zcfg = ZipfConfig {
        n_facts: sim.zipf_facts,
        exponent: sim.zipf_exponent,
        budget: sim.zipf_budget,
        horizon: sim.horizon,
        theta_dec: sim.theta_dec,
    };
    let z = acqsim::zipf_experiment(&model, &zcfg).map_err(cerr)?;
    let zipf_path = out.join(ZIPF_FILE);
    tables::write_zipf(&zipf_path, &z)?;

    let dup = DecayModel::new(sim.compare_dup_jump, sim.compare_dup_decay);
    let para = DecayModel::new(sim.compare_para_jump, sim.compare_para_decay);
    let horizon = 20 * sim.compare_interval.max(1);
    let sched = EncounterSchedule::periodic(0, sim.compare_interval.max(1), horizon);
    let cmp = acqsim::scenario_compare(&dup, &para, &sched, horizon).map_err(cerr)?;
    let cmp_path = out.join(COMPARE_FILE);
    tables::write_compare(&cmp_path, &cmp)?;
    let plot = |v: &[f64]| v.iter().enumerate().map(|(t, &y)| (t as f64, y)).collect::<Vec<_>>();
    let cmp_svg = Plot {
        title: "Accumulated improvement under periodic encounters".into(),
        x_label: "step".into(),
        y_label: "log-probability improvement".into(),
        series: vec![
            Series { name: format!("E={} a={}", dup.jump, dup.decay), points: plot(&cmp.dup.improvement) },
            Series { name: format!("E={} a={}", para.jump, para.decay), points: plot(&cmp.para.improvement) },
        ],
        marks: cmp.crossing.map(|c| c as f64).into_iter().collect(),
    };
    let cmp_svg_path = plots.join("sim_compare.svg");
    fs::write(&cmp_svg_path, cmp_svg.render())?;

    let mut series = Vec::new();
    let h = sim.horizon.min(2000);
    for &d in sim.intervals.iter().take(6) {
        let tr = acqsim::simulate_trajectory(&model, &EncounterSchedule::periodic(0, d, h), h, f64::INFINITY).map_err(cerr)?;
        series.push(Series { name: format!("interval {d}"), points: plot(&tr.improvement) });
    }
    let int_svg = Plot {
        title: format!("Accumulation by interval (E={}, a={}), decode threshold {}", model.jump, model.decay, sim.theta_dec),
        x_label: "step".into(),
        y_label: "log-probability improvement".into(),
        series,
        marks: Vec::new(),
    };
    let int_svg_path = plots.join("sim_intervals.svg");
    fs::write(&int_svg_path, int_svg.render())?;
    Ok(vec![sweep_path, zipf_path, cmp_path, cmp_svg_path, int_svg_path])
}

pub fn cmd_report(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let out = out_dir(cfg)?;
    let plots = out.join(PLOT_DIR);
    fs::create_dir_all(&plots)?;
    let m = RunManifest::read(&out.join(MANIFEST_FILE))?;
    let (_, records) = tracefile::read_trace(&out.join(TRACE_FILE))?;
    let samples = tables::read_metrics(&out.join(METRICS_FILE))?;
    let fits = tables::read_fits(&out.join(FITS_FILE))?;
    let sweep = if out.join(SWEEP_FILE).exists() { tables::read_sweep(&out.join(SWEEP_FILE))? } else { Vec::new() };
    let zipf = if out.join(ZIPF_FILE).exists() { tables::read_zipf(&out.join(ZIPF_FILE))? } else { Vec::new() };

    let mut names = Vec::new();
    for s in &m.schedule {
        let name = format!("{PLOT_DIR}/trajectory_{}.svg", s.scenario);
        fs::write(out.join(&name), report::trajectory_plot(&records, s.scenario, &s.injection_steps()).render())?;
        names.push(name);
        let name = format!("{PLOT_DIR}/retainability_{}.svg", s.scenario);
        fs::write(out.join(&name), report::retainability_plot(&samples, s.scenario).render())?;
        names.push(name);
    }
    for extra in ["sim_compare.svg", "sim_intervals.svg"] {
        if plots.join(extra).exists() {
            names.push(format!("{PLOT_DIR}/{extra}"));
        }
    }
    let text = report::render_markdown(&ReportInputs {
        samples: &samples,
        fits: &fits,
        sweep: &sweep,
        zipf: &zipf,
        zipf_buckets: cfg.sim.zipf_buckets,
        tokens_per_step: m.tokens_per_step,
        plots: &names,
    });
    let path = out.join(REPORT_FILE);
    fs::write(&path, text)?;
    Ok(path)
}

pub fn cmd_pipeline(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cmd_gen(cfg)?;
    let m = cmd_train(cfg, false)?;
    if m.status != tracefile::RunStatus::Finished {
        return Err(CliError::Config("pipeline needs a complete run; unset train.stop_after".into()));
    }
    cmd_measure(cfg, None, None)?;
    cmd_fit(cfg, None)?;
    cmd_simulate(cfg)?;
    cmd_report(cfg)?;
    Ok(())
}
