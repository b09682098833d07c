//! CSV artifacts: metrics, fits and simulator tables.

use std::path::Path;

use factlab_core::acqsim::{Comparison, SweepRow, Threshold, ZipfOutcome};
use factlab_core::dynamics::{MetricKind, MetricSample};
use factlab_core::forgetfit::{Estimator, FitResult, FitRow};

use crate::error::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FITS_FILE: &str = "fits.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ZIPF_FILE: &str = "zipf.csv";
pub const COMPARE_FILE: &str = "compare.csv";

pub const METRICS_HEADER: [&str; 8] =
    ["kind", "scenario", "depth", "encounter_index", "t_offset", "probe_id", "value", "filtered_flag"];
pub const FITS_HEADER: [&str; 10] = [
    "scenario",
    "depth",
    "a",
    "stderr_a",
    "b",
    "r2",
    "x_intercept_log_steps",
    "x_intercept_log_tokens",
    "n_points",
    "estimator",
];
pub const SWEEP_HEADER: [&str; 7] =
    ["jump", "decay", "interval", "saturation", "threshold_kind", "threshold_interval", "learned"];
pub const ZIPF_HEADER: [&str; 5] = ["rank", "interval", "learned", "learned_at", "predicted_learned"];
pub const COMPARE_HEADER: [&str; 3] = ["step", "duplication", "paraphrase"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.into()))?;
    w.write_record(header).map_err(|e| CliError::Io(e.into()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV whose header must equal `header` exactly.
fn read_rows<const N: usize>(path: &Path, header: [&str; N]) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let got = r.headers().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(CliError::Schema {
            file: path.display().to_string(),
            expected: header.join(","),
            actual: got.iter().collect::<Vec<_>>().join(","),
        });
    }
    r.records().map(|x| x.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))).collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T, CliError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        CliError::Data(format!("{}:{line}: cannot parse `{raw}` in column {}", path.display(), i + 1))
    })
}

fn opt_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<Option<T>, CliError> {
    if rec.get(i).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        field(rec, i, path).map(Some)
    }
}

fn parse_kind(s: &str) -> Option<MetricKind> {
    match s {
        "effectivity" => Some(MetricKind::Effectivity),
        "retainability" => Some(MetricKind::Retainability),
        _ => None,
    }
}

fn parse_estimator(s: &str) -> Option<Estimator> {
    match s {
        "mean_curve" => Some(Estimator::MeanCurve),
        "per_probe_mean" => Some(Estimator::PerProbeMean),
        _ => None,
    }
}

pub fn write_metrics(path: &Path, samples: &[MetricSample]) -> Result<(), CliError> {
    write_rows(
        path,
        METRICS_HEADER,
        samples.iter().map(|s| {
            [
                s.kind.as_str().into(),
                s.scenario.to_string(),
                s.depth.to_string(),
                s.encounter_index.to_string(),
                opt(s.t_offset),
                s.probe_id.clone(),
                s.value.to_string(),
                s.filtered.to_string(),
            ]
        }),
    )
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricSample>, CliError> {
    let bad = |what: &str, v: &str| CliError::Data(format!("{}: bad {what} `{v}`", path.display()));
    read_rows(path, METRICS_HEADER)?
        .iter()
        .map(|r| {
            Ok(MetricSample {
                kind: parse_kind(&r[0]).ok_or_else(|| bad("kind", &r[0]))?,
                scenario: r[1].parse().map_err(|_| bad("scenario", &r[1]))?,
                depth: r[2].parse().map_err(|_| bad("depth", &r[2]))?,
                encounter_index: field(r, 3, path)?,
                t_offset: opt_field(r, 4, path)?,
                probe_id: r[5].to_string(),
                value: field(r, 6, path)?,
                filtered: field(r, 7, path)?,
            })
        })
        .collect()
}

pub fn write_fits(path: &Path, rows: &[FitRow]) -> Result<(), CliError> {
    write_rows(
        path,
        FITS_HEADER,
        rows.iter().map(|r| {
            let f = &r.fit;
            [
                r.scenario.to_string(),
                r.depth.to_string(),
                f.a.to_string(),
                f.stderr_a.to_string(),
                f.b.to_string(),
                f.r_squared.to_string(),
                opt(f.x_intercept_log_steps),
                opt(f.x_intercept_log_tokens),
                f.n_points.to_string(),
                r.estimator.as_str().into(),
            ]
        }),
    )
}

pub fn read_fits(path: &Path) -> Result<Vec<FitRow>, CliError> {
    let bad = |what: &str, v: &str| CliError::Data(format!("{}: bad {what} `{v}`", path.display()));
    read_rows(path, FITS_HEADER)?
        .iter()
        .map(|r| {
            Ok(FitRow {
                scenario: r[0].parse().map_err(|_| bad("scenario", &r[0]))?,
                depth: r[1].parse().map_err(|_| bad("depth", &r[1]))?,
                estimator: parse_estimator(&r[9]).ok_or_else(|| bad("estimator", &r[9]))?,
                fit: FitResult {
                    a: field(r, 2, path)?,
                    stderr_a: field(r, 3, path)?,
                    b: field(r, 4, path)?,
                    r_squared: field(r, 5, path)?,
                    x_intercept_log_steps: opt_field(r, 6, path)?,
                    x_intercept_log_tokens: opt_field(r, 7, path)?,
                    n_points: field(r, 8, path)?,
                },
            })
        })
        .collect()
}

fn threshold_cells(t: Threshold) -> [String; 2] {
    match t {
        Threshold::Unbounded => ["unbounded".into(), String::new()],
        Threshold::Unlearnable => ["unlearnable".into(), String::new()],
        Threshold::Interval(d) => ["interval".into(), d.to_string()],
    }
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    write_rows(
        path,
        SWEEP_HEADER,
        rows.iter().map(|r| {
            let [kind, interval] = threshold_cells(r.threshold);
            [
                r.jump.to_string(),
                r.decay.to_string(),
                r.interval.to_string(),
                r.saturation.to_string(),
                kind,
                interval,
                r.learned.to_string(),
            ]
        }),
    )
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    read_rows(path, SWEEP_HEADER)?
        .iter()
        .map(|r| {
            let threshold = match &r[4] {
                "unbounded" => Threshold::Unbounded,
                "unlearnable" => Threshold::Unlearnable,
                "interval" => Threshold::Interval(field(r, 5, path)?),
                other => return Err(CliError::Data(format!("{}: bad threshold `{other}`", path.display()))),
            };
            Ok(SweepRow {
                jump: field(r, 0, path)?,
                decay: field(r, 1, path)?,
                interval: field(r, 2, path)?,
                saturation: field(r, 3, path)?,
                threshold,
                learned: field(r, 6, path)?,
            })
        })
        .collect()
}

pub fn write_zipf(path: &Path, z: &ZipfOutcome) -> Result<(), CliError> {
    write_rows(
        path,
        ZIPF_HEADER,
        z.intervals.iter().zip(&z.learned_at).enumerate().map(|(i, (&d, at))| {
            [
                (i + 1).to_string(),
                d.to_string(),
                at.is_some().to_string(),
                opt(*at),
                z.threshold.admits(d).to_string(),
            ]
        }),
    )
}

/// `(rank, interval, learned, predicted)` rows.
pub fn read_zipf(path: &Path) -> Result<Vec<(usize, u64, bool, bool)>, CliError> {
    read_rows(path, ZIPF_HEADER)?
        .iter()
        .map(|r| {
            let _: Option<u64> = opt_field(r, 3, path)?;
            Ok((field(r, 0, path)?, field(r, 1, path)?, field(r, 2, path)?, field(r, 4, path)?))
        })
        .collect()
}

pub fn write_compare(path: &Path, c: &Comparison) -> Result<(), CliError> {
    write_rows(
        path,
        COMPARE_HEADER,
        c.dup.improvement.iter().zip(&c.para.improvement).enumerate().map(|(t, (d, p))| {
            [t.to_string(), d.to_string(), p.to_string()]
        }),
    )
}

pub fn read_compare(path: &Path) -> Result<Vec<(u64, f64, f64)>, CliError> {
    read_rows(path, COMPARE_HEADER)?
        .iter()
        .map(|r| Ok((field(r, 0, path)?, field(r, 1, path)?, field(r, 2, path)?)))
        .collect()
}
