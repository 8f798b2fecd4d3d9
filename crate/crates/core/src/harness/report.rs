use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, ExperimentRecord, HarnessError};
use crate::probe::{classify, Classification};

/// One row of `metrics.csv`: a block's learning-curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub block: u64,
    pub steps: u64,
    pub trials: u64,
    pub successes: u64,
    pub success_rate: Option<f64>,
    pub mean_steps_to_success: Option<f64>,
    pub mean_rally: Option<f64>,
    pub max_rally: Option<u64>,
    pub interception_rate: Option<f64>,
    pub safe_occupancy: Option<f64>,
    pub slope: Option<f64>,
}

pub fn metrics_csv(record: &ExperimentRecord) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in &record.metrics.blocks {
        let m = &b.metrics;
        w.serialize(MetricsRow {
            block: b.block,
            steps: m.steps,
            trials: m.trials,
            successes: m.successes,
            success_rate: m.success_rate,
            mean_steps_to_success: m.mean_steps_to_success,
            mean_rally: m.mean_rally,
            max_rally: m.max_rally,
            interception_rate: m.interception_rate,
            safe_occupancy: m.safe_occupancy,
            slope: b.slope,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Log(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of numbers is UTF-8"))
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Serialize)]
struct PlasticityRow<'a> {
    block: Option<u64>,
    probe_electrode: u32,
    record_group: &'a str,
    slope: f64,
    percent_change: Option<f64>,
    classification: Option<String>,
}

/// Every probe measurement, compared with the first one.
pub fn plasticity_csv(record: &ExperimentRecord) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let base = record.probes.first();
    for (i, p) in record.probes.iter().enumerate() {
        let report = match base {
            Some(b) if i > 0 => Some(classify(&b.measurement, &p.measurement, 5.0)?),
            _ => None,
        };
        w.serialize(PlasticityRow {
            block: p.block,
            probe_electrode: p.measurement.probe_electrode,
            record_group: &p.measurement.record_group,
            slope: p.measurement.slope,
            percent_change: report.as_ref().and_then(|r| r.percent_change),
            classification: report.map(|r| r.classification.to_string()),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Log(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of numbers is UTF-8"))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

/// Human-readable summary of a run.
pub fn report(record: &ExperimentRecord) -> String {
    let m = &record.metrics.overall;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "environment: {} ({:?}, seed {}{})",
        record.environment,
        record.mode,
        record.seed,
        if record.baseline_random { ", random baseline" } else { "" }
    );
    if let Some(p) = &record.protocol {
        let _ = writeln!(s, "protocol: {} [{}]", p.describe(), p.digest());
    }
    let _ = writeln!(
        s,
        "trials: {} in {} blocks, {} steps",
        m.trials,
        record.metrics.blocks.len(),
        m.steps
    );
    let _ = writeln!(s, "success rate: {}", fmt_opt(m.success_rate));
    for b in &record.metrics.blocks {
        let _ = writeln!(
            s,
            "  block {}: {} over {} trials{}",
            b.block,
            fmt_opt(b.metrics.success_rate),
            b.metrics.trials,
            b.slope.map_or_else(String::new, |v| format!(", slope {v:.6}"))
        );
    }
    if let Some(v) = m.mean_steps_to_success {
        let _ = writeln!(s, "mean steps to success: {v:.2}");
    }
    if let Some(v) = m.mean_rally {
        let _ = writeln!(s, "rally length: mean {v:.2}, max {}", m.max_rally.unwrap_or(0));
    }
    if let Some(v) = m.interception_rate {
        let _ = writeln!(s, "interception rate: {v:.3}");
    }
    if let Some(v) = m.safe_occupancy {
        let _ = writeln!(s, "safe-zone occupancy: {v:.3}");
    }
    if let Some([a, b]) = m.wins {
        let _ = writeln!(s, "wins: player 0 {a}, player 1 {b}");
    }
    if let Some(p) = &record.plasticity {
        let label = match p.classification {
            Classification::NoChange => "no change".to_string(),
            c => c.to_string(),
        };
        let change = p
            .percent_change
            .map_or_else(|| "from zero baseline".to_string(), |v| format!("{v:+.1}%"));
        let _ = writeln!(s, "plasticity: {label} ({change})");
    }
    if let Some(sg) = &record.suggestion {
        let _ = writeln!(s, "suggestion: {sg}");
    }
    s
}

/// Write `record.json`, `metrics.csv` and `plasticity.csv` into `dir`.
pub fn write_outputs(dir: &Path, record: &ExperimentRecord) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = [
        ("record.json", serde_json::to_string_pretty(record)?),
        ("metrics.csv", metrics_csv(record)?),
        ("plasticity.csv", plasticity_csv(record)?),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}
