//! CSV logs and reports.

use std::path::Path;

use or2_core::metrics::EvalReport;
use or2_core::stream::MetricsRow;

use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "eval_summary.csv";
pub const DELTA_FILE: &str = "eval_delta.csv";
pub const RESTORE_FILE: &str = "restore.csv";

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse<T: std::str::FromStr>(path: &Path, field: Option<&str>) -> Result<T, CliError> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| CliError::Data(format!("{}: malformed field {field:?}", path.display())))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(MetricsRow::HEADER)?;
    for r in rows {
        w.write_record([
            r.frame.to_string(),
            r.psnr.to_string(),
            r.ssim.to_string(),
            r.mtv_running.to_string(),
            r.n_gaussians.to_string(),
            r.n_spawned.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut r = reader(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(MetricsRow {
            frame: parse(path, rec.get(0))?,
            psnr: parse(path, rec.get(1))?,
            ssim: parse(path, rec.get(2))?,
            mtv_running: parse(path, rec.get(3))?,
            n_gaussians: parse(path, rec.get(4))?,
            n_spawned: parse(path, rec.get(5))?,
            wall_ms: parse(path, rec.get(6))?,
        });
    }
    Ok(rows)
}

/// Per-frame rows plus a `mean` summary row.
pub fn write_eval(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["frame", "psnr", "ssim"])?;
    for r in &report.rows {
        w.write_record([r.frame.to_string(), r.psnr.to_string(), r.ssim.to_string()])?;
    }
    w.write_record([
        "mean".to_string(),
        report.mean_psnr.to_string(),
        report.mean_ssim.to_string(),
    ])?;
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Named scalar results of one run.
pub type Summary = Vec<(String, f64)>;

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in summary {
        w.write_record([k.clone(), v.to_string()])?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_summary(path: &Path) -> Result<Summary, CliError> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let key = rec
            .get(0)
            .ok_or_else(|| CliError::Data(format!("{}: missing metric name", path.display())))?;
        out.push((key.to_string(), parse(path, rec.get(1))?));
    }
    Ok(out)
}

pub fn summary_value(summary: &Summary, key: &str) -> Option<f64> {
    summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRow {
    pub metric: String,
    pub ours: f64,
    pub baseline: f64,
    pub delta: f64,
}

/// `ours - baseline` for every metric present in both summaries.
pub fn delta_table(ours: &Summary, baseline: &Summary) -> Vec<DeltaRow> {
    ours.iter()
        .filter_map(|(k, v)| {
            summary_value(baseline, k).map(|b| DeltaRow {
                metric: k.clone(),
                ours: *v,
                baseline: b,
                delta: v - b,
            })
        })
        .collect()
}

pub fn write_delta(path: &Path, rows: &[DeltaRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["metric", "ours", "baseline", "delta"])?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            r.ours.to_string(),
            r.baseline.to_string(),
            r.delta.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn format_delta(rows: &[DeltaRow]) -> String {
    let mut s = format!("{:<22} {:>12} {:>12} {:>12}\n", "metric", "ours", "baseline", "delta");
    for r in rows {
        s += &format!(
            "{:<22} {:>12.4} {:>12.4} {:>+12.4}\n",
            r.metric, r.ours, r.baseline, r.delta
        );
    }
    s
}

/// Restoration quality of one training view, averaged over frames.
#[derive(Clone, Debug, PartialEq)]
pub struct RestoreRow {
    pub camera: usize,
    pub psnr_noisy: f64,
    pub psnr_restored: f64,
}

pub fn write_restore(path: &Path, rows: &[RestoreRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["camera", "psnr_noisy", "psnr_restored", "delta"])?;
    let n = rows.len().max(1) as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for r in rows {
        a += r.psnr_noisy;
        b += r.psnr_restored;
        w.write_record([
            r.camera.to_string(),
            r.psnr_noisy.to_string(),
            r.psnr_restored.to_string(),
            (r.psnr_restored - r.psnr_noisy).to_string(),
        ])?;
    }
    w.write_record([
        "mean".to_string(),
        (a / n).to_string(),
        (b / n).to_string(),
        ((b - a) / n).to_string(),
    ])?;
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        let rows = vec![
            MetricsRow {
                frame: 0,
                psnr: 31.25,
                ssim: 0.1 + 0.2,
                mtv_running: 0.0,
                n_gaussians: 10,
                n_spawned: 0,
                wall_ms: 0,
            },
            MetricsRow {
                frame: 1,
                psnr: 1.0 / 3.0,
                ssim: 0.9,
                mtv_running: 1.5e-7,
                n_gaussians: 12,
                n_spawned: 2,
                wall_ms: 17,
            },
        ];
        write_metrics(&path, &rows).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }

    #[test]
    fn delta_is_ours_minus_baseline() {
        let ours = vec![("psnr".to_string(), 30.0), ("mtv".to_string(), 1.0)];
        let base = vec![("mtv".to_string(), 1.5), ("psnr".to_string(), 29.5)];
        let d = delta_table(&ours, &base);
        assert_eq!(d[0].delta, 0.5);
        assert_eq!(d[1].delta, -0.5);
        assert!(format_delta(&d).contains("-0.5000"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(SUMMARY_FILE);
        write_summary(&path, &ours).unwrap();
        assert_eq!(read_summary(&path).unwrap(), ours);
    }
}
