//! CSV and plain-text outputs: metric reports, loss logs, ablation rows.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io;
use std::path::Path;

use rdn_core::{EpochStats, MetricReport};

pub const METRIC_HEADER: [&str; 4] = ["path", "scale", "psnr_db", "ssim"];
pub const LOSS_HEADER: [&str; 4] = ["epoch", "step", "lr", "mean_l1"];
pub const ABLATION_HEADER: [&str; 7] = ["variant", "dataset", "scale", "epochs", "seed", "psnr_db", "ssim"];

/// Label of the aggregate row in metric CSVs.
pub const MEAN_ROW: &str = "mean";

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// One row per image followed by the aggregate row.
pub fn metric_csv(report: &MetricReport) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRIC_HEADER).map_err(csv_err)?;
    let scale = report.scale.to_string();
    for row in &report.rows {
        w.write_record([row.path.as_str(), &scale, &row.psnr_db.to_string(), &row.ssim.to_string()])
            .map_err(csv_err)?;
    }
    w.write_record([MEAN_ROW, &scale, &report.mean_psnr_db.to_string(), &report.mean_ssim.to_string()])
        .map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

/// Per-image listing with the mean underneath.
pub fn metric_table(report: &MetricReport) -> String {
    let width = report.rows.iter().map(|r| r.path.len()).max().unwrap_or(0).max(MEAN_ROW.len()).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{} x{} ({})", report.dataset, report.scale, report.label);
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>6}", "image", "PSNR", "SSIM");
    for r in &report.rows {
        let _ = writeln!(out, "{:<width$}  {:>8.2}  {:>6.4}", r.path, r.psnr_db, r.ssim);
    }
    let _ = writeln!(out, "{:<width$}  {:>8.2}  {:>6.4}", MEAN_ROW, report.mean_psnr_db, report.mean_ssim);
    out
}

/// Datasets down, settings (scales or variants) across, PSNR and SSIM per cell.
pub fn comparison_table(columns: &[String], rows: &[(String, Vec<Option<(f64, f64)>>)]) -> String {
    let first = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Dataset".len());
    let cell = columns.iter().map(|c| c.len()).max().unwrap_or(0).max(15);
    let mut out = String::new();
    let _ = write!(out, "{:<first$}", "Dataset");
    for c in columns {
        let _ = write!(out, " | {c:^cell$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<first$}", "");
    for _ in columns {
        let _ = write!(out, " | {:^cell$}", format!("{:>7}  {:>6}", "PSNR", "SSIM"));
    }
    out.push('\n');
    for (name, cells) in rows {
        let _ = write!(out, "{name:<first$}");
        for c in cells {
            let text = match c {
                Some((p, s)) => format!("{p:>7.2}  {s:>6.4}"),
                None => format!("{:>7}  {:>6}", "-", "-"),
            };
            let _ = write!(out, " | {text:^cell$}");
        }
        out.push('\n');
    }
    out
}

fn append_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header).map_err(csv_err)?;
    }
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()
}

/// Appends epoch rows, writing the header first if the file is new.
pub fn append_loss_log(path: &Path, stats: &[EpochStats]) -> io::Result<()> {
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|s| vec![s.epoch.to_string(), s.step.to_string(), s.lr.to_string(), s.mean_l1.to_string()])
        .collect();
    append_rows(path, &LOSS_HEADER, &rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub dataset: String,
    pub scale: usize,
    pub epochs: u64,
    pub seed: u64,
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn append_ablation(path: &Path, row: &AblationRow) -> io::Result<()> {
    append_rows(
        path,
        &ABLATION_HEADER,
        &[vec![
            row.variant.clone(),
            row.dataset.clone(),
            row.scale.to_string(),
            row.epochs.to_string(),
            row.seed.to_string(),
            row.psnr_db.to_string(),
            row.ssim.to_string(),
        ]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rdn_core::MetricRow;

    fn report() -> MetricReport {
        let rows = vec![
            MetricRow { path: "a.png".into(), psnr_db: 30.0, ssim: 0.9 },
            MetricRow { path: "b,c.png".into(), psnr_db: 20.0, ssim: 0.7 },
        ];
        MetricReport::new("set", 2, "baseline", rows)
    }

    #[test]
    fn csv_has_header_rows_and_mean_last() {
        let text = metric_csv(&report()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path,scale,psnr_db,ssim");
        assert_eq!(lines[1], "a.png,2,30,0.9");
        assert_eq!(lines[2], "\"b,c.png\",2,20,0.7");
        assert_eq!(lines[3], "mean,2,25,0.8");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn table_lists_every_image() {
        let t = metric_table(&report());
        assert!(t.contains("a.png") && t.contains("25.00") && t.contains("0.8000"));
    }

    #[test]
    fn comparison_layout() {
        let t = comparison_table(
            &["2x".into(), "3x".into()],
            &[("set5".into(), vec![Some((28.5, 0.88)), None])],
        );
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Dataset"));
        assert!(lines[2].contains("28.50") && lines[2].contains('-'));
    }

    #[test]
    fn logs_append_with_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let s = EpochStats { epoch: 0, step: 3, lr: 1e-4, mean_l1: 0.5, batches: 3 };
        append_loss_log(&p, &[s]).unwrap();
        append_loss_log(&p, &[EpochStats { epoch: 1, step: 6, ..s }]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "epoch,step,lr,mean_l1\n0,3,0.0001,0.5\n1,6,0.0001,0.5\n");
    }
}
