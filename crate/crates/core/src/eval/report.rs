use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::protocol::DomainOutcome;
use crate::error::{ensure, Error, Result};
use crate::nn::Task;
use crate::synth::Domain;
use crate::train::Method;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";

/// Evaluation of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Row the run is aggregated into; runs that differ only by seed share it.
    pub label: String,
    pub method: Method,
    pub seed: u64,
    pub task: Task,
    /// Named hyper-parameters shown as extra report columns (ablations).
    #[serde(default)]
    pub settings: Vec<(String, String)>,
    pub domains: Vec<DomainOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub domain: Domain,
    /// Median over seeds; `None` when every seed failed on this domain.
    pub value: Option<f64>,
    /// Difference to the rgb_only row.
    pub delta: Option<f64>,
    pub per_seed: Vec<f64>,
    pub secondary: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub method: Method,
    pub train_modalities: String,
    pub test_modalities: String,
    pub settings: Vec<String>,
    pub seeds: Vec<u64>,
    pub cells: Vec<ReportCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub task: Task,
    pub metric: String,
    pub secondary_metric: String,
    pub domains: Vec<Domain>,
    pub settings_columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn metric_names(task: Task) -> (&'static str, &'static str) {
    match task {
        Task::Segmentation => ("miou", "pixel_accuracy"),
        Task::Detection => ("map_50_95", "map_50"),
    }
}

/// Groups runs by label and takes per-domain medians over seeds.
pub fn build_report(runs: &[RunResult]) -> Result<Report> {
    ensure!(!runs.is_empty(), InvalidInput, "no runs to report");
    let task = runs[0].task;
    ensure!(
        runs.iter().all(|r| r.task == task),
        InvalidInput,
        "runs mix segmentation and detection"
    );
    let settings_columns: Vec<String> = runs[0].settings.iter().map(|(k, _)| k.clone()).collect();
    for r in runs {
        let cols: Vec<&String> = r.settings.iter().map(|(k, _)| k).collect();
        ensure!(
            cols.iter().copied().eq(settings_columns.iter()),
            InvalidInput,
            "run {} has different setting columns",
            r.label
        );
    }
    let domains: Vec<Domain> = Domain::ALL
        .into_iter()
        .filter(|d| runs.iter().any(|r| r.domains.iter().any(|o| o.domain() == *d)))
        .collect();

    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut rows = Vec::with_capacity(labels.len());
    for label in labels {
        let group: Vec<&RunResult> = runs.iter().filter(|r| r.label == label).collect();
        let first = group[0];
        ensure!(
            group.iter().all(|r| r.method == first.method && r.settings == first.settings),
            InvalidInput,
            "runs labelled {label} disagree on method or settings"
        );
        let cells = domains
            .iter()
            .map(|&d| {
                let results: Vec<_> = group
                    .iter()
                    .filter_map(|r| r.domains.iter().find(|o| o.domain() == d).and_then(DomainOutcome::result))
                    .collect();
                let per_seed: Vec<f64> = results.iter().map(|r| r.primary).collect();
                let secondary: Vec<f64> = results.iter().map(|r| r.secondary).collect();
                ReportCell {
                    domain: d,
                    value: median(&per_seed),
                    delta: None,
                    per_seed,
                    secondary: median(&secondary),
                }
            })
            .collect();
        rows.push(ReportRow {
            label: label.to_string(),
            method: first.method,
            train_modalities: if first.method.uses_events() { "RGB+Event" } else { "RGB" }.to_string(),
            test_modalities: "RGB".to_string(),
            settings: first.settings.iter().map(|(_, v)| v.clone()).collect(),
            seeds: group.iter().map(|r| r.seed).collect(),
            cells,
        });
    }

    if let Some(base) = rows.iter().position(|r| r.method == Method::RgbOnly) {
        let baseline: Vec<Option<f64>> = rows[base].cells.iter().map(|c| c.value).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == base {
                continue;
            }
            for (cell, b) in row.cells.iter_mut().zip(&baseline) {
                cell.delta = cell.value.zip(*b).map(|(v, b)| v - b);
            }
        }
    }
    let (metric, secondary) = metric_names(task);
    Ok(Report {
        task,
        metric: metric.to_string(),
        secondary_metric: secondary.to_string(),
        domains,
        settings_columns,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per row and domain. Rendering depends only on the report, so a
/// report parsed back from JSON renders to identical bytes.
pub fn render_csv(report: &Report) -> String {
    let mut out = String::from("label,method,train_modalities,test_modalities");
    for c in &report.settings_columns {
        out.push(',');
        out.push_str(c);
    }
    let _ = writeln!(out, ",domain,metric,value,delta,{},seeds", report.secondary_metric);
    for row in &report.rows {
        for cell in &row.cells {
            let _ = write!(
                out,
                "{},{},{},{}",
                row.label, row.method, row.train_modalities, row.test_modalities
            );
            for s in &row.settings {
                out.push(',');
                out.push_str(s);
            }
            let seeds: Vec<String> = row.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{}",
                cell.domain,
                report.metric,
                opt(cell.value),
                opt(cell.delta),
                opt(cell.secondary),
                seeds.join(";")
            );
        }
    }
    out
}

fn capitalised(d: Domain) -> String {
    d.name()
        .split('_')
        .map(|w| {
            let mut chars = w.chars();
            chars.next().map_or(String::new(), |c| c.to_uppercase().chain(chars).collect())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Markdown table with values scaled by 100.
pub fn render_markdown(report: &Report) -> String {
    let mut out = String::new();
    let seeds = report.rows.iter().map(|r| r.seeds.len()).max().unwrap_or(0);
    let _ = writeln!(
        out,
        "{} x100, median over {} seed(s); deltas relative to rgb_only.\n",
        report.metric, seeds
    );
    let mut header = vec!["Model".to_string()];
    header.extend(report.settings_columns.iter().cloned());
    header.push("Train Mod.".into());
    header.push("Test Mod.".into());
    header.extend(report.domains.iter().map(|d| capitalised(*d)));
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", " --- |".repeat(header.len()));
    for row in &report.rows {
        let mut cols = vec![row.label.clone()];
        cols.extend(row.settings.iter().cloned());
        cols.push(row.train_modalities.clone());
        cols.push(row.test_modalities.clone());
        for cell in &row.cells {
            let mut s = match cell.value {
                Some(v) => format!("{:.2}", v * 100.0),
                None => "n/a".to_string(),
            };
            if let Some(d) = cell.delta {
                let _ = write!(s, " ({:+.2})", d * 100.0);
            }
            cols.push(s);
        }
        let _ = writeln!(out, "| {} |", cols.join(" | "));
    }
    out
}

pub fn report_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `report.json`, `report.csv` and `report.md` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        (REPORT_JSON, report_json(report)),
        (REPORT_CSV, render_csv(report)),
        (REPORT_MD, render_markdown(report)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::DomainResult;

    fn run(label: &str, method: Method, seed: u64, values: &[(Domain, f64)]) -> RunResult {
        RunResult {
            label: label.into(),
            method,
            seed,
            task: Task::Segmentation,
            settings: vec![],
            domains: values
                .iter()
                .map(|&(domain, v)| {
                    DomainOutcome::Ok(DomainResult {
                        domain,
                        task: Task::Segmentation,
                        samples: 1,
                        primary: v,
                        secondary: v,
                        breakdown: vec![],
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn single_cell_has_no_delta() {
        let r = build_report(&[run("pepr", Method::Pepr, 0, &[(Domain::Night, 0.5)])]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].cells.len(), 1);
        assert_eq!(r.rows[0].cells[0].delta, None);
    }

    #[test]
    fn medians_and_deltas() {
        let runs = vec![
            run("rgb_only", Method::RgbOnly, 0, &[(Domain::Day, 0.5)]),
            run("rgb_only", Method::RgbOnly, 1, &[(Domain::Day, 0.7)]),
            run("rgb_only", Method::RgbOnly, 2, &[(Domain::Day, 0.6)]),
            run("pepr", Method::Pepr, 0, &[(Domain::Day, 0.65)]),
        ];
        let r = build_report(&runs).unwrap();
        assert_eq!(r.rows[0].cells[0].value, Some(0.6));
        assert!((r.rows[1].cells[0].delta.unwrap() - 0.05).abs() < 1e-12);
        let md = render_markdown(&r);
        assert!(md.contains("| 60.00 |"), "{md}");
        assert!(md.contains("65.00 (+5.00)"), "{md}");
    }

    #[test]
    fn csv_rerenders_from_json() {
        let r = build_report(&[
            run("rgb_only", Method::RgbOnly, 0, &[(Domain::Day, 0.1 + 0.2), (Domain::Night, 1.0 / 3.0)]),
            run("pepr", Method::Pepr, 0, &[(Domain::Day, 0.3)]),
        ])
        .unwrap();
        let back: Report = serde_json::from_str(&report_json(&r)).unwrap();
        assert_eq!(render_csv(&back), render_csv(&r));
    }

    #[test]
    fn median_even() {
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }
}
