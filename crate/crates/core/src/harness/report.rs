use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Protocol;
use super::run::{Aggregate, EvalReport, EvalRow, RowScores};
use crate::error::{usage, Error, Result};
use crate::metrics::MetricRow;

pub const REPORT_FORMAT: &str = "codedit-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ReportHeader {
    format: String,
    version: u32,
    editor: String,
    protocol: Protocol,
    seed: u64,
    model_digest: String,
    benchmark_digest: String,
}

/// A row as written to disk: wall-clock time lives in a separate sidecar so
/// the main file is reproducible byte for byte.
#[derive(Serialize, Deserialize)]
struct RowRecord {
    id: String,
    scores: Option<RowScores>,
    error: Option<String>,
    peak_mem_bytes: u64,
}

/// Sidecar holding per-row edit times next to a report file.
pub fn timing_path(report_path: &Path) -> PathBuf {
    report_path.with_extension("timing.csv")
}

pub fn report_jsonl(report: &EvalReport) -> String {
    let header = ReportHeader {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        editor: report.editor.clone(),
        protocol: report.protocol,
        seed: report.seed,
        model_digest: report.model_digest.clone(),
        benchmark_digest: report.benchmark_digest.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes") + "\n";
    for r in &report.rows {
        let rec = RowRecord {
            id: r.id.clone(),
            scores: r.scores.clone(),
            error: r.error.clone(),
            peak_mem_bytes: r.peak_mem_bytes,
        };
        out += &(serde_json::to_string(&rec).expect("row serializes") + "\n");
    }
    out
}

pub fn timing_csv(report: &EvalReport) -> String {
    let mut out = String::from("id,edit_time_ms\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{}", r.id, r.edit_time_ms);
    }
    out
}

fn metric_cells(m: Option<&MetricRow>) -> String {
    match m {
        Some(m) => format!("{},{},{}", m.em, m.bleu, m.rouge_l),
        None => ",,".into(),
    }
}

/// Per-row scores as CSV; failed rows leave the score cells empty.
pub fn rows_csv(report: &EvalReport) -> String {
    let mut out = String::from(
        "id,status,eff_em,eff_bleu,eff_rouge_l,gen_em,gen_bleu,gen_rouge_l,spec_em,spec_bleu,spec_rouge_l,fluency,peak_mem_bytes\n",
    );
    for r in &report.rows {
        let s = r.scores.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.id,
            if s.is_some() { "ok" } else { "failed" },
            metric_cells(s.map(|s| &s.effectiveness)),
            metric_cells(s.map(|s| &s.generalization)),
            metric_cells(s.map(|s| &s.specificity)),
            s.map(|s| s.fluency.to_string()).unwrap_or_default(),
            r.peak_mem_bytes
        );
    }
    out
}

/// Writes `<stem>.jsonl`, `<stem>.csv`, `<stem>.txt` and the timing sidecar
/// into `dir`. Returns the path of the JSON Lines report.
pub fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let jsonl = dir.join(format!("{stem}.jsonl"));
    fs::write(&jsonl, report_jsonl(report))?;
    fs::write(dir.join(format!("{stem}.csv")), rows_csv(report))?;
    let table = make_report(std::slice::from_ref(report))?;
    fs::write(dir.join(format!("{stem}.txt")), table.to_text(false))?;
    fs::write(timing_path(&jsonl), timing_csv(report))?;
    Ok(jsonl)
}

pub fn parse_report(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, e: &dyn std::fmt::Display| Error::Parse { line: line + 1, message: e.to_string() };
    let (i, first) = lines.next().ok_or(Error::Parse { line: 1, message: "empty report".into() })?;
    let h: ReportHeader = serde_json::from_str(first).map_err(|e| bad(i, &e))?;
    if h.format != REPORT_FORMAT || h.version != REPORT_VERSION {
        return Err(bad(i, &format!("unsupported report {} v{}", h.format, h.version)));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let r: RowRecord = serde_json::from_str(line).map_err(|e| bad(i, &e))?;
        rows.push(EvalRow {
            id: r.id,
            scores: r.scores,
            error: r.error,
            edit_time_ms: f64::NAN,
            peak_mem_bytes: r.peak_mem_bytes,
        });
    }
    Ok(EvalReport {
        editor: h.editor,
        protocol: h.protocol,
        seed: h.seed,
        model_digest: h.model_digest,
        benchmark_digest: h.benchmark_digest,
        rows,
    })
}

/// Reads a report and, if present, its timing sidecar. Without the sidecar
/// edit times are NaN.
pub fn load_report(path: &Path) -> Result<EvalReport> {
    let mut report = parse_report(&fs::read_to_string(path)?)?;
    let tp = timing_path(path);
    if tp.exists() {
        let text = fs::read_to_string(&tp)?;
        let times: Vec<&str> = text.lines().skip(1).filter(|l| !l.is_empty()).collect();
        if times.len() != report.rows.len() {
            return Err(Error::Data(format!("{} does not match its report", tp.display())));
        }
        for (i, (row, line)) in report.rows.iter_mut().zip(times).enumerate() {
            let t = line
                .rsplit_once(',')
                .filter(|(id, _)| *id == row.id)
                .and_then(|(_, t)| t.parse::<f64>().ok())
                .ok_or(Error::Parse { line: i + 2, message: format!("bad timing line {line:?}") })?;
            row.edit_time_ms = t;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub technique: String,
    pub protocol: Protocol,
    pub summary: Aggregate,
}

/// Technique × axis grid over reports that share one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub benchmark_digest: String,
    pub rows: Vec<TableRow>,
}

pub fn make_report(reports: &[EvalReport]) -> Result<ReportTable> {
    let Some(first) = reports.first() else {
        return usage("a report table needs at least one report");
    };
    if let Some(other) = reports.iter().find(|r| r.benchmark_digest != first.benchmark_digest) {
        return usage(format!(
            "reports cover different benchmarks ({} and {})",
            first.benchmark_digest, other.benchmark_digest
        ));
    }
    Ok(ReportTable {
        benchmark_digest: first.benchmark_digest.clone(),
        rows: reports
            .iter()
            .map(|r| TableRow { technique: r.editor.clone(), protocol: r.protocol, summary: r.aggregate() })
            .collect(),
    })
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

/// EM is shown as a percentage like BLEU and ROUGE-L.
fn axis_cells(m: &MetricRow) -> [String; 3] {
    [num(m.em * 100.0), num(m.bleu), num(m.rouge_l)]
}

impl TableRow {
    fn quality_cells(&self) -> Vec<String> {
        let s = &self.summary;
        let mut cells = vec![self.technique.clone(), self.protocol.to_string(), s.n_ok.to_string(), s.n_failed.to_string()];
        for m in [&s.effectiveness, &s.generalization, &s.specificity] {
            cells.extend(axis_cells(m));
        }
        cells.push(num(s.fluency));
        cells
    }
}

const QUALITY_HEADER: [&str; 14] = [
    "technique", "protocol", "ok", "failed", "eff_em", "eff_bleu", "eff_rouge_l", "gen_em", "gen_bleu",
    "gen_rouge_l", "spec_em", "spec_bleu", "spec_rouge_l", "fluency",
];

impl ReportTable {
    /// One line per technique. `timing` adds the mean edit time, which
    /// varies between runs.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut header: Vec<&str> = QUALITY_HEADER.to_vec();
        if timing {
            header.push("edit_time_ms");
        }
        header.push("peak_mem_bytes");
        let mut out = header.join(",") + "\n";
        for r in &self.rows {
            let mut cells = r.quality_cells();
            if timing {
                cells.push(num(r.summary.edit_time_ms));
            }
            cells.push(num(r.summary.peak_mem_bytes));
            out += &(cells.join(",") + "\n");
        }
        out
    }

    /// Quality grid followed by the efficiency grid, as aligned text.
    pub fn to_text(&self, timing: bool) -> String {
        let quality: Vec<Vec<String>> = self.rows.iter().map(TableRow::quality_cells).collect();
        let mut out = format!("benchmark {}\n\n", self.benchmark_digest);
        out += &align(&QUALITY_HEADER, &quality);
        let mut header = vec!["technique", "protocol"];
        if timing {
            header.push("edit_time_ms");
        }
        header.push("peak_mem_bytes");
        let eff: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut c = vec![r.technique.clone(), r.protocol.to_string()];
                if timing {
                    c.push(num(r.summary.edit_time_ms));
                }
                c.push(num(r.summary.peak_mem_bytes));
                c
            })
            .collect();
        out += "\n";
        out += &align(&header, &eff);
        out
    }
}

fn align(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
            + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(em: f64, x: f64) -> MetricRow {
        MetricRow { em, bleu: x, rouge_l: x / 2.0 }
    }

    fn report(digest: &str, rows: Vec<(Option<f64>, f64)>) -> EvalReport {
        EvalReport {
            editor: "grace".into(),
            protocol: Protocol::ResetPerEdit,
            seed: 3,
            model_digest: "m".into(),
            benchmark_digest: digest.into(),
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, (v, t))| EvalRow {
                    id: format!("r{i}"),
                    scores: v.map(|v| RowScores {
                        effectiveness: metric(1.0, 100.0),
                        generalization: metric(0.0, v),
                        specificity: metric(1.0, 100.0),
                        fluency: v / 10.0,
                    }),
                    error: v.is_none().then(|| "edit conflict".to_string()),
                    edit_time_ms: t,
                    peak_mem_bytes: 1000 + i as u64,
                })
                .collect(),
        }
    }

    #[test]
    fn aggregates_skip_failed_rows() {
        let r = report("b", vec![(Some(10.0), 1.0), (None, 5.0), (Some(30.0), 3.0)]);
        let a = r.aggregate();
        assert_eq!((a.n_ok, a.n_failed), (2, 1));
        assert_eq!(a.generalization.bleu, 20.0);
        assert_eq!(a.edit_time_ms, 2.0);
        assert_eq!(a.peak_mem_bytes, 1001.0);
        assert_eq!(r.failed_count(), 1);
    }

    #[test]
    fn single_row_table_shows_that_row() {
        let t = make_report(&[report("b", vec![(Some(12.5), 4.0)])]).unwrap();
        let csv = t.to_csv(true);
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("grace,reset_per_edit,1,0,100.0000,100.0000,50.0000,0.0000,12.5000,6.2500,"), "{line}");
        assert!(line.ends_with(",1.2500,4.0000,1000.0000"), "{line}");
    }

    #[test]
    fn mixed_benchmarks_are_rejected() {
        assert!(make_report(&[report("a", vec![]), report("b", vec![])]).is_err());
        assert!(make_report(&[]).is_err());
    }

    #[test]
    fn jsonl_round_trips_without_timing() {
        let r = report("b", vec![(Some(10.0), 1.5), (None, 2.0)]);
        let back = parse_report(&report_jsonl(&r)).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[0].scores, r.rows[0].scores);
        assert_eq!(back.rows[1].error.as_deref(), Some("edit conflict"));
        assert!(back.rows[0].edit_time_ms.is_nan());
        assert_eq!(report_jsonl(&back), report_jsonl(&r));
    }

    #[test]
    fn sidecar_restores_times() {
        let dir = tempfile::tempdir().unwrap();
        let r = report("b", vec![(Some(10.0), 1.5), (Some(20.0), 2.25)]);
        let path = write_report(&r, dir.path(), "run").unwrap();
        assert_eq!(timing_path(&path), dir.path().join("run.timing.csv"));
        let back = load_report(&path).unwrap();
        assert_eq!(back.rows.iter().map(|r| r.edit_time_ms).collect::<Vec<_>>(), vec![1.5, 2.25]);
        assert!(!fs::read_to_string(dir.path().join("run.txt")).unwrap().contains("edit_time_ms"));
    }
}
