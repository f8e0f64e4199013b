use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use num_traits::ToPrimitive;
use serde::Serialize;

use super::report::FairnessReport;
use super::sweep::SweepRow;
use crate::error::Error;
use crate::exact::Rate;
use crate::metrics::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputFormat {
    Json,
    Csv,
    Svg,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::Json, OutputFormat::Csv, OutputFormat::Svg];
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text.into_bytes()
}

fn cell(rate: &Rate) -> String {
    rate.display()
}

/// Metric rows `D_<m>_o` / `D_<m>_a`, one column per prompt plus the mean.
pub fn report_csv(report: &FairnessReport) -> String {
    let mut out = String::from("metric");
    for p in &report.prompts {
        out.push(',');
        out.push_str(&p.prompt_id);
    }
    out.push_str(",mean\n");
    for metric in Metric::ALL {
        let mean = report.mean_gap(metric);
        for (suffix, adjusted) in [("o", false), ("a", true)] {
            let _ = write!(out, "D_{}_{}", metric.short(), suffix);
            for p in &report.prompts {
                let side = if adjusted { &p.adjusted } else { &p.original };
                out.push(',');
                out.push_str(&cell(side.gaps.get(metric)));
            }
            out.push(',');
            out.push_str(&cell(if adjusted { &mean.adjusted } else { &mean.original }));
            out.push('\n');
        }
    }
    out
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 40.0;

fn bar_height(rate: &Rate) -> Option<f64> {
    rate.value()
        .and_then(|v| v.to_f64())
        .map(|v| v.clamp(0.0, 1.0) * (PANEL_H - 2.0 * MARGIN))
}

/// Grouped bars of original vs adjusted gaps, one panel per metric.
pub fn report_svg(report: &FairnessReport) -> String {
    let cols = 2usize;
    let rows = Metric::ALL.len().div_ceil(cols);
    let width = PANEL_W * cols as f64;
    let height = PANEL_H * rows as f64 + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="10" y="8" width="10" height="10" fill="#8c8c8c"/><text x="24" y="17">original</text>"##
    );
    let _ = writeln!(
        s,
        r##"<rect x="80" y="8" width="10" height="10" fill="#2b6cb0"/><text x="94" y="17">adjusted</text>"##
    );

    let mut labels: Vec<&str> = report.prompts.iter().map(|p| p.prompt_id.as_str()).collect();
    labels.push("mean");
    let slot = (PANEL_W - 2.0 * MARGIN) / labels.len() as f64;
    let bar = slot * 0.35;

    for (i, metric) in Metric::ALL.iter().enumerate() {
        let ox = (i % cols) as f64 * PANEL_W;
        let oy = 30.0 + (i / cols) as f64 * PANEL_H;
        let base = oy + PANEL_H - MARGIN;
        let _ = writeln!(
            s,
            r#"<g><text x="{}" y="{}" font-size="12">D_{}</text>"#,
            ox + MARGIN,
            oy + 14.0,
            metric.short()
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{base}" x2="{x1}" y2="{base}" stroke="black"/>"#,
            x0 = ox + MARGIN,
            x1 = ox + PANEL_W - MARGIN
        );
        let mean = report.mean_gap(*metric);
        for (j, label) in labels.iter().enumerate() {
            let (o, a) = match report.prompts.get(j) {
                Some(p) => (p.original.gaps.get(*metric), p.adjusted.gaps.get(*metric)),
                None => (&mean.original, &mean.adjusted),
            };
            let x = ox + MARGIN + j as f64 * slot + slot * 0.15;
            for (k, (rate, fill)) in [(o, "#8c8c8c"), (a, "#2b6cb0")].into_iter().enumerate() {
                let bx = x + k as f64 * bar;
                match bar_height(rate) {
                    Some(h) => {
                        let _ = writeln!(
                            s,
                            r#"<rect x="{bx:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{fill}"><title>{label} {}</title></rect>"#,
                            base - h,
                            rate.display()
                        );
                    }
                    None => {
                        let _ = writeln!(s, r#"<text x="{bx:.2}" y="{:.2}" font-size="8">n/a</text>"#, base - 2.0);
                    }
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                x + bar,
                base + 12.0
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Renders every requested artifact in memory; nothing touches disk.
pub fn render_report_files(
    report: &FairnessReport,
    formats: &[OutputFormat],
) -> Result<Vec<(&'static str, Vec<u8>)>, Error> {
    if report.prompts.is_empty() {
        return Err(Error::Report("report has no prompts".into()));
    }
    let mut files = Vec::new();
    for format in formats {
        match format {
            OutputFormat::Json => files.push(("report.json", pretty_json(report))),
            OutputFormat::Csv => files.push(("report.csv", report_csv(report).into_bytes())),
            OutputFormat::Svg => files.push(("report_gaps.svg", report_svg(report).into_bytes())),
        }
    }
    Ok(files)
}

/// Writes the report files into `out_dir`. All artifacts are rendered before
/// the first write, so a rendering error leaves no partial output.
pub fn emit_report(report: &FairnessReport, formats: &[OutputFormat], out_dir: &Path) -> Result<(), Error> {
    let files = render_report_files(report, formats)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, bytes) in files {
        write_atomically(&out_dir.join(name), &bytes)?;
    }
    Ok(())
}

fn sweep_csv(parameter: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{parameter},flips");
    for metric in Metric::ALL {
        let _ = write!(out, ",D_{0}_o,D_{0}_a", metric.short());
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{},{}", row.parameter, row.flips);
        for metric in Metric::ALL {
            let mean = row.mean.iter().find(|m| m.metric == metric).expect("metric row");
            let _ = write!(out, ",{},{}", cell(&mean.original), cell(&mean.adjusted));
        }
        out.push('\n');
    }
    out
}

/// Writes `sweep.json` and `sweep.csv`; `parameter` names the first CSV column.
pub fn emit_sweep<T: Serialize>(sweep: &T, rows: &[SweepRow], parameter: &str, out_dir: &Path) -> Result<(), Error> {
    if rows.is_empty() {
        return Err(Error::Report("sweep has no rows".into()));
    }
    let json = pretty_json(sweep);
    let csv = sweep_csv(parameter, rows);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atomically(&out_dir.join("sweep.json"), &json)?;
    write_atomically(&out_dir.join("sweep.csv"), csv.as_bytes())
}
