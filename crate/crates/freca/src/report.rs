//! Result emission: per-round and summary CSVs, the versioned JSON
//! report, the run manifest, and a static SVG bar chart of the averaged
//! per-client metrics.
//!
//! Everything except the manifest is a pure function of the report, so
//! re-running a config reproduces the artifacts byte for byte. The
//! manifest is the one place timestamps and wall-clock measurements live.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExperimentConfig, Metric};
use crate::contribution::ClientMetrics;
use crate::orchestrator::{ExperimentReport, MetricTimings, RoundEvalCounts};

pub const PER_ROUND_CSV: &str = "per_round.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CHART_SVG: &str = "chart.svg";

const CSV_HEADER: &str =
    "round,client_id,aw,gap_share,net,sv_raw,sv_minmax,sv_softmax,loo_raw,loo_minmax,loo_softmax";
const SUMMARY_HEADER: &str =
    "client_id,aw,gap_share,net,sv_raw,sv_minmax,sv_softmax,loo_raw,loo_minmax,loo_softmax";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no metrics were computed; nothing to chart")]
    EmptyMetrics,
    #[error("encoding json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Wall-clock seconds spent per metric family across the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallClockSeconds {
    pub freca: f64,
    pub sv: f64,
    pub loo: f64,
}

impl From<MetricTimings> for WallClockSeconds {
    fn from(timings: MetricTimings) -> Self {
        Self {
            freca: timings.freca.as_secs_f64(),
            sv: timings.sv.as_secs_f64(),
            loo: timings.loo.as_secs_f64(),
        }
    }
}

/// Run metadata: the resolved config, tool version, timestamps, and the
/// per-round instrumentation counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub started_at_unix_ms: u128,
    pub finished_at_unix_ms: u128,
    pub config_echo: ExperimentConfig,
    pub round_eval_counts: Vec<RoundEvalCounts>,
    pub wall_clock_seconds: WallClockSeconds,
}

/// Renders a float with 12 significant digits, stable across platforms.
pub fn fmt_value(value: f64) -> String {
    format!("{value:.11e}")
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(fmt_value).unwrap_or_default()
}

fn metric_row(metrics: &ClientMetrics) -> String {
    [
        fmt_opt(metrics.aw),
        fmt_opt(metrics.gap_share),
        fmt_opt(metrics.net),
        fmt_opt(metrics.sv_raw),
        fmt_opt(metrics.sv_minmax),
        fmt_opt(metrics.sv_softmax),
        fmt_opt(metrics.loo_raw),
        fmt_opt(metrics.loo_minmax),
        fmt_opt(metrics.loo_softmax),
    ]
    .join(",")
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `per_round.csv` (rows sorted by round then client) and
/// `summary.csv` (cross-round means). The column schema never varies with
/// the metric subset; absent metrics leave empty cells.
pub fn emit_csv(report: &ExperimentReport, dir: &Path) -> Result<(), ReportError> {
    let mut per_round = String::from(CSV_HEADER);
    per_round.push('\n');
    for record in &report.rounds {
        for (client, metrics) in &record.contribution.per_client {
            let _ = writeln!(
                per_round,
                "{},{},{}",
                record.round,
                client,
                metric_row(metrics)
            );
        }
    }
    write_file(&dir.join(PER_ROUND_CSV), &per_round)?;

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for (client, metrics) in &report.averages {
        let _ = writeln!(summary, "{},{}", client, metric_row(metrics));
    }
    write_file(&dir.join(SUMMARY_CSV), &summary)
}

/// Writes the full report as versioned, deterministic JSON.
pub fn emit_json(report: &ExperimentReport, path: &Path) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write_file(path, &text)
}

/// Reads a report back from its JSON form.
pub fn read_json(path: &Path) -> Result<ExperimentReport, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the run manifest (the only artifact carrying timestamps).
pub fn emit_manifest(manifest: &RunManifest, path: &Path) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_file(path, &text)
}

struct Bar {
    label: &'static str,
    color: &'static str,
    value: fn(&ClientMetrics) -> Option<f64>,
}

const BARS: [Bar; 4] = [
    Bar {
        label: "Net",
        color: "#1f77b4",
        value: |m| m.net,
    },
    Bar {
        label: "AW",
        color: "#ff7f0e",
        value: |m| m.aw,
    },
    Bar {
        label: "SV",
        color: "#2ca02c",
        value: |m| m.sv_minmax,
    },
    Bar {
        label: "LOO",
        color: "#d62728",
        value: |m| m.loo_minmax,
    },
];

fn bars_for(metrics: &std::collections::BTreeSet<Metric>) -> Vec<&'static Bar> {
    BARS.iter()
        .filter(|bar| match bar.label {
            "Net" => metrics.contains(&Metric::Net),
            "AW" => metrics.contains(&Metric::Aw),
            "SV" => metrics.contains(&Metric::Sv),
            "LOO" => metrics.contains(&Metric::Loo),
            _ => false,
        })
        .collect()
}

/// Renders a grouped bar chart of the cross-round averages: one group per
/// client, one bar per computed metric (min-max scaling for SV and LOO),
/// values clamped to [0, 1]. Pure static markup, no external references.
pub fn emit_svg_chart(report: &ExperimentReport, path: &Path) -> Result<(), ReportError> {
    let bars = bars_for(&report.config.metrics);
    if bars.is_empty() {
        return Err(ReportError::EmptyMetrics);
    }
    let clients: Vec<(&usize, &ClientMetrics)> = report.averages.iter().collect();

    let bar_w = 14.0;
    let bar_gap = 2.0;
    let group_gap = 18.0;
    let group_w = bars.len() as f64 * (bar_w + bar_gap) + group_gap;
    let plot_h = 260.0;
    let margin_left = 50.0;
    let margin_top = 40.0;
    let margin_bottom = 40.0;
    let width = margin_left + clients.len() as f64 * group_w + 120.0;
    let height = margin_top + plot_h + margin_bottom;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">Per-client contribution ({}, averaged over {} rounds)</text>",
        margin_left,
        report.config.case,
        report.rounds.len()
    );

    // Axis and horizontal gridlines at 0.25 steps.
    for step in 0..=4 {
        let value = step as f64 * 0.25;
        let y = margin_top + plot_h * (1.0 - value);
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>",
            margin_left,
            margin_left + clients.len() as f64 * group_w
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{value:.2}</text>",
            margin_left - 6.0,
            y + 3.0
        );
    }

    for (group, (client, metrics)) in clients.iter().enumerate() {
        let group_x = margin_left + group as f64 * group_w + group_gap / 2.0;
        for (slot, bar) in bars.iter().enumerate() {
            let value = (bar.value)(metrics).unwrap_or(0.0).clamp(0.0, 1.0);
            let h = plot_h * value;
            let x = group_x + slot as f64 * (bar_w + bar_gap);
            let y = margin_top + plot_h - h;
            let _ = writeln!(
                svg,
                "  <rect class=\"bar\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"{}\"><title>client {client} {}: {value:.4}</title></rect>",
                bar.color, bar.label
            );
        }
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{client}</text>",
            group_x + (bars.len() as f64 * (bar_w + bar_gap)) / 2.0,
            margin_top + plot_h + 16.0
        );
    }

    // Legend.
    let legend_x = margin_left + clients.len() as f64 * group_w + 12.0;
    for (slot, bar) in bars.iter().enumerate() {
        let y = margin_top + slot as f64 * 20.0;
        let _ = writeln!(
            svg,
            "  <rect x=\"{legend_x:.1}\" y=\"{y:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
            bar.color
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            legend_x + 18.0,
            y + 10.0,
            bar.label
        );
    }

    let _ = writeln!(svg, "</svg>");
    write_file(path, &svg)
}

/// Builds the manifest for a finished run.
pub fn build_manifest(
    config: &ExperimentConfig,
    round_eval_counts: Vec<RoundEvalCounts>,
    timings: MetricTimings,
    started_at_unix_ms: u128,
    finished_at_unix_ms: u128,
) -> RunManifest {
    RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at_unix_ms,
        finished_at_unix_ms,
        config_echo: config.clone(),
        round_eval_counts,
        wall_clock_seconds: timings.into(),
    }
}

/// Per-client averages as a plain table, handy for terminal output.
pub fn summary_table(averages: &BTreeMap<usize, ClientMetrics>) -> String {
    let mut out = String::from("client      aw   gap_share         net   sv_minmax  loo_minmax\n");
    for (client, m) in averages {
        let cell = |v: Option<f64>| match v {
            Some(v) => format!("{v:>10.4}"),
            None => format!("{:>10}", "-"),
        };
        let _ = writeln!(
            out,
            "{client:>6}  {}  {}  {}  {}  {}",
            cell(m.aw),
            cell(m.gap_share),
            cell(m.net),
            cell(m.sv_minmax),
            cell(m.loo_minmax)
        );
    }
    out
}
