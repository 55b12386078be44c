//! Canonical JSON reports and their text tables.

use mocha_core::metrics::{ErrorReport, LatencyReport};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::experiment::Evaluation;

/// How token emission latency is measured, stated in every report.
pub const TEL_POLICY: &str =
    "TEL = (emission frame - reference boundary frame) * frame_ms over matched and substituted tokens; reference boundaries are synthetic ground truth (segment end frames); percentiles are nearest-rank";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: Option<f64>,
    pub p90: Option<f64>,
    pub p95: Option<f64>,
    pub timed_tokens: usize,
    pub deletions: usize,
}

impl From<&LatencyReport> for LatencySummary {
    fn from(r: &LatencyReport) -> Self {
        Self { p50: r.p50, p90: r.p90, p95: r.p95, timed_tokens: r.latencies_ms.len(), deletions: r.deletions }
    }
}

/// One decoding condition: a (mode, lambda_se, tau) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: String,
    pub lambda_se: f64,
    pub tau: f64,
    pub utterances: usize,
    pub error: ErrorReport,
    pub latency: LatencySummary,
    pub mean_emit_p: Option<f64>,
}

impl ResultRow {
    pub fn new(mode: &str, lambda_se: f64, tau: f64, utterances: usize, eval: &Evaluation) -> Self {
        Self {
            mode: mode.into(),
            lambda_se,
            tau,
            utterances,
            error: eval.error,
            latency: (&eval.latency).into(),
            mean_emit_p: eval.mean_emit_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub version: String,
    pub tel_policy: String,
    pub config: RunConfig,
    pub rows: Vec<ResultRow>,
}

impl Report {
    pub fn new(kind: &str, config: &RunConfig, rows: Vec<ResultRow>) -> Self {
        Self {
            kind: kind.into(),
            version: crate::version::VERSION.into(),
            tel_policy: TEL_POLICY.into(),
            config: config.clone(),
            rows,
        }
    }
}

/// Deterministic row order: ascending lambda_se, then tau, then mode.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.lambda_se
            .total_cmp(&b.lambda_se)
            .then(a.tau.total_cmp(&b.tau))
            .then_with(|| a.mode.cmp(&b.mode))
    });
}

fn pct(count: usize, n: usize) -> String {
    if n == 0 {
        "-".into()
    } else {
        format!("{:.2}", 100.0 * count as f64 / n as f64)
    }
}

fn ms(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.0}"))
}

/// Text table: mode, lambda_se, tau, error %, sub / ins / del %, TEL
/// percentiles in ms.
pub fn render_table(report: &Report) -> String {
    let header = ["mode", "lambda_se", "tau", "err [%]", "sub / ins / del [%]", "TEL50 [ms]", "TEL90 [ms]", "TEL95 [ms]"];
    let body: Vec<[String; 8]> = report
        .rows
        .iter()
        .map(|r| {
            let e = &r.error;
            let n = e.reference_tokens;
            [
                r.mode.clone(),
                format!("{:.2}", r.lambda_se),
                format!("{:.2}", r.tau),
                if n == 0 { "-".into() } else { format!("{:.2}", 100.0 * e.rate) },
                format!("{} / {} / {}", pct(e.substitutions, n), pct(e.insertions, n), pct(e.deletions, n)),
                ms(r.latency.p50),
                ms(r.latency.p90),
                ms(r.latency.p95),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    let mut out = format!("# {} {}\n# {}\n", report.kind, report.version, report.tel_policy);
    out.push_str(&line(header.to_vec()));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
