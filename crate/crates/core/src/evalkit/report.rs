use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Field order of a report row, as serialized.
pub const REPORT_COLUMNS: [&str; 8] = ["model", "dataset", "t_obs", "horizon", "ade_m", "fde_m", "n_windows", "ms_per_seq"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRow {
    pub model: String,
    pub dataset: String,
    pub t_obs: usize,
    /// Prediction length in timesteps.
    pub horizon: usize,
    pub ade_m: Option<f64>,
    pub fde_m: Option<f64>,
    pub n_windows: usize,
    /// `None` in deterministic runs, where wall time would break reproducibility.
    pub ms_per_seq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedCell {
    pub model: String,
    pub dataset: String,
    pub horizon: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub schema_version: u32,
    pub rows: Vec<MetricRow>,
    pub skipped: Vec<SkippedCell>,
}

impl Default for MetricReport {
    fn default() -> Self {
        Self { schema_version: REPORT_SCHEMA_VERSION, rows: Vec::new(), skipped: Vec::new() }
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

impl MetricReport {
    pub fn row(&self, model: &str, dataset: &str, horizon: usize) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.dataset == dataset && r.horizon == horizon)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Models as rows, (dataset, horizon) pairs as columns, cells `ADE / FDE`
    /// in meters.
    pub fn render_table(&self) -> String {
        let models = first_seen(self.rows.iter().map(|r| r.model.as_str()).chain(self.skipped.iter().map(|s| s.model.as_str())));
        let datasets = first_seen(self.rows.iter().map(|r| r.dataset.as_str()).chain(self.skipped.iter().map(|s| s.dataset.as_str())));
        let horizons: BTreeSet<usize> = self.rows.iter().map(|r| r.horizon).chain(self.skipped.iter().map(|s| s.horizon)).collect();
        let columns: Vec<(&str, usize)> = datasets.iter().flat_map(|d| horizons.iter().map(move |&h| (*d, h))).collect();

        let mut header = vec!["Model".to_string()];
        header.extend(columns.iter().map(|(d, h)| format!("{d} t={h}")));
        let mut body = Vec::new();
        for m in &models {
            let mut line = vec![m.to_string()];
            for &(d, h) in &columns {
                let cell = match self.row(m, d, h) {
                    Some(r) => match (r.ade_m, r.fde_m) {
                        (Some(a), Some(f)) => format!("{a:.3} / {f:.3}"),
                        (Some(a), None) => format!("{a:.3} / -"),
                        _ => "n/a".into(),
                    },
                    None if self.skipped.iter().any(|s| s.model == *m && s.dataset == d && s.horizon == h) => "skipped".into(),
                    None => "-".into(),
                };
                line.push(cell);
            }
            body.push(line);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| body.iter().map(|l| l[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let fmt_line = |out: &mut String, cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            writeln!(out, "| {} |", padded.join(" | ")).expect("write to string");
        };
        fmt_line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        fmt_line(&mut out, &rule);
        for l in &body {
            fmt_line(&mut out, l);
        }
        out.push_str("ADE / FDE in meters\n");
        for s in &self.skipped {
            writeln!(out, "skipped {} on {} t={}: {}", s.model, s.dataset, s.horizon, s.reason).expect("write to string");
        }
        out
    }
}
