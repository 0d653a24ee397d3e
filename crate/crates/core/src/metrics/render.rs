use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Metrics, MetricsReport};
use crate::classes::{Domain, WeatherClass};
use crate::error::{Error, Result};

pub const ABSENT: &str = "—";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

/// Half-up rounding to two decimals, symmetric in sign. The small nudge
/// absorbs binary representation error such as `1.005 → 1.00499…`.
pub fn round_half_up(x: f64) -> f64 {
    let r = x.signum() * ((x.abs() * 100.0 + 0.5 + 1e-9).floor() / 100.0);
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn fmt_percent(x: f64) -> String {
    format!("{:.2}", round_half_up(x))
}

/// Signed difference: `+1.70`, `-2.12`, `0.00`.
pub fn fmt_diff(x: f64) -> String {
    let r = round_half_up(x);
    if r > 0.0 {
        format!("+{r:.2}")
    } else if r < 0.0 {
        format!("{r:.2}")
    } else {
        "0.00".to_string()
    }
}

fn cell(m: Option<Metrics>, pick: fn(&Metrics) -> f64) -> String {
    m.map_or_else(|| ABSENT.to_string(), |m| fmt_percent(pick(&m)))
}

const PICKS: [(&str, fn(&Metrics) -> f64); 3] = [
    ("Accuracy", |m| m.accuracy),
    ("Precision", |m| m.precision),
    ("F1", |m| m.f1),
];

fn table_row(label: &str, cells: &[String]) -> String {
    format!("| {label} | {} |", cells.join(" | "))
}

fn header(first: &str, columns: &[String]) -> String {
    let mut s = table_row(first, columns);
    s.push('\n');
    s.push_str(&format!("|---|{}", "---:|".repeat(columns.len())));
    s
}

/// Accuracy, precision and F1 by overall / day / night, one row per report.
pub fn render_lighting_table(rows: &[(&str, &MetricsReport)]) -> String {
    let strata = ["Overall", "Day", "Night"];
    let columns: Vec<String> = PICKS
        .iter()
        .flat_map(|(m, _)| strata.iter().map(move |s| format!("{m} {s}")))
        .collect();
    let mut out = header("Model", &columns);
    for (label, r) in rows {
        let groups = [
            Some(r.overall),
            r.domain(Domain::Day),
            r.domain(Domain::Night),
        ];
        let cells: Vec<String> = PICKS
            .iter()
            .flat_map(|(_, pick)| groups.iter().map(move |g| cell(*g, *pick)))
            .collect();
        out.push('\n');
        out.push_str(&table_row(label, &cells));
    }
    out
}

/// Accuracy, precision and F1 overall and per class, one row per report.
pub fn render_class_table(rows: &[(&str, &MetricsReport)]) -> String {
    let columns: Vec<String> = PICKS
        .iter()
        .flat_map(|(m, _)| {
            std::iter::once(format!("{m} Overall")).chain(
                WeatherClass::ALL
                    .iter()
                    .map(move |c| format!("{m} {}", c.display_name())),
            )
        })
        .collect();
    let mut out = header("Model", &columns);
    for (label, r) in rows {
        let groups: Vec<Option<Metrics>> = std::iter::once(Some(r.overall))
            .chain(WeatherClass::ALL.iter().map(|&c| r.class(c)))
            .collect();
        let cells: Vec<String> = PICKS
            .iter()
            .flat_map(|(_, pick)| groups.iter().map(move |g| cell(*g, *pick)))
            .collect();
        out.push('\n');
        out.push_str(&table_row(label, &cells));
    }
    out
}

pub fn render_report(report: &MetricsReport, label: &str, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Markdown => {
            let rows = [(label, report)];
            Ok(format!(
                "{}\n\n{}\n",
                render_lighting_table(&rows),
                render_class_table(&rows)
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub stratum: String,
    pub before: Metrics,
    pub after: Metrics,
    pub delta: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub rows: Vec<DiffRow>,
}

impl ReportDiff {
    pub fn row(&self, stratum: &str) -> Option<&DiffRow> {
        self.rows.iter().find(|r| r.stratum == stratum)
    }
}

/// `after − before` for every stratum present in both reports.
pub fn diff_reports(before: &MetricsReport, after: &MetricsReport) -> Result<ReportDiff> {
    let mut strata: Vec<(String, Option<Metrics>, Option<Metrics>)> =
        vec![("Overall".into(), Some(before.overall), Some(after.overall))];
    for d in Domain::ALL {
        let name = match d {
            Domain::Day => "Day",
            Domain::Night => "Night",
        };
        strata.push((name.into(), before.domain(d), after.domain(d)));
    }
    for c in WeatherClass::ALL {
        strata.push((c.display_name().into(), before.class(c), after.class(c)));
    }

    let mut rows = Vec::new();
    for (stratum, b, a) in strata {
        match (b, a) {
            (Some(before), Some(after)) => rows.push(DiffRow {
                stratum,
                before,
                after,
                delta: Metrics {
                    accuracy: after.accuracy - before.accuracy,
                    precision: after.precision - before.precision,
                    f1: after.f1 - before.f1,
                },
            }),
            (None, None) => {}
            _ => {
                return Err(Error::contract(format!(
                    "diff_reports: stratum `{stratum}` is present in only one report"
                )))
            }
        }
    }
    Ok(ReportDiff { rows })
}

/// Base / after / diff per metric, one row per stratum.
pub fn render_diff(diff: &ReportDiff) -> String {
    let columns: Vec<String> = PICKS
        .iter()
        .flat_map(|(m, _)| ["Base", "Enhanced", "Diff"].map(|k| format!("{m} {k}")))
        .collect();
    let mut out = header("Stratum", &columns);
    for row in &diff.rows {
        let mut cells = Vec::with_capacity(9);
        for (_, pick) in PICKS {
            cells.push(fmt_percent(pick(&row.before)));
            cells.push(fmt_percent(pick(&row.after)));
            cells.push(fmt_diff(pick(&row.delta)));
        }
        out.push('\n');
        out.push_str(&table_row(&row.stratum, &cells));
    }
    let _ = writeln!(out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(fmt_percent(1.005), "1.01");
        assert_eq!(fmt_percent(2.675), "2.68");
        assert_eq!(fmt_percent(96.55), "96.55");
        assert_eq!(fmt_percent(-1.005), "-1.01");
        assert_eq!(fmt_percent(100.0 / 3.0), "33.33");
        assert_eq!(fmt_percent(-0.001), "0.00");
    }

    #[test]
    fn diff_signs() {
        assert_eq!(fmt_diff(82.45 - 63.40), "+19.05");
        assert_eq!(fmt_diff(61.42 - 63.54), "-2.12");
        assert_eq!(fmt_diff(59.96 - 59.96), "0.00");
        assert_eq!(fmt_diff(-0.0001), "0.00");
    }
}
