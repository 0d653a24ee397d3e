//! Confusion matrices, stratified macro metrics and report rendering.

mod render;

pub use render::{
    diff_reports, fmt_diff, fmt_percent, render_class_table, render_diff, render_lighting_table,
    render_report, round_half_up, DiffRow, ReportDiff, ReportFormat, ABSENT,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classes::{Domain, WeatherClass, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl ConfusionMatrix {
    pub fn tally<'a>(
        pairs: impl IntoIterator<Item = (&'a WeatherClass, &'a WeatherClass)>,
    ) -> Self {
        let mut m = Self::default();
        for (truth, pred) in pairs {
            m.counts[truth.index()][pred.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn true_count(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn predicted_count(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// Fractions in `[0, 1]`.
    pub fn accuracy(&self) -> f64 {
        ratio(
            (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum(),
            self.total(),
        )
    }

    pub fn precision(&self, class: WeatherClass) -> f64 {
        let c = class.index();
        ratio(self.counts[c][c], self.predicted_count(c))
    }

    pub fn recall(&self, class: WeatherClass) -> f64 {
        let c = class.index();
        ratio(self.counts[c][c], self.true_count(c))
    }

    pub fn f1(&self, class: WeatherClass) -> f64 {
        harmonic(self.precision(class), self.recall(class))
    }

    pub fn macro_precision(&self) -> f64 {
        WeatherClass::ALL
            .iter()
            .map(|&c| self.precision(c))
            .sum::<f64>()
            / NUM_CLASSES as f64
    }

    pub fn macro_f1(&self) -> f64 {
        WeatherClass::ALL.iter().map(|&c| self.f1(c)).sum::<f64>() / NUM_CLASSES as f64
    }

    /// Overall triple in percent, or `None` when empty.
    pub fn metrics(&self) -> Option<Metrics> {
        (self.total() > 0).then(|| Metrics {
            accuracy: 100.0 * self.accuracy(),
            precision: 100.0 * self.macro_precision(),
            f1: 100.0 * self.macro_f1(),
        })
    }
}

/// Percent values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn values(&self) -> [f64; 3] {
        [self.accuracy, self.precision, self.f1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub overall: usize,
    pub by_domain: BTreeMap<Domain, usize>,
    pub by_class: BTreeMap<WeatherClass, usize>,
}

/// Stratified evaluation. Strata without samples are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Metrics,
    pub by_domain: BTreeMap<Domain, Option<Metrics>>,
    /// Accuracy is the class recall; precision and F1 are that class's own.
    pub by_class: BTreeMap<WeatherClass, Option<Metrics>>,
    pub sample_counts: SampleCounts,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn domain(&self, d: Domain) -> Option<Metrics> {
        self.by_domain.get(&d).copied().flatten()
    }

    pub fn class(&self, c: WeatherClass) -> Option<Metrics> {
        self.by_class.get(&c).copied().flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn compute_metrics(
    predictions: &[WeatherClass],
    labels: &[WeatherClass],
    domains: &[Domain],
) -> Result<MetricsReport> {
    if predictions.len() != labels.len() || labels.len() != domains.len() {
        return Err(Error::contract(format!(
            "compute_metrics: {} predictions, {} labels, {} domains",
            predictions.len(),
            labels.len(),
            domains.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::contract("compute_metrics: no samples"));
    }
    let confusion = ConfusionMatrix::tally(labels.iter().zip(predictions));
    let overall = confusion.metrics().expect("nonempty");

    let mut by_domain = BTreeMap::new();
    let mut domain_counts = BTreeMap::new();
    for d in Domain::ALL {
        let m = ConfusionMatrix::tally(
            labels
                .iter()
                .zip(predictions)
                .zip(domains)
                .filter(|(_, dom)| **dom == d)
                .map(|(pair, _)| pair),
        );
        domain_counts.insert(d, m.total() as usize);
        by_domain.insert(d, m.metrics());
    }

    let mut by_class = BTreeMap::new();
    let mut class_counts = BTreeMap::new();
    for c in WeatherClass::ALL {
        let n = confusion.true_count(c.index());
        class_counts.insert(c, n as usize);
        by_class.insert(
            c,
            (n > 0).then(|| Metrics {
                accuracy: 100.0 * confusion.recall(c),
                precision: 100.0 * confusion.precision(c),
                f1: 100.0 * confusion.f1(c),
            }),
        );
    }

    Ok(MetricsReport {
        overall,
        by_domain,
        by_class,
        sample_counts: SampleCounts {
            overall: labels.len(),
            by_domain: domain_counts,
            by_class: class_counts,
        },
        confusion,
    })
}
