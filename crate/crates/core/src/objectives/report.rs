//! Dataset-level aggregation of the metric suite.

use std::fmt::Write as _;

use serde::Serialize;

use crate::datamodel::{DensityMap, FixationMap, SaliencyMap};
use crate::error::{Error, Result};
use crate::objectives::metrics::{auc_judd, correlation_coefficient, kl_divergence, nss, similarity};

/// Metrics in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Metric {
    Cc,
    Kl,
    Auc,
    Nss,
    Sim,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Cc, Metric::Kl, Metric::Auc, Metric::Nss, Metric::Sim];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cc => "CC",
            Metric::Kl => "KL",
            Metric::Auc => "AUC",
            Metric::Nss => "NSS",
            Metric::Sim => "SIM",
        }
    }
}

/// One prediction with its ground truth.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub name: String,
    pub prediction: SaliencyMap,
    pub density: DensityMap,
    pub fixations: Option<FixationMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation across samples.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self {
            mean,
            std,
            n: values.len(),
        })
    }

    /// `0.75±0.050`: mean to three places with trailing zeros trimmed (two
    /// kept), deviation to three places.
    pub fn display(&self) -> String {
        let mut mean = format!("{:.3}", self.mean);
        if mean.ends_with('0') {
            mean.pop();
        }
        format!("{mean}±{:.3}", self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFailure {
    pub sample: String,
    pub metric: Metric,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub name: String,
    /// Indexed like [`Metric::ALL`].
    pub values: [Option<f64>; 5],
}

/// Per-metric mean and deviation. A metric that failed on any sample has no
/// summary, so every reported entry aggregates the full sample count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub summaries: Vec<(Metric, Option<Summary>)>,
    pub per_sample: Vec<SampleMetrics>,
    pub failures: Vec<SampleFailure>,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> Option<Summary> {
        self.summaries.iter().find(|(m, _)| *m == metric).and_then(|(_, s)| *s)
    }

    /// `metric,mean,std` with full precision; failed metrics have empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,std\n");
        for (m, s) in &self.summaries {
            match s {
                Some(s) => writeln!(out, "{},{},{}", m.name(), s.mean, s.std),
                None => writeln!(out, "{},,", m.name()),
            }
            .expect("string write");
        }
        out
    }

    /// Header line plus one row, e.g. `model | 0.75±0.050 | 0.578±0.117 | …`.
    pub fn table(&self, label: &str) -> String {
        let header: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
        let cells: Vec<String> = self
            .summaries
            .iter()
            .map(|(_, s)| s.map_or_else(|| "n/a".to_owned(), |s| s.display()))
            .collect();
        format!("Method | {}\n{label} | {}\n", header.join(" | "), cells.join(" | "))
    }
}

fn sample_metrics(pair: &EvalPair) -> [Result<f64>; 5] {
    let (h, w) = pair.density.shape();
    let pred = pair.prediction.resized(h, w);
    let fixation_metric = |f: fn(&FixationMap, &crate::datamodel::Grid) -> Result<f64>| match &pair.fixations {
        Some(fx) => {
            let (fh, fw) = fx.shape();
            f(fx, pair.prediction.resized(fh, fw).grid())
        }
        None => Err(Error::invalid("no fixation map")),
    };
    [
        correlation_coefficient(pair.density.grid(), pred.grid()),
        kl_divergence(pair.density.grid(), pred.grid()),
        fixation_metric(auc_judd),
        fixation_metric(nss),
        similarity(pair.density.grid(), pred.grid()),
    ]
}

/// Metric suite over every pair. Predictions are resized to each ground
/// truth's stored resolution; per-sample metric errors are collected rather
/// than aborting the run.
pub fn evaluate_dataset(pairs: &[EvalPair]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut per_sample = Vec::with_capacity(pairs.len());
    let mut failures = Vec::new();
    for pair in pairs {
        let mut values = [None; 5];
        for (k, r) in sample_metrics(pair).into_iter().enumerate() {
            match r {
                Ok(v) => values[k] = Some(v),
                Err(e) => failures.push(SampleFailure {
                    sample: pair.name.clone(),
                    metric: Metric::ALL[k],
                    message: e.to_string(),
                }),
            }
        }
        per_sample.push(SampleMetrics {
            name: pair.name.clone(),
            values,
        });
    }
    let summaries = Metric::ALL
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let vals: Option<Vec<f64>> = per_sample.iter().map(|s| s.values[k]).collect();
            (m, vals.and_then(|v| Summary::from_values(&v)))
        })
        .collect();
    Ok(MetricsReport {
        samples: pairs.len(),
        summaries,
        per_sample,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_matches_table_style() {
        let s = |mean, std| Summary { mean, std, n: 1 }.display();
        assert_eq!(s(0.75, 0.05), "0.75±0.050");
        assert_eq!(s(0.578, 0.117), "0.578±0.117");
        assert_eq!(s(1.89, 0.204), "1.89±0.204");
    }

    #[test]
    fn single_value_has_zero_std() {
        let s = Summary::from_values(&[0.4]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (0.4, 0.0, 1));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(evaluate_dataset(&[]).is_err());
    }
}
