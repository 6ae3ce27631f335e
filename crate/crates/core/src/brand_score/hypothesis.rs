//! Per-condition mean/SE of brand-attention scores and the report built from them.

use std::path::Path;

use serde::Serialize;

use super::{brand_attention_score, detect_logos, LogoDetector, ScoreConfig};
use crate::datamodel::{load_image, HypothesisDataset};
use crate::error::{Error, Result};
use crate::pipeline::SaliencyPredictor;

/// Where the logo boxes for each sample come from.
#[derive(Clone, Copy)]
pub enum BoxSource<'a> {
    /// The `.boxes.json` files shipped with the dataset.
    Annotations,
    Detector(&'a dyn LogoDetector),
}

impl std::fmt::Debug for BoxSource<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoxSource::Annotations => f.write_str("Annotations"),
            BoxSource::Detector(_) => f.write_str("Detector"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionStats {
    pub hypothesis: String,
    pub condition: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over √n; `None` when n < 2.
    pub se: Option<f64>,
    pub scores: Vec<f64>,
}

/// Mean and standard error of one condition's scores.
pub fn condition_stats(hypothesis: &str, condition: &str, scores: Vec<f64>) -> Result<ConditionStats> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("condition {hypothesis}/{condition} has no scores")));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("condition {hypothesis}/{condition} has a non-finite score {v}")));
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let se = (n >= 2).then(|| {
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Ok(ConditionStats {
        hypothesis: hypothesis.to_string(),
        condition: condition.to_string(),
        n,
        mean,
        se,
        scores,
    })
}

/// Scores every sample at its original resolution and aggregates per condition.
pub fn run_hypothesis(
    dataset: &HypothesisDataset,
    predictor: &dyn SaliencyPredictor,
    boxes: BoxSource<'_>,
    cfg: &ScoreConfig,
) -> Result<Vec<ConditionStats>> {
    cfg.validate()?;
    let mut stats = Vec::with_capacity(dataset.condition_count());
    for (hypothesis, condition, samples) in dataset.conditions() {
        let mut scores = Vec::with_capacity(samples.len());
        for sample in samples {
            let image = load_image(&sample.image_path, predictor.working_size())?;
            let saliency = predictor.predict(&image)?;
            let detected;
            let b = match boxes {
                BoxSource::Annotations => &sample.boxes,
                BoxSource::Detector(d) => {
                    detected = detect_logos(&image, d)?;
                    &detected
                }
            };
            let score = brand_attention_score(saliency.grid(), b, cfg)
                .map_err(|e| match e {
                    Error::Degenerate(m) => Error::Degenerate(format!("{}: {m}", sample.image_path.display())),
                    other => other,
                })?;
            log::debug!("{hypothesis}/{condition}: {} -> {score:.3}", sample.image_path.display());
            scores.push(score);
        }
        stats.push(condition_stats(hypothesis, condition, scores)?);
    }
    Ok(stats)
}

/// Two decimals with trailing zeros dropped, as the score tables print them.
pub fn format_score(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Rows sorted by hypothesis, then by descending mean, each with its winner flag.
fn ranked(stats: &[ConditionStats]) -> Result<Vec<(&ConditionStats, bool)>> {
    if stats.is_empty() {
        return Err(Error::invalid("no condition statistics to report"));
    }
    let mut rows: Vec<&ConditionStats> = stats.iter().collect();
    rows.sort_by(|a, b| a.hypothesis.cmp(&b.hypothesis).then(b.mean.total_cmp(&a.mean)));
    Ok(rows
        .iter()
        .map(|s| {
            let best = rows
                .iter()
                .filter(|o| o.hypothesis == s.hypothesis)
                .map(|o| o.mean)
                .fold(f64::NEG_INFINITY, f64::max);
            (*s, s.mean == best)
        })
        .collect())
}

/// CSV with header `hypothesis,condition,n,mean,se,winner`. Undefined SE is written as `n/a`.
pub fn hypothesis_report(stats: &[ConditionStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("writing report: {e}"));
    w.write_record(["hypothesis", "condition", "n", "mean", "se", "winner"]).map_err(csv_err)?;
    for (s, winner) in ranked(stats)? {
        let se = s.se.map_or_else(|| "n/a".to_string(), format_score);
        w.write_record([
            s.hypothesis.as_str(),
            s.condition.as_str(),
            &s.n.to_string(),
            &format_score(s.mean),
            &se,
            if winner { "true" } else { "false" },
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("writing report: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_hypothesis_report(stats: &[ConditionStats], out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    let text = hypothesis_report(stats)?;
    std::fs::write(out, text).map_err(|e| Error::io(out, e))
}

/// Plain-text table; winners are marked with `*`.
pub fn hypothesis_table(stats: &[ConditionStats]) -> Result<String> {
    let mut out = String::from("Hypothesis | Condition | Mean | SE\n");
    for (s, winner) in ranked(stats)? {
        let mark = if winner { "*" } else { "" };
        let se = s.se.map_or_else(|| "n/a".to_string(), format_score);
        out.push_str(&format!("{} | {mark}{} | {} | {se}\n", s.hypothesis, s.condition, format_score(s.mean)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_scores_hand_values() {
        let s = condition_stats("h", "c", vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(s.mean, 20.0);
        assert!((s.se.unwrap() - 10.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_scores_have_zero_se() {
        assert_eq!(condition_stats("h", "c", vec![7.5; 4]).unwrap().se, Some(0.0));
    }

    #[test]
    fn single_score_keeps_mean_without_se() {
        let s = condition_stats("h", "c", vec![12.0]).unwrap();
        assert_eq!((s.mean, s.se), (12.0, None));
        let csv = hypothesis_report(&[s]).unwrap();
        assert_eq!(csv, "hypothesis,condition,n,mean,se,winner\nh,c,1,12,n/a,true\n");
    }

    #[test]
    fn score_formatting_trims_zeros() {
        assert_eq!(format_score(18.8), "18.8");
        assert_eq!(format_score(36.0), "36");
        assert_eq!(format_score(40.0249), "40.02");
        assert_eq!(format_score(5.0), "5");
        assert_eq!(format_score(-0.001), "0");
    }

    #[test]
    fn rows_sort_by_hypothesis_then_mean() {
        let stats = vec![
            condition_stats("b", "low", vec![1.0, 2.0]).unwrap(),
            condition_stats("a", "x", vec![5.0, 5.0]).unwrap(),
            condition_stats("b", "high", vec![9.0, 8.0]).unwrap(),
        ];
        let csv = hypothesis_report(&stats).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "a,x,2,5,0,true");
        assert_eq!(lines[2], "b,high,2,8.5,0.5,true");
        assert_eq!(lines[3], "b,low,2,1.5,0.5,false");
        assert!(hypothesis_report(&[]).is_err());
    }

    #[test]
    fn names_with_commas_are_quoted() {
        let stats = [condition_stats("a, b", "c", vec![1.0, 1.0]).unwrap()];
        assert!(hypothesis_report(&stats).unwrap().contains("\"a, b\",c,2,1,0,true"));
    }
}
