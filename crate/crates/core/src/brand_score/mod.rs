//! Logo detection interface, brand-attention scoring and the hypothesis harness.

pub mod hypothesis;

use serde::{Deserialize, Serialize};

use crate::adapter::CommandAdapter;
use crate::datamodel::{BoundingBox, BoundingBoxSet, Grid, LoadedImage};
use crate::error::{Error, Result};
use crate::textmap::RawRegion;

pub use hypothesis::{
    condition_stats, format_score, hypothesis_report, hypothesis_table, run_hypothesis, write_hypothesis_report,
    BoxSource, ConditionStats,
};

/// How overlapping boxes are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Each pixel counts once, however many boxes cover it.
    #[default]
    Union,
    /// Per-box sums added together; overlaps count once per box.
    PerBoxSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    Fraction,
    #[default]
    Percent,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Saliency values below this are zeroed before normalization.
    pub threshold: f64,
    pub overlap_mode: OverlapMode,
    pub scale: ScoreScale,
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(format!("threshold must be a finite value >= 0, got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Share of thresholded, sum-normalized saliency mass inside the boxes.
/// Box `x` indexes columns and `y` rows. An empty box set scores 0.
pub fn brand_attention_score(s: &Grid, boxes: &BoundingBoxSet, cfg: &ScoreConfig) -> Result<f64> {
    cfg.validate()?;
    let (h, w) = s.shape();
    boxes.validate(Some((h, w)))?;
    if boxes.is_empty() {
        return Ok(0.0);
    }
    if s.data.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("saliency map has negative values"));
    }
    let kept = |v: f64| if v < cfg.threshold { 0.0 } else { v };
    let total: f64 = s.data.iter().map(|&v| kept(v)).sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("empty saliency mass after thresholding".into()));
    }
    let box_sum = |b: &BoundingBox| -> f64 {
        (b.y_min as usize..=b.y_max as usize)
            .map(|r| {
                let row = &s.data[r * w..(r + 1) * w];
                row[b.x_min as usize..=b.x_max as usize].iter().map(|&v| kept(v)).sum::<f64>()
            })
            .sum()
    };
    let mass = match cfg.overlap_mode {
        OverlapMode::PerBoxSum => boxes.iter().map(box_sum).sum::<f64>(),
        OverlapMode::Union => {
            let mut covered = vec![false; h * w];
            for b in boxes.iter() {
                for r in b.y_min as usize..=b.y_max as usize {
                    covered[r * w + b.x_min as usize..=r * w + b.x_max as usize].fill(true);
                }
            }
            s.data
                .iter()
                .zip(&covered)
                .filter(|(_, &c)| c)
                .map(|(&v, _)| kept(v))
                .sum()
        }
    };
    let fraction = mass / total;
    Ok(match cfg.scale {
        ScoreScale::Fraction => fraction,
        ScoreScale::Percent => 100.0 * fraction,
    })
}

/// Scores user-chosen regions; the same computation as [`brand_attention_score`].
pub fn region_attention_score(s: &Grid, boxes: &BoundingBoxSet, cfg: &ScoreConfig) -> Result<f64> {
    brand_attention_score(s, boxes, cfg)
}

/// Finds logos in an image. Boxes are in original-image pixel coordinates.
pub trait LogoDetector: Send + Sync {
    fn detect(&self, image: &LoadedImage) -> Result<BoundingBoxSet>;
}

/// Returns a fixed box set.
#[derive(Debug, Clone, Default)]
pub struct StubLogoDetector {
    pub boxes: BoundingBoxSet,
}

impl StubLogoDetector {
    pub fn new(boxes: BoundingBoxSet) -> Self {
        Self { boxes }
    }
}

impl LogoDetector for StubLogoDetector {
    fn detect(&self, _image: &LoadedImage) -> Result<BoundingBoxSet> {
        Ok(self.boxes.clone())
    }
}

#[derive(Debug, Deserialize)]
struct LogoOutput {
    boxes: Vec<Vec<f64>>,
}

/// External detector: prints `{"boxes":[[x_min,y_min,x_max,y_max,confidence],...]}`.
#[derive(Debug)]
pub struct CommandLogoDetector {
    adapter: CommandAdapter,
}

impl CommandLogoDetector {
    pub fn new(adapter: CommandAdapter) -> Self {
        Self { adapter }
    }
}

impl LogoDetector for CommandLogoDetector {
    fn detect(&self, image: &LoadedImage) -> Result<BoundingBoxSet> {
        let (out, frame): (LogoOutput, _) = self.adapter.run_on_image(image)?;
        let original = image.original_size();
        let mut boxes = Vec::with_capacity(out.boxes.len());
        for raw in out.boxes {
            if raw.len() != 4 && raw.len() != 5 {
                return Err(Error::Detector(format!(
                    "logo box needs 4 coordinates and an optional confidence, got {} values",
                    raw.len()
                )));
            }
            let mut b = RawRegion::Box([raw[0], raw[1], raw[2], raw[3]])
                .to_box(frame)
                .map_err(|e| Error::Detector(format!("bad logo box: {e}")))?;
            if frame != original {
                b = b.rescaled(frame, original);
            }
            if let Some(&c) = raw.get(4) {
                b = b.with_confidence(c);
            }
            boxes.push(b);
        }
        let set = BoundingBoxSet::new(boxes);
        set.validate(Some(original))
            .map_err(|e| Error::Detector(format!("detector returned invalid boxes: {e}")))?;
        Ok(set)
    }
}

/// Runs the detector and checks its boxes against the image bounds.
pub fn detect_logos(image: &LoadedImage, detector: &dyn LogoDetector) -> Result<BoundingBoxSet> {
    let boxes = detector.detect(image)?;
    boxes.validate(Some(image.original_size()))?;
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[&[f64]]) -> Grid {
        let w = rows[0].len();
        Grid::new(rows.len(), w, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn set(boxes: &[(u32, u32, u32, u32)]) -> BoundingBoxSet {
        BoundingBoxSet::new(boxes.iter().map(|&(a, b, c, d)| BoundingBox::new(a, b, c, d)).collect())
    }

    #[test]
    fn left_column_holds_half_the_mass() {
        let s = map(&[&[3.0, 1.0], &[1.0, 3.0]]);
        let score = brand_attention_score(&s, &set(&[(0, 0, 0, 1)]), &ScoreConfig::default()).unwrap();
        assert_eq!(score, 50.0);
    }

    #[test]
    fn empty_set_scores_zero_and_full_frame_scores_hundred() {
        let s = map(&[&[0.2, 0.9], &[0.4, 0.1]]);
        let cfg = ScoreConfig::default();
        assert_eq!(brand_attention_score(&s, &BoundingBoxSet::empty(), &cfg).unwrap(), 0.0);
        let full = BoundingBoxSet::new(vec![BoundingBox::full_frame(2, 2)]);
        assert_eq!(brand_attention_score(&s, &full, &cfg).unwrap(), 100.0);
    }

    #[test]
    fn overlap_modes_differ_on_duplicate_boxes() {
        let s = map(&[&[0.5, 0.25], &[0.125, 0.125]]);
        let one = set(&[(0, 0, 0, 0)]);
        let twice = set(&[(0, 0, 0, 0), (0, 0, 0, 0)]);
        let union = ScoreConfig::default();
        let per_box = ScoreConfig {
            overlap_mode: OverlapMode::PerBoxSum,
            ..union
        };
        let single = brand_attention_score(&s, &one, &union).unwrap();
        assert_eq!(brand_attention_score(&s, &twice, &union).unwrap(), single);
        assert_eq!(brand_attention_score(&s, &twice, &per_box).unwrap(), 2.0 * single);
    }

    #[test]
    fn threshold_removing_everything_is_an_error() {
        let s = map(&[&[0.1, 0.2]]);
        let cfg = ScoreConfig {
            threshold: 0.5,
            ..ScoreConfig::default()
        };
        let err = brand_attention_score(&s, &set(&[(0, 0, 0, 0)]), &cfg).unwrap_err();
        assert!(err.to_string().contains("empty saliency mass"), "{err}");
    }

    #[test]
    fn fraction_scale() {
        let s = map(&[&[1.0, 3.0]]);
        let cfg = ScoreConfig {
            scale: ScoreScale::Fraction,
            ..ScoreConfig::default()
        };
        assert_eq!(brand_attention_score(&s, &set(&[(1, 0, 1, 0)]), &cfg).unwrap(), 0.75);
    }

    #[test]
    fn box_outside_map_is_rejected() {
        let s = map(&[&[1.0, 3.0]]);
        assert!(brand_attention_score(&s, &set(&[(0, 0, 2, 0)]), &ScoreConfig::default()).is_err());
    }

    #[test]
    fn config_json_uses_snake_case() {
        let cfg: ScoreConfig = serde_json::from_str(r#"{"threshold":0.1,"overlap_mode":"per_box_sum","scale":"fraction"}"#).unwrap();
        assert_eq!(cfg.overlap_mode, OverlapMode::PerBoxSum);
        assert_eq!(cfg.scale, ScoreScale::Fraction);
        assert!(serde_json::from_str::<ScoreConfig>(r#"{"threshold":-1}"#).unwrap().validate().is_err());
    }
}
