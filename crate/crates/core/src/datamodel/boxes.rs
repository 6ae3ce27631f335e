use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel-space rectangle. `x` is the column and `y` the row, origin top-left,
/// and both maxima are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
            label: None,
            confidence: None,
        }
    }

    /// Box spanning a whole `height × width` frame.
    pub fn full_frame(height: usize, width: usize) -> Self {
        Self::new(0, 0, width as u32 - 1, height as u32 - 1)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn width(&self) -> usize {
        (self.x_max - self.x_min) as usize + 1
    }

    pub fn height(&self) -> usize {
        (self.y_max - self.y_min) as usize + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (r, c) = (row as u64, col as u64);
        r >= self.y_min as u64 && r <= self.y_max as u64 && c >= self.x_min as u64 && c <= self.x_max as u64
    }

    /// Checks ordering, and bounds when the image size is known.
    pub fn validate(&self, image_size: Option<(usize, usize)>) -> Result<()> {
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::invalid(format!(
                "inverted box ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid(format!("box confidence {c} outside [0, 1]")));
            }
        }
        if let Some((height, width)) = image_size {
            if self.x_max as usize >= width || self.y_max as usize >= height {
                return Err(Error::invalid(format!(
                    "box ({}, {}, {}, {}) outside {height}x{width} image",
                    self.x_min, self.y_min, self.x_max, self.y_max
                )));
            }
        }
        Ok(())
    }

    /// Maps the box from one image size onto another, covering every
    /// destination pixel the source box touches.
    pub fn rescaled(&self, from: (usize, usize), to: (usize, usize)) -> BoundingBox {
        let sy = to.0 as f64 / from.0 as f64;
        let sx = to.1 as f64 / from.1 as f64;
        let lo = |v: u32, s: f64| (v as f64 * s).floor() as u32;
        let hi = |v: u32, s: f64, limit: usize| {
            let edge = ((v as f64 + 1.0) * s).ceil() as i64 - 1;
            edge.clamp(0, limit as i64 - 1) as u32
        };
        let x_max = hi(self.x_max, sx, to.1);
        let y_max = hi(self.y_max, sy, to.0);
        BoundingBox {
            x_min: lo(self.x_min, sx).min(x_max),
            y_min: lo(self.y_min, sy).min(y_max),
            x_max,
            y_max,
            label: self.label.clone(),
            confidence: self.confidence,
        }
    }
}

/// Ordered, possibly empty, list of boxes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundingBoxSet {
    pub boxes: Vec<BoundingBox>,
}

impl BoundingBoxSet {
    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        Self { boxes }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BoundingBox> {
        self.boxes.iter()
    }

    pub fn validate(&self, image_size: Option<(usize, usize)>) -> Result<()> {
        self.boxes.iter().try_for_each(|b| b.validate(image_size))
    }

    pub fn from_json(text: &str, image_size: Option<(usize, usize)>) -> Result<Self> {
        let set: BoundingBoxSet = serde_json::from_str(text).map_err(|e| Error::Malformed {
            what: "box file",
            message: e.to_string(),
        })?;
        set.validate(image_size)?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("box sets always serialize")
    }
}

impl<'a> IntoIterator for &'a BoundingBoxSet {
    type Item = &'a BoundingBox;
    type IntoIter = std::slice::Iter<'a, BoundingBox>;
    fn into_iter(self) -> Self::IntoIter {
        self.boxes.iter()
    }
}

/// Reads a box file. Out-of-range coordinates are rejected, never clamped.
pub fn load_boxes(path: impl AsRef<Path>, image_size: Option<(usize, usize)>) -> Result<BoundingBoxSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BoundingBoxSet::from_json(&text, image_size).map_err(|e| match e {
        Error::Malformed { what, message } => Error::Malformed {
            what,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn save_boxes(path: impl AsRef<Path>, boxes: &BoundingBoxSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, boxes.to_json()).map_err(|e| Error::io(path, e))
}
