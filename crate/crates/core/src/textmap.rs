//! Text maps: the image masked to detected text regions, zero elsewhere.

use serde::{Deserialize, Serialize};

use crate::adapter::CommandAdapter;
use crate::datamodel::{BoundingBox, ImageTensor, LoadedImage};
use crate::error::{Error, Result};

/// A detector region: either `[x_min, y_min, x_max, y_max]` or a polygon of
/// `[x, y]` vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawRegion {
    Box([f64; 4]),
    Polygon(Vec<[f64; 2]>),
}

impl RawRegion {
    /// Axis-aligned pixel box within a `(height, width)` frame. Coordinates
    /// are clamped to the frame; a region lying wholly outside is an error.
    pub fn to_box(&self, frame: (usize, usize)) -> Result<BoundingBox> {
        let (x0, y0, x1, y1) = match self {
            RawRegion::Box([a, b, c, d]) => (*a, *b, *c, *d),
            RawRegion::Polygon(points) => {
                if points.is_empty() {
                    return Err(Error::Detector("empty polygon".into()));
                }
                points.iter().fold(
                    (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                    |(x0, y0, x1, y1), &[x, y]| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                )
            }
        };
        if [x0, y0, x1, y1].iter().any(|v| !v.is_finite()) || x0 > x1 || y0 > y1 {
            return Err(Error::Detector(format!("invalid region {self:?}")));
        }
        let (height, width) = (frame.0 as f64, frame.1 as f64);
        if x0 > width - 1.0 || y0 > height - 1.0 || x1 < 0.0 || y1 < 0.0 {
            return Err(Error::Detector(format!("region {self:?} outside {}x{} image", frame.0, frame.1)));
        }
        let clamp = |v: f64, hi: f64| v.clamp(0.0, hi) as u32;
        Ok(BoundingBox::new(
            clamp(x0.floor(), width - 1.0),
            clamp(y0.floor(), height - 1.0),
            clamp(x1.ceil(), width - 1.0),
            clamp(y1.ceil(), height - 1.0),
        ))
    }
}

/// Text regions at working resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextRegionSet {
    pub regions: Vec<BoundingBox>,
}

impl TextRegionSet {
    pub fn new(regions: Vec<BoundingBox>) -> Self {
        Self { regions }
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.regions.iter().any(|r| r.contains(row, col))
    }
}

/// Pluggable scene-text detector.
pub trait TextDetector: Send + Sync {
    /// Detected regions plus the `(height, width)` frame their coordinates use.
    fn detect(&self, image: &LoadedImage) -> Result<(Vec<RawRegion>, (usize, usize))>;
}

/// Returns the same regions, in working-resolution coordinates, for every image.
#[derive(Debug, Clone, Default)]
pub struct StubTextDetector {
    pub regions: Vec<RawRegion>,
}

impl StubTextDetector {
    pub fn new(regions: Vec<RawRegion>) -> Self {
        Self { regions }
    }

    pub fn none() -> Self {
        Self::default()
    }
}

impl TextDetector for StubTextDetector {
    fn detect(&self, image: &LoadedImage) -> Result<(Vec<RawRegion>, (usize, usize))> {
        Ok((self.regions.clone(), (image.tensor.height(), image.tensor.width())))
    }
}

#[derive(Debug, Deserialize)]
struct AdapterReply {
    regions: Vec<RawRegion>,
}

/// Runs an external pretrained text detector: `<command> <image path>` must
/// print `{"regions":[[x_min,y_min,x_max,y_max],...]}` on one line.
#[derive(Debug)]
pub struct CommandTextDetector {
    adapter: CommandAdapter,
}

impl CommandTextDetector {
    pub fn new(adapter: CommandAdapter) -> Self {
        Self { adapter }
    }
}

impl TextDetector for CommandTextDetector {
    fn detect(&self, image: &LoadedImage) -> Result<(Vec<RawRegion>, (usize, usize))> {
        let (reply, frame): (AdapterReply, _) = self.adapter.run_on_image(image)?;
        Ok((reply.regions, frame))
    }
}

/// Runs the detector and maps its regions onto the working resolution.
pub fn detect_text_regions(image: &LoadedImage, detector: &dyn TextDetector) -> Result<TextRegionSet> {
    let (raw, frame) = detector.detect(image)?;
    let working = (image.tensor.height(), image.tensor.width());
    let regions = raw
        .iter()
        .map(|r| {
            let b = r.to_box(frame)?;
            let b = if frame == working { b } else { b.rescaled(frame, working) };
            b.validate(Some(working))?;
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TextRegionSet { regions })
}

/// The image restricted to text regions; same layout as [`ImageTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct TextMap(ImageTensor);

impl TextMap {
    pub fn tensor(&self) -> &ImageTensor {
        &self.0
    }

    pub fn into_tensor(self) -> ImageTensor {
        self.0
    }
}

impl std::ops::Deref for TextMap {
    type Target = ImageTensor;
    fn deref(&self) -> &ImageTensor {
        &self.0
    }
}

/// Keeps image values inside any region and zeroes everything else.
pub fn build_text_map(image: &ImageTensor, regions: &TextRegionSet) -> Result<TextMap> {
    let size = (image.height(), image.width());
    for r in &regions.regions {
        r.validate(Some(size))?;
    }
    let mut mask = vec![false; size.0 * size.1];
    for r in &regions.regions {
        for row in r.y_min as usize..=r.y_max as usize {
            let base = row * size.1;
            mask[base + r.x_min as usize..=base + r.x_max as usize].fill(true);
        }
    }
    let channels = image.channels();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[i / channels] { v } else { 0.0 })
        .collect();
    Ok(TextMap(ImageTensor::new(size.0, size.1, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loaded(img: ImageTensor) -> LoadedImage {
        LoadedImage {
            original_height: img.height(),
            original_width: img.width(),
            tensor: img,
            source: None,
        }
    }

    #[test]
    fn stub_passes_its_region_through() {
        let det = StubTextDetector::new(vec![RawRegion::Box([0.0, 0.0, 9.0, 9.0])]);
        let set = detect_text_regions(&loaded(ImageTensor::zeros(32, 32)), &det).unwrap();
        assert_eq!(set.regions, vec![BoundingBox::new(0, 0, 9, 9)]);
    }

    #[test]
    fn quadrilateral_collapses_to_vertex_extent() {
        let quad = vec![[3.0, 2.0], [12.0, 4.0], [11.0, 9.0], [2.0, 7.0]];
        let xs = quad.iter().map(|p| p[0]);
        let ys = quad.iter().map(|p| p[1]);
        let oracle = (
            xs.clone().fold(f64::MAX, f64::min),
            ys.clone().fold(f64::MAX, f64::min),
            xs.fold(f64::MIN, f64::max),
            ys.fold(f64::MIN, f64::max),
        );
        let b = RawRegion::Polygon(quad).to_box((32, 32)).unwrap();
        assert_eq!(
            (b.x_min as f64, b.y_min as f64, b.x_max as f64, b.y_max as f64),
            oracle
        );
    }

    #[test]
    fn region_outside_frame_is_rejected() {
        assert!(RawRegion::Box([40.0, 0.0, 50.0, 5.0]).to_box((32, 32)).is_err());
        let clipped = RawRegion::Box([-2.0, 3.0, 40.0, 5.0]).to_box((32, 32)).unwrap();
        assert_eq!(clipped, BoundingBox::new(0, 3, 31, 5));
    }

    #[test]
    fn empty_regions_give_zero_map() {
        let img = ImageTensor::from_fn(4, 4, |_, _, _| 0.7).unwrap();
        let tm = build_text_map(&img, &TextRegionSet::default()).unwrap();
        assert!(tm.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_cover_reproduces_image() {
        let img = ImageTensor::from_fn(5, 3, |r, c, ch| ((r + c + ch) % 7) as f32 / 7.0).unwrap();
        let set = TextRegionSet::new(vec![BoundingBox::full_frame(5, 3)]);
        assert_eq!(build_text_map(&img, &set).unwrap().tensor(), &img);
    }

    #[test]
    fn inner_square_keeps_exactly_four_pixels() {
        let img = ImageTensor::from_fn(4, 4, |_, _, _| 0.5).unwrap();
        let set = TextRegionSet::new(vec![BoundingBox::new(1, 1, 2, 2)]);
        let tm = build_text_map(&img, &set).unwrap();
        let mut kept = 0;
        for r in 0..4 {
            for c in 0..4 {
                let inside = (1..=2).contains(&r) && (1..=2).contains(&c);
                for ch in 0..3 {
                    let v = tm.get(r, c, ch);
                    assert_eq!(v, if inside { 0.5 } else { 0.0 });
                    kept += usize::from(v != 0.0);
                }
            }
        }
        assert_eq!(kept, 12);
        assert_eq!(tm.data().iter().filter(|&&v| v == 0.0).count(), 36);
    }

    #[test]
    fn working_resolution_rescale() {
        let det = StubTextDetector::new(vec![]);
        let img = LoadedImage {
            tensor: ImageTensor::zeros(32, 32),
            original_height: 64,
            original_width: 64,
            source: None,
        };
        assert!(detect_text_regions(&img, &det).unwrap().is_empty());
    }
}
