//! End-to-end saliency prediction: text detection, text map, network, resize.

use std::sync::Arc;

use crate::datamodel::{LoadedImage, SaliencyMap};
use crate::error::Result;
use crate::net::SaliencyModel;
use crate::textmap::{build_text_map, detect_text_regions, TextDetector, TextMap};

/// Anything that maps a loaded image to a saliency map at its original size.
pub trait SaliencyPredictor: Send + Sync {
    fn predict(&self, image: &LoadedImage) -> Result<SaliencyMap>;

    /// Resolution images should be loaded at for [`predict`](Self::predict).
    fn working_size(&self) -> (usize, usize);
}

/// The full model together with the text detector that feeds it.
#[derive(Clone)]
pub struct SaliencyPipeline {
    model: Arc<SaliencyModel>,
    detector: Arc<dyn TextDetector>,
}

impl SaliencyPipeline {
    pub fn new(model: Arc<SaliencyModel>, detector: Arc<dyn TextDetector>) -> Self {
        Self { model, detector }
    }

    pub fn model(&self) -> &SaliencyModel {
        &self.model
    }

    pub fn detector(&self) -> &dyn TextDetector {
        self.detector.as_ref()
    }

    /// Text map for `image` at the model's working resolution.
    pub fn text_map(&self, image: &LoadedImage) -> Result<TextMap> {
        let image = at_working_size(image, self.model.working_size());
        let regions = detect_text_regions(&image, self.detector.as_ref())?;
        build_text_map(&image.tensor, &regions)
    }
}

impl std::fmt::Debug for SaliencyPipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaliencyPipeline").field("model", &self.model).finish_non_exhaustive()
    }
}

impl SaliencyPredictor for SaliencyPipeline {
    fn predict(&self, image: &LoadedImage) -> Result<SaliencyMap> {
        predict_saliency(image, &self.model, self.detector.as_ref())
    }

    fn working_size(&self) -> (usize, usize) {
        self.model.working_size()
    }
}

/// Text map → twin encoders → transformers → fusion → decoder, then bilinear
/// upsampling to the original image size.
pub fn predict_saliency(image: &LoadedImage, model: &SaliencyModel, detector: &dyn TextDetector) -> Result<SaliencyMap> {
    let image = at_working_size(image, model.working_size());
    let regions = detect_text_regions(&image, detector)?;
    let text = build_text_map(&image.tensor, &regions)?;
    let grid = model.predict_grid(&image.tensor, text.tensor())?;
    let (oh, ow) = image.original_size();
    let mut full = grid.resized(oh, ow);
    for v in &mut full.data {
        *v = v.clamp(0.0, 1.0);
    }
    SaliencyMap::new(full)
}

fn at_working_size(image: &LoadedImage, (h, w): (usize, usize)) -> LoadedImage {
    if (image.tensor.height(), image.tensor.width()) == (h, w) {
        image.clone()
    } else {
        LoadedImage {
            tensor: image.tensor.resized(h, w),
            ..image.clone()
        }
    }
}
