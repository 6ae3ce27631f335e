//! Domain types, file formats and dataset ingestion.

pub mod boxes;
pub mod dataset;
pub mod io;
pub mod maps;
pub mod resize;

pub use boxes::{load_boxes, save_boxes, BoundingBox, BoundingBoxSet};
pub use dataset::{ingest_hypothesis_dataset, HypothesisDataset, Sample};
pub use io::{
    encode_saliency_png, image_dimensions, load_density_map, load_fixation_map, load_image, load_image_bytes,
    load_saliency_png, save_image_png, save_saliency_png, SIZE_MULTIPLE,
};
pub use maps::{DensityMap, FixationMap, Grid, ImageTensor, LoadedImage, SaliencyMap, CHANNELS};

/// Default working resolution `(height, width)`.
pub const DEFAULT_RESOLUTION: (usize, usize) = (288, 384);
