//! Saliency training sets on disk:
//!
//! ```text
//! dir/images/<name>.{png,jpg,jpeg}
//! dir/maps/<name>.png          continuous density map
//! dir/fixations/<name>.png     binary fixation map (optional directory)
//! ```

use std::path::{Path, PathBuf};

use super::{EvalItem, TrainSample};
use crate::datamodel::{load_density_map, load_fixation_map, load_image};
use crate::error::{Error, Result};
use crate::textmap::{build_text_map, detect_text_regions, TextDetector};

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyRecord {
    pub name: String,
    pub image: PathBuf,
    pub density: PathBuf,
    pub fixations: Option<PathBuf>,
}

fn stem(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}

/// Pairs every image with its density map (and fixation map when present), by file stem.
pub fn scan_saliency_dir(dir: impl AsRef<Path>) -> Result<Vec<SaliencyRecord>> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no images in {}", images.display())));
    }
    paths
        .into_iter()
        .map(|image| {
            let name = stem(&image).unwrap_or_default();
            let density = dir.join("maps").join(format!("{name}.png"));
            if !density.is_file() {
                return Err(Error::invalid(format!(
                    "missing density map {} for {}",
                    density.display(),
                    image.display()
                )));
            }
            let fixations = Some(dir.join("fixations").join(format!("{name}.png"))).filter(|p| p.is_file());
            Ok(SaliencyRecord {
                name,
                image,
                density,
                fixations,
            })
        })
        .collect()
}

/// Loads and resizes everything to the working resolution and builds text maps.
pub fn load_training_samples(
    dir: impl AsRef<Path>,
    working_size: (usize, usize),
    detector: &dyn TextDetector,
) -> Result<Vec<TrainSample>> {
    let (h, w) = working_size;
    scan_saliency_dir(dir)?
        .into_iter()
        .map(|rec| {
            let image = load_image(&rec.image, working_size)?;
            let regions = detect_text_regions(&image, detector)?;
            let text_map = build_text_map(&image.tensor, &regions)?.into_tensor();
            let fixations = match &rec.fixations {
                Some(p) => Some(load_fixation_map(p)?.rescaled(h, w)),
                None => None,
            };
            Ok(TrainSample {
                name: rec.name,
                image: image.tensor,
                text_map,
                density: load_density_map(&rec.density)?.resized(h, w),
                fixations,
            })
        })
        .collect()
}

/// Ground truth stays at its stored resolution; predictions are compared there.
pub fn load_eval_items(dir: impl AsRef<Path>, working_size: (usize, usize)) -> Result<Vec<EvalItem>> {
    scan_saliency_dir(dir)?
        .into_iter()
        .map(|rec| {
            Ok(EvalItem {
                image: load_image(&rec.image, working_size)?,
                density: load_density_map(&rec.density)?,
                fixations: rec.fixations.as_deref().map(load_fixation_map).transpose()?,
                name: rec.name,
            })
        })
        .collect()
}
