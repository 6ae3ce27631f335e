//! Hypothesis datasets on disk:
//!
//! ```text
//! root/<hypothesis>/<condition>/<image>.png
//! root/<hypothesis>/<condition>/<image>.boxes.json
//! ```
//!
//! The box file may be named after the image stem (`logo.boxes.json`) or the
//! full file name (`logo.png.boxes.json`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::datamodel::boxes::{load_boxes, BoundingBoxSet};
use crate::datamodel::io::image_dimensions;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// One annotated image of a hypothesis condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_path: PathBuf,
    pub height: usize,
    pub width: usize,
    pub boxes: BoundingBoxSet,
}

/// hypothesis → condition → samples, in lexicographic order at both levels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HypothesisDataset {
    pub hypotheses: BTreeMap<String, BTreeMap<String, Vec<Sample>>>,
}

impl HypothesisDataset {
    pub fn sample_count(&self) -> usize {
        self.hypotheses
            .values()
            .flat_map(|conds| conds.values())
            .map(Vec::len)
            .sum()
    }

    pub fn condition_count(&self) -> usize {
        self.hypotheses.values().map(BTreeMap::len).sum()
    }

    /// `(hypothesis, condition, samples)` triples in dataset order.
    pub fn conditions(&self) -> impl Iterator<Item = (&str, &str, &[Sample])> {
        self.hypotheses.iter().flat_map(|(h, conds)| {
            conds
                .iter()
                .map(move |(c, samples)| (h.as_str(), c.as_str(), samples.as_slice()))
        })
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.retain(|p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| !n.starts_with('.'))
    });
    entries.sort();
    Ok(entries)
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Locates the annotation file belonging to `image`.
pub fn box_file_for(image: &Path) -> Option<PathBuf> {
    let stem = image.file_stem()?.to_string_lossy().into_owned();
    let by_stem = image.with_file_name(format!("{stem}.boxes.json"));
    if by_stem.is_file() {
        return Some(by_stem);
    }
    let by_name = image.with_file_name(format!("{}.boxes.json", name_of(image)));
    by_name.is_file().then_some(by_name)
}

fn ingest_condition(dir: &Path) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for path in sorted_entries(dir)? {
        if !is_image(&path) {
            continue;
        }
        let box_path = box_file_for(&path).ok_or_else(|| {
            Error::invalid(format!("missing box annotation for {}", path.display()))
        })?;
        let (height, width) = image_dimensions(&path)?;
        let boxes = load_boxes(&box_path, Some((height, width))).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::invalid(format!("{}: {msg}", box_path.display())),
            other => other,
        })?;
        samples.push(Sample {
            image_path: path,
            height,
            width,
            boxes,
        });
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("condition directory {} has no images", dir.display())));
    }
    Ok(samples)
}

/// Walks `root` and validates every (image, boxes) pair.
pub fn ingest_hypothesis_dataset(root: impl AsRef<Path>) -> Result<HypothesisDataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut dataset = HypothesisDataset::default();
    for hyp_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let mut conditions = BTreeMap::new();
        for cond_dir in sorted_entries(&hyp_dir)?.into_iter().filter(|p| p.is_dir()) {
            conditions.insert(name_of(&cond_dir), ingest_condition(&cond_dir)?);
        }
        if conditions.is_empty() {
            return Err(Error::invalid(format!(
                "hypothesis directory {} has no condition directories",
                hyp_dir.display()
            )));
        }
        dataset.hypotheses.insert(name_of(&hyp_dir), conditions);
    }
    if dataset.hypotheses.is_empty() {
        return Err(Error::invalid(format!("dataset {} has no hypotheses", root.display())));
    }
    Ok(dataset)
}
