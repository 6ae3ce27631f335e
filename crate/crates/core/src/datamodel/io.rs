use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::datamodel::maps::{DensityMap, FixationMap, Grid, ImageTensor, LoadedImage, SaliencyMap};
use crate::error::{Error, Result};

/// Spatial granularity of the saliency network's deepest feature map.
pub const SIZE_MULTIPLE: usize = 32;

pub fn check_working_size(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % SIZE_MULTIPLE != 0 || width % SIZE_MULTIPLE != 0 {
        return Err(Error::invalid(format!(
            "working size {height}x{width} must be nonzero multiples of {SIZE_MULTIPLE}"
        )));
    }
    Ok(())
}

fn decode_file(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes, path)
}

fn decode_bytes(bytes: &[u8], origin: &Path) -> Result<DynamicImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Decode {
            path: origin.to_path_buf(),
            message: "zero-dimension image".into(),
        });
    }
    Ok(img)
}

fn to_loaded(img: DynamicImage, target: (usize, usize), source: Option<PathBuf>) -> Result<LoadedImage> {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data: Vec<f32> = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    let full = ImageTensor::new(h, w, data)?;
    let mut tensor = full.resized(target.0, target.1);
    // Interpolation can overshoot by an ulp.
    for v in tensor.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(LoadedImage {
        tensor,
        original_height: h,
        original_width: w,
        source,
    })
}

/// Decodes a PNG/JPEG file and resizes it bilinearly to `target = (height, width)`.
pub fn load_image(path: impl AsRef<Path>, target: (usize, usize)) -> Result<LoadedImage> {
    let path = path.as_ref();
    check_working_size(target.0, target.1)?;
    let img = decode_file(path)?;
    to_loaded(img, target, Some(path.to_path_buf()))
}

/// Like [`load_image`] for an in-memory payload.
pub fn load_image_bytes(bytes: &[u8], target: (usize, usize), source: Option<PathBuf>) -> Result<LoadedImage> {
    check_working_size(target.0, target.1)?;
    let origin = source.clone().unwrap_or_else(|| PathBuf::from("<memory>"));
    let img = decode_bytes(bytes, &origin)?;
    to_loaded(img, target, source)
}

/// Grayscale density map scaled to `[0, 1]` by the file's full-scale value.
pub fn load_density_map(path: impl AsRef<Path>) -> Result<DensityMap> {
    let path = path.as_ref();
    let img = decode_file(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img.color() {
        ColorType::L16 | ColorType::La16 => img.to_luma16().as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        _ => img.to_luma8().as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    };
    DensityMap::new(Grid::new(h, w, data)?)
}

/// Binary fixation map; any nonzero level counts as a fixation.
pub fn load_fixation_map(path: impl AsRef<Path>) -> Result<FixationMap> {
    let path = path.as_ref();
    let img = decode_file(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let levels: Vec<u16> = match img.color() {
        ColorType::L8 => img.to_luma8().into_raw().into_iter().map(u16::from).collect(),
        ColorType::L16 => img.to_luma16().into_raw(),
        other => {
            return Err(Error::invalid(format!(
                "fixation map {} must be single-channel grayscale, found {other:?}",
                path.display()
            )))
        }
    };
    let mut distinct: Vec<u16> = levels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() > 2 || (distinct.len() == 2 && distinct[0] != 0) {
        return Err(Error::invalid(format!(
            "fixation map {} is not binary ({} gray levels)",
            path.display(),
            distinct.len()
        )));
    }
    let map = FixationMap::new(h, w, levels.iter().map(|&v| u8::from(v != 0)).collect())?;
    if map.count() == 0 {
        return Err(Error::Degenerate(format!(
            "fixation map {} has no fixations (NSS undefined)",
            path.display()
        )));
    }
    Ok(map)
}

fn quantize16(grid: &Grid) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let raw: Vec<u16> = grid
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    ImageBuffer::from_raw(grid.width as u32, grid.height as u32, raw).expect("buffer matches dimensions")
}

/// Encodes a saliency map as 16-bit grayscale PNG bytes.
pub fn encode_saliency_png(map: &SaliencyMap) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    quantize16(map.grid())
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn save_saliency_png(path: impl AsRef<Path>, map: &SaliencyMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_saliency_png(map)).map_err(|e| Error::io(path, e))
}

/// Reads a saliency map written by [`save_saliency_png`] (8-bit files are accepted too).
pub fn load_saliency_png(path: impl AsRef<Path>) -> Result<SaliencyMap> {
    let path = path.as_ref();
    let img = decode_file(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {
            img.to_luma8().as_raw().iter().map(|&v| v as f64 / 255.0).collect()
        }
        _ => img.to_luma16().as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
    };
    SaliencyMap::new(Grid::new(h, w, data)?)
}

/// Writes an `ImageTensor` as an 8-bit RGB PNG.
pub fn save_image_png(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = image.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads only the header to obtain `(height, width)`.
pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if w == 0 || h == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: "zero-dimension image".into(),
        });
    }
    Ok((h as usize, w as usize))
}
