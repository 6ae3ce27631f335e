use std::path::PathBuf;

use crate::datamodel::resize::resize_bilinear;
use crate::error::{Error, Result};

/// Color channels of every [`ImageTensor`].
pub const CHANNELS: usize = 3;

/// Working-resolution image, row-major `(row, col, channel)`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image has a zero dimension"));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "image buffer has {} elements, expected {height}x{width}x{CHANNELS}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    /// Builds an image by evaluating `f(row, col, channel)` at every element.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..CHANNELS {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * CHANNELS + channel]
    }

    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: resize_bilinear(&self.data, self.height, self.width, CHANNELS, height, width),
        }
    }

    /// Channel-planar copy, `(channel, row, col)`.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * CHANNELS];
        for (i, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// An image at working resolution together with what is needed to map
/// results back onto the original file.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub tensor: ImageTensor,
    pub original_height: usize,
    pub original_width: usize,
    /// File the image was decoded from; external detectors read it directly.
    pub source: Option<PathBuf>,
}

impl LoadedImage {
    pub fn original_size(&self) -> (usize, usize) {
        (self.original_height, self.original_width)
    }
}

/// Dense single-channel map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("map has a zero dimension"));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "map buffer has {} elements, expected {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("map contains a non-finite value"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn resized(&self, height: usize, width: usize) -> Grid {
        Grid {
            height,
            width,
            data: resize_bilinear(&self.data, self.height, self.width, 1, height, width),
        }
    }
}

/// Predicted saliency map, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap(Grid);

impl SaliencyMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(Self(grid))
    }

    /// Rescales an arbitrary nonnegative map into `[0, 1]` by its maximum.
    pub fn from_unnormalized(grid: Grid) -> Result<Self> {
        let max = grid.data.iter().cloned().fold(0.0f64, f64::max);
        if grid.data.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("saliency map has negative values"));
        }
        if max == 0.0 {
            return Self::new(grid);
        }
        let data = grid.data.iter().map(|v| v / max).collect();
        Self::new(Grid { data, ..grid })
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    /// Bilinear resize; bilinear weights keep values inside `[0, 1]`.
    pub fn resized(&self, height: usize, width: usize) -> SaliencyMap {
        SaliencyMap(self.0.resized(height, width))
    }
}

impl std::ops::Deref for SaliencyMap {
    type Target = Grid;
    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Ground-truth attention density: nonnegative and not identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap(Grid);

impl DensityMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.data.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("density map has negative values"));
        }
        if grid.data.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate("density map is all zero".into()));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn resized(&self, height: usize, width: usize) -> DensityMap {
        DensityMap(self.0.resized(height, width))
    }
}

impl std::ops::Deref for DensityMap {
    type Target = Grid;
    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Binary eye-fixation map.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl FixationMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "fixation buffer has {} elements, expected {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("fixation map is not binary"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_points(height: usize, width: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut data = vec![0u8; height * width];
        for &(r, c) in points {
            if r >= height || c >= width {
                return Err(Error::invalid(format!("fixation ({r}, {c}) outside {height}x{width}")));
            }
            data[r * width + c] = 1;
        }
        Self::new(height, width, data)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_fixated(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Moves every fixation to the pixel containing its position in a
    /// `height × width` frame. Fixations landing on the same pixel merge.
    pub fn rescaled(&self, height: usize, width: usize) -> FixationMap {
        let mut data = vec![0u8; height * width];
        for r in 0..self.height {
            for c in 0..self.width {
                if self.is_fixated(r, c) {
                    let (rr, cc) = (r * height / self.height, c * width / self.width);
                    data[rr * width + cc] = 1;
                }
            }
        }
        FixationMap {
            height,
            width,
            data,
        }
    }
}
