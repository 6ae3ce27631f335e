/// Bilinear resampling of an interleaved `height × width × channels` buffer.
///
/// Uses half-pixel centers (`align_corners = false`): destination pixel `d`
/// samples source coordinate `(d + 0.5) · in / out − 0.5`, clamped to the
/// valid range. No antialiasing is applied when shrinking.
pub fn resize_bilinear<T>(
    src: &[T],
    height: usize,
    width: usize,
    channels: usize,
    out_height: usize,
    out_width: usize,
) -> Vec<T>
where
    T: Copy + Into<f64> + FromF64,
{
    debug_assert_eq!(src.len(), height * width * channels);
    if height == out_height && width == out_width {
        return src.to_vec();
    }
    let rows = axis_taps(height, out_height);
    let cols = axis_taps(width, out_width);
    let mut out = Vec::with_capacity(out_height * out_width * channels);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for c in 0..channels {
                let at = |y: usize, x: usize| -> f64 { src[(y * width + x) * channels + c].into() };
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(T::from_f64(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    out
}

/// Source taps `(lo, hi, weight_of_hi)` for every destination index.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub trait FromF64 {
    fn from_f64(v: f64) -> Self;
}

impl FromF64 for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl FromF64 for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_sizes_match() {
        let src: Vec<f32> = (0..12).map(|v| v as f32).collect();
        assert_eq!(resize_bilinear(&src, 2, 2, 3, 2, 2), src);
    }

    #[test]
    fn upsampling_a_constant_stays_constant() {
        let src = vec![0.25f64; 9];
        let out = resize_bilinear(&src, 3, 3, 1, 7, 5);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_pixel_row_doubles_with_quarter_weights() {
        // Half-pixel centers: outputs sit at source coords -0.25, 0.25, 0.75, 1.25.
        let out = resize_bilinear(&[0.0f64, 1.0], 1, 2, 1, 1, 4);
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }
}
