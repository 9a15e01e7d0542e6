use super::ImageSample;
use crate::error::{Error, Result};

/// Histogram-equalizes a set of values drawn from `0..levels`:
/// `v ↦ round((cdf(v) − cdf_min) / (count − cdf_min) · (levels − 1))`.
///
/// A flat input (every value equal) is returned unchanged.
pub fn equalize_levels(values: &[u8], levels: usize) -> Vec<u8> {
    assert!((2..=256).contains(&levels));
    let mut hist = vec![0usize; levels];
    for &v in values {
        hist[v as usize] += 1;
    }
    let count = values.len();
    let mut cdf = hist;
    let mut acc = 0;
    for c in cdf.iter_mut() {
        acc += *c;
        *c = acc;
    }
    let cdf_min = values.iter().map(|&v| cdf[v as usize]).min().unwrap_or(0);
    if count == cdf_min {
        return values.to_vec();
    }
    let denom = (count - cdf_min) as f64;
    let top = (levels - 1) as f64;
    values.iter().map(|&v| (((cdf[v as usize] - cdf_min) as f64 / denom) * top).round() as u8).collect()
}

/// Tile-wise histogram equalization applied to each channel separately.
/// Tiles are `tile×tile` from the top-left corner; edge tiles may be smaller.
pub fn local_hist_eq(image: &ImageSample, tile: usize) -> Result<ImageSample> {
    if tile < 2 {
        return Err(Error::InvalidArgument(format!("equalization tile must be at least 2, got {tile}")));
    }
    let [channels, h, w] = image.shape();
    let mut out = image.pixels().to_vec();
    let mut buf = Vec::with_capacity(tile * tile);
    for c in 0..channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ty in (0..h).step_by(tile) {
            for tx in (0..w).step_by(tile) {
                let (y1, x1) = ((ty + tile).min(h), (tx + tile).min(w));
                buf.clear();
                for y in ty..y1 {
                    buf.extend_from_slice(&plane[y * w + tx..y * w + x1]);
                }
                let eq = equalize_levels(&buf, 256);
                let mut it = eq.into_iter();
                for y in ty..y1 {
                    for px in &mut plane[y * w + tx..y * w + x1] {
                        *px = it.next().expect("same length");
                    }
                }
            }
        }
    }
    Ok(image.with_pixels(out))
}

/// Test-time preprocessing: equalization only.
pub fn preprocess(image: &ImageSample, tile: usize) -> Result<ImageSample> {
    local_hist_eq(image, tile)
}

/// Equalized image plus its row-flipped, column-flipped and doubly flipped
/// copies. Labels are carried over.
pub fn augment(image: &ImageSample, tile: usize) -> Result<[ImageSample; 4]> {
    let eq = local_hist_eq(image, tile)?;
    let rows = eq.flip_rows();
    let cols = eq.flip_cols();
    let both = rows.flip_cols();
    Ok([eq, rows, cols, both])
}
