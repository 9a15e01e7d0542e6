//! Images, labeled/unlabeled sets, preprocessing, synthetic generators,
//! fold plans and the `KDDS` dataset file format.

mod equalize;
mod generate;
mod io;
mod kfold;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use equalize::{augment, equalize_levels, local_hist_eq, preprocess};
pub use generate::{gen_source_set, gen_target_set, gen_target_set_with_blobs, gen_unlabeled_set, Blob, TargetStyle};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, Dataset};
pub use kfold::{kfold, FoldPlan};

pub const MIN_SIDE: usize = 16;

/// A `C×H×W` 8-bit image with an optional class label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageSample {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    pub label: Option<usize>,
}

impl ImageSample {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<u8>, label: Option<usize>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("images need 1 or 3 channels, got {channels}")));
        }
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::shape(format!("image {height}×{width} is smaller than {MIN_SIDE}×{MIN_SIDE}")));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{channels}×{height}×{width} image needs {} bytes, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        Ok(Self { channels, height, width, pixels, label })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> u8 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self { pixels, ..self.clone() }
    }

    /// Mirror top-to-bottom (reverses row order).
    pub fn flip_rows(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.pixels.len());
        for plane in self.pixels.chunks_exact(h * w) {
            for row in plane.chunks_exact(w).rev() {
                out.extend_from_slice(row);
            }
        }
        self.with_pixels(out)
    }

    /// Mirror left-to-right (reverses column order).
    pub fn flip_cols(&self) -> Self {
        let mut out = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(self.width) {
            out.extend(row.iter().rev());
        }
        self.with_pixels(out)
    }
}

/// Equalized pixels are close to uniform on `0..=255`; this maps them to
/// zero mean and unit variance.
const PIXEL_CENTER: f64 = 127.5;
const PIXEL_SCALE: f64 = 73.6;

/// Scales pixels to zero-centered, unit-variance floats and stacks them into
/// an `N×C×H×W` tensor.
pub fn to_batch<'a>(samples: impl IntoIterator<Item = &'a ImageSample>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut shape: Option<[usize; 3]> = None;
    let mut n = 0;
    for s in samples {
        match shape {
            None => shape = Some(s.shape()),
            Some(sh) if sh != s.shape() => {
                return Err(Error::shape(format!("mixed image shapes {sh:?} and {:?}", s.shape())))
            }
            _ => {}
        }
        data.extend(s.pixels.iter().map(|&p| (f64::from(p) - PIXEL_CENTER) / PIXEL_SCALE));
        n += 1;
    }
    let [c, h, w] = shape.ok_or(Error::Empty("batch"))?;
    Tensor::new([n, c, h, w], data)
}

/// Images with ground-truth labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSet {
    samples: Vec<ImageSample>,
    num_classes: usize,
}

impl LabeledSet {
    pub fn new(samples: Vec<ImageSample>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("labeled set needs at least one class".into()));
        }
        check_uniform(&samples)?;
        for s in &samples {
            match s.label {
                Some(l) if l < num_classes => {}
                Some(l) => return Err(Error::LabelOutOfRange { label: l, num_classes }),
                None => return Err(Error::InvalidArgument("labeled set contains an unlabeled image".into())),
            }
        }
        Ok(Self { samples, num_classes })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.expect("checked at construction")).collect()
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().map(ImageSample::shape)
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self { samples: indices.iter().map(|&i| self.samples[i].clone()).collect(), num_classes: self.num_classes }
    }

    pub fn map(&self, f: impl Fn(&ImageSample) -> ImageSample) -> Self {
        Self { samples: self.samples.iter().map(f).collect(), num_classes: self.num_classes }
    }

    /// Four-way flip augmentation; returns the set and each output's source index.
    pub fn augmented(&self, tile: usize) -> Result<(Self, Vec<usize>)> {
        let mut samples = Vec::with_capacity(self.samples.len() * 4);
        let mut origin = Vec::with_capacity(self.samples.len() * 4);
        for (i, s) in self.samples.iter().enumerate() {
            samples.extend(augment(s, tile)?);
            origin.extend([i; 4]);
        }
        Ok((Self { samples, num_classes: self.num_classes }, origin))
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        to_batch(&self.samples)
    }
}

/// Images that must not carry labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledSet {
    samples: Vec<ImageSample>,
}

impl UnlabeledSet {
    pub fn new(samples: Vec<ImageSample>) -> Result<Self> {
        check_uniform(&samples)?;
        if samples.iter().any(|s| s.label.is_some()) {
            return Err(Error::InvalidArgument("unlabeled set contains a labeled image".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().map(ImageSample::shape)
    }

    pub fn map(&self, f: impl Fn(&ImageSample) -> ImageSample) -> Self {
        Self { samples: self.samples.iter().map(f).collect() }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        to_batch(&self.samples)
    }
}

fn check_uniform(samples: &[ImageSample]) -> Result<()> {
    if let Some(first) = samples.first() {
        if let Some(odd) = samples.iter().find(|s| s.shape() != first.shape()) {
            return Err(Error::shape(format!("mixed image shapes {:?} and {:?}", first.shape(), odd.shape())));
        }
    }
    Ok(())
}
