//! Network descriptions for the model zoo: Simple10 and width-divided VGG-16.

mod io;
mod params;

use std::fmt;
use std::str::FromStr;

use crate::checksum::crc64;
use crate::error::{Error, Result};

pub use io::{load_parameters, read_parameters, save_parameters, write_parameters};
pub use params::{forward, forward_on_tape, init_parameters, LayerParams, Parameters};

/// Filter counts of the ten Simple10 convolutions at unit width.
pub const SIMPLE10_FILTERS: [usize; 10] = [20, 20, 30, 30, 40, 40, 160, 160, 250, 250];

/// VGG-16 convolution stack, grouped by pooling block.
pub const VGG16_BLOCKS: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];

/// Units of the hidden dense layer before width scaling.
pub const HEAD_HIDDEN: usize = 128;
const HEAD_HIDDEN_MIN: usize = 32;

pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// 3×3 convolution, stride 1, padding 1.
    Conv {
        out_channels: usize,
    },
    Relu,
    /// 2×2 max pooling, stride 2.
    MaxPool,
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Dense { .. })
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv { out_channels } => write!(f, "conv{out_channels}"),
            Layer::Relu => f.write_str("relu"),
            Layer::MaxPool => f.write_str("pool"),
            Layer::Flatten => f.write_str("flatten"),
            Layer::Dense { out_features } => write!(f, "dense{out_features}"),
            Layer::Softmax => f.write_str("softmax"),
        }
    }
}

/// Shape of one sample between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Image { channels: usize, height: usize, width: usize },
    Vector(usize),
}

/// A validated, immutable layer stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layers: Vec<Layer>,
    input_shape: [usize; 3],
    num_classes: usize,
}

impl ModelSpec {
    /// Validates the stack by propagating shapes through every layer.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        let spec = Self { layers, input_shape, num_classes };
        let shapes = spec.activations()?;
        match (spec.layers.as_slice(), shapes.last()) {
            ([.., Layer::Dense { out_features }, Layer::Softmax], Some(Activation::Vector(n)))
                if *out_features == num_classes && *n == num_classes => {}
            _ => return Err(Error::shape(format!("model must end with dense{num_classes} followed by softmax"))),
        }
        Ok(spec)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Output counts of the convolution layers, in order.
    pub fn conv_filters(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { out_channels } => Some(*out_channels),
                _ => None,
            })
            .collect()
    }

    /// Per-sample shape after each layer (index i is the output of layer i).
    pub fn activations(&self) -> Result<Vec<Activation>> {
        let [channels, height, width] = self.input_shape;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!("empty input shape {:?}", self.input_shape)));
        }
        let mut cur = Activation::Image { channels, height, width };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (Layer::Conv { out_channels }, Activation::Image { height, width, .. }) if out_channels > 0 => {
                    // 3×3, pad 1, stride 1 keeps the plane size
                    Activation::Image { channels: out_channels, height, width }
                }
                (Layer::MaxPool, Activation::Image { channels, height, width }) => {
                    if height < 2 || width < 2 {
                        return Err(Error::shape(format!(
                            "layer {i}: cannot pool a {height}×{width} plane; input too small for this many pooling stages"
                        )));
                    }
                    Activation::Image { channels, height: height / 2, width: width / 2 }
                }
                (Layer::Relu, a) => a,
                (Layer::Flatten, Activation::Image { channels, height, width }) => {
                    Activation::Vector(channels * height * width)
                }
                (Layer::Dense { out_features }, Activation::Vector(_)) if out_features > 0 => {
                    Activation::Vector(out_features)
                }
                (Layer::Softmax, Activation::Vector(n)) => Activation::Vector(n),
                (layer, a) => return Err(Error::shape(format!("layer {i} ({layer}) cannot follow {a:?}"))),
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Weight and bias shapes of every parametric layer.
    pub fn param_shapes(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut prev = Activation::Image {
            channels: self.input_shape[0],
            height: self.input_shape[1],
            width: self.input_shape[2],
        };
        let acts = self.activations().expect("validated at construction");
        let mut shapes = Vec::new();
        for (layer, act) in self.layers.iter().zip(acts) {
            match (layer, prev) {
                (Layer::Conv { out_channels }, Activation::Image { channels, .. }) => {
                    shapes.push((vec![*out_channels, channels, KERNEL, KERNEL], vec![*out_channels]));
                }
                (Layer::Dense { out_features }, Activation::Vector(n)) => {
                    shapes.push((vec![n, *out_features], vec![*out_features]));
                }
                _ => {}
            }
            prev = act;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>()).sum()
    }

    /// Same stack with the classifier head resized to `num_classes`.
    pub fn with_num_classes(&self, num_classes: usize) -> Result<Self> {
        let mut layers = self.layers.clone();
        let n = layers.len();
        if n >= 2 {
            if let Layer::Dense { out_features } = &mut layers[n - 2] {
                *out_features = num_classes;
            }
        }
        Self::new(self.input_shape, layers, num_classes)
    }

    /// Canonical text form, e.g. `in=3x32x32;conv2;relu;...;classes=3`.
    pub fn describe(&self) -> String {
        let [c, h, w] = self.input_shape;
        let mut s = format!("in={c}x{h}x{w}");
        for l in &self.layers {
            s.push(';');
            s.push_str(&l.to_string());
        }
        s.push_str(&format!(";classes={}", self.num_classes));
        s
    }

    pub fn spec_hash(&self) -> u64 {
        crc64(self.describe().as_bytes())
    }
}

/// Exact positive rational multiplier for filter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthScale {
    num: u32,
    den: u32,
}

impl WidthScale {
    pub const ONE: WidthScale = WidthScale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidArgument(format!("width scale {num}/{den} must be positive")));
        }
        Ok(Self { num, den })
    }

    /// `ceil(count · num / den)`.
    pub fn apply(&self, count: usize) -> usize {
        (count * self.num as usize).div_ceil(self.den as usize)
    }
}

impl fmt::Display for WidthScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for WidthScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("width scale {s:?} is not a positive ratio like 1/10"));
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let num = n.trim().parse().map_err(|_| bad())?;
        let den = d.trim().parse().map_err(|_| bad())?;
        Self::new(num, den).map_err(|_| bad())
    }
}

fn head(layers: &mut Vec<Layer>, hidden: usize, num_classes: usize) {
    layers.extend([
        Layer::Flatten,
        Layer::Dense { out_features: hidden.max(HEAD_HIDDEN_MIN) },
        Layer::Relu,
        Layer::Dense { out_features: num_classes },
        Layer::Softmax,
    ]);
}

/// Ten 3×3 conv+relu layers with a max pool after every second one, then a
/// hidden dense layer and the class head.
pub fn build_simple10(input_shape: [usize; 3], num_classes: usize, width: WidthScale) -> Result<ModelSpec> {
    let mut layers = Vec::new();
    for (i, &filters) in SIMPLE10_FILTERS.iter().enumerate() {
        layers.push(Layer::Conv { out_channels: width.apply(filters) });
        layers.push(Layer::Relu);
        if i % 2 == 1 {
            layers.push(Layer::MaxPool);
        }
    }
    head(&mut layers, width.apply(HEAD_HIDDEN), num_classes);
    ModelSpec::new(input_shape, layers, num_classes)
}

/// VGG-16 with every filter count integer-divided by `divisor` (minimum 1).
pub fn build_vgg16(divisor: usize, input_shape: [usize; 3], num_classes: usize) -> Result<ModelSpec> {
    if divisor == 0 {
        return Err(Error::InvalidArgument("VGG divisor must be positive".into()));
    }
    let mut layers = Vec::new();
    for block in VGG16_BLOCKS {
        for &filters in block {
            layers.push(Layer::Conv { out_channels: (filters / divisor).max(1) });
            layers.push(Layer::Relu);
        }
        layers.push(Layer::MaxPool);
    }
    head(&mut layers, HEAD_HIDDEN / divisor, num_classes);
    ModelSpec::new(input_shape, layers, num_classes)
}

/// Architecture selector used by configs: `simple10:<scale>` or `vgg16:<divisor>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Simple10(WidthScale),
    Vgg16(usize),
}

impl Arch {
    pub fn build(&self, input_shape: [usize; 3], num_classes: usize) -> Result<ModelSpec> {
        match *self {
            Arch::Simple10(w) => build_simple10(input_shape, num_classes, w),
            Arch::Vgg16(d) => build_vgg16(d, input_shape, num_classes),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Simple10(w) => write!(f, "simple10:{w}"),
            Arch::Vgg16(d) => write!(f, "vgg16:{d}"),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, "1"));
        match name.trim() {
            "simple10" => Ok(Arch::Simple10(arg.parse()?)),
            "vgg16" | "vgg" => {
                let d = arg
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| Error::InvalidArgument(format!("bad VGG divisor in {s:?}")))?;
                Ok(Arch::Vgg16(d))
            }
            _ => Err(Error::InvalidArgument(format!("unknown architecture {s:?}"))),
        }
    }
}
