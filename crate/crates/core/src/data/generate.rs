//! Synthetic stand-ins for the fundus target set, a shape-recognition source
//! set for teacher pretraining, and a mixed unlabeled pool.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ImageSample, LabeledSet, UnlabeledSet, MIN_SIDE};
use crate::error::{Error, Result};
use crate::rng::rng_for;

const TARGET_STREAM: u64 = 0x7461_7267;
const SOURCE_STREAM: u64 = 0x736f_7572;
const UNLABELED_STREAM: u64 = 0x756e_6c62;

/// Appearance of the fundus-like target images.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetStyle {
    /// Lesions added per class step: class `c` carries `c · blobs_per_class`.
    pub blobs_per_class: usize,
    /// Lesion radius in pixels.
    pub blob_radius: f64,
    /// Lesion peak brightness above the disc, as a range in [0, 1].
    pub blob_contrast: (f64, f64),
    /// Number of dark vessel strokes.
    pub vessels: usize,
    /// Standard deviation of additive pixel noise in 8-bit units.
    pub noise: f64,
}

impl Default for TargetStyle {
    fn default() -> Self {
        Self { blobs_per_class: 3, blob_radius: 1.8, blob_contrast: (0.55, 0.9), vessels: 3, noise: 3.0 }
    }
}

/// Ground-truth lesion placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub y: f64,
    pub x: f64,
}

/// Float RGB canvas in [0, 1], quantized on output.
struct Canvas {
    size: usize,
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(size: usize, fill: [f64; 3]) -> Self {
        Self { size, rgb: vec![fill; size * size] }
    }

    fn blend(&mut self, y: usize, x: usize, color: [f64; 3], alpha: f64) {
        let px = &mut self.rgb[y * self.size + x];
        for (p, c) in px.iter_mut().zip(color) {
            *p = *p * (1.0 - alpha) + c * alpha;
        }
    }

    /// Soft-edged disc of radius `r`.
    fn disc(&mut self, cy: f64, cx: f64, r: f64, color: [f64; 3], alpha: f64) {
        let (y0, y1) = self.span(cy, r + 1.0);
        let (x0, x1) = self.span(cx, r + 1.0);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                let cover = (r + 0.5 - d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    self.blend(y, x, color, alpha * cover);
                }
            }
        }
    }

    /// Radial falloff: the disc dims towards its rim and a faint halo fades
    /// into the background.
    fn illuminate(&mut self, cy: f64, cx: f64, radius: f64) {
        for y in 0..self.size {
            for x in 0..self.size {
                let d = (y as f64 + 0.5 - cy).hypot(x as f64 + 0.5 - cx) / radius;
                let px = &mut self.rgb[y * self.size + x];
                if d <= 1.0 {
                    let gain = 1.2 - 0.6 * d;
                    px.iter_mut().for_each(|v| *v = (*v * gain).min(1.0));
                } else {
                    let halo = 0.12 * (-(d - 1.0) * 2.5).exp();
                    px.iter_mut().for_each(|v| *v += halo);
                }
            }
        }
    }

    fn span(&self, c: f64, r: f64) -> (usize, usize) {
        let lo = (c - r).floor().max(0.0) as usize;
        let hi = ((c + r).ceil().max(0.0) as usize + 1).min(self.size);
        (lo.min(self.size), hi)
    }

    fn stroke(&mut self, from: (f64, f64), to: (f64, f64), width: f64, color: [f64; 3], alpha: f64) {
        let steps = ((to.0 - from.0).hypot(to.1 - from.1) * 2.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let y = from.0 + (to.0 - from.0) * t;
            let x = from.1 + (to.1 - from.1) * t;
            self.disc(y, x, width / 2.0, color, alpha * 0.5);
        }
    }

    fn finish(self, channels: usize, noise: f64, rng: &mut ChaCha8Rng, label: Option<usize>) -> ImageSample {
        let normal = Normal::new(0.0, noise.max(1e-9)).expect("finite noise");
        let n = self.size * self.size;
        let mut pixels = vec![0u8; channels * n];
        for (i, px) in self.rgb.iter().enumerate() {
            let values: [f64; 3] =
                if channels == 3 { *px } else { [0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2], 0.0, 0.0] };
            for c in 0..channels {
                let v = values[c] * 255.0 + if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                pixels[c * n + i] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        ImageSample::new(channels, self.size, self.size, pixels, label).expect("valid canvas")
    }
}

fn check_image_args(channels: usize, size: usize) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
    }
    if size < MIN_SIDE {
        return Err(Error::InvalidArgument(format!("image size {size} below {MIN_SIDE}")));
    }
    Ok(())
}

/// Dark background, orange fundus disc with vessels, `count` bright lesions.
fn fundus(size: usize, count: usize, style: &TargetStyle, rng: &mut ChaCha8Rng) -> (Canvas, Vec<Blob>) {
    let s = size as f64;
    let mut canvas = Canvas::new(size, [0.02, 0.02, 0.02]);
    let cy = s / 2.0 + rng.gen_range(-0.04..0.04) * s;
    let cx = s / 2.0 + rng.gen_range(-0.04..0.04) * s;
    let radius = s * rng.gen_range(0.42..0.47);
    let tone = rng.gen_range(0.85..1.1);
    canvas.disc(cy, cx, radius, [0.55 * tone, 0.25 * tone, 0.1 * tone], 1.0);
    canvas.illuminate(cy, cx, radius);
    // brighter optic disc off-center
    let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (oy, ox) = (cy + 0.5 * radius * ang.sin(), cx + 0.5 * radius * ang.cos());
    canvas.disc(oy, ox, radius * 0.16, [0.75, 0.5, 0.3], 0.5);
    for _ in 0..style.vessels {
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let len = radius * rng.gen_range(0.6..0.95);
        canvas.stroke((oy, ox), (oy + len * a.sin(), ox + len * a.cos()), 1.0, [0.25, 0.05, 0.03], 0.8);
    }

    let r = style.blob_radius;
    let min_gap = 2.0 * r + 2.5;
    let mut blobs: Vec<Blob> = Vec::with_capacity(count);
    let mut attempts = 0;
    while blobs.len() < count && attempts < 10_000 {
        attempts += 1;
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let d = radius * 0.78 * rng.gen::<f64>().sqrt();
        let b = Blob { y: cy + d * a.sin(), x: cx + d * a.cos() };
        if blobs.iter().all(|o| (o.y - b.y).hypot(o.x - b.x) >= min_gap) {
            blobs.push(b);
        }
    }
    for b in &blobs {
        let c = rng.gen_range(style.blob_contrast.0..=style.blob_contrast.1);
        canvas.disc(b.y, b.x, r, [1.0, 0.95, 0.55], c);
    }
    (canvas, blobs)
}

/// Fundus images; class `c` carries `c · blobs_per_class` lesions.
/// Labels cycle through the classes so the set is balanced.
pub fn gen_target_set(
    n: usize,
    num_classes: usize,
    channels: usize,
    size: usize,
    seed: u64,
    style: &TargetStyle,
) -> Result<LabeledSet> {
    Ok(gen_target_set_with_blobs(n, num_classes, channels, size, seed, style)?.0)
}

/// [`gen_target_set`] plus each sample's lesion coordinates.
pub fn gen_target_set_with_blobs(
    n: usize,
    num_classes: usize,
    channels: usize,
    size: usize,
    seed: u64,
    style: &TargetStyle,
) -> Result<(LabeledSet, Vec<Vec<Blob>>)> {
    check_image_args(channels, size)?;
    if num_classes == 0 || n < num_classes * 10 {
        return Err(Error::InvalidArgument(format!(
            "target set needs at least 10 images per class ({n} for {num_classes} classes)"
        )));
    }
    let mut samples = Vec::with_capacity(n);
    let mut all_blobs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(seed, &[TARGET_STREAM, i as u64]);
        let label = i % num_classes;
        let (canvas, blobs) = fundus(size, label * style.blobs_per_class, style, &mut rng);
        samples.push(canvas.finish(channels, style.noise, &mut rng, Some(label)));
        all_blobs.push(blobs);
    }
    Ok((LabeledSet::new(samples, num_classes)?, all_blobs))
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Square,
    Ring,
    Cross,
    HBar,
    VBar,
    Diamond,
    Dot,
    Corner,
}

const SHAPES: [Shape; 8] =
    [Shape::Square, Shape::Ring, Shape::Cross, Shape::HBar, Shape::VBar, Shape::Diamond, Shape::Dot, Shape::Corner];

fn draw_shape(canvas: &mut Canvas, shape: Shape, cy: f64, cx: f64, r: f64, color: [f64; 3]) {
    let size = canvas.size as isize;
    let ri = r.round() as isize;
    let (yc, xc) = (cy.round() as isize, cx.round() as isize);
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let on = match shape {
                Shape::Square => true,
                Shape::Ring => {
                    let d = ((dy * dy + dx * dx) as f64).sqrt();
                    (d - r + 0.5).abs() < 0.9
                }
                Shape::Cross => dy == 0 || dx == 0,
                Shape::HBar => dy.abs() <= ri / 3,
                Shape::VBar => dx.abs() <= ri / 3,
                Shape::Diamond => dy.abs() + dx.abs() <= ri,
                Shape::Dot => dy * dy + dx * dx <= (ri * ri) / 3,
                Shape::Corner => dy == -ri || dx == -ri,
            };
            let (y, x) = (yc + dy, xc + dx);
            if on && (0..size).contains(&y) && (0..size).contains(&x) {
                canvas.blend(y as usize, x as usize, color, 0.9);
            }
        }
    }
}

fn texture(size: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let base: [f64; 3] = [rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6)];
    let (gy, gx) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let (fy, fx, phase) = (rng.gen_range(0.1..0.8), rng.gen_range(0.1..0.8), rng.gen_range(0.0..6.3));
    let amp = rng.gen_range(0.0..0.15);
    let mut canvas = Canvas::new(size, base);
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let shade = gy * (y as f64 / s - 0.5)
                + gx * (x as f64 / s - 0.5)
                + amp * (fy * y as f64 + fx * x as f64 + phase).sin();
            let px = &mut canvas.rgb[y * size + x];
            for v in px.iter_mut() {
                *v = (*v + shade).clamp(0.0, 1.0);
            }
        }
    }
    canvas
}

fn shapes_image(size: usize, shape: Shape, rng: &mut ChaCha8Rng) -> Canvas {
    let mut canvas = texture(size, rng);
    let count = rng.gen_range(2..=5);
    let s = size as f64;
    for _ in 0..count {
        let r = rng.gen_range(0.08..0.16) * s;
        let (cy, cx) = (rng.gen_range(r..s - r), rng.gen_range(r..s - r));
        let color = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.3..1.0)];
        draw_shape(&mut canvas, shape, cy, cx, r, color);
    }
    canvas
}

/// Textured backgrounds carrying 2–5 copies of one shape; the shape kind
/// is the class. Plays the role of a large generic pretraining corpus.
pub fn gen_source_set(n: usize, num_classes: usize, channels: usize, size: usize, seed: u64) -> Result<LabeledSet> {
    check_image_args(channels, size)?;
    if num_classes == 0 || num_classes > SHAPES.len() {
        return Err(Error::InvalidArgument(format!("source classes must be in 1..={}", SHAPES.len())));
    }
    let samples = (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, &[SOURCE_STREAM, i as u64]);
            let label = i % num_classes;
            shapes_image(size, SHAPES[label], &mut rng).finish(channels, 6.0, &mut rng, Some(label))
        })
        .collect();
    LabeledSet::new(samples, num_classes)
}

/// Unlabeled pool mixing fundus-like images with an arbitrary lesion count
/// (half), shape scenes (a quarter) and bare textures/gradients.
pub fn gen_unlabeled_set(
    m: usize,
    channels: usize,
    size: usize,
    seed: u64,
    style: &TargetStyle,
) -> Result<UnlabeledSet> {
    check_image_args(channels, size)?;
    let max_blobs = 3 * style.blobs_per_class.max(1);
    let samples = (0..m)
        .map(|i| {
            let mut rng = rng_for(seed, &[UNLABELED_STREAM, i as u64]);
            let pick: f64 = rng.gen();
            let canvas = if pick < 0.5 {
                let count = rng.gen_range(0..=max_blobs);
                fundus(size, count, style, &mut rng).0
            } else if pick < 0.75 {
                let shape = SHAPES[rng.gen_range(0..SHAPES.len())];
                shapes_image(size, shape, &mut rng)
            } else {
                texture(size, &mut rng)
            };
            canvas.finish(channels, style.noise, &mut rng, None)
        })
        .collect();
    UnlabeledSet::new(samples)
}
