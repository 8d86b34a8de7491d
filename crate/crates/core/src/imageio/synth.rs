use crate::rng::{index, seeded, uniform, Prng};
use crate::scalar::Real;

use super::types::{BinaryMask, GTBox, Image, PairedSample};
use super::ImageError;

/// Shape vocabulary for synthetic scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
}

impl ShapeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rectangle" => Some(ShapeKind::Rectangle),
            "ellipse" => Some(ShapeKind::Ellipse),
            "triangle" => Some(ShapeKind::Triangle),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Triangle => "triangle",
        }
    }
}

/// Parameters for [`gen_synthetic_scene`].
///
/// Each object draws a class id uniformly from `0..class_count` and renders
/// as `shapes[class_id % shapes.len()]`, so with one shape per class the
/// class is visually identifiable.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<ShapeKind>,
    pub class_count: usize,
}

impl Default for SceneConfig {
    /// 64x64 scenes with 1-3 objects drawn from three shape classes.
    fn default() -> Self {
        SceneConfig {
            image_size: 64,
            min_objects: 1,
            max_objects: 3,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Triangle],
            class_count: 3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ImageError> {
        if self.image_size < 16 {
            return Err(ImageError::Config(format!(
                "image_size {} is below the minimum of 16",
                self.image_size
            )));
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return Err(ImageError::Config(format!(
                "object count range [{}, {}] is empty",
                self.min_objects, self.max_objects
            )));
        }
        if self.shapes.is_empty() {
            return Err(ImageError::Config("no shape kinds configured".into()));
        }
        if self.class_count == 0 {
            return Err(ImageError::Config("class_count must be positive".into()));
        }
        Ok(())
    }
}

const NOISE_CELL: usize = 8;
const NOISE_AMPLITUDE: f64 = 0.1;
const MIN_SHAPE_PIXELS: usize = 12;
const MAX_BOX_OVERLAP: f64 = 0.3;
const PLACEMENT_ATTEMPTS: usize = 200;

/// Renders one scene: filled shapes over low-amplitude value noise, the
/// exact foreground mask, and tight per-shape boxes. Pure in `(seed, config)`.
pub fn gen_synthetic_scene<T: Real>(
    seed: u64,
    config: &SceneConfig,
) -> Result<PairedSample<T>, ImageError> {
    config.validate()?;
    let s = config.image_size;
    let mut rng = seeded(seed);

    let base = [
        uniform(&mut rng, 0.15, 0.85),
        uniform(&mut rng, 0.15, 0.85),
        uniform(&mut rng, 0.15, 0.85),
    ];
    let mut pixels = vec![0.0f64; s * s * 3];
    render_background(&mut pixels, s, base, &mut rng);

    let mut mask = BinaryMask::zeros(s, s);
    let mut boxes: Vec<GTBox> = Vec::new();
    let n_objects = config.min_objects + index(&mut rng, config.max_objects - config.min_objects + 1);

    let mut scratch = vec![false; s * s];
    for _ in 0..n_objects {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let class_id = index(&mut rng, config.class_count);
            let kind = config.shapes[class_id % config.shapes.len()];
            let color = sample_object_color(&mut rng, base);
            scratch.iter_mut().for_each(|b| *b = false);
            if !rasterize(kind, s, &mut rng, &mut scratch) {
                continue;
            }
            let Some((x0, y0, x1, y1)) = pixel_bounds(&scratch, s) else { continue };
            let tight = GTBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64, class_id, false)
                .expect("pixel bounds are ordered");
            if boxes.iter().any(|b| pixel_box_iou(b, &tight) > MAX_BOX_OVERLAP) {
                continue;
            }
            for y in y0..y1 {
                for x in x0..x1 {
                    if scratch[y * s + x] {
                        for (c, &v) in color.iter().enumerate() {
                            pixels[(y * s + x) * 3 + c] = v;
                        }
                        mask.set(x, y, true);
                    }
                }
            }
            boxes.push(tight);
            placed = true;
            break;
        }
        if !placed && boxes.len() < config.min_objects {
            return Err(ImageError::Config(format!(
                "could not place {} objects of size range on a {s}x{s} canvas",
                config.min_objects
            )));
        }
    }

    let image = Image::new(s, s, 3, pixels.into_iter().map(T::of).collect())?;
    PairedSample::new(image, mask, boxes)
}

fn render_background(pixels: &mut [f64], s: usize, base: [f64; 3], rng: &mut Prng) {
    let nodes = s / NOISE_CELL + 2;
    let mut lattice = vec![0.0f64; nodes * nodes];
    for v in lattice.iter_mut() {
        *v = uniform(rng, -NOISE_AMPLITUDE, NOISE_AMPLITUDE);
    }
    for y in 0..s {
        let v = y as f64 / NOISE_CELL as f64;
        let (iy, fy) = (v as usize, v.fract());
        for x in 0..s {
            let u = x as f64 / NOISE_CELL as f64;
            let (ix, fx) = (u as usize, u.fract());
            let n00 = lattice[iy * nodes + ix];
            let n01 = lattice[iy * nodes + ix + 1];
            let n10 = lattice[(iy + 1) * nodes + ix];
            let n11 = lattice[(iy + 1) * nodes + ix + 1];
            let noise = n00 * (1.0 - fx) * (1.0 - fy)
                + n01 * fx * (1.0 - fy)
                + n10 * (1.0 - fx) * fy
                + n11 * fx * fy;
            for c in 0..3 {
                pixels[(y * s + x) * 3 + c] = (base[c] + noise).clamp(0.0, 1.0);
            }
        }
    }
}

/// Object color kept visibly apart from the background base color.
fn sample_object_color(rng: &mut Prng, base: [f64; 3]) -> [f64; 3] {
    loop {
        let color = [
            uniform(rng, 0.05, 0.95),
            uniform(rng, 0.05, 0.95),
            uniform(rng, 0.05, 0.95),
        ];
        let dist: f64 = color.iter().zip(&base).map(|(c, b)| (c - b).abs()).sum();
        if dist / 3.0 >= 0.25 {
            return color;
        }
    }
}

/// Draws one shape into `scratch`; false means the draw degenerated and the
/// caller should retry with fresh randomness.
fn rasterize(kind: ShapeKind, s: usize, rng: &mut Prng, scratch: &mut [bool]) -> bool {
    let sf = s as f64;
    let w = uniform(rng, 0.18, 0.42) * sf;
    let h = uniform(rng, 0.18, 0.42) * sf;
    let cx = uniform(rng, w / 2.0 + 1.0, sf - w / 2.0 - 1.0);
    let cy = uniform(rng, h / 2.0 + 1.0, sf - h / 2.0 - 1.0);
    let mut count = 0usize;
    match kind {
        ShapeKind::Rectangle => {
            let x0 = (cx - w / 2.0).round().max(0.0) as usize;
            let x1 = ((cx + w / 2.0).round() as usize).min(s);
            let y0 = (cy - h / 2.0).round().max(0.0) as usize;
            let y1 = ((cy + h / 2.0).round() as usize).min(s);
            for y in y0..y1 {
                for x in x0..x1 {
                    scratch[y * s + x] = true;
                    count += 1;
                }
            }
        }
        ShapeKind::Ellipse => {
            let (a, b) = (w / 2.0, h / 2.0);
            for y in 0..s {
                for x in 0..s {
                    let dx = (x as f64 + 0.5 - cx) / a;
                    let dy = (y as f64 + 0.5 - cy) / b;
                    if dx * dx + dy * dy <= 1.0 {
                        scratch[y * s + x] = true;
                        count += 1;
                    }
                }
            }
        }
        ShapeKind::Triangle => {
            let apex = (cx + uniform(rng, -0.3, 0.3) * w, cy - h / 2.0);
            let left = (cx - w / 2.0, cy + h / 2.0);
            let right = (cx + w / 2.0, cy + h / 2.0);
            for y in 0..s {
                for x in 0..s {
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    if in_triangle(p, apex, left, right) {
                        scratch[y * s + x] = true;
                        count += 1;
                    }
                }
            }
        }
    }
    count >= MIN_SHAPE_PIXELS
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let edge = |u: (f64, f64), v: (f64, f64)| (v.0 - u.0) * (p.1 - u.1) - (v.1 - u.1) * (p.0 - u.0);
    let (e0, e1, e2) = (edge(a, b), edge(b, c), edge(c, a));
    (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
}

/// Half-open pixel bounding box of the set bits, or `None` if empty.
fn pixel_bounds(scratch: &[bool], s: usize) -> Option<(usize, usize, usize, usize)> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..s {
        for x in 0..s {
            if scratch[y * s + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x0 != usize::MAX).then_some((x0, y0, x1, y1))
}

fn pixel_box_iou(a: &GTBox, b: &GTBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
