use crate::numkit::Tensor;
use crate::scalar::Real;

use super::ImageError;

/// Row-major, channel-interleaved raster with values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<T>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::invalid("image", format!("size {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::invalid("image", format!("{channels} channels (need 1 or 3)")));
        }
        if pixels.len() != width * height * channels {
            return Err(ImageError::invalid(
                "image",
                format!("{}x{}x{} needs {} values, got {}", width, height, channels, width * height * channels, pixels.len()),
            ));
        }
        if !pixels.iter().all(|v| *v >= T::zero() && *v <= T::one()) {
            return Err(ImageError::invalid("image", "pixel values outside [0,1]"));
        }
        Ok(Image { width, height, channels, pixels })
    }

    pub fn fill(width: usize, height: usize, channels: usize, value: T) -> Self {
        Image::new(width, height, channels, vec![value; width * height * channels])
            .expect("fill value within range")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    /// Mutable pixel access; callers keep values inside `[0,1]`.
    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.pixels[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.idx(x, y, c);
        self.pixels[i] = v;
    }

    pub fn in_range(&self) -> bool {
        self.pixels.iter().all(|v| *v >= T::zero() && *v <= T::one())
    }

    /// Planar `[1, C, H, W]` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor<T> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![T::zero(); w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = self.get(x, y, ch);
                }
            }
        }
        Tensor::new(vec![1, c, h, w], data).expect("image dims are positive")
    }

    /// Rebuilds an image from a `[1, C, H, W]` tensor, requiring values
    /// already inside `[0,1]`.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self, ImageError> {
        if t.rank() != 4 || t.shape()[0] != 1 {
            return Err(ImageError::invalid("image", format!("tensor shape {:?}", t.shape())));
        }
        let (c, h, w) = (t.shape()[1], t.shape()[2], t.shape()[3]);
        let mut pixels = vec![T::zero(); w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    pixels[(y * w + x) * c + ch] = t.data()[(ch * h + y) * w + x];
                }
            }
        }
        Image::new(w, h, c, pixels)
    }
}

/// Per-pixel `{0,1}` foreground mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(ImageError::invalid(
                "mask",
                format!("{width}x{height} with {} values", values.len()),
            ));
        }
        if !values.iter().all(|&v| v <= 1) {
            return Err(ImageError::invalid("mask", "values must be 0 or 1"));
        }
        Ok(BinaryMask { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask::new(width, height, vec![0; width * height]).expect("positive dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.values[y * self.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Pixel-set intersection over union; two all-zero masks count as 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask IoU needs equal dimensions"
        );
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.values.iter().zip(&other.values) {
            inter += (*a == 1 && *b == 1) as usize;
            union += (*a == 1 || *b == 1) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Planar `[1, 1, H, W]` tensor of 0/1 values.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("positive dims")
    }
}

/// Ground-truth box in pixel coordinates, half-open (`xmax`/`ymax` exclusive):
/// a box covering pixel columns 3..=7 has `xmin` 3 and `xmax` 8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GTBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub class_id: usize,
    pub difficult: bool,
}

impl GTBox {
    pub fn new(
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
        class_id: usize,
        difficult: bool,
    ) -> Result<Self, ImageError> {
        if !(xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite()) {
            return Err(ImageError::invalid("box", "non-finite coordinate"));
        }
        if xmin < 0.0 || ymin < 0.0 || xmin >= xmax || ymin >= ymax {
            return Err(ImageError::invalid(
                "box",
                format!("degenerate bounds ({xmin},{ymin})-({xmax},{ymax})"),
            ));
        }
        Ok(GTBox { xmin, ymin, xmax, ymax, class_id, difficult })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    fn fits(&self, width: usize, height: usize) -> bool {
        self.xmax <= width as f64 && self.ymax <= height as f64
    }
}

/// An image with its foreground mask and ground-truth boxes.
///
/// Constructed through [`PairedSample::new`], which enforces that dimensions
/// agree, boxes lie in bounds, and every box encloses at least one
/// mask-positive pixel. Pairs built around *predicted* masks (where that last
/// guarantee cannot hold) use [`PairedSample::new_unchecked`].
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample<T> {
    image: Image<T>,
    mask: BinaryMask,
    boxes: Vec<GTBox>,
}

impl<T: Real> PairedSample<T> {
    pub fn new(image: Image<T>, mask: BinaryMask, boxes: Vec<GTBox>) -> Result<Self, ImageError> {
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(ImageError::invalid(
                "sample",
                format!(
                    "image {}x{} vs mask {}x{}",
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                ),
            ));
        }
        for (i, b) in boxes.iter().enumerate() {
            if !b.fits(image.width(), image.height()) {
                return Err(ImageError::invalid(
                    "sample",
                    format!("box {i} exceeds image bounds"),
                ));
            }
            if !box_covers_foreground(b, &mask) {
                return Err(ImageError::invalid(
                    "sample",
                    format!("box {i} encloses no mask-positive pixel"),
                ));
            }
        }
        Ok(PairedSample { image, mask, boxes })
    }

    /// Skips the box/mask consistency check (dimensions must still agree).
    pub fn new_unchecked(
        image: Image<T>,
        mask: BinaryMask,
        boxes: Vec<GTBox>,
    ) -> Result<Self, ImageError> {
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(ImageError::invalid(
                "sample",
                format!(
                    "image {}x{} vs mask {}x{}",
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                ),
            ));
        }
        Ok(PairedSample { image, mask, boxes })
    }

    pub fn image(&self) -> &Image<T> {
        &self.image
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn boxes(&self) -> &[GTBox] {
        &self.boxes
    }

    pub fn into_parts(self) -> (Image<T>, BinaryMask, Vec<GTBox>) {
        (self.image, self.mask, self.boxes)
    }
}

/// Whether any mask-positive pixel center falls inside the box.
pub(crate) fn box_covers_foreground(b: &GTBox, mask: &BinaryMask) -> bool {
    let x0 = b.xmin.floor().max(0.0) as usize;
    let y0 = b.ymin.floor().max(0.0) as usize;
    let x1 = (b.xmax.ceil() as usize).min(mask.width());
    let y1 = (b.ymax.ceil() as usize).min(mask.height());
    for y in y0..y1 {
        for x in x0..x1 {
            if mask.get(x, y) {
                return true;
            }
        }
    }
    false
}
