//! Sketch ingest: dark strokes on a light background become a filled occupancy image.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};
use crate::render::{RgbImage, SilhouetteImage};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Reject when the flood fill from the border reaches more than this fraction of the image.
pub const MAX_OUTSIDE_FRACTION: f64 = 0.98;

/// Filled occupancy, 1 inside the drawn shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub occupancy: SilhouetteImage,
}

impl Sketch {
    pub fn width(&self) -> usize {
        self.occupancy.width
    }

    pub fn height(&self) -> usize {
        self.occupancy.height
    }

    /// Wraps an occupancy image after thresholding it at 0.5.
    pub fn from_occupancy(occupancy: &SilhouetteImage) -> Result<Self> {
        let occupancy = occupancy.thresholded(0.5);
        if occupancy.sum() == 0.0 {
            return Err(Error::SketchRejected("empty occupancy".into()));
        }
        Ok(Self { occupancy })
    }

    /// Occupancy at `size x size`, box-averaging when the sketch is a power-of-two multiple.
    pub fn at_resolution(&self, size: usize) -> Result<SilhouetteImage> {
        let (w, h) = (self.width(), self.height());
        if w != h {
            return Err(invalid(format!("sketch must be square, got {w}x{h}")));
        }
        if w == size {
            return Ok(self.occupancy.clone());
        }
        if size == 0 || w % size != 0 || !(w / size).is_power_of_two() {
            return Err(invalid(format!("cannot resample a {w}px sketch to {size}px")));
        }
        crate::render::downsample(&self.occupancy, w / size)
    }

    /// Paper-convention PNG: inside black, outside white.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        stroke_png(&self.occupancy)
    }
}

/// Grayscale PNG with `mask` pixels black on white.
pub fn stroke_png(mask: &SilhouetteImage) -> Result<Vec<u8>> {
    let inverted = SilhouetteImage {
        width: mask.width,
        height: mask.height,
        values: mask.values.iter().map(|v| 1.0 - v).collect(),
    };
    inverted.to_png()
}

pub fn ingest_sketch(png: &[u8], threshold: f64) -> Result<Sketch> {
    let img = RgbImage::from_png(png)?;
    ingest_luminance(&img.luminance(), threshold)
}

/// Pixels darker than `threshold` are strokes. Background reachable from the border through
/// 4-connected background pixels is outside; strokes and enclosed regions are inside.
pub fn ingest_luminance(lum: &SilhouetteImage, threshold: f64) -> Result<Sketch> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    let (w, h) = (lum.width, lum.height);
    if w == 0 || h == 0 {
        return Err(Error::SketchRejected("empty image".into()));
    }
    let stroke: Vec<bool> = lum.values.iter().map(|&v| v < threshold).collect();
    if !stroke.iter().any(|&s| s) {
        return Err(Error::SketchRejected("no stroke pixels".into()));
    }
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |i: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !stroke[i] && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        seed((h - 1) * w + x, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        seed(y * w + w - 1, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        if x > 0 {
            seed(i - 1, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(i + 1, &mut outside, &mut queue);
        }
        if y > 0 {
            seed(i - w, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(i + w, &mut outside, &mut queue);
        }
    }
    let filled = outside.iter().filter(|&&o| o).count() as f64 / (w * h) as f64;
    if filled > MAX_OUTSIDE_FRACTION {
        return Err(Error::SketchRejected(format!(
            "outer contour not closed: flood fill reached {:.1}% of the image",
            filled * 100.0
        )));
    }
    let values = outside.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
    Ok(Sketch { occupancy: SilhouetteImage { width: w, height: h, values } })
}

/// Boundary of a binary mask: inside pixels with a 4-neighbor outside the mask or the image.
pub fn edge_map(mask: &SilhouetteImage) -> SilhouetteImage {
    let (w, h) = (mask.width, mask.height);
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask.values[y as usize * w + x as usize] > 0.5
    };
    let mut values = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if inside(x, y) && !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1)) {
                values[y as usize * w + x as usize] = 1.0;
            }
        }
    }
    SilhouetteImage { width: w, height: h, values }
}

/// Fraction of pixels where two binary masks disagree.
pub fn mismatch_fraction(a: &SilhouetteImage, b: &SilhouetteImage) -> f64 {
    let diff = a.values.iter().zip(&b.values).filter(|(x, y)| (**x > 0.5) != (**y > 0.5)).count();
    diff as f64 / a.values.len().max(1) as f64
}
