use std::io::Cursor;

use crate::error::{invalid, Error, Result};
use crate::geom::Vec3;

/// Row-major single-channel image, row 0 at the top, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Row-major RGB image, row 0 at the top, channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3>,
}

impl SilhouetteImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(invalid(format!("{} values for a {width}x{height} image", values.len())));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("silhouette value outside [0, 1]"));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, values: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Pixels strictly above `threshold` become 1, the rest 0.
    pub fn thresholded(&self, threshold: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Grey composite: `value * fg + (1 - value) * bg` per channel.
    pub fn to_rgb(&self, fg: f64, bg: f64) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            pixels: self.values.iter().map(|&v| [v * fg + (1.0 - v) * bg; 3]).collect(),
        }
    }

    /// 8-bit grayscale PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let data: Vec<u8> = self.values.iter().map(|&v| to_u8(v)).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &data)
    }
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: Vec3) -> Self {
        Self { width, height, pixels: vec![rgb; width * height] }
    }

    pub fn luminance(&self) -> SilhouetteImage {
        SilhouetteImage {
            width: self.width,
            height: self.height,
            values: self.pixels.iter().map(|&p| luminance(p)).collect(),
        }
    }

    /// 8-bit RGB PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let data: Vec<u8> = self.pixels.iter().flat_map(|p| p.map(to_u8)).collect();
        encode_png(self.width, self.height, png::ColorType::Rgb, &data)
    }

    /// Decodes any 8/16-bit PNG into RGB in `[0, 1]`; alpha is composited over white.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Image("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => return Err(Error::Image("unexpanded palette image".into())),
        };
        let stride = info.line_size;
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &buf[y * stride..y * stride + w * channels];
            for px in row.chunks_exact(channels) {
                let f = |b: u8| b as f64 / 255.0;
                let (rgb, alpha) = match channels {
                    1 => ([f(px[0]); 3], 1.0),
                    2 => ([f(px[0]); 3], f(px[1])),
                    3 => ([f(px[0]), f(px[1]), f(px[2])], 1.0),
                    _ => ([f(px[0]), f(px[1]), f(px[2])], f(px[3])),
                };
                pixels.push(rgb.map(|c| c * alpha + (1.0 - alpha)));
            }
        }
        Ok(Self { width: w, height: h, pixels })
    }
}

pub fn luminance(p: Vec3) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| Error::Image(e.to_string()))?;
    }
    Ok(out)
}

/// Box-filter average over `factor x factor` blocks.
pub fn downsample(img: &SilhouetteImage, factor: usize) -> Result<SilhouetteImage> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(invalid(format!("downsample factor {factor} is not a power of two")));
    }
    if img.width % factor != 0 || img.height % factor != 0 {
        return Err(invalid(format!(
            "factor {factor} does not divide {}x{}",
            img.width, img.height
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width / factor, img.height / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut values = vec![0.0; w * h];
    for y in 0..img.height {
        for x in 0..img.width {
            values[(y / factor) * w + x / factor] += img.values[y * img.width + x];
        }
    }
    for v in &mut values {
        *v = (*v * inv).clamp(0.0, 1.0);
    }
    Ok(SilhouetteImage { width: w, height: h, values })
}

/// Adjoint of [`downsample`] for gradients: spreads each coarse gradient evenly over its block.
pub fn downsample_adjoint(grad: &[f64], coarse_width: usize, factor: usize) -> Vec<f64> {
    let fine_width = coarse_width * factor;
    let coarse_height = grad.len() / coarse_width;
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; fine_width * coarse_height * factor];
    for (i, o) in out.iter_mut().enumerate() {
        let (x, y) = (i % fine_width, i / fine_width);
        *o = grad[(y / factor) * coarse_width + x / factor] * inv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_examples() {
        let c = SilhouetteImage::filled(8, 8, 0.3);
        let d = downsample(&c, 4).unwrap();
        assert!(d.values.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let checker = SilhouetteImage::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(downsample(&checker, 2).unwrap().values, vec![0.5]);
        assert_eq!(downsample(&checker, 1).unwrap(), checker);
        assert!(downsample(&SilhouetteImage::zeros(6, 6), 4).is_err());
        assert!(downsample(&SilhouetteImage::zeros(6, 6), 3).is_err());
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let img = RgbImage {
            width: 2,
            height: 1,
            pixels: vec![[1.0, 0.0, 0.5], [0.2, 0.4, 0.6]],
        };
        let back = RgbImage::from_png(&img.to_png().unwrap()).unwrap();
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        let grey = SilhouetteImage::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let back = RgbImage::from_png(&grey.to_png().unwrap()).unwrap();
        assert_eq!(back.pixels[0], [0.0; 3]);
        assert_eq!(back.pixels[2], [1.0; 3]);
        assert!(RgbImage::from_png(b"not a png").is_err());
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let fine: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let img = SilhouetteImage::new(8, 8, fine.clone()).unwrap();
        let coarse = downsample(&img, 2).unwrap();
        let g: Vec<f64> = (0..16).map(|i| i as f64 - 3.0).collect();
        let lhs: f64 = coarse.values.iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = downsample_adjoint(&g, 4, 2);
        let rhs: f64 = fine.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
